#pragma once

#include <cstddef>
#include <vector>

#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/tape.hpp"

namespace rkdea {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Entries whose base or perturbed evaluation passed within 10*eps of a
    // kink; a central difference straddling a kink measures the wrong slope.
    std::size_t skipped = 0;
};

// Compares tape gradients of a scalar-valued builder against central
// differences, entry by entry. The builder receives a fresh tape plus one
// leaf per parameter and returns the root node. Relative error per entry is
// |analytic - cd| / max(|analytic|, |cd|, 1e-10).
template <typename BuildFn>
GradCheckReport check_gradient(BuildFn&& build, std::vector<DenseMatrix<double>> params,
                               double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-4))
        throw InputError("check_gradient: eps must lie in [1e-7, 1e-4]");

    struct Eval {
        double value;
        double kink_gap;
    };
    auto evaluate = [&](std::vector<DenseMatrix<double>>* grads) -> Eval {
        Tape<double> tape(1, true);
        std::vector<NodeId> leaves;
        leaves.reserve(params.size());
        for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
        const NodeId root = build(tape, leaves);
        const auto& rv = tape.value(root);
        if (rv.rows() != 1 || rv.cols() != 1)
            throw ShapeError("check_gradient: builder must return a 1x1 node");
        if (grads) {
            tape.backward(root);
            grads->clear();
            for (NodeId l : leaves) grads->push_back(tape.grad(l));
        }
        return {rv(0, 0), tape.min_kink_gap()};
    };

    std::vector<DenseMatrix<double>> analytic;
    const Eval base = evaluate(&analytic);

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& data = params[p].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const Eval plus = evaluate(nullptr);
            data[i] = saved - eps;
            const Eval minus = evaluate(nullptr);
            data[i] = saved;

            const double gap = std::min({base.kink_gap, plus.kink_gap, minus.kink_gap});
            if (gap <= 10.0 * eps) {
                ++report.skipped;
                continue;
            }
            const double cd = (plus.value - minus.value) / (2.0 * eps);
            const double an = analytic[p].data()[i];
            const double rel =
                std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-10});
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.checked;
        }
    }
    return report;
}

}  // namespace rkdea
