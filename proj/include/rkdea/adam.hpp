#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"

namespace rkdea {

// Borrowed views into a parameter and its gradient for one update. The tape
// owns the gradient, the model owns the value; neither is copied.
template <typename T>
struct ParamRef {
    std::string name;
    DenseMatrix<T>* value;
    const DenseMatrix<T>* grad;
};

// First and second moment accumulators, one pair per parameter in the order
// the parameters are passed to adam_step. Persist across epochs.
template <typename T>
struct OptimizerState {
    struct Moments {
        DenseMatrix<T> m, v;
    };
    std::vector<Moments> moments;
    std::size_t step = 0;
};

// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8). The
// parameter list must keep the same length, order, and shapes across calls
// against the same state.
template <typename T>
void adam_step(std::vector<ParamRef<T>>& params, OptimizerState<T>& state, T lr) {
    if (!(lr > T{0})) throw InputError("adam_step: lr must be positive");
    constexpr T beta1 = T{0.9}, beta2 = T{0.999}, eps = T{1e-8};

    if (state.moments.empty()) {
        state.moments.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.moments[p].m = DenseMatrix<T>(params[p].value->rows(), params[p].value->cols());
            state.moments[p].v = DenseMatrix<T>(params[p].value->rows(), params[p].value->cols());
        }
    } else if (state.moments.size() != params.size()) {
        throw ShapeError("adam_step: parameter count changed mid-run");
    }

    ++state.step;
    const T bc1 = T{1} - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(state.step)));
    const T bc2 = T{1} - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(state.step)));

    for (std::size_t p = 0; p < params.size(); ++p) {
        ParamRef<T>& pr = params[p];
        auto& mom = state.moments[p];
        if (!pr.value->same_shape(*pr.grad) || !pr.value->same_shape(mom.m))
            throw ShapeError("adam_step: shape mismatch for parameter '" + pr.name + "'");
        if (!pr.grad->all_finite())
            throw NumericError("adam_step: non-finite gradient for parameter '" + pr.name + "'");

        auto& val = pr.value->data();
        const auto& g = pr.grad->data();
        auto& m = mom.m.data();
        auto& v = mom.v.data();
        for (std::size_t i = 0; i < val.size(); ++i) {
            m[i] = beta1 * m[i] + (T{1} - beta1) * g[i];
            v[i] = beta2 * v[i] + (T{1} - beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace rkdea
