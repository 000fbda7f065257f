#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"

namespace rkdea {

using NodeId = std::size_t;

// Define-by-run reverse-mode tape. Each primitive records its output value and
// a closure that scatters the output gradient into the parents' gradients.
// One tape corresponds to one forward evaluation; backward() may run once.
//
// Sparse operands passed to spmm() are referenced, not copied, and must
// outlive the tape.
template <typename T>
class Tape {
public:
    explicit Tape(int threads = 1, bool check_finite = true)
        : threads_(threads), check_finite_(check_finite) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId leaf(const DenseMatrix<T>& value, bool requires_grad) {
        return push("leaf", value, {}, requires_grad, nullptr);
    }

    const DenseMatrix<T>& value(NodeId id) const { return nodes_[id].value; }

    // Zero until backward() has run (or the node is unreachable from the root).
    const DenseMatrix<T>& grad(NodeId id) {
        ensure_grad(id);
        return nodes_[id].grad;
    }

    std::size_t size() const { return nodes_.size(); }

    // Smallest margin to a non-differentiable point seen by any kinked
    // primitive (relu/hinge arguments, huber corners, vector norms) during
    // this evaluation. Gradient checking skips perturbations whose evaluations
    // came this close to a kink.
    double min_kink_gap() const { return min_kink_gap_; }

    NodeId matmul(NodeId a, NodeId b) {
        DenseMatrix<T> out;
        matmul_into(nodes_[a].value, nodes_[b].value, out, false, threads_);
        return push("matmul", std::move(out), {a, b}, any_grad({a, b}), [this, a, b](NodeId self) {
            const DenseMatrix<T>& g = nodes_[self].grad;
            if (nodes_[a].requires_grad) {
                ensure_grad(a);
                matmul_nt_into(g, nodes_[b].value, nodes_[a].grad, true, threads_);
            }
            if (nodes_[b].requires_grad) {
                ensure_grad(b);
                matmul_tn_into(nodes_[a].value, g, nodes_[b].grad, true, threads_);
            }
        });
    }

    NodeId spmm(const SparseMatrix<T>& s, NodeId d) {
        DenseMatrix<T> out;
        s.multiply_into(nodes_[d].value, out, false, threads_);
        const SparseMatrix<T>* sp = &s;
        return push("spmm", std::move(out), {d}, nodes_[d].requires_grad,
                    [this, sp, d](NodeId self) {
                        if (!nodes_[d].requires_grad) return;
                        ensure_grad(d);
                        sp->multiply_transpose_into(nodes_[self].grad, nodes_[d].grad, true, threads_);
                    });
    }

    NodeId add(NodeId a, NodeId b) { return binary_elementwise("add", a, b, std::plus<T>{}, T{1}, T{1}); }
    NodeId sub(NodeId a, NodeId b) { return binary_elementwise("sub", a, b, std::minus<T>{}, T{1}, T{-1}); }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape("mul", a, b);
        DenseMatrix<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value.data();
        for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] *= bv[i];
        return push("mul", std::move(out), {a, b}, any_grad({a, b}), [this, a, b](NodeId self) {
            const auto& g = nodes_[self].grad.data();
            if (nodes_[a].requires_grad) {
                ensure_grad(a);
                const auto& bv = nodes_[b].value.data();
                for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad.data()[i] += g[i] * bv[i];
            }
            if (nodes_[b].requires_grad) {
                ensure_grad(b);
                const auto& av = nodes_[a].value.data();
                for (std::size_t i = 0; i < g.size(); ++i) nodes_[b].grad.data()[i] += g[i] * av[i];
            }
        });
    }

    // a is n x d, v is 1 x d, broadcast over rows.
    NodeId add_rowvec(NodeId a, NodeId v) {
        const auto& av = nodes_[a].value;
        const auto& vv = nodes_[v].value;
        if (vv.rows() != 1 || vv.cols() != av.cols())
            throw ShapeError("add_rowvec: vector must be 1 x cols(a)");
        DenseMatrix<T> out = av;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            T* r = out.row(i);
            for (std::size_t j = 0; j < out.cols(); ++j) r[j] += vv(0, j);
        }
        return push("add_rowvec", std::move(out), {a, v}, any_grad({a, v}),
                    [this, a, v](NodeId self) {
                        const auto& g = nodes_[self].grad;
                        if (nodes_[a].requires_grad) {
                            ensure_grad(a);
                            auto& ga = nodes_[a].grad.data();
                            const auto& gd = g.data();
                            for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
                        }
                        if (nodes_[v].requires_grad) {
                            ensure_grad(v);
                            auto& gv = nodes_[v].grad;
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
                        }
                    });
    }

    NodeId relu(NodeId a) { return rectifier("relu", a); }

    // Same map as relu; kept as a distinct name so loss builders read as the
    // margin formulas they implement.
    NodeId hinge(NodeId a) { return rectifier("hinge", a); }

    NodeId sigmoid(NodeId a) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) {
            // Branch keeps exp() argument non-positive for either sign of x.
            if (x >= T{0}) {
                const T e = std::exp(-x);
                x = T{1} / (T{1} + e);
            } else {
                const T e = std::exp(x);
                x = e / (T{1} + e);
            }
        }
        return push("sigmoid", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& y = nodes_[self].value.data();
                        const auto& g = nodes_[self].grad.data();
                        auto& ga = nodes_[a].grad.data();
                        for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * y[i] * (T{1} - y[i]);
                    });
    }

    NodeId abs_val(NodeId a) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) {
            note_kink(std::abs(static_cast<double>(x)));
            x = std::abs(x);
        }
        return push("abs", std::move(out), {a}, nodes_[a].requires_grad, [this, a](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const auto& x = nodes_[a].value.data();
            const auto& g = nodes_[self].grad.data();
            auto& ga = nodes_[a].grad.data();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += x[i] > T{0} ? g[i] : (x[i] < T{0} ? -g[i] : T{0});
        });
    }

    NodeId square(NodeId a) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) x *= x;
        return push("square", std::move(out), {a}, nodes_[a].requires_grad, [this, a](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const auto& x = nodes_[a].value.data();
            const auto& g = nodes_[self].grad.data();
            auto& ga = nodes_[a].grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T{2} * g[i] * x[i];
        });
    }

    NodeId scale(NodeId a, T c) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) x *= c;
        return push("scale", std::move(out), {a}, nodes_[a].requires_grad, [this, a, c](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const auto& g = nodes_[self].grad.data();
            auto& ga = nodes_[a].grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }

    NodeId add_scalar(NodeId a, T c) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) x += c;
        return push("add_scalar", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& g = nodes_[self].grad.data();
                        auto& ga = nodes_[a].grad.data();
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    });
    }

    NodeId one_minus(NodeId a) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) x = T{1} - x;
        return push("one_minus", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& g = nodes_[self].grad.data();
                        auto& ga = nodes_[a].grad.data();
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
                    });
    }

    // n x d -> n x 1 Euclidean row norms. A zero row has zero gradient.
    NodeId row_l2_norm(NodeId a) {
        const auto& av = nodes_[a].value;
        DenseMatrix<T> out(av.rows(), 1);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            T s{0};
            const T* r = av.row(i);
            for (std::size_t j = 0; j < av.cols(); ++j) s += r[j] * r[j];
            const T n = std::sqrt(s);
            note_kink(static_cast<double>(n));
            out(i, 0) = n;
        }
        return push("row_l2_norm", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& x = nodes_[a].value;
                        const auto& y = nodes_[self].value;
                        const auto& g = nodes_[self].grad;
                        auto& gx = nodes_[a].grad;
                        for (std::size_t i = 0; i < x.rows(); ++i) {
                            const T n = y(i, 0);
                            if (n <= T{0}) continue;
                            const T s = g(i, 0) / n;
                            const T* xr = x.row(i);
                            T* gr = gx.row(i);
                            for (std::size_t j = 0; j < x.cols(); ++j) gr[j] += s * xr[j];
                        }
                    });
    }

    // Rows scaled to unit norm; zero rows pass through unchanged.
    NodeId row_normalize(NodeId a) {
        const auto& av = nodes_[a].value;
        DenseMatrix<T> out = av;
        for (std::size_t i = 0; i < av.rows(); ++i) {
            T s{0};
            const T* r = av.row(i);
            for (std::size_t j = 0; j < av.cols(); ++j) s += r[j] * r[j];
            const T n = std::sqrt(s);
            note_kink(static_cast<double>(n));
            if (n > T{0}) {
                T* o = out.row(i);
                for (std::size_t j = 0; j < av.cols(); ++j) o[j] /= n;
            }
        }
        return push("row_normalize", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& x = nodes_[a].value;
                        const auto& y = nodes_[self].value;
                        const auto& g = nodes_[self].grad;
                        auto& gx = nodes_[a].grad;
                        for (std::size_t i = 0; i < x.rows(); ++i) {
                            T s{0};
                            const T* xr = x.row(i);
                            for (std::size_t j = 0; j < x.cols(); ++j) s += xr[j] * xr[j];
                            const T n = std::sqrt(s);
                            if (n <= T{0}) continue;
                            const T* yr = y.row(i);
                            const T* gr = g.row(i);
                            T dot{0};
                            for (std::size_t j = 0; j < x.cols(); ++j) dot += gr[j] * yr[j];
                            T* o = gx.row(i);
                            for (std::size_t j = 0; j < x.cols(); ++j)
                                o[j] += (gr[j] - dot * yr[j]) / n;
                        }
                    });
    }

    NodeId gather_rows(NodeId src, std::vector<std::size_t> idx) {
        const auto& sv = nodes_[src].value;
        for (std::size_t i : idx)
            if (i >= sv.rows()) throw ShapeError("gather_rows: index " + std::to_string(i) +
                                                 " out of range for " + std::to_string(sv.rows()) +
                                                 " rows");
        DenseMatrix<T> out(idx.size(), sv.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy(sv.row(idx[i]), sv.row(idx[i]) + sv.cols(), out.row(i));
        return push("gather_rows", std::move(out), {src}, nodes_[src].requires_grad,
                    [this, src, idx = std::move(idx)](NodeId self) {
                        if (!nodes_[src].requires_grad) return;
                        ensure_grad(src);
                        const auto& g = nodes_[self].grad;
                        auto& gs = nodes_[src].grad;
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                            const T* gr = g.row(i);
                            T* dst = gs.row(idx[i]);
                            for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += gr[j];
                        }
                    });
    }

    NodeId sum(NodeId a) {
        T s{0};
        for (T v : nodes_[a].value.data()) s += v;
        DenseMatrix<T> out(1, 1);
        out(0, 0) = s;
        return push("sum", std::move(out), {a}, nodes_[a].requires_grad, [this, a](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const T g = nodes_[self].grad(0, 0);
            for (T& v : nodes_[a].grad.data()) v += g;
        });
    }

    NodeId mean(NodeId a) {
        const std::size_t n = nodes_[a].value.size();
        if (n == 0) throw InputError("mean: empty input");
        T s{0};
        for (T v : nodes_[a].value.data()) s += v;
        DenseMatrix<T> out(1, 1);
        out(0, 0) = s / static_cast<T>(n);
        return push("mean", std::move(out), {a}, nodes_[a].requires_grad, [this, a, n](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const T g = nodes_[self].grad(0, 0) / static_cast<T>(n);
            for (T& v : nodes_[a].grad.data()) v += g;
        });
    }

    // Elementwise Huber (delta 1) of x against a constant reference of the
    // same shape: quadratic inside the unit band, linear outside.
    NodeId huber_vs_const(NodeId a, DenseMatrix<T> ref) {
        const auto& av = nodes_[a].value;
        if (!av.same_shape(ref)) throw ShapeError("huber_vs_const: shape mismatch");
        DenseMatrix<T> out(av.rows(), av.cols());
        for (std::size_t i = 0; i < out.data().size(); ++i) {
            const T u = av.data()[i] - ref.data()[i];
            const double au = std::abs(static_cast<double>(u));
            note_kink(std::abs(au - 1.0));
            out.data()[i] = au <= 1.0 ? T{0.5} * u * u : static_cast<T>(au - 0.5);
        }
        return push("huber_vs_const", std::move(out), {a}, nodes_[a].requires_grad,
                    [this, a, ref = std::move(ref)](NodeId self) {
                        if (!nodes_[a].requires_grad) return;
                        ensure_grad(a);
                        const auto& x = nodes_[a].value.data();
                        const auto& g = nodes_[self].grad.data();
                        auto& ga = nodes_[a].grad.data();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            const T u = x[i] - ref.data()[i];
                            ga[i] += g[i] * std::clamp(u, T{-1}, T{1});
                        }
                    });
    }

    // m x 1 distances ||emb[ia_i] - emb[ib_i]||. The backward pass recomputes
    // each row difference from the live embedding values instead of storing an
    // m x d intermediate, which keeps large negative batches affordable.
    NodeId pairwise_distance(NodeId emb, std::vector<std::size_t> ia, std::vector<std::size_t> ib) {
        if (ia.size() != ib.size()) throw ShapeError("pairwise_distance: index lists differ in length");
        const auto& e = nodes_[emb].value;
        check_indices("pairwise_distance", ia, e.rows());
        check_indices("pairwise_distance", ib, e.rows());
        DenseMatrix<T> out(ia.size(), 1);
        for (std::size_t i = 0; i < ia.size(); ++i) {
            const T* pa = e.row(ia[i]);
            const T* pb = e.row(ib[i]);
            T s{0};
            for (std::size_t j = 0; j < e.cols(); ++j) {
                const T d = pa[j] - pb[j];
                s += d * d;
            }
            const T n = std::sqrt(s);
            note_kink(static_cast<double>(n));
            out(i, 0) = n;
        }
        return push("pairwise_distance", std::move(out), {emb}, nodes_[emb].requires_grad,
                    [this, emb, ia = std::move(ia), ib = std::move(ib)](NodeId self) {
                        if (!nodes_[emb].requires_grad) return;
                        ensure_grad(emb);
                        const auto& e = nodes_[emb].value;
                        const auto& y = nodes_[self].value;
                        const auto& g = nodes_[self].grad;
                        auto& ge = nodes_[emb].grad;
                        for (std::size_t i = 0; i < ia.size(); ++i) {
                            const T n = y(i, 0);
                            if (n <= T{0}) continue;
                            const T s = g(i, 0) / n;
                            const T* pa = e.row(ia[i]);
                            const T* pb = e.row(ib[i]);
                            T* ga = ge.row(ia[i]);
                            T* gb = ge.row(ib[i]);
                            for (std::size_t j = 0; j < e.cols(); ++j) {
                                const T d = s * (pa[j] - pb[j]);
                                ga[j] += d;
                                gb[j] -= d;
                            }
                        }
                    });
    }

    // m x 1 energies ||emb[h_i] + rel[r_i] - emb[t_i]||, differences
    // recomputed in backward as above.
    NodeId translation_distance(NodeId emb, NodeId rel, std::vector<std::size_t> h,
                                std::vector<std::size_t> r, std::vector<std::size_t> t) {
        if (h.size() != r.size() || h.size() != t.size())
            throw ShapeError("translation_distance: index lists differ in length");
        const auto& e = nodes_[emb].value;
        const auto& rv = nodes_[rel].value;
        if (e.cols() != rv.cols())
            throw ShapeError("translation_distance: entity and relation widths differ");
        check_indices("translation_distance", h, e.rows());
        check_indices("translation_distance", t, e.rows());
        check_indices("translation_distance", r, rv.rows());
        DenseMatrix<T> out(h.size(), 1);
        for (std::size_t i = 0; i < h.size(); ++i) {
            const T* ph = e.row(h[i]);
            const T* pr = rv.row(r[i]);
            const T* pt = e.row(t[i]);
            T s{0};
            for (std::size_t j = 0; j < e.cols(); ++j) {
                const T d = ph[j] + pr[j] - pt[j];
                s += d * d;
            }
            const T n = std::sqrt(s);
            note_kink(static_cast<double>(n));
            out(i, 0) = n;
        }
        return push("translation_distance", std::move(out), {emb, rel}, any_grad({emb, rel}),
                    [this, emb, rel, h = std::move(h), r = std::move(r),
                     t = std::move(t)](NodeId self) {
                        const bool ge_on = nodes_[emb].requires_grad;
                        const bool gr_on = nodes_[rel].requires_grad;
                        if (!ge_on && !gr_on) return;
                        if (ge_on) ensure_grad(emb);
                        if (gr_on) ensure_grad(rel);
                        const auto& e = nodes_[emb].value;
                        const auto& rv = nodes_[rel].value;
                        const auto& y = nodes_[self].value;
                        const auto& g = nodes_[self].grad;
                        for (std::size_t i = 0; i < h.size(); ++i) {
                            const T n = y(i, 0);
                            if (n <= T{0}) continue;
                            const T s = g(i, 0) / n;
                            const T* ph = e.row(h[i]);
                            const T* pr = rv.row(r[i]);
                            const T* pt = e.row(t[i]);
                            for (std::size_t j = 0; j < e.cols(); ++j) {
                                const T d = s * (ph[j] + pr[j] - pt[j]);
                                if (ge_on) {
                                    nodes_[emb].grad.row(h[i])[j] += d;
                                    nodes_[emb].grad.row(t[i])[j] -= d;
                                }
                                if (gr_on) nodes_[rel].grad.row(r[i])[j] += d;
                            }
                        }
                    });
    }

    // root must be 1 x 1. Seeds its gradient with 1 and sweeps the tape in
    // reverse creation order, which is a valid topological order because every
    // node is created after its parents.
    void backward(NodeId root) {
        if (backward_done_) throw Error("backward: tape already swept");
        backward_done_ = true;
        const auto& rv = nodes_[root].value;
        if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward: root must be 1x1");
        std::vector<char> reach(nodes_.size(), 0);
        std::vector<NodeId> stack{root};
        reach[root] = 1;
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            for (NodeId p : nodes_[id].parents)
                if (!reach[p]) {
                    reach[p] = 1;
                    stack.push_back(p);
                }
        }
        ensure_grad(root);
        nodes_[root].grad(0, 0) = T{1};
        for (NodeId id = root + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (reach[id] && n.requires_grad && n.back) n.back(id);
        }
    }

private:
    struct Node {
        std::string op;
        DenseMatrix<T> value;
        DenseMatrix<T> grad;
        std::vector<NodeId> parents;
        bool requires_grad = false;
        std::function<void(NodeId)> back;
    };

    NodeId push(const char* op, DenseMatrix<T> value, std::vector<NodeId> parents,
                bool requires_grad, std::function<void(NodeId)> back) {
        if (check_finite_ && !value.all_finite())
            throw NumericError(std::string(op) + ": non-finite output");
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.requires_grad = requires_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void ensure_grad(NodeId id) {
        Node& n = nodes_[id];
        if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
            n.grad = DenseMatrix<T>(n.value.rows(), n.value.cols());
    }

    bool any_grad(std::initializer_list<NodeId> ids) const {
        for (NodeId id : ids)
            if (nodes_[id].requires_grad) return true;
        return false;
    }

    void require_same_shape(const char* op, NodeId a, NodeId b) const {
        if (!nodes_[a].value.same_shape(nodes_[b].value))
            throw ShapeError(std::string(op) + ": shape mismatch");
    }

    void note_kink(double gap) { min_kink_gap_ = std::min(min_kink_gap_, gap); }

    static void check_indices(const char* op, const std::vector<std::size_t>& idx,
                              std::size_t bound) {
        for (std::size_t i : idx)
            if (i >= bound)
                throw ShapeError(std::string(op) + ": index " + std::to_string(i) +
                                 " out of range for " + std::to_string(bound) + " rows");
    }

    template <typename Op>
    NodeId binary_elementwise(const char* name, NodeId a, NodeId b, Op op, T wa, T wb) {
        require_same_shape(name, a, b);
        DenseMatrix<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value.data();
        for (std::size_t i = 0; i < out.data().size(); ++i)
            out.data()[i] = op(out.data()[i], bv[i]);
        return push(name, std::move(out), {a, b}, any_grad({a, b}),
                    [this, a, b, wa, wb](NodeId self) {
                        const auto& g = nodes_[self].grad.data();
                        if (nodes_[a].requires_grad) {
                            ensure_grad(a);
                            auto& ga = nodes_[a].grad.data();
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += wa * g[i];
                        }
                        if (nodes_[b].requires_grad) {
                            ensure_grad(b);
                            auto& gb = nodes_[b].grad.data();
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += wb * g[i];
                        }
                    });
    }

    NodeId rectifier(const char* name, NodeId a) {
        DenseMatrix<T> out = nodes_[a].value;
        for (T& x : out.data()) {
            note_kink(std::abs(static_cast<double>(x)));
            x = std::max(x, T{0});
        }
        return push(name, std::move(out), {a}, nodes_[a].requires_grad, [this, a](NodeId self) {
            if (!nodes_[a].requires_grad) return;
            ensure_grad(a);
            const auto& x = nodes_[a].value.data();
            const auto& g = nodes_[self].grad.data();
            auto& ga = nodes_[a].grad.data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > T{0}) ga[i] += g[i];
        });
    }

    std::vector<Node> nodes_;
    int threads_;
    bool check_finite_;
    bool backward_done_ = false;
    double min_kink_gap_ = std::numeric_limits<double>::infinity();
};

}  // namespace rkdea
