#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "memfuse/common.hpp"

namespace memfuse::fusion {

// Reverse-mode autodiff over dense double matrices. Each op builds a graph
// node whose backward closure scatters the node's gradient into its parents.
// Vectors are n x 1 matrices, scalars 1 x 1.
struct TensorNode {
    Eigen::MatrixXd val;
    Eigen::MatrixXd grad;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    bool requires_grad = false;

    explicit TensorNode(Eigen::MatrixXd v, bool rg = false)
        : val(std::move(v)), grad(Eigen::MatrixXd::Zero(val.rows(), val.cols())), requires_grad(rg) {}
};

using Tensor = std::shared_ptr<TensorNode>;

inline Tensor constant(Eigen::MatrixXd v) { return std::make_shared<TensorNode>(std::move(v), false); }

inline Tensor make_param(Eigen::MatrixXd v) { return std::make_shared<TensorNode>(std::move(v), true); }

namespace detail {

template <typename... Parents>
Tensor make_op(Eigen::MatrixXd val, std::function<void(TensorNode&)> backward, Parents... parents) {
    auto node = std::make_shared<TensorNode>(std::move(val));
    (node->parents.push_back(parents), ...);
    for (const auto& p : node->parents) node->requires_grad |= p->requires_grad;
    if (node->requires_grad) node->backward_fn = std::move(backward);
    return node;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    return detail::make_op(
        a->val * b->val,
        [a, b](TensorNode& n) {
            if (a->requires_grad) a->grad.noalias() += n.grad * b->val.transpose();
            if (b->requires_grad) b->grad.noalias() += a->val.transpose() * n.grad;
        },
        a, b);
}

inline Tensor transpose(const Tensor& a) {
    return detail::make_op(
        a->val.transpose(), [a](TensorNode& n) { a->grad += n.grad.transpose(); }, a);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::make_op(
        a->val + b->val,
        [a, b](TensorNode& n) {
            if (a->requires_grad) a->grad += n.grad;
            if (b->requires_grad) b->grad += n.grad;
        },
        a, b);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::make_op(
        a->val - b->val,
        [a, b](TensorNode& n) {
            if (a->requires_grad) a->grad += n.grad;
            if (b->requires_grad) b->grad -= n.grad;
        },
        a, b);
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    return detail::make_op(
        a->val.cwiseProduct(b->val),
        [a, b](TensorNode& n) {
            if (a->requires_grad) a->grad += n.grad.cwiseProduct(b->val);
            if (b->requires_grad) b->grad += n.grad.cwiseProduct(a->val);
        },
        a, b);
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::make_op(
        a->val * c, [a, c](TensorNode& n) { a->grad += n.grad * c; }, a);
}

// rows of a plus a 1 x d row vector
inline Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    return detail::make_op(
        a->val.rowwise() + row->val.row(0),
        [a, row](TensorNode& n) {
            if (a->requires_grad) a->grad += n.grad;
            if (row->requires_grad) row->grad.row(0) += n.grad.colwise().sum();
        },
        a, row);
}

inline Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    return detail::make_op(
        a->val.middleCols(start, count),
        [a, start, count](TensorNode& n) { a->grad.middleCols(start, count) += n.grad; }, a);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    Eigen::Index cols = 0;
    for (const auto& p : parts) cols += p->val.cols();
    Eigen::MatrixXd v(parts[0]->val.rows(), cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p->val.cols()) = p->val;
        at += p->val.cols();
    }
    auto node = std::make_shared<TensorNode>(std::move(v));
    node->parents = parts;
    for (const auto& p : parts) node->requires_grad |= p->requires_grad;
    if (node->requires_grad)
        node->backward_fn = [parts](TensorNode& n) {
            Eigen::Index at = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->grad += n.grad.middleCols(at, p->val.cols());
                at += p->val.cols();
            }
        };
    return node;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p->val.rows();
    Eigen::MatrixXd v(rows, parts[0]->val.cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p->val.rows()) = p->val;
        at += p->val.rows();
    }
    auto node = std::make_shared<TensorNode>(std::move(v));
    node->parents = parts;
    for (const auto& p : parts) node->requires_grad |= p->requires_grad;
    if (node->requires_grad)
        node->backward_fn = [parts](TensorNode& n) {
            Eigen::Index at = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->grad += n.grad.middleRows(at, p->val.rows());
                at += p->val.rows();
            }
        };
    return node;
}

// embedding lookup: one output row per id
inline Tensor gather_rows(const Tensor& table, std::vector<int> ids) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(ids.size()), table->val.cols());
    for (size_t r = 0; r < ids.size(); ++r) v.row(static_cast<Eigen::Index>(r)) = table->val.row(ids[r]);
    return detail::make_op(
        std::move(v),
        [table, ids = std::move(ids)](TensorNode& n) {
            for (size_t r = 0; r < ids.size(); ++r)
                table->grad.row(ids[r]) += n.grad.row(static_cast<Eigen::Index>(r));
        },
        table);
}

// y = g .* x / sqrt(mean(x^2) + eps), per row; gain is 1 x d
inline Tensor rmsnorm_rows(const Tensor& x, const Tensor& gain, double eps) {
    const Eigen::Index rows = x->val.rows(), d = x->val.cols();
    Eigen::VectorXd inv_rms(rows);
    for (Eigen::Index r = 0; r < rows; ++r)
        inv_rms(r) = 1.0 / std::sqrt(x->val.row(r).squaredNorm() / static_cast<double>(d) + eps);
    Eigen::MatrixXd v(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r)
        v.row(r) = x->val.row(r).cwiseProduct(gain->val.row(0)) * inv_rms(r);
    return detail::make_op(
        std::move(v),
        [x, gain, inv_rms, d](TensorNode& n) {
            for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
                const auto xr = x->val.row(r);
                const auto gy = n.grad.row(r);
                const double s = inv_rms(r);
                if (x->requires_grad) {
                    const double dot = (gy.cwiseProduct(gain->val.row(0)).cwiseProduct(xr)).sum();
                    x->grad.row(r) += gy.cwiseProduct(gain->val.row(0)) * s -
                                      xr * (dot * s * s * s / static_cast<double>(d));
                }
                if (gain->requires_grad) gain->grad.row(0) += gy.cwiseProduct(xr) * s;
            }
        },
        x, gain);
}

inline Tensor silu(const Tensor& x) {
    Eigen::MatrixXd sig = (1.0 + (-x->val.array()).exp()).inverse().matrix();
    return detail::make_op(
        x->val.cwiseProduct(sig),
        [x, sig](TensorNode& n) {
            const Eigen::ArrayXXd s = sig.array();
            x->grad.array() += n.grad.array() * (s * (1.0 + x->val.array() * (1.0 - s)));
        },
        x);
}

inline Tensor gelu(const Tensor& x) {
    Eigen::MatrixXd v = x->val.unaryExpr(
        [](double a) { return 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0))); });
    return detail::make_op(
        std::move(v),
        [x](TensorNode& n) {
            x->grad += n.grad.cwiseProduct(x->val.unaryExpr([](double a) {
                const double cdf = 0.5 * (1.0 + std::erf(a / std::sqrt(2.0)));
                const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
                return cdf + a * pdf;
            }));
        },
        x);
}

inline Tensor sigmoid(const Tensor& x) {
    Eigen::MatrixXd v = (1.0 + (-x->val.array()).exp()).inverse().matrix();
    return detail::make_op(
        std::move(v),
        [x, v](TensorNode& n) { x->grad.array() += n.grad.array() * v.array() * (1.0 - v.array()); }, x);
}

inline Tensor softmax_rows(const Tensor& x) {
    Eigen::MatrixXd v = x->val;
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double m = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - m).exp();
        v.row(r) /= v.row(r).sum();
    }
    return detail::make_op(
        std::move(v),
        [x](TensorNode& n) {
            for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
                const auto y = n.val.row(r);
                const auto gy = n.grad.row(r);
                const double dot = gy.cwiseProduct(y).sum();
                x->grad.row(r) += (gy.array() - dot).matrix().cwiseProduct(y);
            }
        },
        x);
}

// rotary position encoding on a (seq x d_head) slice; pairs (2i, 2i+1) rotate
// by angle pos / base^(2i/d_head)
inline Tensor rope_rows(const Tensor& x, const std::vector<int>& positions, double base = 10000.0) {
    const Eigen::Index rows = x->val.rows(), d = x->val.cols();
    if (d % 2 != 0) raise(errc::invalid_params, "rope needs an even head dimension");
    Eigen::MatrixXd cosines(rows, d / 2), sines(rows, d / 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index i = 0; i < d / 2; ++i) {
            const double theta = static_cast<double>(positions[static_cast<size_t>(r)]) /
                                 std::pow(base, 2.0 * static_cast<double>(i) / static_cast<double>(d));
            cosines(r, i) = std::cos(theta);
            sines(r, i) = std::sin(theta);
        }
    }
    Eigen::MatrixXd v(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index i = 0; i < d / 2; ++i) {
            const double x0 = x->val(r, 2 * i), x1 = x->val(r, 2 * i + 1);
            v(r, 2 * i) = x0 * cosines(r, i) - x1 * sines(r, i);
            v(r, 2 * i + 1) = x0 * sines(r, i) + x1 * cosines(r, i);
        }
    }
    return detail::make_op(
        std::move(v),
        [x, cosines, sines](TensorNode& n) {
            for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
                for (Eigen::Index i = 0; i < n.grad.cols() / 2; ++i) {
                    const double g0 = n.grad(r, 2 * i), g1 = n.grad(r, 2 * i + 1);
                    x->grad(r, 2 * i) += g0 * cosines(r, i) + g1 * sines(r, i);
                    x->grad(r, 2 * i + 1) += -g0 * sines(r, i) + g1 * cosines(r, i);
                }
            }
        },
        x);
}

inline Tensor mean_rows(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x->val.rows());
    return detail::make_op(
        (x->val.colwise().sum() * inv).eval(),
        [x, inv](TensorNode& n) { x->grad += (n.grad.row(0) * inv).replicate(x->val.rows(), 1); }, x);
}

inline Tensor sum_all(const Tensor& x) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = x->val.sum();
    return detail::make_op(
        std::move(v), [x](TensorNode& n) { x->grad.array() += n.grad(0, 0); }, x);
}

inline Tensor mean_all(const Tensor& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x->val.size()));
}

inline Tensor abs_elem(const Tensor& x) {
    return detail::make_op(
        x->val.cwiseAbs(),
        [x](TensorNode& n) {
            x->grad.array() += n.grad.array() * x->val.array().sign();  // subgradient 0 at 0
        },
        x);
}

// x minus a 1x1 scalar, broadcast
inline Tensor broadcast_sub(const Tensor& x, const Tensor& s) {
    return detail::make_op(
        (x->val.array() - s->val(0, 0)).matrix(),
        [x, s](TensorNode& n) {
            if (x->requires_grad) x->grad += n.grad;
            if (s->requires_grad) s->grad(0, 0) -= n.grad.sum();
        },
        x, s);
}

inline Tensor s_div(const Tensor& a, const Tensor& b) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = a->val(0, 0) / b->val(0, 0);
    return detail::make_op(
        std::move(v),
        [a, b](TensorNode& n) {
            const double g = n.grad(0, 0), bv = b->val(0, 0), av = a->val(0, 0);
            if (a->requires_grad) a->grad(0, 0) += g / bv;
            if (b->requires_grad) b->grad(0, 0) -= g * av / (bv * bv);
        },
        a, b);
}

inline Tensor s_sqrt(const Tensor& a) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = std::sqrt(a->val(0, 0));
    const double root = v(0, 0);
    return detail::make_op(
        std::move(v), [a, root](TensorNode& n) { a->grad(0, 0) += n.grad(0, 0) * 0.5 / root; }, a);
}

// inverted dropout with a precomputed mask; mask entries are 0 or 1/(1-p)
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    Eigen::MatrixXd mask(x->val.rows(), x->val.cols());
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = rng.uniform() < p ? 0.0 : keep;
    return hadamard(x, constant(std::move(mask)));
}

// --- backward pass ------------------------------------------------------------

inline void collect_graph(const Tensor& root, std::vector<TensorNode*>& order) {
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

// Zeroes gradients over the reachable graph, seeds the scalar root with 1, and
// runs the closures in reverse topological order.
inline void backward(const Tensor& root) {
    if (root->val.size() != 1) raise(errc::invalid_params, "backward needs a scalar root");
    std::vector<TensorNode*> order;
    collect_graph(root, order);
    for (auto* n : order) n->grad.setZero();
    root->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn && (*it)->requires_grad) (*it)->backward_fn(**it);
}

}  // namespace memfuse::fusion
