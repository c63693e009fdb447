// Reverse-mode differentiable tensor engine over rank-0/1/2 arrays.
//
// Tensor<S> is a shared handle to a graph node; ops build the graph when any
// input requires gradients and backward() walks it in reverse topological
// order. S is float in train mode and double in test mode (finite-difference
// checks are unreliable at 32 bit). Broadcasting is limited to what the
// library needs: scalar, per-row {m,1} and per-column {1,n} against {m,n}.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "respira/errors.hpp"
#include "respira/rng.hpp"

namespace respira {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;  // allocated on first deposit
    bool requires_grad = false;
    bool has_grad = false;
    std::string name;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void()> backprop;  // reads grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), S(0));
    }
    void deposit(std::span<const S> g) {
        ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
        has_grad = true;
    }
};

template <typename S>
class Tensor {
public:
    using Node = TensorNode<S>;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from_values(shape, std::vector<S>(shape_numel(shape), S(0)));
    }
    static Tensor full(Shape shape, S v) {
        return from_values(shape, std::vector<S>(shape_numel(shape), v));
    }
    static Tensor scalar(S v) { return from_values({}, {v}); }
    static Tensor from_values(Shape shape, std::vector<S> values) {
        if (values.size() != shape_numel(shape))
            throw ShapeMismatch("tensor data size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        return Tensor(std::move(node));
    }
    /// Trainable leaf. Gradients accumulate here across backward() calls.
    static Tensor param(Shape shape, std::vector<S> values, std::string name = {}) {
        Tensor t = from_values(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        t.node_->name = std::move(name);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t numel() const { return node_->values.size(); }
    size_t size(size_t axis) const { return node_->shape.at(axis); }
    const std::string& name() const { return node_->name; }

    std::span<const S> values() const { return node_->values; }
    /// Mutable view for leaf updates between steps (optimizer use only).
    std::vector<S>& mutable_values() { return node_->values; }

    S item() const {
        if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
        return node_->values[0];
    }
    S at(size_t i) const { return node_->values.at(i); }
    S at(size_t i, size_t j) const {
        if (rank() != 2) throw ShapeMismatch("at(i,j) on rank-" + std::to_string(rank()) + " tensor");
        return node_->values.at(i * shape()[1] + j);
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->has_grad; }
    std::span<const S> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        node_->grad.assign(node_->values.size(), S(0));
        node_->has_grad = false;
    }

    /// Backpropagate from a scalar. Accumulates into every reachable
    /// requires_grad leaf; other gradients are untouched.
    void backward() const {
        if (numel() != 1)
            throw NonScalarLoss("backward() requires a scalar, got shape " + shape_str(shape()));
        if (!node_->requires_grad) return;  // nothing trainable upstream

        // iterative post-order DFS (graphs can be thousands of nodes deep)
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] += S(1);
        node_->has_grad = true;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backprop) (*it)->backprop();
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
inline void check_values(std::span<const S> v, const char* op, bool allow_inf = false) {
    for (S x : v) {
        if (std::isnan(x)) throw NonFiniteValue(std::string(op) + " produced NaN");
        if (!allow_inf && std::isinf(x)) throw NonFiniteValue(std::string(op) + " produced inf");
    }
}

// deterministic fixed-order kernels; C is accumulated into
template <typename S>
inline void gemm_nn(size_t m, size_t n, size_t k, const S* a, const S* b, S* c) {
    for (size_t i = 0; i < m; ++i) {
        S* ci = c + i * n;
        const S* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const S av = ai[p];
            const S* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}
template <typename S>  // C(m,n) += A(m,k) * B(n,k)^T
inline void gemm_nt(size_t m, size_t n, size_t k, const S* a, const S* b, S* c) {
    for (size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        for (size_t j = 0; j < n; ++j) {
            const S* bj = b + j * k;
            S acc = 0;
            for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}
template <typename S>  // C(m,n) += A(k,m)^T * B(k,n)
inline void gemm_tn(size_t m, size_t n, size_t k, const S* a, const S* b, S* c) {
    for (size_t p = 0; p < k; ++p) {
        const S* ap = a + p * m;
        const S* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            const S av = ap[i];
            S* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

inline Broadcast classify_broadcast(const Shape& full, const Shape& b) {
    if (b == full) return Broadcast::kSame;
    if (shape_numel(b) == 1) return Broadcast::kScalar;
    if (full.size() == 2 && b.size() == 2 && b[0] == 1 && b[1] == full[1]) return Broadcast::kRow;
    if (full.size() == 2 && b.size() == 2 && b[0] == full[0] && b[1] == 1) return Broadcast::kCol;
    if (full.size() == 2 && b.size() == 1 && b[0] == full[1]) return Broadcast::kRow;
    throw ShapeMismatch("cannot broadcast " + shape_str(b) + " against " + shape_str(full));
}

inline size_t broadcast_index(Broadcast bc, size_t i, size_t cols) {
    switch (bc) {
        case Broadcast::kSame: return i;
        case Broadcast::kScalar: return 0;
        case Broadcast::kRow: return i % cols;
        case Broadcast::kCol: return i / cols;
    }
    return 0;
}

}  // namespace detail

inline bool detail_is_sub(const Shape& full, const Shape& b) {
    if (b == full) return true;
    if (full.size() == 2 && b.size() == 2 &&
        ((b[0] == 1 && b[1] == full[1]) || (b[0] == full[0] && b[1] == 1)))
        return true;
    if (full.size() == 2 && b.size() == 1 && b[0] == full[1]) return true;
    return false;
}

// Builds the result node; make_backward(result_raw_ptr) returns the closure,
// which is only attached when some input requires gradients.
template <typename S, typename MakeBackward>
Tensor<S> detail_make_op(Shape shape, std::vector<S> values,
                         const std::vector<Tensor<S>>& inputs, const char* name,
                         MakeBackward&& make_backward, bool allow_inf = false) {
    detail::check_values<S>(values, name, allow_inf);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    Tensor<S> out = Tensor<S>::from_values(std::move(shape), std::move(values));
    if (needs) {
        auto node = out.node();
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backprop = make_backward(node.get());
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise binary ops (limited broadcasting, see header comment)

template <typename S, typename Fwd, typename BwdA, typename BwdB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name,
                    Fwd fwd, BwdA dfda, BwdB dfdb) {
    using detail::Broadcast;
    Shape out_shape;
    Broadcast bca, bcb;
    if (shape_numel(b.shape()) == 1 || detail_is_sub(a.shape(), b.shape())) {
        out_shape = a.shape();
        bca = Broadcast::kSame;
        bcb = detail::classify_broadcast(out_shape, b.shape());
    } else {
        out_shape = b.shape();
        bcb = Broadcast::kSame;
        bca = detail::classify_broadcast(out_shape, a.shape());
    }
    const size_t n = shape_numel(out_shape);
    const size_t cols = out_shape.size() == 2 ? out_shape[1] : n;
    std::vector<S> vals(n);
    const auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < n; ++i)
        vals[i] = fwd(av[detail::broadcast_index(bca, i, cols)],
                      bv[detail::broadcast_index(bcb, i, cols)]);

    auto an = a.node(), bn = b.node();
    return detail_make_op<S>(
        out_shape, std::move(vals), {a, b}, name,
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                const size_t cnt = self->values.size();
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (size_t i = 0; i < cnt; ++i) {
                        size_t ia = detail::broadcast_index(bca, i, cols);
                        size_t ib = detail::broadcast_index(bcb, i, cols);
                        an->grad[ia] += self->grad[i] * dfda(an->values[ia], bn->values[ib]);
                    }
                    an->has_grad = true;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (size_t i = 0; i < cnt; ++i) {
                        size_t ia = detail::broadcast_index(bca, i, cols);
                        size_t ib = detail::broadcast_index(bcb, i, cols);
                        bn->grad[ib] += self->grad[i] * dfdb(an->values[ia], bn->values[ib]);
                    }
                    bn->has_grad = true;
                }
            };
        });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, "add", [](S x, S y) { return x + y; },
                     [](S, S) { return S(1); }, [](S, S) { return S(1); });
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, "sub", [](S x, S y) { return x - y; },
                     [](S, S) { return S(1); }, [](S, S) { return S(-1); });
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, "mul", [](S x, S y) { return x * y; },
                     [](S, S y) { return y; }, [](S x, S) { return x; });
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, "div", [](S x, S y) { return x / y; },
                     [](S, S y) { return S(1) / y; },
                     [](S x, S y) { return -x / (y * y); });
}

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const Tensor<S>& a, const char* name, Fwd fwd, Bwd dfdx,
                   bool allow_inf = false) {
    const size_t n = a.numel();
    std::vector<S> vals(n);
    auto av = a.values();
    for (size_t i = 0; i < n; ++i) vals[i] = fwd(av[i]);
    auto an = a.node();
    return detail_make_op<S>(
        a.shape(), std::move(vals), {a}, name,
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < self->values.size(); ++i)
                    an->grad[i] += self->grad[i] * dfdx(an->values[i], self->values[i]);
                an->has_grad = true;
            };
        },
        allow_inf);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return unary_op(a, "relu", [](S x) { return x > S(0) ? x : S(0); },
                    [](S x, S) { return x > S(0) ? S(1) : S(0); });
}
template <typename S>
Tensor<S> tanh_op(const Tensor<S>& a) {
    return unary_op(a, "tanh", [](S x) { return std::tanh(x); },
                    [](S, S y) { return S(1) - y * y; });
}
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    auto f = [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
    };
    return unary_op(a, "sigmoid", f, [](S, S y) { return y * (S(1) - y); });
}
template <typename S>
Tensor<S> exp_op(const Tensor<S>& a) {
    return unary_op(a, "exp", [](S x) { return std::exp(x); },
                    [](S, S y) { return y; });
}
template <typename S>
Tensor<S> log_op(const Tensor<S>& a) {
    return unary_op(a, "log", [](S x) { return std::log(x); },
                    [](S x, S) { return S(1) / x; });
}
template <typename S>
Tensor<S> sqrt_op(const Tensor<S>& a) {
    return unary_op(a, "sqrt", [](S x) { return std::sqrt(x); },
                    [](S, S y) { return S(1) / (S(2) * y); });
}
template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
    // log(1 + e^x) without overflow; gradient is sigmoid(x)
    auto f = [](S x) { return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x))); };
    auto df = [](S x, S) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
    };
    return unary_op(a, "softplus", f, df);
}
template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
    return unary_op(a, "neg", [](S x) { return -x; }, [](S, S) { return S(-1); });
}
template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    const S cs = static_cast<S>(c);
    return unary_op(a, "scale", [cs](S x) { return x * cs; },
                    [cs](S, S) { return cs; });
}
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, double c) {
    const S cs = static_cast<S>(c);
    return unary_op(a, "add_scalar", [cs](S x) { return x + cs; },
                    [](S, S) { return S(1); });
}

/// Identity forward; gradients do not flow past it. Used to freeze weights.
template <typename S>
Tensor<S> stop_grad(const Tensor<S>& a) {
    return Tensor<S>::from_values(a.shape(), std::vector<S>(a.values().begin(), a.values().end()));
}

// ---------------------------------------------------------------------------
// structural ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto an = a.node();
    return detail_make_op<S>(
        std::move(shape), std::vector<S>(a.values().begin(), a.values().end()), {a}, "reshape",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() { an->deposit(self->grad); };
        },
        true);
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2) throw ShapeMismatch("transpose expects rank 2, got " + shape_str(a.shape()));
    const size_t m = a.size(0), n = a.size(1);
    std::vector<S> vals(m * n);
    auto av = a.values();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) vals[j * m + i] = av[i * n + j];
    auto an = a.node();
    return detail_make_op<S>(
        {n, m}, std::move(vals), {a}, "transpose",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += self->grad[j * m + i];
                an->has_grad = true;
            };
        },
        true);
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
        throw ShapeMismatch("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const size_t m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<S> vals(m * n, S(0));
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), vals.data());
    auto an = a.node(), bn = b.node();
    return detail_make_op<S>(
        {m, n}, std::move(vals), {a, b}, "matmul",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::gemm_nt(m, k, n, self->grad.data(), bn->values.data(), an->grad.data());
                    an->has_grad = true;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::gemm_tn(k, n, m, an->values.data(), self->grad.data(), bn->grad.data());
                    bn->has_grad = true;
                }
            };
        });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, size_t axis, size_t start, size_t len) {
    if (a.rank() != 2 || axis > 1) throw ShapeMismatch("slice expects rank 2 and axis 0/1");
    const size_t m = a.size(0), n = a.size(1);
    if ((axis == 0 && start + len > m) || (axis == 1 && start + len > n))
        throw ShapeMismatch("slice range out of bounds");
    Shape out_shape = axis == 0 ? Shape{len, n} : Shape{m, len};
    std::vector<S> vals(shape_numel(out_shape));
    auto av = a.values();
    if (axis == 0) {
        std::copy(av.begin() + start * n, av.begin() + (start + len) * n, vals.begin());
    } else {
        for (size_t i = 0; i < m; ++i)
            std::copy(av.begin() + i * n + start, av.begin() + i * n + start + len,
                      vals.begin() + i * len);
    }
    auto an = a.node();
    return detail_make_op<S>(
        std::move(out_shape), std::move(vals), {a}, "slice",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                if (axis == 0) {
                    for (size_t i = 0; i < len * n; ++i) an->grad[start * n + i] += self->grad[i];
                } else {
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < len; ++j)
                            an->grad[i * n + start + j] += self->grad[i * len + j];
                }
                an->has_grad = true;
            };
        },
        true);
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, size_t axis) {
    if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
    const size_t rank = parts[0].rank();
    if (rank == 1) {
        if (axis != 0) throw ShapeMismatch("rank-1 concat needs axis 0");
        size_t total = 0;
        for (const auto& p : parts) total += p.numel();
        std::vector<S> vals;
        vals.reserve(total);
        for (const auto& p : parts) vals.insert(vals.end(), p.values().begin(), p.values().end());
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        return detail_make_op<S>(
            {total}, std::move(vals), parts, "concat",
            [nodes](TensorNode<S>* self) -> std::function<void()> {
                return [nodes, self]() {
                    size_t off = 0;
                    for (const auto& pn : nodes) {
                        if (pn->requires_grad) {
                            pn->ensure_grad();
                            for (size_t i = 0; i < pn->values.size(); ++i)
                                pn->grad[i] += self->grad[off + i];
                            pn->has_grad = true;
                        }
                        off += pn->values.size();
                    }
                };
            },
            true);
    }
    if (rank != 2 || axis > 1) throw ShapeMismatch("concat supports rank 1/2, axis 0/1");
    const size_t fixed = parts[0].size(1 - axis);
    size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.size(1 - axis) != fixed)
            throw ShapeMismatch("concat parts disagree on shape");
        total += p.size(axis);
    }
    Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    std::vector<S> vals(shape_numel(out_shape));
    if (axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.values().begin(), p.values().end(), vals.begin() + off);
            off += p.numel();
        }
    } else {
        size_t col = 0;
        for (const auto& p : parts) {
            const size_t w = p.size(1);
            for (size_t i = 0; i < fixed; ++i)
                std::copy(p.values().begin() + i * w, p.values().begin() + (i + 1) * w,
                          vals.begin() + i * total + col);
            col += w;
        }
    }
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail_make_op<S>(
        std::move(out_shape), std::move(vals), parts, "concat",
        [nodes, axis, fixed, total](TensorNode<S>* self) -> std::function<void()> {
            return [nodes, axis, fixed, total, self]() {
                if (axis == 0) {
                    size_t off = 0;
                    for (const auto& pn : nodes) {
                        if (pn->requires_grad) {
                            pn->ensure_grad();
                            for (size_t i = 0; i < pn->values.size(); ++i)
                                pn->grad[i] += self->grad[off + i];
                            pn->has_grad = true;
                        }
                        off += pn->values.size();
                    }
                } else {
                    size_t col = 0;
                    for (const auto& pn : nodes) {
                        const size_t w = pn->shape[1];
                        if (pn->requires_grad) {
                            pn->ensure_grad();
                            for (size_t i = 0; i < fixed; ++i)
                                for (size_t j = 0; j < w; ++j)
                                    pn->grad[i * w + j] += self->grad[i * total + col + j];
                            pn->has_grad = true;
                        }
                        col += w;
                    }
                }
            };
        },
        true);
}

/// Stack rank-1 tensors of equal length into a matrix, one per row.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows) {
    if (rows.empty()) throw ShapeMismatch("stack_rows of zero tensors");
    std::vector<Tensor<S>> as_matrices;
    as_matrices.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.rank() != 1) throw ShapeMismatch("stack_rows expects rank-1 inputs");
        as_matrices.push_back(reshape(r, {1, r.numel()}));
    }
    return concat(as_matrices, 0);
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S total = 0;
    for (S v : a.values()) total += v;
    auto an = a.node();
    return detail_make_op<S>(
        {}, {total}, {a}, "sum",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (auto& g : an->grad) g += self->grad[0];
                an->has_grad = true;
            };
        });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

/// Reduction over one axis of a matrix, keeping the reduced dim as 1.
template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, size_t axis) {
    if (a.rank() != 2 || axis > 1) throw ShapeMismatch("sum_axis expects rank 2, axis 0/1");
    const size_t m = a.size(0), n = a.size(1);
    Shape out_shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
    std::vector<S> vals(shape_numel(out_shape), S(0));
    auto av = a.values();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) vals[axis == 0 ? j : i] += av[i * n + j];
    auto an = a.node();
    return detail_make_op<S>(
        std::move(out_shape), std::move(vals), {a}, "sum_axis",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j)
                        an->grad[i * n + j] += self->grad[axis == 0 ? j : i];
                an->has_grad = true;
            };
        });
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, size_t axis) {
    const double denom = static_cast<double>(axis == 0 ? a.size(0) : a.size(1));
    return scale(sum_axis(a, axis), 1.0 / denom);
}

// ---------------------------------------------------------------------------
// row-wise softmax family (axis 1 of a matrix, or a rank-1 vector)

namespace detail {

template <typename S>
inline void softmax_rows(const S* x, S* y, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        const S* xi = x + i * cols;
        S* yi = y + i * cols;
        S mx = xi[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
        S denom = 0;
        for (size_t j = 0; j < cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);  // exp(-inf)=0 removes masked keys exactly
            denom += yi[j];
        }
        for (size_t j = 0; j < cols; ++j) yi[j] /= denom;
    }
}

}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, size_t axis) {
    if (a.rank() == 1) {
        if (axis != 0) throw ShapeMismatch("softmax axis out of range for rank-1 input");
        auto m = softmax(reshape(a, {1, a.numel()}), 1);
        return reshape(m, {a.numel()});
    }
    if (a.rank() != 2 || axis > 1) throw ShapeMismatch("softmax expects rank 1/2");
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    const size_t m = a.size(0), n = a.size(1);
    std::vector<S> vals(m * n);
    detail::softmax_rows(a.values().data(), vals.data(), m, n);
    auto an = a.node();
    return detail_make_op<S>(
        a.shape(), std::move(vals), {a}, "softmax",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < m; ++i) {
                    const S* y = self->values.data() + i * n;
                    const S* dy = self->grad.data() + i * n;
                    S dot = 0;
                    for (size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                    S* dx = an->grad.data() + i * n;
                    for (size_t j = 0; j < n; ++j) dx[j] += (dy[j] - dot) * y[j];
                }
                an->has_grad = true;
            };
        });
}

/// Row-wise log-softmax with log-sum-exp stabilization. -inf inputs map to
/// -inf outputs (zero probability), which is how masked logits are dropped.
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& a, size_t axis) {
    if (a.rank() == 1) {
        if (axis != 0) throw ShapeMismatch("log_softmax axis out of range for rank-1 input");
        return reshape(log_softmax(reshape(a, {1, a.numel()}), 1), {a.numel()});
    }
    if (a.rank() != 2 || axis != 1) throw ShapeMismatch("log_softmax expects rows of a matrix");
    const size_t m = a.size(0), n = a.size(1);
    std::vector<S> vals(m * n);
    auto av = a.values();
    for (size_t i = 0; i < m; ++i) {
        const S* xi = av.data() + i * n;
        S mx = xi[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        S denom = 0;
        for (size_t j = 0; j < n; ++j) denom += std::exp(xi[j] - mx);
        const S lse = mx + std::log(denom);
        for (size_t j = 0; j < n; ++j) vals[i * n + j] = xi[j] - lse;
    }
    auto an = a.node();
    return detail_make_op<S>(
        a.shape(), std::move(vals), {a}, "log_softmax",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < m; ++i) {
                    const S* y = self->values.data() + i * n;
                    const S* dy = self->grad.data() + i * n;
                    S total = 0;
                    for (size_t j = 0; j < n; ++j) total += dy[j];
                    S* dx = an->grad.data() + i * n;
                    for (size_t j = 0; j < n; ++j) dx[j] += dy[j] - std::exp(y[j]) * total;
                }
                an->has_grad = true;
            };
        },
        true);
}

// ---------------------------------------------------------------------------
// normalization, masking, dropout, gathering

/// Layer norm over the last axis with learnable gain/bias (rank-1, length n).
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
    const size_t rows = x.rank() == 2 ? x.size(0) : 1;
    const size_t n = x.rank() == 2 ? x.size(1) : x.numel();
    if (gamma.numel() != n || beta.numel() != n)
        throw ShapeMismatch("layer_norm gain/bias length must match last axis");
    std::vector<S> vals(rows * n), xhat(rows * n), inv_std(rows);
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (size_t i = 0; i < rows; ++i) {
        const S* xi = xv.data() + i * n;
        S mean = 0;
        for (size_t j = 0; j < n; ++j) mean += xi[j];
        mean /= static_cast<S>(n);
        S var = 0;
        for (size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<S>(n);
        const S istd = S(1) / std::sqrt(var + static_cast<S>(eps));
        inv_std[i] = istd;
        for (size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (xi[j] - mean) * istd;
            vals[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto xhat_p = std::make_shared<std::vector<S>>(std::move(xhat));
    auto istd_p = std::make_shared<std::vector<S>>(std::move(inv_std));
    return detail_make_op<S>(
        x.shape(), std::move(vals), {x, gamma, beta}, "layer_norm",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                const auto& xh = *xhat_p;
                const auto& istd = *istd_p;
                for (size_t i = 0; i < rows; ++i) {
                    const S* dy = self->grad.data() + i * n;
                    // dL/dxhat_j = dy_j * gamma_j
                    if (xn->requires_grad) {
                        xn->ensure_grad();
                        S sum_dxh = 0, sum_dxh_xh = 0;
                        for (size_t j = 0; j < n; ++j) {
                            const S dxh = dy[j] * gn->values[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[i * n + j];
                        }
                        S* dx = xn->grad.data() + i * n;
                        for (size_t j = 0; j < n; ++j) {
                            const S dxh = dy[j] * gn->values[j];
                            dx[j] += istd[i] * (dxh - sum_dxh / static_cast<S>(n) -
                                                xh[i * n + j] * sum_dxh_xh / static_cast<S>(n));
                        }
                        xn->has_grad = true;
                    }
                    if (gn->requires_grad) {
                        gn->ensure_grad();
                        for (size_t j = 0; j < n; ++j) gn->grad[j] += dy[j] * xh[i * n + j];
                        gn->has_grad = true;
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t j = 0; j < n; ++j) bn->grad[j] += dy[j];
                        bn->has_grad = true;
                    }
                }
            };
        });
}

/// Replace entries where fill[i] != 0 by `value` (may be -inf); gradients flow
/// only through untouched entries.
template <typename S>
Tensor<S> masked_fill(const Tensor<S>& a, const std::vector<uint8_t>& fill, S value) {
    if (fill.size() != a.numel()) throw ShapeMismatch("masked_fill mask size mismatch");
    std::vector<S> vals(a.values().begin(), a.values().end());
    for (size_t i = 0; i < vals.size(); ++i)
        if (fill[i]) vals[i] = value;
    auto an = a.node();
    auto fill_p = std::make_shared<std::vector<uint8_t>>(fill);
    return detail_make_op<S>(
        a.shape(), std::move(vals), {a}, "masked_fill",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < self->values.size(); ++i)
                    if (!(*fill_p)[i]) an->grad[i] += self->grad[i];
                an->has_grad = true;
            };
        },
        /*allow_inf=*/true);
}

/// Inverted dropout: scales kept activations by 1/keep at train time so
/// inference needs no rescale. Identity when train is off or rate is 0.
template <typename S>
Tensor<S> dropout(const Tensor<S>& a, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        if (rate == 0.0) return a;
        throw InvalidConfig("dropout rate must be in [0,1), got " + std::to_string(rate));
    }
    if (!train || rate == 0.0) return a;
    const double keep = 1.0 - rate;
    const size_t n = a.numel();
    std::vector<S> vals(n);
    auto gate = std::make_shared<std::vector<S>>(n);
    auto av = a.values();
    for (size_t i = 0; i < n; ++i) {
        (*gate)[i] = rng.uniform() < keep ? static_cast<S>(1.0 / keep) : S(0);
        vals[i] = av[i] * (*gate)[i];
    }
    auto an = a.node();
    return detail_make_op<S>(
        a.shape(), std::move(vals), {a}, "dropout",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < self->values.size(); ++i)
                    an->grad[i] += self->grad[i] * (*gate)[i];
                an->has_grad = true;
            };
        });
}

/// One element per row: out[i] = a[i, idx[i]].
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<size_t>& idx) {
    if (a.rank() != 2 || idx.size() != a.size(0))
        throw ShapeMismatch("gather_rows needs rank 2 and one index per row");
    const size_t m = a.size(0), n = a.size(1);
    std::vector<S> vals(m);
    for (size_t i = 0; i < m; ++i) {
        if (idx[i] >= n) throw ShapeMismatch("gather_rows index out of range");
        vals[i] = a.values()[i * n + idx[i]];
    }
    auto an = a.node();
    auto idx_p = std::make_shared<std::vector<size_t>>(idx);
    return detail_make_op<S>(
        {m}, std::move(vals), {a}, "gather_rows",
        [=](TensorNode<S>* self) -> std::function<void()> {
            return [=]() {
                an->ensure_grad();
                for (size_t i = 0; i < m; ++i) an->grad[i * n + (*idx_p)[i]] += self->grad[i];
                an->has_grad = true;
            };
        });
}

/// Dot product of two equal-length vectors.
template <typename S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
        throw ShapeMismatch("dot " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    return sum_all(mul(a, b));
}

// ---------------------------------------------------------------------------
// initializers

template <typename S>
std::vector<S> xavier_uniform(size_t fan_in, size_t fan_out, size_t count, Rng& rng,
                              double gain = 1.0) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<S> v(count);
    for (auto& x : v) x = static_cast<S>(rng.uniform(-a, a));
    return v;
}

}  // namespace respira
