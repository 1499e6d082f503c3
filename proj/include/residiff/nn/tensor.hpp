#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "residiff/rng.hpp"

namespace residiff::nn {

using Shape = std::vector<long>;

inline long numel(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) out += std::to_string(s[i]) + (i + 1 < s.size() ? "," : "");
    return out + ")";
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size());
    long acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Plain dense value holder.
template <class S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(Shape sh, S fill = S(0)) : shape(std::move(sh)), data(numel(shape), fill) {}
    Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (static_cast<long>(data.size()) != numel(shape))
            throw std::invalid_argument("Tensor: data size mismatch " + shape_str(shape));
    }

    long size() const { return static_cast<long>(data.size()); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }
};

template <class S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad; // same shape as value once allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backward_fn;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<S>(value.shape);
    }
};

// Lightweight handle to a graph node. Ops on Vars record backward closures;
// backward() runs them in reverse topological order.
template <class S>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}
    explicit Var(Tensor<S> value, bool requires_grad = false) {
        node_ = std::make_shared<Node<S>>();
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const { return node_ != nullptr; }
    Node<S>& node() const { return *node_; }
    std::shared_ptr<Node<S>> ptr() const { return node_; }
    const Shape& shape() const { return node_->value.shape; }
    long size() const { return node_->value.size(); }
    const Tensor<S>& value() const { return node_->value; }
    Tensor<S>& value() { return node_->value; }
    Tensor<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    S item() const {
        if (size() != 1) throw std::logic_error("Var::item: not a scalar");
        return node_->value.data[0];
    }

    void zero_grad() {
        if (!node_->grad.data.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), S(0));
    }

private:
    std::shared_ptr<Node<S>> node_;
};

template <class S>
Var<S> make_var(Shape shape, bool requires_grad = false, S fill = S(0)) {
    return Var<S>(Tensor<S>(std::move(shape), fill), requires_grad);
}

template <class S>
Var<S> make_op_node(Tensor<S> value, std::vector<Var<S>> parents,
                    std::function<void(Node<S>&)> backward_fn) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
        for (const auto& p : parents) n->parents.push_back(p.ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Var<S>(std::move(n));
}

template <class S>
void backward(const Var<S>& root) {
    if (!root.requires_grad()) throw std::logic_error("backward: root does not require grad");
    // Iterative DFS topological order.
    std::vector<Node<S>*> order;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    std::unordered_set<Node<S>*> visited;
    stack.emplace_back(&root.node(), 0);
    visited.insert(&root.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<S>* p = n->parents[idx++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node<S>* n : order) n->ensure_grad();
    auto& rg = root.node().grad;
    std::fill(rg.data.begin(), rg.data.end(), S(0));
    if (rg.size() != 1) throw std::logic_error("backward: root must be scalar");
    rg.data[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Broadcasting machinery

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const long da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const long db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                        shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` expanded to the broadcast output rank, 0 on repeated dims.
inline Shape broadcast_strides(const Shape& in, const Shape& out) {
    Shape st(out.size(), 0);
    const Shape nat = row_major_strides(in);
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i)
        st[off + i] = in[i] == 1 ? 0 : nat[i];
    return st;
}

namespace detail {

// Iterates the broadcast output space carrying two strided input offsets.
// The functor is a template parameter so the per-element call inlines.
template <class S, class Fn>
void strided_iterate(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
    const long n = numel(out);
    const std::size_t r = out.size();
    // tight inner loop over the trailing dim
    const long inner = r > 0 ? out[r - 1] : 1;
    const long inner_sa = r > 0 ? sa[r - 1] : 0;
    const long inner_sb = r > 0 ? sb[r - 1] : 0;
    Shape idx(r, 0);
    long ia = 0, ib = 0;
    for (long lin = 0; lin < n;) {
        long oa = ia, ob = ib;
        for (long k = 0; k < inner; ++k) {
            fn(lin + k, oa, ob);
            oa += inner_sa;
            ob += inner_sb;
        }
        lin += inner;
        if (lin >= n) break;
        // advance the multi-index skipping the trailing dim
        for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

} // namespace detail

// Sum `src` (shaped like `out_shape`) into `dst` (shaped like `in_shape`)
// reversing a broadcast. Used by binary-op backward passes.
template <class S>
void reduce_broadcast_into(const Shape& in_shape, const Shape& out_shape, const S* src, S* dst) {
    if (in_shape == out_shape) {
        const long n = numel(out_shape);
        for (long i = 0; i < n; ++i) dst[i] += src[i];
        return;
    }
    const Shape st = broadcast_strides(in_shape, out_shape);
    Shape zero(out_shape.size(), 0);
    detail::strided_iterate<S>(out_shape, st, zero,
                               [&](long lin, long ia, long) { dst[ia] += src[lin]; });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting

template <class S, class FwdFn, class BwdFn>
Var<S> binary_op(const Var<S>& a, const Var<S>& b, FwdFn f, BwdFn df) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor<S> out(out_shape);
    const Shape sa = broadcast_strides(a.shape(), out_shape);
    const Shape sb = broadcast_strides(b.shape(), out_shape);
    const S* pa = a.value().ptr();
    const S* pb = b.value().ptr();
    S* po = out.ptr();

    if (a.shape() == b.shape()) {
        const long n = out.size();
        for (long i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    } else {
        detail::strided_iterate<S>(out_shape, sa, sb,
                                   [&](long lin, long ia, long ib) { po[lin] = f(pa[ia], pb[ib]); });
    }

    auto a_shape = a.shape();
    auto b_shape = b.shape();
    return make_op_node<S>(
        std::move(out), {a, b}, [a, b, df, out_shape, sa, sb](Node<S>& n) {
            const S* go = n.grad.ptr();
            const S* pa2 = a.node().value.ptr();
            const S* pb2 = b.node().value.ptr();
            const bool need_a = a.requires_grad();
            const bool need_b = b.requires_grad();
            if (need_a) a.node().ensure_grad();
            if (need_b) b.node().ensure_grad();
            S* ga = need_a ? a.node().grad.ptr() : nullptr;
            S* gb = need_b ? b.node().grad.ptr() : nullptr;
            if (a.shape() == b.shape()) {
                const long cnt = n.grad.size();
                for (long i = 0; i < cnt; ++i) {
                    S da, db;
                    df(pa2[i], pb2[i], go[i], da, db);
                    if (need_a) ga[i] += da;
                    if (need_b) gb[i] += db;
                }
            } else {
                detail::strided_iterate<S>(out_shape, sa, sb, [&](long lin, long ia, long ib) {
                    S da, db;
                    df(pa2[ia], pb2[ib], go[lin], da, db);
                    if (need_a) ga[ia] += da;
                    if (need_b) gb[ib] += db;
                });
            }
        });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    return binary_op(
        a, b, [](S x, S y) { return x + y; },
        [](S, S, S g, S& da, S& db) {
            da = g;
            db = g;
        });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    return binary_op(
        a, b, [](S x, S y) { return x - y; },
        [](S, S, S g, S& da, S& db) {
            da = g;
            db = -g;
        });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    return binary_op(
        a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S g, S& da, S& db) {
            da = g * y;
            db = g * x;
        });
}

template <class S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
    return binary_op(
        a, b, [](S x, S y) { return x / y; },
        [](S x, S y, S g, S& da, S& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class S, class FwdFn, class BwdFn>
Var<S> unary_op(const Var<S>& a, FwdFn f, BwdFn df) {
    Tensor<S> out(a.shape());
    const S* pa = a.value().ptr();
    S* po = out.ptr();
    const long n = out.size();
    for (long i = 0; i < n; ++i) po[i] = f(pa[i]);
    return make_op_node<S>(std::move(out), {a}, [a, df](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        const S* pa2 = a.node().value.ptr();
        const S* po2 = n2.value.ptr();
        const S* go = n2.grad.ptr();
        S* ga = a.node().grad.ptr();
        const long cnt = n2.grad.size();
        for (long i = 0; i < cnt; ++i) ga[i] += df(pa2[i], po2[i]) * go[i];
    });
}

template <class S>
Var<S> neg(const Var<S>& a) {
    return unary_op(a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <class S>
Var<S> abs(const Var<S>& a) {
    return unary_op(a, [](S x) { return std::abs(x); },
                    [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <class S>
Var<S> exp(const Var<S>& a) {
    return unary_op(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Var<S> log(const Var<S>& a) {
    return unary_op(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Var<S> sqrt_op(const Var<S>& a) {
    return unary_op(a, [](S x) { return std::sqrt(x); },
                    [](S, S y) { return S(0.5) / (y == S(0) ? S(1e-20) : y); });
}

template <class S>
Var<S> square(const Var<S>& a) {
    return unary_op(a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

namespace detail {
template <class S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <class S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
} // namespace detail

// Vectorized where it is hot: the exp family dominates attention and the
// activation-heavy forward passes.
template <class S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out(a.shape());
    detail::ConstArrMap<S> xm(a.value().ptr(), a.size());
    detail::ArrMap<S> ym(out.ptr(), out.size());
    ym = ((-xm).exp() + S(1)).inverse();
    return make_op_node<S>(std::move(out), {a}, [a](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        detail::ConstArrMap<S> y(n2.value.ptr(), n2.value.size());
        detail::ConstArrMap<S> g(n2.grad.ptr(), n2.grad.size());
        detail::ArrMap<S> ga(a.node().grad.ptr(), a.node().grad.size());
        ga += g * y * (S(1) - y);
    });
}

template <class S>
Var<S> silu(const Var<S>& a) {
    Tensor<S> out(a.shape());
    detail::ConstArrMap<S> xm(a.value().ptr(), a.size());
    detail::ArrMap<S> ym(out.ptr(), out.size());
    ym = xm * ((-xm).exp() + S(1)).inverse();
    return make_op_node<S>(std::move(out), {a}, [a](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        detail::ConstArrMap<S> x(a.node().value.ptr(), a.node().value.size());
        detail::ConstArrMap<S> g(n2.grad.ptr(), n2.grad.size());
        detail::ArrMap<S> ga(a.node().grad.ptr(), a.node().grad.size());
        auto s = ((-x).exp() + S(1)).inverse();
        ga += g * s * (S(1) + x * (S(1) - s));
    });
}

template <class S>
Var<S> relu(const Var<S>& a) {
    return unary_op(a, [](S x) { return x > S(0) ? x : S(0); },
                    [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope = S(0.01)) {
    return unary_op(a, [slope](S x) { return x > S(0) ? x : slope * x; },
                    [slope](S x, S) { return x > S(0) ? S(1) : slope; });
}

template <class S>
Var<S> softplus(const Var<S>& a) {
    return unary_op(
        a,
        [](S x) { return x > S(20) ? x : std::log(S(1) + std::exp(x)); },
        [](S x, S) { return S(1) / (S(1) + std::exp(-x)); });
}

template <class S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
    return unary_op(a, [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); });
}

template <class S>
Var<S> scale(const Var<S>& a, S k) {
    return unary_op(a, [k](S x) { return k * x; }, [k](S, S) { return k; });
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S k) {
    return unary_op(a, [k](S x) { return x + k; }, [](S, S) { return S(1); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Var<S> sum(const Var<S>& a) {
    Tensor<S> out(Shape{1});
    const S* pa = a.value().ptr();
    S acc = S(0);
    const long n = a.size();
    for (long i = 0; i < n; ++i) acc += pa[i];
    out.data[0] = acc;
    return make_op_node<S>(std::move(out), {a}, [a](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        const S g = n2.grad.data[0];
        S* ga = a.node().grad.ptr();
        const long cnt = a.size();
        for (long i = 0; i < cnt; ++i) ga[i] += g;
    });
}

template <class S>
Var<S> mean(const Var<S>& a) {
    return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

// Sum over `axes` (sorted, unique); reduced dims kept as size 1.
template <class S>
Var<S> sum_axes(const Var<S>& a, std::vector<int> axes) {
    Shape out_shape = a.shape();
    for (int ax : axes) {
        if (ax < 0 || ax >= static_cast<int>(out_shape.size()))
            throw std::invalid_argument("sum_axes: bad axis");
        out_shape[ax] = 1;
    }
    Tensor<S> out(out_shape);
    const Shape st = broadcast_strides(out_shape, a.shape());
    Shape zero(a.shape().size(), 0);
    const S* pa = a.value().ptr();
    S* po = out.ptr();
    detail::strided_iterate<S>(a.shape(), st, zero,
                               [&](long lin, long io, long) { po[io] += pa[lin]; });
    Shape in_shape = a.shape();
    return make_op_node<S>(std::move(out), {a}, [a, out_shape, in_shape](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        const Shape st2 = broadcast_strides(out_shape, in_shape);
        Shape zero2(in_shape.size(), 0);
        const S* go = n2.grad.ptr();
        S* ga = a.node().grad.ptr();
        detail::strided_iterate<S>(in_shape, st2, zero2,
                                   [&](long lin, long io, long) { ga[lin] += go[io]; });
    });
}

template <class S>
Var<S> mean_axes(const Var<S>& a, std::vector<int> axes) {
    long n = 1;
    for (int ax : axes) n *= a.shape()[ax];
    return scale(sum_axes(a, std::move(axes)), S(1) / static_cast<S>(n));
}

// Max over the last dim (keepdim). Gradient routes to the first argmax.
template <class S>
Var<S> max_lastdim(const Var<S>& a) {
    Shape out_shape = a.shape();
    const long inner = out_shape.back();
    out_shape.back() = 1;
    const long rows = numel(out_shape);
    Tensor<S> out(out_shape);
    auto arg = std::make_shared<std::vector<long>>(rows);
    const S* pa = a.value().ptr();
    for (long r = 0; r < rows; ++r) {
        const S* row = pa + r * inner;
        long best = 0;
        for (long i = 1; i < inner; ++i)
            if (row[i] > row[best]) best = i;
        out.data[r] = row[best];
        (*arg)[r] = r * inner + best;
    }
    return make_op_node<S>(std::move(out), {a}, [a, arg](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        S* ga = a.node().grad.ptr();
        const S* go = n2.grad.ptr();
        for (long r = 0; r < static_cast<long>(arg->size()); ++r) ga[(*arg)[r]] += go[r];
    });
}

// Max over all entries (keeps shape {1}).
template <class S>
Var<S> max_all(const Var<S>& a) {
    const S* pa = a.value().ptr();
    long best = 0;
    const long n = a.size();
    for (long i = 1; i < n; ++i)
        if (pa[i] > pa[best]) best = i;
    Tensor<S> out(Shape{1});
    out.data[0] = pa[best];
    return make_op_node<S>(std::move(out), {a}, [a, best](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        a.node().grad.data[best] += n2.grad.data[0];
    });
}

template <class S>
Var<S> softmax_lastdim(const Var<S>& a) {
    const long inner = a.shape().back();
    const long rows = a.size() / inner;
    Tensor<S> out(a.shape());
    const S* pa = a.value().ptr();
    S* po = out.ptr();
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        detail::ConstArrMap<S> row(pa + r * inner, inner);
        detail::ArrMap<S> orow(po + r * inner, inner);
        orow = (row - row.maxCoeff()).exp();
        orow /= orow.sum();
    }
    return make_op_node<S>(std::move(out), {a}, [a, inner, rows](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            detail::ConstArrMap<S> yr(n2.value.ptr() + r * inner, inner);
            detail::ConstArrMap<S> gr(n2.grad.ptr() + r * inner, inner);
            detail::ArrMap<S> gar(a.node().grad.ptr() + r * inner, inner);
            const S dot = (yr * gr).sum();
            gar += yr * (gr - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops

template <class S>
Var<S> reshape(const Var<S>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                    " -> " + shape_str(new_shape));
    Tensor<S> out(new_shape, a.value().data);
    return make_op_node<S>(std::move(out), {a}, [a](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        S* ga = a.node().grad.ptr();
        const S* go = n2.grad.ptr();
        const long n = n2.grad.size();
        for (long i = 0; i < n; ++i) ga[i] += go[i];
    });
}

template <class S>
Var<S> permute(const Var<S>& a, std::vector<int> dims) {
    const Shape& in = a.shape();
    if (dims.size() != in.size()) throw std::invalid_argument("permute: rank mismatch");
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < dims.size(); ++i) out_shape[i] = in[dims[i]];
    const Shape in_st = row_major_strides(in);
    Shape gather_st(in.size());
    for (std::size_t i = 0; i < dims.size(); ++i) gather_st[i] = in_st[dims[i]];

    Tensor<S> out(out_shape);
    const S* pa = a.value().ptr();
    S* po = out.ptr();
    Shape zero(out_shape.size(), 0);
    detail::strided_iterate<S>(out_shape, gather_st, zero,
                               [&](long lin, long ia, long) { po[lin] = pa[ia]; });
    return make_op_node<S>(std::move(out), {a}, [a, out_shape, gather_st](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        S* ga = a.node().grad.ptr();
        const S* go = n2.grad.ptr();
        Shape zero2(out_shape.size(), 0);
        detail::strided_iterate<S>(out_shape, gather_st, zero2,
                                   [&](long lin, long ia, long) { ga[ia] += go[lin]; });
    });
}

// Concatenate along `dim`.
template <class S>
Var<S> concat(const std::vector<Var<S>>& parts, int dim) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input");
    Shape out_shape = parts[0].shape();
    long total = 0;
    for (const auto& p : parts) total += p.shape()[dim];
    out_shape[dim] = total;
    Tensor<S> out(out_shape);

    long outer = 1;
    for (int i = 0; i < dim; ++i) outer *= out_shape[i];
    long inner = 1;
    for (std::size_t i = dim + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    std::vector<long> sizes;
    for (const auto& p : parts) sizes.push_back(p.shape()[dim] * inner);
    const long out_row = total * inner;
    S* po = out.ptr();
    long off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const S* pp = parts[pi].value().ptr();
        for (long o = 0; o < outer; ++o)
            std::copy(pp + o * sizes[pi], pp + (o + 1) * sizes[pi], po + o * out_row + off);
        off += sizes[pi];
    }
    return make_op_node<S>(std::move(out), parts, [parts, sizes, outer, out_row](Node<S>& n2) {
        const S* go = n2.grad.ptr();
        long off2 = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            if (parts[pi].requires_grad()) {
                parts[pi].node().ensure_grad();
                S* gp = parts[pi].node().grad.ptr();
                for (long o = 0; o < outer; ++o) {
                    const S* src = go + o * out_row + off2;
                    S* dst = gp + o * sizes[pi];
                    for (long i = 0; i < sizes[pi]; ++i) dst[i] += src[i];
                }
            }
            off2 += sizes[pi];
        }
    });
}

// Slice `len` entries starting at `start` along `dim`.
template <class S>
Var<S> slice(const Var<S>& a, int dim, long start, long len) {
    const Shape& in = a.shape();
    if (start < 0 || start + len > in[dim]) throw std::invalid_argument("slice: out of range");
    Shape out_shape = in;
    out_shape[dim] = len;
    long outer = 1;
    for (int i = 0; i < dim; ++i) outer *= in[i];
    long inner = 1;
    for (std::size_t i = dim + 1; i < in.size(); ++i) inner *= in[i];
    const long in_row = in[dim] * inner;
    const long out_row = len * inner;
    Tensor<S> out(out_shape);
    const S* pa = a.value().ptr();
    S* po = out.ptr();
    for (long o = 0; o < outer; ++o)
        std::copy(pa + o * in_row + start * inner, pa + o * in_row + (start + len) * inner,
                  po + o * out_row);
    return make_op_node<S>(std::move(out), {a}, [a, outer, in_row, out_row, start, inner](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        S* ga = a.node().grad.ptr();
        const S* go = n2.grad.ptr();
        for (long o = 0; o < outer; ++o) {
            const S* src = go + o * out_row;
            S* dst = ga + o * in_row + start * inner;
            for (long i = 0; i < out_row; ++i) dst[i] += src[i];
        }
    });
}

// Dropout: active only when `training`; scales kept units by 1/(1-p).
template <class S>
Var<S> dropout(const Var<S>& a, double p, bool training, Rng* rng) {
    if (!training || p <= 0.0) return a;
    if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs an rng");
    auto mask = std::make_shared<std::vector<S>>(a.size());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
    for (auto& m : *mask) m = rng->bernoulli(p) ? S(0) : keep_scale;
    Tensor<S> out(a.shape());
    const S* pa = a.value().ptr();
    S* po = out.ptr();
    const long n = a.size();
    for (long i = 0; i < n; ++i) po[i] = pa[i] * (*mask)[i];
    return make_op_node<S>(std::move(out), {a}, [a, mask](Node<S>& n2) {
        if (!a.requires_grad()) return;
        a.node().ensure_grad();
        S* ga = a.node().grad.ptr();
        const S* go = n2.grad.ptr();
        const long cnt = n2.grad.size();
        for (long i = 0; i < cnt; ++i) ga[i] += go[i] * (*mask)[i];
    });
}

} // namespace residiff::nn
