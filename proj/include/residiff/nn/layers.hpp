#pragma once

#include "residiff/nn/ops.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace residiff::nn {

template <class S>
struct ParamMap {
    std::vector<std::pair<std::string, Var<S>>> items;

    void add(const std::string& name, const Var<S>& v) {
        if (!v.defined()) return;
        for (const auto& [n, _] : items)
            if (n == name) throw std::logic_error("ParamMap: duplicate name " + name);
        items.emplace_back(name, v);
    }
    Var<S>* find(const std::string& name) {
        for (auto& [n, v] : items)
            if (n == name) return &v;
        return nullptr;
    }
    long total_size() const {
        long n = 0;
        for (const auto& [_, v] : items) n += v.size();
        return n;
    }
};

// Execution context threaded through forward passes.
struct Ctx {
    bool training = false;
    Rng* rng = nullptr;
};

template <class S>
Var<S> constant(Tensor<S> t) {
    return Var<S>(std::move(t), false);
}

template <class S>
Var<S> param_normal(Shape shape, double stddev, Rng& rng) {
    Tensor<S> t(shape);
    for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
    return Var<S>(std::move(t), true);
}

template <class S>
Var<S> param_fill(Shape shape, S value) {
    return Var<S>(Tensor<S>(std::move(shape), value), true);
}

template <class S>
struct Conv2dLayer {
    Var<S> weight, bias;
    long stride = 1, pad = 1;

    Conv2dLayer() = default;
    Conv2dLayer(long ci, long co, long k, long stride_, long pad_, Rng& rng, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        const double std = zero_init ? 0.0 : std::sqrt(2.0 / (ci * k * k));
        weight = param_normal<S>(Shape{co, ci, k, k}, std, rng);
        bias = param_fill<S>(Shape{co}, S(0));
    }
    Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
    void collect(ParamMap<S>& m, const std::string& p) const {
        m.add(p + ".weight", weight);
        m.add(p + ".bias", bias);
    }
};

template <class S>
struct ConvT2xLayer {
    Var<S> weight, bias;

    ConvT2xLayer() = default;
    ConvT2xLayer(long ci, long co, Rng& rng) {
        weight = param_normal<S>(Shape{ci, co, 2, 2}, std::sqrt(2.0 / (ci * 4)), rng);
        bias = param_fill<S>(Shape{co}, S(0));
    }
    Var<S> operator()(const Var<S>& x) const { return conv_transpose2x(x, weight, bias); }
    void collect(ParamMap<S>& m, const std::string& p) const {
        m.add(p + ".weight", weight);
        m.add(p + ".bias", bias);
    }
};

template <class S>
struct LinearLayer {
    Var<S> weight, bias;

    LinearLayer() = default;
    LinearLayer(long din, long dout, Rng& rng, bool zero_init = false) {
        const double std = zero_init ? 0.0 : std::sqrt(1.0 / din);
        weight = param_normal<S>(Shape{dout, din}, std, rng);
        bias = param_fill<S>(Shape{dout}, S(0));
    }
    Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
    void collect(ParamMap<S>& m, const std::string& p) const {
        m.add(p + ".weight", weight);
        m.add(p + ".bias", bias);
    }
};

// Group normalization without affine terms; groups divide the channel count.
template <class S>
Var<S> group_norm(const Var<S>& x, long groups, S eps = S(1e-5)) {
    const Shape& xs = x.shape();
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    if (c % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
    auto g = reshape(x, Shape{n, groups, (c / groups) * h * w});
    auto mu = mean_axes(g, {2});
    auto centered = sub(g, mu);
    auto var = mean_axes(square(centered), {2});
    auto normed = div(centered, sqrt_op(add_scalar(var, eps)));
    return reshape(normed, xs);
}

template <class S>
struct GroupNormLayer {
    long groups = 1;
    Var<S> gamma, beta; // (1, c, 1, 1)

    GroupNormLayer() = default;
    GroupNormLayer(long c, long groups_) : groups(std::min(groups_, c)) {
        while (c % groups != 0) --groups; // fall back to a divisor
        gamma = param_fill<S>(Shape{1, c, 1, 1}, S(1));
        beta = param_fill<S>(Shape{1, c, 1, 1}, S(0));
    }
    Var<S> operator()(const Var<S>& x) const {
        return add(mul(group_norm(x, groups), gamma), beta);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        m.add(p + ".gamma", gamma);
        m.add(p + ".beta", beta);
    }
};

template <class S>
struct BatchNorm2dLayer {
    Var<S> gamma, beta;
    Tensor<S> running_mean, running_var;
    S momentum = S(0.1);
    S eps = S(1e-5);

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(long c) {
        gamma = param_fill<S>(Shape{1, c, 1, 1}, S(1));
        beta = param_fill<S>(Shape{1, c, 1, 1}, S(0));
        running_mean = Tensor<S>(Shape{1, c, 1, 1}, S(0));
        running_var = Tensor<S>(Shape{1, c, 1, 1}, S(1));
    }
    Var<S> forward(const Var<S>& x, const Ctx& ctx) {
        if (ctx.training) {
            auto mu = mean_axes(x, {0, 2, 3});
            auto centered = sub(x, mu);
            auto var = mean_axes(square(centered), {0, 2, 3});
            // running stats live outside the graph
            const S* pm = mu.value().ptr();
            const S* pv = var.value().ptr();
            for (long i = 0; i < running_mean.size(); ++i) {
                running_mean.data[i] = (S(1) - momentum) * running_mean.data[i] + momentum * pm[i];
                running_var.data[i] = (S(1) - momentum) * running_var.data[i] + momentum * pv[i];
            }
            auto normed = div(centered, sqrt_op(add_scalar(var, eps)));
            return add(mul(normed, gamma), beta);
        }
        auto mu = constant(running_mean);
        auto var = constant(running_var);
        auto normed = div(sub(x, mu), sqrt_op(add_scalar(var, eps)));
        return add(mul(normed, gamma), beta);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        m.add(p + ".gamma", gamma);
        m.add(p + ".beta", beta);
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<S>*>>& out, const std::string& p) {
        out.emplace_back(p + ".running_mean", &running_mean);
        out.emplace_back(p + ".running_var", &running_var);
    }
};

template <class S>
struct PReLULayer {
    Var<S> alpha; // per channel (1, c, 1, 1)

    PReLULayer() = default;
    explicit PReLULayer(long c) { alpha = param_fill<S>(Shape{1, c, 1, 1}, S(0.25)); }
    Var<S> operator()(const Var<S>& x) const {
        auto pos = relu(x);
        return add(pos, mul(alpha, sub(x, pos)));
    }
    void collect(ParamMap<S>& m, const std::string& p) const { m.add(p + ".alpha", alpha); }
};

// Root-mean-square normalization over the channel dim of (n, c, h, w).
template <class S>
Var<S> rms_norm_channels(const Var<S>& x, S eps = S(1e-6)) {
    auto ms = mean_axes(square(x), {1});
    return div(x, sqrt_op(add_scalar(ms, eps)));
}

// Sinusoidal position features for integer timesteps; deterministic, no params.
template <class S>
Tensor<S> sinusoidal_embedding(const std::vector<int>& steps, long dim) {
    const long half = dim / 2;
    Tensor<S> out(Shape{static_cast<long>(steps.size()), dim});
    for (std::size_t n = 0; n < steps.size(); ++n) {
        for (long i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                         static_cast<double>(half > 1 ? half - 1 : 1));
            const double arg = static_cast<double>(steps[n]) * freq;
            out.data[n * dim + i] = static_cast<S>(std::sin(arg));
            out.data[n * dim + half + i] = static_cast<S>(std::cos(arg));
        }
        if (dim % 2 == 1) out.data[n * dim + dim - 1] = S(0);
    }
    return out;
}

// Two-layer MLP over the sinusoidal features.
template <class S>
struct TimeEmbedding {
    long dim = 128;
    LinearLayer<S> fc1, fc2;

    TimeEmbedding() = default;
    TimeEmbedding(long dim_, Rng& rng)
        : dim(dim_), fc1(dim_, dim_, rng), fc2(dim_, dim_, rng) {}
    Var<S> operator()(const std::vector<int>& steps) const {
        auto base = constant(sinusoidal_embedding<S>(steps, dim));
        return fc2(silu(fc1(base)));
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        fc1.collect(m, p + ".fc1");
        fc2.collect(m, p + ".fc2");
    }
};

// Per-channel bias conditioned on the time embedding: x + proj(silu(emb)).
template <class S>
struct TimeBias {
    LinearLayer<S> proj;
    long channels = 0;

    TimeBias() = default;
    TimeBias(long emb_dim, long channels_, Rng& rng)
        : proj(emb_dim, channels_, rng), channels(channels_) {}
    Var<S> operator()(const Var<S>& x, const Var<S>& emb) const {
        auto b = proj(silu(emb)); // (n, c)
        auto b4 = reshape(b, Shape{b.shape()[0], channels, 1, 1});
        return add(x, b4);
    }
    void collect(ParamMap<S>& m, const std::string& p) const { proj.collect(m, p + ".proj"); }
};

} // namespace residiff::nn
