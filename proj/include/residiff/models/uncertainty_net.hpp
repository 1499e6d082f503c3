#pragma once

#include "residiff/grid.hpp"
#include "residiff/nn/layers.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace residiff::models {

using nn::Ctx;
using nn::ParamMap;
using nn::Shape;
using nn::Var;

// Binary entropy of a probability map, normalized to [0,1] (log base 2).
inline UncertaintyMap entropy_map(const ProbMap& p) {
    Grid out(p.height(), p.width());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = p[i];
        double h = 0.0;
        if (v > 0.0 && v < 1.0)
            h = -(v * std::log2(v) + (1.0 - v) * std::log2(1.0 - v));
        out[i] = h;
    }
    return UncertaintyMap(std::move(out));
}

struct UncertaintyConfig {
    std::array<int, 4> channels{32, 64, 128, 256}; // encoder widths at strides 4/8/16/32
    bool coarse_into_backbone = true; // feed the coarse mask as a 4th encoder channel
    int mc_samples = 10;                           // Monte Carlo draws for the variance map
    int window = 16;
    int head_dim = 4;
    int attn_channels = 8; // heads = attn_channels / head_dim
    double dropout = 0.1;
    int norm_groups = 8;
};

template <class S>
struct UncertaintyBundleT {
    Var<S> entropy;  // U_E
    Var<S> variance; // U_B
    Var<S> decoded;  // U_D
    Var<S> fused;    // final estimate
    Var<S> c_prob;   // retained stochastic draw (after sigmoid), for the BNN loss
    Var<S> mu, sigma;
};

// Shared 4-stage encoder; levels at strides 4, 8, 16, 32.
template <class S>
struct Encoder {
    std::array<int, 4> ch;
    int groups = 8;
    nn::Conv2dLayer<S> stem1, stem2;
    std::array<nn::Conv2dLayer<S>, 4> down;
    std::array<nn::Conv2dLayer<S>, 4> post;

    Encoder() = default;
    Encoder(const std::array<int, 4>& channels, int groups_, Rng& rng, int in_channels = 3)
        : ch(channels), groups(groups_) {
        stem1 = nn::Conv2dLayer<S>(in_channels, 16, 3, 2, 1, rng);
        stem2 = nn::Conv2dLayer<S>(16, ch[0], 3, 2, 1, rng);
        long cur = ch[0];
        for (int i = 0; i < 4; ++i) {
            const long target = ch[i];
            down[i] = i == 0 ? nn::Conv2dLayer<S>(cur, target, 3, 1, 1, rng)
                             : nn::Conv2dLayer<S>(cur, target, 3, 2, 1, rng);
            post[i] = nn::Conv2dLayer<S>(target, target, 3, 1, 1, rng);
            cur = target;
        }
    }
    std::array<Var<S>, 4> operator()(const Var<S>& image) const {
        auto h = nn::silu(stem2(nn::silu(stem1(image))));
        std::array<Var<S>, 4> feats;
        for (int i = 0; i < 4; ++i) {
            h = nn::silu(down[i](h));
            h = nn::add(post[i](h), h);
            h = nn::group_norm(h, std::min<long>(groups, ch[i]));
            feats[i] = h;
        }
        return feats;
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        stem1.collect(m, p + ".stem1");
        stem2.collect(m, p + ".stem2");
        for (int i = 0; i < 4; ++i) {
            down[i].collect(m, p + ".down" + std::to_string(i + 1));
            post[i].collect(m, p + ".post" + std::to_string(i + 1));
        }
    }
};

// Per-sample mean-max rescale to [0,1]: (v - mean) / (max - mean + 1e-8).
template <class S>
Var<S> mean_max_normalize(const Var<S>& v) {
    const Shape& s = v.shape();
    const long n = s[0], hw = s[2] * s[3];
    auto flat = nn::reshape(v, Shape{n, hw});
    auto mx = nn::reshape(nn::max_lastdim(flat), Shape{n, 1, 1, 1});
    auto mu = nn::reshape(nn::mean_axes(flat, {1}), Shape{n, 1, 1, 1});
    auto scaled = nn::div(nn::sub(v, mu), nn::add_scalar(nn::sub(mx, mu), S(1e-8)));
    return nn::clamp(scaled, S(0), S(1));
}

// Gaussian latent head over encoder level 3: mu/sigma projections, K
// stochastic draws, variance map normalized to [0,1].
template <class S>
struct BnnHead {
    nn::Conv2dLayer<S> mu_proj, sigma_proj;

    BnnHead() = default;
    BnnHead(long ci, Rng& rng)
        : mu_proj(ci, 1, 1, 1, 0, rng), sigma_proj(ci, 1, 1, 1, 0, rng) {}

    struct Out {
        Var<S> variance_map; // normalized
        Var<S> variance_raw; // plain per-pixel sample variance
        Var<S> c_prob;
        Var<S> mu, sigma;
    };

    Out forward(const Var<S>& f3, long out_h, long out_w, int k_samples, Rng& rng) const {
        if (k_samples < 2) throw std::invalid_argument("BnnHead: needs K >= 2 draws");
        auto mu = nn::bilinear_resize(mu_proj(f3), out_h, out_w);
        auto sigma = nn::softplus(nn::bilinear_resize(sigma_proj(f3), out_h, out_w));
        std::vector<Var<S>> draws;
        draws.reserve(k_samples);
        for (int k = 0; k < k_samples; ++k) {
            nn::Tensor<S> eps(mu.shape());
            for (auto& e : eps.data) e = static_cast<S>(rng.normal());
            draws.push_back(nn::add(mu, nn::mul(nn::constant(std::move(eps)), sigma)));
        }
        // population variance over the K draws
        Var<S> acc = draws[0];
        for (int k = 1; k < k_samples; ++k) acc = nn::add(acc, draws[k]);
        auto mean_c = nn::scale(acc, S(1) / static_cast<S>(k_samples));
        Var<S> var_acc;
        for (int k = 0; k < k_samples; ++k) {
            auto d = nn::square(nn::sub(draws[k], mean_c));
            var_acc = k == 0 ? d : nn::add(var_acc, d);
        }
        auto variance = nn::scale(var_acc, S(1) / static_cast<S>(k_samples));
        Out out;
        out.variance_map = mean_max_normalize(variance);
        out.variance_raw = variance;
        out.c_prob = nn::sigmoid(draws[0]);
        out.mu = mu;
        out.sigma = sigma;
        return out;
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        mu_proj.collect(m, p + ".mu");
        sigma_proj.collect(m, p + ".sigma");
    }
};

// Stacked convolutional fusion producing a single-channel attention map at
// 1/4 resolution per side: twice (3x3 s1 + relu, 3x3 s2 + relu), then
// 3x3 + relu, 1x1, sigmoid.
template <class S>
struct ConvFusion {
    nn::Conv2dLayer<S> c1a, c1b, c2a, c2b, c3, c4;

    ConvFusion() = default;
    explicit ConvFusion(Rng& rng)
        : c1a(3, 16, 3, 1, 1, rng), c1b(16, 16, 3, 2, 1, rng), c2a(16, 32, 3, 1, 1, rng),
          c2b(32, 32, 3, 2, 1, rng), c3(32, 32, 3, 1, 1, rng), c4(32, 1, 1, 1, 0, rng) {}
    Var<S> operator()(const Var<S>& cat3) const {
        if (cat3.shape()[1] != 3) throw std::invalid_argument("ConvFusion: expects 3 channels");
        auto h = nn::relu(c1b(nn::relu(c1a(cat3))));
        h = nn::relu(c2b(nn::relu(c2a(h))));
        h = nn::relu(c3(h));
        return nn::sigmoid(c4(h));
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        c1a.collect(m, p + ".c1a");
        c1b.collect(m, p + ".c1b");
        c2a.collect(m, p + ".c2a");
        c2b.collect(m, p + ".c2b");
        c3.collect(m, p + ".c3");
        c4.collect(m, p + ".c4");
    }
};

// Suppresses features where the attention map is high: f * (1 - attn).
template <class S>
Var<S> residual_attention(const Var<S>& feat, const Var<S>& attn) {
    auto resized = nn::bilinear_resize(attn, feat.shape()[2], feat.shape()[3]);
    return nn::mul(feat, nn::add_scalar(nn::neg(resized), S(1)));
}

// Decoder block: dropout -> leaky relu -> batch norm, after a 3x3 conv.
template <class S>
struct DecoderBlock {
    nn::ConvT2xLayer<S> up;
    nn::Conv2dLayer<S> conv;
    nn::BatchNorm2dLayer<S> bn;
    double drop = 0.1;

    DecoderBlock() = default;
    DecoderBlock(long c_hi, long c_skip, long co, double drop_, Rng& rng)
        : up(c_hi, co, rng), conv(co + c_skip, co, 3, 1, 1, rng), bn(co), drop(drop_) {}
    Var<S> forward(const Var<S>& below, const Var<S>& skip, const Ctx& ctx) {
        auto lifted = nn::crop_top_left(up(below), skip.shape()[2], skip.shape()[3]);
        auto h = conv(nn::concat<S>({lifted, skip}, 1));
        h = nn::dropout(h, drop, ctx.training, ctx.rng);
        h = nn::leaky_relu(h, S(0.1));
        return bn.forward(h, ctx);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        up.collect(m, p + ".up");
        conv.collect(m, p + ".conv");
        bn.collect(m, p + ".bn");
    }
    void collect_buffers(std::vector<std::pair<std::string, nn::Tensor<S>*>>& out, const std::string& p) {
        bn.collect_buffers(out, p + ".bn");
    }
};

// Window cross-attention between the decoded map (queries) and the stacked
// entropy/variance maps (keys, values); residual with a zero-initialized
// output projection so a fresh module passes the decoded map through.
template <class S>
struct WindowFusion {
    int window = 16, head_dim = 4, channels = 8;
    nn::Conv2dLayer<S> q_proj, k_proj, v_proj, out_proj;

    WindowFusion() = default;
    WindowFusion(int window_, int head_dim_, int channels_, Rng& rng)
        : window(window_), head_dim(head_dim_), channels(channels_),
          q_proj(1, channels_, 1, 1, 0, rng), k_proj(2, channels_, 1, 1, 0, rng),
          v_proj(2, channels_, 1, 1, 0, rng),
          out_proj(channels_, 1, 1, 1, 0, rng, /*zero_init=*/true) {
        if (channels % head_dim != 0) throw std::invalid_argument("WindowFusion: head_dim must divide channels");
    }

    Var<S> forward(const Var<S>& decoded, const Var<S>& entropy, const Var<S>& variance,
                   nn::Tensor<S>* attn_out = nullptr) const {
        const Shape& s = decoded.shape();
        const long n = s[0], h = s[2], w = s[3];
        const long ph = (window - h % window) % window;
        const long pw = (window - w % window) % window;
        auto dq = nn::pad_bottom_right(decoded, ph, pw);
        auto kv = nn::pad_bottom_right(nn::concat<S>({entropy, variance}, 1), ph, pw);
        const long hp = h + ph, wp = w + pw;

        auto wq = nn::window_partition(dq, window);  // (b, 1, win, win)
        auto wkv = nn::window_partition(kv, window); // (b, 2, win, win)
        auto q = q_proj(wq);
        auto k = k_proj(wkv);
        auto v = v_proj(wkv);

        const long b = q.shape()[0];
        const long heads = channels / head_dim;
        const long tokens = static_cast<long>(window) * window;
        auto split_heads = [&](const Var<S>& t) {
            auto r = nn::reshape(t, Shape{b, heads, head_dim, tokens});
            return nn::reshape(nn::permute(r, {0, 1, 3, 2}), Shape{b * heads, tokens, head_dim});
        };
        auto qh = split_heads(q);
        auto kh = split_heads(k);
        auto vh = split_heads(v);

        auto scores = nn::scale(nn::bmm(qh, nn::permute(kh, {0, 2, 1})),
                                static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim))));
        auto attn = nn::softmax_lastdim(scores);
        if (attn_out != nullptr) *attn_out = attn.value();
        auto ctx_tokens = nn::bmm(attn, vh); // (b*heads, tokens, head_dim)

        auto merged = nn::reshape(nn::permute(nn::reshape(ctx_tokens, Shape{b, heads, tokens, head_dim}),
                                              {0, 1, 3, 2}),
                                  Shape{b, channels, window, window});
        auto normed = nn::add(nn::rms_norm_channels(merged), merged);
        auto out_win = out_proj(normed); // (b, 1, win, win)
        auto full = nn::window_merge(out_win, window, n, hp, wp);
        auto fused = nn::clamp(nn::add(nn::crop_top_left(full, h, w), decoded), S(0), S(1));
        return fused;
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        q_proj.collect(m, p + ".q");
        k_proj.collect(m, p + ".k");
        v_proj.collect(m, p + ".v");
        out_proj.collect(m, p + ".out");
    }
};

// Full estimator: shared encoder, Gaussian latent branch, entropy map,
// attention-modulated decoder and window fusion.
template <class S>
struct UncertaintyNet {
    UncertaintyConfig cfg;
    Encoder<S> encoder;
    BnnHead<S> bnn;
    ConvFusion<S> conv_fusion;
    std::array<DecoderBlock<S>, 3> dec; // levels 3, 2, 1
    nn::ConvT2xLayer<S> up_a, up_b;     // learned 4x lift back to input resolution
    nn::Conv2dLayer<S> dec_proj;
    WindowFusion<S> fusion;
    bool disable_residual_attention = false; // ablation switch

    UncertaintyNet() = default;
    UncertaintyNet(const UncertaintyConfig& c, Rng& rng)
        : cfg(c), encoder(c.channels, c.norm_groups, rng, c.coarse_into_backbone ? 4 : 3),
          bnn(c.channels[2], rng), conv_fusion(rng),
          fusion(c.window, c.head_dim, c.attn_channels, rng) {
        dec[0] = DecoderBlock<S>(c.channels[3], c.channels[2], c.channels[2], c.dropout, rng);
        dec[1] = DecoderBlock<S>(c.channels[2], c.channels[1], c.channels[1], c.dropout, rng);
        dec[2] = DecoderBlock<S>(c.channels[1], c.channels[0], c.channels[0], c.dropout, rng);
        up_a = nn::ConvT2xLayer<S>(c.channels[0], 16, rng);
        up_b = nn::ConvT2xLayer<S>(16, 8, rng);
        dec_proj = nn::Conv2dLayer<S>(8, 1, 1, 1, 0, rng);
        // uncertain pixels are rare; start the decoder near the closed state
        dec_proj.bias.value().data[0] = S(-2);
    }

    // image (n,3,h,w), coarse (n,1,h,w); draws use the caller's rng.
    UncertaintyBundleT<S> forward(const Var<S>& image, const Var<S>& coarse, Rng& rng, Ctx ctx,
                                  nn::Tensor<S>* attn_out = nullptr) {
        const Shape& is = image.shape();
        const long n = is[0], h = is[2], w = is[3];
        if (coarse.shape() != Shape{n, 1, h, w})
            throw std::invalid_argument("UncertaintyNet: coarse mask shape mismatch");

        auto enc_in = cfg.coarse_into_backbone ? nn::concat<S>({image, coarse}, 1) : image;
        auto feats = encoder(enc_in);
        auto bnn_out = bnn.forward(feats[2], h, w, cfg.mc_samples, rng);

        // entropy of the coarse mask, computed outside the graph
        nn::Tensor<S> ent(Shape{n, 1, h, w});
        {
            const S* pc = coarse.value().ptr();
            for (long i = 0; i < ent.size(); ++i) {
                const double p = std::min(1.0, std::max(0.0, static_cast<double>(pc[i])));
                ent.data[i] = (p > 0.0 && p < 1.0)
                                  ? static_cast<S>(-(p * std::log2(p) + (1 - p) * std::log2(1 - p)))
                                  : S(0);
            }
        }
        auto u_e = nn::constant(std::move(ent));

        auto m_cat = nn::concat<S>({coarse, u_e, bnn_out.variance_map}, 1);
        auto attn_map = conv_fusion(m_cat);

        std::array<Var<S>, 4> mod;
        for (int i = 0; i < 4; ++i)
            mod[i] = disable_residual_attention ? feats[i] : residual_attention(feats[i], attn_map);

        auto u = mod[3];
        u = dec[0].forward(u, mod[2], ctx);
        u = dec[1].forward(u, mod[1], ctx);
        u = dec[2].forward(u, mod[0], ctx);
        auto lifted = nn::leaky_relu(nn::crop_top_left(up_a(u), (h + 1) / 2, (w + 1) / 2), S(0.1));
        lifted = nn::leaky_relu(nn::crop_top_left(up_b(lifted), h, w), S(0.1));
        auto decoded = nn::sigmoid(dec_proj(lifted));

        UncertaintyBundleT<S> out;
        out.entropy = u_e;
        out.variance = bnn_out.variance_map;
        out.decoded = decoded;
        out.fused = fusion.forward(decoded, u_e, bnn_out.variance_map, attn_out);
        out.c_prob = bnn_out.c_prob;
        out.mu = bnn_out.mu;
        out.sigma = bnn_out.sigma;
        return out;
    }

    void collect(ParamMap<S>& m, const std::string& p = "uncertainty") const {
        encoder.collect(m, p + ".backbone");
        bnn.collect(m, p + ".bnn");
        conv_fusion.collect(m, p + ".conv_fusion");
        for (int i = 0; i < 3; ++i) dec[i].collect(m, p + ".dec" + std::to_string(3 - i));
        up_a.collect(m, p + ".up_a");
        up_b.collect(m, p + ".up_b");
        dec_proj.collect(m, p + ".dec_proj");
        fusion.collect(m, p + ".fusion");
    }

    void collect_buffers(std::vector<std::pair<std::string, nn::Tensor<S>*>>& out,
                         const std::string& p = "uncertainty") {
        for (int i = 0; i < 3; ++i) dec[i].collect_buffers(out, p + ".dec" + std::to_string(3 - i));
    }

    long parameter_count() const {
        ParamMap<S> m;
        collect(m);
        return m.total_size();
    }
};

} // namespace residiff::models
