#pragma once

#include "residiff/nn/layers.hpp"

#include <array>
#include <stdexcept>
#include <vector>

namespace residiff::models {

using nn::Ctx;
using nn::ParamMap;
using nn::Shape;
using nn::Var;

struct DenoiserConfig {
    int base_channels = 32;
    std::array<int, 4> channel_multipliers{1, 2, 4, 4};
    int time_embedding_dim = 128;
    int adapted_channels = 256; // width of the transformed prior features
    std::array<int, 4> prior_channels{32, 64, 128, 256};
    int train_steps = 1000;
    int norm_groups = 8;
    bool condition_on_raw_coarse = false; // feed the prior mask without the gate

    // Small CPU-trainable preset.
    static DenoiserConfig desk() {
        DenoiserConfig c;
        c.adapted_channels = 64;
        return c;
    }
};

// Residual block with per-channel time bias between the two convolutions.
template <class S>
struct ResBlock {
    nn::GroupNormLayer<S> norm1, norm2;
    nn::Conv2dLayer<S> conv1, conv2, skip;
    nn::TimeBias<S> tbias;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(long ci, long co, long emb_dim, long groups, Rng& rng)
        : norm1(ci, groups), norm2(co, groups), conv1(ci, co, 3, 1, 1, rng),
          conv2(co, co, 3, 1, 1, rng), tbias(emb_dim, co, rng), has_skip(ci != co) {
        if (has_skip) skip = nn::Conv2dLayer<S>(ci, co, 1, 1, 0, rng);
    }
    Var<S> operator()(const Var<S>& x, const Var<S>& emb) const {
        auto h = conv1(nn::silu(norm1(x)));
        h = tbias(h, emb);
        h = conv2(nn::silu(norm2(h)));
        return nn::add(h, has_skip ? skip(x) : x);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        norm1.collect(m, p + ".norm1");
        norm2.collect(m, p + ".norm2");
        conv1.collect(m, p + ".conv1");
        conv2.collect(m, p + ".conv2");
        tbias.collect(m, p + ".tbias");
        if (has_skip) skip.collect(m, p + ".skip");
    }
};

// Transforms one level of frozen prior features to the adapted width:
// conv -> norm -> (1+gamma, beta) modulation from the time embedding ->
// norm -> silu -> conv, plus an identity / 1x1 skip.
template <class S>
struct PriorFeatureBlock {
    nn::Conv2dLayer<S> conv_in, conv_out, proj;
    nn::LinearLayer<S> film; // emits [gamma, beta]
    long width = 0, groups = 8;
    bool has_proj = false;

    PriorFeatureBlock() = default;
    PriorFeatureBlock(long ci, long co, long emb_dim, long groups_, Rng& rng)
        : conv_in(ci, co, 3, 1, 1, rng), conv_out(co, co, 3, 1, 1, rng),
          film(emb_dim, 2 * co, rng), width(co), groups(groups_), has_proj(ci != co) {
        if (has_proj) proj = nn::Conv2dLayer<S>(ci, co, 1, 1, 0, rng);
    }
    Var<S> operator()(const Var<S>& feat, const Var<S>& emb) const {
        auto h = nn::group_norm(conv_in(feat), std::min<long>(groups, width));
        auto gb = film(nn::silu(emb)); // (n, 2*width)
        const long n = gb.shape()[0];
        auto gamma = nn::reshape(nn::slice(gb, 1, 0, width), Shape{n, width, 1, 1});
        auto beta = nn::reshape(nn::slice(gb, 1, width, width), Shape{n, width, 1, 1});
        h = nn::add(nn::mul(h, nn::add_scalar(gamma, S(1))), beta);
        h = conv_out(nn::silu(nn::group_norm(h, std::min<long>(groups, width))));
        return nn::add(h, has_proj ? proj(feat) : feat);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        conv_in.collect(m, p + ".conv_in");
        conv_out.collect(m, p + ".conv_out");
        film.collect(m, p + ".film");
        if (has_proj) proj.collect(m, p + ".proj");
    }
};

// Fuses decoder features with transformed prior features at one level:
// time-biased 3x3 convolution with an inner residual over the concatenation,
// PReLU between two further time biases, then a projection back to the
// decoder width.
template <class S>
struct FeatureAdapter {
    PriorFeatureBlock<S> prior_block;
    nn::Conv2dLayer<S> conv, proj;
    nn::TimeBias<S> tb_in, tb_mid, tb_out;
    nn::PReLULayer<S> act;

    FeatureAdapter() = default;
    FeatureAdapter(long c_dec, long c_prior, long c_adapt, long emb_dim, long groups, Rng& rng)
        : prior_block(c_prior, c_adapt, emb_dim, groups, rng),
          conv(c_dec + c_adapt, c_dec + c_adapt, 3, 1, 1, rng),
          proj(c_dec + c_adapt, c_dec, 1, 1, 0, rng),
          tb_in(emb_dim, c_dec + c_adapt, rng), tb_mid(emb_dim, c_dec + c_adapt, rng),
          tb_out(emb_dim, c_dec + c_adapt, rng), act(c_dec + c_adapt) {}
    Var<S> operator()(const Var<S>& dec_feat, const Var<S>& prior_feat, const Var<S>& emb) const {
        auto rb = prior_block(prior_feat, emb);
        auto cat = nn::concat<S>({dec_feat, rb}, 1);
        auto h = nn::add(conv(tb_in(cat, emb)), cat);
        h = tb_out(act(tb_mid(h, emb)), emb);
        return proj(h);
    }
    void collect(ParamMap<S>& m, const std::string& p) const {
        prior_block.collect(m, p + ".prior");
        conv.collect(m, p + ".conv");
        proj.collect(m, p + ".proj");
        tb_in.collect(m, p + ".tb_in");
        tb_mid.collect(m, p + ".tb_mid");
        tb_out.collect(m, p + ".tb_out");
        act.collect(m, p + ".act");
    }
};

// Noise-prediction network. Input is the concatenation of the image, the
// conditioning mask and the current latent; output is a per-pixel noise
// probability. Encoder levels sit at strides 4/8/16/32 to pair with the prior
// feature pyramid.
template <class S>
struct Denoiser {
    DenoiserConfig cfg;
    nn::TimeEmbedding<S> temb;
    nn::Conv2dLayer<S> stem, down_half;
    std::array<nn::Conv2dLayer<S>, 4> downs;
    std::array<ResBlock<S>, 4> enc;
    ResBlock<S> pre, mid;
    std::array<FeatureAdapter<S>, 4> adapters;
    std::array<ResBlock<S>, 4> dec;
    std::array<nn::ConvT2xLayer<S>, 3> ups; // between levels 4->3->2->1
    nn::ConvT2xLayer<S> up_half, up_full;
    nn::Conv2dLayer<S> post_conv, head;
    nn::GroupNormLayer<S> head_norm;

    Denoiser() = default;
    Denoiser(const DenoiserConfig& c, Rng& rng) : cfg(c), temb(c.time_embedding_dim, rng) {
        const long b = c.base_channels;
        std::array<long, 4> ch{};
        for (int i = 0; i < 4; ++i) ch[i] = b * c.channel_multipliers[i];
        const long g = c.norm_groups, e = c.time_embedding_dim;

        stem = nn::Conv2dLayer<S>(5, b, 3, 1, 1, rng);
        down_half = nn::Conv2dLayer<S>(b, b, 3, 2, 1, rng);
        pre = ResBlock<S>(b, b, e, g, rng);
        long cur = b;
        for (int i = 0; i < 4; ++i) {
            downs[i] = nn::Conv2dLayer<S>(cur, ch[i], 3, 2, 1, rng);
            enc[i] = ResBlock<S>(ch[i], ch[i], e, g, rng);
            cur = ch[i];
        }
        mid = ResBlock<S>(ch[3], ch[3], e, g, rng);
        for (int i = 0; i < 4; ++i) {
            adapters[i] = FeatureAdapter<S>(ch[i], c.prior_channels[i], c.adapted_channels, e, g, rng);
            dec[i] = ResBlock<S>(2 * ch[i], ch[i], e, g, rng); // upsampled path + fused skip
        }
        for (int i = 0; i < 3; ++i) ups[i] = nn::ConvT2xLayer<S>(ch[i + 1], ch[i], rng);
        up_half = nn::ConvT2xLayer<S>(ch[0], b, rng);
        up_full = nn::ConvT2xLayer<S>(b, b, rng);
        post_conv = nn::Conv2dLayer<S>(b, b, 3, 1, 1, rng);
        head_norm = nn::GroupNormLayer<S>(b, g);
        head = nn::Conv2dLayer<S>(b, 1, 3, 1, 1, rng);
    }

    // image (n,3,h,w), cond_mask (n,1,h,w), latent (n,1,h,w), prior: 4 levels.
    Var<S> predict_noise(const Var<S>& image, const Var<S>& cond_mask, const Var<S>& latent,
                         const std::vector<int>& t, const std::array<Var<S>, 4>& prior) const {
        const Shape& is = image.shape();
        if (is.size() != 4 || is[1] != 3) throw std::invalid_argument("predict_noise: image must be (n,3,h,w)");
        if (cond_mask.shape() != Shape{is[0], 1, is[2], is[3]} ||
            latent.shape() != Shape{is[0], 1, is[2], is[3]})
            throw std::invalid_argument("predict_noise: mask/latent shape mismatch");
        if (static_cast<long>(t.size()) != is[0])
            throw std::invalid_argument("predict_noise: one timestep per sample");
        for (int ti : t)
            if (ti < 1 || ti > cfg.train_steps)
                throw std::out_of_range("predict_noise: timestep outside schedule");
        for (int i = 0; i < 4; ++i) {
            const Shape& ps = prior[i].shape();
            const long s = 4L << i;
            if (ps.size() != 4 || ps[1] != cfg.prior_channels[i] || ps[2] != (is[2] + s - 1) / s ||
                ps[3] != (is[3] + s - 1) / s)
                throw std::invalid_argument("predict_noise: prior level " + std::to_string(i + 1) +
                                            " has shape " + nn::shape_str(ps));
        }

        auto emb = temb(t);
        auto x = nn::concat<S>({image, cond_mask, latent}, 1);
        auto half = down_half(stem(x));
        const long half_h = half.shape()[2], half_w = half.shape()[3];
        auto h = pre(half, emb);
        std::array<Var<S>, 4> feats;
        for (int i = 0; i < 4; ++i) {
            h = enc[i](downs[i](h), emb);
            feats[i] = h;
        }
        h = mid(h, emb);
        for (int i = 3; i >= 0; --i) {
            auto fused = adapters[i](feats[i], prior[i], emb);
            h = dec[i](nn::concat<S>({h, fused}, 1), emb);
            // transposed convs double sizes; crop back when ceil-division saturated
            if (i > 0)
                h = nn::crop_top_left(ups[i - 1](h), feats[i - 1].shape()[2], feats[i - 1].shape()[3]);
        }
        h = post_conv(nn::crop_top_left(up_half(h), half_h, half_w));
        h = nn::crop_top_left(up_full(h), is[2], is[3]);
        h = head(nn::silu(head_norm(h)));
        return nn::sigmoid(h);
    }

    void collect(ParamMap<S>& m, const std::string& p = "denoiser") const {
        temb.collect(m, p + ".temb");
        stem.collect(m, p + ".stem");
        down_half.collect(m, p + ".down_half");
        pre.collect(m, p + ".pre");
        for (int i = 0; i < 4; ++i) {
            downs[i].collect(m, p + ".down" + std::to_string(i + 1));
            enc[i].collect(m, p + ".enc" + std::to_string(i + 1));
            adapters[i].collect(m, p + ".adapt" + std::to_string(i + 1));
            dec[i].collect(m, p + ".dec" + std::to_string(i + 1));
        }
        mid.collect(m, p + ".mid");
        for (int i = 0; i < 3; ++i) ups[i].collect(m, p + ".up" + std::to_string(i + 1));
        up_half.collect(m, p + ".up_half");
        up_full.collect(m, p + ".up_full");
        post_conv.collect(m, p + ".post_conv");
        head_norm.collect(m, p + ".head_norm");
        head.collect(m, p + ".head");
    }

    long parameter_count() const {
        ParamMap<S> m;
        collect(m);
        return m.total_size();
    }
};

} // namespace residiff::models
