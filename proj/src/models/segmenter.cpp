#include "residiff/models/segmenter.hpp"

#include "residiff/losses.hpp"
#include "residiff/nn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace residiff::models {

nn::Tensor<float> image_to_tensor(const data::Image& img) {
    nn::Tensor<float> t(nn::Shape{1, 3, img.height, img.width});
    std::copy(img.rgb.begin(), img.rgb.end(), t.data.begin());
    return t;
}

UncertaintyMap uncertainty_gt(const ProbMap& coarse, const BinaryMap& gt) {
    require_same_shape(coarse, gt, "uncertainty_gt");
    Grid out(coarse.height(), coarse.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(coarse[i] - gt[i]);
    return UncertaintyMap(std::move(out));
}

namespace {

Grid morph_disk(const Grid& m, int radius, bool dilate) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
    Grid out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            double v = dilate ? 0.0 : 1.0;
            for (const auto& [dy, dx] : offs) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= m.height() || xx < 0 || xx >= m.width()) continue;
                v = dilate ? std::max(v, m.at(yy, xx)) : std::min(v, m.at(yy, xx));
            }
            out.at(y, x) = v;
        }
    return out;
}

// Separable Gaussian with normalized in-bounds weights (no border darkening).
Grid gaussian_blur(const Grid& m, double sigma) {
    if (sigma <= 0.05) return m;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    Grid tmp(m.height(), m.width()), out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= m.width()) continue;
                acc += k[i + r] * m.at(y, xx);
                wsum += k[i + r];
            }
            tmp.at(y, x) = acc / wsum;
        }
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= m.height()) continue;
                acc += k[i + r] * tmp.at(yy, x);
                wsum += k[i + r];
            }
            out.at(y, x) = acc / wsum;
        }
    return out;
}

void paint_disk(Grid& m, int cy, int cx, double radius, double value) {
    const int r = static_cast<int>(std::ceil(radius));
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int y = cy + dy, x = cx + dx;
            if (y < 0 || y >= m.height() || x < 0 || x >= m.width()) continue;
            if (dy * dy + dx * dx <= radius * radius) m.at(y, x) = value;
        }
}

std::pair<int, int> pick_pixel(const Grid& m, bool foreground, Rng& rng) {
    for (int tries = 0; tries < 256; ++tries) {
        const int y = rng.uniform_int(0, m.height() - 1);
        const int x = rng.uniform_int(0, m.width() - 1);
        if ((m.at(y, x) > 0.5) == foreground) return {y, x};
    }
    return {-1, -1};
}

} // namespace

ProbMap corrupt_mask(const BinaryMap& gt, const data::CorruptionSpec& spec, Rng& rng) {
    Grid m(static_cast<const Grid&>(gt));

    const double radius = rng.uniform(spec.morph_radius_min, spec.morph_radius_max);
    const bool dilate = rng.bernoulli(0.5);
    const int ri = static_cast<int>(std::lround(radius));
    if (ri >= 1) m = morph_disk(m, ri, dilate);

    const int drops = rng.uniform_int(spec.drop_blob_min, spec.drop_blob_max);
    for (int i = 0; i < drops; ++i) {
        const auto [y, x] = pick_pixel(m, true, rng);
        const double r = rng.uniform(2.0, 5.0);
        if (y >= 0) paint_disk(m, y, x, r, 0.0);
    }
    const int falses = rng.uniform_int(spec.false_blob_min, spec.false_blob_max);
    for (int i = 0; i < falses; ++i) {
        const auto [y, x] = pick_pixel(m, false, rng);
        const double r = rng.uniform(2.0, 6.0);
        if (y >= 0) paint_disk(m, y, x, r, 1.0);
    }

    const double sigma = rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);
    m = gaussian_blur(m, sigma);

    // softness 1 keeps the blurred probabilities; lower values sharpen toward
    // a confident mask
    const double contrast = 1.0 / (0.15 + 0.85 * std::clamp(spec.softness, 0.0, 1.0));
    for (auto& v : m.values()) v = std::clamp(0.5 + (v - 0.5) * contrast, 0.0, 1.0);
    return ProbMap(std::move(m));
}

std::uint64_t params_checksum(const nn::ParamMap<float>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : params.items) {
        mix(name.data(), name.size());
        mix(v.value().ptr(), v.value().data.size() * sizeof(float));
    }
    return h;
}

// ---------------------------------------------------------------------------

CorruptedOracleSegmenter::CorruptedOracleSegmenter(
    const std::vector<const data::DatasetSample*>& samples, const data::CorruptionSpec& spec,
    std::uint64_t seed)
    : spec_(spec), seed_(seed) {
    Rng enc_rng(derive_seed(seed, 0xE7C0DE));
    encoder_ = Encoder<float>({kPriorChannels[0], kPriorChannels[1], kPriorChannels[2],
                               kPriorChannels[3]},
                              8, enc_rng);
    for (const auto* s : samples) {
        const std::uint64_t key = data::image_content_hash(s->image);
        Rng rng(derive_seed(seed, key));
        table_.emplace(key, corrupt_mask(s->mask, spec_, rng));
    }
}

ProbMap CorruptedOracleSegmenter::coarse_mask(const data::Image& image) const {
    const auto it = table_.find(data::image_content_hash(image));
    if (it == table_.end())
        throw data::DataError("corrupted-oracle prior: image is not part of its corpus");
    return it->second;
}

FeaturePyramid CorruptedOracleSegmenter::features(const data::Image& image) const {
    auto x = nn::Var<float>(image_to_tensor(image), false);
    auto feats = encoder_(x);
    FeaturePyramid fp;
    for (int i = 0; i < 4; ++i) fp.levels[i] = feats[i].value();
    return fp;
}

std::uint64_t CorruptedOracleSegmenter::checksum() const {
    nn::ParamMap<float> m;
    encoder_.collect(m, "encoder");
    return params_checksum(m);
}

// ---------------------------------------------------------------------------

ToyCnnSegmenter::ToyCnnSegmenter(std::uint64_t seed) {
    Rng rng(seed);
    encoder_ = Encoder<float>({kPriorChannels[0], kPriorChannels[1], kPriorChannels[2],
                               kPriorChannels[3]},
                              8, rng);
    up3_ = nn::ConvT2xLayer<float>(256, 128, rng);
    c3_ = nn::Conv2dLayer<float>(256, 128, 3, 1, 1, rng);
    up2_ = nn::ConvT2xLayer<float>(128, 64, rng);
    c2_ = nn::Conv2dLayer<float>(128, 64, 3, 1, 1, rng);
    up1_ = nn::ConvT2xLayer<float>(64, 32, rng);
    c1_ = nn::Conv2dLayer<float>(64, 32, 3, 1, 1, rng);
    proj_ = nn::Conv2dLayer<float>(32, 1, 1, 1, 0, rng);
}

nn::Var<float> ToyCnnSegmenter::forward_mask(const nn::Var<float>& image) const {
    auto feats = encoder_(image);
    auto lift = [](const nn::Var<float>& below, const nn::Var<float>& skip,
                   const nn::ConvT2xLayer<float>& up, const nn::Conv2dLayer<float>& conv) {
        auto l = nn::crop_top_left(up(below), skip.shape()[2], skip.shape()[3]);
        return nn::silu(conv(nn::concat<float>({l, skip}, 1)));
    };
    auto h = lift(feats[3], feats[2], up3_, c3_);
    h = lift(h, feats[1], up2_, c2_);
    h = lift(h, feats[0], up1_, c1_);
    auto logits = nn::bilinear_resize(proj_(h), image.shape()[2], image.shape()[3]);
    return nn::sigmoid(logits);
}

ProbMap ToyCnnSegmenter::coarse_mask(const data::Image& image) const {
    auto x = nn::Var<float>(image_to_tensor(image), false);
    auto prob = forward_mask(x);
    Grid g(image.height, image.width);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = prob.value().data[i];
    return ProbMap(std::move(g));
}

FeaturePyramid ToyCnnSegmenter::features(const data::Image& image) const {
    auto x = nn::Var<float>(image_to_tensor(image), false);
    auto feats = encoder_(x);
    FeaturePyramid fp;
    for (int i = 0; i < 4; ++i) fp.levels[i] = feats[i].value();
    return fp;
}

void ToyCnnSegmenter::collect(nn::ParamMap<float>& m, const std::string& prefix) const {
    encoder_.collect(m, prefix + ".encoder");
    up3_.collect(m, prefix + ".up3");
    c3_.collect(m, prefix + ".c3");
    up2_.collect(m, prefix + ".up2");
    c2_.collect(m, prefix + ".c2");
    up1_.collect(m, prefix + ".up1");
    c1_.collect(m, prefix + ".c1");
    proj_.collect(m, prefix + ".proj");
}

std::uint64_t ToyCnnSegmenter::checksum() const {
    nn::ParamMap<float> m;
    collect(m, "toy");
    return params_checksum(m);
}

std::unique_ptr<ToyCnnSegmenter> train_toy_segmenter(const std::vector<data::DatasetSample>& train,
                                                     int epochs, std::uint64_t seed) {
    if (train.empty()) throw data::DataError("train_toy_segmenter: empty dataset");
    auto seg = std::make_unique<ToyCnnSegmenter>(seed);
    nn::ParamMap<float> pm;
    seg->collect(pm, "toy");
    nn::AdamW<float> opt;
    for (auto& [name, v] : pm.items) opt.add(v, 1e-3);

    Rng rng(derive_seed(seed, 0x70717273));
    const int batch = 8;
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    const long h = train[0].image.height, w = train[0].image.width;

    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t start = 0; start + batch <= order.size(); start += batch) {
            nn::Tensor<float> imgs(nn::Shape{batch, 3, h, w});
            nn::Tensor<float> gts(nn::Shape{batch, 1, h, w});
            for (int b = 0; b < batch; ++b) {
                const auto& s = train[order[start + b]];
                std::copy(s.image.rgb.begin(), s.image.rgb.end(),
                          imgs.data.begin() + static_cast<std::size_t>(b) * 3 * h * w);
                for (long i = 0; i < h * w; ++i)
                    gts.data[static_cast<std::size_t>(b) * h * w + i] = static_cast<float>(s.mask[i]);
            }
            auto x = nn::Var<float>(std::move(imgs), false);
            auto gt = nn::Var<float>(std::move(gts), false);
            auto pred = seg->forward_mask(x);
            auto loss = losses::bce_mean(pred, gt);
            opt.zero_grad();
            nn::backward(loss);
            opt.step(1.0);
        }
    }
    return seg;
}

} // namespace residiff::models
