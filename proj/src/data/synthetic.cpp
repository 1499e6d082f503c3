#include "residiff/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace residiff::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Value noise: random lattice, smooth bilinear interpolation.
struct NoiseOctave {
    int cell;
    double amplitude;
    std::vector<double> lattice;
    int nodes_x = 0, nodes_y = 0;

    NoiseOctave(int size, int cell_, double amp, Rng& rng) : cell(cell_), amplitude(amp) {
        nodes_x = size / cell + 2;
        nodes_y = size / cell + 2;
        lattice.resize(static_cast<std::size_t>(nodes_x) * nodes_y);
        for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    }
    double sample(double y, double x) const {
        const double gy = y / cell, gx = x / cell;
        const int iy = static_cast<int>(gy), ix = static_cast<int>(gx);
        const double fy = smoothstep(gy - iy), fx = smoothstep(gx - ix);
        auto at = [&](int yy, int xx) {
            return lattice[static_cast<std::size_t>(std::min(yy, nodes_y - 1)) * nodes_x +
                           std::min(xx, nodes_x - 1)];
        };
        const double top = at(iy, ix) * (1 - fx) + at(iy, ix + 1) * fx;
        const double bot = at(iy + 1, ix) * (1 - fx) + at(iy + 1, ix + 1) * fx;
        return amplitude * (top * (1 - fy) + bot * fy);
    }
};

struct TextureParams {
    double base[3];
    std::vector<NoiseOctave> luminance;
    std::vector<NoiseOctave> tint; // weak per-channel variation
};

TextureParams make_texture(int size, double base[3], Rng& rng) {
    TextureParams t;
    for (int c = 0; c < 3; ++c) t.base[c] = base[c];
    const int cells[3] = {std::max(4, size / 4), std::max(3, size / 8), std::max(2, size / 16)};
    const double amps[3] = {0.16, 0.10, 0.06};
    for (int o = 0; o < 3; ++o) t.luminance.emplace_back(size, cells[o], amps[o], rng);
    t.tint.emplace_back(size, std::max(3, size / 8), 0.04, rng);
    return t;
}

double texture_value(const TextureParams& t, int c, double y, double x) {
    double v = t.base[c];
    for (const auto& o : t.luminance) v += o.sample(y, x);
    v += t.tint[0].sample(y + 17.0 * (c + 1), x + 29.0 * (c + 1));
    return std::clamp(v, 0.0, 1.0);
}

struct Blob {
    double cy, cx, r0;
    double wobble_amp[4];
    double wobble_phase[4];

    double radius(double theta) const {
        double r = 1.0;
        for (int k = 0; k < 4; ++k) r += wobble_amp[k] * std::cos((k + 1) * theta + wobble_phase[k]);
        return r0 * r;
    }
    double signed_distance(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double d = std::sqrt(dy * dy + dx * dx);
        return d - radius(std::atan2(dy, dx));
    }
};

Blob draw_blob(int size, double target_area, Rng& rng) {
    Blob b;
    b.cy = rng.uniform(0.30, 0.70) * size;
    b.cx = rng.uniform(0.30, 0.70) * size;
    b.r0 = size * std::sqrt(target_area / kPi);
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        b.wobble_amp[k] = rng.uniform(0.0, 0.10 / (k + 1));
        b.wobble_phase[k] = rng.uniform(0.0, 2.0 * kPi);
        total += b.wobble_amp[k];
    }
    if (total > 0.25) {
        for (int k = 0; k < 4; ++k) b.wobble_amp[k] *= 0.25 / total;
    }
    return b;
}

} // namespace

DatasetSample generate_camo_sample(std::uint64_t seed, int size, double strength) {
    if (size < 16) throw std::invalid_argument("generate_camo_sample: size too small");
    strength = std::clamp(strength, 0.0, 1.0);
    Rng rng(derive_seed(seed, 0xCA3CA3ULL));

    // background / foreground texture parameters: same family, offset scaled
    // by strength
    double bg_base[3], fg_base[3];
    const double lum = rng.uniform(0.35, 0.6);
    for (int c = 0; c < 3; ++c) bg_base[c] = std::clamp(lum + rng.uniform(-0.06, 0.06), 0.05, 0.92);
    const double gap = (0.08 + 0.27 * strength) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    for (int c = 0; c < 3; ++c) fg_base[c] = std::clamp(bg_base[c] + gap + rng.uniform(-0.02, 0.02), 0.03, 0.97);

    TextureParams bg = make_texture(size, bg_base, rng);
    TextureParams fg = make_texture(size, fg_base, rng);

    // blob layout with a resample loop to keep the area fraction valid
    std::vector<Blob> blobs;
    double fraction = 0.0;
    Grid soft(size, size);
    for (int attempt = 0; attempt < 64; ++attempt) {
        blobs.clear();
        const int count = rng.bernoulli(0.35) ? 2 : 1;
        const double area = rng.uniform(0.07, 0.32);
        for (int k = 0; k < count; ++k) blobs.push_back(draw_blob(size, area / count, rng));
        long fg_count = 0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double d = 1e9;
                for (const auto& b : blobs) d = std::min(d, b.signed_distance(y + 0.5, x + 0.5));
                const double s = std::clamp(0.5 - d / 1.5, 0.0, 1.0); // ~1.5px anti-alias band
                soft.at(y, x) = s;
                if (s > 0.5) ++fg_count;
            }
        fraction = static_cast<double>(fg_count) / (static_cast<double>(size) * size);
        if (fraction >= 0.02 && fraction <= 0.6) break;
    }
    if (fraction < 0.02 || fraction > 0.6)
        throw std::logic_error("generate_camo_sample: could not reach a valid area fraction");

    DatasetSample out;
    out.id = "s" + std::to_string(seed);
    out.image.height = size;
    out.image.width = size;
    out.image.rgb.resize(static_cast<std::size_t>(3) * size * size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double s = soft.at(y, x);
                const double v = texture_value(bg, c, y, x) * (1.0 - s) + texture_value(fg, c, y, x) * s;
                out.image.at(c, y, x) = static_cast<float>(v);
            }
    out.mask = BinaryMap(soft, 0.5);
    return out;
}

std::vector<std::uint8_t> quantize_image(const Image& img) {
    std::vector<std::uint8_t> bytes(img.rgb.size());
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        const float v = std::clamp(img.rgb[i], 0.0f, 1.0f);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return bytes;
}

std::uint64_t image_content_hash(const Image& img) {
    const auto bytes = quantize_image(img);
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    h ^= static_cast<std::uint64_t>(img.height) * 2654435761ULL + img.width;
    return h;
}

double foreground_fraction(const BinaryMap& mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) s += mask[i];
    return s / static_cast<double>(mask.size());
}

double mean_intensity_gap(const DatasetSample& s) {
    double fg = 0.0, bg = 0.0;
    long nfg = 0, nbg = 0;
    for (int y = 0; y < s.image.height; ++y)
        for (int x = 0; x < s.image.width; ++x) {
            const double lum =
                (s.image.at(0, y, x) + s.image.at(1, y, x) + s.image.at(2, y, x)) / 3.0;
            if (s.mask.at(y, x) > 0.5) {
                fg += lum;
                ++nfg;
            } else {
                bg += lum;
                ++nbg;
            }
        }
    if (nfg == 0 || nbg == 0) return 0.0;
    return std::abs(fg / nfg - bg / nbg);
}

} // namespace residiff::data
