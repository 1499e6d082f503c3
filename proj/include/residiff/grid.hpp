#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace residiff {

// Dense row-major H×W grid of doubles. Base storage for the map types below.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0)
        : height_(height), width_(width), values_(checked_size(height, width), fill) {}
    Grid(int height, int width, std::vector<double> values)
        : height_(height), width_(width), values_(std::move(values)) {
        if (values_.size() != checked_size(height, width))
            throw std::invalid_argument("Grid: value count does not match height*width");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    double& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

private:
    static std::size_t checked_size(int h, int w) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("Grid: non-positive dimensions");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

// Probability map: entries clamped to [0,1] at construction.
class ProbMap : public Grid {
public:
    ProbMap() = default;
    ProbMap(int height, int width, double fill = 0.0) : Grid(height, width, fill) { clamp_unit(); }
    explicit ProbMap(Grid g) : Grid(std::move(g)) { clamp_unit(); }
    ProbMap(int height, int width, std::vector<double> values)
        : Grid(height, width, std::move(values)) { clamp_unit(); }

private:
    void clamp_unit() {
        for (auto& v : values()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
};

// Hard mask: entries exactly 0 or 1 (anything >= 0.5 snaps to 1).
class BinaryMap : public Grid {
public:
    BinaryMap() = default;
    BinaryMap(int height, int width, double fill = 0.0) : Grid(height, width, fill) { binarize(); }
    explicit BinaryMap(const Grid& g, double threshold = 0.5) : Grid(g) { binarize(threshold); }

    ProbMap as_prob() const { return ProbMap(static_cast<const Grid&>(*this)); }

private:
    void binarize(double threshold = 0.5) {
        for (auto& v : values()) v = v >= threshold ? 1.0 : 0.0;
    }
};

// Per-pixel uncertainty in [0,1].
class UncertaintyMap : public Grid {
public:
    UncertaintyMap() = default;
    UncertaintyMap(int height, int width, double fill = 0.0) : Grid(height, width, fill) { clamp_unit(); }
    explicit UncertaintyMap(Grid g) : Grid(std::move(g)) { clamp_unit(); }

private:
    void clamp_unit() {
        for (auto& v : values()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

} // namespace residiff
