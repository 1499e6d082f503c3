#pragma once

#include <cstdint>
#include <random>

namespace residiff {

// splitmix64: used to derive independent child seeds from a root seed so that
// worker streams never overlap regardless of draw counts.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(root ^ splitmix64(stream));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    Rng child(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

    double uniform() { return unit_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
    int uniform_int(int lo, int hi) { // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }
    double normal() { return normal_(engine_); }
    bool bernoulli(double p) { return unit_(engine_) < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace residiff
