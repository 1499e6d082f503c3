#pragma once

#include "residiff/nn/layers.hpp"

#include <cmath>
#include <vector>

namespace residiff::nn {

// Adam with decoupled weight decay. Learning rates are per-parameter (set at
// registration); step() applies a shared schedule multiplier.
template <class S>
struct AdamW {
    struct Entry {
        Var<S> p;
        double lr;
        std::vector<S> m, v;
    };
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
    long t = 0;
    std::vector<Entry> entries;

    void add(const Var<S>& p, double lr) {
        entries.push_back({p, lr, std::vector<S>(p.size(), S(0)), std::vector<S>(p.size(), S(0))});
    }
    void add_all(ParamMap<S>& pm, double lr) {
        for (auto& [name, v] : pm.items) add(v, lr);
    }
    void zero_grad() {
        for (auto& e : entries) e.p.zero_grad();
    }
    void step(double schedule_scale) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (auto& e : entries) {
            const double lr = e.lr * schedule_scale;
            S* p = e.p.value().ptr();
            const S* g = e.p.grad().ptr();
            const long n = e.p.size();
            for (long i = 0; i < n; ++i) {
                e.m[i] = static_cast<S>(beta1 * e.m[i] + (1.0 - beta1) * g[i]);
                e.v[i] = static_cast<S>(beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i]);
                const double mhat = e.m[i] / bc1;
                const double vhat = e.v[i] / bc2;
                p[i] = static_cast<S>(p[i] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]));
            }
        }
    }
};

// Polynomial decay multiplier in [0,1] over a fixed training horizon.
inline double poly_decay(long step, long total_steps, double power) {
    if (total_steps <= 0) return 1.0;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return std::pow(1.0 - frac, power);
}

} // namespace residiff::nn
