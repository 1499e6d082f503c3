#pragma once

#include <vector>

namespace residiff {

// Per-timestep noise rates for a discrete diffusion chain. Steps are 1-based:
// beta(t), alpha(t), alpha_bar(t) are defined for t in [1, steps()], and
// alpha_bar(0) == 1 by convention. alpha_bar is the exact running product of
// alpha, so it is strictly decreasing and stays in (0, 1].
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas);

    static NoiseSchedule cosine(int steps);

    int steps() const { return static_cast<int>(beta_.size()); }
    double beta(int t) const { check_step(t); return beta_[t - 1]; }
    double alpha(int t) const { check_step(t); return alpha_[t - 1]; }
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        check_step(t);
        return alpha_bar_[t - 1];
    }

private:
    void check_step(int t) const;

    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

} // namespace residiff
