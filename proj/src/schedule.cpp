#include "residiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace residiff {

namespace {
constexpr double kMaxBeta = 0.999;

double cosine_decay(double t, double steps) {
    constexpr double offset = 0.008;
    const double arg = ((t / steps + offset) / (1.0 + offset)) * (3.14159265358979323846 / 2.0);
    const double c = std::cos(arg);
    return c * c;
}
} // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw std::invalid_argument("NoiseSchedule: needs at least one step");
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        if (!(beta_[i] > 0.0 && beta_[i] < 1.0))
            throw std::invalid_argument("NoiseSchedule: beta out of (0,1) at step " +
                                        std::to_string(i + 1));
        alpha_[i] = 1.0 - beta_[i];
        running *= alpha_[i];
        alpha_bar_[i] = running;
    }
}

NoiseSchedule NoiseSchedule::cosine(int steps) {
    if (steps < 1) throw std::invalid_argument("NoiseSchedule::cosine: steps must be >= 1");
    std::vector<double> betas(steps);
    const double n = steps;
    double prev = cosine_decay(0.0, n);
    for (int t = 1; t <= steps; ++t) {
        const double cur = cosine_decay(static_cast<double>(t), n);
        double beta = 1.0 - cur / prev;
        if (beta > kMaxBeta) beta = kMaxBeta;
        betas[t - 1] = beta;
        prev = cur;
    }
    return NoiseSchedule(std::move(betas));
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > steps())
        throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps()) + "]");
}

} // namespace residiff
