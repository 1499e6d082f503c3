#include "residiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace residiff {

namespace {
constexpr double kDegenerateNorm = 1e-12;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void check_t(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.steps())
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                                std::to_string(s.steps()) + "]");
}
} // namespace

ProbMap mask_residual(const UncertaintyMap& gate, const ProbMap& map) {
    require_same_shape(gate, map, "mask_residual");
    Grid out(map.height(), map.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gate[i] * map[i];
    return ProbMap(std::move(out));
}

ProbMap forward_marginal_param(const NoiseSchedule& s, int t, const ProbMap& target,
                               const ProbMap& masked_coarse) {
    check_t(s, t);
    require_same_shape(target, masked_coarse, "forward_marginal_param");
    const double ab = s.alpha_bar(t);
    Grid out(target.height(), target.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ab * target[i] + (1.0 - ab) * masked_coarse[i];
    return ProbMap(std::move(out));
}

std::pair<BinaryMap, ProbMap> sample_forward(const NoiseSchedule& s, int t, const ProbMap& target,
                                             const ProbMap& masked_coarse, Rng& rng) {
    check_t(s, t);
    require_same_shape(target, masked_coarse, "sample_forward");
    const double ab = s.alpha_bar(t);
    Grid noise(target.height(), target.width());
    Grid latent(target.height(), target.width());
    for (std::size_t i = 0; i < noise.size(); ++i) {
        const double p = (1.0 - ab) * std::abs(masked_coarse[i] - target[i]);
        noise[i] = rng.bernoulli(p) ? 1.0 : 0.0;
        latent[i] = std::abs(target[i] - noise[i]);
    }
    return {BinaryMap(noise), ProbMap(std::move(latent))};
}

double posterior_param_scalar(double beta_t, double alpha_bar_prev, double latent,
                              double target, double masked_coarse) {
    // Two-channel likelihood of the current latent given the previous one,
    // times the marginal prior of the previous latent; channel index is the
    // previous latent's value. beta is used directly for the mixing weight so
    // tiny rates keep full precision.
    const double alpha_t = 1.0 - beta_t;
    const double cross = std::abs(1.0 - latent - masked_coarse);
    const double like0 = alpha_t * (1.0 - latent) + beta_t * cross;
    const double like1 = alpha_t * latent + beta_t * cross;
    const double prior0 = alpha_bar_prev * (1.0 - target) + (1.0 - alpha_bar_prev) * (1.0 - masked_coarse);
    const double prior1 = alpha_bar_prev * target + (1.0 - alpha_bar_prev) * masked_coarse;
    const double w0 = like0 * prior0;
    const double w1 = like1 * prior1;
    const double norm = w0 + w1;
    // Unreachable event (both channels ~0): keep the current value. All terms
    // are non-negative, so a norm above the guard is safe to divide by.
    if (norm < kDegenerateNorm) return clamp01(latent);
    return clamp01(w1 / norm);
}

ProbMap bernoulli_posterior(const NoiseSchedule& s, int t, const ProbMap& latent,
                            const ProbMap& target, const ProbMap& masked_coarse) {
    check_t(s, t);
    require_same_shape(latent, target, "bernoulli_posterior");
    require_same_shape(latent, masked_coarse, "bernoulli_posterior");
    const double b = s.beta(t);
    const double ab_prev = s.alpha_bar(t - 1);
    Grid out(latent.height(), latent.width());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = posterior_param_scalar(b, ab_prev, latent[i], target[i], masked_coarse[i]);
    return ProbMap(std::move(out));
}

std::pair<BinaryMap, ProbMap> ddpm_reverse_step(const NoiseSchedule& s, int t,
                                                const ProbMap& latent, const ProbMap& noise_pred,
                                                const ProbMap& masked_coarse, Rng& rng) {
    check_t(s, t);
    require_same_shape(latent, noise_pred, "ddpm_reverse_step");
    Grid target_hat(latent.height(), latent.width());
    for (std::size_t i = 0; i < target_hat.size(); ++i)
        target_hat[i] = clamp01(std::abs(latent[i] - noise_pred[i]));
    ProbMap target_hat_map(std::move(target_hat));
    ProbMap mean = bernoulli_posterior(s, t, latent, target_hat_map, masked_coarse);
    Grid prev(latent.height(), latent.width());
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] = rng.bernoulli(mean[i]) ? 1.0 : 0.0;
    return {BinaryMap(prev), std::move(target_hat_map)};
}

double ddim_sigma(const NoiseSchedule& s, int t_hi, int t_lo, SigmaRule rule) {
    const double hi = 1.0 - s.alpha_bar(t_hi);
    const double lo = 1.0 - s.alpha_bar(t_lo);
    double sigma = rule == SigmaRule::Ratio ? lo / hi : hi / (lo > 0.0 ? lo : hi);
    return clamp01(sigma);
}

BinaryMap ddim_reverse_step(const NoiseSchedule& s, int t_hi, int t_lo, const ProbMap& latent,
                            const ProbMap& noise_pred, const ProbMap& masked_coarse, Rng& rng,
                            SigmaRule rule) {
    check_t(s, t_hi);
    if (t_lo < 0 || t_lo >= t_hi)
        throw std::out_of_range("ddim_reverse_step: need t_hi > t_lo >= 0");
    require_same_shape(latent, noise_pred, "ddim_reverse_step");
    require_same_shape(latent, masked_coarse, "ddim_reverse_step");

    Grid out(latent.height(), latent.width());
    if (t_lo == 0) {
        // Terminal jump: deterministic thresholded reconstruction.
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = clamp01(std::abs(latent[i] - noise_pred[i])) >= 0.5 ? 1.0 : 0.0;
        return BinaryMap(out);
    }

    const double ab_hi = s.alpha_bar(t_hi);
    const double ab_lo = s.alpha_bar(t_lo);
    const double sigma = ddim_sigma(s, t_hi, t_lo, rule);
    const double c_latent = clamp01(sigma);
    const double c_target = clamp01(ab_lo - sigma * ab_hi);
    const double c_coarse = clamp01((1.0 - ab_lo) - (1.0 - ab_hi) * sigma);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double target_hat = clamp01(std::abs(latent[i] - noise_pred[i]));
        const double theta =
            clamp01(c_latent * latent[i] + c_target * target_hat + c_coarse * masked_coarse[i]);
        out[i] = rng.bernoulli(theta) ? 1.0 : 0.0;
    }
    return BinaryMap(out);
}

ProbMap compose_refined_mask(const ProbMap& target_hat, const UncertaintyMap& gate,
                             const ProbMap& coarse) {
    require_same_shape(target_hat, gate, "compose_refined_mask");
    require_same_shape(target_hat, coarse, "compose_refined_mask");
    Grid out(target_hat.height(), target_hat.width());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = clamp01(target_hat[i] + (1.0 - gate[i]) * coarse[i]);
    return ProbMap(std::move(out));
}

ProbMap gate_noise_pred(const ProbMap& latent, const ProbMap& noise_pred,
                        const UncertaintyMap& gate) {
    require_same_shape(latent, noise_pred, "gate_noise_pred");
    require_same_shape(latent, gate, "gate_noise_pred");
    Grid out(latent.height(), latent.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double capped = std::min(clamp01(std::abs(latent[i] - noise_pred[i])), gate[i]);
        // For a binary latent, |latent - capped| reconstructs to exactly `capped`.
        out[i] = std::abs(latent[i] - capped);
    }
    return ProbMap(std::move(out));
}

std::vector<int> select_ddim_subsequence(int train_steps, int infer_steps) {
    if (infer_steps < 1 || infer_steps > train_steps)
        throw std::invalid_argument("select_ddim_subsequence: need 1 <= infer_steps <= train_steps");
    std::vector<int> ladder;
    ladder.reserve(infer_steps);
    if (infer_steps == 1) {
        ladder.push_back(train_steps);
        return ladder;
    }
    int prev = train_steps + 1;
    for (int k = 0; k < infer_steps; ++k) {
        const double pos = train_steps - (train_steps - 1.0) * k / (infer_steps - 1.0);
        int step = static_cast<int>(std::nearbyint(pos));
        step = std::clamp(step, 1, train_steps);
        if (step >= prev) step = prev - 1; // keep strictly decreasing after rounding
        if (step < 1) throw std::logic_error("select_ddim_subsequence: ladder underflow");
        ladder.push_back(step);
        prev = step;
    }
    return ladder;
}

} // namespace residiff
