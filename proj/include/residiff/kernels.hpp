#pragma once

#include "residiff/grid.hpp"
#include "residiff/rng.hpp"
#include "residiff/schedule.hpp"

#include <utility>
#include <vector>

namespace residiff {

// Pure per-pixel kernels of the masked Bernoulli chain. All functions are
// stateless; randomness comes only from the caller's generator.

// Element-wise gate: keeps a map only where the uncertainty gate is open.
ProbMap mask_residual(const UncertaintyMap& gate, const ProbMap& map);

// Closed-form Bernoulli parameter of the forward chain at step t:
// p = alpha_bar(t) * target + (1 - alpha_bar(t)) * masked_coarse.
ProbMap forward_marginal_param(const NoiseSchedule& s, int t, const ProbMap& target,
                               const ProbMap& masked_coarse);

// Draws the customized forward noise and applies it with the generalized
// exclusive-or |target - noise|. Noise probability per pixel is
// (1 - alpha_bar(t)) * |masked_coarse - target|.
std::pair<BinaryMap, ProbMap> sample_forward(const NoiseSchedule& s, int t, const ProbMap& target,
                                             const ProbMap& masked_coarse, Rng& rng);

// Scalar form of the two-channel posterior; exposed for enumeration tests.
double posterior_param_scalar(double beta_t, double alpha_bar_prev, double latent,
                              double target, double masked_coarse);

// Posterior Bernoulli parameter of the previous latent given the current one,
// the clean target and the masked coarse mask. alpha_bar(0) == 1, so at t == 1
// the prior collapses onto the target.
ProbMap bernoulli_posterior(const NoiseSchedule& s, int t, const ProbMap& latent,
                            const ProbMap& target, const ProbMap& masked_coarse);

// One ancestral reverse step: reconstructs target_hat = |latent - noise_pred|,
// forms the posterior mean, and samples the previous latent from it.
// Returns (previous latent, target_hat).
std::pair<BinaryMap, ProbMap> ddpm_reverse_step(const NoiseSchedule& s, int t,
                                                const ProbMap& latent, const ProbMap& noise_pred,
                                                const ProbMap& masked_coarse, Rng& rng);

enum class SigmaRule {
    Ratio,   // sigma = (1 - alpha_bar(t_lo)) / (1 - alpha_bar(t_hi)), always <= 1
    Literal, // sigma = (1 - alpha_bar(t_hi)) / (1 - alpha_bar(t_lo)), clamped to [0,1]
};

double ddim_sigma(const NoiseSchedule& s, int t_hi, int t_lo, SigmaRule rule);

// Deterministic-leaning reverse jump between two (possibly distant) steps.
// At t_lo == 0 the output is the hard-thresholded reconstruction, not a sample.
BinaryMap ddim_reverse_step(const NoiseSchedule& s, int t_hi, int t_lo, const ProbMap& latent,
                            const ProbMap& noise_pred, const ProbMap& masked_coarse, Rng& rng,
                            SigmaRule rule = SigmaRule::Ratio);

// Final composition: refined = clamp(target_hat + (1 - gate) * coarse, 0, 1).
ProbMap compose_refined_mask(const ProbMap& target_hat, const UncertaintyMap& gate,
                             const ProbMap& coarse);

// Caps the reconstruction implied by (latent, noise_pred) to the reachable
// range [0, gate] and returns the matching noise estimate. With a closed gate
// this forces the reconstruction to zero, so sampling cannot touch the pixel.
ProbMap gate_noise_pred(const ProbMap& latent, const ProbMap& noise_pred,
                        const UncertaintyMap& gate);

// Evaluation-time timestep ladder: count evenly spaced steps from the top of
// the training range down to 1 (the terminal jump to 0 is implicit).
std::vector<int> select_ddim_subsequence(int train_steps, int infer_steps);

} // namespace residiff
