#pragma once

#include "residiff/models/denoiser.hpp"
#include "residiff/models/segmenter.hpp"
#include "residiff/models/uncertainty_net.hpp"
#include "residiff/pipeline/config.hpp"
#include "residiff/schedule.hpp"

#include <optional>
#include <vector>

namespace residiff::pipeline {

struct RefinementRecord {
    ProbMap coarse;
    UncertaintyMap gate; // estimated uncertainty used for masking
    ProbMap target_hat;  // final reconstruction of the residual target
    ProbMap refined;
    std::vector<std::pair<int, BinaryMap>> latents; // (step, latent) when tracing
    double seconds = 0.0;
};

// Full sampling pass for one image: coarse mask + uncertainty estimate, gated
// latent initialization, reverse chain, residual composition. The noise
// estimate is capped to the reachable range [0, gate] each step, which pins
// gated-out pixels to the coarse mask exactly.
RefinementRecord refine(const data::Image& image, const models::PriorSegmenter& prior,
                        models::UncertaintyNet<float>& uncertainty,
                        const models::Denoiser<float>& denoiser, const NoiseSchedule& schedule,
                        const InferenceConfig& icfg, Rng& rng, bool trace = false,
                        const ProbMap* coarse_override = nullptr);

// Uncertainty estimate for one image (eval mode, seeded draws).
UncertaintyMap estimate_gate(models::UncertaintyNet<float>& uncertainty, const data::Image& image,
                             const ProbMap& coarse, Rng& rng);

} // namespace residiff::pipeline
