#pragma once

#include "residiff/metrics.hpp"
#include "residiff/pipeline/refine.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace residiff::pipeline {

struct SampleEval {
    std::string id;
    metrics::MetricRow coarse;
    metrics::MetricRow refined;
    double seconds = 0.0;
};

struct CorpusEval {
    metrics::MetricRow coarse;
    metrics::MetricRow refined; // averaged over evaluation seeds
    double sec_per_img = 0.0;
    int seeds = 1;
    std::vector<SampleEval> rows; // per-sample results for the first seed
};

// Refines the whole split under `seeds` evaluation seeds and averages the
// refined metrics; the coarse row is seed-independent.
CorpusEval evaluate_corpus(const std::vector<data::DatasetSample>& split,
                           const models::PriorSegmenter& prior,
                           models::UncertaintyNet<float>& uncertainty,
                           const models::Denoiser<float>& denoiser, const NoiseSchedule& schedule,
                           const InferenceConfig& icfg, int seeds);

struct AblationRow {
    int infer_steps = 0;
    metrics::MetricRow refined;
    double sec_per_img = 0.0;
};

std::vector<AblationRow> ablate_steps(const std::vector<data::DatasetSample>& split,
                                      const models::PriorSegmenter& prior,
                                      models::UncertaintyNet<float>& uncertainty,
                                      const models::Denoiser<float>& denoiser,
                                      const NoiseSchedule& schedule, const InferenceConfig& base,
                                      const std::vector<int>& step_counts);

// eval.csv rows: (segmenter, refined?, T_infer, mae, f_beta_w, e_phi, s_alpha, n)
void write_eval_csv(const std::filesystem::path& path, const std::string& segmenter,
                    const CorpusEval& result, int infer_steps);
void write_per_sample_csv(const std::filesystem::path& path, const CorpusEval& result);
void write_ablation_csv(const std::filesystem::path& path, const std::string& segmenter,
                        const metrics::MetricRow& coarse, const std::vector<AblationRow>& rows);

} // namespace residiff::pipeline
