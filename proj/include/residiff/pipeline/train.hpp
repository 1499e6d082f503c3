#pragma once

#include "residiff/losses.hpp"
#include "residiff/nn/optim.hpp"
#include "residiff/pipeline/checkpoint.hpp"
#include "residiff/pipeline/config.hpp"
#include "residiff/pipeline/refine.hpp"

#include <array>
#include <fstream>
#include <memory>
#include <vector>

namespace residiff::pipeline {

// Differentiable two-channel posterior parameter; the scalar schedule terms
// arrive as (n,1,1,1) constants. Mirrors the sampling-path kernel, which the
// unit tests cross-check against it.
template <class S>
nn::Var<S> posterior_param_graph(const nn::Var<S>& alpha, const nn::Var<S>& alpha_bar_prev,
                                 const nn::Var<S>& latent, const nn::Var<S>& target,
                                 const nn::Var<S>& masked_coarse) {
    using nn::add;
    using nn::add_scalar;
    using nn::mul;
    using nn::neg;
    using nn::sub;
    auto one_minus = [](const nn::Var<S>& v) { return add_scalar(neg(v), S(1)); };
    auto cross = nn::abs(sub(one_minus(latent), masked_coarse)); // |1 - y - mc|
    auto like1 = add(mul(alpha, latent), mul(one_minus(alpha), cross));
    auto like0 = add(mul(alpha, one_minus(latent)), mul(one_minus(alpha), cross));
    auto prior1 = add(mul(alpha_bar_prev, target), mul(one_minus(alpha_bar_prev), masked_coarse));
    auto prior0 =
        add(mul(alpha_bar_prev, one_minus(target)), mul(one_minus(alpha_bar_prev), one_minus(masked_coarse)));
    auto w1 = mul(like1, prior1);
    auto w0 = mul(like0, prior0);
    return nn::div(w1, add_scalar(add(w0, w1), S(1e-12)));
}

template <class S>
nn::Var<S> compose_refined_graph(const nn::Var<S>& target_hat, const nn::Var<S>& gate,
                                 const nn::Var<S>& coarse) {
    auto keep = nn::mul(nn::add_scalar(nn::neg(gate), S(1)), coarse);
    return nn::clamp(nn::add(target_hat, keep), S(0), S(1));
}

// Frozen prior outputs for one sample.
struct PriorOutputs {
    ProbMap coarse;
    UncertaintyMap u_gt;
    models::FeaturePyramid feats;
};

struct SampleBatch {
    nn::Var<float> image;  // (n,3,h,w)
    nn::Var<float> gt;     // (n,1,h,w) hard mask
    nn::Var<float> coarse; // (n,1,h,w)
    nn::Var<float> u_gt;   // (n,1,h,w)
    std::array<nn::Var<float>, 4> prior_feats;
    std::vector<int> indices;
};

// One gradient step of the diffusion objective on an assembled batch.
// Samples a timestep and the forward noise per sample, runs the noise
// predictor, forms both posterior parameter maps and the composed refined
// mask, and backpropagates KL + weighted IoU + weighted BCE.
losses::LossReport<float> denoiser_train_step(const models::Denoiser<float>& denoiser,
                                              const NoiseSchedule& schedule,
                                              const SampleBatch& batch, Rng& rng,
                                              nn::AdamW<float>* opt, double lr_scale);

class Trainer {
public:
    Trainer(data::Dataset dataset, TrainConfig cfg, RunPaths paths);

    void prepare_prior(bool load_existing);
    void load_models();

    void stage1();
    void stage2();
    void stage3();

    void save_prior() const;
    void save_uncertainty() const;
    void save_denoiser() const;

    models::PriorSegmenter& prior() { return *prior_; }
    models::UncertaintyNet<float>& uncertainty() { return huq_; }
    models::Denoiser<float>& denoiser() { return denoiser_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<data::DatasetSample>& train_split() const { return train_; }
    const std::vector<data::DatasetSample>& val_split() const { return val_; }
    const std::vector<data::DatasetSample>& test_split() const { return data_.test; }

    SampleBatch make_batch(const std::vector<int>& idx) const;
    double validation_refined_mae(int infer_steps);

    std::uint64_t prior_checksum() const { return prior_->checksum(); }
    std::uint64_t uncertainty_checksum() const;
    std::uint64_t denoiser_checksum() const;

private:
    void build_prior_cache();
    void log_row(const std::string& stage, int epoch, long step, double lr_scale,
                 const losses::LossReport<float>* rep, double val_metric);
    void dump_diagnostics(const std::string& stage, long step,
                          const losses::LossReport<float>& rep) const;

    data::Dataset data_;
    TrainConfig cfg_;
    RunPaths paths_;
    NoiseSchedule schedule_;
    std::vector<data::DatasetSample> train_, val_;
    std::unique_ptr<models::PriorSegmenter> prior_;
    std::vector<PriorOutputs> cache_train_, cache_val_;
    models::UncertaintyNet<float> huq_;
    models::Denoiser<float> denoiser_;
    std::ofstream logs_;
};

// Loads the three models of a finished run for inference-only use.
struct LoadedRun {
    TrainConfig cfg;
    NoiseSchedule schedule;
    std::unique_ptr<models::PriorSegmenter> prior;
    std::unique_ptr<models::UncertaintyNet<float>> uncertainty;
    std::unique_ptr<models::Denoiser<float>> denoiser;
};

LoadedRun load_run(const RunPaths& paths, const data::Dataset& dataset);

} // namespace residiff::pipeline
