#pragma once

#include "residiff/data/dataset.hpp"
#include "residiff/kernels.hpp"
#include "residiff/models/denoiser.hpp"
#include "residiff/models/uncertainty_net.hpp"

#include <filesystem>
#include <string>

namespace residiff::pipeline {

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Sampler { Ddpm, Ddim };

struct InferenceConfig {
    int infer_steps = 10;
    Sampler sampler = Sampler::Ddim;
    SigmaRule sigma_rule = SigmaRule::Ratio;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    bool force_zero_uncertainty = false; // diagnostic override: gate everything shut
};

struct TrainConfig {
    // per-group learning rates
    double lr_denoiser = 1e-4;
    double lr_backbone = 1e-7;
    double lr_bnn = 1e-6;
    double lr_uncertainty = 1e-3;
    double weight_decay = 1e-4;
    double poly_power = 0.9;

    int batch_size = 16;
    int stage1_epochs = 80;
    int stage2_max_epochs = 48;
    int stage2_patience = 10;
    int stage3_max_epochs = 32;
    int stage3_patience = 10;
    int train_steps = 1000;
    int val_count = 50;
    int val_infer_steps = 3;
    std::uint64_t seed = 0;

    std::string prior = "corrupted_oracle"; // or "toy_cnn"
    std::uint64_t prior_seed = 7;
    int toy_prior_epochs = 2;
    data::CorruptionSpec corruption;

    models::DenoiserConfig denoiser = models::DenoiserConfig::desk();
    models::UncertaintyConfig uncertainty;

    // CPU-budget preset used by the toy experiment.
    static TrainConfig desk();

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path prior_ckpt() const { return checkpoints() / "prior.ckpt"; }
    std::filesystem::path denoiser_ckpt() const { return checkpoints() / "denoiser.ckpt"; }
    std::filesystem::path uncertainty_ckpt() const { return checkpoints() / "uncertainty.ckpt"; }
    std::filesystem::path logs() const { return root / "logs.csv"; }
    std::filesystem::path eval() const { return root / "eval.csv"; }
    std::filesystem::path per_sample() const { return root / "per_sample.csv"; }
    std::filesystem::path ablation() const { return root / "ablation.csv"; }
    std::filesystem::path figures() const { return root / "figures"; }
    std::filesystem::path diagnostics() const { return root / "diagnostics.txt"; }
};

std::string sampler_name(Sampler s);
Sampler sampler_from_name(const std::string& name);
std::string sigma_rule_name(SigmaRule r);
SigmaRule sigma_rule_from_name(const std::string& name);

} // namespace residiff::pipeline
