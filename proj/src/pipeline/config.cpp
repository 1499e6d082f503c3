#include "residiff/pipeline/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace residiff::pipeline {

using nlohmann::json;

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.batch_size = 16;
    c.stage1_epochs = 10;
    c.stage2_max_epochs = 16;
    c.stage2_patience = 6;
    c.stage3_max_epochs = 6;
    c.stage3_patience = 3;
    c.denoiser = models::DenoiserConfig::desk();
    return c;
}

namespace {

json corruption_json(const data::CorruptionSpec& c) {
    return json{{"morph_radius_min", c.morph_radius_min}, {"morph_radius_max", c.morph_radius_max},
                {"blur_sigma_min", c.blur_sigma_min},     {"blur_sigma_max", c.blur_sigma_max},
                {"false_blob_min", c.false_blob_min},     {"false_blob_max", c.false_blob_max},
                {"drop_blob_min", c.drop_blob_min},       {"drop_blob_max", c.drop_blob_max},
                {"softness", c.softness}};
}

void corruption_from(const json& j, data::CorruptionSpec& c) {
    c.morph_radius_min = j.value("morph_radius_min", c.morph_radius_min);
    c.morph_radius_max = j.value("morph_radius_max", c.morph_radius_max);
    c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
    c.false_blob_min = j.value("false_blob_min", c.false_blob_min);
    c.false_blob_max = j.value("false_blob_max", c.false_blob_max);
    c.drop_blob_min = j.value("drop_blob_min", c.drop_blob_min);
    c.drop_blob_max = j.value("drop_blob_max", c.drop_blob_max);
    c.softness = j.value("softness", c.softness);
}

} // namespace

std::string TrainConfig::to_json() const {
    json j;
    j["lr"] = {{"denoiser", lr_denoiser},
               {"backbone", lr_backbone},
               {"bnn", lr_bnn},
               {"uncertainty", lr_uncertainty}};
    j["weight_decay"] = weight_decay;
    j["poly_power"] = poly_power;
    j["batch_size"] = batch_size;
    j["stage1_epochs"] = stage1_epochs;
    j["stage2_max_epochs"] = stage2_max_epochs;
    j["stage2_patience"] = stage2_patience;
    j["stage3_max_epochs"] = stage3_max_epochs;
    j["stage3_patience"] = stage3_patience;
    j["train_steps"] = train_steps;
    j["val_count"] = val_count;
    j["val_infer_steps"] = val_infer_steps;
    j["seed"] = seed;
    j["prior"] = prior;
    j["prior_seed"] = prior_seed;
    j["toy_prior_epochs"] = toy_prior_epochs;
    j["corruption"] = corruption_json(corruption);
    j["denoiser"] = {{"base_channels", denoiser.base_channels},
                     {"channel_multipliers", denoiser.channel_multipliers},
                     {"time_embedding_dim", denoiser.time_embedding_dim},
                     {"adapted_channels", denoiser.adapted_channels},
                     {"norm_groups", denoiser.norm_groups},
                     {"condition_on_raw_coarse", denoiser.condition_on_raw_coarse}};
    j["uncertainty"] = {{"mc_samples", uncertainty.mc_samples},
                        {"window", uncertainty.window},
                        {"head_dim", uncertainty.head_dim},
                        {"attn_channels", uncertainty.attn_channels},
                        {"dropout", uncertainty.dropout}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c = TrainConfig::desk();
    if (j.contains("lr")) {
        c.lr_denoiser = j["lr"].value("denoiser", c.lr_denoiser);
        c.lr_backbone = j["lr"].value("backbone", c.lr_backbone);
        c.lr_bnn = j["lr"].value("bnn", c.lr_bnn);
        c.lr_uncertainty = j["lr"].value("uncertainty", c.lr_uncertainty);
    }
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.poly_power = j.value("poly_power", c.poly_power);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.stage2_max_epochs = j.value("stage2_max_epochs", c.stage2_max_epochs);
    c.stage2_patience = j.value("stage2_patience", c.stage2_patience);
    c.stage3_max_epochs = j.value("stage3_max_epochs", c.stage3_max_epochs);
    c.stage3_patience = j.value("stage3_patience", c.stage3_patience);
    c.train_steps = j.value("train_steps", c.train_steps);
    c.val_count = j.value("val_count", c.val_count);
    c.val_infer_steps = j.value("val_infer_steps", c.val_infer_steps);
    c.seed = j.value("seed", c.seed);
    c.prior = j.value("prior", c.prior);
    c.prior_seed = j.value("prior_seed", c.prior_seed);
    c.toy_prior_epochs = j.value("toy_prior_epochs", c.toy_prior_epochs);
    if (j.contains("corruption")) corruption_from(j["corruption"], c.corruption);
    if (j.contains("denoiser")) {
        const auto& d = j["denoiser"];
        c.denoiser.base_channels = d.value("base_channels", c.denoiser.base_channels);
        if (d.contains("channel_multipliers"))
            c.denoiser.channel_multipliers = d["channel_multipliers"].get<std::array<int, 4>>();
        c.denoiser.time_embedding_dim = d.value("time_embedding_dim", c.denoiser.time_embedding_dim);
        c.denoiser.adapted_channels = d.value("adapted_channels", c.denoiser.adapted_channels);
        c.denoiser.norm_groups = d.value("norm_groups", c.denoiser.norm_groups);
        c.denoiser.condition_on_raw_coarse =
            d.value("condition_on_raw_coarse", c.denoiser.condition_on_raw_coarse);
    }
    if (j.contains("uncertainty")) {
        const auto& u = j["uncertainty"];
        c.uncertainty.mc_samples = u.value("mc_samples", c.uncertainty.mc_samples);
        c.uncertainty.window = u.value("window", c.uncertainty.window);
        c.uncertainty.head_dim = u.value("head_dim", c.uncertainty.head_dim);
        c.uncertainty.attn_channels = u.value("attn_channels", c.uncertainty.attn_channels);
        c.uncertainty.dropout = u.value("dropout", c.uncertainty.dropout);
    }
    c.denoiser.train_steps = c.train_steps;
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data::DataError("cannot read config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void TrainConfig::save(const std::filesystem::path& path) const {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    out << to_json() << "\n";
    if (!out) throw data::DataError("cannot write config " + path.string());
}

std::string sampler_name(Sampler s) { return s == Sampler::Ddpm ? "ddpm" : "ddim"; }

Sampler sampler_from_name(const std::string& name) {
    if (name == "ddpm") return Sampler::Ddpm;
    if (name == "ddim") return Sampler::Ddim;
    throw std::invalid_argument("unknown sampler: " + name);
}

std::string sigma_rule_name(SigmaRule r) { return r == SigmaRule::Ratio ? "ratio" : "literal"; }

SigmaRule sigma_rule_from_name(const std::string& name) {
    if (name == "ratio") return SigmaRule::Ratio;
    if (name == "literal") return SigmaRule::Literal;
    throw std::invalid_argument("unknown sigma rule: " + name);
}

} // namespace residiff::pipeline
