#include "residiff/pipeline/train.hpp"

#include "residiff/kernels.hpp"
#include "residiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace residiff::pipeline {

namespace {

std::vector<std::vector<float>> snapshot_params(const nn::ParamMap<float>& pm) {
    std::vector<std::vector<float>> out;
    for (const auto& [n, v] : pm.items) out.push_back(v.value().data);
    return out;
}

void restore_params(nn::ParamMap<float>& pm, const std::vector<std::vector<float>>& snap) {
    for (std::size_t i = 0; i < pm.items.size(); ++i) pm.items[i].second.value().data = snap[i];
}

} // namespace

losses::LossReport<float> denoiser_train_step(const models::Denoiser<float>& denoiser,
                                              const NoiseSchedule& schedule,
                                              const SampleBatch& batch, Rng& rng,
                                              nn::AdamW<float>* opt, double lr_scale) {
    const long n = batch.image.shape()[0];
    const long h = batch.image.shape()[2], w = batch.image.shape()[3];
    const long hw = h * w;

    // per-sample timestep and forward noise, via the sampling-path kernels
    std::vector<int> steps(n);
    nn::Tensor<float> latent_t(nn::Shape{n, 1, h, w});
    nn::Tensor<float> masked_coarse_t(nn::Shape{n, 1, h, w});
    nn::Tensor<float> q_post_t(nn::Shape{n, 1, h, w});
    nn::Tensor<float> alpha_t(nn::Shape{n, 1, 1, 1});
    nn::Tensor<float> ab_prev_t(nn::Shape{n, 1, 1, 1});

    const float* gt_p = batch.gt.value().ptr();
    const float* coarse_p = batch.coarse.value().ptr();
    const float* ugt_p = batch.u_gt.value().ptr();
    for (long b = 0; b < n; ++b) {
        const int t = rng.uniform_int(1, schedule.steps());
        steps[b] = t;
        Grid target_g(h, w), mc_g(h, w);
        for (long i = 0; i < hw; ++i) {
            const double u = ugt_p[b * hw + i];
            target_g[i] = u * gt_p[b * hw + i];
            mc_g[i] = u * coarse_p[b * hw + i];
        }
        ProbMap target(std::move(target_g));
        ProbMap mc(std::move(mc_g));
        auto [noise, latent] = sample_forward(schedule, t, target, mc, rng);
        ProbMap q_post = bernoulli_posterior(schedule, t, latent, target, mc);
        for (long i = 0; i < hw; ++i) {
            latent_t.data[b * hw + i] = static_cast<float>(latent[i]);
            masked_coarse_t.data[b * hw + i] = static_cast<float>(mc[i]);
            q_post_t.data[b * hw + i] = static_cast<float>(q_post[i]);
        }
        alpha_t.data[b] = static_cast<float>(schedule.alpha(t));
        ab_prev_t.data[b] = static_cast<float>(schedule.alpha_bar(t - 1));
    }

    auto latent_v = nn::constant(std::move(latent_t));
    auto mc_v = nn::constant(std::move(masked_coarse_t));
    auto q_post_v = nn::constant(std::move(q_post_t));
    auto alpha_v = nn::constant(std::move(alpha_t));
    auto ab_prev_v = nn::constant(std::move(ab_prev_t));

    const auto& cond = denoiser.cfg.condition_on_raw_coarse ? batch.coarse : mc_v;
    auto eps_hat = denoiser.predict_noise(batch.image, cond, latent_v, steps, batch.prior_feats);
    auto target_hat = nn::abs(nn::sub(latent_v, eps_hat));
    auto p_post = posterior_param_graph(alpha_v, ab_prev_v, latent_v, target_hat, mc_v);
    auto refined = compose_refined_graph(target_hat, batch.u_gt, batch.coarse);
    auto rep = losses::diffusion_loss(q_post_v, p_post, refined, batch.gt);

    if (!std::isfinite(rep.value()))
        throw NumericalError("diffusion loss is not finite");

    if (opt != nullptr) {
        opt->zero_grad();
        nn::backward(rep.total);
        opt->step(lr_scale);
    }
    return rep;
}

Trainer::Trainer(data::Dataset dataset, TrainConfig cfg, RunPaths paths)
    : data_(std::move(dataset)), cfg_(std::move(cfg)), paths_(std::move(paths)),
      schedule_(NoiseSchedule::cosine(cfg_.train_steps)) {
    cfg_.denoiser.train_steps = cfg_.train_steps;
    const int val = std::min<int>(cfg_.val_count, static_cast<int>(data_.train.size()) / 5);
    train_.assign(data_.train.begin(), data_.train.end() - val);
    val_.assign(data_.train.end() - val, data_.train.end());

    Rng huq_rng(derive_seed(cfg_.seed, 0x4151));
    huq_ = models::UncertaintyNet<float>(cfg_.uncertainty, huq_rng);
    Rng den_rng(derive_seed(cfg_.seed, 0x4152));
    cfg_.denoiser.prior_channels = {models::kPriorChannels[0], models::kPriorChannels[1],
                                    models::kPriorChannels[2], models::kPriorChannels[3]};
    denoiser_ = models::Denoiser<float>(cfg_.denoiser, den_rng);

    std::filesystem::create_directories(paths_.root);
    std::filesystem::create_directories(paths_.checkpoints());
    cfg_.save(paths_.config());
    const bool fresh = !std::filesystem::exists(paths_.logs());
    logs_.open(paths_.logs(), std::ios::app);
    if (fresh)
        logs_ << "stage,epoch,step,lr_scale,total,kl,wiou,wbce,huq_bce,dice,bnn_bce,bnn_kl,val_mae\n";
}

void Trainer::prepare_prior(bool load_existing) {
    if (load_existing && std::filesystem::exists(paths_.prior_ckpt())) {
        data::Dataset& ds = data_;
        auto ck = load_checkpoint(paths_.prior_ckpt());
        const std::string kind = ck.meta.value("kind", "");
        if (kind == "corrupted_oracle") {
            data::CorruptionSpec spec =
                data::DatasetManifest::from_json(ck.meta["corruption"].dump()).corruption;
            std::vector<const data::DatasetSample*> all;
            for (const auto& s : ds.train) all.push_back(&s);
            for (const auto& s : ds.test) all.push_back(&s);
            auto prior = std::make_unique<models::CorruptedOracleSegmenter>(
                all, spec, ck.meta.value("seed", std::uint64_t(0)));
            nn::ParamMap<float> pm;
            prior->encoder().collect(pm, "encoder");
            unpack_params(ck, pm);
            prior_ = std::move(prior);
        } else if (kind == "toy_cnn") {
            auto prior = std::make_unique<models::ToyCnnSegmenter>(ck.meta.value("seed", std::uint64_t(0)));
            nn::ParamMap<float> pm;
            prior->collect(pm, "toy");
            unpack_params(ck, pm);
            prior_ = std::move(prior);
        } else {
            throw data::DataError("unknown prior kind in checkpoint: " + kind);
        }
        build_prior_cache();
        return;
    }

    if (cfg_.prior == "corrupted_oracle") {
        std::vector<const data::DatasetSample*> all;
        for (const auto& s : data_.train) all.push_back(&s);
        for (const auto& s : data_.test) all.push_back(&s);
        prior_ = std::make_unique<models::CorruptedOracleSegmenter>(all, cfg_.corruption,
                                                                    cfg_.prior_seed);
    } else if (cfg_.prior == "toy_cnn") {
        prior_ = models::train_toy_segmenter(train_, cfg_.toy_prior_epochs, cfg_.prior_seed);
    } else {
        throw data::DataError("unknown prior type: " + cfg_.prior);
    }
    save_prior();
    build_prior_cache();
}

void Trainer::build_prior_cache() {
    auto cache_for = [&](const std::vector<data::DatasetSample>& split) {
        std::vector<PriorOutputs> cache(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) {
            cache[i].coarse = prior_->coarse_mask(split[i].image);
            cache[i].u_gt = models::uncertainty_gt(cache[i].coarse, split[i].mask);
            cache[i].feats = prior_->features(split[i].image);
        }
        return cache;
    };
    cache_train_ = cache_for(train_);
    cache_val_ = cache_for(val_);
}

SampleBatch Trainer::make_batch(const std::vector<int>& idx) const {
    const long n = static_cast<long>(idx.size());
    const long h = train_[0].image.height, w = train_[0].image.width;
    nn::Tensor<float> img(nn::Shape{n, 3, h, w});
    nn::Tensor<float> gt(nn::Shape{n, 1, h, w});
    nn::Tensor<float> coarse(nn::Shape{n, 1, h, w});
    nn::Tensor<float> ugt(nn::Shape{n, 1, h, w});
    std::array<nn::Tensor<float>, 4> feats;
    for (int l = 0; l < 4; ++l) {
        const auto& shape0 = cache_train_[idx[0]].feats.levels[l].shape;
        feats[l] = nn::Tensor<float>(nn::Shape{n, shape0[1], shape0[2], shape0[3]});
    }
    const long hw = h * w;
    for (long b = 0; b < n; ++b) {
        const auto& s = train_[idx[b]];
        const auto& c = cache_train_[idx[b]];
        std::copy(s.image.rgb.begin(), s.image.rgb.end(), img.data.begin() + b * 3 * hw);
        for (long i = 0; i < hw; ++i) {
            gt.data[b * hw + i] = static_cast<float>(s.mask[i]);
            coarse.data[b * hw + i] = static_cast<float>(c.coarse[i]);
            ugt.data[b * hw + i] = static_cast<float>(c.u_gt[i]);
        }
        for (int l = 0; l < 4; ++l) {
            const auto& src = c.feats.levels[l];
            std::copy(src.data.begin(), src.data.end(),
                      feats[l].data.begin() + b * src.size());
        }
    }
    SampleBatch batch;
    batch.image = nn::constant(std::move(img));
    batch.gt = nn::constant(std::move(gt));
    batch.coarse = nn::constant(std::move(coarse));
    batch.u_gt = nn::constant(std::move(ugt));
    for (int l = 0; l < 4; ++l) batch.prior_feats[l] = nn::constant(std::move(feats[l]));
    for (int i : idx) batch.indices.push_back(i);
    return batch;
}

double Trainer::validation_refined_mae(int infer_steps) {
    InferenceConfig icfg;
    icfg.infer_steps = infer_steps;
    icfg.sampler = Sampler::Ddim;
    double total = 0.0;
    for (std::size_t i = 0; i < val_.size(); ++i) {
        Rng rng(derive_seed(cfg_.seed, 0x7A100 + i));
        auto rec = refine(val_[i].image, *prior_, huq_, denoiser_, schedule_, icfg, rng, false,
                          &cache_val_[i].coarse);
        total += metrics::mae(rec.refined, val_[i].mask);
    }
    return total / static_cast<double>(val_.size());
}

void Trainer::log_row(const std::string& stage, int epoch, long step, double lr_scale,
                      const losses::LossReport<float>* rep, double val_metric) {
    auto comp = [&](const char* key) {
        if (rep == nullptr) return std::string();
        const auto it = rep->components.find(key);
        return it == rep->components.end() ? std::string() : std::to_string(it->second);
    };
    logs_ << stage << ',' << epoch << ',' << step << ',' << lr_scale << ','
          << (rep != nullptr ? std::to_string(rep->value()) : std::string()) << ',' << comp("kl")
          << ',' << comp("wiou") << ',' << comp("wbce") << ',' << comp("huq_bce") << ','
          << comp("dice") << ',' << comp("bnn_bce") << ',' << comp("bnn_kl") << ','
          << (std::isnan(val_metric) ? std::string() : std::to_string(val_metric)) << '\n';
    logs_.flush();
}

void Trainer::dump_diagnostics(const std::string& stage, long step,
                               const losses::LossReport<float>& rep) const {
    std::ofstream out(paths_.diagnostics(), std::ios::app);
    out << "non-finite loss in " << stage << " at step " << step << "\n";
    for (const auto& [k, v] : rep.components) out << "  " << k << " = " << v << "\n";
}

// ---------------------------------------------------------------------------

namespace {

// learning-rate group resolution by parameter name
double group_lr(const TrainConfig& cfg, const std::string& name) {
    if (name.rfind("uncertainty.backbone", 0) == 0) return cfg.lr_backbone;
    if (name.rfind("uncertainty.bnn", 0) == 0) return cfg.lr_bnn;
    if (name.rfind("uncertainty", 0) == 0) return cfg.lr_uncertainty;
    return cfg.lr_denoiser;
}

} // namespace

void Trainer::stage1() {
    nn::ParamMap<float> pm;
    huq_.collect(pm);
    nn::AdamW<float> opt;
    opt.weight_decay = cfg_.weight_decay;
    for (auto& [name, v] : pm.items) opt.add(v, group_lr(cfg_, name));

    const std::uint64_t den_sum_before = denoiser_checksum();
    const std::uint64_t prior_sum_before = prior_checksum();

    Rng rng(derive_seed(cfg_.seed, 1));
    std::vector<int> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    const long steps_per_epoch = static_cast<long>(train_.size()) / cfg_.batch_size;
    const long total_steps = steps_per_epoch * cfg_.stage1_epochs;
    long step = 0;
    for (int epoch = 0; epoch < cfg_.stage1_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (long s = 0; s < steps_per_epoch; ++s) {
            std::vector<int> idx(order.begin() + s * cfg_.batch_size,
                                 order.begin() + (s + 1) * cfg_.batch_size);
            auto batch = make_batch(idx);
            Rng draw = rng.child(0x51000 + step);
            nn::Ctx ctx{true, &draw};
            auto bundle = huq_.forward(batch.image, batch.coarse, draw, ctx);
            auto rep = losses::uncertainty_loss(bundle.fused, batch.u_gt, bundle.c_prob, batch.gt,
                                                bundle.mu, bundle.sigma);
            if (!std::isfinite(rep.value())) {
                dump_diagnostics("stage1", step, rep);
                throw NumericalError("stage1 loss is not finite");
            }
            const double scale = nn::poly_decay(step, total_steps, cfg_.poly_power);
            opt.zero_grad();
            nn::backward(rep.total);
            opt.step(scale);
            if (step % 10 == 0) log_row("stage1", epoch, step, scale, &rep, NAN);
            ++step;
        }
    }
    save_uncertainty();
    if (denoiser_checksum() != den_sum_before)
        throw std::logic_error("stage1 touched denoiser parameters");
    if (prior_checksum() != prior_sum_before)
        throw std::logic_error("stage1 touched prior parameters");
}

void Trainer::stage2() {
    nn::ParamMap<float> pm;
    denoiser_.collect(pm);
    nn::AdamW<float> opt;
    opt.weight_decay = cfg_.weight_decay;
    for (auto& [name, v] : pm.items) opt.add(v, cfg_.lr_denoiser);

    const std::uint64_t huq_sum_before = uncertainty_checksum();
    const std::uint64_t prior_sum_before = prior_checksum();

    Rng rng(derive_seed(cfg_.seed, 2));
    std::vector<int> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    const long steps_per_epoch = static_cast<long>(train_.size()) / cfg_.batch_size;
    const long total_steps = steps_per_epoch * cfg_.stage2_max_epochs;

    double best_val = std::numeric_limits<double>::infinity();
    auto best = snapshot_params(pm);
    int stall = 0;
    long step = 0;
    for (int epoch = 0; epoch < cfg_.stage2_max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (long s = 0; s < steps_per_epoch; ++s) {
            std::vector<int> idx(order.begin() + s * cfg_.batch_size,
                                 order.begin() + (s + 1) * cfg_.batch_size);
            auto batch = make_batch(idx);
            Rng step_rng = rng.child(0x52000 + step);
            const double scale = nn::poly_decay(step, total_steps, cfg_.poly_power);
            losses::LossReport<float> rep;
            try {
                rep = denoiser_train_step(denoiser_, schedule_, batch, step_rng, &opt, scale);
            } catch (const NumericalError&) {
                dump_diagnostics("stage2", step, rep);
                throw;
            }
            if (step % 10 == 0) log_row("stage2", epoch, step, scale, &rep, NAN);
            ++step;
        }
        const double val = validation_refined_mae(cfg_.val_infer_steps);
        log_row("stage2", epoch, step, nn::poly_decay(step, total_steps, cfg_.poly_power), nullptr,
                val);
        if (val < best_val - 1e-6) {
            best_val = val;
            best = snapshot_params(pm);
            stall = 0;
        } else if (++stall >= cfg_.stage2_patience) {
            break;
        }
    }
    restore_params(pm, best);
    save_denoiser();
    if (uncertainty_checksum() != huq_sum_before)
        throw std::logic_error("stage2 touched uncertainty parameters");
    if (prior_checksum() != prior_sum_before)
        throw std::logic_error("stage2 touched prior parameters");
}

void Trainer::stage3() {
    nn::ParamMap<float> pm;
    huq_.collect(pm);
    nn::AdamW<float> opt;
    opt.weight_decay = cfg_.weight_decay;
    for (auto& [name, v] : pm.items) opt.add(v, group_lr(cfg_, name));

    const std::uint64_t den_sum_before = denoiser_checksum();

    std::vector<std::pair<std::string, nn::Tensor<float>*>> bufs;
    huq_.collect_buffers(bufs);

    Rng rng(derive_seed(cfg_.seed, 3));
    std::vector<int> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    const long steps_per_epoch = static_cast<long>(train_.size()) / cfg_.batch_size;
    const long total_steps = steps_per_epoch * cfg_.stage3_max_epochs;

    double best_val = validation_refined_mae(cfg_.val_infer_steps);
    auto best = snapshot_params(pm);
    std::vector<nn::Tensor<float>> best_bufs;
    for (auto& [n, t] : bufs) best_bufs.push_back(*t);
    int stall = 0;
    long step = 0;
    for (int epoch = 0; epoch < cfg_.stage3_max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (long s = 0; s < steps_per_epoch; ++s) {
            std::vector<int> idx(order.begin() + s * cfg_.batch_size,
                                 order.begin() + (s + 1) * cfg_.batch_size);
            auto batch = make_batch(idx);
            Rng draw = rng.child(0x53000 + step);
            nn::Ctx ctx{true, &draw};
            auto bundle = huq_.forward(batch.image, batch.coarse, draw, ctx);
            auto rep = losses::uncertainty_loss(bundle.fused, batch.u_gt, bundle.c_prob, batch.gt,
                                                bundle.mu, bundle.sigma);
            if (!std::isfinite(rep.value())) {
                dump_diagnostics("stage3", step, rep);
                throw NumericalError("stage3 loss is not finite");
            }
            const double scale = nn::poly_decay(step, total_steps, cfg_.poly_power);
            opt.zero_grad();
            nn::backward(rep.total);
            opt.step(scale);
            if (step % 10 == 0) log_row("stage3", epoch, step, scale, &rep, NAN);
            ++step;
        }
        const double val = validation_refined_mae(cfg_.val_infer_steps);
        log_row("stage3", epoch, step, nn::poly_decay(step, total_steps, cfg_.poly_power), nullptr,
                val);
        if (val < best_val - 1e-6) {
            best_val = val;
            best = snapshot_params(pm);
            best_bufs.clear();
            for (auto& [n, t] : bufs) best_bufs.push_back(*t);
            stall = 0;
        } else if (++stall >= cfg_.stage3_patience) {
            break;
        }
    }
    restore_params(pm, best);
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = best_bufs[i];
    save_uncertainty();
    if (denoiser_checksum() != den_sum_before)
        throw std::logic_error("stage3 touched denoiser parameters");
}

std::uint64_t Trainer::uncertainty_checksum() const {
    nn::ParamMap<float> pm;
    huq_.collect(pm);
    return models::params_checksum(pm);
}

std::uint64_t Trainer::denoiser_checksum() const {
    nn::ParamMap<float> pm;
    denoiser_.collect(pm);
    return models::params_checksum(pm);
}

void Trainer::save_prior() const {
    Checkpoint ck;
    ck.meta["format"] = "prior";
    ck.meta["kind"] = prior_->kind();
    ck.meta["seed"] = cfg_.prior_seed;
    if (auto* oracle = dynamic_cast<models::CorruptedOracleSegmenter*>(prior_.get())) {
        nlohmann::json corr;
        data::DatasetManifest m;
        m.corruption = oracle->spec();
        corr = nlohmann::json::parse(m.to_json())["corruption"];
        ck.meta["corruption"] = corr;
        nn::ParamMap<float> pm;
        oracle->encoder().collect(pm, "encoder");
        pack_params(ck, pm);
    } else if (auto* toy = dynamic_cast<models::ToyCnnSegmenter*>(prior_.get())) {
        nn::ParamMap<float> pm;
        toy->collect(pm, "toy");
        pack_params(ck, pm);
    }
    save_checkpoint(paths_.prior_ckpt(), ck);
}

void Trainer::save_uncertainty() const {
    Checkpoint ck;
    ck.meta["format"] = "uncertainty";
    ck.meta["config"] = nlohmann::json{{"mc_samples", cfg_.uncertainty.mc_samples},
                                       {"window", cfg_.uncertainty.window},
                                       {"head_dim", cfg_.uncertainty.head_dim},
                                       {"attn_channels", cfg_.uncertainty.attn_channels},
                                       {"dropout", cfg_.uncertainty.dropout}};
    nn::ParamMap<float> pm;
    huq_.collect(pm);
    pack_params(ck, pm);
    std::vector<std::pair<std::string, nn::Tensor<float>*>> bufs;
    const_cast<models::UncertaintyNet<float>&>(huq_).collect_buffers(bufs);
    pack_buffers(ck, bufs);
    save_checkpoint(paths_.uncertainty_ckpt(), ck);
}

void Trainer::save_denoiser() const {
    Checkpoint ck;
    ck.meta["format"] = "denoiser";
    ck.meta["config"] = nlohmann::json{{"base_channels", cfg_.denoiser.base_channels},
                                       {"adapted_channels", cfg_.denoiser.adapted_channels},
                                       {"time_embedding_dim", cfg_.denoiser.time_embedding_dim},
                                       {"train_steps", cfg_.denoiser.train_steps}};
    ck.meta["schedule"] = {{"kind", "cosine"}, {"steps", cfg_.train_steps}};
    nn::ParamMap<float> pm;
    denoiser_.collect(pm);
    pack_params(ck, pm);
    save_checkpoint(paths_.denoiser_ckpt(), ck);
}

void Trainer::load_models() {
    if (std::filesystem::exists(paths_.uncertainty_ckpt())) {
        auto ck = load_checkpoint(paths_.uncertainty_ckpt());
        nn::ParamMap<float> pm;
        huq_.collect(pm);
        unpack_params(ck, pm);
        std::vector<std::pair<std::string, nn::Tensor<float>*>> bufs;
        huq_.collect_buffers(bufs);
        unpack_buffers(ck, bufs);
    }
    if (std::filesystem::exists(paths_.denoiser_ckpt())) {
        auto ck = load_checkpoint(paths_.denoiser_ckpt());
        nn::ParamMap<float> pm;
        denoiser_.collect(pm);
        unpack_params(ck, pm);
    }
}

LoadedRun load_run(const RunPaths& paths, const data::Dataset& dataset) {
    LoadedRun run{TrainConfig::load(paths.config()), NoiseSchedule::cosine(1), nullptr, nullptr,
                  nullptr};
    run.schedule = NoiseSchedule::cosine(run.cfg.train_steps);
    run.cfg.denoiser.train_steps = run.cfg.train_steps;

    auto prior_ck = load_checkpoint(paths.prior_ckpt());
    const std::string kind = prior_ck.meta.value("kind", "");
    if (kind == "corrupted_oracle") {
        data::CorruptionSpec spec;
        if (prior_ck.meta.contains("corruption")) {
            nlohmann::json wrap{{"corruption", prior_ck.meta["corruption"]}};
            spec = data::DatasetManifest::from_json(wrap.dump()).corruption;
        }
        std::vector<const data::DatasetSample*> all;
        for (const auto& s : dataset.train) all.push_back(&s);
        for (const auto& s : dataset.test) all.push_back(&s);
        auto prior = std::make_unique<models::CorruptedOracleSegmenter>(
            all, spec, prior_ck.meta.value("seed", std::uint64_t(0)));
        nn::ParamMap<float> pm;
        prior->encoder().collect(pm, "encoder");
        unpack_params(prior_ck, pm);
        run.prior = std::move(prior);
    } else if (kind == "toy_cnn") {
        auto prior = std::make_unique<models::ToyCnnSegmenter>(prior_ck.meta.value("seed", std::uint64_t(0)));
        nn::ParamMap<float> pm;
        prior->collect(pm, "toy");
        unpack_params(prior_ck, pm);
        run.prior = std::move(prior);
    } else {
        throw data::DataError("unknown prior kind: " + kind);
    }

    Rng huq_rng(derive_seed(run.cfg.seed, 0x4151));
    run.uncertainty = std::make_unique<models::UncertaintyNet<float>>(run.cfg.uncertainty, huq_rng);
    {
        auto ck = load_checkpoint(paths.uncertainty_ckpt());
        nn::ParamMap<float> pm;
        run.uncertainty->collect(pm);
        unpack_params(ck, pm);
        std::vector<std::pair<std::string, nn::Tensor<float>*>> bufs;
        run.uncertainty->collect_buffers(bufs);
        unpack_buffers(ck, bufs);
    }
    Rng den_rng(derive_seed(run.cfg.seed, 0x4152));
    run.cfg.denoiser.prior_channels = {models::kPriorChannels[0], models::kPriorChannels[1],
                                       models::kPriorChannels[2], models::kPriorChannels[3]};
    run.denoiser = std::make_unique<models::Denoiser<float>>(run.cfg.denoiser, den_rng);
    {
        auto ck = load_checkpoint(paths.denoiser_ckpt());
        nn::ParamMap<float> pm;
        run.denoiser->collect(pm);
        unpack_params(ck, pm);
    }
    return run;
}

} // namespace residiff::pipeline
