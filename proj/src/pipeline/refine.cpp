#include "residiff/pipeline/refine.hpp"

#include "residiff/kernels.hpp"

#include <chrono>
#include <cmath>

namespace residiff::pipeline {

namespace {

ProbMap tensor_to_map(const nn::Tensor<float>& t, int h, int w) {
    Grid g(h, w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = t.data[i];
    return ProbMap(std::move(g));
}

nn::Tensor<float> map_to_tensor(const Grid& m) {
    nn::Tensor<float> t(nn::Shape{1, 1, m.height(), m.width()});
    for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m[i]);
    return t;
}

} // namespace

UncertaintyMap estimate_gate(models::UncertaintyNet<float>& uncertainty, const data::Image& image,
                             const ProbMap& coarse, Rng& rng) {
    auto x = nn::Var<float>(models::image_to_tensor(image), false);
    auto mc = nn::Var<float>(map_to_tensor(coarse), false);
    nn::Ctx ctx; // eval mode
    auto bundle = uncertainty.forward(x, mc, rng, ctx);
    Grid g(image.height, image.width);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = bundle.fused.value().data[i];
    return UncertaintyMap(std::move(g));
}

RefinementRecord refine(const data::Image& image, const models::PriorSegmenter& prior,
                        models::UncertaintyNet<float>& uncertainty,
                        const models::Denoiser<float>& denoiser, const NoiseSchedule& schedule,
                        const InferenceConfig& icfg, Rng& rng, bool trace,
                        const ProbMap* coarse_override) {
    const auto t0 = std::chrono::steady_clock::now();
    const int h = image.height, w = image.width;

    RefinementRecord rec;
    rec.coarse = coarse_override != nullptr ? *coarse_override : prior.coarse_mask(image);
    const auto pyramid = prior.features(image);

    if (icfg.force_zero_uncertainty) {
        rec.gate = UncertaintyMap(h, w, 0.0);
    } else {
        Rng gate_rng = rng.child(0xD11CE);
        rec.gate = estimate_gate(uncertainty, image, rec.coarse, gate_rng);
    }

    const ProbMap masked_coarse = mask_residual(rec.gate, rec.coarse);

    // initial latent ~ Bernoulli(masked coarse)
    Grid latent_g(h, w);
    for (std::size_t i = 0; i < latent_g.size(); ++i)
        latent_g[i] = rng.bernoulli(masked_coarse[i]) ? 1.0 : 0.0;
    ProbMap latent(std::move(latent_g));

    auto image_t = nn::Var<float>(models::image_to_tensor(image), false);
    const ProbMap& cond = denoiser.cfg.condition_on_raw_coarse ? rec.coarse : masked_coarse;
    auto cond_t = nn::Var<float>(map_to_tensor(cond), false);
    std::array<nn::Var<float>, 4> prior_vars;
    for (int i = 0; i < 4; ++i) prior_vars[i] = nn::Var<float>(pyramid.levels[i], false);

    auto predict = [&](const ProbMap& y, int t) {
        auto y_t = nn::Var<float>(map_to_tensor(y), false);
        auto eps = denoiser.predict_noise(image_t, cond_t, y_t, {t}, prior_vars);
        return tensor_to_map(eps.value(), h, w);
    };

    ProbMap target_hat(h, w, 0.0);
    auto run_step = [&](const ProbMap& y, int t_hi, int t_lo, bool ddpm) {
        const ProbMap eps_raw = predict(y, t_hi);
        const ProbMap eps = gate_noise_pred(y, eps_raw, rec.gate);
        Grid th(h, w);
        for (std::size_t i = 0; i < th.size(); ++i) th[i] = std::abs(y[i] - eps[i]);
        target_hat = ProbMap(std::move(th));
        if (ddpm) {
            auto [prev, y0] = ddpm_reverse_step(schedule, t_hi, y, eps, masked_coarse, rng);
            return prev;
        }
        return ddim_reverse_step(schedule, t_hi, t_lo, y, eps, masked_coarse, rng, icfg.sigma_rule);
    };

    if (icfg.sampler == Sampler::Ddpm) {
        for (int t = schedule.steps(); t >= 1; --t) {
            BinaryMap prev = run_step(latent, t, t - 1, true);
            if (trace && (t % std::max(1, schedule.steps() / 10) == 0 || t == 1))
                rec.latents.emplace_back(t - 1, prev);
            latent = prev.as_prob();
        }
    } else {
        auto ladder = select_ddim_subsequence(schedule.steps(), icfg.infer_steps);
        ladder.push_back(0); // terminal jump
        for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
            BinaryMap prev = run_step(latent, ladder[k], ladder[k + 1], false);
            if (trace) rec.latents.emplace_back(ladder[k + 1], prev);
            latent = prev.as_prob();
        }
    }

    // terminal rule: the composed mask uses the thresholded reconstruction
    rec.target_hat = BinaryMap(target_hat, icfg.threshold).as_prob();
    rec.refined = compose_refined_mask(rec.target_hat, rec.gate, rec.coarse);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

} // namespace residiff::pipeline
