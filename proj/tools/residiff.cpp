#include "residiff/data/dataset.hpp"
#include "residiff/pipeline/evaluate.hpp"
#include "residiff/pipeline/train.hpp"
#include "residiff/report/figures.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace residiff;

namespace {

struct CommonInference {
    int steps = 10;
    std::string sampler = "ddim";
    std::string sigma_rule = "ratio";
    std::uint64_t seed = 0;
    bool zero_uncertainty = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--steps", steps, "evaluation steps (1..train steps)");
        cmd->add_option("--sampler", sampler, "ddpm|ddim")->check(CLI::IsMember({"ddpm", "ddim"}));
        cmd->add_option("--sigma-rule", sigma_rule, "ratio|literal")
            ->check(CLI::IsMember({"ratio", "literal"}));
        cmd->add_option("--seed", seed, "evaluation seed");
        cmd->add_flag("--zero-uncertainty", zero_uncertainty,
                      "force a closed gate everywhere (diagnostic)");
    }
    pipeline::InferenceConfig to_config() const {
        pipeline::InferenceConfig icfg;
        icfg.infer_steps = steps;
        icfg.sampler = pipeline::sampler_from_name(sampler);
        icfg.sigma_rule = pipeline::sigma_rule_from_name(sigma_rule);
        icfg.seed = seed;
        icfg.force_zero_uncertainty = zero_uncertainty;
        return icfg;
    }
};

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, int train, int test, int size,
                 double strength) {
    data::DatasetManifest m;
    m.seed = seed;
    m.train_count = train;
    m.test_count = test;
    m.image_size = size;
    m.strength = strength;
    data::write_dataset(m, out_dir);
    std::printf("wrote %d train / %d test samples at %dx%d to %s\n", train, test, size, size,
                out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& run_dir, const std::string& stage,
              const std::string& config_path, std::uint64_t seed_override, bool has_seed) {
    auto ds = data::load_dataset(data_dir);
    pipeline::RunPaths paths{run_dir};
    pipeline::TrainConfig cfg = config_path.empty()
                                    ? (fs::exists(paths.config())
                                           ? pipeline::TrainConfig::load(paths.config())
                                           : pipeline::TrainConfig::desk())
                                    : pipeline::TrainConfig::load(config_path);
    if (has_seed) cfg.seed = seed_override;
    cfg.save(paths.config());

    pipeline::Trainer trainer(std::move(ds), cfg, paths);
    const bool reuse = stage == "2" || stage == "3";
    trainer.prepare_prior(reuse);
    if (reuse) trainer.load_models();

    if (stage == "1" || stage == "all") trainer.stage1();
    if (stage == "2" || stage == "all") trainer.stage2();
    if (stage == "3" || stage == "all") trainer.stage3();
    std::printf("training (%s) done; checkpoints in %s\n", stage.c_str(),
                paths.checkpoints().string().c_str());
    return 0;
}

int cmd_refine(const std::string& run_dir, const std::string& data_dir, const std::string& input,
               const std::string& coarse_path, const std::string& out_path,
               const std::string& trace_dir, const CommonInference& common) {
    auto ds = data::load_dataset(data_dir);
    pipeline::RunPaths paths{run_dir};
    auto run = pipeline::load_run(paths, ds);
    auto icfg = common.to_config();

    data::Image img = data::read_image_png(input);
    std::optional<ProbMap> coarse;
    if (!coarse_path.empty()) coarse = data::read_probmap_png(coarse_path);

    Rng rng(icfg.seed);
    auto rec = pipeline::refine(img, *run.prior, *run.uncertainty, *run.denoiser, run.schedule,
                                icfg, rng, !trace_dir.empty(),
                                coarse ? &*coarse : nullptr);
    data::write_mask_png(out_path, rec.refined);
    if (!trace_dir.empty()) {
        fs::create_directories(trace_dir);
        data::write_mask_png(fs::path(trace_dir) / "coarse.png", rec.coarse);
        data::write_mask_png(fs::path(trace_dir) / "gate.png", rec.gate);
        data::write_mask_png(fs::path(trace_dir) / "target_hat.png", rec.target_hat);
        for (const auto& [step, latent] : rec.latents) {
            char name[48];
            std::snprintf(name, sizeof(name), "latent_t%04d.png", step);
            data::write_mask_png(fs::path(trace_dir) / name, latent);
        }
    }
    std::printf("refined %s -> %s (%.3fs)\n", input.c_str(), out_path.c_str(), rec.seconds);
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir, int seeds,
             const CommonInference& common) {
    auto ds = data::load_dataset(data_dir);
    pipeline::RunPaths paths{run_dir};
    auto run = pipeline::load_run(paths, ds);
    auto icfg = common.to_config();

    auto result = pipeline::evaluate_corpus(ds.test, *run.prior, *run.uncertainty, *run.denoiser,
                                            run.schedule, icfg, seeds);
    pipeline::write_eval_csv(paths.eval(), run.prior->kind(), result, icfg.infer_steps);
    pipeline::write_per_sample_csv(paths.per_sample(), result);
    std::printf("         %8s %8s %8s %8s\n", "mae", "wF", "E", "S");
    std::printf("coarse   %8.4f %8.4f %8.4f %8.4f\n", result.coarse.mae, result.coarse.f_beta_w,
                result.coarse.e_phi, result.coarse.s_alpha);
    std::printf("refined  %8.4f %8.4f %8.4f %8.4f   (%d seeds, %.3fs/img)\n", result.refined.mae,
                result.refined.f_beta_w, result.refined.e_phi, result.refined.s_alpha, seeds,
                result.sec_per_img);
    std::printf("wrote %s\n", paths.eval().string().c_str());
    return 0;
}

int cmd_ablate(const std::string& run_dir, const std::string& data_dir, std::vector<int> steps,
               const CommonInference& common) {
    auto ds = data::load_dataset(data_dir);
    pipeline::RunPaths paths{run_dir};
    auto run = pipeline::load_run(paths, ds);
    auto icfg = common.to_config();
    if (steps.empty())
        for (int t = 1; t <= 10; ++t) steps.push_back(t);

    auto coarse_eval =
        pipeline::evaluate_corpus(ds.test, *run.prior, *run.uncertainty, *run.denoiser,
                                  run.schedule, icfg, 1);
    auto rows = pipeline::ablate_steps(ds.test, *run.prior, *run.uncertainty, *run.denoiser,
                                       run.schedule, icfg, steps);
    pipeline::write_ablation_csv(paths.ablation(), run.prior->kind(), coarse_eval.coarse, rows);

    std::printf("%-10s %8s", "metric", "coarse");
    for (const auto& r : rows) std::printf(" %8s", ("T=" + std::to_string(r.infer_steps)).c_str());
    std::printf("\n");
    auto print_metric = [&](const char* name, auto get, double coarse_v) {
        std::printf("%-10s %8.4f", name, coarse_v);
        for (const auto& r : rows) std::printf(" %8.4f", get(r.refined));
        std::printf("\n");
    };
    print_metric("mae", [](const metrics::MetricRow& m) { return m.mae; }, coarse_eval.coarse.mae);
    print_metric("f_beta_w", [](const metrics::MetricRow& m) { return m.f_beta_w; },
                 coarse_eval.coarse.f_beta_w);
    print_metric("e_phi", [](const metrics::MetricRow& m) { return m.e_phi; },
                 coarse_eval.coarse.e_phi);
    print_metric("s_alpha", [](const metrics::MetricRow& m) { return m.s_alpha; },
                 coarse_eval.coarse.s_alpha);
    std::printf("%-10s %8s", "t[s/img]", "-");
    for (const auto& r : rows) std::printf(" %8.3f", r.sec_per_img);
    std::printf("\nwrote %s\n", paths.ablation().string().c_str());
    return 0;
}

int cmd_report(const std::string& run_dir) {
    pipeline::RunPaths paths{run_dir};
    std::ifstream in(paths.eval());
    if (!in) throw data::DataError("run has no eval.csv yet: " + paths.eval().string());
    std::string line;
    std::getline(in, line);
    metrics::MetricRow coarse, refined;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string seg, is_refined, steps, f;
        std::getline(ss, seg, ',');
        std::getline(ss, is_refined, ',');
        std::getline(ss, steps, ',');
        metrics::MetricRow row;
        std::getline(ss, f, ',');
        row.mae = std::stod(f);
        std::getline(ss, f, ',');
        row.f_beta_w = std::stod(f);
        std::getline(ss, f, ',');
        row.e_phi = std::stod(f);
        std::getline(ss, f, ',');
        row.s_alpha = std::stod(f);
        (is_refined == "1" ? refined : coarse) = row;
    }
    report::render_metrics_bar(paths.figures() / "metrics_bar.png", coarse, refined);
    report::render_loss_curves(paths.logs(), paths.figures() / "loss_curves.png");
    std::printf("wrote figures to %s\n", paths.figures().string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bernoulli-diffusion refinement of binary segmentation masks"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic camouflage corpus");
    std::string gen_out = "data";
    std::uint64_t gen_seed = 42;
    int gen_train = 500, gen_test = 100, gen_size = 64;
    double gen_strength = 0.4;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--train", gen_train, "training sample count");
    gen->add_option("--test", gen_test, "test sample count");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--strength", gen_strength, "camouflage strength in [0,1]; lower is harder");

    // train
    auto* train = app.add_subcommand("train", "run the staged training procedure");
    std::string train_data, train_run = "runs/default", train_stage = "all", train_config;
    std::uint64_t train_seed = 0;
    bool train_has_seed = false;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--run", train_run, "run directory")->required();
    train->add_option("--stage", train_stage, "1|2|3|all")
        ->check(CLI::IsMember({"1", "2", "3", "all"}));
    train->add_option("--config", train_config, "config JSON (defaults to the desk preset)");
    train->add_option("--seed", train_seed, "training seed override")
        ->each([&](const std::string&) { train_has_seed = true; });

    // refine
    auto* refine_cmd = app.add_subcommand("refine", "refine a single image");
    std::string rf_run, rf_data, rf_input, rf_coarse, rf_out = "refined.png", rf_trace;
    CommonInference rf_common;
    refine_cmd->add_option("--run", rf_run, "run directory")->required();
    refine_cmd->add_option("--data", rf_data, "dataset directory (for the prior)")->required();
    refine_cmd->add_option("--input", rf_input, "input image PNG")->required();
    refine_cmd->add_option("--coarse", rf_coarse, "coarse mask PNG override");
    refine_cmd->add_option("--out", rf_out, "output refined mask PNG");
    refine_cmd->add_option("--trace", rf_trace, "directory for per-step traces");
    rf_common.attach(refine_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate coarse vs refined on the test split");
    std::string ev_run, ev_data;
    int ev_seeds = 1;
    CommonInference ev_common;
    eval_cmd->add_option("--run", ev_run, "run directory")->required();
    eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
    eval_cmd->add_option("--seeds", ev_seeds, "number of evaluation seeds to average");
    ev_common.attach(eval_cmd);

    // ablate-steps
    auto* abl = app.add_subcommand("ablate-steps", "sweep evaluation step counts");
    std::string ab_run, ab_data;
    std::vector<int> ab_steps;
    CommonInference ab_common;
    abl->add_option("--run", ab_run, "run directory")->required();
    abl->add_option("--data", ab_data, "dataset directory")->required();
    abl->add_option("--steps", ab_steps, "step counts to test (default 1..10)");
    ab_common.attach(abl);

    // report
    auto* rep = app.add_subcommand("report", "render figures for a finished run");
    std::string rp_run;
    rep->add_option("--run", rp_run, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_seed, gen_train, gen_test, gen_size, gen_strength);
        if (train->parsed())
            return cmd_train(train_data, train_run, train_stage, train_config, train_seed,
                             train_has_seed);
        if (refine_cmd->parsed())
            return cmd_refine(rf_run, rf_data, rf_input, rf_coarse, rf_out, rf_trace, rf_common);
        if (eval_cmd->parsed()) return cmd_eval(ev_run, ev_data, ev_seeds, ev_common);
        if (abl->parsed()) return cmd_ablate(ab_run, ab_data, ab_steps, ab_common);
        if (rep->parsed()) return cmd_report(rp_run);
    } catch (const data::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const pipeline::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::out_of_range& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
