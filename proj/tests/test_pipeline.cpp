#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "residiff/pipeline/evaluate.hpp"
#include "residiff/pipeline/train.hpp"

#include <filesystem>
#include <fstream>

using namespace residiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("residiff_pipe_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

data::Dataset tiny_dataset(const fs::path& dir, int train = 24, int test = 6, int size = 32) {
    data::DatasetManifest m;
    m.seed = 11;
    m.train_count = train;
    m.test_count = test;
    m.image_size = size;
    data::write_dataset(m, dir);
    return data::load_dataset(dir);
}

pipeline::TrainConfig tiny_config() {
    auto cfg = pipeline::TrainConfig::desk();
    cfg.batch_size = 4;
    cfg.val_count = 4;
    cfg.stage1_epochs = 1;
    cfg.stage2_max_epochs = 1;
    cfg.stage3_max_epochs = 1;
    cfg.train_steps = 50;
    cfg.val_infer_steps = 2;
    cfg.denoiser.base_channels = 8;
    cfg.denoiser.channel_multipliers = {1, 2, 2, 2};
    cfg.denoiser.adapted_channels = 8;
    cfg.denoiser.time_embedding_dim = 32;
    cfg.denoiser.norm_groups = 4;
    cfg.uncertainty.channels = {32, 64, 128, 256}; // must match the prior pyramid widths
    cfg.uncertainty.mc_samples = 3;
    return cfg;
}

} // namespace

TEST_CASE("checkpoint save / load round trip is exact") {
    auto dir = temp_dir("ckpt");
    Rng rng(1);
    nn::ParamMap<float> pm;
    auto a = nn::param_normal<float>({3, 4}, 0.5, rng);
    auto b = nn::param_normal<float>({2, 2, 3, 3}, 0.1, rng);
    pm.add("block.a", a);
    pm.add("block.b", b);

    pipeline::Checkpoint ck;
    ck.meta["format"] = "test";
    pipeline::pack_params(ck, pm);
    pipeline::save_checkpoint(dir / "m.ckpt", ck);

    auto loaded = pipeline::load_checkpoint(dir / "m.ckpt");
    CHECK(loaded.meta["format"] == "test");

    nn::ParamMap<float> pm2;
    auto a2 = nn::param_fill<float>({3, 4}, 0.0f);
    auto b2 = nn::param_fill<float>({2, 2, 3, 3}, 0.0f);
    pm2.add("block.a", a2);
    pm2.add("block.b", b2);
    pipeline::unpack_params(loaded, pm2);
    REQUIRE(a2.value().data == a.value().data);
    REQUIRE(b2.value().data == b.value().data);

    // re-saving the loaded state reproduces the file byte for byte
    pipeline::Checkpoint ck2;
    ck2.meta["format"] = "test";
    pipeline::pack_params(ck2, pm2);
    pipeline::save_checkpoint(dir / "m2.ckpt", ck2);
    REQUIRE(file_bytes(dir / "m.ckpt") == file_bytes(dir / "m2.ckpt"));

    // shape mismatches are rejected
    nn::ParamMap<float> pm3;
    auto wrong = nn::param_fill<float>({4, 3}, 0.0f);
    pm3.add("block.a", wrong);
    CHECK_THROWS_AS(pipeline::unpack_params(loaded, pm3), data::DataError);
    fs::remove_all(dir);
}

TEST_CASE("train config json round trip") {
    auto cfg = tiny_config();
    cfg.lr_uncertainty = 5e-4;
    cfg.prior = "toy_cnn";
    auto text = cfg.to_json();
    auto back = pipeline::TrainConfig::from_json(text);
    CHECK(back.lr_uncertainty == doctest::Approx(5e-4));
    CHECK(back.prior == "toy_cnn");
    CHECK(back.batch_size == 4);
    CHECK(back.train_steps == 50);
    CHECK(back.denoiser.base_channels == 8);
    CHECK(back.uncertainty.mc_samples == 3);
}

TEST_CASE("zero-capacity predictor leaves a positive divergence on noisy batches") {
    const auto s = NoiseSchedule::cosine(50);
    Rng rng(3);
    const int n = 8;
    ProbMap target(n, n), mc(n, n);
    for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        mc[i] = rng.uniform();
    }
    const int t = 30;
    auto [noise, latent] = sample_forward(s, t, target, mc, rng);
    auto q = bernoulli_posterior(s, t, latent, target, mc);
    // a predictor emitting all zeros reconstructs the latent itself
    auto p = bernoulli_posterior(s, t, latent, latent, mc);
    nn::Tensor<float> qt(nn::Shape{1, 1, n, n}), pt(nn::Shape{1, 1, n, n});
    for (std::size_t i = 0; i < q.size(); ++i) {
        qt.data[i] = static_cast<float>(q[i]);
        pt.data[i] = static_cast<float>(p[i]);
    }
    const double kl =
        losses::kl_bernoulli(nn::constant(std::move(qt)), nn::constant(std::move(pt))).item();
    CHECK(kl > 1e-3);
}

TEST_CASE("single training step runs and the loss falls over 200 steps") {
    auto dir = temp_dir("train_small");
    auto ds = tiny_dataset(dir);
    auto cfg = tiny_config();
    pipeline::RunPaths paths{dir / "run"};
    pipeline::Trainer trainer(ds, cfg, paths);
    trainer.prepare_prior(false);

    nn::ParamMap<float> pm;
    trainer.denoiser().collect(pm);
    nn::AdamW<float> opt;
    opt.weight_decay = cfg.weight_decay;
    opt.add_all(pm, 3e-4);

    Rng rng(9);
    double first_window = 0.0, last_window = 0.0;
    const int steps = 300;
    for (int s = 0; s < steps; ++s) {
        std::vector<int> batch_idx;
        for (int b = 0; b < 4; ++b)
            batch_idx.push_back(rng.uniform_int(0, static_cast<int>(trainer.train_split().size()) - 1));
        auto batch = trainer.make_batch(batch_idx);
        auto rep = pipeline::denoiser_train_step(trainer.denoiser(), trainer.schedule(), batch, rng,
                                                 &opt, 1.0);
        REQUIRE(std::isfinite(rep.value()));
        if (s < 20) first_window += rep.value();
        if (s >= steps - 20) last_window += rep.value();
    }
    MESSAGE("loss first/last window: ", first_window / 20, " / ", last_window / 20);
    CHECK(last_window < 0.8 * first_window);
    fs::remove_all(dir);
}

TEST_CASE("staged training respects the freeze contracts end to end") {
    auto dir = temp_dir("stages");
    auto ds = tiny_dataset(dir, 16, 4);
    auto cfg = tiny_config();
    cfg.val_count = 4;
    pipeline::RunPaths paths{dir / "run"};
    pipeline::Trainer trainer(ds, cfg, paths);
    trainer.prepare_prior(false);

    const auto prior_sum = trainer.prior_checksum();
    const auto den_sum0 = trainer.denoiser_checksum();
    trainer.stage1(); // must not touch the denoiser or the prior
    CHECK(trainer.prior_checksum() == prior_sum);
    CHECK(trainer.denoiser_checksum() == den_sum0);

    const auto huq_sum1 = trainer.uncertainty_checksum();
    trainer.stage2(); // must not touch the uncertainty net or the prior
    CHECK(trainer.uncertainty_checksum() == huq_sum1);
    CHECK(trainer.prior_checksum() == prior_sum);

    const auto den_sum2 = trainer.denoiser_checksum();
    trainer.stage3(); // must not touch the denoiser
    CHECK(trainer.denoiser_checksum() == den_sum2);
    CHECK(trainer.prior_checksum() == prior_sum);

    // a full reload reproduces every parameter
    auto run = pipeline::load_run(paths, ds);
    nn::ParamMap<float> pm_a, pm_b;
    trainer.denoiser().collect(pm_a);
    run.denoiser->collect(pm_b);
    REQUIRE(pm_a.items.size() == pm_b.items.size());
    for (std::size_t i = 0; i < pm_a.items.size(); ++i)
        REQUIRE(pm_a.items[i].second.value().data == pm_b.items[i].second.value().data);
    nn::ParamMap<float> um_a, um_b;
    trainer.uncertainty().collect(um_a);
    run.uncertainty->collect(um_b);
    for (std::size_t i = 0; i < um_a.items.size(); ++i)
        REQUIRE(um_a.items[i].second.value().data == um_b.items[i].second.value().data);
    CHECK(run.prior->checksum() == prior_sum);

    // closed gate forces the refined mask to equal the coarse mask bit-exactly
    pipeline::InferenceConfig icfg;
    icfg.infer_steps = 3;
    icfg.force_zero_uncertainty = true;
    Rng rng(4);
    auto rec = pipeline::refine(ds.test[0].image, *run.prior, *run.uncertainty, *run.denoiser,
                                run.schedule, icfg, rng);
    for (std::size_t i = 0; i < rec.refined.size(); ++i)
        REQUIRE(rec.refined[i] == rec.coarse[i]);

    // tracing records the ladder
    pipeline::InferenceConfig icfg2;
    icfg2.infer_steps = 4;
    Rng rng2(5);
    auto rec2 = pipeline::refine(ds.test[0].image, *run.prior, *run.uncertainty, *run.denoiser,
                                 run.schedule, icfg2, rng2, true);
    CHECK(rec2.latents.size() == 4);
    CHECK(rec2.latents.back().first == 0);

    fs::remove_all(dir);
}

TEST_CASE("corpus evaluation is reproducible and seed-sensitive") {
    auto dir = temp_dir("eval");
    auto ds = tiny_dataset(dir, 12, 4);
    auto cfg = tiny_config();
    pipeline::RunPaths paths{dir / "run"};
    pipeline::Trainer trainer(ds, cfg, paths);
    trainer.prepare_prior(false);
    trainer.save_uncertainty();
    trainer.save_denoiser();

    pipeline::InferenceConfig icfg;
    icfg.infer_steps = 2;
    icfg.seed = 21;
    auto r1 = pipeline::evaluate_corpus(ds.test, trainer.prior(), trainer.uncertainty(),
                                        trainer.denoiser(), trainer.schedule(), icfg, 2);
    auto r2 = pipeline::evaluate_corpus(ds.test, trainer.prior(), trainer.uncertainty(),
                                        trainer.denoiser(), trainer.schedule(), icfg, 2);
    REQUIRE(r1.refined.mae == r2.refined.mae);
    REQUIRE(r1.refined.f_beta_w == r2.refined.f_beta_w);
    REQUIRE(r1.coarse.mae == r2.coarse.mae);

    pipeline::write_eval_csv(dir / "e1.csv", "oracle", r1, icfg.infer_steps);
    pipeline::write_eval_csv(dir / "e2.csv", "oracle", r2, icfg.infer_steps);
    REQUIRE(file_bytes(dir / "e1.csv") == file_bytes(dir / "e2.csv"));

    icfg.seed = 22;
    auto r3 = pipeline::evaluate_corpus(ds.test, trainer.prior(), trainer.uncertainty(),
                                        trainer.denoiser(), trainer.schedule(), icfg, 1);
    CHECK(r3.refined.mae != r1.refined.mae); // different sampling seed, different draw

    // gate forced shut: the refined rows collapse onto the coarse rows
    pipeline::InferenceConfig closed = icfg;
    closed.force_zero_uncertainty = true;
    auto r4 = pipeline::evaluate_corpus(ds.test, trainer.prior(), trainer.uncertainty(),
                                        trainer.denoiser(), trainer.schedule(), closed, 1);
    CHECK(r4.refined.mae == r4.coarse.mae);
    CHECK(r4.refined.f_beta_w == r4.coarse.f_beta_w);
    CHECK(r4.refined.e_phi == r4.coarse.e_phi);
    CHECK(r4.refined.s_alpha == r4.coarse.s_alpha);

    fs::remove_all(dir);
}
