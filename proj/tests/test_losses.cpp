#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "residiff/losses.hpp"
#include "residiff/pipeline/train.hpp"
#include "support/gradcheck.hpp"

#include <cmath>

using namespace residiff;
using nn::Shape;
using V = nn::Var<double>;

namespace {
V rand_prob(Rng& rng, Shape s, bool rg = true, double lo = 0.05, double hi = 0.95) {
    auto v = nn::make_var<double>(std::move(s), rg);
    for (auto& x : v.value().data) x = rng.uniform(lo, hi);
    return v;
}
V hard_mask(Rng& rng, Shape s) {
    auto v = nn::make_var<double>(std::move(s), false);
    for (auto& x : v.value().data) x = rng.bernoulli(0.45) ? 1.0 : 0.0;
    return v;
}
} // namespace

TEST_CASE("bernoulli KL closed forms and positivity") {
    auto q = nn::make_var<double>({1, 1, 2, 2}, false, 0.3);
    CHECK(losses::kl_bernoulli(q, q).item() == doctest::Approx(0.0).epsilon(1e-12));

    auto one = nn::make_var<double>({1, 1, 2, 2}, false, 1.0);
    auto half = nn::make_var<double>({1, 1, 2, 2}, false, 0.5);
    CHECK(losses::kl_bernoulli(one, half).item() == doctest::Approx(std::log(2.0)).epsilon(1e-4));

    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        auto a = rand_prob(rng, {1, 1, 3, 3}, false, 0.0, 1.0);
        auto b = rand_prob(rng, {1, 1, 3, 3}, false, 0.0, 1.0);
        REQUIRE(losses::kl_bernoulli(a, b).item() >= -1e-12);
    }
}

TEST_CASE("kl gradient check") {
    Rng rng(2);
    auto q = rand_prob(rng, {1, 1, 8, 8});
    auto p = rand_prob(rng, {1, 1, 8, 8});
    auto rep = testsupport::gradcheck([&]() { return losses::kl_bernoulli(q, p); }, {q, p}, 25);
    CHECK(rep.ok);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("boundary weight map is >= 1 and uniform for flat masks") {
    auto flat = nn::make_var<double>({1, 1, 8, 8}, false, 1.0);
    auto w = losses::boundary_weight_map(flat);
    // the box filter sees zero padding at borders, so border weights exceed 1
    for (double v : w.value().data) REQUIRE(v >= 1.0);
    Rng rng(3);
    auto gt = hard_mask(rng, {1, 1, 8, 8});
    auto w2 = losses::boundary_weight_map(gt);
    for (double v : w2.value().data) {
        REQUIRE(v >= 1.0);
        REQUIRE(v <= 6.0);
    }
}

TEST_CASE("weighted bce and iou: trivial cases plus a 2x2 hand computation") {
    Rng rng(4);
    auto gt = hard_mask(rng, {1, 1, 8, 8});
    auto w = losses::boundary_weight_map(gt);

    // perfect hard prediction -> both losses ~ 0
    CHECK(losses::weighted_bce(gt, gt, w).item() == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(losses::weighted_iou(gt, gt, w).item() == doctest::Approx(0.0).epsilon(1e-4));

    // uniform weights reduce to the unweighted forms
    auto pred = rand_prob(rng, {1, 1, 8, 8}, false);
    auto ones = nn::make_var<double>({1, 1, 8, 8}, false, 1.0);
    double plain_bce = 0.0;
    for (long i = 0; i < 64; ++i) {
        const double p = pred.value().data[i], g = gt.value().data[i];
        plain_bce += -(g * std::log(p) + (1 - g) * std::log(1 - p));
    }
    plain_bce /= 64.0;
    CHECK(losses::weighted_bce(pred, gt, ones).item() == doctest::Approx(plain_bce).epsilon(1e-9));

    // 2x2 case against direct summation
    auto p4 = nn::Var<double>(nn::Tensor<double>({1, 1, 2, 2}, {0.8, 0.2, 0.6, 0.4}), false);
    auto g4 = nn::Var<double>(nn::Tensor<double>({1, 1, 2, 2}, {1.0, 0.0, 1.0, 0.0}), false);
    auto w4 = nn::Var<double>(nn::Tensor<double>({1, 1, 2, 2}, {1.0, 2.0, 1.5, 1.0}), false);
    double num = 0.0, den = 0.0, inter = 0.0, uni = 0.0;
    const double pv[4] = {0.8, 0.2, 0.6, 0.4}, gv[4] = {1, 0, 1, 0}, wv[4] = {1, 2, 1.5, 1};
    for (int i = 0; i < 4; ++i) {
        num += wv[i] * -(gv[i] * std::log(pv[i]) + (1 - gv[i]) * std::log(1 - pv[i]));
        den += wv[i];
        inter += wv[i] * pv[i] * gv[i];
        uni += wv[i] * (pv[i] + gv[i]);
    }
    CHECK(losses::weighted_bce(p4, g4, w4).item() == doctest::Approx(num / den).epsilon(1e-9));
    CHECK(losses::weighted_iou(p4, g4, w4).item() ==
          doctest::Approx(1.0 - (inter + 1.0) / (uni - inter + 1.0)).epsilon(1e-9));
}

TEST_CASE("weighted loss gradient checks") {
    Rng rng(5);
    auto pred = rand_prob(rng, {1, 1, 8, 8});
    auto gt = hard_mask(rng, {1, 1, 8, 8});
    auto w = losses::boundary_weight_map(gt);
    CHECK(testsupport::gradcheck([&]() { return losses::weighted_bce(pred, gt, w); }, {pred}, 25).ok);
    CHECK(testsupport::gradcheck([&]() { return losses::weighted_iou(pred, gt, w); }, {pred}, 25).ok);
}

TEST_CASE("dice loss cases and gradient") {
    Rng rng(6);
    auto gt = hard_mask(rng, {1, 1, 8, 8});
    CHECK(losses::dice_loss(gt, gt).item() == doctest::Approx(0.0).epsilon(0.05));
    auto inv = nn::make_var<double>({1, 1, 8, 8}, false);
    for (long i = 0; i < 64; ++i) inv.value().data[i] = 1.0 - gt.value().data[i];
    CHECK(losses::dice_loss(inv, gt).item() == doctest::Approx(1.0).epsilon(0.05));

    // 2x2 hand case: dice = 1 - (2*inter + 1)/(sum + 1)
    auto p4 = nn::Var<double>(nn::Tensor<double>({1, 1, 2, 2}, {0.8, 0.2, 0.6, 0.4}), false);
    auto g4 = nn::Var<double>(nn::Tensor<double>({1, 1, 2, 2}, {1.0, 0.0, 1.0, 0.0}), false);
    const double inter = 0.8 + 0.6, total = (0.8 + 0.2 + 0.6 + 0.4) + 2.0;
    CHECK(losses::dice_loss(p4, g4).item() ==
          doctest::Approx(1.0 - (2 * inter + 1.0) / (total + 1.0)).epsilon(1e-12));

    auto pred = rand_prob(rng, {1, 1, 8, 8});
    CHECK(testsupport::gradcheck([&]() { return losses::dice_loss(pred, gt); }, {pred}, 25).ok);
}

TEST_CASE("gaussian-latent loss closed forms and gradient") {
    Rng rng(7);
    auto gt = hard_mask(rng, {1, 1, 8, 8});
    auto c = rand_prob(rng, {1, 1, 8, 8}, false);

    // mu = 0, sigma = 1 -> the regularizer vanishes
    auto mu0 = nn::make_var<double>({1, 1, 8, 8}, false, 0.0);
    auto sig1 = nn::make_var<double>({1, 1, 8, 8}, false, 1.0);
    auto rep0 = losses::bnn_loss(c, gt, mu0, sig1);
    CHECK(rep0.components["bnn_kl"] == doctest::Approx(0.0).epsilon(1e-9));

    // mu = 1, sigma = 1 -> 0.5 per pixel
    auto mu1 = nn::make_var<double>({1, 1, 8, 8}, false, 1.0);
    auto rep1 = losses::bnn_loss(c, gt, mu1, sig1);
    CHECK(rep1.components["bnn_kl"] == doctest::Approx(0.5).epsilon(1e-9));

    // default regularizer weight: total = bce + 0.1 * kl
    CHECK(rep1.value() ==
          doctest::Approx(rep1.components["bnn_bce"] + 0.1 * rep1.components["bnn_kl"])
              .epsilon(1e-9));

    auto cg = rand_prob(rng, {1, 1, 8, 8});
    auto mug = rand_prob(rng, {1, 1, 8, 8}, true, -0.5, 0.5);
    auto sigg = rand_prob(rng, {1, 1, 8, 8}, true, 0.3, 1.5);
    auto fn = [&]() { return losses::bnn_loss(cg, gt, mug, sigg).total; };
    CHECK(testsupport::gradcheck(fn, {cg, mug, sigg}, 30).ok);
}

TEST_CASE("combined objectives aggregate their components") {
    Rng rng(8);
    auto gt = hard_mask(rng, {2, 1, 8, 8});
    auto q = rand_prob(rng, {2, 1, 8, 8}, false);
    auto p = rand_prob(rng, {2, 1, 8, 8});
    auto refined = rand_prob(rng, {2, 1, 8, 8});
    auto rep = losses::diffusion_loss(q, p, refined, gt);
    CHECK(rep.value() == doctest::Approx(rep.components["kl"] + rep.components["wiou"] +
                                         rep.components["wbce"])
                             .epsilon(1e-6));
    CHECK(std::isfinite(rep.value()));
    CHECK(testsupport::gradcheck([&]() { return losses::diffusion_loss(q, p, refined, gt).total; },
                                 {p, refined}, 30)
              .ok);

    auto fused = rand_prob(rng, {2, 1, 8, 8});
    auto ugt = rand_prob(rng, {2, 1, 8, 8}, false, 0.0, 1.0);
    auto cpr = rand_prob(rng, {2, 1, 8, 8});
    auto mu = rand_prob(rng, {2, 1, 8, 8}, true, -0.5, 0.5);
    auto sig = rand_prob(rng, {2, 1, 8, 8}, true, 0.3, 1.2);
    auto rep2 = losses::uncertainty_loss(fused, ugt, cpr, gt, mu, sig);
    CHECK(rep2.value() ==
          doctest::Approx(rep2.components["huq_bce"] + rep2.components["dice"] +
                          rep2.components["bnn_bce"] + 0.1 * rep2.components["bnn_kl"])
              .epsilon(1e-6));
    CHECK(testsupport::gradcheck(
              [&]() { return losses::uncertainty_loss(fused, ugt, cpr, gt, mu, sig).total; },
              {fused, cpr, mu, sig}, 30)
              .ok);
}

TEST_CASE("differentiable posterior matches the sampling-path kernel") {
    Rng rng(9);
    const auto s = NoiseSchedule::cosine(100);
    for (int it = 0; it < 50; ++it) {
        const int t = rng.uniform_int(1, 100);
        const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double target = rng.uniform();
        const double mc = rng.uniform();
        auto alpha = nn::make_var<double>({1, 1, 1, 1}, false, s.alpha(t));
        auto abp = nn::make_var<double>({1, 1, 1, 1}, false, s.alpha_bar(t - 1));
        auto yv = nn::make_var<double>({1, 1, 1, 1}, false, y);
        auto tv = nn::make_var<double>({1, 1, 1, 1}, false, target);
        auto mv = nn::make_var<double>({1, 1, 1, 1}, false, mc);
        const double graph = pipeline::posterior_param_graph(alpha, abp, yv, tv, mv).item();
        const double kernel = posterior_param_scalar(s.beta(t), s.alpha_bar(t - 1), y, target, mc);
        REQUIRE(std::abs(graph - kernel) < 1e-9);
    }
}

TEST_CASE("differentiable posterior gradient check") {
    Rng rng(10);
    auto alpha = nn::make_var<double>({2, 1, 1, 1}, false);
    auto abp = nn::make_var<double>({2, 1, 1, 1}, false);
    alpha.value().data = {0.95, 0.8};
    abp.value().data = {0.7, 0.4};
    auto y = nn::make_var<double>({2, 1, 4, 4}, false);
    for (auto& v : y.value().data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    auto target = rand_prob(rng, {2, 1, 4, 4});
    auto mc = rand_prob(rng, {2, 1, 4, 4}, false);
    auto fn = [&]() {
        return nn::mean(nn::square(pipeline::posterior_param_graph(alpha, abp, y, target, mc)));
    };
    CHECK(testsupport::gradcheck(fn, {target}, 25).ok);
}
