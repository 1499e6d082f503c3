#pragma once

#include "residiff/nn/ops.hpp"

#include <map>
#include <string>

namespace residiff::losses {

using nn::Var;

constexpr double kProbClamp = 1e-6;

template <class S>
struct LossReport {
    Var<S> total;
    std::map<std::string, double> components;

    double value() const { return static_cast<double>(total.item()); }
};

template <class S>
Var<S> clamp_prob(const Var<S>& p) {
    return nn::clamp(p, static_cast<S>(kProbClamp), static_cast<S>(1.0 - kProbClamp));
}

// Mean KL divergence between two per-pixel Bernoulli parameter maps.
template <class S>
Var<S> kl_bernoulli(const Var<S>& q_param, const Var<S>& p_param) {
    auto q = clamp_prob(q_param);
    auto p = clamp_prob(p_param);
    auto one_q = nn::add_scalar(nn::neg(q), S(1));
    auto one_p = nn::add_scalar(nn::neg(p), S(1));
    auto term1 = nn::mul(q, nn::sub(nn::log(q), nn::log(p)));
    auto term0 = nn::mul(one_q, nn::sub(nn::log(one_q), nn::log(one_p)));
    return nn::mean(nn::add(term1, term0));
}

template <class S>
Var<S> bce_elementwise(const Var<S>& pred, const Var<S>& target) {
    auto p = clamp_prob(pred);
    auto one_p = nn::add_scalar(nn::neg(p), S(1));
    auto one_t = nn::add_scalar(nn::neg(target), S(1));
    return nn::neg(nn::add(nn::mul(target, nn::log(p)), nn::mul(one_t, nn::log(one_p))));
}

template <class S>
Var<S> bce_mean(const Var<S>& pred, const Var<S>& target) {
    return nn::mean(bce_elementwise(pred, target));
}

// Boundary-emphasis weights: 1 + 5 * |boxmean31(gt) - gt|. Computed on the
// (constant) ground truth, so entries are >= 1 and carry no gradient.
template <class S>
Var<S> boundary_weight_map(const Var<S>& gt, long k = 31) {
    auto pooled = nn::box_mean_same(gt, k);
    return nn::add_scalar(nn::scale(nn::abs(nn::sub(pooled, gt)), S(5)), S(1));
}

template <class S>
Var<S> weighted_bce(const Var<S>& pred, const Var<S>& gt, const Var<S>& w) {
    auto num = nn::sum(nn::mul(w, bce_elementwise(pred, gt)));
    return nn::div(num, nn::sum(w));
}

// Soft IoU with per-pixel weights: 1 - (inter + 1) / (union - inter + 1).
template <class S>
Var<S> weighted_iou(const Var<S>& pred, const Var<S>& gt, const Var<S>& w) {
    auto inter = nn::sum(nn::mul(w, nn::mul(pred, gt)));
    auto uni = nn::sum(nn::mul(w, nn::add(pred, gt)));
    auto num = nn::add_scalar(inter, S(1));
    auto den = nn::add_scalar(nn::sub(uni, inter), S(1));
    return nn::add_scalar(nn::neg(nn::div(num, den)), S(1));
}

// Combined diffusion objective: KL between the true and predicted posterior
// parameters plus boundary-weighted IoU and BCE on the composed refined mask.
template <class S>
LossReport<S> diffusion_loss(const Var<S>& q_post, const Var<S>& p_post, const Var<S>& refined,
                             const Var<S>& gt) {
    auto w = boundary_weight_map(gt);
    auto kl = kl_bernoulli(q_post, p_post);
    auto wiou = weighted_iou(refined, gt, w);
    auto wbce = weighted_bce(refined, gt, w);
    LossReport<S> rep;
    rep.total = nn::add(kl, nn::add(wiou, wbce));
    rep.components["kl"] = static_cast<double>(kl.item());
    rep.components["wiou"] = static_cast<double>(wiou.item());
    rep.components["wbce"] = static_cast<double>(wbce.item());
    return rep;
}

// Reconstruction + distribution regularization for the Gaussian latent head.
// c_prob is the retained stochastic draw after the sigmoid.
template <class S>
LossReport<S> bnn_loss(const Var<S>& c_prob, const Var<S>& gt, const Var<S>& mu,
                       const Var<S>& sigma, double eta = 0.1) {
    auto bce = bce_mean(c_prob, gt);
    auto sig2 = nn::square(sigma);
    auto inner = nn::sub(nn::add(sig2, nn::square(mu)),
                         nn::add_scalar(nn::log(nn::add_scalar(sig2, S(1e-12))), S(1)));
    auto kl = nn::scale(nn::mean(inner), S(0.5));
    LossReport<S> rep;
    rep.total = nn::add(bce, nn::scale(kl, static_cast<S>(eta)));
    rep.components["bnn_bce"] = static_cast<double>(bce.item());
    rep.components["bnn_kl"] = static_cast<double>(kl.item());
    return rep;
}

template <class S>
Var<S> dice_loss(const Var<S>& pred, const Var<S>& gt) {
    auto inter = nn::sum(nn::mul(pred, gt));
    auto denom = nn::add(nn::sum(pred), nn::sum(gt));
    auto frac = nn::div(nn::add_scalar(nn::scale(inter, S(2)), S(1)), nn::add_scalar(denom, S(1)));
    return nn::add_scalar(nn::neg(frac), S(1));
}

// Overall uncertainty-estimation objective: BCE + dice on the fused estimate
// plus the latent-head loss.
template <class S>
LossReport<S> uncertainty_loss(const Var<S>& fused, const Var<S>& u_gt, const Var<S>& c_prob,
                               const Var<S>& m_gt, const Var<S>& mu, const Var<S>& sigma,
                               double eta = 0.1) {
    auto bce = bce_mean(fused, u_gt);
    auto dice = dice_loss(fused, u_gt);
    auto bnn = bnn_loss(c_prob, m_gt, mu, sigma, eta);
    LossReport<S> rep;
    rep.total = nn::add(nn::add(bce, dice), bnn.total);
    rep.components["huq_bce"] = static_cast<double>(bce.item());
    rep.components["dice"] = static_cast<double>(dice.item());
    rep.components.insert(bnn.components.begin(), bnn.components.end());
    return rep;
}

} // namespace residiff::losses
