#pragma once

// Straight-line reference implementations of the evaluation measures, kept
// deliberately independent of src/metrics.cpp. Unoptimized transcriptions of
// the published formulas; the unit and acceptance suites compare the
// production code against these.

#include "residiff/grid.hpp"

#include <cmath>
#include <vector>

namespace testsupport {

inline double oracle_mae(const residiff::ProbMap& pred, const residiff::BinaryMap& gt) {
    double acc = 0.0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) acc += std::fabs(pred.at(y, x) - gt.at(y, x));
    return acc / (static_cast<double>(pred.height()) * pred.width());
}

inline double oracle_weighted_fmeasure(const residiff::ProbMap& pred,
                                       const residiff::BinaryMap& gt) {
    const int h = gt.height(), w = gt.width();
    const double eps = 2.220446049250313e-16;
    double gt_sum = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) gt_sum += gt.at(y, x);
    if (gt_sum == 0.0) return 0.0;

    std::vector<double> err(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            err[static_cast<std::size_t>(y) * w + x] = std::fabs(pred.at(y, x) - gt.at(y, x));

    // dependency substitution: background error replaced by the mean error of
    // the *set* of nearest foreground pixels (exact integer distances)
    std::vector<double> dist(err.size(), 0.0), et(err);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (gt.at(y, x) > 0.5) continue;
            long best = -1;
            for (int fy = 0; fy < h; ++fy)
                for (int fx = 0; fx < w; ++fx) {
                    if (gt.at(fy, fx) <= 0.5) continue;
                    const long d2 = static_cast<long>(fy - y) * (fy - y) +
                                    static_cast<long>(fx - x) * (fx - x);
                    if (best < 0 || d2 < best) best = d2;
                }
            double esum = 0.0;
            long cnt = 0;
            for (int fy = 0; fy < h; ++fy)
                for (int fx = 0; fx < w; ++fx) {
                    if (gt.at(fy, fx) <= 0.5) continue;
                    const long d2 = static_cast<long>(fy - y) * (fy - y) +
                                    static_cast<long>(fx - x) * (fx - x);
                    if (d2 == best) {
                        esum += err[static_cast<std::size_t>(fy) * w + fx];
                        ++cnt;
                    }
                }
            dist[static_cast<std::size_t>(y) * w + x] = std::sqrt(static_cast<double>(best));
            et[static_cast<std::size_t>(y) * w + x] = esum / static_cast<double>(cnt);
        }

    // 7x7 Gaussian (sigma 5), zero padding, normalized to unit sum
    double kernel[7][7];
    double ksum = 0.0;
    for (int a = -3; a <= 3; ++a)
        for (int b = -3; b <= 3; ++b) {
            kernel[a + 3][b + 3] = std::exp(-(a * a + b * b) / 50.0);
            ksum += kernel[a + 3][b + 3];
        }
    std::vector<double> ea(err.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int a = -3; a <= 3; ++a)
                for (int b = -3; b <= 3; ++b) {
                    const int yy = y + a, xx = x + b;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += kernel[a + 3][b + 3] / ksum * et[static_cast<std::size_t>(yy) * w + xx];
                }
            ea[static_cast<std::size_t>(y) * w + x] = acc;
        }

    double fg_err = 0.0, bg_err = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (gt.at(y, x) > 0.5) {
                fg_err += (ea[i] < err[i]) ? ea[i] : err[i];
            } else {
                const double importance = 2.0 - 1.0 * std::exp(std::log(1.0 - 0.5) / 5.0 * dist[i]);
                bg_err += err[i] * importance;
            }
        }
    const double tpw = gt_sum - fg_err;
    const double recall = 1.0 - fg_err / gt_sum;
    const double precision = tpw / (eps + tpw + bg_err);
    double q = 2.0 * recall * precision / (eps + recall + precision);
    if (q < 0.0) q = 0.0;
    if (q > 1.0) q = 1.0;
    return q;
}

inline double oracle_adaptive_emeasure(const residiff::ProbMap& pred,
                                       const residiff::BinaryMap& gt) {
    const int h = gt.height(), w = gt.width();
    const double eps = 2.220446049250313e-16;
    double pm = 0.0, gm = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            pm += pred.at(y, x);
            gm += gt.at(y, x);
        }
    const double n = static_cast<double>(h) * w;
    double thr = 2.0 * pm / n;
    if (thr > 1.0) thr = 1.0;

    std::vector<double> fm(static_cast<std::size_t>(h) * w);
    double fsum = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            fm[static_cast<std::size_t>(y) * w + x] = pred.at(y, x) >= thr ? 1.0 : 0.0;
            fsum += fm[static_cast<std::size_t>(y) * w + x];
        }

    double total = 0.0;
    if (gm == 0.0) {
        for (double v : fm) total += 1.0 - v;
    } else if (gm == n) {
        for (double v : fm) total += v;
    } else {
        const double mu_f = fsum / n, mu_g = gm / n;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double af = fm[static_cast<std::size_t>(y) * w + x] - mu_f;
                const double ag = gt.at(y, x) - mu_g;
                const double align = 2.0 * ag * af / (ag * ag + af * af + eps);
                total += (align + 1.0) * (align + 1.0) / 4.0;
            }
    }
    double q = total / (n - 1.0 + eps);
    if (q < 0.0) q = 0.0;
    if (q > 1.0) q = 1.0;
    return q;
}

namespace smeasure_detail {

inline double object_term(const std::vector<double>& vals) {
    if (vals.empty()) return 0.0;
    const double eps = 2.220446049250313e-16;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    if (vals.size() > 1) {
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(vals.size() - 1);
    }
    return 2.0 * mean / (mean * mean + 1.0 + std::sqrt(var) + eps);
}

inline double ssim_block(const residiff::ProbMap& pred, const residiff::BinaryMap& gt, int y0,
                         int y1, int x0, int x1) {
    const double eps = 2.220446049250313e-16;
    const long n = static_cast<long>(y1 - y0) * (x1 - x0);
    if (n <= 0) return 0.0;
    double mx = 0.0, my = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            mx += pred.at(y, x);
            my += gt.at(y, x);
        }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, vxy = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            vx += (pred.at(y, x) - mx) * (pred.at(y, x) - mx);
            vy += (gt.at(y, x) - my) * (gt.at(y, x) - my);
            vxy += (pred.at(y, x) - mx) * (gt.at(y, x) - my);
        }
    vx /= n - 1.0 + eps;
    vy /= n - 1.0 + eps;
    vxy /= n - 1.0 + eps;
    const double a = 4.0 * mx * my * vxy;
    const double b = (mx * mx + my * my) * (vx + vy);
    if (a != 0.0) return a / (b + eps);
    return b == 0.0 ? 1.0 : 0.0;
}

} // namespace smeasure_detail

inline double oracle_smeasure(const residiff::ProbMap& pred, const residiff::BinaryMap& gt,
                              double alpha = 0.5) {
    const int h = gt.height(), w = gt.width();
    double gm = 0.0, pm = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gm += gt.at(y, x);
            pm += pred.at(y, x);
        }
    const double n = static_cast<double>(h) * w;
    if (gm == 0.0) return 1.0 - pm / n;
    if (gm == n) return pm / n;

    // object term over foreground / inverted background values
    std::vector<double> fg, bg;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (gt.at(y, x) > 0.5)
                fg.push_back(pred.at(y, x));
            else
                bg.push_back(1.0 - pred.at(y, x));
        }
    const double u = gm / n;
    const double s_obj = u * smeasure_detail::object_term(fg) +
                         (1.0 - u) * smeasure_detail::object_term(bg);

    // region term about the (1-based, rounded) foreground centroid
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.at(y, x) > 0.5) {
                sx += x + 1.0;
                sy += y + 1.0;
            }
    const int cx = static_cast<int>(std::round(sx / gm));
    const int cy = static_cast<int>(std::round(sy / gm));
    const double w1 = static_cast<double>(cx) * cy / n;
    const double w2 = static_cast<double>(w - cx) * cy / n;
    const double w3 = static_cast<double>(cx) * (h - cy) / n;
    const double w4 = 1.0 - w1 - w2 - w3;
    double s_reg = 0.0;
    s_reg += w1 * smeasure_detail::ssim_block(pred, gt, 0, cy, 0, cx);
    s_reg += w2 * smeasure_detail::ssim_block(pred, gt, 0, cy, cx, w);
    s_reg += w3 * smeasure_detail::ssim_block(pred, gt, cy, h, 0, cx);
    s_reg += w4 * smeasure_detail::ssim_block(pred, gt, cy, h, cx, w);

    double q = alpha * s_obj + (1.0 - alpha) * s_reg;
    if (q < 0.0) q = 0.0;
    if (q > 1.0) q = 1.0;
    return q;
}

} // namespace testsupport
