#include "residiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace residiff::metrics {

namespace {

constexpr double kEps = 2.220446049250313e-16;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// -------- weighted F-measure internals --------

struct DistanceField {
    std::vector<double> dist;      // Euclidean distance to nearest foreground pixel
    std::vector<double> nearest_e; // error averaged over all equidistant nearest fg pixels
};

DistanceField nearest_foreground(const BinaryMap& gt, const std::vector<double>& err) {
    const int h = gt.height(), w = gt.width();
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.at(y, x) > 0.5) fg.emplace_back(y, x);

    DistanceField out;
    out.dist.assign(static_cast<std::size_t>(h) * w, 0.0);
    out.nearest_e.assign(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (gt.at(y, x) > 0.5) {
                out.nearest_e[i] = err[i];
                continue;
            }
            long best = std::numeric_limits<long>::max();
            double e_sum = 0.0;
            long e_cnt = 0;
            for (const auto& [fy, fx] : fg) {
                const long dy = fy - y, dx = fx - x;
                const long d2 = dy * dy + dx * dx; // exact, so ties are exact
                if (d2 < best) {
                    best = d2;
                    e_sum = err[static_cast<std::size_t>(fy) * w + fx];
                    e_cnt = 1;
                } else if (d2 == best) {
                    e_sum += err[static_cast<std::size_t>(fy) * w + fx];
                    ++e_cnt;
                }
            }
            out.dist[i] = std::sqrt(static_cast<double>(best));
            out.nearest_e[i] = e_sum / static_cast<double>(e_cnt);
        }
    }
    return out;
}

std::vector<double> gauss_filter_same(const std::vector<double>& in, int h, int w, int ksize,
                                      double sigma) {
    const int r = ksize / 2;
    std::vector<double> k(static_cast<std::size_t>(ksize) * ksize);
    double ksum = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>(dy + r) * ksize + (dx + r)] = v;
            ksum += v;
        }
    for (auto& v : k) v /= ksum;

    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue; // zero padding
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    acc += in[static_cast<std::size_t>(yy) * w + xx] *
                           k[static_cast<std::size_t>(dy + r) * ksize + (dx + r)];
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

// -------- S-measure internals --------

double object_score(const std::vector<double>& vals) {
    if (vals.empty()) return 0.0;
    const double x = mean_of(vals);
    double var = 0.0;
    if (vals.size() > 1) {
        for (double v : vals) var += (v - x) * (v - x);
        var /= static_cast<double>(vals.size() - 1);
    }
    return 2.0 * x / (x * x + 1.0 + std::sqrt(var) + kEps);
}

double s_object(const ProbMap& pred, const BinaryMap& gt) {
    std::vector<double> fg_vals, bg_vals;
    double gt_sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] > 0.5) {
            fg_vals.push_back(pred[i]);
            gt_sum += 1.0;
        } else {
            bg_vals.push_back(1.0 - pred[i]);
        }
    }
    const double u = gt_sum / static_cast<double>(gt.size());
    return u * object_score(fg_vals) + (1.0 - u) * object_score(bg_vals);
}

double region_ssim(const ProbMap& pred, const BinaryMap& gt, int y0, int y1, int x0, int x1) {
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
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = pred.at(y, x) - mx;
            const double dy = gt.at(y, x) - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    const double denom_n = static_cast<double>(n) - 1.0 + kEps;
    sx /= denom_n;
    sy /= denom_n;
    sxy /= denom_n;
    const double a = 4.0 * mx * my * sxy;
    const double b = (mx * mx + my * my) * (sx + sy);
    if (a != 0.0) return a / (b + kEps);
    return b == 0.0 ? 1.0 : 0.0;
}

double s_region(const ProbMap& pred, const BinaryMap& gt) {
    const int h = gt.height(), w = gt.width();
    double total = 0.0, sum_x = 0.0, sum_y = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.at(y, x) > 0.5) {
                total += 1.0;
                sum_x += x + 1.0; // 1-based, matching the reference centroid
                sum_y += y + 1.0;
            }
    int cx, cy;
    if (total == 0.0) {
        cx = w / 2;
        cy = h / 2;
    } else {
        cx = static_cast<int>(std::round(sum_x / total));
        cy = static_cast<int>(std::round(sum_y / total));
    }
    // Split about the centroid; block (y,x) extents are half-open 0-based.
    const double area = static_cast<double>(h) * w;
    const double w1 = (static_cast<double>(cx) * cy) / area;
    const double w2 = (static_cast<double>(w - cx) * cy) / area;
    const double w3 = (static_cast<double>(cx) * (h - cy)) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    double q = 0.0;
    q += w1 * region_ssim(pred, gt, 0, cy, 0, cx);
    q += w2 * region_ssim(pred, gt, 0, cy, cx, w);
    q += w3 * region_ssim(pred, gt, cy, h, 0, cx);
    q += w4 * region_ssim(pred, gt, cy, h, cx, w);
    return q;
}

} // namespace

double mae(const ProbMap& pred, const BinaryMap& gt) {
    require_same_shape(pred, gt, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
    return s / static_cast<double>(pred.size());
}

double weighted_fmeasure(const ProbMap& pred, const BinaryMap& gt) {
    require_same_shape(pred, gt, "weighted_fmeasure");
    const int h = gt.height(), w = gt.width();
    double gt_sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) gt_sum += gt[i];
    if (gt_sum == 0.0) return 0.0; // no foreground to weight against

    std::vector<double> err(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) err[i] = std::abs(pred[i] - gt[i]);

    const DistanceField field = nearest_foreground(gt, err);
    const std::vector<double> blurred = gauss_filter_same(field.nearest_e, h, w, 7, 5.0);

    double tp_loss = 0.0, fp = 0.0, fg_err_sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] > 0.5) {
            const double e = std::min(err[i], blurred[i]);
            tp_loss += e;
            fg_err_sum += e;
        } else {
            const double importance = 2.0 - std::exp(std::log(0.5) / 5.0 * field.dist[i]);
            fp += err[i] * importance;
        }
    }
    const double tp = gt_sum - tp_loss;
    const double recall = 1.0 - fg_err_sum / gt_sum;
    const double precision = tp / (kEps + tp + fp);
    return clamp01(2.0 * recall * precision / (kEps + recall + precision));
}

double adaptive_emeasure(const ProbMap& pred, const BinaryMap& gt) {
    require_same_shape(pred, gt, "adaptive_emeasure");
    const std::size_t n = pred.size();
    double pm = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        pm += pred[i];
        gsum += gt[i];
    }
    const double thd = std::min(2.0 * pm / static_cast<double>(n), 1.0);
    std::vector<double> fm(n);
    double fsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fm[i] = pred[i] >= thd ? 1.0 : 0.0; // inclusive threshold
        fsum += fm[i];
    }

    double enhanced_sum = 0.0;
    if (gsum == 0.0) {
        for (std::size_t i = 0; i < n; ++i) enhanced_sum += 1.0 - fm[i];
    } else if (gsum == static_cast<double>(n)) {
        for (std::size_t i = 0; i < n; ++i) enhanced_sum += fm[i];
    } else {
        const double mu_f = fsum / static_cast<double>(n);
        const double mu_g = gsum / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double af = fm[i] - mu_f;
            const double ag = gt[i] - mu_g;
            const double align = 2.0 * ag * af / (ag * ag + af * af + kEps);
            enhanced_sum += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return clamp01(enhanced_sum / (static_cast<double>(n) - 1.0 + kEps));
}

double smeasure(const ProbMap& pred, const BinaryMap& gt, double alpha) {
    require_same_shape(pred, gt, "smeasure");
    double gsum = 0.0, pm = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        gsum += gt[i];
        pm += pred[i];
    }
    const double n = static_cast<double>(gt.size());
    if (gsum == 0.0) return clamp01(1.0 - pm / n);
    if (gsum == n) return clamp01(pm / n);
    const double q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
    return clamp01(q);
}

MetricRow evaluate_one(const ProbMap& pred, const BinaryMap& gt) {
    MetricRow row;
    row.mae = mae(pred, gt);
    row.f_beta_w = weighted_fmeasure(pred, gt);
    row.e_phi = adaptive_emeasure(pred, gt);
    row.s_alpha = smeasure(pred, gt);
    row.sample_count = 1;
    return row;
}

MetricRow average(const std::vector<MetricRow>& rows) {
    MetricRow out;
    if (rows.empty()) return out;
    for (const auto& r : rows) {
        out.mae += r.mae;
        out.f_beta_w += r.f_beta_w;
        out.e_phi += r.e_phi;
        out.s_alpha += r.s_alpha;
        out.sample_count += r.sample_count;
    }
    const double n = static_cast<double>(rows.size());
    out.mae /= n;
    out.f_beta_w /= n;
    out.e_phi /= n;
    out.s_alpha /= n;
    return out;
}

} // namespace residiff::metrics
