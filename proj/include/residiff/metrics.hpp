#pragma once

#include "residiff/grid.hpp"

#include <string>
#include <vector>

namespace residiff::metrics {

struct MetricRow {
    double mae = 0.0;
    double f_beta_w = 0.0;
    double e_phi = 0.0;
    double s_alpha = 0.0;
    int sample_count = 0;
};

double mae(const ProbMap& pred, const BinaryMap& gt);

// Boundary-aware F-measure: errors are propagated along foreground dependency
// (Gaussian-blurred, nearest-foreground substitution on the background) and
// scaled by a distance-decayed importance term; beta^2 = 1. Equidistant
// nearest-foreground ties are resolved by averaging, which keeps the measure
// symmetric under flips. Empty ground truth returns 0.
double weighted_fmeasure(const ProbMap& pred, const BinaryMap& gt);

// Enhanced-alignment measure on the map binarized at min(2*mean(pred), 1).
// Degenerate ground truths fall back to the intersection-only branches.
double adaptive_emeasure(const ProbMap& pred, const BinaryMap& gt);

// Structure measure: alpha * object-level + (1-alpha) * region-level about the
// ground-truth centroid. Empty gt returns 1 - mean(pred); full gt returns mean(pred).
double smeasure(const ProbMap& pred, const BinaryMap& gt, double alpha = 0.5);

MetricRow evaluate_one(const ProbMap& pred, const BinaryMap& gt);

// Plain mean of per-sample rows.
MetricRow average(const std::vector<MetricRow>& rows);

} // namespace residiff::metrics
