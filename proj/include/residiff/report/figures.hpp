#pragma once

#include "residiff/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace residiff::report {

// Grouped bar chart of coarse vs refined metric values.
void render_metrics_bar(const std::filesystem::path& out_png, const metrics::MetricRow& coarse,
                        const metrics::MetricRow& refined);

// Loss curves from logs.csv (total loss per logged step, one line per stage).
void render_loss_curves(const std::filesystem::path& logs_csv,
                        const std::filesystem::path& out_png);

} // namespace residiff::report
