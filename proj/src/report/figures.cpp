#include "residiff/report/figures.hpp"

#include "residiff/data/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>
#include <sstream>

namespace residiff::report {

namespace {
const cv::Scalar kCoarseColor(180, 120, 60);
const cv::Scalar kRefinedColor(60, 140, 220);
const cv::Scalar kText(30, 30, 30);
} // namespace

void render_metrics_bar(const std::filesystem::path& out_png, const metrics::MetricRow& coarse,
                        const metrics::MetricRow& refined) {
    const int w = 640, h = 420, base = h - 60, top = 40;
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(250, 250, 250));

    const char* names[4] = {"MAE", "wF", "E", "S"};
    const double cvals[4] = {coarse.mae, coarse.f_beta_w, coarse.e_phi, coarse.s_alpha};
    const double rvals[4] = {refined.mae, refined.f_beta_w, refined.e_phi, refined.s_alpha};

    for (int i = 0; i < 4; ++i) {
        const int x0 = 60 + i * 140;
        const double scale = static_cast<double>(base - top);
        const int hc = static_cast<int>(cvals[i] * scale);
        const int hr = static_cast<int>(rvals[i] * scale);
        cv::rectangle(img, {x0, base - hc}, {x0 + 40, base}, kCoarseColor, cv::FILLED);
        cv::rectangle(img, {x0 + 50, base - hr}, {x0 + 90, base}, kRefinedColor, cv::FILLED);
        cv::putText(img, names[i], {x0 + 18, base + 24}, cv::FONT_HERSHEY_SIMPLEX, 0.6, kText, 1);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", cvals[i]);
        cv::putText(img, buf, {x0 - 6, base - hc - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.42, kText, 1);
        std::snprintf(buf, sizeof(buf), "%.3f", rvals[i]);
        cv::putText(img, buf, {x0 + 48, base - hr - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.42, kText, 1);
    }
    cv::rectangle(img, {60, 8}, {80, 24}, kCoarseColor, cv::FILLED);
    cv::putText(img, "coarse", {88, 22}, cv::FONT_HERSHEY_SIMPLEX, 0.55, kText, 1);
    cv::rectangle(img, {190, 8}, {210, 24}, kRefinedColor, cv::FILLED);
    cv::putText(img, "refined", {218, 22}, cv::FONT_HERSHEY_SIMPLEX, 0.55, kText, 1);

    std::filesystem::create_directories(out_png.parent_path());
    if (!cv::imwrite(out_png.string(), img))
        throw data::DataError("failed to write figure " + out_png.string());
}

void render_loss_curves(const std::filesystem::path& logs_csv,
                        const std::filesystem::path& out_png) {
    std::ifstream in(logs_csv);
    if (!in) throw data::DataError("missing logs: " + logs_csv.string());
    std::string line;
    std::getline(in, line); // header
    struct Point {
        std::string stage;
        double loss;
    };
    std::vector<Point> pts;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string stage, field;
        std::getline(ss, stage, ',');
        for (int i = 0; i < 3; ++i) std::getline(ss, field, ',');
        std::string total;
        std::getline(ss, total, ',');
        if (total.empty()) continue;
        pts.push_back({stage, std::stod(total)});
    }

    const int w = 760, h = 420, base = h - 40, top = 20, left = 60;
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(250, 250, 250));
    if (!pts.empty()) {
        double max_loss = 0.0;
        for (const auto& p : pts) max_loss = std::max(max_loss, p.loss);
        if (max_loss <= 0.0) max_loss = 1.0;
        const double sx = static_cast<double>(w - left - 20) / std::max<std::size_t>(1, pts.size() - 1);
        auto color_for = [](const std::string& stage) {
            if (stage == "stage1") return cv::Scalar(180, 120, 60);
            if (stage == "stage2") return cv::Scalar(60, 140, 220);
            return cv::Scalar(90, 180, 90);
        };
        for (std::size_t i = 1; i < pts.size(); ++i) {
            if (pts[i].stage != pts[i - 1].stage) continue;
            const cv::Point a(left + static_cast<int>((i - 1) * sx),
                              base - static_cast<int>(pts[i - 1].loss / max_loss * (base - top)));
            const cv::Point b(left + static_cast<int>(i * sx),
                              base - static_cast<int>(pts[i].loss / max_loss * (base - top)));
            cv::line(img, a, b, color_for(pts[i].stage), 1, cv::LINE_AA);
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", max_loss);
        cv::putText(img, buf, {4, top + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kText, 1);
        cv::putText(img, "0", {40, base}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kText, 1);
    }
    cv::putText(img, "training loss (logged steps)", {left, h - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                kText, 1);

    std::filesystem::create_directories(out_png.parent_path());
    if (!cv::imwrite(out_png.string(), img))
        throw data::DataError("failed to write figure " + out_png.string());
}

} // namespace residiff::report
