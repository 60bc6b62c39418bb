#include "biref/plots.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace biref {

using json = nlohmann::json;

namespace {

constexpr int kW = 960, kH = 600;
constexpr int kMarginL = 70, kMarginR = 160, kMarginT = 40, kMarginB = 50;

const std::vector<cv::Scalar> kPalette = {
    {180, 60, 40},  {40, 120, 200}, {40, 160, 60}, {30, 60, 200},
    {160, 40, 160}, {20, 140, 170}, {90, 90, 90},
};

struct Axes {
    cv::Mat canvas;
    double x0, x1, y0, y1;

    cv::Point map(double x, double y) const {
        double px = kMarginL + (x - x0) / std::max(1e-12, x1 - x0) * (kW - kMarginL - kMarginR);
        double py = kH - kMarginB - (y - y0) / std::max(1e-12, y1 - y0) * (kH - kMarginT - kMarginB);
        return {int(px), int(py)};
    }
};

Axes make_axes(double x0, double x1, double y0, double y1, const std::string& title,
               const std::string& xlabel, const std::string& ylabel) {
    Axes ax;
    ax.canvas = cv::Mat(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
    ax.x0 = x0;
    ax.x1 = x1;
    ax.y0 = y0;
    ax.y1 = y1;
    cv::rectangle(ax.canvas, ax.map(x0, y1), ax.map(x1, y0), {0, 0, 0}, 1);
    cv::putText(ax.canvas, title, {kMarginL, kMarginT - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
                {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(ax.canvas, xlabel, {kW / 2 - 40, kH - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(ax.canvas, ylabel, {8, kH / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1,
                cv::LINE_AA);
    char buf[64];
    for (int k = 0; k <= 4; ++k) {
        double y = y0 + (y1 - y0) * k / 4.0;
        auto p = ax.map(x0, y);
        std::snprintf(buf, sizeof buf, "%.3g", y);
        cv::putText(ax.canvas, buf, {6, p.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1,
                    cv::LINE_AA);
        cv::line(ax.canvas, p, ax.map(x1, y), {230, 230, 230}, 1);
    }
    for (int k = 0; k <= 4; ++k) {
        double x = x0 + (x1 - x0) * k / 4.0;
        auto p = ax.map(x, y0);
        std::snprintf(buf, sizeof buf, "%.3g", x);
        cv::putText(ax.canvas, buf, {p.x - 12, kH - kMarginB + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    {0, 0, 0}, 1, cv::LINE_AA);
    }
    return ax;
}

void draw_series(Axes& ax, const std::vector<double>& xs, const std::vector<double>& ys,
                 const cv::Scalar& color, const std::string& label, int slot) {
    for (size_t i = 1; i < xs.size(); ++i)
        cv::line(ax.canvas, ax.map(xs[i - 1], ys[i - 1]), ax.map(xs[i], ys[i]), color, 2,
                 cv::LINE_AA);
    int y = kMarginT + 20 * slot;
    cv::line(ax.canvas, {kW - kMarginR + 10, y}, {kW - kMarginR + 40, y}, color, 2);
    cv::putText(ax.canvas, label, {kW - kMarginR + 46, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                {0, 0, 0}, 1, cv::LINE_AA);
}

}  // namespace

void plot_loss_curves(const RunLog& log, const std::filesystem::path& out_png) {
    if (log.steps.empty()) throw std::invalid_argument("no steps");
    std::vector<std::string> terms;
    for (const auto& [k, v] : log.steps.front().per_term) terms.push_back(k);
    double ymax = 0;
    for (const auto& s : log.steps) ymax = std::max(ymax, s.total);
    auto ax = make_axes(0, double(log.steps.size() - 1), 0, std::max(1e-9, ymax * 1.05),
                        "loss per step", "step", "loss");
    std::vector<double> xs(log.steps.size());
    for (size_t i = 0; i < xs.size(); ++i) xs[i] = double(i);
    std::vector<double> total(log.steps.size());
    for (size_t i = 0; i < xs.size(); ++i) total[i] = log.steps[i].total;
    draw_series(ax, xs, total, {0, 0, 0}, "total", 0);
    int slot = 1;
    for (const auto& term : terms) {
        std::vector<double> ys(log.steps.size(), 0.0);
        for (size_t i = 0; i < ys.size(); ++i) {
            auto it = log.steps[i].per_term.find(term);
            if (it != log.steps[i].per_term.end()) ys[i] = it->second;
        }
        draw_series(ax, xs, ys, kPalette[size_t(slot - 1) % kPalette.size()], term, slot);
        ++slot;
    }
    cv::imwrite(out_png.string(), ax.canvas);
}

void plot_metric_curves(const RunLog& log, const std::filesystem::path& out_png) {
    if (log.epochs.empty()) throw std::invalid_argument("no epochs");
    auto ax = make_axes(double(log.epochs.front().epoch), double(log.epochs.back().epoch), 0.0,
                        1.0, "validation metrics per epoch", "epoch", "value");
    std::vector<double> xs, fx, fw, m;
    for (const auto& e : log.epochs) {
        xs.push_back(double(e.epoch));
        fx.push_back(e.val_fmax);
        fw.push_back(e.val_fw);
        m.push_back(e.val_mae);
    }
    draw_series(ax, xs, fx, kPalette[0], "Fbx", 0);
    draw_series(ax, xs, fw, kPalette[1], "Fbw", 1);
    draw_series(ax, xs, m, kPalette[2], "MAE", 2);
    cv::imwrite(out_png.string(), ax.canvas);
}

void plot_report_bars(const std::vector<MetricReport>& reports,
                      const std::vector<std::string>& names,
                      const std::filesystem::path& out_png) {
    if (reports.empty()) throw std::invalid_argument("no reports");
    const std::vector<std::string> metric_names = {"Fbx", "Fbw", "Sm", "Em", "MAE"};
    auto value = [](const MetricReport& r, size_t k) {
        switch (k) {
            case 0: return r.summary.fmax;
            case 1: return r.summary.fw;
            case 2: return r.summary.sm;
            case 3: return r.summary.emean;
            default: return r.summary.mae;
        }
    };
    auto ax = make_axes(0, double(reports.size()), 0, 1.0, "report comparison", "report", "value");
    const double group_w = 0.9, bar_w = group_w / double(metric_names.size());
    for (size_t g = 0; g < reports.size(); ++g) {
        for (size_t k = 0; k < metric_names.size(); ++k) {
            double x0 = double(g) + 0.05 + double(k) * bar_w;
            auto p0 = ax.map(x0, 0.0);
            auto p1 = ax.map(x0 + bar_w * 0.9, value(reports[g], k));
            cv::rectangle(ax.canvas, p0, p1, kPalette[k % kPalette.size()], cv::FILLED);
        }
        cv::putText(ax.canvas, g < names.size() ? names[g] : std::to_string(g),
                    ax.map(double(g) + 0.3, 0.0) + cv::Point(0, 20), cv::FONT_HERSHEY_SIMPLEX,
                    0.45, {0, 0, 0}, 1, cv::LINE_AA);
    }
    for (size_t k = 0; k < metric_names.size(); ++k) {
        int y = kMarginT + 20 * int(k);
        cv::rectangle(ax.canvas, {kW - kMarginR + 10, y - 6}, {kW - kMarginR + 40, y + 6},
                      kPalette[k % kPalette.size()], cv::FILLED);
        cv::putText(ax.canvas, metric_names[k], {kW - kMarginR + 46, y + 4},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    }
    cv::imwrite(out_png.string(), ax.canvas);
}

MetricReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path.string());
    json j = json::parse(in);
    MetricReport r;
    auto read_metrics = [](const json& m) {
        ImageMetrics im;
        im.id = m.at("id").get<std::string>();
        im.sm = m.at("sm").get<double>();
        im.fmax = m.at("fmax").get<double>();
        im.fmean = m.at("fmean").get<double>();
        im.fw = m.at("fw").get<double>();
        im.emax = m.at("emax").get<double>();
        im.emean = m.at("emean").get<double>();
        im.mae = m.at("mae").get<double>();
        im.hce = m.at("hce_approx").get<int64_t>();
        return im;
    };
    for (const auto& m : j.at("per_image")) r.per_image.push_back(read_metrics(m));
    r.summary = read_metrics(j.at("summary"));
    r.hce_sum = j.at("summary").at("hce_approx_sum").get<int64_t>();
    r.evaluated = j.at("evaluated").get<int>();
    for (const auto& u : j.at("unpaired")) r.unpaired.push_back(u.get<std::string>());
    return r;
}

}  // namespace biref
