#ifndef BIREF_PLOTS_HPP
#define BIREF_PLOTS_HPP

#include <filesystem>
#include <vector>

#include "biref/metrics.hpp"
#include "biref/trainer.hpp"

namespace biref {

// Per-term loss curves over steps; throws std::invalid_argument("no steps")
// for an empty log.
void plot_loss_curves(const RunLog& log, const std::filesystem::path& out_png);

// Validation metrics versus epoch.
void plot_metric_curves(const RunLog& log, const std::filesystem::path& out_png);

// Grouped bar chart of report summaries, one group per report.
void plot_report_bars(const std::vector<MetricReport>& reports,
                      const std::vector<std::string>& names,
                      const std::filesystem::path& out_png);

MetricReport read_report_json(const std::filesystem::path& path);

}  // namespace biref

#endif
