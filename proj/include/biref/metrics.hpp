#ifndef BIREF_METRICS_HPP
#define BIREF_METRICS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace biref {

// Minimal dense grayscale map; values in [0,1] for predictions, {0,1} for GT.
// Metrics are computed in double precision and are torch-free.
struct GrayMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major

    GrayMap() = default;
    GrayMap(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}
    double& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return values.size(); }
};

struct MetricConfig {
    double alpha = 0.5;      // S-measure mixing
    double beta2 = 0.3;      // F-measure beta^2 for the threshold sweep
    double beta2_weighted = 1.0;  // weighted F-measure beta^2
    int thresholds = 256;    // sweep levels for F/E curves
    int hce_gamma = 5;       // HCE erosion tolerance
    double hce_epsilon = 2.0;  // polygon simplification deviation, px

    void validate() const;
};

struct FMeasures {
    double max_f = 0.0;
    double mean_f = 0.0;
    double weighted_f = 0.0;
};

struct EMeasures {
    double max_e = 0.0;
    double mean_e = 0.0;
};

// Structure measure S_alpha = alpha*S_o + (1-alpha)*S_r. gt must be binary.
double s_measure(const GrayMap& pred, const GrayMap& gt, double alpha = 0.5);

// Threshold-sweep max/mean F plus the dependency-weighted F.
FMeasures f_measures(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg = {});

// Enhanced-alignment measure, max and mean over the threshold sweep.
EMeasures e_measures(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg = {});

// Mean absolute error, no thresholding.
double mae(const GrayMap& pred, const GrayMap& gt);

// Approximate human-correction-effort count: gamma-erosion of FP/FN regions,
// then one click per surviving component plus its dominant boundary vertices
// (polygon simplification at cfg.hce_epsilon deviation). Reported as
// "hce_approx" to avoid implying comparability with published HCE numbers.
int64_t relax_hce(const GrayMap& pred, const GrayMap& gt, const MetricConfig& cfg = {});

struct ImageMetrics {
    std::string id;
    double sm = 0.0, fmax = 0.0, fmean = 0.0, fw = 0.0;
    double emax = 0.0, emean = 0.0, mae = 0.0;
    int64_t hce = 0;
};

struct MetricReport {
    MetricConfig config;
    std::vector<ImageMetrics> per_image;
    ImageMetrics summary;       // arithmetic means; hce field holds the mean (rounded)
    int64_t hce_sum = 0;
    int evaluated = 0;
    std::vector<std::string> unpaired;  // stems missing a counterpart
};

ImageMetrics compute_all(const GrayMap& pred, const GrayMap& gt,
                         const MetricConfig& cfg, const std::string& id = "");

// Pairs prediction/GT files by stem, resizes predictions bilinearly to the
// GT size, computes all metrics per image and aggregates. Unpaired stems are
// recorded and excluded.
MetricReport evaluate_corpus(const std::filesystem::path& pred_dir,
                             const std::filesystem::path& gt_dir,
                             const MetricConfig& cfg = {});

void write_report_json(const MetricReport& report, const std::filesystem::path& path);
// Column order follows the usual table layout: Fbx, Fbw, MAE, Sm, Em, HCE.
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace biref

#endif
