#ifndef BIREF_TRAINER_HPP
#define BIREF_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "biref/datasets.hpp"
#include "biref/losses.hpp"
#include "biref/metrics.hpp"
#include "biref/model.hpp"

namespace biref {

struct TrainConfig {
    int epochs = 40;
    int finetune_epochs = -1;   // -1: ceil(epochs/30), mirroring 20-of-600
    double learning_rate = 1e-4;
    int batch_size = 4;
    int height = 128;
    int width = 128;
    uint64_t seed = 0;
    bool mss = true;    // multi-stage supervision
    bool rlft = true;   // region-loss fine-tuning phase at the end
    int checkpoint_every = 0;   // epochs; 0 = final only
    int val_limit = 64;         // samples used for per-epoch validation
    bool flip_augment = true;

    void validate() const;
    int resolved_finetune_epochs() const;
};

struct EpochRecord {
    int epoch = 0;
    double mean_total = 0.0;
    bool finetune_phase = false;
    double val_fmax = 0.0;
    double val_fw = 0.0;
    double val_mae = 0.0;
};

struct RunLog {
    std::vector<LossBreakdown> steps;
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    uint64_t seed = 0;
};

struct TrainResult {
    SegNet model{nullptr};
    RunLog log;
    std::filesystem::path checkpoint;  // final checkpoint, when out_dir given
};

// Deterministic training loop (Adam, constant LR). When cfg.mss is off the
// stage weights are zeroed; when cfg.rlft is on the last finetune epochs use
// the IoU-only objective. Non-finite loss aborts with the last checkpoint.
TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Resumes a checkpoint and optimizes the region-only objective.
TrainResult finetune(const std::filesystem::path& checkpoint,
                     const Corpus& corpus, const Corpus& val_corpus,
                     const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Eval-mode inference: forward at the training resolution, bilinear resize to
// each source's original size, 8-bit grayscale PNG per image. Returns the
// number of images written.
int infer(const std::filesystem::path& checkpoint,
          const std::vector<std::filesystem::path>& images,
          const std::filesystem::path& out_dir);

// Runs the model over a corpus and reports metrics against its GT.
MetricReport evaluate_model(SegNet& model, const Corpus& corpus, int height, int width,
                            const MetricConfig& mcfg = {}, int limit = -1);

struct AblationRow {
    std::string name;
    uint64_t seed = 0;
    double fmax = 0.0, fw = 0.0, sm = 0.0, mae = 0.0;
    int epochs = 0;
};

struct AblationVariant {
    std::string name;
    std::function<void(ModelConfig&, LossConfig&, TrainConfig&)> apply;
};

struct AblationTable {
    std::vector<AblationRow> rows;                 // one per variant x seed
    std::vector<AblationRow> medians;              // one per variant
};

// Trains each variant with a shared seed set, evaluates on the held-out
// corpus and tabulates per-seed and median scores.
AblationTable ablate(const std::vector<AblationVariant>& variants,
                     const Corpus& train_corpus, const Corpus& val_corpus,
                     const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                     const TrainConfig& base_cfg, const std::vector<uint64_t>& seeds);

void write_runlog(const RunLog& log, const std::filesystem::path& path);  // JSON lines
RunLog read_runlog(const std::filesystem::path& path);
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);
std::string format_ablation_table(const AblationTable& table);

// Per-stage masked gradient ground truth for a batch: full-resolution Sobel
// map, area-downsampled to each stage resolution, masked by the dilated
// detached stage prediction.
std::vector<torch::Tensor> stage_gradient_targets(const torch::Tensor& images,
                                                  const PredictionSet& preds,
                                                  int base_radius);

}  // namespace biref

#endif
