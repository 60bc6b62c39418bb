#include "biref/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "biref/references.hpp"

namespace biref {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using json = nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (finetune_epochs > epochs)
        throw std::invalid_argument("finetune epochs cannot exceed total epochs");
    if (learning_rate <= 0) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (height % 32 != 0 || width % 32 != 0)
        throw std::invalid_argument("training resolution must be divisible by 32");
}

int TrainConfig::resolved_finetune_epochs() const {
    if (finetune_epochs >= 0) return std::min(finetune_epochs, epochs);
    return std::min(epochs, int(std::ceil(epochs / 30.0)));  // 20 of 600
}

std::vector<torch::Tensor> stage_gradient_targets(const torch::Tensor& images,
                                                  const PredictionSet& preds, int base_radius) {
    torch::NoGradGuard no_grad;
    const auto B = images.size(0);
    std::vector<torch::Tensor> full;
    for (int64_t b = 0; b < B; ++b) full.push_back(gradient_map(images[b]).unsqueeze(0));
    auto grad_full = torch::stack(full, 0);  // [B,1,H,W]

    std::vector<torch::Tensor> targets;
    int radius = base_radius;
    for (size_t s = 0; s < preds.stage_maps.size(); ++s) {
        const auto& m = preds.stage_maps[s];
        auto g = F::interpolate(grad_full, F::InterpolateFuncOptions()
                                               .size(std::vector<int64_t>{m.size(2), m.size(3)})
                                               .mode(torch::kArea));
        std::vector<torch::Tensor> masked;
        for (int64_t b = 0; b < B; ++b) {
            auto mg = masked_gradient(g[b][0], m[b][0].detach(), radius);
            masked.push_back(mg.values.unsqueeze(0).unsqueeze(0));
        }
        targets.push_back(torch::cat(masked, 0));
        radius *= 2;  // stage resolution doubles
    }
    return targets;
}

namespace {

std::vector<int64_t> shuffled_indices(int64_t n, std::mt19937_64& rng) {
    std::vector<int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

}  // namespace

MetricReport evaluate_model(SegNet& model, const Corpus& corpus, int height, int width,
                            const MetricConfig& mcfg, int limit) {
    torch::NoGradGuard no_grad;
    const bool was_training = model->is_training();
    model->eval();
    MetricReport report;
    report.config = mcfg;
    const int64_t n = limit < 0 ? corpus.size() : std::min<int64_t>(limit, corpus.size());
    double s_sm = 0, s_fx = 0, s_fm = 0, s_fw = 0, s_ex = 0, s_em = 0, s_mae = 0;
    std::mt19937_64 dummy(0);
    for (int64_t i = 0; i < n; ++i) {
        auto batch = make_batch(corpus, {i}, height, width, false, dummy);
        auto preds = model->forward(batch.images);
        const auto& s = corpus.samples[size_t(i)];
        const auto gh = s.gt.size(1), gw = s.gt.size(2);
        auto pred = F::interpolate(preds.final_map, F::InterpolateFuncOptions()
                                                        .size(std::vector<int64_t>{gh, gw})
                                                        .mode(torch::kBilinear)
                                                        .align_corners(false))
                        .squeeze(0)
                        .squeeze(0)
                        .to(torch::kFloat64)
                        .contiguous();
        GrayMap pm{int(gh), int(gw)}, gm{int(gh), int(gw)};
        std::memcpy(pm.values.data(), pred.data_ptr<double>(), pm.size() * sizeof(double));
        auto gt64 = s.gt.squeeze(0).to(torch::kFloat64).contiguous();
        std::memcpy(gm.values.data(), gt64.data_ptr<double>(), gm.size() * sizeof(double));
        auto m = compute_all(pm, gm, mcfg, s.id);
        report.per_image.push_back(m);
        s_sm += m.sm;
        s_fx += m.fmax;
        s_fm += m.fmean;
        s_fw += m.fw;
        s_ex += m.emax;
        s_em += m.emean;
        s_mae += m.mae;
        report.hce_sum += m.hce;
        report.evaluated++;
    }
    if (report.evaluated > 0) {
        double dn = report.evaluated;
        report.summary.id = "mean";
        report.summary.sm = s_sm / dn;
        report.summary.fmax = s_fx / dn;
        report.summary.fmean = s_fm / dn;
        report.summary.fw = s_fw / dn;
        report.summary.emax = s_ex / dn;
        report.summary.emean = s_em / dn;
        report.summary.mae = s_mae / dn;
        report.summary.hce = int64_t(std::llround(double(report.hce_sum) / dn));
    }
    if (was_training) model->train();
    return report;
}

namespace {

TrainResult run_training(SegNet model, int start_epoch, const Corpus& train_corpus,
                         const Corpus& val_corpus, LossConfig loss_cfg, const TrainConfig& cfg,
                         bool finetune_only,
                         const std::optional<fs::path>& out_dir) {
    cfg.validate();
    loss_cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    if (train_corpus.size() == 0) throw std::invalid_argument("training corpus is empty");

    if (!cfg.mss) std::fill(loss_cfg.stage_weights.begin(), loss_cfg.stage_weights.end(), 0.0);
    if (!model->config.use_outref) loss_cfg.gradient_weight = 0.0;

    TrainResult result;
    result.log.seed = cfg.seed;
    torch::optim::Adam optimizer(model->parameters(),
                                 torch::optim::AdamOptions(cfg.learning_rate));
    std::mt19937_64 data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    const int finetune_from =
        finetune_only ? start_epoch : start_epoch + cfg.epochs - (cfg.rlft ? cfg.resolved_finetune_epochs() : 0);

    auto save_ckpt = [&](int epoch, const std::string& name) {
        if (!out_dir) return fs::path{};
        fs::create_directories(*out_dir);
        CheckpointMeta meta;
        meta.epoch = epoch;
        meta.rng_state = data_rng();
        meta.model_config = model->config;
        fs::path p = *out_dir / name;
        save_checkpoint(model, meta, p);
        return p;
    };

    fs::path last_good = save_ckpt(start_epoch, "model_last.pt");
    bool diverged = false;

    for (int epoch = start_epoch; epoch < start_epoch + cfg.epochs && !diverged; ++epoch) {
        model->train();
        const bool finetune_phase = finetune_only || epoch >= finetune_from;
        auto order = shuffled_indices(train_corpus.size(), data_rng);
        double epoch_total = 0;
        int steps = 0;
        for (size_t ofs = 0; ofs < order.size(); ofs += size_t(cfg.batch_size)) {
            std::vector<int64_t> idx(order.begin() + ofs,
                                     order.begin() + std::min(order.size(), ofs + cfg.batch_size));
            auto batch = make_batch(train_corpus, idx, cfg.height, cfg.width, cfg.flip_augment,
                                    data_rng);
            auto preds = model->forward(batch.images);
            LossTargets targets;
            targets.gt = batch.gts;
            targets.labels = batch.labels;
            if (loss_cfg.gradient_weight > 0.0)
                targets.stage_grad_gts =
                    stage_gradient_targets(batch.images, preds, loss_cfg.dilation_radius);

            torch::Tensor loss;
            LossBreakdown breakdown;
            if (finetune_phase) {
                loss = finetune_loss(preds, targets);
                breakdown.total = loss.item<double>();
                breakdown.per_term["iou"] = breakdown.total;
            } else {
                auto hybrid = hybrid_loss(preds, targets, loss_cfg);
                loss = hybrid.total;
                breakdown = hybrid.breakdown;
            }
            if (!std::isfinite(loss.item<double>())) {
                std::cerr << "training diverged (non-finite loss); stopping at last checkpoint\n";
                diverged = true;
                break;
            }
            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
            result.log.steps.push_back(breakdown);
            epoch_total += breakdown.total;
            ++steps;
        }
        if (diverged) break;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.finetune_phase = finetune_phase;
        rec.mean_total = steps ? epoch_total / steps : 0.0;
        if (val_corpus.size() > 0) {
            auto report = evaluate_model(model, val_corpus, cfg.height, cfg.width, MetricConfig{},
                                         cfg.val_limit);
            rec.val_fmax = report.summary.fmax;
            rec.val_fw = report.summary.fw;
            rec.val_mae = report.summary.mae;
        }
        result.log.epochs.push_back(rec);
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_ckpt(epoch + 1, "model_epoch" + std::to_string(epoch + 1) + ".pt");
        last_good = save_ckpt(epoch + 1, "model_last.pt");
    }

    result.checkpoint = save_ckpt(start_epoch + cfg.epochs, "model_final.pt");
    if (result.checkpoint.empty()) result.checkpoint = last_good;
    result.model = model;
    result.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out_dir) write_runlog(result.log, *out_dir / "runlog.jsonl");
    return result;
}

}  // namespace

TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& cfg, const std::optional<fs::path>& out_dir) {
    cfg.validate();
    torch::manual_seed(cfg.seed);
    ModelConfig mc = model_cfg;
    mc.height = cfg.height;
    mc.width = cfg.width;
    SegNet model(mc);
    return run_training(model, 0, train_corpus, val_corpus, loss_cfg, cfg, false, out_dir);
}

TrainResult finetune(const fs::path& checkpoint, const Corpus& corpus, const Corpus& val_corpus,
                     const TrainConfig& cfg, const std::optional<fs::path>& out_dir) {
    cfg.validate();
    torch::manual_seed(cfg.seed);
    auto meta = peek_checkpoint(checkpoint);
    SegNet model(meta.model_config);
    load_checkpoint(model, checkpoint);
    TrainConfig fcfg = cfg;
    fcfg.height = meta.model_config.height;
    fcfg.width = meta.model_config.width;
    return run_training(model, meta.epoch, corpus, val_corpus, LossConfig{}, fcfg, true, out_dir);
}

int infer(const fs::path& checkpoint, const std::vector<fs::path>& images,
          const fs::path& out_dir) {
    auto meta = peek_checkpoint(checkpoint);
    SegNet model(meta.model_config);
    load_checkpoint(model, checkpoint);
    model->eval();
    torch::NoGradGuard no_grad;
    fs::create_directories(out_dir);
    int written = 0;
    for (const auto& path : images) {
        cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (img.empty()) {
            std::cerr << "warning: skipping unreadable image " << path << "\n";
            continue;
        }
        cv::Mat rgb;
        cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
        rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
        auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kFloat32)
                     .permute({2, 0, 1})
                     .unsqueeze(0)
                     .clone();
        if (t.size(2) != meta.model_config.height || t.size(3) != meta.model_config.width)
            t = F::interpolate(t, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{meta.model_config.height,
                                                                 meta.model_config.width})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
        auto pred = model->forward(t).final_map;
        if (pred.size(2) != img.rows || pred.size(3) != img.cols)
            pred = F::interpolate(pred, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{img.rows, img.cols})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
        auto bytes = (pred.squeeze(0).squeeze(0) * 255.0).clamp(0, 255).to(torch::kUInt8).contiguous();
        cv::Mat out(img.rows, img.cols, CV_8UC1, bytes.data_ptr<uint8_t>());
        cv::imwrite((out_dir / (path.stem().string() + ".png")).string(), out);
        ++written;
    }
    return written;
}

AblationTable ablate(const std::vector<AblationVariant>& variants, const Corpus& train_corpus,
                     const Corpus& val_corpus, const ModelConfig& model_cfg,
                     const LossConfig& loss_cfg, const TrainConfig& base_cfg,
                     const std::vector<uint64_t>& seeds) {
    AblationTable table;
    for (const auto& variant : variants) {
        std::vector<AblationRow> rows;
        for (uint64_t seed : seeds) {
            ModelConfig mc = model_cfg;
            LossConfig lc = loss_cfg;
            TrainConfig tc = base_cfg;
            variant.apply(mc, lc, tc);
            tc.seed = seed;
            auto result = train(train_corpus, val_corpus, mc, lc, tc);
            auto report = evaluate_model(result.model, val_corpus, tc.height, tc.width);
            AblationRow row;
            row.name = variant.name;
            row.seed = seed;
            row.fmax = report.summary.fmax;
            row.fw = report.summary.fw;
            row.sm = report.summary.sm;
            row.mae = report.summary.mae;
            row.epochs = tc.epochs;
            rows.push_back(row);
            table.rows.push_back(row);
        }
        auto median_of = [&](auto pick) {
            std::vector<double> v;
            for (const auto& r : rows) v.push_back(pick(r));
            std::sort(v.begin(), v.end());
            size_t n = v.size();
            return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        };
        AblationRow med;
        med.name = variant.name;
        med.seed = 0;
        med.fmax = median_of([](const AblationRow& r) { return r.fmax; });
        med.fw = median_of([](const AblationRow& r) { return r.fw; });
        med.sm = median_of([](const AblationRow& r) { return r.sm; });
        med.mae = median_of([](const AblationRow& r) { return r.mae; });
        med.epochs = rows.empty() ? 0 : rows.front().epochs;
        table.medians.push_back(med);
    }
    return table;
}

// ------------------------------------------------------------------ logs

void write_runlog(const RunLog& log, const fs::path& path) {
    std::ofstream out(path);
    out << json{{"type", "run"}, {"seed", log.seed}, {"wall_seconds", log.wall_seconds}}.dump()
        << "\n";
    int step = 0;
    for (const auto& b : log.steps) {
        json j{{"type", "step"}, {"step", step++}, {"total", b.total}};
        j["terms"] = b.per_term;
        j["stages"] = b.per_stage;
        out << j.dump() << "\n";
    }
    for (const auto& e : log.epochs) {
        out << json{{"type", "epoch"},   {"epoch", e.epoch},
                    {"mean_total", e.mean_total}, {"finetune", e.finetune_phase},
                    {"val_fmax", e.val_fmax},     {"val_fw", e.val_fw},
                    {"val_mae", e.val_mae}}
                   .dump()
            << "\n";
    }
}

RunLog read_runlog(const fs::path& path) {
    RunLog log;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open runlog: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const std::string type = j.at("type").get<std::string>();
        if (type == "run") {
            log.seed = j.at("seed").get<uint64_t>();
            log.wall_seconds = j.at("wall_seconds").get<double>();
        } else if (type == "step") {
            LossBreakdown b;
            b.total = j.at("total").get<double>();
            for (auto& [k, v] : j.at("terms").items()) b.per_term[k] = v.get<double>();
            for (auto& [k, v] : j.at("stages").items()) b.per_stage[k] = v.get<double>();
            log.steps.push_back(b);
        } else if (type == "epoch") {
            EpochRecord e;
            e.epoch = j.at("epoch").get<int>();
            e.mean_total = j.at("mean_total").get<double>();
            e.finetune_phase = j.at("finetune").get<bool>();
            e.val_fmax = j.at("val_fmax").get<double>();
            e.val_fw = j.at("val_fw").get<double>();
            e.val_mae = j.at("val_mae").get<double>();
            log.epochs.push_back(e);
        }
    }
    return log;
}

void write_ablation_csv(const AblationTable& table, const fs::path& path) {
    std::ofstream out(path);
    out << "variant,seed,epochs,fmax,fw,sm,mae\n";
    for (const auto& r : table.rows)
        out << r.name << "," << r.seed << "," << r.epochs << "," << r.fmax << "," << r.fw << ","
            << r.sm << "," << r.mae << "\n";
    for (const auto& r : table.medians)
        out << r.name << ",median," << r.epochs << "," << r.fmax << "," << r.fw << "," << r.sm
            << "," << r.mae << "\n";
}

std::string format_ablation_table(const AblationTable& table) {
    std::ostringstream out;
    out << std::left << std::setw(28) << "variant" << std::right << std::setw(8) << "seed"
        << std::setw(9) << "Fbx" << std::setw(9) << "Fbw" << std::setw(9) << "Sm" << std::setw(9)
        << "MAE" << "\n";
    auto line = [&](const AblationRow& r, const std::string& seed) {
        out << std::left << std::setw(28) << r.name << std::right << std::setw(8) << seed
            << std::fixed << std::setprecision(3) << std::setw(9) << r.fmax << std::setw(9)
            << r.fw << std::setw(9) << r.sm << std::setw(9) << r.mae << "\n";
    };
    for (const auto& r : table.rows) line(r, std::to_string(r.seed));
    for (const auto& r : table.medians) line(r, "median");
    return out.str();
}

}  // namespace biref
