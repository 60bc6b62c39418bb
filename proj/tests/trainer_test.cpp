#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <filesystem>

#include "biref/trainer.hpp"

// doctest last so its CHECK macro wins over c10's
#include <doctest.h>

using namespace biref;
namespace fs = std::filesystem;

namespace {

Corpus tiny_corpus(uint64_t seed, int count = 8) {
    SyntheticSpec spec;
    spec.count = count;
    spec.height = 32;
    spec.width = 32;
    spec.seed = seed;
    return generate_synthetic_corpus(spec);
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.stage_widths = {4, 6, 8, 12};
    cfg.height = 32;
    cfg.width = 32;
    return cfg;
}

TrainConfig tiny_train(int epochs = 2) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.height = 32;
    cfg.width = 32;
    cfg.rlft = false;
    cfg.seed = 1;
    return cfg;
}

}  // namespace

TEST_CASE("train config validation and finetune epoch resolution") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.resolved_finetune_epochs() == 2);  // ceil(40/30)
    cfg.epochs = 30;
    CHECK(cfg.resolved_finetune_epochs() == 1);
    cfg.epochs = 61;
    CHECK(cfg.resolved_finetune_epochs() == 3);
    cfg.finetune_epochs = 5;
    CHECK(cfg.resolved_finetune_epochs() == 5);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("training runs the expected number of steps and logs them") {
    auto train_c = tiny_corpus(1);
    auto val_c = tiny_corpus(2, 4);
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train());
    // 8 samples, batch 4: 2 steps per epoch, 2 epochs
    CHECK(result.log.steps.size() == 4);
    CHECK(result.log.epochs.size() == 2);
    CHECK(result.log.wall_seconds > 0.0);
    for (const auto& e : result.log.epochs) {
        CHECK(std::isfinite(e.mean_total));
        CHECK(e.val_fmax >= 0.0);
        CHECK(e.val_fmax <= 1.0);
        CHECK(!e.finetune_phase);
    }
    // hybrid terms all present in the step breakdowns
    for (const auto& s : result.log.steps) {
        CHECK(s.per_term.count("bce"));
        CHECK(s.per_term.count("iou"));
        CHECK(s.per_term.count("ssim"));
        CHECK(s.per_term.count("ce"));
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto train_c = tiny_corpus(1);
    auto val_c = tiny_corpus(2, 4);
    auto a = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train());
    auto b = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train());
    REQUIRE(a.log.steps.size() == b.log.steps.size());
    for (size_t i = 0; i < a.log.steps.size(); ++i)
        CHECK(a.log.steps[i].total == doctest::Approx(b.log.steps[i].total).epsilon(1e-10));
    auto cfg2 = tiny_train();
    cfg2.seed = 99;
    auto c = train(train_c, val_c, tiny_model(), LossConfig{}, cfg2);
    CHECK(a.log.steps[0].total != doctest::Approx(c.log.steps[0].total));
}

TEST_CASE("rlft switches the tail epochs to the region objective") {
    auto train_c = tiny_corpus(1);
    auto val_c = tiny_corpus(2, 4);
    TrainConfig cfg = tiny_train(3);
    cfg.rlft = true;
    cfg.finetune_epochs = 1;
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, cfg);
    REQUIRE(result.log.epochs.size() == 3);
    CHECK(!result.log.epochs[0].finetune_phase);
    CHECK(!result.log.epochs[1].finetune_phase);
    CHECK(result.log.epochs[2].finetune_phase);
    // finetune steps report only the iou term
    const auto& last = result.log.steps.back();
    CHECK(last.per_term.count("iou"));
    CHECK(!last.per_term.count("bce"));
}

TEST_CASE("mss off zeroes the stage supervision") {
    auto train_c = tiny_corpus(1);
    auto val_c = tiny_corpus(2, 4);
    TrainConfig cfg = tiny_train(1);
    cfg.mss = false;
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, cfg);
    for (const auto& s : result.log.steps)
        for (const auto& [k, v] : s.per_stage)
            if (k != "final") CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("checkpoints and finetune resumption") {
    auto train_c = tiny_corpus(1);
    auto val_c = tiny_corpus(2, 4);
    fs::path out = fs::temp_directory_path() / "biref_trainer_test";
    fs::remove_all(out);
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train(1), out);
    REQUIRE(fs::exists(result.checkpoint));
    auto meta = peek_checkpoint(result.checkpoint);
    CHECK(meta.epoch == 1);
    CHECK(meta.model_config.stage_widths == tiny_model().stage_widths);

    TrainConfig ft = tiny_train(1);
    auto ft_result = finetune(result.checkpoint, train_c, val_c, ft, out / "ft");
    CHECK(ft_result.log.steps.size() == 2);
    CHECK(fs::exists(ft_result.checkpoint));
    for (const auto& e : ft_result.log.epochs) CHECK(e.finetune_phase);
    fs::remove_all(out);
}

TEST_CASE("zero finetune epochs is a no-op pass that still checkpoints") {
    auto train_c = tiny_corpus(1, 4);
    auto val_c = tiny_corpus(2, 4);
    fs::path out = fs::temp_directory_path() / "biref_trainer_noop";
    fs::remove_all(out);
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train(1), out);
    TrainConfig ft = tiny_train(1);
    ft.epochs = 0;
    auto ft_result = finetune(result.checkpoint, train_c, val_c, ft, out / "ft");
    CHECK(ft_result.log.steps.empty());
    CHECK(fs::exists(ft_result.checkpoint));
    fs::remove_all(out);
}

TEST_CASE("runlog round-trips through json lines") {
    auto train_c = tiny_corpus(1, 4);
    auto val_c = tiny_corpus(2, 4);
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, tiny_train(1));
    fs::path path = fs::temp_directory_path() / "biref_runlog.jsonl";
    write_runlog(result.log, path);
    auto loaded = read_runlog(path);
    REQUIRE(loaded.steps.size() == result.log.steps.size());
    REQUIRE(loaded.epochs.size() == result.log.epochs.size());
    CHECK(loaded.seed == result.log.seed);
    for (size_t i = 0; i < loaded.steps.size(); ++i)
        CHECK(loaded.steps[i].total == doctest::Approx(result.log.steps[i].total));
    for (size_t i = 0; i < loaded.epochs.size(); ++i) {
        CHECK(loaded.epochs[i].val_fmax == doctest::Approx(result.log.epochs[i].val_fmax));
        CHECK(loaded.epochs[i].finetune_phase == result.log.epochs[i].finetune_phase);
    }
    fs::remove(path);
}

TEST_CASE("evaluate_model scores a corpus at native gt resolution") {
    torch::manual_seed(0);
    SegNet net(tiny_model());
    auto corpus = tiny_corpus(3, 4);
    auto report = evaluate_model(net, corpus, 32, 32);
    CHECK(report.evaluated == 4);
    CHECK(report.summary.fmax >= 0.0);
    CHECK(report.summary.fmax <= 1.0);
    CHECK(report.summary.mae >= 0.0);
    CHECK(report.summary.mae <= 1.0);
    // limit caps the evaluated count
    auto limited = evaluate_model(net, corpus, 32, 32, {}, 2);
    CHECK(limited.evaluated == 2);
}

TEST_CASE("inference writes one map per image at the source size") {
    auto corpus = tiny_corpus(4, 3);
    fs::path out = fs::temp_directory_path() / "biref_infer_test";
    fs::remove_all(out);
    save_corpus(corpus, out / "data", "train");
    torch::manual_seed(0);
    SegNet net(tiny_model());
    CheckpointMeta meta;
    meta.model_config = tiny_model();
    save_checkpoint(net, meta, out / "model.pt");
    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(out / "data" / "train" / "im"))
        images.push_back(e.path());
    int n = infer(out / "model.pt", images, out / "maps");
    CHECK(n == 3);
    int written = 0;
    for (const auto& e : fs::directory_iterator(out / "maps"))
        if (e.path().extension() == ".png") ++written;
    CHECK(written == 3);
    fs::remove_all(out);
}

TEST_CASE("stage gradient targets match the prediction pyramid") {
    torch::manual_seed(1);
    SegNet net(tiny_model());
    net->eval();
    torch::NoGradGuard ng;
    auto images = torch::rand({2, 3, 32, 32});
    auto preds = net->forward(images);
    auto targets = stage_gradient_targets(images, preds, 2);
    REQUIRE(targets.size() == preds.stage_grads.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        CHECK(targets[i].sizes() == preds.stage_grads[i].sizes());
        CHECK(targets[i].min().item<float>() >= 0.0f);
        CHECK(targets[i].max().item<float>() <= 1.0f + 1e-5f);
    }
}

TEST_CASE("ablation table trains each variant per seed and reports medians") {
    auto train_c = tiny_corpus(1, 4);
    auto val_c = tiny_corpus(2, 4);
    std::vector<AblationVariant> variants = {
        {"base", [](ModelConfig&, LossConfig&, TrainConfig&) {}},
        {"no_inref", [](ModelConfig& m, LossConfig&, TrainConfig&) { m.use_inref = false; }},
    };
    auto table = ablate(variants, train_c, val_c, tiny_model(), LossConfig{}, tiny_train(1),
                        {1, 2, 3});
    CHECK(table.rows.size() == 6);
    REQUIRE(table.medians.size() == 2);
    CHECK(table.medians[0].name == "base");
    CHECK(table.medians[1].name == "no_inref");
    // median of three equals the middle per-seed value
    std::vector<double> base_f;
    for (const auto& r : table.rows)
        if (r.name == "base") base_f.push_back(r.fmax);
    std::sort(base_f.begin(), base_f.end());
    CHECK(table.medians[0].fmax == doctest::Approx(base_f[1]));

    fs::path csv = fs::temp_directory_path() / "biref_ablation.csv";
    write_ablation_csv(table, csv);
    CHECK(fs::exists(csv));
    auto text = format_ablation_table(table);
    CHECK(text.find("base") != std::string::npos);
    CHECK(text.find("no_inref") != std::string::npos);
    fs::remove(csv);
}

TEST_CASE("divergence stops training instead of looping on nan") {
    auto train_c = tiny_corpus(1, 4);
    auto val_c = tiny_corpus(2, 4);
    TrainConfig cfg = tiny_train(3);
    cfg.learning_rate = 1e10;  // drives the loss non-finite almost immediately
    auto result = train(train_c, val_c, tiny_model(), LossConfig{}, cfg);
    CHECK(result.log.epochs.size() <= 3);
    for (const auto& s : result.log.steps) CHECK(std::isfinite(s.total));
}
