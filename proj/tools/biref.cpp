// Command-line entry point: data generation, training, evaluation,
// inference, ablations and plots.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "biref/config.hpp"
#include "biref/plots.hpp"

namespace fs = std::filesystem;
using namespace biref;

namespace {

constexpr int kOk = 0, kRuntimeError = 1, kValidationError = 2;

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    int verbosity = 0;
};

void add_common(CLI::App* cmd, Common& common, const std::string& default_out) {
    cmd->add_option("--config", common.config_path, "YAML config file");
    cmd->add_option("--set", common.overrides,
                    "dotted-key override, e.g. train.epochs=10 (wins over the file)");
    std::string fallback = default_out;
    if (const char* root = std::getenv("BIREF_OUT_ROOT"))
        fallback = (fs::path(root) / fs::path(default_out).filename()).string();
    cmd->add_option("--out", common.out, "output directory")->default_val(fallback);
    cmd->add_flag("-v,--verbose", common.verbosity, "increase verbosity");
}

RunConfig resolve_config(const Common& common) {
    RunConfig cfg;
    if (!common.config_path.empty()) cfg = load_config(common.config_path);
    for (const auto& kv : common.overrides) apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "config_echo.yaml");
    out << dump_config(cfg);
}

Corpus load_split(const RunConfig& cfg, const std::string& data_root, const std::string& split,
                  uint64_t seed_offset, int count) {
    if (!data_root.empty()) return load_corpus(data_root, split);
    SyntheticSpec spec = cfg.data;
    spec.seed += seed_offset;
    if (count > 0) spec.count = count;
    return generate_synthetic_corpus(spec);
}

std::vector<AblationVariant> parse_grid(const std::string& grid) {
    // grid syntax: "flag=val,val;flag=val,val" -> cross product
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::stringstream ss(grid);
    std::string part;
    while (std::getline(ss, part, ';')) {
        auto eq = part.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("grid axis must be flag=v1,v2: '" + part + "'");
        std::string flag = part.substr(0, eq);
        std::vector<std::string> vals;
        std::stringstream vs(part.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) vals.push_back(v);
        if (vals.empty()) throw std::invalid_argument("grid axis has no values: '" + part + "'");
        axes.push_back({flag, vals});
    }
    if (axes.empty()) throw std::invalid_argument("empty ablation grid");

    auto apply_flag = [](const std::string& flag, const std::string& val, ModelConfig& mc,
                         LossConfig&, TrainConfig& tc) {
        bool on = (val == "on" || val == "true" || val == "1");
        if (!on && !(val == "off" || val == "false" || val == "0"))
            throw std::invalid_argument("grid value must be on/off: '" + val + "'");
        if (flag == "mss") tc.mss = on;
        else if (flag == "rlft") tc.rlft = on;
        else if (flag == "inref") mc.use_inref = on;
        else if (flag == "outref") mc.use_outref = on;
        else if (flag == "rm") mc.use_rm = on;
        else if (flag == "cff") mc.use_cff = on;
        else if (flag == "ipt") mc.use_ipt = on;
        else throw std::invalid_argument("unknown ablation flag '" + flag + "'");
    };

    std::vector<AblationVariant> variants;
    std::vector<size_t> cursor(axes.size(), 0);
    while (true) {
        std::string name;
        std::vector<std::pair<std::string, std::string>> assignment;
        for (size_t i = 0; i < axes.size(); ++i) {
            assignment.push_back({axes[i].first, axes[i].second[cursor[i]]});
            if (!name.empty()) name += "_";
            name += axes[i].first + "-" + axes[i].second[cursor[i]];
        }
        variants.push_back({name, [assignment, apply_flag](ModelConfig& mc, LossConfig& lc,
                                                           TrainConfig& tc) {
                                for (const auto& [flag, val] : assignment)
                                    apply_flag(flag, val, mc, lc, tc);
                            }});
        size_t i = 0;
        for (; i < axes.size(); ++i) {
            if (++cursor[i] < axes[i].second.size()) break;
            cursor[i] = 0;
        }
        if (i == axes.size()) break;
    }
    return variants;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw std::invalid_argument("empty seed list");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bilateral-reference fine-structure segmentation toolkit"};
    app.require_subcommand(1);

    Common c_gen, c_train, c_finetune, c_eval, c_infer, c_ablate, c_plot;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus on disk");
    add_common(gen, c_gen, "out/gen-data");
    std::string gen_split = "train";
    gen->add_option("--split", gen_split, "split name")->default_val("train");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr, c_train, "out/train");
    std::string train_data_root;
    tr->add_option("--data", train_data_root,
                   "dataset root with {train,val}/{im,gt}; omitted -> synthetic corpus");

    // finetune
    auto* ft = app.add_subcommand("finetune", "region-loss fine-tune from a checkpoint");
    add_common(ft, c_finetune, "out/finetune");
    std::string ft_checkpoint, ft_data_root;
    ft->add_option("--checkpoint", ft_checkpoint, "checkpoint to resume")->required();
    ft->add_option("--data", ft_data_root, "dataset root; omitted -> synthetic corpus");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate prediction maps against GT maps");
    add_common(ev, c_eval, "out/eval");
    std::string eval_pred, eval_gt;
    ev->add_option("--pred", eval_pred, "directory of predicted maps")->required();
    ev->add_option("--gt", eval_gt, "directory of GT maps")->required();

    // infer
    auto* in = app.add_subcommand("infer", "run inference and save maps");
    add_common(in, c_infer, "out/infer");
    std::string infer_checkpoint;
    std::vector<std::string> infer_inputs;
    in->add_option("--checkpoint", infer_checkpoint, "model checkpoint")->required();
    in->add_option("--images", infer_inputs, "image files or a directory")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "train an ablation grid and tabulate");
    add_common(ab, c_ablate, "out/ablate");
    std::string ablate_grid = "inref=on,off";
    std::string ablate_seeds = "1,2,3";
    std::string ablate_data_root;
    ab->add_option("--grid", ablate_grid, "grid, e.g. 'mss=on,off;inref=on,off'")
        ->default_val("inref=on,off");
    ab->add_option("--seeds", ablate_seeds, "comma-separated seeds")->default_val("1,2,3");
    ab->add_option("--data", ablate_data_root, "dataset root; omitted -> synthetic corpus");

    // plot
    auto* pl = app.add_subcommand("plot", "emit static plots from run logs / reports");
    add_common(pl, c_plot, "out/plot");
    std::vector<std::string> plot_runlogs, plot_reports;
    pl->add_option("--runlog", plot_runlogs, "runlog.jsonl files");
    pl->add_option("--report", plot_reports, "report.json files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kValidationError;
    }

    try {
        if (*gen) {
            auto cfg = resolve_config(c_gen);
            echo_config(cfg, c_gen.out);
            auto corpus = generate_synthetic_corpus(cfg.data);
            save_corpus(corpus, c_gen.out, gen_split);
            std::cout << "wrote " << corpus.size() << " samples to " << c_gen.out << "/"
                      << gen_split << "\n";
        } else if (*tr) {
            auto cfg = resolve_config(c_train);
            echo_config(cfg, c_train.out);
            auto train_corpus = load_split(cfg, train_data_root, "train", 0, -1);
            auto val_corpus = load_split(cfg, train_data_root, "val", 1,
                                         std::max(8, cfg.data.count / 4));
            auto result = biref::train(train_corpus, val_corpus, cfg.model, cfg.loss, cfg.train,
                                       fs::path(c_train.out));
            std::cout << "final checkpoint: " << result.checkpoint << "\n";
            if (!result.log.epochs.empty())
                std::cout << "final val Fbx=" << result.log.epochs.back().val_fmax
                          << " Fbw=" << result.log.epochs.back().val_fw << "\n";
        } else if (*ft) {
            auto cfg = resolve_config(c_finetune);
            echo_config(cfg, c_finetune.out);
            auto corpus = load_split(cfg, ft_data_root, "train", 0, -1);
            auto val_corpus = load_split(cfg, ft_data_root, "val", 1,
                                         std::max(8, cfg.data.count / 4));
            TrainConfig tc = cfg.train;
            tc.epochs = tc.resolved_finetune_epochs();
            auto result = biref::finetune(ft_checkpoint, corpus, val_corpus, tc,
                                          fs::path(c_finetune.out));
            std::cout << "finetuned checkpoint: " << result.checkpoint << "\n";
        } else if (*ev) {
            auto cfg = resolve_config(c_eval);
            echo_config(cfg, c_eval.out);
            auto report = evaluate_corpus(eval_pred, eval_gt, cfg.metrics);
            write_report_json(report, fs::path(c_eval.out) / "report.json");
            write_report_csv(report, fs::path(c_eval.out) / "report.csv");
            std::cout << "evaluated " << report.evaluated << " pairs; Fbx="
                      << report.summary.fmax << " Fbw=" << report.summary.fw
                      << " MAE=" << report.summary.mae << " Sm=" << report.summary.sm
                      << " Em=" << report.summary.emean << " HCE-approx=" << report.hce_sum
                      << "\n";
            for (const auto& u : report.unpaired)
                std::cerr << "unpaired: " << u << "\n";
            if (!report.unpaired.empty()) return kRuntimeError;
        } else if (*in) {
            resolve_config(c_infer);
            std::vector<fs::path> files;
            for (const auto& input : infer_inputs) {
                fs::path p(input);
                if (fs::is_directory(p)) {
                    for (const auto& e : fs::directory_iterator(p))
                        if (e.is_regular_file()) files.push_back(e.path());
                    std::sort(files.begin(), files.end());
                } else {
                    files.push_back(p);
                }
            }
            int n = infer(infer_checkpoint, files, c_infer.out);
            std::cout << "wrote " << n << " maps to " << c_infer.out << "\n";
        } else if (*ab) {
            auto cfg = resolve_config(c_ablate);
            echo_config(cfg, c_ablate.out);
            auto variants = parse_grid(ablate_grid);
            auto seeds = parse_seeds(ablate_seeds);
            auto train_corpus = load_split(cfg, ablate_data_root, "train", 0, -1);
            auto val_corpus = load_split(cfg, ablate_data_root, "val", 1,
                                         std::max(8, cfg.data.count / 4));
            auto table = ablate(variants, train_corpus, val_corpus, cfg.model, cfg.loss,
                                cfg.train, seeds);
            write_ablation_csv(table, fs::path(c_ablate.out) / "ablation.csv");
            std::ofstream txt(fs::path(c_ablate.out) / "ablation.txt");
            txt << format_ablation_table(table);
            std::cout << format_ablation_table(table);
        } else if (*pl) {
            if (plot_runlogs.empty() && plot_reports.empty())
                throw std::invalid_argument("plot needs --runlog and/or --report inputs");
            fs::create_directories(c_plot.out);
            int idx = 0;
            for (const auto& rl : plot_runlogs) {
                auto log = read_runlog(rl);
                std::string tag = plot_runlogs.size() > 1 ? "_" + std::to_string(idx) : "";
                plot_loss_curves(log, fs::path(c_plot.out) / ("loss_curves" + tag + ".png"));
                if (!log.epochs.empty())
                    plot_metric_curves(log,
                                       fs::path(c_plot.out) / ("metric_curves" + tag + ".png"));
                ++idx;
            }
            if (!plot_reports.empty()) {
                std::vector<MetricReport> reports;
                std::vector<std::string> names;
                for (const auto& rp : plot_reports) {
                    reports.push_back(read_report_json(rp));
                    names.push_back(fs::path(rp).parent_path().filename().string());
                }
                plot_report_bars(reports, names, fs::path(c_plot.out) / "report_bars.png");
            }
            std::cout << "plots written to " << c_plot.out << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
