#include "biref/config.hpp"

#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <yaml-cpp/yaml.h>

namespace biref {

void RunConfig::validate() const {
    data.validate();
    model.validate();
    loss.validate();
    metrics.validate();
    train.validate();
}

namespace {

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "0" || s == "no") return false;
    throw std::invalid_argument("not a boolean: '" + s + "'");
}

int parse_int(const std::string& s) {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
    return v;
}

double parse_double(const std::string& s) {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"data.count", [](RunConfig& c, const std::string& v) { c.data.count = parse_int(v); }},
        {"data.height", [](RunConfig& c, const std::string& v) { c.data.height = parse_int(v); }},
        {"data.width", [](RunConfig& c, const std::string& v) { c.data.width = parse_int(v); }},
        {"data.mix",
         [](RunConfig& c, const std::string& v) {
             auto parts = split(v, ',');
             if (parts.size() != size_t(kNumStructureFamilies))
                 throw std::invalid_argument("data.mix needs 4 proportions");
             for (int i = 0; i < kNumStructureFamilies; ++i)
                 c.data.mix[size_t(i)] = parse_double(parts[size_t(i)]);
         }},
        {"data.min_stroke",
         [](RunConfig& c, const std::string& v) { c.data.min_stroke = parse_int(v); }},
        {"data.max_stroke",
         [](RunConfig& c, const std::string& v) { c.data.max_stroke = parse_int(v); }},
        {"data.seed",
         [](RunConfig& c, const std::string& v) { c.data.seed = uint64_t(std::stoull(v)); }},

        {"model.stage_widths",
         [](RunConfig& c, const std::string& v) {
             auto parts = split(v, ',');
             if (parts.size() != 4) throw std::invalid_argument("model.stage_widths needs 4 values");
             for (int i = 0; i < 4; ++i) c.model.stage_widths[size_t(i)] = parse_int(parts[size_t(i)]);
         }},
        {"model.num_classes",
         [](RunConfig& c, const std::string& v) { c.model.num_classes = parse_int(v); }},
        {"model.use_rm", [](RunConfig& c, const std::string& v) { c.model.use_rm = parse_bool(v); }},
        {"model.use_inref",
         [](RunConfig& c, const std::string& v) { c.model.use_inref = parse_bool(v); }},
        {"model.use_outref",
         [](RunConfig& c, const std::string& v) { c.model.use_outref = parse_bool(v); }},
        {"model.use_cff",
         [](RunConfig& c, const std::string& v) { c.model.use_cff = parse_bool(v); }},
        {"model.use_ipt",
         [](RunConfig& c, const std::string& v) { c.model.use_ipt = parse_bool(v); }},
        {"model.use_offset_convs",
         [](RunConfig& c, const std::string& v) { c.model.use_offset_convs = parse_bool(v); }},
        {"model.outref_all_stages",
         [](RunConfig& c, const std::string& v) { c.model.outref_all_stages = parse_bool(v); }},
        {"model.rf_kernels",
         [](RunConfig& c, const std::string& v) {
             c.model.rf_kernels.clear();
             for (const auto& p : split(v, ',')) c.model.rf_kernels.push_back(parse_int(p));
         }},

        {"loss.lambda_bce",
         [](RunConfig& c, const std::string& v) { c.loss.lambda_bce = parse_double(v); }},
        {"loss.lambda_iou",
         [](RunConfig& c, const std::string& v) { c.loss.lambda_iou = parse_double(v); }},
        {"loss.lambda_ssim",
         [](RunConfig& c, const std::string& v) { c.loss.lambda_ssim = parse_double(v); }},
        {"loss.lambda_ce",
         [](RunConfig& c, const std::string& v) { c.loss.lambda_ce = parse_double(v); }},
        {"loss.ssim_window",
         [](RunConfig& c, const std::string& v) { c.loss.ssim_window = parse_int(v); }},
        {"loss.ssim_sigma",
         [](RunConfig& c, const std::string& v) { c.loss.ssim_sigma = parse_double(v); }},
        {"loss.stage_weights",
         [](RunConfig& c, const std::string& v) {
             c.loss.stage_weights.clear();
             for (const auto& p : split(v, ',')) c.loss.stage_weights.push_back(parse_double(p));
         }},
        {"loss.gradient_weight",
         [](RunConfig& c, const std::string& v) { c.loss.gradient_weight = parse_double(v); }},
        {"loss.ssim_on_stages",
         [](RunConfig& c, const std::string& v) { c.loss.ssim_on_stages = parse_bool(v); }},
        {"loss.dilation_radius",
         [](RunConfig& c, const std::string& v) { c.loss.dilation_radius = parse_int(v); }},

        {"metrics.alpha",
         [](RunConfig& c, const std::string& v) { c.metrics.alpha = parse_double(v); }},
        {"metrics.beta2",
         [](RunConfig& c, const std::string& v) { c.metrics.beta2 = parse_double(v); }},
        {"metrics.beta2_weighted",
         [](RunConfig& c, const std::string& v) { c.metrics.beta2_weighted = parse_double(v); }},
        {"metrics.thresholds",
         [](RunConfig& c, const std::string& v) { c.metrics.thresholds = parse_int(v); }},
        {"metrics.hce_gamma",
         [](RunConfig& c, const std::string& v) { c.metrics.hce_gamma = parse_int(v); }},
        {"metrics.hce_epsilon",
         [](RunConfig& c, const std::string& v) { c.metrics.hce_epsilon = parse_double(v); }},

        {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_int(v); }},
        {"train.finetune_epochs",
         [](RunConfig& c, const std::string& v) { c.train.finetune_epochs = parse_int(v); }},
        {"train.learning_rate",
         [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_double(v); }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_int(v); }},
        {"train.height", [](RunConfig& c, const std::string& v) { c.train.height = parse_int(v); }},
        {"train.width", [](RunConfig& c, const std::string& v) { c.train.width = parse_int(v); }},
        {"train.seed",
         [](RunConfig& c, const std::string& v) { c.train.seed = uint64_t(std::stoull(v)); }},
        {"train.mss", [](RunConfig& c, const std::string& v) { c.train.mss = parse_bool(v); }},
        {"train.rlft", [](RunConfig& c, const std::string& v) { c.train.rlft = parse_bool(v); }},
        {"train.checkpoint_every",
         [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = parse_int(v); }},
        {"train.val_limit",
         [](RunConfig& c, const std::string& v) { c.train.val_limit = parse_int(v); }},
        {"train.flip_augment",
         [](RunConfig& c, const std::string& v) { c.train.flip_augment = parse_bool(v); }},
    };
    return table;
}

std::string node_to_string(const YAML::Node& node) {
    if (node.IsSequence()) {
        std::string s;
        for (const auto& item : node) {
            if (!s.empty()) s += ",";
            s += item.as<std::string>();
        }
        return s;
    }
    return node.as<std::string>();
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
    RunConfig cfg;
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw std::invalid_argument("config parse error in " + path.string() + ": " + e.what());
    }
    if (!root.IsMap() && !root.IsNull())
        throw std::invalid_argument("config root must be a mapping of sections");
    for (const auto& section : root) {
        auto section_name = section.first.as<std::string>();
        if (!section.second.IsMap())
            throw std::invalid_argument("config section '" + section_name + "' must be a mapping");
        for (const auto& entry : section.second) {
            std::string key = section_name + "." + entry.first.as<std::string>();
            auto it = setters().find(key);
            if (it == setters().end())
                throw std::invalid_argument("unknown config key '" + key + "' (line " +
                                            std::to_string(entry.first.Mark().line + 1) + ")");
            try {
                it->second(cfg, node_to_string(entry.second));
            } catch (const std::exception& e) {
                throw std::invalid_argument("config key '" + key + "': " + e.what());
            }
        }
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key_value) {
    auto eq = key_value.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must be key=value: '" + key_value + "'");
    std::string key = key_value.substr(0, eq);
    std::string value = key_value.substr(eq + 1);
    auto it = setters().find(key);
    if (it == setters().end()) throw std::invalid_argument("unknown config key '" + key + "'");
    try {
        it->second(cfg, value);
    } catch (const std::exception& e) {
        throw std::invalid_argument("override '" + key + "': " + e.what());
    }
}

std::string dump_config(const RunConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "count" << YAML::Value << c.data.count;
    out << YAML::Key << "height" << YAML::Value << c.data.height;
    out << YAML::Key << "width" << YAML::Value << c.data.width;
    out << YAML::Key << "mix" << YAML::Value << YAML::Flow
        << std::vector<double>(c.data.mix.begin(), c.data.mix.end());
    out << YAML::Key << "min_stroke" << YAML::Value << c.data.min_stroke;
    out << YAML::Key << "max_stroke" << YAML::Value << c.data.max_stroke;
    out << YAML::Key << "seed" << YAML::Value << c.data.seed;
    out << YAML::EndMap;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "stage_widths" << YAML::Value << YAML::Flow
        << std::vector<int>(c.model.stage_widths.begin(), c.model.stage_widths.end());
    out << YAML::Key << "num_classes" << YAML::Value << c.model.num_classes;
    out << YAML::Key << "use_rm" << YAML::Value << c.model.use_rm;
    out << YAML::Key << "use_inref" << YAML::Value << c.model.use_inref;
    out << YAML::Key << "use_outref" << YAML::Value << c.model.use_outref;
    out << YAML::Key << "use_cff" << YAML::Value << c.model.use_cff;
    out << YAML::Key << "use_ipt" << YAML::Value << c.model.use_ipt;
    out << YAML::Key << "use_offset_convs" << YAML::Value << c.model.use_offset_convs;
    out << YAML::Key << "outref_all_stages" << YAML::Value << c.model.outref_all_stages;
    out << YAML::Key << "rf_kernels" << YAML::Value << YAML::Flow << c.model.rf_kernels;
    out << YAML::EndMap;
    out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "lambda_bce" << YAML::Value << c.loss.lambda_bce;
    out << YAML::Key << "lambda_iou" << YAML::Value << c.loss.lambda_iou;
    out << YAML::Key << "lambda_ssim" << YAML::Value << c.loss.lambda_ssim;
    out << YAML::Key << "lambda_ce" << YAML::Value << c.loss.lambda_ce;
    out << YAML::Key << "ssim_window" << YAML::Value << c.loss.ssim_window;
    out << YAML::Key << "ssim_sigma" << YAML::Value << c.loss.ssim_sigma;
    out << YAML::Key << "stage_weights" << YAML::Value << YAML::Flow << c.loss.stage_weights;
    out << YAML::Key << "gradient_weight" << YAML::Value << c.loss.gradient_weight;
    out << YAML::Key << "ssim_on_stages" << YAML::Value << c.loss.ssim_on_stages;
    out << YAML::Key << "dilation_radius" << YAML::Value << c.loss.dilation_radius;
    out << YAML::EndMap;
    out << YAML::Key << "metrics" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "alpha" << YAML::Value << c.metrics.alpha;
    out << YAML::Key << "beta2" << YAML::Value << c.metrics.beta2;
    out << YAML::Key << "beta2_weighted" << YAML::Value << c.metrics.beta2_weighted;
    out << YAML::Key << "thresholds" << YAML::Value << c.metrics.thresholds;
    out << YAML::Key << "hce_gamma" << YAML::Value << c.metrics.hce_gamma;
    out << YAML::Key << "hce_epsilon" << YAML::Value << c.metrics.hce_epsilon;
    out << YAML::EndMap;
    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "epochs" << YAML::Value << c.train.epochs;
    out << YAML::Key << "finetune_epochs" << YAML::Value << c.train.finetune_epochs;
    out << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate;
    out << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
    out << YAML::Key << "height" << YAML::Value << c.train.height;
    out << YAML::Key << "width" << YAML::Value << c.train.width;
    out << YAML::Key << "seed" << YAML::Value << c.train.seed;
    out << YAML::Key << "mss" << YAML::Value << c.train.mss;
    out << YAML::Key << "rlft" << YAML::Value << c.train.rlft;
    out << YAML::Key << "checkpoint_every" << YAML::Value << c.train.checkpoint_every;
    out << YAML::Key << "val_limit" << YAML::Value << c.train.val_limit;
    out << YAML::Key << "flip_augment" << YAML::Value << c.train.flip_augment;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace biref
