#ifndef BIREF_CONFIG_HPP
#define BIREF_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "biref/datasets.hpp"
#include "biref/losses.hpp"
#include "biref/metrics.hpp"
#include "biref/model.hpp"
#include "biref/trainer.hpp"

namespace biref {

// Full run configuration, sections mirroring the module layout. All defaults
// live in the member initializers; files and overrides only change them.
struct RunConfig {
    SyntheticSpec data;
    ModelConfig model;
    LossConfig loss;
    MetricConfig metrics;
    TrainConfig train;

    void validate() const;
};

// Loads a YAML config with sections {data, model, loss, metrics, train}.
// Unknown sections or keys raise std::invalid_argument with the offending
// key path.
RunConfig load_config(const std::filesystem::path& path);

// Applies a dotted-key override, e.g. "train.epochs=10" or
// "model.use_cff=true". Unknown keys or malformed values raise
// std::invalid_argument.
void apply_override(RunConfig& cfg, const std::string& key_value);

// Serializes the effective configuration (for provenance echo into run dirs).
std::string dump_config(const RunConfig& cfg);

}  // namespace biref

#endif
