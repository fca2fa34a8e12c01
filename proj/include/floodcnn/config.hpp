#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "floodcnn/dataset.hpp"
#include "floodcnn/hydrosolver.hpp"
#include "floodcnn/nnet.hpp"
#include "floodcnn/svrkrig.hpp"

namespace floodcnn {

/// Flat `key = value` run configuration. Lines starting with '#' are
/// comments. Unknown keys are rejected; relative paths resolve against the
/// directory holding the file.
struct RunConfig {
    std::filesystem::path base_dir = ".";

    // inputs
    std::string dem = "dem.asc";
    std::string defenses;                    // empty: no defended variant
    std::vector<std::string> train_events;   // boundary manifests
    std::vector<std::string> test_events;
    std::string control_points;
    std::string out_dir = "out";

    // solver
    SolverConfig solver;
    // features and targets
    FeatureSpec features;
    double tau = default_depth_threshold;
    // network and training
    NetSpec net;
    TrainConfig train;
    double val_fraction = 0.2;
    SplitMode split_mode = SplitMode::by_row;
    bool prune_dry_cells = true;
    // baseline
    SvrParams svr;
    std::size_t svr_locations = 500;
    // search
    std::string search_target = "cnn";
    std::string search_strategy = "smbo";
    int search_budget = 12;
    int search_max_epochs = 30;

    std::uint64_t seed = 42;

    static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = ".");
    static RunConfig load(const std::filesystem::path& path);
    // Canonical text with every key, in a fixed order.
    std::string to_text() const;
    // FNV-1a of the canonical text.
    std::uint64_t hash() const;

    std::filesystem::path resolve(const std::string& p) const;
    std::string event_name(const std::string& manifest) const;
};

// Applies `key = value` assignments (one per line) on top of a config.
void apply_config_text(RunConfig& cfg, const std::string& text);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t v);

}  // namespace floodcnn
