#pragma once

#include <string>
#include <vector>

#include "ftnet/attack.hpp"
#include "ftnet/heads.hpp"
#include "ftnet/query.hpp"

namespace ftnet {

// Flat `section.key = value` run configuration. Every key is known ahead of
// time; anything else is rejected so typos cannot silently fall back to
// defaults. '#' starts a comment.
struct RunConfig {
    // data.*
    std::string data_train_images, data_train_labels;
    std::string data_val_images, data_val_labels;
    std::string data_whitebox_split, data_blackbox_split;  // "", "A", "B", "C"

    // gen.* (synthetic dataset generation)
    int gen_image_size = 16;
    int gen_per_class = 500;
    float gen_contrast = 0.18f;
    float gen_noise = 0.05f;
    float gen_speckle = 0.05f;

    // model.*
    std::string model_arch = "plainnet-s";
    int model_classes = 10;
    std::string model_checkpoint;           // whitebox
    std::string model_blackbox_checkpoint;
    std::string model_sandbox_checkpoint;
    std::vector<std::string> model_ensemble_checkpoints;

    // train.*
    TrainConfig train;

    // heads.*
    HeadTrainConfig heads;
    std::vector<std::string> heads_taps;
    std::vector<int> heads_classes;
    std::string heads_bank_dir;

    // attack.*
    AttackConfig attack;
    std::string attack_family = "fda";  // tmim|tpgd|sgm|ensemble|fda
    float attack_sgm_decay = 0.5f;

    // search.*
    int search_max_layers = 3;
    int search_n_sources = 200;
    int search_targets_per_source = 3;
    std::vector<float> search_grid_eta;
    std::vector<float> search_grid_gamma;

    // eval.*
    std::string eval_scenario = "standard";
    int eval_n_sources = 100;
    int eval_targets_per_source = 3;

    // distal.*
    int distal_count = 200;
    int distal_iters = 200;

    // query.*
    PrgfConfig prgf;
    long query_budget = -1;
    std::string oracle_host = "127.0.0.1";
    int oracle_port = 0;

    // run.*
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int jobs = 1;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Applies a single `section.key = value` override (CLI flags reuse the
// config key space). Unknown keys throw.
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value);

// Normalizes lambda weights, checks ranges, and verifies that every
// referenced file path exists. `require` lists the keys a subcommand needs.
void validate_config(RunConfig& cfg, const std::vector<std::string>& require);

// Stable hash of the canonical key=value serialization, for manifests.
std::uint64_t config_hash(const RunConfig& cfg);
std::string serialize_config(const RunConfig& cfg);

// Resolves a declared split name ("A", "B", "C") to its definition.
SuperclassSplit split_by_name(const std::string& name);

bool file_exists(const std::string& path);

}  // namespace ftnet
