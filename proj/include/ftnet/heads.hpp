#pragma once

#include <map>
#include <string>
#include <vector>

#include "ftnet/model.hpp"

namespace ftnet {

// Binary auxiliary model g_{tap,y}: Conv-Conv-FC over a frozen feature map,
// sigmoid output estimating p(y | f_tap(x)). The base model is never mutated.
struct AuxHead {
    std::string tap_name;
    int class_id = -1;
    std::vector<int> feature_shape;  // {C, H, W} at the tap
    std::map<std::string, Tensor> params;
    float auc = 0.0f;  // held-out binary AUC after training
    bool trained = false;
};

// Node handles for a head appended onto an existing graph (attack objectives
// differentiate through this w.r.t. the feature node).
struct HeadNodes {
    NodeId prob = -1;  // sigmoid output, scalar
    std::vector<std::pair<std::string, NodeId>> param_nodes;
};

AuxHead build_head(const std::string& tap_name, int class_id,
                   const std::vector<int>& feature_shape, std::uint64_t seed);

HeadNodes append_head(Graph& g, const AuxHead& head, NodeId feature);

// Frozen tap activations of one dataset through one model, extracted once and
// shared by every head trained at that tap.
struct FeatureCache {
    std::map<std::string, std::vector<Tensor>> by_tap;
    std::vector<int> labels;
};

FeatureCache extract_features(const TapModel& m, const Dataset& ds,
                              const std::vector<std::string>& taps,
                              int jobs = 1);

struct HeadTrainConfig {
    int iters = 2000;
    int batch_size = 64;
    float lr = 1e-3f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float lr_decay = 0.1f;
    float decay_at = 0.75f;
    float auc_floor = 0.85f;
    int holdout_stride = 5;  // every holdout_stride-th sample is held out
};

AuxHead train_head(const FeatureCache& cache, const std::string& tap,
                   int class_id, const HeadTrainConfig& cfg,
                   std::uint64_t seed);
AuxHead train_head(const TapModel& m, const std::string& tap, int class_id,
                   const Dataset& data, const HeadTrainConfig& cfg,
                   std::uint64_t seed);

float head_probability(const AuxHead& head, const Tensor& feature);

// Mann-Whitney AUC of scores for a binary labeling.
float binary_auc(const std::vector<float>& scores,
                 const std::vector<int>& positives);

struct HeadFailure {
    std::string tap;
    int class_id;
    float auc;
};

struct HeadBank {
    std::map<std::pair<std::string, int>, AuxHead> heads;
    std::vector<HeadFailure> failures;  // heads below the AUC floor

    const AuxHead& at(const std::string& tap, int class_id) const;
    bool has(const std::string& tap, int class_id) const;
    float mean_auc() const;
};

HeadBank train_bank(const TapModel& m, const std::vector<std::string>& taps,
                    const std::vector<int>& classes, const Dataset& data,
                    const HeadTrainConfig& cfg, std::uint64_t seed,
                    int jobs = 1);

void save_bank(const HeadBank& bank, const std::string& dir);
HeadBank load_bank(const std::string& dir, const TapModel& base);

std::uint64_t param_checksum(const std::map<std::string, Tensor>& params);

}  // namespace ftnet
