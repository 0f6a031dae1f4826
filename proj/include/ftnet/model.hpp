#pragma once

#include <map>
#include <string>
#include <vector>

#include "ftnet/data.hpp"
#include "ftnet/graph.hpp"

namespace ftnet {

// A small classifier with named intermediate taps. Parameters live here;
// graphs built over the model reference them in place, so a TapModel must
// outlive every graph built from it. Trained models are treated as immutable.
struct TapModel {
    std::string arch_id;
    int num_classes = 0;
    std::vector<int> input_shape;       // {C, H, W}
    std::vector<std::string> tap_names; // strictly depth-ordered
    std::map<std::string, Tensor> params;
};

// Node handles produced when a model forward pass is appended to a graph.
struct ForwardNodes {
    std::map<std::string, NodeId> taps;
    NodeId logits = -1;
    NodeId probs = -1;
    std::vector<NodeId> residual_adds;  // skip-gradient scaling hooks (resnet only)
    std::vector<std::pair<std::string, NodeId>> param_nodes;
};

TapModel build_model(const std::string& arch_id, int num_classes,
                     std::uint64_t seed);

// Appends the full forward pass of `m` after node `x` on an existing graph.
// Used directly by attack objectives; everything below is built on it.
ForwardNodes append_forward(Graph& g, const TapModel& m, NodeId x);

struct TrainConfig {
    int iters = 400;
    int batch_size = 32;
    float lr = 0.01f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float lr_decay = 0.1f;
    float decay_at = 0.75f;  // fraction of iters after which lr is decayed
    std::uint64_t seed = 0;
    int log_every = 50;
};

struct TrainHistory {
    std::vector<float> losses;  // mean batch loss, one entry per iteration
};

TrainHistory train_classifier(TapModel& m, const Dataset& train,
                              const TrainConfig& cfg);

// Reusable inference wrapper: one graph, rebound per input.
class ModelRunner {
public:
    explicit ModelRunner(const TapModel& m);
    const TapModel& model() const { return *model_; }
    const ForwardNodes& nodes() const { return nodes_; }

    Tensor probabilities(const Tensor& x);
    int predict(const Tensor& x, Tensor* probs_out = nullptr);
    Tensor extract(const std::string& tap_name, const Tensor& x);

private:
    const TapModel* model_;
    Graph g_;
    ForwardNodes nodes_;
    Tensor bound_;
};

int argmax_lowest(const Tensor& probs);

Tensor extract_feature(const TapModel& m, const std::string& tap_name,
                       const Tensor& x);
int predict(const TapModel& m, const Tensor& x, Tensor* probs_out = nullptr);

float accuracy(const TapModel& m, const Dataset& ds, int jobs = 1);

void save_checkpoint(const TapModel& m, const std::string& path);
TapModel load_checkpoint(const std::string& path);

}  // namespace ftnet
