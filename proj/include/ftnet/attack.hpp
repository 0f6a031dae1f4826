#pragma once

#include <string>
#include <vector>

#include "ftnet/heads.hpp"
#include "ftnet/model.hpp"

namespace ftnet {

struct AttackConfig {
    float epsilon = 16.0f / 255.0f;
    float step_size = 2.0f / 255.0f;
    int iters = 10;
    float momentum = 1.0f;                 // 0 disables (TPGD)
    std::vector<std::string> layers;       // attack layer set L
    std::vector<float> lambda;             // per-layer weights; empty -> 1/N
    float eta = 1e-5f;                     // disruption-term weight
    float gamma = 0.0f;                    // cross-entropy weight; 0 disables +xent
    std::uint64_t seed = 0;

    // Fills default lambda and checks the invariants; throws Error.
    void validate_and_fill();
};

struct AttackResult {
    Tensor delta;
    Tensor adversarial;                 // x + delta, clamped
    std::vector<float> loss_trace;      // objective value per iteration
    int whitebox_pred_after = -1;
    std::vector<int> raw_grad_iters;    // iterations where ||grad||_1 was 0
    // per-iteration constraint log
    std::vector<float> delta_linf_trace;
    std::vector<float> pixel_min_trace;
    std::vector<float> pixel_max_trace;
};

// A maximization objective over the adversarial image (graph input "adv").
// prepare() fixes the per-sample state: clean-feature constants and target
// label. The owned graph is single-threaded; build one per worker.
class AttackObjective {
public:
    Graph graph;
    NodeId adv_input = -1;
    NodeId probs = -1;   // whitebox (or ensemble-mean) probabilities
    NodeId loss = -1;

    void prepare(const Tensor& x, int y_tgt);

    // per-sample setup recorded by the builders
    struct FdaLayer {
        std::string tap;
        NodeId tap_node = -1;
        NodeId clean_const = -1;
    };
    std::vector<FdaLayer> fda_layers;
    std::vector<NodeId> label_nodes;  // softmax_xent / xent_probs nodes
    int built_target = -1;  // FDA objectives embed one target's heads
};

AttackObjective make_fda_objective(const TapModel& m, const HeadBank& bank,
                                   int y_tgt, const AttackConfig& cfg);
AttackObjective make_xent_objective(const TapModel& m);
AttackObjective make_sgm_objective(const TapModel& m, float decay);
AttackObjective make_ensemble_objective(const std::vector<const TapModel*>& models);

AttackResult momentum_pgd(AttackObjective& obj, const Tensor& x, int y_tgt,
                          const AttackConfig& cfg, bool project_epsilon = true);

AttackResult tmim_attack(const TapModel& m, const Tensor& x, int y_tgt,
                         const AttackConfig& cfg);
AttackResult tpgd_attack(const TapModel& m, const Tensor& x, int y_tgt,
                         const AttackConfig& cfg);
AttackResult sgm_attack(const TapModel& m, const Tensor& x, int y_tgt,
                        const AttackConfig& cfg, float decay = 0.5f);
AttackResult ensemble_tmim(const std::vector<const TapModel*>& models,
                           const Tensor& x, int y_tgt, const AttackConfig& cfg);
AttackResult fda_attack(const TapModel& m, const HeadBank& bank, const Tensor& x,
                        int y_tgt, const AttackConfig& cfg);

// Optimizes an image from uniform noise, no epsilon ball, mu = 0.
AttackResult distal_generate(AttackObjective& obj, int y_tgt,
                             const AttackConfig& cfg);
AttackResult distal_fda(const TapModel& m, const HeadBank& bank, int y_tgt,
                        AttackConfig cfg);
AttackResult distal_tpgd(const TapModel& m, int y_tgt, AttackConfig cfg);

// Scalar objective evaluations (test and search probes).
float fda_loss(const TapModel& m, const HeadBank& bank, const Tensor& x,
               const Tensor& delta, int y_tgt, const std::string& tap, float eta);
float fda_multilayer_loss(const TapModel& m, const HeadBank& bank, const Tensor& x,
                          const Tensor& delta, int y_tgt, const AttackConfig& cfg);

Tensor clamp01_add(const Tensor& x, const Tensor& delta);

}  // namespace ftnet
