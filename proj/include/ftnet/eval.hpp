#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ftnet/attack.hpp"
#include "ftnet/data.hpp"

namespace ftnet {

// Label-space mapping for one transfer protocol. A null split means the model
// works in the base label space; otherwise its labels are superclass indices.
struct ScenarioRule {
    std::string name;  // standard | scenario1 | scenario2 | scenario3
    std::optional<SuperclassSplit> whitebox_split;
    std::optional<SuperclassSplit> blackbox_split;

    // base label -> model-space label, -1 when outside the split
    int map_whitebox(int base_label) const;
    int map_blackbox(int base_label) const;
};

ScenarioRule standard_rule();
ScenarioRule scenario1_rule(const SuperclassSplit& whitebox,
                            const SuperclassSplit& blackbox);
ScenarioRule scenario2_rule(const SuperclassSplit& blackbox);
ScenarioRule scenario3_rule(const SuperclassSplit& whitebox);

struct EvalTarget {
    int wb_label;  // class targeted on the whitebox, in its label space
    int bb_label;  // blackbox-space label used by the success rule
};

struct EvalPair {
    int image_index;
    int y_src_wb;
    int y_src_bb;
    std::vector<EvalTarget> targets;
};

// Draws sources correct under both models per the scenario's mapping, with
// targets_per_source admissible targets each.
std::vector<EvalPair> select_pairs(const TapModel& whitebox,
                                   const TapModel& blackbox, const Dataset& val,
                                   int n_sources, int targets_per_source,
                                   std::uint64_t seed, const ScenarioRule& rule);

// True iff blackbox prediction bb_pred counts as a targeted success / as an
// error for the given pair and target under the rule.
bool rule_tsuc(const ScenarioRule& rule, const EvalTarget& target, int bb_pred);
bool rule_error(const ScenarioRule& rule, const EvalPair& pair, int bb_pred);

struct AttackRecord {
    int image_index;
    int wb_target;
    int bb_pred;
    bool attack_ok;        // false when the attack itself errored
    std::string error_msg;
};

struct TransferReport {
    std::string scenario, whitebox_id, blackbox_id, attack_id;
    int n = 0;             // attacks in the denominator
    float error = 0.0f, error_ci95 = 0.0f;
    float tsuc = 0.0f, tsuc_ci95 = 0.0f;
    std::vector<AttackRecord> records;
    // constraint audit accumulated over every attack iteration
    long iterations_logged = 0;
    long constraint_violations = 0;
    float epsilon_used = 0.0f;
};

using AttackFn = std::function<AttackResult(const Tensor& x, int y_tgt)>;

TransferReport transfer_evaluate(const std::vector<EvalPair>& pairs,
                                 const AttackFn& attack, const Dataset& val,
                                 const TapModel& blackbox,
                                 const ScenarioRule& rule, float epsilon,
                                 int jobs = 1);

float binomial_ci95(float p, int n);

struct DisruptionProfile {
    std::string model_id, attack_id;
    std::vector<std::string> tap_names;
    std::vector<float> disruption;  // mean probability shift per tap
};

// Mean head-probability shift per tap between clean and adversarial images.
DisruptionProfile disruption_profile(
    const TapModel& m, const HeadBank& bank,
    const std::vector<std::pair<Tensor, Tensor>>& clean_adv_pairs, int y_tgt);

struct ReportRow {
    std::string scenario, whitebox, blackbox, attack, layers;
    float eta = 0.0f, gamma = 0.0f, epsilon = 0.0f;
    int iters = 0, n = 0;
    float error = 0.0f, error_ci95 = 0.0f, tsuc = 0.0f, tsuc_ci95 = 0.0f;
    std::uint64_t seed = 0;
};

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);
std::vector<ReportRow> read_report_csv(const std::string& path);

void write_disruption_csv(const std::vector<DisruptionProfile>& profiles,
                          const std::string& path);

// Minimal well-formed-XML SVG emitters.
void write_svg_bars(const std::vector<std::string>& labels,
                    const std::vector<float>& values, const std::string& title,
                    const std::string& path);
void write_svg_lines(const std::vector<std::string>& series_names,
                     const std::vector<std::vector<float>>& xs,
                     const std::vector<std::vector<float>>& ys,
                     const std::string& title, const std::string& path);

}  // namespace ftnet
