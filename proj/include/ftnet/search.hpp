#pragma once

#include <string>
#include <vector>

#include "ftnet/attack.hpp"

namespace ftnet {

// Greedy attack-layer selection tuned against a sandbox model the attacker
// owns; the true target blackbox is never consulted here.
struct SearchReport {
    std::string whitebox_id;
    std::string sandbox_id;
    std::vector<std::string> sequence;   // prefix k = best found set of size k
    std::vector<float> prefix_tsuc;      // held-out tSuc per prefix
    float eta = 1e-5f;
    float gamma = 1e-4f;
};

struct SearchConfig {
    int n_sources = 200;
    int targets_per_source = 3;
    AttackConfig attack;  // epsilon/step/iters/eta/gamma base settings
    std::uint64_t seed = 0;
    int jobs = 1;
};

SearchReport greedy_search(const TapModel& whitebox, const TapModel& sandbox,
                           const HeadBank& bank, const Dataset& heldout,
                           int max_layers, const SearchConfig& cfg);

// Independent 1-D sweeps: eta first (gamma at its configured default), then
// gamma at the chosen eta. Ties break toward the smaller value.
std::pair<float, float> line_search_hparams(
    const TapModel& whitebox, const TapModel& sandbox, const HeadBank& bank,
    const Dataset& heldout, const std::vector<float>& grid_eta,
    const std::vector<float>& grid_gamma, SearchConfig cfg);

// Held-out tSuc of an FDA configuration, the metric both searches maximize.
float heldout_tsuc(const TapModel& whitebox, const TapModel& sandbox,
                   const HeadBank& bank, const Dataset& heldout,
                   const AttackConfig& attack_cfg, const SearchConfig& cfg);

void save_report(const SearchReport& r, const std::string& path);
SearchReport load_report(const std::string& path);

}  // namespace ftnet
