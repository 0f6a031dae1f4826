#include "ftnet/search.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>
#include <sstream>

namespace ftnet {

namespace {

struct Probe {
    int image_index;
    int y_tgt;
};

// Sources correct under both models, with random non-source targets.
std::vector<Probe> make_probes(const TapModel& whitebox, const TapModel& sandbox,
                               const Dataset& heldout, const SearchConfig& cfg) {
    std::vector<int> pool;
    {
        ModelRunner wb(whitebox), sb(sandbox);
        for (std::size_t i = 0; i < heldout.size(); ++i)
            if (wb.predict(heldout.images[i]) == heldout.labels[i] &&
                sb.predict(heldout.images[i]) == heldout.labels[i])
                pool.push_back(static_cast<int>(i));
    }
    if (pool.empty())
        throw Error("layer search: no held-out samples survive the "
                    "correctly-classified-by-both filter");
    std::uint64_t state = derive_seed(cfg.seed, "search-pool");
    std::vector<Probe> probes;
    int n = std::min<int>(cfg.n_sources, static_cast<int>(pool.size()));
    for (int s = 0; s < n; ++s) {
        state = splitmix64(state);
        int idx = pool[state % pool.size()];
        for (int t = 0; t < cfg.targets_per_source; ++t) {
            state = splitmix64(state);
            int y_tgt = static_cast<int>(state % whitebox.num_classes);
            if (y_tgt == heldout.labels[idx])
                y_tgt = (y_tgt + 1) % whitebox.num_classes;
            probes.push_back({idx, y_tgt});
        }
    }
    return probes;
}

float tsuc_over_probes(const TapModel& whitebox, const TapModel& sandbox,
                       const HeadBank& bank, const Dataset& heldout,
                       const std::vector<Probe>& probes,
                       const AttackConfig& attack_cfg, int jobs) {
    std::vector<int> hits(probes.size(), 0);
    std::size_t workers = std::max(1, jobs);
    auto work = [&](std::size_t w) {
        ModelRunner sb(sandbox);
        // one objective per distinct target, built lazily per worker
        std::map<int, AttackObjective> objectives;
        for (std::size_t i = w; i < probes.size(); i += workers) {
            const Probe& p = probes[i];
            auto it = objectives.find(p.y_tgt);
            if (it == objectives.end())
                it = objectives
                         .emplace(p.y_tgt, make_fda_objective(whitebox, bank,
                                                              p.y_tgt, attack_cfg))
                         .first;
            AttackResult r = momentum_pgd(it->second, heldout.images[p.image_index],
                                          p.y_tgt, attack_cfg);
            hits[i] = sb.predict(r.adversarial) == p.y_tgt ? 1 : 0;
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
        for (auto& t : threads) t.join();
    }
    int total = 0;
    for (int h : hits) total += h;
    return static_cast<float>(total) / static_cast<float>(probes.size());
}

}  // namespace

float heldout_tsuc(const TapModel& whitebox, const TapModel& sandbox,
                   const HeadBank& bank, const Dataset& heldout,
                   const AttackConfig& attack_cfg, const SearchConfig& cfg) {
    std::vector<Probe> probes = make_probes(whitebox, sandbox, heldout, cfg);
    return tsuc_over_probes(whitebox, sandbox, bank, heldout, probes, attack_cfg,
                            cfg.jobs);
}

SearchReport greedy_search(const TapModel& whitebox, const TapModel& sandbox,
                           const HeadBank& bank, const Dataset& heldout,
                           int max_layers, const SearchConfig& cfg) {
    if (max_layers < 1) throw Error("greedy_search: max_layers must be >= 1");
    std::vector<Probe> probes = make_probes(whitebox, sandbox, heldout, cfg);

    SearchReport report;
    report.whitebox_id = whitebox.arch_id;
    report.sandbox_id = sandbox.arch_id;
    report.eta = cfg.attack.eta;
    report.gamma = cfg.attack.gamma;

    // candidate taps are those the bank actually covers for every class the
    // probes target; a partially trained bank narrows the search space rather
    // than aborting it
    std::vector<std::string> remaining;
    for (const auto& tap : whitebox.tap_names) {
        bool covered = true;
        for (const auto& p : probes) covered = covered && bank.has(tap, p.y_tgt);
        if (covered) remaining.push_back(tap);
    }
    if (remaining.empty())
        throw Error("greedy_search: the head bank covers no tap for the probe "
                    "target set");
    float best_so_far = -1.0f;
    for (int k = 1; k <= max_layers && !remaining.empty(); ++k) {
        std::string best_tap;
        float best_tsuc = -1.0f;
        for (const auto& tap : remaining) {
            AttackConfig c = cfg.attack;
            c.layers = report.sequence;
            c.layers.push_back(tap);
            c.lambda.clear();
            float t = tsuc_over_probes(whitebox, sandbox, bank, heldout, probes,
                                       c, cfg.jobs);
            if (t > best_tsuc) {
                best_tsuc = t;
                best_tap = tap;
            }
        }
        if (k > 1 && best_tsuc <= best_so_far) break;  // accept only improvements
        report.sequence.push_back(best_tap);
        report.prefix_tsuc.push_back(best_tsuc);
        best_so_far = best_tsuc;
        remaining.erase(std::find(remaining.begin(), remaining.end(), best_tap));
    }
    return report;
}

std::pair<float, float> line_search_hparams(
    const TapModel& whitebox, const TapModel& sandbox, const HeadBank& bank,
    const Dataset& heldout, const std::vector<float>& grid_eta,
    const std::vector<float>& grid_gamma, SearchConfig cfg) {
    if (grid_eta.empty() || grid_gamma.empty())
        throw Error("line search: grids must be nonempty");
    std::vector<Probe> probes = make_probes(whitebox, sandbox, heldout, cfg);

    auto sweep = [&](const std::vector<float>& grid, auto&& apply) {
        float best_val = grid[0], best_tsuc = -1.0f;
        for (float v : grid) {
            AttackConfig c = cfg.attack;
            apply(c, v);
            float t = tsuc_over_probes(whitebox, sandbox, bank, heldout, probes,
                                       c, cfg.jobs);
            if (t > best_tsuc || (t == best_tsuc && v < best_val)) {
                best_tsuc = t;
                best_val = v;
            }
        }
        return best_val;
    };
    float eta = sweep(grid_eta, [](AttackConfig& c, float v) { c.eta = v; });
    cfg.attack.eta = eta;
    float gamma = sweep(grid_gamma, [](AttackConfig& c, float v) { c.gamma = v; });
    return {eta, gamma};
}

void save_report(const SearchReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("save_report: cannot open " + path);
    auto join = [](const auto& xs, auto fmt) {
        std::string out;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i) out += ",";
            out += fmt(xs[i]);
        }
        return out;
    };
    f << "whitebox = " << r.whitebox_id << "\n";
    f << "sandbox = " << r.sandbox_id << "\n";
    f << "eta = " << r.eta << "\n";
    f << "gamma = " << r.gamma << "\n";
    f << "sequence = " << join(r.sequence, [](const std::string& s) { return s; })
      << "\n";
    f << "prefix_tsuc = "
      << join(r.prefix_tsuc, [](float v) { return std::to_string(v); }) << "\n";
    if (!f) throw Error("save_report: write failed for " + path);
}

SearchReport load_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("load_report: cannot open " + path);
    SearchReport r;
    std::string line;
    while (std::getline(f, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
        };
        trim(key);
        trim(val);
        auto split = [&](const std::string& s) {
            std::vector<std::string> out;
            std::istringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(item);
            return out;
        };
        if (key == "whitebox") r.whitebox_id = val;
        else if (key == "sandbox") r.sandbox_id = val;
        else if (key == "eta") r.eta = std::stof(val);
        else if (key == "gamma") r.gamma = std::stof(val);
        else if (key == "sequence") r.sequence = split(val);
        else if (key == "prefix_tsuc") {
            for (const auto& s : split(val)) r.prefix_tsuc.push_back(std::stof(s));
        } else {
            throw Error("load_report: unknown key " + key + " in " + path);
        }
    }
    return r;
}

}  // namespace ftnet
