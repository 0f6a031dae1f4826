#include "ftnet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ftnet/common.hpp"

namespace ftnet {

namespace {

int split_index_of(const SuperclassSplit& split, int base_label) {
    for (std::size_t i = 0; i < split.classes.size(); ++i) {
        const auto& comps = split.classes[i].component_ids;
        if (std::find(comps.begin(), comps.end(), base_label) != comps.end())
            return static_cast<int>(i);
    }
    return -1;
}

int index_of_name(const SuperclassSplit& split, const std::string& name) {
    for (std::size_t i = 0; i < split.classes.size(); ++i)
        if (split.classes[i].name == name) return static_cast<int>(i);
    return -1;
}

std::uint64_t next_u64(std::uint64_t& state) {
    state = splitmix64(state);
    return state;
}

int pick(std::uint64_t& state, int n) {
    return static_cast<int>(next_u64(state) % static_cast<std::uint64_t>(n));
}

}  // namespace

int ScenarioRule::map_whitebox(int base_label) const {
    if (!whitebox_split) return base_label;
    return split_index_of(*whitebox_split, base_label);
}

int ScenarioRule::map_blackbox(int base_label) const {
    if (!blackbox_split) return base_label;
    int idx = split_index_of(*blackbox_split, base_label);
    if (idx >= 0) return idx;
    // Disjoint-data protocols bridge through shared superclass names: an image
    // the blackbox never saw still has a well-defined expected superclass.
    if (whitebox_split) {
        int wb = split_index_of(*whitebox_split, base_label);
        if (wb >= 0)
            return index_of_name(*blackbox_split, whitebox_split->classes[wb].name);
    }
    return -1;
}

ScenarioRule standard_rule() {
    ScenarioRule r;
    r.name = "standard";
    return r;
}

ScenarioRule scenario1_rule(const SuperclassSplit& whitebox,
                            const SuperclassSplit& blackbox) {
    if (!verify_zero_overlap(whitebox, blackbox))
        throw Error("scenario1 requires zero component overlap between splits");
    ScenarioRule r;
    r.name = "scenario1";
    r.whitebox_split = whitebox;
    r.blackbox_split = blackbox;
    return r;
}

ScenarioRule scenario2_rule(const SuperclassSplit& blackbox) {
    ScenarioRule r;
    r.name = "scenario2";
    r.blackbox_split = blackbox;
    return r;
}

ScenarioRule scenario3_rule(const SuperclassSplit& whitebox) {
    ScenarioRule r;
    r.name = "scenario3";
    r.whitebox_split = whitebox;
    return r;
}

bool rule_tsuc(const ScenarioRule& rule, const EvalTarget& target, int bb_pred) {
    if (rule.name == "scenario3") {
        // Blackbox answers in base labels; success is landing anywhere inside
        // the targeted superclass.
        return rule.map_whitebox(bb_pred) == target.bb_label;
    }
    return bb_pred == target.bb_label;
}

bool rule_error(const ScenarioRule& rule, const EvalPair& pair, int bb_pred) {
    if (rule.name == "scenario3")
        return rule.map_whitebox(bb_pred) != pair.y_src_wb;
    return bb_pred != pair.y_src_bb;
}

std::vector<EvalPair> select_pairs(const TapModel& whitebox,
                                   const TapModel& blackbox, const Dataset& val,
                                   int n_sources, int targets_per_source,
                                   std::uint64_t seed, const ScenarioRule& rule) {
    if (n_sources <= 0 || targets_per_source <= 0)
        throw Error("select_pairs: n_sources and targets_per_source must be positive");
    ModelRunner wb(whitebox), bb(blackbox);

    std::vector<EvalPair> pool;
    for (std::size_t i = 0; i < val.size(); ++i) {
        int y_wb = rule.map_whitebox(val.labels[i]);
        int y_bb = rule.map_blackbox(val.labels[i]);
        if (y_wb < 0 || y_bb < 0) continue;
        if (wb.predict(val.images[i]) != y_wb) continue;
        if (bb.predict(val.images[i]) != y_bb) continue;
        pool.push_back(EvalPair{static_cast<int>(i), y_wb, y_bb, {}});
    }
    if (pool.empty())
        throw Error("select_pairs: no validation image is correct under both models");

    std::uint64_t state = derive_seed(seed, "select_pairs", 0);
    // seeded Fisher-Yates, then truncate
    for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[pick(state, static_cast<int>(i))]);
    if (pool.size() > static_cast<std::size_t>(n_sources)) pool.resize(n_sources);

    for (auto& pair : pool) {
        std::vector<EvalTarget> admissible;
        if (rule.name == "standard") {
            for (int c = 0; c < whitebox.num_classes; ++c)
                if (c != pair.y_src_wb) admissible.push_back({c, c});
        } else if (rule.name == "scenario1") {
            // restricted to superclass names both models know
            for (std::size_t k = 0; k < rule.whitebox_split->classes.size(); ++k) {
                if (static_cast<int>(k) == pair.y_src_wb) continue;
                int bb_idx = index_of_name(*rule.blackbox_split,
                                           rule.whitebox_split->classes[k].name);
                if (bb_idx >= 0) admissible.push_back({static_cast<int>(k), bb_idx});
            }
        } else if (rule.name == "scenario2") {
            // target a superclass through one randomly chosen component label
            for (std::size_t k = 0; k < rule.blackbox_split->classes.size(); ++k) {
                if (static_cast<int>(k) == pair.y_src_bb) continue;
                const auto& comps = rule.blackbox_split->classes[k].component_ids;
                int comp = comps[pick(state, static_cast<int>(comps.size()))];
                admissible.push_back({comp, static_cast<int>(k)});
            }
        } else if (rule.name == "scenario3") {
            for (std::size_t k = 0; k < rule.whitebox_split->classes.size(); ++k)
                if (static_cast<int>(k) != pair.y_src_wb)
                    admissible.push_back({static_cast<int>(k), static_cast<int>(k)});
        } else {
            throw Error("select_pairs: unknown scenario '" + rule.name + "'");
        }
        if (admissible.size() < static_cast<std::size_t>(targets_per_source))
            throw Error("select_pairs: only " + std::to_string(admissible.size()) +
                        " admissible targets under scenario '" + rule.name + "'");
        for (std::size_t i = admissible.size(); i > 1; --i)
            std::swap(admissible[i - 1], admissible[pick(state, static_cast<int>(i))]);
        admissible.resize(targets_per_source);
        pair.targets = std::move(admissible);
    }
    return pool;
}

float binomial_ci95(float p, int n) {
    if (n <= 0) return 0.0f;
    return 1.96f * std::sqrt(std::max(0.0f, p * (1.0f - p)) / static_cast<float>(n));
}

TransferReport transfer_evaluate(const std::vector<EvalPair>& pairs,
                                 const AttackFn& attack, const Dataset& val,
                                 const TapModel& blackbox,
                                 const ScenarioRule& rule, float epsilon,
                                 int jobs) {
    struct Job {
        const EvalPair* pair;
        EvalTarget target;
    };
    std::vector<Job> work;
    for (const auto& p : pairs)
        for (const auto& t : p.targets) work.push_back({&p, t});

    TransferReport rep;
    rep.scenario = rule.name;
    rep.blackbox_id = blackbox.arch_id;
    rep.epsilon_used = epsilon;
    rep.records.resize(work.size());

    std::atomic<long> iters_logged{0}, violations{0};
    const float eps_tol = epsilon * 1e-5f + 1e-7f;

    std::size_t workers = std::max<std::size_t>(
        1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)),
                                 work.size()));
    auto run_range = [&](std::size_t w) {
        ModelRunner bb(blackbox);
        for (std::size_t i = w; i < work.size(); i += workers) {
            const auto& j = work[i];
            AttackRecord rec;
            rec.image_index = j.pair->image_index;
            rec.wb_target = j.target.wb_label;
            rec.bb_pred = -1;
            rec.attack_ok = true;
            try {
                AttackResult res =
                    attack(val.images[rec.image_index], j.target.wb_label);
                long n = static_cast<long>(res.delta_linf_trace.size());
                iters_logged += n;
                long bad = 0;
                for (std::size_t k = 0; k < res.delta_linf_trace.size(); ++k) {
                    if (res.delta_linf_trace[k] > epsilon + eps_tol) ++bad;
                    if (res.pixel_min_trace[k] < -1e-6f ||
                        res.pixel_max_trace[k] > 1.0f + 1e-6f)
                        ++bad;
                }
                violations += bad;
                rec.bb_pred = bb.predict(res.adversarial);
            } catch (const Error& e) {
                rec.attack_ok = false;
                rec.error_msg = e.what();
            }
            rep.records[i] = std::move(rec);
        }
    };
    if (workers == 1) {
        run_range(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run_range, w);
        for (auto& t : threads) t.join();
    }

    rep.iterations_logged = iters_logged.load();
    rep.constraint_violations = violations.load();

    int n = 0, n_err = 0, n_tsuc = 0;
    for (std::size_t i = 0; i < work.size(); ++i) {
        const auto& rec = rep.records[i];
        if (!rec.attack_ok) continue;
        ++n;
        if (rule_error(rule, *work[i].pair, rec.bb_pred)) ++n_err;
        if (rule_tsuc(rule, work[i].target, rec.bb_pred)) ++n_tsuc;
    }
    rep.n = n;
    if (n > 0) {
        rep.error = static_cast<float>(n_err) / n;
        rep.tsuc = static_cast<float>(n_tsuc) / n;
        rep.error_ci95 = binomial_ci95(rep.error, n);
        rep.tsuc_ci95 = binomial_ci95(rep.tsuc, n);
    }
    return rep;
}

DisruptionProfile disruption_profile(
    const TapModel& m, const HeadBank& bank,
    const std::vector<std::pair<Tensor, Tensor>>& clean_adv_pairs, int y_tgt) {
    DisruptionProfile prof;
    prof.model_id = m.arch_id;
    ModelRunner runner(m);
    for (const auto& tap : m.tap_names) {
        if (!bank.has(tap, y_tgt)) continue;
        const AuxHead& head = bank.at(tap, y_tgt);
        double total = 0.0;
        for (const auto& [clean, adv] : clean_adv_pairs) {
            float pc = head_probability(head, runner.extract(tap, clean));
            float pa = head_probability(head, runner.extract(tap, adv));
            total += static_cast<double>(pa) - static_cast<double>(pc);
        }
        prof.tap_names.push_back(tap);
        prof.disruption.push_back(
            clean_adv_pairs.empty()
                ? 0.0f
                : static_cast<float>(total / clean_adv_pairs.size()));
    }
    return prof;
}

namespace {

std::string fmt_f(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

const char* kReportHeader =
    "scenario,whitebox,blackbox,attack,layers,eta,gamma,epsilon,iters,n,"
    "error,error_ci95,tsuc,tsuc_ci95,seed";

}  // namespace

void write_report_csv(const std::vector<ReportRow>& rows,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << kReportHeader << "\n";
    for (const auto& r : rows) {
        if (r.layers.find(',') != std::string::npos)
            throw Error("layers field must not contain commas; join with ';'");
        out << r.scenario << ',' << r.whitebox << ',' << r.blackbox << ','
            << r.attack << ',' << r.layers << ',' << fmt_f(r.eta) << ','
            << fmt_f(r.gamma) << ',' << fmt_f(r.epsilon) << ',' << r.iters
            << ',' << r.n << ',' << fmt_f(r.error) << ','
            << fmt_f(r.error_ci95) << ',' << fmt_f(r.tsuc) << ','
            << fmt_f(r.tsuc_ci95) << ',' << r.seed << "\n";
    }
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        throw Error("bad report header in '" + path + "'");
    std::vector<ReportRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 15)
            throw Error("line " + std::to_string(lineno) + ": expected 15 fields, got " +
                        std::to_string(f.size()));
        ReportRow r;
        r.scenario = f[0];
        r.whitebox = f[1];
        r.blackbox = f[2];
        r.attack = f[3];
        r.layers = f[4];
        r.eta = std::stof(f[5]);
        r.gamma = std::stof(f[6]);
        r.epsilon = std::stof(f[7]);
        r.iters = std::stoi(f[8]);
        r.n = std::stoi(f[9]);
        r.error = std::stof(f[10]);
        r.error_ci95 = std::stof(f[11]);
        r.tsuc = std::stof(f[12]);
        r.tsuc_ci95 = std::stof(f[13]);
        r.seed = std::stoull(f[14]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_disruption_csv(const std::vector<DisruptionProfile>& profiles,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "model,attack,tap_index,tap_name,disruption\n";
    for (const auto& p : profiles)
        for (std::size_t i = 0; i < p.tap_names.size(); ++i)
            out << p.model_id << ',' << p.attack_id << ',' << i << ','
                << p.tap_names[i] << ',' << fmt_f(p.disruption[i]) << "\n";
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr int kW = 640, kH = 400, kPad = 50;

}  // namespace

void write_svg_bars(const std::vector<std::string>& labels,
                    const std::vector<float>& values, const std::string& title,
                    const std::string& path) {
    if (labels.size() != values.size())
        throw Error("write_svg_bars: labels/values size mismatch");
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    float vmax = 1e-9f;
    for (float v : values) vmax = std::max(vmax, std::fabs(v));
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
        << "\" height=\"" << kH << "\">\n"
        << "  <title>" << xml_escape(title) << "</title>\n"
        << "  <text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">"
        << xml_escape(title) << "</text>\n";
    int n = static_cast<int>(values.size());
    float slot = static_cast<float>(kW - 2 * kPad) / std::max(1, n);
    float base = kH - kPad;
    float scale = (kH - 2 * kPad) / vmax;
    for (int i = 0; i < n; ++i) {
        float h = std::fabs(values[i]) * scale;
        float x = kPad + i * slot + slot * 0.15f;
        float y = values[i] >= 0 ? base - h : base;
        out << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\""
            << slot * 0.7f << "\" height=\"" << h
            << "\" fill=\"steelblue\"/>\n"
            << "  <text x=\"" << kPad + (i + 0.5f) * slot << "\" y=\""
            << kH - kPad / 2 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << xml_escape(labels[i]) << "</text>\n";
    }
    out << "  <line x1=\"" << kPad << "\" y1=\"" << base << "\" x2=\""
        << kW - kPad << "\" y2=\"" << base << "\" stroke=\"black\"/>\n"
        << "</svg>\n";
}

void write_svg_lines(const std::vector<std::string>& series_names,
                     const std::vector<std::vector<float>>& xs,
                     const std::vector<std::vector<float>>& ys,
                     const std::string& title, const std::string& path) {
    if (series_names.size() != xs.size() || xs.size() != ys.size())
        throw Error("write_svg_lines: series size mismatch");
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    float xmin = 0, xmax = 1e-9f, ymin = 0, ymax = 1e-9f;
    for (std::size_t s = 0; s < xs.size(); ++s) {
        if (xs[s].size() != ys[s].size())
            throw Error("write_svg_lines: x/y length mismatch in series " +
                        std::to_string(s));
        for (float v : xs[s]) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
        for (float v : ys[s]) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    }
    auto px = [&](float v) {
        return kPad + (v - xmin) / std::max(1e-9f, xmax - xmin) * (kW - 2 * kPad);
    };
    auto py = [&](float v) {
        return kH - kPad -
               (v - ymin) / std::max(1e-9f, ymax - ymin) * (kH - 2 * kPad);
    };
    static const char* kColors[] = {"steelblue", "firebrick", "seagreen",
                                    "darkorange", "purple", "gray"};
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
        << "\" height=\"" << kH << "\">\n"
        << "  <title>" << xml_escape(title) << "</title>\n"
        << "  <text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">"
        << xml_escape(title) << "</text>\n";
    for (std::size_t s = 0; s < xs.size(); ++s) {
        const char* color = kColors[s % 6];
        out << "  <polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < xs[s].size(); ++i)
            out << px(xs[s][i]) << ',' << py(ys[s][i]) << ' ';
        out << "\"/>\n"
            << "  <text x=\"" << kW - kPad + 4 << "\" y=\"" << 40 + 16 * s
            << "\" font-size=\"11\" fill=\"" << color << "\">"
            << xml_escape(series_names[s]) << "</text>\n";
    }
    out << "  <line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\""
        << kW - kPad << "\" y2=\"" << kH - kPad << "\" stroke=\"black\"/>\n"
        << "</svg>\n";
}

}  // namespace ftnet
