// ftf: one executable for the whole feature-transfer workflow — data
// generation, training, head banks, layer search, attacks, evaluation,
// disruption profiling, and the query-limited oracle loop.

#include <sys/stat.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftnet/config.hpp"
#include "ftnet/eval.hpp"
#include "ftnet/search.hpp"
#include "ftnet/synth.hpp"

using namespace ftnet;

namespace {

int log_level() {
    static int level = [] {
        const char* env = std::getenv("FTF_LOG");
        return env ? std::atoi(env) : 1;
    }();
    return level;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cout << msg << "\n";
}

void debug(const std::string& msg) {
    if (log_level() >= 2) std::cout << "[debug] " << msg << "\n";
}

// Config or CLI problems exit 1; failures during execution exit 2.
struct ValidationError : Error {
    using Error::Error;
};

// remaps config problems onto exit code 1 regardless of which layer threw
void validate(RunConfig& cfg, const std::vector<std::string>& require) {
    try {
        validate_config(cfg, require);
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
}

void make_dir(const std::string& path) {
    if (::mkdir(path.c_str(), 0755) != 0 && errno != EEXIST)
        throw Error("cannot create directory '" + path + "'");
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    return cfg.out_dir + "/" + name;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& artifacts) {
    std::ofstream f(out_path(cfg, command + "-manifest.txt"));
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    f << "command = " << command << "\n"
      << "config_hash = " << hash << "\n"
      << "seed = " << cfg.seed << "\n";
    for (const auto& a : artifacts) f << "artifact = " << a << "\n";
}

Dataset load_split_dataset(const RunConfig& cfg, bool val,
                           const std::string& split_name) {
    Dataset ds = val ? load_dataset(cfg.data_val_images, cfg.data_val_labels,
                                    {}, "val")
                     : load_dataset(cfg.data_train_images,
                                    cfg.data_train_labels, {}, "train");
    if (!split_name.empty())
        ds = build_superclass_dataset(ds, split_by_name(split_name));
    return ds;
}

// ------------------------------------------------------------ subcommands

int cmd_gen_data(RunConfig& cfg) {
    validate(cfg, {});
    make_dir(cfg.out_dir);
    SynthConfig sc;
    sc.image_size = cfg.gen_image_size;
    sc.per_class = cfg.gen_per_class;
    sc.contrast = cfg.gen_contrast;
    sc.noise = cfg.gen_noise;
    sc.speckle = cfg.gen_speckle;
    sc.seed = cfg.seed;
    Dataset train = make_shapes_dataset(sc, "train");
    Dataset val = make_shapes_dataset(sc, "val");
    save_dataset(train, out_path(cfg, "train_images.idx"),
                 out_path(cfg, "train_labels.idx"));
    save_dataset(val, out_path(cfg, "val_images.idx"),
                 out_path(cfg, "val_labels.idx"));
    write_manifest(cfg, "gen-data",
                   {"train_images.idx", "train_labels.idx", "val_images.idx",
                    "val_labels.idx"});
    info("wrote " + std::to_string(train.size()) + " train and " +
         std::to_string(val.size()) + " val images to " + cfg.out_dir);
    return 0;
}

int cmd_train(RunConfig& cfg) {
    validate(cfg, {"data.train_images", "data.train_labels"});
    make_dir(cfg.out_dir);
    Dataset train = load_split_dataset(cfg, false, cfg.data_whitebox_split);
    TapModel m = build_model(cfg.model_arch, train.num_classes(), cfg.seed);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    train_classifier(m, train, tc);
    float train_acc = accuracy(m, train, cfg.jobs);
    info("train accuracy " + std::to_string(train_acc));
    if (!cfg.data_val_images.empty()) {
        Dataset val = load_split_dataset(cfg, true, cfg.data_whitebox_split);
        info("val accuracy " + std::to_string(accuracy(m, val, cfg.jobs)));
    }
    save_checkpoint(m, out_path(cfg, "model.ckpt"));
    write_manifest(cfg, "train", {"model.ckpt"});
    return 0;
}

int cmd_train_heads(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint", "data.train_images",
                          "data.train_labels"});
    make_dir(cfg.out_dir);
    TapModel m = load_checkpoint(cfg.model_checkpoint);
    Dataset train = load_split_dataset(cfg, false, cfg.data_whitebox_split);
    std::vector<std::string> taps =
        cfg.heads_taps.empty() ? m.tap_names : cfg.heads_taps;
    std::vector<int> classes = cfg.heads_classes;
    if (classes.empty())
        for (int c = 0; c < m.num_classes; ++c) classes.push_back(c);
    HeadBank bank =
        train_bank(m, taps, classes, train, cfg.heads, cfg.seed, cfg.jobs);
    for (const auto& fail : bank.failures)
        info("warning: head (" + fail.tap + ", " + std::to_string(fail.class_id) +
             ") AUC " + std::to_string(fail.auc) + " below floor");
    std::string dir = cfg.heads_bank_dir.empty() ? out_path(cfg, "bank")
                                                 : cfg.heads_bank_dir;
    make_dir(dir);
    save_bank(bank, dir);
    write_manifest(cfg, "train-heads", {dir});
    info("bank mean AUC " + std::to_string(bank.mean_auc()));
    return 0;
}

int cmd_search_layers(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint", "model.sandbox_checkpoint",
                          "heads.bank_dir", "data.val_images",
                          "data.val_labels"});
    make_dir(cfg.out_dir);
    TapModel whitebox = load_checkpoint(cfg.model_checkpoint);
    TapModel sandbox = load_checkpoint(cfg.model_sandbox_checkpoint);
    HeadBank bank = load_bank(cfg.heads_bank_dir, whitebox);
    Dataset heldout = load_split_dataset(cfg, true, cfg.data_whitebox_split);

    SearchConfig sc;
    sc.n_sources = cfg.search_n_sources;
    sc.targets_per_source = cfg.search_targets_per_source;
    sc.attack = cfg.attack;
    sc.seed = cfg.seed;
    sc.jobs = cfg.jobs;
    SearchReport rep = greedy_search(whitebox, sandbox, bank, heldout,
                                     cfg.search_max_layers, sc);
    if (!cfg.search_grid_eta.empty() && !cfg.search_grid_gamma.empty()) {
        sc.attack.layers = rep.sequence;
        sc.attack.lambda.clear();
        auto [eta, gamma] =
            line_search_hparams(whitebox, sandbox, bank, heldout,
                                cfg.search_grid_eta, cfg.search_grid_gamma, sc);
        rep.eta = eta;
        rep.gamma = gamma;
    }
    save_report(rep, out_path(cfg, "search_report.txt"));
    write_manifest(cfg, "search-layers", {"search_report.txt"});
    std::string seq;
    for (const auto& t : rep.sequence) seq += (seq.empty() ? "" : ";") + t;
    info("selected layers " + seq);
    return 0;
}

// family dispatch shared by attack/evaluate/disrupt
AttackFn make_attack_fn(const RunConfig& cfg, const TapModel& whitebox,
                        const std::shared_ptr<HeadBank>& bank,
                        const std::shared_ptr<std::vector<TapModel>>& ensemble) {
    const std::string& fam = cfg.attack_family;
    AttackConfig ac = cfg.attack;
    if (fam == "identity") {
        return [](const Tensor& x, int) {
            AttackResult r;
            r.delta = Tensor(x.shape);
            r.adversarial = x;
            return r;
        };
    }
    if (fam == "tmim")
        return [&whitebox, ac](const Tensor& x, int y) {
            return tmim_attack(whitebox, x, y, ac);
        };
    if (fam == "tpgd")
        return [&whitebox, ac](const Tensor& x, int y) {
            return tpgd_attack(whitebox, x, y, ac);
        };
    if (fam == "sgm") {
        float decay = cfg.attack_sgm_decay;
        return [&whitebox, ac, decay](const Tensor& x, int y) {
            return sgm_attack(whitebox, x, y, ac, decay);
        };
    }
    if (fam == "ensemble") {
        if (!ensemble || ensemble->empty())
            throw ValidationError(
                "attack.family ensemble needs model.ensemble_checkpoints");
        return [&whitebox, ensemble, ac](const Tensor& x, int y) {
            std::vector<const TapModel*> models{&whitebox};
            for (const auto& m : *ensemble) models.push_back(&m);
            return ensemble_tmim(models, x, y, ac);
        };
    }
    if (fam == "fda") {
        if (!bank)
            throw ValidationError("attack.family fda needs heads.bank_dir");
        if (ac.layers.empty())
            throw ValidationError("attack.family fda needs attack.layers");
        return [&whitebox, bank, ac](const Tensor& x, int y) {
            return fda_attack(whitebox, *bank, x, y, ac);
        };
    }
    throw ValidationError("unknown attack.family '" + fam + "'");
}

struct LoadedModels {
    TapModel whitebox;
    std::shared_ptr<HeadBank> bank;
    std::shared_ptr<std::vector<TapModel>> ensemble;
};

LoadedModels load_attack_models(const RunConfig& cfg) {
    LoadedModels lm;
    lm.whitebox = load_checkpoint(cfg.model_checkpoint);
    if (!cfg.heads_bank_dir.empty())
        lm.bank = std::make_shared<HeadBank>(
            load_bank(cfg.heads_bank_dir, lm.whitebox));
    lm.ensemble = std::make_shared<std::vector<TapModel>>();
    for (const auto& p : cfg.model_ensemble_checkpoints)
        lm.ensemble->push_back(load_checkpoint(p));
    return lm;
}

int cmd_attack(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint", "data.val_images",
                          "data.val_labels"});
    make_dir(cfg.out_dir);
    LoadedModels lm = load_attack_models(cfg);
    Dataset val = load_split_dataset(cfg, true, cfg.data_whitebox_split);
    AttackFn fn = make_attack_fn(cfg, lm.whitebox, lm.bank, lm.ensemble);

    ModelRunner runner(lm.whitebox);
    Dataset adv;
    adv.class_names = val.class_names;
    adv.split_tag = "val";
    std::uint64_t state = derive_seed(cfg.seed, "attack-targets");
    int wb_hits = 0;
    for (std::size_t i = 0;
         i < val.size() && adv.size() < static_cast<std::size_t>(cfg.eval_n_sources);
         ++i) {
        if (runner.predict(val.images[i]) != val.labels[i]) continue;
        state = splitmix64(state);
        int y_tgt = static_cast<int>(state % lm.whitebox.num_classes);
        if (y_tgt == val.labels[i]) y_tgt = (y_tgt + 1) % lm.whitebox.num_classes;
        AttackResult r = fn(val.images[i], y_tgt);
        if (runner.predict(r.adversarial) == y_tgt) ++wb_hits;
        adv.images.push_back(r.adversarial);
        adv.labels.push_back(y_tgt);
    }
    if (adv.images.empty()) throw Error("no correctly classified source images");
    save_dataset(adv, out_path(cfg, "adv_images.idx"),
                 out_path(cfg, "adv_targets.idx"));
    write_manifest(cfg, "attack", {"adv_images.idx", "adv_targets.idx"});
    info("whitebox targeted success " + std::to_string(wb_hits) + "/" +
         std::to_string(adv.size()));
    return 0;
}

int cmd_distal(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint"});
    make_dir(cfg.out_dir);
    LoadedModels lm = load_attack_models(cfg);
    std::optional<TapModel> blackbox;
    if (!cfg.model_blackbox_checkpoint.empty())
        blackbox = load_checkpoint(cfg.model_blackbox_checkpoint);

    AttackConfig ac = cfg.attack;
    ac.iters = cfg.distal_iters;
    Dataset out;
    out.split_tag = "val";
    for (int c = 0; c < lm.whitebox.num_classes; ++c)
        out.class_names.push_back("class" + std::to_string(c));
    int bb_hits = 0;
    std::unique_ptr<ModelRunner> bb_runner;
    if (blackbox) bb_runner = std::make_unique<ModelRunner>(*blackbox);
    for (int i = 0; i < cfg.distal_count; ++i) {
        int y_tgt = i % lm.whitebox.num_classes;
        AttackConfig c = ac;
        c.seed = derive_seed(cfg.seed, "distal-run", i);
        AttackResult r;
        if (cfg.attack_family == "tpgd") {
            r = distal_tpgd(lm.whitebox, y_tgt, c);
        } else if (cfg.attack_family == "fda") {
            if (!lm.bank)
                throw ValidationError("distal fda needs heads.bank_dir");
            r = distal_fda(lm.whitebox, *lm.bank, y_tgt, c);
        } else {
            throw ValidationError("distal supports attack.family fda or tpgd");
        }
        if (bb_runner && bb_runner->predict(r.adversarial) == y_tgt) ++bb_hits;
        out.images.push_back(r.adversarial);
        out.labels.push_back(y_tgt);
    }
    save_dataset(out, out_path(cfg, "distal_images.idx"),
                 out_path(cfg, "distal_targets.idx"));
    write_manifest(cfg, "distal", {"distal_images.idx", "distal_targets.idx"});
    if (blackbox)
        info("blackbox targeted success " + std::to_string(bb_hits) + "/" +
             std::to_string(cfg.distal_count));
    return 0;
}

ScenarioRule rule_from_config(const RunConfig& cfg) {
    if (cfg.eval_scenario == "standard") return standard_rule();
    if (cfg.eval_scenario == "scenario1") {
        if (cfg.data_whitebox_split.empty() || cfg.data_blackbox_split.empty())
            throw ValidationError("scenario1 needs both split declarations");
        return scenario1_rule(split_by_name(cfg.data_whitebox_split),
                              split_by_name(cfg.data_blackbox_split));
    }
    if (cfg.eval_scenario == "scenario2") {
        if (cfg.data_blackbox_split.empty())
            throw ValidationError("scenario2 needs data.blackbox_split");
        return scenario2_rule(split_by_name(cfg.data_blackbox_split));
    }
    if (cfg.eval_scenario == "scenario3") {
        if (cfg.data_whitebox_split.empty())
            throw ValidationError("scenario3 needs data.whitebox_split");
        return scenario3_rule(split_by_name(cfg.data_whitebox_split));
    }
    throw ValidationError("unknown eval.scenario '" + cfg.eval_scenario + "'");
}

int cmd_evaluate(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint", "model.blackbox_checkpoint",
                          "data.val_images", "data.val_labels"});
    make_dir(cfg.out_dir);
    LoadedModels lm = load_attack_models(cfg);
    TapModel blackbox = load_checkpoint(cfg.model_blackbox_checkpoint);
    Dataset val = load_dataset(cfg.data_val_images, cfg.data_val_labels, {},
                               "val");
    ScenarioRule rule = rule_from_config(cfg);
    auto pairs = select_pairs(lm.whitebox, blackbox, val, cfg.eval_n_sources,
                              cfg.eval_targets_per_source, cfg.seed, rule);
    AttackFn fn = make_attack_fn(cfg, lm.whitebox, lm.bank, lm.ensemble);
    TransferReport rep = transfer_evaluate(pairs, fn, val, blackbox, rule,
                                           cfg.attack.epsilon, cfg.jobs);
    debug("iterations logged " + std::to_string(rep.iterations_logged) +
          ", constraint violations " +
          std::to_string(rep.constraint_violations));

    ReportRow row;
    row.scenario = rule.name;
    row.whitebox = lm.whitebox.arch_id;
    row.blackbox = blackbox.arch_id;
    row.attack = cfg.attack_family;
    for (const auto& l : cfg.attack.layers)
        row.layers += (row.layers.empty() ? "" : ";") + l;
    row.eta = cfg.attack.eta;
    row.gamma = cfg.attack.gamma;
    row.epsilon = cfg.attack.epsilon;
    row.iters = cfg.attack.iters;
    row.n = rep.n;
    row.error = rep.error;
    row.error_ci95 = rep.error_ci95;
    row.tsuc = rep.tsuc;
    row.tsuc_ci95 = rep.tsuc_ci95;
    row.seed = cfg.seed;
    write_report_csv({row}, out_path(cfg, "report.csv"));
    write_manifest(cfg, "evaluate", {"report.csv"});
    info("error " + std::to_string(rep.error) + " tsuc " +
         std::to_string(rep.tsuc) + " over n=" + std::to_string(rep.n));
    return 0;
}

int cmd_disrupt(RunConfig& cfg, int target_class) {
    validate(cfg, {"model.checkpoint", "heads.bank_dir",
                          "data.val_images", "data.val_labels"});
    make_dir(cfg.out_dir);
    LoadedModels lm = load_attack_models(cfg);
    Dataset val = load_split_dataset(cfg, true, cfg.data_whitebox_split);
    AttackFn fn = make_attack_fn(cfg, lm.whitebox, lm.bank, lm.ensemble);

    ModelRunner runner(lm.whitebox);
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (std::size_t i = 0;
         i < val.size() && pairs.size() < static_cast<std::size_t>(cfg.eval_n_sources);
         ++i) {
        if (val.labels[i] == target_class) continue;
        if (runner.predict(val.images[i]) != val.labels[i]) continue;
        AttackResult r = fn(val.images[i], target_class);
        pairs.emplace_back(val.images[i], r.adversarial);
    }
    if (pairs.empty()) throw Error("no usable source images for disruption");
    DisruptionProfile prof =
        disruption_profile(lm.whitebox, *lm.bank, pairs, target_class);
    prof.attack_id = cfg.attack_family;
    write_disruption_csv({prof}, out_path(cfg, "disruption.csv"));
    write_svg_bars(prof.tap_names, prof.disruption,
                   "feature disruption: " + cfg.attack_family,
                   out_path(cfg, "disruption.svg"));
    write_manifest(cfg, "disrupt", {"disruption.csv", "disruption.svg"});
    return 0;
}

int cmd_serve_oracle(RunConfig& cfg, int max_seconds) {
    validate(cfg, {"model.checkpoint"});
    TapModel m = load_checkpoint(cfg.model_checkpoint);
    OracleServer server(m, cfg.oracle_port);
    std::cout << "listening on port " << server.port() << std::endl;
    if (max_seconds > 0) {
        std::this_thread::sleep_for(std::chrono::seconds(max_seconds));
    } else {
        for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }
    server.stop();
    return 0;
}

int cmd_query_attack(RunConfig& cfg) {
    validate(cfg, {"model.checkpoint", "data.val_images",
                          "data.val_labels"});
    make_dir(cfg.out_dir);
    LoadedModels lm = load_attack_models(cfg);

    // oracle backend: a local blackbox checkpoint, or a remote endpoint
    std::optional<TapModel> blackbox;
    std::unique_ptr<Oracle> oracle;
    if (!cfg.model_blackbox_checkpoint.empty()) {
        blackbox = load_checkpoint(cfg.model_blackbox_checkpoint);
        oracle = std::make_unique<InProcessOracle>(*blackbox);
    } else if (cfg.oracle_port > 0) {
        oracle = std::make_unique<RemoteOracle>(cfg.oracle_host,
                                                cfg.oracle_port);
    } else {
        throw ValidationError(
            "query-attack needs model.blackbox_checkpoint or "
            "query.oracle_port");
    }

    Dataset val = load_split_dataset(cfg, true, cfg.data_whitebox_split);
    ModelRunner wb(lm.whitebox);
    std::unique_ptr<ModelRunner> bb;
    if (blackbox) bb = std::make_unique<ModelRunner>(*blackbox);

    PrgfConfig qc = cfg.prgf;
    qc.seed = cfg.seed;
    std::uint64_t state = derive_seed(cfg.seed, "query-targets");
    int n = 0, hits = 0;
    std::uint64_t total_queries = 0;
    for (std::size_t i = 0;
         i < val.size() && n < cfg.eval_n_sources; ++i) {
        if (wb.predict(val.images[i]) != val.labels[i]) continue;
        state = splitmix64(state);
        int y_tgt = static_cast<int>(state % lm.whitebox.num_classes);
        if (y_tgt == val.labels[i]) y_tgt = (y_tgt + 1) % lm.whitebox.num_classes;

        if (cfg.query_budget >= 0)
            oracle->set_budget(
                static_cast<long>(oracle->query_count()) + cfg.query_budget);
        AttackObjective obj =
            cfg.attack_family == "fda" && lm.bank
                ? make_fda_objective(lm.whitebox, *lm.bank, y_tgt, cfg.attack)
                : make_xent_objective(lm.whitebox);
        QueryAttackResult qr = prior_guided_attack(obj, *oracle, val.images[i],
                                                   y_tgt, cfg.attack, qc);
        total_queries += qr.queries_used;
        int pred = bb ? bb->predict(qr.attack.adversarial)
                      : argmax_lowest(oracle->query(qr.attack.adversarial));
        if (pred == y_tgt) ++hits;
        ++n;
    }
    if (n == 0) throw Error("no correctly classified source images");
    std::ofstream f(out_path(cfg, "query_report.csv"));
    f << "budget,n,tsuc,queries_used,prior\n"
      << cfg.query_budget << ',' << n << ','
      << static_cast<float>(hits) / static_cast<float>(n) << ','
      << total_queries << ',' << cfg.attack_family << "\n";
    write_manifest(cfg, "query-attack", {"query_report.csv"});
    info("tsuc " + std::to_string(static_cast<float>(hits) / n) + " over n=" +
         std::to_string(n) + " using " + std::to_string(total_queries) +
         " queries");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-transfer attack laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--seed", seed, "global seed override");
    app.add_option("--out", out_dir, "output directory override");
    app.add_option("--jobs", jobs, "worker cap override");
    app.add_option("--set", overrides,
                   "config override as section.key=value (repeatable)");

    auto* gen = app.add_subcommand("gen-data", "generate the shapes dataset");
    auto* train = app.add_subcommand("train", "train a classifier");
    auto* heads = app.add_subcommand("train-heads", "train the auxiliary head bank");
    auto* search = app.add_subcommand("search-layers", "greedy attack-layer search");
    auto* attack = app.add_subcommand("attack", "craft adversarial examples");
    auto* distal = app.add_subcommand("distal", "generate distal examples");
    auto* evaluate = app.add_subcommand("evaluate", "transfer evaluation");
    auto* disrupt = app.add_subcommand("disrupt", "per-layer disruption profile");
    auto* serve = app.add_subcommand("serve-oracle", "serve a checkpoint");
    auto* query = app.add_subcommand("query-attack", "prior-guided query attack");
    // let global options (--set/--seed/--out/...) appear after the subcommand
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    int disrupt_target = 0;
    disrupt->add_option("--target", disrupt_target, "target class")->required();
    int serve_seconds = 0;
    serve->add_option("--max-seconds", serve_seconds,
                      "stop after this many seconds (0 = run forever)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        if (rc != 0) std::cerr << "ftf-error: code=1 stage=cli" << std::endl;
        return rc == 0 ? 0 : 1;
    }

    RunConfig cfg;
    try {
        try {
            if (!config_path.empty()) cfg = load_config(config_path);
            for (const auto& ov : overrides) {
                auto eq = ov.find('=');
                if (eq == std::string::npos)
                    throw Error("--set expects key=value, got '" + ov + "'");
                apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
            }
        } catch (const Error& e) {
            throw ValidationError(e.what());
        }
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (jobs) cfg.jobs = *jobs;

        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (heads->parsed()) return cmd_train_heads(cfg);
        if (search->parsed()) return cmd_search_layers(cfg);
        if (attack->parsed()) return cmd_attack(cfg);
        if (distal->parsed()) return cmd_distal(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (disrupt->parsed()) return cmd_disrupt(cfg, disrupt_target);
        if (serve->parsed()) return cmd_serve_oracle(cfg, serve_seconds);
        if (query->parsed()) return cmd_query_attack(cfg);
        std::cerr << "ftf-error: code=1 stage=cli msg=\"no subcommand\""
                  << std::endl;
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "ftf-error: code=1 stage=validate msg=\"" << e.what()
                  << "\"" << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "ftf-error: code=2 stage=run msg=\"" << e.what() << "\""
                  << std::endl;
        return 2;
    }
}
