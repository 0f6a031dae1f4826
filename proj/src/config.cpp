#include "ftnet/config.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ftnet/synth.hpp"

namespace ftnet {

bool file_exists(const std::string& path) {
    struct stat st;
    return !path.empty() && ::stat(path.c_str(), &st) == 0;
}

SuperclassSplit split_by_name(const std::string& name) {
    if (name == "A") return shapes_split_a();
    if (name == "B") return shapes_split_b();
    if (name == "C") return shapes_split_c();
    throw Error("unknown split name '" + name + "' (expected A, B, or C)");
}

namespace {

std::string trim(std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw Error(key + ": expected an integer, got '" + v + "'");
    }
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw Error(key + ": expected an integer, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw Error(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

float to_float(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        float x = std::stof(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw Error(key + ": expected a number, got '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string fmt_f(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

template <typename T, typename Fmt>
std::string join_list(const std::vector<T>& xs, Fmt fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += fmt(xs[i]);
    }
    return out;
}

struct Key {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define STR_KEY(key, field)                                            \
    Key{key, [](RunConfig& c, const std::string& v) { c.field = v; },  \
        [](const RunConfig& c) { return c.field; }}
#define INT_KEY(key, field)                                  \
    Key{key,                                                 \
        [](RunConfig& c, const std::string& v) {             \
            c.field = to_int(key, v);                        \
        },                                                   \
        [](const RunConfig& c) { return std::to_string(c.field); }}
#define FLOAT_KEY(key, field)                                \
    Key{key,                                                 \
        [](RunConfig& c, const std::string& v) {             \
            c.field = to_float(key, v);                      \
        },                                                   \
        [](const RunConfig& c) { return fmt_f(c.field); }}

const std::vector<Key>& key_table() {
    static const std::vector<Key> keys = {
        STR_KEY("data.train_images", data_train_images),
        STR_KEY("data.train_labels", data_train_labels),
        STR_KEY("data.val_images", data_val_images),
        STR_KEY("data.val_labels", data_val_labels),
        STR_KEY("data.whitebox_split", data_whitebox_split),
        STR_KEY("data.blackbox_split", data_blackbox_split),

        INT_KEY("gen.image_size", gen_image_size),
        INT_KEY("gen.per_class", gen_per_class),
        FLOAT_KEY("gen.contrast", gen_contrast),
        FLOAT_KEY("gen.noise", gen_noise),
        FLOAT_KEY("gen.speckle", gen_speckle),

        STR_KEY("model.arch", model_arch),
        INT_KEY("model.classes", model_classes),
        STR_KEY("model.checkpoint", model_checkpoint),
        STR_KEY("model.blackbox_checkpoint", model_blackbox_checkpoint),
        STR_KEY("model.sandbox_checkpoint", model_sandbox_checkpoint),
        Key{"model.ensemble_checkpoints",
            [](RunConfig& c, const std::string& v) {
                c.model_ensemble_checkpoints = split_list(v);
            },
            [](const RunConfig& c) {
                return join_list(c.model_ensemble_checkpoints,
                                 [](const std::string& s) { return s; });
            }},

        INT_KEY("train.iters", train.iters),
        INT_KEY("train.batch_size", train.batch_size),
        FLOAT_KEY("train.lr", train.lr),
        FLOAT_KEY("train.momentum", train.momentum),
        FLOAT_KEY("train.weight_decay", train.weight_decay),
        FLOAT_KEY("train.lr_decay", train.lr_decay),
        FLOAT_KEY("train.decay_at", train.decay_at),

        INT_KEY("heads.iters", heads.iters),
        INT_KEY("heads.batch_size", heads.batch_size),
        FLOAT_KEY("heads.lr", heads.lr),
        FLOAT_KEY("heads.auc_floor", heads.auc_floor),
        INT_KEY("heads.holdout_stride", heads.holdout_stride),
        Key{"heads.taps",
            [](RunConfig& c, const std::string& v) {
                c.heads_taps = split_list(v);
            },
            [](const RunConfig& c) {
                return join_list(c.heads_taps,
                                 [](const std::string& s) { return s; });
            }},
        Key{"heads.classes",
            [](RunConfig& c, const std::string& v) {
                c.heads_classes.clear();
                for (const auto& s : split_list(v))
                    c.heads_classes.push_back(to_int("heads.classes", s));
            },
            [](const RunConfig& c) {
                return join_list(c.heads_classes,
                                 [](int x) { return std::to_string(x); });
            }},
        STR_KEY("heads.bank_dir", heads_bank_dir),

        STR_KEY("attack.family", attack_family),
        FLOAT_KEY("attack.epsilon", attack.epsilon),
        FLOAT_KEY("attack.step_size", attack.step_size),
        INT_KEY("attack.iters", attack.iters),
        FLOAT_KEY("attack.momentum", attack.momentum),
        FLOAT_KEY("attack.eta", attack.eta),
        FLOAT_KEY("attack.gamma", attack.gamma),
        FLOAT_KEY("attack.sgm_decay", attack_sgm_decay),
        Key{"attack.layers",
            [](RunConfig& c, const std::string& v) {
                c.attack.layers = split_list(v);
            },
            [](const RunConfig& c) {
                return join_list(c.attack.layers,
                                 [](const std::string& s) { return s; });
            }},
        Key{"attack.lambda",
            [](RunConfig& c, const std::string& v) {
                c.attack.lambda.clear();
                for (const auto& s : split_list(v))
                    c.attack.lambda.push_back(to_float("attack.lambda", s));
            },
            [](const RunConfig& c) {
                return join_list(c.attack.lambda,
                                 [](float x) { return fmt_f(x); });
            }},

        INT_KEY("search.max_layers", search_max_layers),
        INT_KEY("search.n_sources", search_n_sources),
        INT_KEY("search.targets_per_source", search_targets_per_source),
        Key{"search.grid_eta",
            [](RunConfig& c, const std::string& v) {
                c.search_grid_eta.clear();
                for (const auto& s : split_list(v))
                    c.search_grid_eta.push_back(to_float("search.grid_eta", s));
            },
            [](const RunConfig& c) {
                return join_list(c.search_grid_eta,
                                 [](float x) { return fmt_f(x); });
            }},
        Key{"search.grid_gamma",
            [](RunConfig& c, const std::string& v) {
                c.search_grid_gamma.clear();
                for (const auto& s : split_list(v))
                    c.search_grid_gamma.push_back(
                        to_float("search.grid_gamma", s));
            },
            [](const RunConfig& c) {
                return join_list(c.search_grid_gamma,
                                 [](float x) { return fmt_f(x); });
            }},

        STR_KEY("eval.scenario", eval_scenario),
        INT_KEY("eval.n_sources", eval_n_sources),
        INT_KEY("eval.targets_per_source", eval_targets_per_source),

        INT_KEY("distal.count", distal_count),
        INT_KEY("distal.iters", distal_iters),

        INT_KEY("query.total_iters", prgf.total_iters),
        INT_KEY("query.transfer_iters", prgf.transfer_iters),
        INT_KEY("query.samples", prgf.q),
        FLOAT_KEY("query.sigma", prgf.sigma),
        FLOAT_KEY("query.prior_weight", prgf.prior_weight),
        Key{"query.budget",
            [](RunConfig& c, const std::string& v) {
                c.query_budget = to_long("query.budget", v);
            },
            [](const RunConfig& c) { return std::to_string(c.query_budget); }},
        STR_KEY("query.oracle_host", oracle_host),
        INT_KEY("query.oracle_port", oracle_port),

        Key{"run.seed",
            [](RunConfig& c, const std::string& v) {
                c.seed = to_u64("run.seed", v);
            },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
        STR_KEY("run.out_dir", out_dir),
        INT_KEY("run.jobs", jobs),
    };
    return keys;
}

#undef STR_KEY
#undef INT_KEY
#undef FLOAT_KEY

const Key* find_key(const std::string& name) {
    for (const auto& k : key_table())
        if (name == k.name) return &k;
    return nullptr;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value) {
    const Key* k = find_key(key);
    if (!k) throw Error("unknown config key '" + key + "'");
    k->set(cfg, value);
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            apply_override(cfg, key, value);
        } catch (const Error& e) {
            throw Error(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

void validate_config(RunConfig& cfg, const std::vector<std::string>& require) {
    // lambda weights normalize to sum 1
    if (!cfg.attack.lambda.empty()) {
        double sum = 0.0;
        for (float l : cfg.attack.lambda) {
            if (l <= 0.0f)
                throw Error("attack.lambda: weights must be positive");
            sum += l;
        }
        for (float& l : cfg.attack.lambda)
            l = static_cast<float>(l / sum);
    }
    if (cfg.jobs < 1) throw Error("run.jobs must be >= 1");
    if (!cfg.data_whitebox_split.empty()) split_by_name(cfg.data_whitebox_split);
    if (!cfg.data_blackbox_split.empty()) split_by_name(cfg.data_blackbox_split);

    for (const auto& key : require) {
        const Key* k = find_key(key);
        if (!k) throw Error("unknown required key '" + key + "'");
        std::string v = k->get(cfg);
        if (v.empty())
            throw Error("config key '" + key + "' is required by this command");
    }
    // every referenced file must exist (bank_dir and out_dir are created by
    // their producers, so only consumed paths are checked here)
    for (const char* key :
         {"data.train_images", "data.train_labels", "data.val_images",
          "data.val_labels", "model.checkpoint", "model.blackbox_checkpoint",
          "model.sandbox_checkpoint"}) {
        std::string v = find_key(key)->get(cfg);
        if (!v.empty() && !file_exists(v))
            throw Error(std::string(key) + ": file '" + v + "' does not exist");
    }
    for (const auto& p : cfg.model_ensemble_checkpoints)
        if (!file_exists(p))
            throw Error("model.ensemble_checkpoints: file '" + p +
                        "' does not exist");
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : key_table()) {
        out += k.name;
        out += " = ";
        out += k.get(cfg);
        out += "\n";
    }
    return out;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    std::string s = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ftnet
