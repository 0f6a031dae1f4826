#include "ftnet/heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace ftnet {

namespace {

constexpr int kHeadChannels = 32;

// Spatial sizes after the head's pooling stages. The second pool is skipped
// when the map entering it is already <= 2x2 (degenerate-input rule).
struct PoolPlan {
    bool pool1, pool2;
    int h, w;
};

PoolPlan plan_pools(const std::vector<int>& feat) {
    PoolPlan p{};
    p.h = feat[1];
    p.w = feat[2];
    p.pool1 = p.h >= 2 && p.w >= 2;
    if (p.pool1) { p.h /= 2; p.w /= 2; }
    p.pool2 = p.h > 2 && p.w > 2;
    if (p.pool2) { p.h /= 2; p.w /= 2; }
    return p;
}

}  // namespace

AuxHead build_head(const std::string& tap_name, int class_id,
                   const std::vector<int>& feature_shape, std::uint64_t seed) {
    if (feature_shape.size() != 3)
        throw ShapeError("build_head: feature shape must be CxHxW, got " +
                         shape_str(feature_shape));
    AuxHead h;
    h.tap_name = tap_name;
    h.class_id = class_id;
    h.feature_shape = feature_shape;
    std::mt19937_64 rng(derive_seed(seed, "head:" + tap_name, class_id));
    auto conv = [&](const std::string& name, int out_ch, int in_ch) {
        float bound = std::sqrt(6.0f / static_cast<float>(in_ch * 9));
        std::uniform_real_distribution<float> u(-bound, bound);
        Tensor w({out_ch, in_ch, 3, 3});
        for (auto& v : w.data) v = u(rng);
        h.params[name + ".w"] = std::move(w);
        h.params[name + ".b"] = Tensor({out_ch});
    };
    conv("c1", kHeadChannels, feature_shape[0]);
    conv("c2", kHeadChannels, kHeadChannels);
    PoolPlan p = plan_pools(feature_shape);
    int in_f = kHeadChannels * p.h * p.w;
    // small output init keeps the untrained head near sigmoid(0) = 0.5
    float bound = 0.1f * std::sqrt(6.0f / static_cast<float>(in_f));
    std::uniform_real_distribution<float> u(-bound, bound);
    Tensor w({1, in_f});
    for (auto& v : w.data) v = u(rng);
    h.params["fc.w"] = std::move(w);
    h.params["fc.b"] = Tensor({1});
    return h;
}

HeadNodes append_head(Graph& g, const AuxHead& head, NodeId feature) {
    HeadNodes out;
    auto p = [&](const std::string& name) {
        NodeId id = g.param(&head.params.at(name));
        out.param_nodes.emplace_back(name, id);
        return id;
    };
    PoolPlan plan = plan_pools(head.feature_shape);
    NodeId h = g.relu(g.conv2d(feature, p("c1.w"), p("c1.b"), 1, 1));
    if (plan.pool1) h = g.maxpool2(h);
    h = g.relu(g.conv2d(h, p("c2.w"), p("c2.b"), 1, 1));
    if (plan.pool2) h = g.maxpool2(h);
    h = g.dropout(h, 0.3f);
    out.prob = g.sigmoid(g.dense(h, p("fc.w"), p("fc.b")));
    return out;
}

FeatureCache extract_features(const TapModel& m, const Dataset& ds,
                              const std::vector<std::string>& taps,
                              int jobs) {
    FeatureCache cache;
    cache.labels = ds.labels;
    for (const auto& t : taps) cache.by_tap[t].resize(ds.size());

    std::size_t workers = std::max(1, jobs);
    auto work = [&](std::size_t w) {
        Graph g;
        NodeId x = g.input("x", m.input_shape);
        ForwardNodes fwd = append_forward(g, m, x);
        g.set_loss(g.softmax_xent(fwd.logits));
        for (std::size_t i = w; i < ds.size(); i += workers) {
            g.bind("x", &ds.images[i]);
            g.run_forward();
            for (const auto& t : taps)
                cache.by_tap[t][i] = g.value_of(fwd.taps.at(t));
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
        for (auto& t : threads) t.join();
    }
    return cache;
}

float binary_auc(const std::vector<float>& scores,
                 const std::vector<int>& positives) {
    if (scores.size() != positives.size())
        throw Error("binary_auc: size mismatch");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney with average ranks for ties
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double pos_ranks = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (positives[k]) { pos_ranks += rank[k]; ++n_pos; }
    }
    std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error("binary_auc: need both classes");
    double u = pos_ranks - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return static_cast<float>(u / (static_cast<double>(n_pos) * n_neg));
}

AuxHead train_head(const FeatureCache& cache, const std::string& tap,
                   int class_id, const HeadTrainConfig& cfg,
                   std::uint64_t seed) {
    auto it = cache.by_tap.find(tap);
    if (it == cache.by_tap.end())
        throw Error("train_head: tap " + tap + " not in feature cache");
    const auto& feats = it->second;
    if (feats.empty()) throw Error("train_head: empty feature cache");

    AuxHead head = build_head(tap, class_id, feats[0].shape, seed);

    Graph g(derive_seed(seed, "dropout:" + tap, class_id));
    NodeId f = g.input("f", head.feature_shape);
    HeadNodes hn = append_head(g, head, f);
    NodeId loss = g.bce(hn.prob);
    g.set_loss(loss);

    // every holdout_stride-th sample is held out for the AUC measurement
    std::vector<int> train_labels = cache.labels;
    for (std::size_t i = 0; i < train_labels.size(); ++i)
        if (cfg.holdout_stride > 0 && i % cfg.holdout_stride == 0)
            train_labels[i] = -1;
    BalancedBinaryBatches sampler(train_labels, class_id, cfg.batch_size,
                                  derive_seed(seed, "batch:" + tap, class_id));

    std::map<std::string, Tensor> grads, velocity;
    for (const auto& [name, t] : head.params) {
        grads.emplace(name, Tensor(t.shape));
        velocity.emplace(name, Tensor(t.shape));
    }

    g.set_train(true);
    int decay_iter = static_cast<int>(cfg.iters * cfg.decay_at);
    for (int iter = 0; iter < cfg.iters; ++iter) {
        auto batch = sampler.next();
        for (auto& [name, t] : grads) std::fill(t.data.begin(), t.data.end(), 0.0f);
        float batch_loss = 0.0f;
        for (std::size_t b = 0; b < batch.indices.size(); ++b) {
            g.bind("f", &feats[batch.indices[b]]);
            g.set_bce_target(loss, batch.targets[b]);
            batch_loss += g.run_forward();
            g.backward();
            for (auto& [name, id] : hn.param_nodes)
                g.add_grad_to(id, grads.at(name).data.data());
        }
        if (!std::isfinite(batch_loss))
            throw Error("train_head: loss diverged at iteration " +
                        std::to_string(iter));
        float lr = iter >= decay_iter ? cfg.lr * cfg.lr_decay : cfg.lr;
        float inv_bs = 1.0f / static_cast<float>(batch.indices.size());
        for (auto& [name, w] : head.params) {
            auto& gsum = grads.at(name).data;
            auto& v = velocity.at(name).data;
            for (std::size_t j = 0; j < w.size(); ++j) {
                float gj = gsum[j] * inv_bs + cfg.weight_decay * w.data[j];
                v[j] = cfg.momentum * v[j] + gj;
                w.data[j] -= lr * v[j];
            }
        }
    }
    g.set_train(false);

    std::vector<float> scores;
    std::vector<int> positives;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (cfg.holdout_stride > 0 && i % cfg.holdout_stride != 0) continue;
        g.bind("f", &feats[i]);
        g.run_forward();
        scores.push_back(g.value_of(hn.prob)[0]);
        positives.push_back(cache.labels[i] == class_id ? 1 : 0);
    }
    head.auc = binary_auc(scores, positives);
    head.trained = true;
    return head;
}

AuxHead train_head(const TapModel& m, const std::string& tap, int class_id,
                   const Dataset& data, const HeadTrainConfig& cfg,
                   std::uint64_t seed) {
    return train_head(extract_features(m, data, {tap}), tap, class_id, cfg, seed);
}

float head_probability(const AuxHead& head, const Tensor& feature) {
    if (!head.trained)
        throw Error("head_probability: head (" + head.tap_name + ", " +
                    std::to_string(head.class_id) + ") not trained");
    Graph g;
    NodeId f = g.input("f", head.feature_shape);
    HeadNodes hn = append_head(g, head, f);
    g.set_loss(g.bce(hn.prob));
    g.bind("f", &feature);
    g.run_forward();
    return g.value_of(hn.prob)[0];
}

const AuxHead& HeadBank::at(const std::string& tap, int class_id) const {
    auto it = heads.find({tap, class_id});
    if (it == heads.end())
        throw Error("head bank: missing head (" + tap + ", " +
                    std::to_string(class_id) + ")");
    return it->second;
}

bool HeadBank::has(const std::string& tap, int class_id) const {
    return heads.count({tap, class_id}) != 0;
}

float HeadBank::mean_auc() const {
    if (heads.empty()) throw Error("head bank: empty");
    double s = 0.0;
    for (const auto& [key, h] : heads) s += h.auc;
    return static_cast<float>(s / static_cast<double>(heads.size()));
}

HeadBank train_bank(const TapModel& m, const std::vector<std::string>& taps,
                    const std::vector<int>& classes, const Dataset& data,
                    const HeadTrainConfig& cfg, std::uint64_t seed, int jobs) {
    if (taps.empty() || classes.empty())
        throw Error("train_bank: taps and classes must be nonempty");
    FeatureCache cache = extract_features(m, data, taps, jobs);

    struct Job { std::string tap; int cls; };
    std::vector<Job> work;
    for (const auto& t : taps)
        for (int c : classes) work.push_back({t, c});
    std::vector<AuxHead> trained(work.size());
    parallel_for(work.size(), jobs, [&](std::size_t i) {
        trained[i] = train_head(cache, work[i].tap, work[i].cls, cfg, seed);
    });

    HeadBank bank;
    for (std::size_t i = 0; i < work.size(); ++i) {
        // AUC-floor misses are recorded as warnings; the head stays usable
        if (trained[i].auc < cfg.auc_floor)
            bank.failures.push_back({work[i].tap, work[i].cls, trained[i].auc});
        bank.heads.emplace(std::make_pair(work[i].tap, work[i].cls),
                           std::move(trained[i]));
    }
    return bank;
}

std::uint64_t param_checksum(const std::map<std::string, Tensor>& params) {
    std::uint64_t h = 0x811c9dc5ULL;
    for (const auto& [name, t] : params) {
        for (char c : name) h = splitmix64(h ^ static_cast<unsigned char>(c));
        for (float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            h = splitmix64(h ^ bits);
        }
    }
    return h;
}

void save_bank(const HeadBank& bank, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw Error("save_bank: cannot open manifest in " + dir);
    int idx = 0;
    for (const auto& [key, head] : bank.heads) {
        std::string file = "head_" + std::to_string(idx++) + ".bin";
        TapModel shell;
        shell.arch_id = "auxhead";
        shell.num_classes = 1;
        shell.tap_names = {head.tap_name};
        shell.params = head.params;
        save_checkpoint(shell, dir + "/" + file);
        manifest << head.tap_name << ' ' << head.class_id << ' ' << head.auc
                 << ' ' << file << '\n';
    }
}

HeadBank load_bank(const std::string& dir, const TapModel& base) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw Error("load_bank: cannot open manifest in " + dir);

    // tap feature shapes come from the base model the bank is bound to
    std::map<std::string, std::vector<int>> tap_shapes;
    {
        Graph g;
        NodeId x = g.input("x", base.input_shape);
        ForwardNodes fwd = append_forward(g, base, x);
        for (const auto& [tap, id] : fwd.taps) tap_shapes[tap] = g.shape_of(id);
    }

    HeadBank bank;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        AuxHead head;
        std::string file;
        if (!(ss >> head.tap_name >> head.class_id >> head.auc >> file))
            throw Error("load_bank: malformed manifest line: " + line);
        auto it = tap_shapes.find(head.tap_name);
        if (it == tap_shapes.end())
            throw Error("load_bank: tap " + head.tap_name +
                        " does not exist on base model " + base.arch_id);
        head.feature_shape = it->second;
        TapModel shell = load_checkpoint(dir + "/" + file);
        if (shell.arch_id != "auxhead")
            throw Error("load_bank: " + file + " is not an auxhead checkpoint");
        head.params = std::move(shell.params);
        head.trained = true;
        bank.heads.emplace(std::make_pair(head.tap_name, head.class_id),
                           std::move(head));
    }
    return bank;
}

}  // namespace ftnet
