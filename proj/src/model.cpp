#include "ftnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>

namespace ftnet {

namespace {

constexpr char kMagic[7] = {'F', 'T', 'N', 'E', 'T', '1', '\0'};

Tensor kaiming_conv(int out_ch, int in_ch, int k, std::mt19937_64& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(in_ch * k * k));
    std::uniform_real_distribution<float> u(-bound, bound);
    Tensor t({out_ch, in_ch, k, k});
    for (auto& v : t.data) v = u(rng);
    return t;
}

Tensor kaiming_dense(int out_f, int in_f, std::mt19937_64& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(in_f));
    std::uniform_real_distribution<float> u(-bound, bound);
    Tensor t({out_f, in_f});
    for (auto& v : t.data) v = u(rng);
    return t;
}

struct Builder {
    Graph& g;
    const TapModel& m;
    ForwardNodes out;

    NodeId p(const std::string& name) {
        NodeId id = g.param(&m.params.at(name));
        out.param_nodes.emplace_back(name, id);
        return id;
    }
    NodeId conv(NodeId x, const std::string& name, int stride, int pad) {
        return g.conv2d(x, p(name + ".w"), p(name + ".b"), stride, pad);
    }
    NodeId dense(NodeId x, const std::string& name) {
        return g.dense(x, p(name + ".w"), p(name + ".b"));
    }
    // conv -> relu -> conv, plus projection shortcut when shape changes
    NodeId res_block(NodeId x, const std::string& name, bool down) {
        NodeId branch = conv(x, name + ".c1", down ? 2 : 1, 1);
        branch = g.relu(branch);
        branch = g.conv2d(branch, p(name + ".c2.w"), p(name + ".c2.b"), 1, 1);
        NodeId skip = down ? conv(x, name + ".proj", 2, 0) : x;
        NodeId add = g.residual_add(skip, branch);
        out.residual_adds.push_back(add);
        return g.relu(add);
    }
};

}  // namespace

TapModel build_model(const std::string& arch_id, int num_classes,
                     std::uint64_t seed) {
    TapModel m;
    m.arch_id = arch_id;
    m.num_classes = num_classes;
    m.input_shape = {1, 16, 16};
    m.tap_names = {"b1", "b2", "b3", "b4", "b5", "b6"};
    std::mt19937_64 rng(derive_seed(seed, "init:" + arch_id));

    auto conv = [&](const std::string& name, int out_ch, int in_ch, int k) {
        m.params[name + ".w"] = kaiming_conv(out_ch, in_ch, k, rng);
        m.params[name + ".b"] = Tensor({out_ch});
    };
    if (arch_id == "plainnet-s") {
        const int ch[7] = {1, 8, 8, 16, 16, 32, 32};
        for (int i = 1; i <= 6; ++i)
            conv("conv" + std::to_string(i), ch[i], ch[i - 1], 3);
        m.params["fc.w"] = kaiming_dense(num_classes, 32 * 2 * 2, rng);
        m.params["fc.b"] = Tensor({num_classes});
    } else if (arch_id == "resnet-s") {
        conv("stem", 8, 1, 3);
        const int ch[4] = {8, 8, 16, 32};
        // branch-ending convs start small: stabilizes norm-free residual
        // stacks the way fixup-style initializations do
        auto damp = [&](const std::string& name) {
            for (auto& v : m.params[name + ".w"].data) v *= 0.25f;
        };
        for (int s = 1; s <= 3; ++s) {
            bool down = s > 1;
            std::string b1 = "s" + std::to_string(s) + "b1";
            std::string b2 = "s" + std::to_string(s) + "b2";
            conv(b1 + ".c1", ch[s], ch[s - 1], 3);
            conv(b1 + ".c2", ch[s], ch[s], 3);
            damp(b1 + ".c2");
            if (down) conv(b1 + ".proj", ch[s], ch[s - 1], 1);
            conv(b2 + ".c1", ch[s], ch[s], 3);
            conv(b2 + ".c2", ch[s], ch[s], 3);
            damp(b2 + ".c2");
        }
        m.params["fc.w"] = kaiming_dense(num_classes, 32 * 2 * 2, rng);
        m.params["fc.b"] = Tensor({num_classes});
    } else {
        throw Error("build_model: unknown arch_id " + arch_id);
    }
    return m;
}

ForwardNodes append_forward(Graph& g, const TapModel& m, NodeId x) {
    Builder b{g, m, {}};
    if (m.arch_id == "plainnet-s") {
        NodeId h = x;
        for (int i = 1; i <= 6; ++i) {
            h = g.relu(b.conv(h, "conv" + std::to_string(i), 1, 1));
            b.out.taps["b" + std::to_string(i)] = h;
            if (i % 2 == 0) h = g.maxpool2(h);
        }
        b.out.logits = b.dense(h, "fc");
    } else if (m.arch_id == "resnet-s") {
        NodeId h = g.relu(b.conv(x, "stem", 1, 1));
        int tap = 1;
        for (int s = 1; s <= 3; ++s) {
            h = b.res_block(h, "s" + std::to_string(s) + "b1", s > 1);
            b.out.taps["b" + std::to_string(tap++)] = h;
            h = b.res_block(h, "s" + std::to_string(s) + "b2", false);
            b.out.taps["b" + std::to_string(tap++)] = h;
        }
        h = g.maxpool2(h);
        b.out.logits = b.dense(h, "fc");
    } else {
        throw Error("append_forward: unknown arch_id " + m.arch_id);
    }
    b.out.probs = g.softmax(b.out.logits);
    return b.out;
}

TrainHistory train_classifier(TapModel& m, const Dataset& train,
                              const TrainConfig& cfg) {
    if (train.size() == 0) throw Error("train_classifier: empty dataset");
    for (int l : train.labels)
        if (l < 0 || l >= m.num_classes)
            throw Error("train_classifier: label out of range");

    Graph g;
    NodeId x = g.input("x", m.input_shape);
    ForwardNodes fwd = append_forward(g, m, x);
    NodeId loss = g.softmax_xent(fwd.logits);
    g.set_loss(loss);

    std::map<std::string, Tensor> grads, velocity;
    for (const auto& [name, t] : m.params) {
        grads.emplace(name, Tensor(t.shape));
        velocity.emplace(name, Tensor(t.shape));
    }

    std::uint64_t state = derive_seed(cfg.seed, "train:" + m.arch_id);
    auto next_index = [&] {
        state = splitmix64(state);
        return static_cast<std::size_t>(state % train.size());
    };

    TrainHistory hist;
    int decay_iter = static_cast<int>(cfg.iters * cfg.decay_at);
    for (int it = 0; it < cfg.iters; ++it) {
        for (auto& [name, t] : grads) std::fill(t.data.begin(), t.data.end(), 0.0f);
        float batch_loss = 0.0f;
        for (int b = 0; b < cfg.batch_size; ++b) {
            std::size_t i = next_index();
            g.bind("x", &train.images[i]);
            g.set_label(loss, train.labels[i]);
            batch_loss += g.run_forward();
            g.backward();
            for (auto& [name, id] : fwd.param_nodes)
                g.add_grad_to(id, grads.at(name).data.data());
        }
        batch_loss /= static_cast<float>(cfg.batch_size);
        if (!std::isfinite(batch_loss))
            throw Error("train_classifier: loss diverged at iteration " +
                        std::to_string(it));
        hist.losses.push_back(batch_loss);

        float lr = it >= decay_iter ? cfg.lr * cfg.lr_decay : cfg.lr;
        float inv_bs = 1.0f / static_cast<float>(cfg.batch_size);
        for (auto& [name, w] : m.params) {
            auto& gsum = grads.at(name).data;
            auto& v = velocity.at(name).data;
            for (std::size_t j = 0; j < w.size(); ++j) {
                float gj = gsum[j] * inv_bs + cfg.weight_decay * w.data[j];
                v[j] = cfg.momentum * v[j] + gj;
                w.data[j] -= lr * v[j];
            }
        }
    }
    return hist;
}

ModelRunner::ModelRunner(const TapModel& m) : model_(&m) {
    NodeId x = g_.input("x", m.input_shape);
    nodes_ = append_forward(g_, m, x);
    // run_forward needs a scalar loss; the label is irrelevant for inference
    g_.set_loss(g_.softmax_xent(nodes_.logits));
}

Tensor ModelRunner::probabilities(const Tensor& x) {
    bound_ = x;
    g_.bind("x", &bound_);
    g_.run_forward();
    return g_.value_of(nodes_.probs);
}

int argmax_lowest(const Tensor& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return static_cast<int>(best);
}

int ModelRunner::predict(const Tensor& x, Tensor* probs_out) {
    Tensor p = probabilities(x);
    int cls = argmax_lowest(p);
    if (probs_out) *probs_out = std::move(p);
    return cls;
}

Tensor ModelRunner::extract(const std::string& tap_name, const Tensor& x) {
    auto it = nodes_.taps.find(tap_name);
    if (it == nodes_.taps.end())
        throw Error("extract: unknown tap " + tap_name);
    bound_ = x;
    g_.bind("x", &bound_);
    g_.run_forward();
    return g_.value_of(it->second);
}

Tensor extract_feature(const TapModel& m, const std::string& tap_name,
                       const Tensor& x) {
    return ModelRunner(m).extract(tap_name, x);
}

int predict(const TapModel& m, const Tensor& x, Tensor* probs_out) {
    return ModelRunner(m).predict(x, probs_out);
}

float accuracy(const TapModel& m, const Dataset& ds, int jobs) {
    std::vector<int> hits(ds.size(), 0);
    std::size_t workers = std::max(1, jobs);
    auto work = [&](std::size_t w) {
        ModelRunner runner(m);
        for (std::size_t i = w; i < ds.size(); i += workers)
            hits[i] = runner.predict(ds.images[i]) == ds.labels[i] ? 1 : 0;
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
    return static_cast<float>(total) / static_cast<float>(ds.size());
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}
void write_str(std::ofstream& f, const std::string& s) {
    write_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::ifstream& f, const std::string& what) {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw ParseError("checkpoint: truncated " + what,
                             static_cast<std::size_t>(f.gcount()));
    return v;
}
std::string read_str(std::ifstream& f, const std::string& what) {
    std::uint32_t n = read_u32(f, what + " length");
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw ParseError("checkpoint: truncated " + what, 0);
    return s;
}

}  // namespace

void save_checkpoint(const TapModel& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    write_str(f, m.arch_id);
    write_u32(f, static_cast<std::uint32_t>(m.num_classes));
    write_u32(f, static_cast<std::uint32_t>(m.tap_names.size()));
    for (const auto& t : m.tap_names) write_str(f, t);
    write_u32(f, static_cast<std::uint32_t>(m.params.size()));
    for (const auto& [name, t] : m.params) {
        write_str(f, name);
        write_u32(f, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!f) throw Error("save_checkpoint: write failed for " + path);
}

TapModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load_checkpoint: cannot open " + path);
    char magic[sizeof(kMagic)];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError("checkpoint: bad magic", 0);
    TapModel m;
    m.arch_id = read_str(f, "arch_id");
    m.num_classes = static_cast<int>(read_u32(f, "num_classes"));
    m.input_shape = {1, 16, 16};
    std::uint32_t ntaps = read_u32(f, "tap count");
    for (std::uint32_t i = 0; i < ntaps; ++i)
        m.tap_names.push_back(read_str(f, "tap name"));
    std::uint32_t nparams = read_u32(f, "param count");
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::string name = read_str(f, "param name");
        std::uint32_t rank = read_u32(f, "param rank");
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(read_u32(f, "param dim")));
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!f) throw ParseError("checkpoint: truncated payload of " + name, 0);
        m.params.emplace(std::move(name), std::move(t));
    }
    return m;
}

}  // namespace ftnet
