#include "ftnet/attack.hpp"

#include <algorithm>
#include <cmath>

namespace ftnet {

void AttackConfig::validate_and_fill() {
    if (epsilon < 0.0f || step_size < 0.0f)
        throw Error("attack config: epsilon and step_size must be >= 0");
    if (iters < 1) throw Error("attack config: iters must be >= 1");
    if (!layers.empty()) {
        if (lambda.empty())
            lambda.assign(layers.size(), 1.0f / static_cast<float>(layers.size()));
        if (lambda.size() != layers.size())
            throw Error("attack config: lambda size does not match layer set");
        float sum = 0.0f;
        for (float l : lambda) {
            if (l <= 0.0f) throw Error("attack config: lambda entries must be > 0");
            sum += l;
        }
        if (std::fabs(sum - 1.0f) > 1e-4f)
            throw Error("attack config: lambda must sum to 1, got " +
                        std::to_string(sum));
    }
}

Tensor clamp01_add(const Tensor& x, const Tensor& delta) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = std::clamp(x.data[i] + delta.data[i], 0.0f, 1.0f);
    return out;
}

void AttackObjective::prepare(const Tensor& x, int y_tgt) {
    if (built_target >= 0 && y_tgt != built_target)
        throw Error("objective: built for target " + std::to_string(built_target) +
                    ", prepared with " + std::to_string(y_tgt));
    for (NodeId n : label_nodes) graph.set_label(n, y_tgt);
    if (!fda_layers.empty()) {
        // clean features f_l(x), computed once and detached as constants
        graph.bind("adv", &x);
        graph.run_forward();
        for (auto& layer : fda_layers) {
            Tensor f = graph.value_of(layer.tap_node);
            if (f.l2_norm() == 0.0f)
                throw Error("fda objective: degenerate zero feature at tap " +
                            layer.tap);
            graph.set_constant(layer.clean_const, f);
        }
    }
}

namespace {

Tensor ones_like(const std::vector<int>& shape) {
    Tensor t(shape);
    std::fill(t.data.begin(), t.data.end(), 1.0f);
    return t;
}

}  // namespace

AttackObjective make_fda_objective(const TapModel& m, const HeadBank& bank,
                                   int y_tgt, const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.validate_and_fill();
    if (c.layers.empty()) throw Error("fda objective: empty layer set");

    AttackObjective obj;
    obj.built_target = y_tgt;
    Graph& g = obj.graph;
    obj.adv_input = g.input("adv", m.input_shape);
    ForwardNodes fwd = append_forward(g, m, obj.adv_input);
    obj.probs = fwd.probs;

    std::vector<NodeId> terms;
    std::vector<float> weights;
    for (std::size_t i = 0; i < c.layers.size(); ++i) {
        const std::string& tap = c.layers[i];
        auto it = fwd.taps.find(tap);
        if (it == fwd.taps.end())
            throw Error("fda objective: model " + m.arch_id + " has no tap " + tap);
        NodeId tap_node = it->second;
        const AuxHead& head = bank.at(tap, y_tgt);
        HeadNodes hn = append_head(g, head, tap_node);
        NodeId clean = g.constant(ones_like(g.shape_of(tap_node)));
        NodeId disruption = g.relative_l2(tap_node, clean);
        NodeId term = g.weighted_sum({hn.prob, disruption}, {1.0f, c.eta});
        terms.push_back(term);
        weights.push_back(c.lambda[i]);
        obj.fda_layers.push_back({tap, tap_node, clean});
    }
    NodeId fda = g.weighted_sum(terms, weights);
    if (c.gamma != 0.0f) {
        NodeId xent = g.softmax_xent(fwd.logits);
        obj.label_nodes.push_back(xent);
        obj.loss = g.weighted_sum({fda, xent}, {1.0f, -c.gamma});
    } else {
        obj.loss = fda;
    }
    g.set_loss(obj.loss);
    return obj;
}

AttackObjective make_ensemble_objective(const std::vector<const TapModel*>& models) {
    if (models.empty()) throw Error("ensemble objective: no models");
    for (const TapModel* m : models)
        if (m->num_classes != models[0]->num_classes)
            throw Error("ensemble objective: label-space mismatch between " +
                        models[0]->arch_id + " and " + m->arch_id);
    AttackObjective obj;
    Graph& g = obj.graph;
    obj.adv_input = g.input("adv", models[0]->input_shape);
    std::vector<NodeId> probs;
    for (const TapModel* m : models)
        probs.push_back(append_forward(g, *m, obj.adv_input).probs);
    obj.probs = probs.size() == 1 ? probs[0] : g.mean_vectors(probs);
    NodeId xent = g.xent_probs(obj.probs);
    obj.label_nodes.push_back(xent);
    obj.loss = g.weighted_sum({xent}, {-1.0f});  // maximize -H
    g.set_loss(obj.loss);
    return obj;
}

AttackObjective make_xent_objective(const TapModel& m) {
    return make_ensemble_objective({&m});
}

AttackObjective make_sgm_objective(const TapModel& m, float decay) {
    AttackObjective obj;
    Graph& g = obj.graph;
    obj.adv_input = g.input("adv", m.input_shape);
    ForwardNodes fwd = append_forward(g, m, obj.adv_input);
    if (fwd.residual_adds.empty())
        throw Error("sgm: model " + m.arch_id + " has no residual blocks");
    for (NodeId n : fwd.residual_adds) g.set_branch_scale(n, decay);
    obj.probs = fwd.probs;
    NodeId xent = g.xent_probs(obj.probs);
    obj.label_nodes.push_back(xent);
    obj.loss = g.weighted_sum({xent}, {-1.0f});
    g.set_loss(obj.loss);
    return obj;
}

namespace {

AttackResult run_pgd(AttackObjective& obj, const Tensor& x0, int y_tgt,
                     const AttackConfig& cfg, bool project_epsilon,
                     bool clamp_pixels) {
    AttackResult res;
    res.delta = Tensor(x0.shape);
    Tensor velocity(x0.shape);
    Tensor adv = x0;

    for (int it = 0; it < cfg.iters; ++it) {
        obj.graph.bind("adv", &adv);
        float loss = obj.graph.run_forward();
        obj.graph.backward();
        Tensor grad = obj.graph.input_grad("adv");
        res.loss_trace.push_back(loss);

        float l1 = grad.l1_norm();
        if (l1 == 0.0f) {
            res.raw_grad_iters.push_back(it);
            for (std::size_t i = 0; i < grad.size(); ++i)
                velocity.data[i] = cfg.momentum * velocity.data[i] + grad.data[i];
        } else {
            for (std::size_t i = 0; i < grad.size(); ++i)
                velocity.data[i] =
                    cfg.momentum * velocity.data[i] + grad.data[i] / l1;
        }
        for (std::size_t i = 0; i < res.delta.size(); ++i) {
            float v = velocity.data[i];
            float step = v > 0.0f ? cfg.step_size : (v < 0.0f ? -cfg.step_size : 0.0f);
            float d = res.delta.data[i] + step;
            if (project_epsilon) d = std::clamp(d, -cfg.epsilon, cfg.epsilon);
            if (clamp_pixels) {
                // fold the [0,1] clamp into delta, touching only violators so
                // unclamped coordinates keep their exact value
                float p = x0.data[i] + d;
                if (p < 0.0f) d = -x0.data[i];
                else if (p > 1.0f) d = 1.0f - x0.data[i];
            }
            res.delta.data[i] = d;
            adv.data[i] = x0.data[i] + d;
        }
        res.delta_linf_trace.push_back(res.delta.max_abs());
        float mn = adv.data[0], mx = adv.data[0];
        for (float p : adv.data) { mn = std::min(mn, p); mx = std::max(mx, p); }
        res.pixel_min_trace.push_back(mn);
        res.pixel_max_trace.push_back(mx);
    }
    res.adversarial = adv;
    obj.graph.bind("adv", &res.adversarial);
    obj.graph.run_forward();
    res.whitebox_pred_after = argmax_lowest(obj.graph.value_of(obj.probs));
    return res;
}

}  // namespace

AttackResult momentum_pgd(AttackObjective& obj, const Tensor& x, int y_tgt,
                          const AttackConfig& cfg, bool project_epsilon) {
    AttackConfig c = cfg;
    c.validate_and_fill();
    obj.prepare(x, y_tgt);
    return run_pgd(obj, x, y_tgt, c, project_epsilon, true);
}

AttackResult tmim_attack(const TapModel& m, const Tensor& x, int y_tgt,
                         const AttackConfig& cfg) {
    AttackObjective obj = make_xent_objective(m);
    return momentum_pgd(obj, x, y_tgt, cfg);
}

AttackResult tpgd_attack(const TapModel& m, const Tensor& x, int y_tgt,
                         const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.momentum = 0.0f;
    return tmim_attack(m, x, y_tgt, c);
}

AttackResult sgm_attack(const TapModel& m, const Tensor& x, int y_tgt,
                        const AttackConfig& cfg, float decay) {
    AttackObjective obj = make_sgm_objective(m, decay);
    return momentum_pgd(obj, x, y_tgt, cfg);
}

AttackResult ensemble_tmim(const std::vector<const TapModel*>& models,
                           const Tensor& x, int y_tgt, const AttackConfig& cfg) {
    AttackObjective obj = make_ensemble_objective(models);
    return momentum_pgd(obj, x, y_tgt, cfg);
}

AttackResult fda_attack(const TapModel& m, const HeadBank& bank, const Tensor& x,
                        int y_tgt, const AttackConfig& cfg) {
    AttackObjective obj = make_fda_objective(m, bank, y_tgt, cfg);
    return momentum_pgd(obj, x, y_tgt, cfg);
}

AttackResult distal_generate(AttackObjective& obj, int y_tgt,
                             const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.momentum = 0.0f;
    c.validate_and_fill();
    std::vector<int> shape = obj.graph.shape_of(obj.adv_input);
    Tensor x0(shape);
    std::uint64_t state = derive_seed(c.seed, "distal", y_tgt);
    for (auto& v : x0.data) {
        state = splitmix64(state);
        v = static_cast<float>(state >> 11) * 0x1.0p-53f;
    }
    obj.prepare(x0, y_tgt);
    return run_pgd(obj, x0, y_tgt, c, /*project_epsilon=*/false, true);
}

AttackResult distal_fda(const TapModel& m, const HeadBank& bank, int y_tgt,
                        AttackConfig cfg) {
    AttackObjective obj = make_fda_objective(m, bank, y_tgt, cfg);
    return distal_generate(obj, y_tgt, cfg);
}

AttackResult distal_tpgd(const TapModel& m, int y_tgt, AttackConfig cfg) {
    AttackObjective obj = make_xent_objective(m);
    return distal_generate(obj, y_tgt, cfg);
}

float fda_loss(const TapModel& m, const HeadBank& bank, const Tensor& x,
               const Tensor& delta, int y_tgt, const std::string& tap, float eta) {
    AttackConfig cfg;
    cfg.layers = {tap};
    cfg.eta = eta;
    cfg.gamma = 0.0f;
    return fda_multilayer_loss(m, bank, x, delta, y_tgt, cfg);
}

float fda_multilayer_loss(const TapModel& m, const HeadBank& bank, const Tensor& x,
                          const Tensor& delta, int y_tgt, const AttackConfig& cfg) {
    AttackObjective obj = make_fda_objective(m, bank, y_tgt, cfg);
    obj.prepare(x, y_tgt);
    Tensor adv = clamp01_add(x, delta);
    obj.graph.bind("adv", &adv);
    return obj.graph.run_forward();
}

}  // namespace ftnet
