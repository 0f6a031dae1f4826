#include "ftnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ftnet {

namespace {
constexpr float kLogEps = 1e-7f;

int pool_out(int n) { return n / 2; }

int conv_out(int n, int k, int stride, int pad) {
    return (n + 2 * pad - k) / stride + 1;
}
}  // namespace

namespace {

struct Node {
    std::vector<NodeId> in;
    std::vector<int> shape;
    std::vector<float> val;
    std::vector<float> grad;
    std::string name;

    virtual ~Node() = default;
    virtual void forward(Graph::Impl& g) = 0;
    virtual void backward(Graph::Impl& g) = 0;

    std::size_t numel() const { return val.size(); }
    void alloc() {
        val.assign(Tensor::numel(shape), 0.0f);
        grad.assign(val.size(), 0.0f);
    }
};

}  // namespace

struct Graph::Impl {
    std::vector<std::unique_ptr<Node>> nodes;
    std::map<std::string, NodeId> input_ids;
    std::map<NodeId, const Tensor*> bindings;  // input node -> bound tensor
    NodeId loss = -1;
    bool train = false;
    std::mt19937_64 rng;

    Node& at(NodeId id) { return *nodes[static_cast<std::size_t>(id)]; }
    const Node& at(NodeId id) const { return *nodes[static_cast<std::size_t>(id)]; }

    NodeId add(std::unique_ptr<Node> n) {
        n->alloc();
        nodes.push_back(std::move(n));
        return static_cast<NodeId>(nodes.size() - 1);
    }

    void check(NodeId id) const {
        if (id < 0 || id >= static_cast<NodeId>(nodes.size()))
            throw Error("bad node id " + std::to_string(id));
    }
};

namespace {

using Impl = Graph::Impl;

// Value filled from the binding table at the top of run_forward.
struct InputNode final : Node {
    void forward(Impl&) override {}
    void backward(Impl&) override {}
};

struct ParamNode final : Node {
    const Tensor* storage = nullptr;
    void forward(Impl&) override {
        std::memcpy(val.data(), storage->data.data(), val.size() * sizeof(float));
    }
    void backward(Impl&) override {}
};

struct ConstNode final : Node {
    void forward(Impl&) override {}
    void backward(Impl&) override {}
};

struct Conv2dNode final : Node {
    int stride = 1, pad = 0;
    int C, H, W, OC, KH, KW, OH, OW;

    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        const float* w = g.at(in[1]).val.data();
        const float* b = g.at(in[2]).val.data();
        float* y = val.data();
        for (int oc = 0; oc < OC; ++oc)
            std::fill(y + oc * OH * OW, y + (oc + 1) * OH * OW, b[oc]);
        for (int oc = 0; oc < OC; ++oc) {
            for (int c = 0; c < C; ++c) {
                const float* xc = x + c * H * W;
                const float* wk = w + ((oc * C + c) * KH) * KW;
                for (int ky = 0; ky < KH; ++ky) {
                    for (int kx = 0; kx < KW; ++kx) {
                        float wv = wk[ky * KW + kx];
                        if (wv == 0.0f) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            const float* xrow = xc + iy * W;
                            float* yrow = y + (oc * OH + oy) * OW;
                            int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                            int ox1 = std::min(OW, (W - 1 - kx + pad) / stride + 1);
                            for (int ox = ox0; ox < ox1; ++ox)
                                yrow[ox] += wv * xrow[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }

    void backward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        const float* w = g.at(in[1]).val.data();
        float* dx = g.at(in[0]).grad.data();
        float* dw = g.at(in[1]).grad.data();
        float* db = g.at(in[2]).grad.data();
        const float* dy = grad.data();
        for (int oc = 0; oc < OC; ++oc) {
            const float* dyc = dy + oc * OH * OW;
            float acc = 0.0f;
            for (int i = 0; i < OH * OW; ++i) acc += dyc[i];
            db[oc] += acc;
        }
        for (int oc = 0; oc < OC; ++oc) {
            for (int c = 0; c < C; ++c) {
                const float* xc = x + c * H * W;
                float* dxc = dx + c * H * W;
                const float* wk = w + ((oc * C + c) * KH) * KW;
                float* dwk = dw + ((oc * C + c) * KH) * KW;
                for (int ky = 0; ky < KH; ++ky) {
                    for (int kx = 0; kx < KW; ++kx) {
                        float wv = wk[ky * KW + kx];
                        float dwacc = 0.0f;
                        for (int oy = 0; oy < OH; ++oy) {
                            int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            const float* xrow = xc + iy * W;
                            float* dxrow = dxc + iy * W;
                            const float* dyrow = dy + (oc * OH + oy) * OW;
                            int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                            int ox1 = std::min(OW, (W - 1 - kx + pad) / stride + 1);
                            for (int ox = ox0; ox < ox1; ++ox) {
                                int ix = ox * stride + kx - pad;
                                dwacc += dyrow[ox] * xrow[ix];
                                dxrow[ix] += wv * dyrow[ox];
                            }
                        }
                        dwk[ky * KW + kx] += dwacc;
                    }
                }
            }
        }
    }
};

struct DenseNode final : Node {
    int N, O;
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        const float* w = g.at(in[1]).val.data();
        const float* b = g.at(in[2]).val.data();
        for (int o = 0; o < O; ++o) {
            const float* wr = w + o * N;
            float acc = b[o];
            for (int i = 0; i < N; ++i) acc += wr[i] * x[i];
            val[static_cast<std::size_t>(o)] = acc;
        }
    }
    void backward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        const float* w = g.at(in[1]).val.data();
        float* dx = g.at(in[0]).grad.data();
        float* dw = g.at(in[1]).grad.data();
        float* db = g.at(in[2]).grad.data();
        for (int o = 0; o < O; ++o) {
            float go = grad[static_cast<std::size_t>(o)];
            db[o] += go;
            const float* wr = w + o * N;
            float* dwr = dw + o * N;
            for (int i = 0; i < N; ++i) {
                dx[i] += wr[i] * go;
                dwr[i] += x[i] * go;
            }
        }
    }
};

struct ReluNode final : Node {
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        for (std::size_t i = 0; i < val.size(); ++i) val[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
    void backward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t i = 0; i < val.size(); ++i)
            if (x[i] > 0.0f) dx[i] += grad[i];
    }
};

struct MaxPool2Node final : Node {
    int C, H, W, OH, OW;
    std::vector<int> argmax;
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        argmax.resize(val.size());
        std::size_t o = 0;
        for (int c = 0; c < C; ++c) {
            const float* xc = x + c * H * W;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox, ++o) {
                    int base = (oy * 2) * W + ox * 2;
                    int best = base;
                    float bv = xc[base];
                    int cands[3] = {base + 1, base + W, base + W + 1};
                    for (int k : cands) {
                        if (xc[k] > bv) { bv = xc[k]; best = k; }
                    }
                    val[o] = bv;
                    argmax[o] = c * H * W + best;
                }
            }
        }
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t o = 0; o < val.size(); ++o)
            dx[static_cast<std::size_t>(argmax[o])] += grad[o];
    }
};

struct DropoutNode final : Node {
    float p = 0.5f;
    std::vector<float> mask;
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        if (!g.train || p <= 0.0f) {
            std::memcpy(val.data(), x, val.size() * sizeof(float));
            mask.clear();
            return;
        }
        mask.resize(val.size());
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        float scale = 1.0f / (1.0f - p);
        for (std::size_t i = 0; i < val.size(); ++i) {
            mask[i] = u(g.rng) < p ? 0.0f : scale;
            val[i] = x[i] * mask[i];
        }
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        if (mask.empty()) {
            for (std::size_t i = 0; i < val.size(); ++i) dx[i] += grad[i];
        } else {
            for (std::size_t i = 0; i < val.size(); ++i) dx[i] += grad[i] * mask[i];
        }
    }
};

struct SigmoidNode final : Node {
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        for (std::size_t i = 0; i < val.size(); ++i)
            val[i] = 1.0f / (1.0f + std::exp(-x[i]));
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t i = 0; i < val.size(); ++i)
            dx[i] += grad[i] * val[i] * (1.0f - val[i]);
    }
};

struct BceNode final : Node {
    float target = 1.0f;
    void forward(Impl& g) override {
        float p = g.at(in[0]).val[0];
        p = std::clamp(p, kLogEps, 1.0f - kLogEps);
        val[0] = -(target * std::log(p) + (1.0f - target) * std::log(1.0f - p));
    }
    void backward(Impl& g) override {
        float p = std::clamp(g.at(in[0]).val[0], kLogEps, 1.0f - kLogEps);
        g.at(in[0]).grad[0] += grad[0] * (-(target / p) + (1.0f - target) / (1.0f - p));
    }
};

struct SoftmaxNode final : Node {
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        float mx = x[0];
        for (std::size_t i = 1; i < val.size(); ++i) mx = std::max(mx, x[i]);
        float z = 0.0f;
        for (std::size_t i = 0; i < val.size(); ++i) {
            val[i] = std::exp(x[i] - mx);
            z += val[i];
        }
        for (std::size_t i = 0; i < val.size(); ++i) val[i] /= z;
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        float dot = 0.0f;
        for (std::size_t i = 0; i < val.size(); ++i) dot += grad[i] * val[i];
        for (std::size_t i = 0; i < val.size(); ++i)
            dx[i] += val[i] * (grad[i] - dot);
    }
};

struct SoftmaxXentNode final : Node {
    int label = 0;
    std::vector<float> probs;
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        std::size_t k = g.at(in[0]).val.size();
        probs.resize(k);
        float mx = x[0];
        for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, x[i]);
        float z = 0.0f;
        for (std::size_t i = 0; i < k; ++i) {
            probs[i] = std::exp(x[i] - mx);
            z += probs[i];
        }
        for (std::size_t i = 0; i < k; ++i) probs[i] /= z;
        val[0] = std::log(z) + mx - x[static_cast<std::size_t>(label)];
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t i = 0; i < probs.size(); ++i) {
            float t = static_cast<int>(i) == label ? 1.0f : 0.0f;
            dx[i] += grad[0] * (probs[i] - t);
        }
    }
};

struct XentProbsNode final : Node {
    int label = 0;
    void forward(Impl& g) override {
        float p = g.at(in[0]).val[static_cast<std::size_t>(label)];
        val[0] = -std::log(std::max(p, 1e-38f));
    }
    void backward(Impl& g) override {
        // guard only against division by an underflowed zero; a hard cutoff
        // here would silence the gradient exactly when the attack needs it
        float p = g.at(in[0]).val[static_cast<std::size_t>(label)];
        g.at(in[0]).grad[static_cast<std::size_t>(label)] +=
            grad[0] * (-1.0f / std::max(p, 1e-38f));
    }
};

struct MeanVecNode final : Node {
    void forward(Impl& g) override {
        std::fill(val.begin(), val.end(), 0.0f);
        float inv = 1.0f / static_cast<float>(in.size());
        for (NodeId id : in) {
            const float* x = g.at(id).val.data();
            for (std::size_t i = 0; i < val.size(); ++i) val[i] += inv * x[i];
        }
    }
    void backward(Impl& g) override {
        float inv = 1.0f / static_cast<float>(in.size());
        for (NodeId id : in) {
            float* dx = g.at(id).grad.data();
            for (std::size_t i = 0; i < val.size(); ++i) dx[i] += inv * grad[i];
        }
    }
};

struct RelativeL2Node final : Node {
    float num = 0.0f, den = 0.0f;
    void forward(Impl& g) override {
        const float* a = g.at(in[0]).val.data();
        const float* b = g.at(in[1]).val.data();
        std::size_t n = g.at(in[0]).val.size();
        float sn = 0.0f, sd = 0.0f;
        for (std::size_t i = 0; i < n; ++i) {
            float d = a[i] - b[i];
            sn += d * d;
            sd += b[i] * b[i];
        }
        num = std::sqrt(sn);
        den = std::sqrt(sd);
        if (den == 0.0f)
            throw Error("relative_l2: reference norm is zero at node " + name);
        val[0] = num / den;
    }
    void backward(Impl& g) override {
        if (num == 0.0f) return;  // subgradient 0 at a == b
        const float* a = g.at(in[0]).val.data();
        const float* b = g.at(in[1]).val.data();
        float* da = g.at(in[0]).grad.data();
        float* db = g.at(in[1]).grad.data();
        std::size_t n = g.at(in[0]).val.size();
        float ka = grad[0] / (num * den);
        float kb = grad[0] * num / (den * den * den);
        for (std::size_t i = 0; i < n; ++i) {
            float d = a[i] - b[i];
            da[i] += ka * d;
            db[i] += -ka * d - kb * b[i];
        }
    }
};

struct WeightedSumNode final : Node {
    std::vector<float> w;
    void forward(Impl& g) override {
        float acc = 0.0f;
        for (std::size_t k = 0; k < in.size(); ++k) acc += w[k] * g.at(in[k]).val[0];
        val[0] = acc;
    }
    void backward(Impl& g) override {
        for (std::size_t k = 0; k < in.size(); ++k)
            g.at(in[k]).grad[0] += w[k] * grad[0];
    }
};

struct ResidualAddNode final : Node {
    float branch_scale = 1.0f;
    void forward(Impl& g) override {
        const float* a = g.at(in[0]).val.data();
        const float* b = g.at(in[1]).val.data();
        for (std::size_t i = 0; i < val.size(); ++i) val[i] = a[i] + b[i];
    }
    void backward(Impl& g) override {
        float* da = g.at(in[0]).grad.data();
        float* db = g.at(in[1]).grad.data();
        for (std::size_t i = 0; i < val.size(); ++i) {
            da[i] += grad[i];
            db[i] += branch_scale * grad[i];
        }
    }
};

struct SumNode final : Node {
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        float acc = 0.0f;
        for (std::size_t i = 0; i < g.at(in[0]).val.size(); ++i) acc += x[i];
        val[0] = acc;
    }
    void backward(Impl& g) override {
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t i = 0; i < g.at(in[0]).val.size(); ++i) dx[i] += grad[0];
    }
};

struct HalfSumSqNode final : Node {
    void forward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        float acc = 0.0f;
        for (std::size_t i = 0; i < g.at(in[0]).val.size(); ++i) acc += x[i] * x[i];
        val[0] = 0.5f * acc;
    }
    void backward(Impl& g) override {
        const float* x = g.at(in[0]).val.data();
        float* dx = g.at(in[0]).grad.data();
        for (std::size_t i = 0; i < g.at(in[0]).val.size(); ++i) dx[i] += grad[0] * x[i];
    }
};

template <class T>
T& as(Impl& g, NodeId id, const char* what) {
    g.check(id);
    auto* p = dynamic_cast<T*>(&g.at(id));
    if (!p) throw Error(std::string("node ") + std::to_string(id) + " is not a " + what);
    return *p;
}

}  // namespace

Graph::Graph(std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
    impl_->rng.seed(seed);
}
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

NodeId Graph::input(const std::string& name, std::vector<int> shape) {
    if (impl_->input_ids.count(name)) throw Error("duplicate input name: " + name);
    auto n = std::make_unique<InputNode>();
    n->shape = std::move(shape);
    n->name = "input:" + name;
    NodeId id = impl_->add(std::move(n));
    impl_->input_ids[name] = id;
    return id;
}

NodeId Graph::param(const Tensor* storage) {
    auto n = std::make_unique<ParamNode>();
    n->storage = storage;
    n->shape = storage->shape;
    n->name = "param";
    return impl_->add(std::move(n));
}

NodeId Graph::constant(Tensor value) {
    auto n = std::make_unique<ConstNode>();
    n->shape = value.shape;
    n->name = "const";
    NodeId id = impl_->add(std::move(n));
    impl_->at(id).val = std::move(value.data);
    return id;
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    impl_->check(x); impl_->check(w); impl_->check(b);
    const auto& xs = impl_->at(x).shape;
    const auto& ws = impl_->at(w).shape;
    if (xs.size() != 3 || ws.size() != 4 || xs[0] != ws[1])
        throw ShapeError("conv2d: input " + shape_str(xs) + " vs weight " + shape_str(ws));
    auto n = std::make_unique<Conv2dNode>();
    n->stride = stride; n->pad = pad;
    n->C = xs[0]; n->H = xs[1]; n->W = xs[2];
    n->OC = ws[0]; n->KH = ws[2]; n->KW = ws[3];
    n->OH = conv_out(n->H, n->KH, stride, pad);
    n->OW = conv_out(n->W, n->KW, stride, pad);
    if (n->OH <= 0 || n->OW <= 0) throw ShapeError("conv2d: empty output");
    if (impl_->at(b).shape != std::vector<int>{n->OC})
        throw ShapeError("conv2d: bias shape mismatch");
    n->shape = {n->OC, n->OH, n->OW};
    n->in = {x, w, b};
    n->name = "conv2d";
    return impl_->add(std::move(n));
}

NodeId Graph::dense(NodeId x, NodeId w, NodeId b) {
    impl_->check(x); impl_->check(w); impl_->check(b);
    int nin = static_cast<int>(Tensor::numel(impl_->at(x).shape));
    const auto& ws = impl_->at(w).shape;
    if (ws.size() != 2 || ws[1] != nin)
        throw ShapeError("dense: weight " + shape_str(ws) + " vs flattened input " +
                         std::to_string(nin));
    auto n = std::make_unique<DenseNode>();
    n->N = nin; n->O = ws[0];
    if (impl_->at(b).shape != std::vector<int>{n->O})
        throw ShapeError("dense: bias shape mismatch");
    n->shape = {n->O};
    n->in = {x, w, b};
    n->name = "dense";
    return impl_->add(std::move(n));
}

NodeId Graph::relu(NodeId x) {
    impl_->check(x);
    auto n = std::make_unique<ReluNode>();
    n->shape = impl_->at(x).shape;
    n->in = {x};
    n->name = "relu";
    return impl_->add(std::move(n));
}

NodeId Graph::maxpool2(NodeId x) {
    impl_->check(x);
    const auto& xs = impl_->at(x).shape;
    if (xs.size() != 3 || xs[1] < 2 || xs[2] < 2)
        throw ShapeError("maxpool2: need CxHxW with H,W >= 2, got " + shape_str(xs));
    auto n = std::make_unique<MaxPool2Node>();
    n->C = xs[0]; n->H = xs[1]; n->W = xs[2];
    n->OH = pool_out(n->H); n->OW = pool_out(n->W);
    n->shape = {n->C, n->OH, n->OW};
    n->in = {x};
    n->name = "maxpool2";
    return impl_->add(std::move(n));
}

NodeId Graph::dropout(NodeId x, float p) {
    impl_->check(x);
    auto n = std::make_unique<DropoutNode>();
    n->p = p;
    n->shape = impl_->at(x).shape;
    n->in = {x};
    n->name = "dropout";
    return impl_->add(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
    impl_->check(x);
    auto n = std::make_unique<SigmoidNode>();
    n->shape = impl_->at(x).shape;
    n->in = {x};
    n->name = "sigmoid";
    return impl_->add(std::move(n));
}

NodeId Graph::bce(NodeId p) {
    impl_->check(p);
    if (Tensor::numel(impl_->at(p).shape) != 1)
        throw ShapeError("bce: probability input must be scalar");
    auto n = std::make_unique<BceNode>();
    n->shape = {1};
    n->in = {p};
    n->name = "bce";
    return impl_->add(std::move(n));
}

NodeId Graph::softmax(NodeId logits) {
    impl_->check(logits);
    auto n = std::make_unique<SoftmaxNode>();
    n->shape = impl_->at(logits).shape;
    n->in = {logits};
    n->name = "softmax";
    return impl_->add(std::move(n));
}

NodeId Graph::softmax_xent(NodeId logits) {
    impl_->check(logits);
    auto n = std::make_unique<SoftmaxXentNode>();
    n->shape = {1};
    n->in = {logits};
    n->name = "softmax_xent";
    return impl_->add(std::move(n));
}

NodeId Graph::xent_probs(NodeId probs) {
    impl_->check(probs);
    auto n = std::make_unique<XentProbsNode>();
    n->shape = {1};
    n->in = {probs};
    n->name = "xent_probs";
    return impl_->add(std::move(n));
}

NodeId Graph::mean_vectors(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw Error("mean_vectors: no inputs");
    for (NodeId id : xs) {
        impl_->check(id);
        if (impl_->at(id).shape != impl_->at(xs[0]).shape)
            throw ShapeError("mean_vectors: member shape mismatch");
    }
    auto n = std::make_unique<MeanVecNode>();
    n->shape = impl_->at(xs[0]).shape;
    n->in = xs;
    n->name = "mean_vectors";
    return impl_->add(std::move(n));
}

NodeId Graph::relative_l2(NodeId a, NodeId b) {
    impl_->check(a); impl_->check(b);
    if (impl_->at(a).shape != impl_->at(b).shape)
        throw ShapeError("relative_l2: shape mismatch " + shape_str(impl_->at(a).shape) +
                         " vs " + shape_str(impl_->at(b).shape));
    auto n = std::make_unique<RelativeL2Node>();
    n->shape = {1};
    n->in = {a, b};
    n->name = "relative_l2";
    return impl_->add(std::move(n));
}

NodeId Graph::weighted_sum(const std::vector<NodeId>& xs, const std::vector<float>& w) {
    if (xs.empty() || xs.size() != w.size())
        throw Error("weighted_sum: inputs/weights length mismatch");
    for (NodeId id : xs) {
        impl_->check(id);
        if (Tensor::numel(impl_->at(id).shape) != 1)
            throw ShapeError("weighted_sum: all terms must be scalar");
    }
    auto n = std::make_unique<WeightedSumNode>();
    n->w = w;
    n->shape = {1};
    n->in = xs;
    n->name = "weighted_sum";
    return impl_->add(std::move(n));
}

NodeId Graph::residual_add(NodeId skip, NodeId branch) {
    impl_->check(skip); impl_->check(branch);
    if (impl_->at(skip).shape != impl_->at(branch).shape)
        throw ShapeError("residual_add: shape mismatch");
    auto n = std::make_unique<ResidualAddNode>();
    n->shape = impl_->at(skip).shape;
    n->in = {skip, branch};
    n->name = "residual_add";
    return impl_->add(std::move(n));
}

NodeId Graph::sum(NodeId x) {
    impl_->check(x);
    auto n = std::make_unique<SumNode>();
    n->shape = {1};
    n->in = {x};
    n->name = "sum";
    return impl_->add(std::move(n));
}

NodeId Graph::half_sum_squares(NodeId x) {
    impl_->check(x);
    auto n = std::make_unique<HalfSumSqNode>();
    n->shape = {1};
    n->in = {x};
    n->name = "half_sum_squares";
    return impl_->add(std::move(n));
}

void Graph::set_loss(NodeId leaf) {
    impl_->check(leaf);
    impl_->loss = leaf;
}

void Graph::set_train(bool train) { impl_->train = train; }
void Graph::set_seed(std::uint64_t seed) { impl_->rng.seed(seed); }

void Graph::set_constant(NodeId node, const Tensor& value) {
    auto& n = as<ConstNode>(*impl_, node, "constant");
    if (value.shape != n.shape)
        throw ShapeError("set_constant: shape mismatch");
    n.val = value.data;
}

void Graph::set_label(NodeId node, int label) {
    impl_->check(node);
    if (auto* sx = dynamic_cast<SoftmaxXentNode*>(&impl_->at(node))) {
        int k = static_cast<int>(Tensor::numel(impl_->at(sx->in[0]).shape));
        if (label < 0 || label >= k) throw Error("set_label: label out of range");
        sx->label = label;
        return;
    }
    if (auto* xp = dynamic_cast<XentProbsNode*>(&impl_->at(node))) {
        int k = static_cast<int>(Tensor::numel(impl_->at(xp->in[0]).shape));
        if (label < 0 || label >= k) throw Error("set_label: label out of range");
        xp->label = label;
        return;
    }
    throw Error("set_label: node has no label parameter");
}

void Graph::set_bce_target(NodeId node, float target) {
    as<BceNode>(*impl_, node, "bce").target = target;
}

void Graph::set_branch_scale(NodeId node, float scale) {
    as<ResidualAddNode>(*impl_, node, "residual_add").branch_scale = scale;
}

void Graph::bind(const std::string& name, const Tensor* value) {
    auto it = impl_->input_ids.find(name);
    if (it == impl_->input_ids.end()) throw Error("bind: unknown input " + name);
    if (value && value->shape != impl_->at(it->second).shape)
        throw ShapeError("bind: shape mismatch for input " + name + ": expected " +
                         shape_str(impl_->at(it->second).shape) + " got " +
                         shape_str(value->shape));
    impl_->bindings[it->second] = value;
}

float Graph::run_forward() {
    if (impl_->loss < 0) throw Error("run_forward: loss node not set");
    for (auto& [name, id] : impl_->input_ids) {
        auto it = impl_->bindings.find(id);
        if (it == impl_->bindings.end() || it->second == nullptr)
            throw Error("run_forward: unbound input " + name);
        auto& node = impl_->at(id);
        std::memcpy(node.val.data(), it->second->data.data(),
                    node.val.size() * sizeof(float));
    }
    for (auto& n : impl_->nodes) n->forward(*impl_);
    return impl_->at(impl_->loss).val[0];
}

Tensor Graph::forward(const std::map<std::string, const Tensor*>& bindings) {
    for (const auto& [name, t] : bindings) bind(name, t);
    run_forward();
    return value_of(impl_->loss);
}

void Graph::backward() {
    if (impl_->loss < 0) throw Error("backward: loss node not set");
    if (impl_->at(impl_->loss).val.size() != 1)
        throw Error("backward: loss node is not scalar");
    for (auto& n : impl_->nodes) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
    impl_->at(impl_->loss).grad[0] = 1.0f;
    for (auto it = impl_->nodes.rbegin(); it != impl_->nodes.rend(); ++it)
        (*it)->backward(*impl_);
}

Tensor Graph::value_of(NodeId node) const {
    impl_->check(node);
    const auto& n = impl_->at(node);
    return Tensor(n.shape, n.val);
}

Tensor Graph::grad_of(NodeId node) const {
    impl_->check(node);
    const auto& n = impl_->at(node);
    return Tensor(n.shape, n.grad);
}

Tensor Graph::input_grad(const std::string& name) const {
    auto it = impl_->input_ids.find(name);
    if (it == impl_->input_ids.end()) throw Error("input_grad: unknown input " + name);
    return grad_of(it->second);
}

void Graph::add_grad_to(NodeId node, float* dst) const {
    impl_->check(node);
    const auto& g = impl_->at(node).grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

const std::vector<int>& Graph::shape_of(NodeId node) const {
    impl_->check(node);
    return impl_->at(node).shape;
}

std::size_t Graph::node_count() const { return impl_->nodes.size(); }

float finite_difference_gradient(Graph& g, const std::string& input_name,
                                 const Tensor& at, std::size_t coordinate, float h) {
    if (h <= 0.0f) throw Error("finite_difference_gradient: h must be positive");
    Tensor probe = at;
    probe.data[coordinate] = at.data[coordinate] + h;
    g.bind(input_name, &probe);
    float plus = g.run_forward();
    probe.data[coordinate] = at.data[coordinate] - h;
    float minus = g.run_forward();
    probe.data[coordinate] = at.data[coordinate];
    g.bind(input_name, &at);
    return (plus - minus) / (2.0f * h);
}

}  // namespace ftnet
