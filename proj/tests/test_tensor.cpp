#include <cmath>
#include <random>

#include "doctest.h"
#include "ftnet/graph.hpp"

using namespace ftnet;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, float lo = -1.0f,
                     float hi = 1.0f) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : t.data) v = u(rng);
    return t;
}

// Direct nested-loop convolution, independent of the graph engine.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                   int pad) {
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    int OC = w.shape[0], KH = w.shape[2], KW = w.shape[3];
    int OH = (H + 2 * pad - KH) / stride + 1;
    int OW = (W + 2 * pad - KW) / stride + 1;
    Tensor out({OC, OH, OW});
    for (int oc = 0; oc < OC; ++oc)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float acc = b.data[oc];
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            int iy = oy * stride + ky - pad;
                            int ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += w.data[((oc * C + c) * KH + ky) * KW + kx] *
                                   x.data[(c * H + iy) * W + ix];
                        }
                out.data[(oc * OH + oy) * OW + ox] = acc;
            }
    return out;
}

// Checks analytic input gradient against central differences at n_coords
// random coordinates. Relative error denominator per the contract: |fd|+1e-6.
// The f32 forward rounds the loss to ~1e-7 relative, so the quotient carries
// noise of order eps*|L|/h; coordinates whose gradient sits below that noise
// floor cannot be judged by a pure relative bound and are skipped.
void gradcheck(Graph& g, const std::string& input_name, const Tensor& at,
               std::mt19937_64& rng, int n_coords = 20, float tol = 1e-3f,
               float h = 2e-2f) {
    g.bind(input_name, &at);
    float loss = g.run_forward();
    g.backward();
    Tensor analytic = g.input_grad(input_name);
    // Two f32 loss evaluations each round to ~6e-8 relative, so the FD
    // quotient carries absolute noise near 1.2e-7*|L|/h. A pure relative
    // tolerance is only meaningful for |fd| >= noise/tol.
    float noise_abs = 1.2e-7f * std::fabs(loss) / h;
    float min_checkable = 2.0f * noise_abs / tol;
    std::uniform_int_distribution<std::size_t> pick(0, at.size() - 1);
    int checked = 0;
    for (int k = 0; k < n_coords * 6 && checked < n_coords; ++k) {
        std::size_t i = pick(rng);
        float fd = finite_difference_gradient(g, input_name, at, i, h);
        if (std::fabs(fd) < min_checkable && std::fabs(analytic.data[i]) < min_checkable)
            continue;
        // Step-halving consistency guard: if the quotient moves with h
        // beyond the noise, the loss has a kink (relu/pool argmax flip)
        // inside the stencil and FD is not a valid oracle there. A backward
        // bug would still produce h-consistent FD values that disagree with
        // the analytic gradient.
        float fd_half = finite_difference_gradient(g, input_name, at, i, h * 0.5f);
        if (std::fabs(fd - fd_half) >
            std::max(6.0f * noise_abs, 1e-3f * std::fabs(fd_half)))
            continue;
        fd = fd_half;
        ++checked;
        float rel = std::fabs(analytic.data[i] - fd) / (std::fabs(fd) + 1e-6f);
        CAPTURE(i);
        CAPTURE(fd);
        CAPTURE(analytic.data[i]);
        CHECK(rel < tol);
    }
    CHECK(checked > 0);
}

}  // namespace

TEST_CASE("relu forward matches definition") {
    Graph g;
    NodeId x = g.input("x", {3});
    NodeId r = g.relu(x);
    g.set_loss(g.sum(r));
    Tensor in({3}, {-1.0f, 0.0f, 2.0f});
    g.bind("x", &in);
    g.run_forward();
    Tensor v = g.value_of(r);
    CHECK(v.data == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("relative L2 of a tensor with itself is zero") {
    std::mt19937_64 rng(7);
    Graph g;
    NodeId a = g.input("a", {4, 3});
    Tensor ref = random_tensor({4, 3}, rng, 0.5f, 1.5f);
    NodeId b = g.constant(ref);
    NodeId d = g.relative_l2(a, b);
    g.set_loss(d);
    g.bind("a", &ref);
    CHECK(g.run_forward() == 0.0f);
}

TEST_CASE("relative L2 rejects a zero reference") {
    Graph g;
    NodeId a = g.input("a", {2});
    NodeId b = g.constant(Tensor({2}, {0.0f, 0.0f}));
    g.set_loss(g.relative_l2(a, b));
    Tensor in({2}, {1.0f, 2.0f});
    g.bind("a", &in);
    CHECK_THROWS_AS(g.run_forward(), Error);
}

TEST_CASE("3x3 all-ones convolution, pad 1: center output is 9") {
    Graph g;
    NodeId x = g.input("x", {1, 5, 5});
    Tensor w({1, 1, 3, 3});
    std::fill(w.data.begin(), w.data.end(), 1.0f);
    Tensor b({1});
    NodeId y = g.conv2d(x, g.constant(w), g.constant(b), 1, 1);
    g.set_loss(g.sum(y));
    Tensor in({1, 5, 5});
    std::fill(in.data.begin(), in.data.end(), 1.0f);
    g.bind("x", &in);
    g.run_forward();
    Tensor out = g.value_of(y);
    CHECK(out.data[2 * 5 + 2] == 9.0f);
    Tensor expect = conv_oracle(in, w, b, 1, 1);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == expect.data[i]);
}

TEST_CASE("convolution matches brute-force oracle on random cases") {
    std::mt19937_64 rng(11);
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
        Tensor in = random_tensor({3, 8, 8}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        Graph g;
        NodeId x = g.input("x", {3, 8, 8});
        NodeId y = g.conv2d(x, g.constant(w), g.constant(b), stride, pad);
        g.set_loss(g.sum(y));
        g.bind("x", &in);
        g.run_forward();
        Tensor got = g.value_of(y);
        Tensor expect = conv_oracle(in, w, b, stride, pad);
        REQUIRE(got.shape == expect.shape);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("backprop: sum gives all-ones gradient") {
    Graph g;
    NodeId x = g.input("x", {2, 3});
    g.set_loss(g.sum(x));
    Tensor in({2, 3}, {1, -2, 3, 0, 5, -6});
    g.bind("x", &in);
    g.run_forward();
    g.backward();
    for (float v : g.input_grad("x").data) CHECK(v == 1.0f);
}

TEST_CASE("backprop: half sum of squares gives identity gradient") {
    Graph g;
    NodeId x = g.input("x", {2});
    g.set_loss(g.half_sum_squares(x));
    Tensor in({2}, {3.0f, 4.0f});
    g.bind("x", &in);
    g.run_forward();
    g.backward();
    Tensor grad = g.input_grad("x");
    CHECK(grad.data[0] == doctest::Approx(3.0f));
    CHECK(grad.data[1] == doctest::Approx(4.0f));
}

TEST_CASE("finite differences on simple closed forms") {
    // f32 forward rounding bounds FD accuracy near 1e-4; tolerances follow.
    {
        Graph g;
        NodeId x = g.input("x", {1});
        g.set_loss(g.weighted_sum({g.half_sum_squares(x)}, {2.0f}));
        Tensor at({1}, {1.0f});
        g.bind("x", &at);
        float fd = finite_difference_gradient(g, "x", at, 0, 1e-3f);
        CHECK(fd == doctest::Approx(2.0f).epsilon(1e-3));
    }
    {
        Graph g;
        NodeId x = g.input("x", {1});
        g.set_loss(g.sum(g.sigmoid(x)));
        Tensor at({1}, {0.0f});
        g.bind("x", &at);
        float fd = finite_difference_gradient(g, "x", at, 0, 1e-3f);
        CHECK(fd == doctest::Approx(0.25f).epsilon(1e-3));
    }
    Graph g;
    NodeId x = g.input("x", {1});
    g.set_loss(g.sum(x));
    Tensor at({1}, {0.0f});
    g.bind("x", &at);
    CHECK_THROWS_AS(finite_difference_gradient(g, "x", at, 0, 0.0f), Error);
}

TEST_CASE("gradient check per op kind") {
    std::mt19937_64 rng(23);

    SUBCASE("conv2d") {
        Graph g;
        NodeId x = g.input("x", {1, 5, 5});
        NodeId y = g.conv2d(x, g.constant(random_tensor({2, 1, 3, 3}, rng)),
                            g.constant(random_tensor({2}, rng)), 1, 1);
        g.set_loss(g.half_sum_squares(y));
        gradcheck(g, "x", random_tensor({1, 5, 5}, rng), rng);
    }
    SUBCASE("dense") {
        Graph g;
        NodeId x = g.input("x", {10});
        NodeId y = g.dense(x, g.constant(random_tensor({4, 10}, rng)),
                           g.constant(random_tensor({4}, rng)));
        g.set_loss(g.weighted_sum({g.half_sum_squares(y)}, {0.25f}));
        gradcheck(g, "x", random_tensor({10}, rng), rng);
    }
    SUBCASE("relu") {
        Graph g;
        NodeId x = g.input("x", {12});
        g.set_loss(g.half_sum_squares(g.relu(x)));
        // keep values away from the kink where the derivative jumps
        Tensor at = random_tensor({12}, rng);
        for (auto& v : at.data)
            if (std::fabs(v) < 0.05f) v = 0.2f;
        gradcheck(g, "x", at, rng);
    }
    SUBCASE("maxpool2") {
        Graph g;
        NodeId x = g.input("x", {1, 4, 4});
        g.set_loss(g.half_sum_squares(g.maxpool2(x)));
        gradcheck(g, "x", random_tensor({1, 4, 4}, rng), rng, 16);
    }
    SUBCASE("sigmoid + bce") {
        Graph g;
        NodeId x = g.input("x", {1});
        NodeId l = g.bce(g.sigmoid(x));
        g.set_bce_target(l, 1.0f);
        g.set_loss(l);
        gradcheck(g, "x", random_tensor({1}, rng), rng, 5);
    }
    SUBCASE("softmax_xent") {
        Graph g;
        NodeId x = g.input("x", {6});
        NodeId l = g.softmax_xent(x);
        g.set_label(l, 2);
        g.set_loss(l);
        gradcheck(g, "x", random_tensor({6}, rng), rng, 6);
    }
    SUBCASE("softmax + xent_probs") {
        Graph g;
        NodeId x = g.input("x", {6});
        NodeId l = g.xent_probs(g.softmax(x));
        g.set_label(l, 3);
        g.set_loss(l);
        gradcheck(g, "x", random_tensor({6}, rng), rng, 6);
    }
    SUBCASE("relative_l2") {
        Graph g;
        NodeId x = g.input("x", {8});
        NodeId b = g.constant(random_tensor({8}, rng, 0.5f, 1.5f));
        g.set_loss(g.relative_l2(x, b));
        gradcheck(g, "x", random_tensor({8}, rng), rng, 8);
    }
    SUBCASE("mean_vectors + residual_add + weighted_sum") {
        Graph g;
        NodeId x = g.input("x", {6});
        NodeId a = g.relu(x);
        NodeId r = g.residual_add(x, a);
        NodeId m = g.mean_vectors({r, x});
        NodeId l = g.weighted_sum({g.half_sum_squares(m), g.sum(r)}, {0.7f, -0.3f});
        g.set_loss(l);
        Tensor at = random_tensor({6}, rng);
        for (auto& v : at.data)
            if (std::fabs(v) < 0.05f) v = 0.2f;
        gradcheck(g, "x", at, rng, 12);
    }
}

TEST_CASE("gradient check on random composite conv nets") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        Graph g;
        NodeId x = g.input("x", {1, 8, 8});
        NodeId h1 = g.relu(g.conv2d(x, g.constant(random_tensor({4, 1, 3, 3}, rng, -0.5f, 0.5f)),
                                    g.constant(random_tensor({4}, rng)), 1, 1));
        NodeId p = g.maxpool2(h1);
        NodeId h2 = g.relu(g.conv2d(p, g.constant(random_tensor({4, 4, 3, 3}, rng, -0.5f, 0.5f)),
                                    g.constant(random_tensor({4}, rng)), 1, 1));
        NodeId logits = g.dense(h2, g.constant(random_tensor({5, 64}, rng, -0.3f, 0.3f)),
                                g.constant(random_tensor({5}, rng)));
        NodeId l = g.softmax_xent(logits);
        g.set_label(l, trial % 5);
        g.set_loss(l);
        gradcheck(g, "x", random_tensor({1, 8, 8}, rng, 0.0f, 1.0f), rng, 20);
    }
}

TEST_CASE("linearity of backprop over weighted sums") {
    std::mt19937_64 rng(31);
    Graph g;
    NodeId x = g.input("x", {6});
    NodeId l1 = g.half_sum_squares(g.relu(x));
    NodeId l2 = g.sum(g.sigmoid(x));
    NodeId combo = g.weighted_sum({l1, l2}, {0.3f, 1.7f});
    Tensor at = random_tensor({6}, rng);

    g.set_loss(l1);
    g.bind("x", &at);
    g.run_forward();
    g.backward();
    Tensor g1 = g.input_grad("x");
    g.set_loss(l2);
    g.run_forward();
    g.backward();
    Tensor g2 = g.input_grad("x");
    g.set_loss(combo);
    g.run_forward();
    g.backward();
    Tensor gc = g.input_grad("x");
    for (std::size_t i = 0; i < at.size(); ++i)
        CHECK(gc.data[i] == doctest::Approx(0.3f * g1.data[i] + 1.7f * g2.data[i])
                                .epsilon(1e-6));
}

TEST_CASE("determinism: identical bindings give bitwise-identical results") {
    std::mt19937_64 rng(77);
    Tensor w = random_tensor({4, 1, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor in = random_tensor({1, 6, 6}, rng, 0.0f, 1.0f);
    auto run = [&] {
        Graph g(99);
        NodeId x = g.input("x", {1, 6, 6});
        NodeId y = g.relu(g.conv2d(x, g.constant(w), g.constant(b), 1, 1));
        NodeId d = g.dropout(y, 0.3f);
        g.set_train(true);
        g.set_loss(g.half_sum_squares(d));
        g.bind("x", &in);
        g.run_forward();
        g.backward();
        return std::pair{g.value_of(d).data, g.input_grad("x").data};
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("dropout is identity in eval mode and inverted-scaled in train mode") {
    std::mt19937_64 rng(5);
    Tensor in = random_tensor({64}, rng, 0.5f, 1.0f);
    Graph g(1);
    NodeId x = g.input("x", {64});
    NodeId d = g.dropout(x, 0.5f);
    g.set_loss(g.sum(d));
    g.bind("x", &in);
    g.run_forward();
    CHECK(g.value_of(d).data == in.data);  // eval mode: identity

    g.set_train(true);
    double mean = 0.0;
    int reps = 400;
    for (int r = 0; r < reps; ++r) mean += g.run_forward();
    mean /= reps;
    double clean = 0.0;
    for (float v : in.data) clean += v;
    CHECK(mean == doctest::Approx(clean).epsilon(0.05));
}

TEST_CASE("structured errors: unbound input and shape mismatch") {
    Graph g;
    NodeId x = g.input("x", {2, 4, 4});
    g.set_loss(g.sum(x));
    CHECK_THROWS_WITH_AS(g.run_forward(), doctest::Contains("unbound input x"), Error);
    Tensor wrong({2, 3, 3});
    CHECK_THROWS_AS(g.bind("x", &wrong), ShapeError);
    CHECK_THROWS_AS(g.conv2d(x, g.constant(Tensor({1, 3, 3, 3})),
                             g.constant(Tensor({1})), 1, 1),
                    ShapeError);
}

TEST_CASE("backward demands a scalar loss") {
    Graph g;
    NodeId x = g.input("x", {3});
    NodeId r = g.relu(x);
    g.set_loss(r);
    Tensor in({3}, {1, 2, 3});
    g.bind("x", &in);
    g.run_forward();
    CHECK_THROWS_AS(g.backward(), Error);
}

TEST_CASE("residual_add branch scaling only affects the branch gradient") {
    Graph g;
    NodeId x = g.input("x", {4});
    NodeId branch = g.relu(x);
    NodeId r = g.residual_add(x, branch);
    g.set_loss(g.sum(r));
    Tensor in({4}, {1.0f, 2.0f, 3.0f, 4.0f});  // all positive: relu passes grad
    g.bind("x", &in);
    g.run_forward();
    g.set_branch_scale(r, 0.0f);
    g.backward();
    for (float v : g.input_grad("x").data) CHECK(v == 1.0f);  // skip path only
    g.set_branch_scale(r, 1.0f);
    g.backward();
    for (float v : g.input_grad("x").data) CHECK(v == 2.0f);
}
