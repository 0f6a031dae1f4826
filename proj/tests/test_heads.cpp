#include <random>

#include "doctest.h"
#include "ftnet/heads.hpp"
#include "ftnet/synth.hpp"

using namespace ftnet;

namespace {

// One trained base model + feature cache shared across test cases.
struct Fixture {
    TapModel model;
    Dataset train, val;
    FeatureCache cache;  // over train

    Fixture() {
        SynthConfig cfg;
        cfg.per_class = 60;
        train = make_shapes_dataset(cfg, "train");
        val = make_shapes_dataset(cfg, "val");
        model = build_model("plainnet-s", 10, 17);
        TrainConfig tc;
        tc.iters = 150;
        tc.batch_size = 32;
        tc.seed = 17;
        train_classifier(model, train, tc);
        cache = extract_features(model, train, {"b2", "b4", "b6"});
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

HeadTrainConfig quick_cfg() {
    HeadTrainConfig cfg;
    cfg.iters = 120;
    cfg.batch_size = 32;
    return cfg;
}

}  // namespace

TEST_CASE("untrained head outputs near 0.5") {
    auto& fx = fixture();
    AuxHead h = build_head("b4", 3, fx.cache.by_tap.at("b4")[0].shape, 1);
    h.trained = true;  // probe the initialization
    float p = head_probability(h, fx.cache.by_tap.at("b4")[0]);
    CHECK(p > 0.3f);
    CHECK(p < 0.7f);
}

TEST_CASE("head training separates its class and leaves the base frozen") {
    auto& fx = fixture();
    std::uint64_t base_sum = param_checksum(fx.model.params);
    AuxHead h = train_head(fx.cache, "b4", 3, quick_cfg(), 5);
    CHECK(param_checksum(fx.model.params) == base_sum);
    CHECK(h.trained);
    CHECK(h.auc > 0.5f);

    // separation oracle on validation images the head never saw
    ModelRunner r(fx.model);
    double mean_pos = 0.0, mean_neg = 0.0;
    int n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < fx.val.size(); i += 3) {
        float p = head_probability(h, r.extract("b4", fx.val.images[i]));
        CHECK(p > 0.0f);
        CHECK(p < 1.0f);
        if (fx.val.labels[i] == 3) { mean_pos += p; ++n_pos; }
        else { mean_neg += p; ++n_neg; }
    }
    CHECK(mean_pos / n_pos > mean_neg / n_neg);
}

TEST_CASE("head training is deterministic under seed") {
    auto& fx = fixture();
    HeadTrainConfig cfg = quick_cfg();
    cfg.iters = 30;
    AuxHead a = train_head(fx.cache, "b2", 1, cfg, 9);
    AuxHead b = train_head(fx.cache, "b2", 1, cfg, 9);
    AuxHead c = train_head(fx.cache, "b2", 1, cfg, 10);
    CHECK(a.auc == b.auc);
    bool identical = true, differs = false;
    for (const auto& [name, t] : a.params) {
        if (t.data != b.params.at(name).data) identical = false;
        if (t.data != c.params.at(name).data) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("binary_auc oracle") {
    // perfect separation
    CHECK(binary_auc({0.1f, 0.2f, 0.8f, 0.9f}, {0, 0, 1, 1}) == 1.0f);
    // perfect inversion
    CHECK(binary_auc({0.9f, 0.8f, 0.1f, 0.2f}, {0, 0, 1, 1}) == 0.0f);
    // all tied -> 0.5
    CHECK(binary_auc({0.5f, 0.5f, 0.5f, 0.5f}, {0, 1, 0, 1}) == 0.5f);
    // brute-force pair-counting oracle on random data
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> s(50);
    std::vector<int> y(50);
    for (int i = 0; i < 50; ++i) { s[i] = u(rng); y[i] = (i % 3 == 0) ? 1 : 0; }
    double wins = 0.0;
    int pairs = 0;
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
            if (!(y[i] == 1 && y[j] == 0)) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    CHECK(binary_auc(s, y) == doctest::Approx(wins / pairs).epsilon(1e-5));
    CHECK_THROWS_AS(binary_auc({0.5f}, {1}), Error);
}

TEST_CASE("train_bank cardinality, failures, and round-trip") {
    auto& fx = fixture();
    HeadTrainConfig cfg = quick_cfg();
    cfg.iters = 40;
    HeadBank bank = train_bank(fx.model, {"b2", "b4"}, {0, 1, 7}, fx.train, cfg, 21);
    CHECK(bank.heads.size() == 6);
    CHECK(bank.has("b4", 7));
    CHECK_FALSE(bank.has("b6", 7));
    CHECK_THROWS_WITH_AS(bank.at("b6", 7), doctest::Contains("(b6, 7)"), Error);
    for (const auto& f : bank.failures) CHECK(f.auc < cfg.auc_floor);

    HeadBank again = train_bank(fx.model, {"b2", "b4"}, {0, 1, 7}, fx.train, cfg, 21);
    for (const auto& [key, h] : bank.heads)
        CHECK(h.auc == again.at(key.first, key.second).auc);

    std::string dir = "/tmp/ftnet_test_bank";
    save_bank(bank, dir);
    HeadBank loaded = load_bank(dir, fx.model);
    REQUIRE(loaded.heads.size() == bank.heads.size());
    Tensor probe = fx.cache.by_tap.at("b4")[5];
    for (int c : {0, 1, 7})
        CHECK(head_probability(loaded.at("b4", c), probe) ==
              head_probability(bank.at("b4", c), probe));
    CHECK_THROWS_AS(train_bank(fx.model, {}, {0}, fx.train, cfg, 1), Error);
}
