#include <algorithm>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "ftnet/search.hpp"
#include "ftnet/synth.hpp"

using namespace ftnet;

namespace {

// Two small 4-class models over the A-split shapes, plus a full head bank.
// The second model plays the sandbox: same task, different weights.
struct Fixture {
    Dataset train, heldout;
    TapModel whitebox, sandbox;
    HeadBank bank;

    Fixture() {
        SynthConfig cfg;
        cfg.per_class = 40;
        Dataset base = make_shapes_dataset(cfg, "train");
        train = build_superclass_dataset(base, shapes_split_a());
        cfg.per_class = 15;
        cfg.seed = 2;
        Dataset base_val = make_shapes_dataset(cfg, "val");
        heldout = build_superclass_dataset(base_val, shapes_split_a());

        whitebox = build_model("plainnet-s", 4, 101);
        sandbox = build_model("plainnet-s", 4, 202);
        TrainConfig tc;
        tc.iters = 150;
        tc.batch_size = 32;
        tc.lr = 0.01f;
        tc.seed = 101;
        train_classifier(whitebox, train, tc);
        tc.seed = 202;
        train_classifier(sandbox, train, tc);

        HeadTrainConfig hc;
        hc.iters = 60;
        hc.auc_floor = 0.0f;  // keep every head; search quality is not under test
        bank = train_bank(whitebox, whitebox.tap_names, {0, 1, 2, 3}, train, hc,
                          7, 1);
    }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

SearchConfig small_cfg() {
    SearchConfig cfg;
    cfg.n_sources = 10;
    cfg.targets_per_source = 2;
    cfg.attack.iters = 8;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("greedy search picks the single best tap first") {
    auto& f = fx();
    SearchConfig cfg = small_cfg();
    SearchReport rep = greedy_search(f.whitebox, f.sandbox, f.bank, f.heldout, 2, cfg);

    REQUIRE(!rep.sequence.empty());
    REQUIRE(rep.sequence.size() == rep.prefix_tsuc.size());

    // Independent oracle: sweep every tap one at a time with the same probe
    // seed and take the first maximizer in tap order.
    std::string best_tap;
    float best = -1.0f;
    for (const auto& tap : f.whitebox.tap_names) {
        AttackConfig ac = cfg.attack;
        ac.layers = {tap};
        ac.lambda.clear();
        float t = heldout_tsuc(f.whitebox, f.sandbox, f.bank, f.heldout, ac, cfg);
        if (t > best) {
            best = t;
            best_tap = tap;
        }
    }
    CHECK(rep.sequence[0] == best_tap);
    CHECK(rep.prefix_tsuc[0] == doctest::Approx(best));
}

TEST_CASE("greedy search invariants: no repeats, non-decreasing prefix tSuc") {
    auto& f = fx();
    SearchConfig cfg = small_cfg();
    SearchReport rep = greedy_search(f.whitebox, f.sandbox, f.bank, f.heldout, 3, cfg);

    CHECK(rep.sequence.size() <= 3);
    std::set<std::string> uniq(rep.sequence.begin(), rep.sequence.end());
    CHECK(uniq.size() == rep.sequence.size());
    for (const auto& tap : rep.sequence)
        CHECK(std::find(f.whitebox.tap_names.begin(), f.whitebox.tap_names.end(),
                        tap) != f.whitebox.tap_names.end());
    for (std::size_t i = 1; i < rep.prefix_tsuc.size(); ++i)
        CHECK(rep.prefix_tsuc[i] > rep.prefix_tsuc[i - 1]);
    CHECK(rep.whitebox_id == "plainnet-s");
    CHECK(rep.sandbox_id == "plainnet-s");

    CHECK_THROWS_AS(
        greedy_search(f.whitebox, f.sandbox, f.bank, f.heldout, 0, cfg), Error);
}

TEST_CASE("line search returns singleton grid values unchanged") {
    auto& f = fx();
    SearchConfig cfg = small_cfg();
    cfg.attack.layers = {"b4"};
    cfg.attack.iters = 3;
    auto [eta, gamma] = line_search_hparams(f.whitebox, f.sandbox, f.bank,
                                            f.heldout, {3e-5f}, {2e-4f}, cfg);
    CHECK(eta == 3e-5f);
    CHECK(gamma == 2e-4f);

    CHECK_THROWS_AS(line_search_hparams(f.whitebox, f.sandbox, f.bank, f.heldout,
                                        {}, {1e-4f}, cfg),
                    Error);
}

TEST_CASE("line search ties break toward the smaller value") {
    auto& f = fx();
    SearchConfig cfg = small_cfg();
    cfg.attack.layers = {"b4"};
    cfg.attack.iters = 1;
    cfg.attack.epsilon = 0.0f;  // every setting scores 0: a guaranteed tie
    cfg.attack.step_size = 0.0f;
    auto [eta, gamma] = line_search_hparams(
        f.whitebox, f.sandbox, f.bank, f.heldout, {3e-5f, 1e-5f, 2e-5f},
        {5e-4f, 1e-4f}, cfg);
    CHECK(eta == 1e-5f);
    CHECK(gamma == 1e-4f);
}

TEST_CASE("probe pool rejects datasets with no doubly-correct samples") {
    auto& f = fx();
    Dataset shifted = f.heldout;
    // relabel every image away from the model's own prediction so nothing can
    // pass the correct-under-both filter, regardless of model accuracy
    ModelRunner wb(f.whitebox);
    for (std::size_t i = 0; i < shifted.size(); ++i)
        shifted.labels[i] = (wb.predict(shifted.images[i]) + 1) % 4;
    SearchConfig cfg = small_cfg();
    AttackConfig ac = cfg.attack;
    ac.layers = {"b4"};
    CHECK_THROWS_WITH_AS(
        heldout_tsuc(f.whitebox, f.whitebox, f.bank, shifted, ac, cfg),
        doctest::Contains("correctly-classified"), Error);
}

TEST_CASE("search report round-trips through disk") {
    SearchReport r;
    r.whitebox_id = "resnet-s";
    r.sandbox_id = "plainnet-s";
    r.sequence = {"b4", "b2", "b6"};
    r.prefix_tsuc = {0.25f, 0.3125f, 0.40625f};
    r.eta = 3e-5f;
    r.gamma = 1e-3f;
    const std::string path = "search_report_test.txt";
    save_report(r, path);
    SearchReport back = load_report(path);
    CHECK(back.whitebox_id == r.whitebox_id);
    CHECK(back.sandbox_id == r.sandbox_id);
    CHECK(back.sequence == r.sequence);
    REQUIRE(back.prefix_tsuc.size() == r.prefix_tsuc.size());
    for (std::size_t i = 0; i < r.prefix_tsuc.size(); ++i)
        CHECK(back.prefix_tsuc[i] == doctest::Approx(r.prefix_tsuc[i]).epsilon(1e-5));
    CHECK(back.eta == doctest::Approx(r.eta).epsilon(1e-5));
    CHECK(back.gamma == doctest::Approx(r.gamma).epsilon(1e-5));
    std::remove(path.c_str());

    std::FILE* fp = std::fopen(path.c_str(), "w");
    REQUIRE(fp);
    std::fputs("whitebox = resnet-s\nbogus_key = 3\n", fp);
    std::fclose(fp);
    CHECK_THROWS_WITH_AS(load_report(path), doctest::Contains("unknown key"), Error);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_report("no_such_report_file.txt"), Error);
}
