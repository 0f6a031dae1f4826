#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ftnet/attack.hpp"
#include "ftnet/eval.hpp"
#include "ftnet/synth.hpp"

using namespace ftnet;

namespace {

struct Fixture {
    Dataset train, val;            // base 10-class shapes
    Dataset train_c, val_c;        // 5-superclass relabeling (split C)
    TapModel plain10, res10;       // base-label models
    TapModel super5;               // superclass-label model
    HeadBank bank;                 // plain10, taps b2/b4/b6, class 3

    Fixture() {
        SynthConfig cfg;
        cfg.per_class = 40;
        train = make_shapes_dataset(cfg, "train");
        cfg.per_class = 12;
        cfg.seed = 2;
        val = make_shapes_dataset(cfg, "val");
        train_c = build_superclass_dataset(train, shapes_split_c());
        val_c = build_superclass_dataset(val, shapes_split_c());

        plain10 = build_model("plainnet-s", 10, 41);
        res10 = build_model("resnet-s", 10, 42);
        super5 = build_model("plainnet-s", 5, 43);
        TrainConfig tc;
        tc.iters = 150;
        tc.batch_size = 32;
        tc.lr = 0.01f;
        tc.seed = 41;
        train_classifier(plain10, train, tc);
        tc.seed = 42;
        train_classifier(res10, train, tc);
        tc.seed = 43;
        train_classifier(super5, train_c, tc);

        HeadTrainConfig hc;
        hc.iters = 60;
        hc.auc_floor = 0.0f;
        bank = train_bank(plain10, {"b2", "b4", "b6"}, {3}, train, hc, 9, 1);
    }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

// Leaves the image untouched: a floor every metric must read as zero.
AttackFn identity_attack() {
    return [](const Tensor& x, int) {
        AttackResult r;
        r.delta = Tensor(x.shape);
        r.adversarial = x;
        return r;
    };
}

}  // namespace

TEST_CASE("scenario rules map labels through splits and shared names") {
    ScenarioRule std_rule = standard_rule();
    CHECK(std_rule.map_whitebox(7) == 7);
    CHECK(std_rule.map_blackbox(7) == 7);

    ScenarioRule s1 = scenario1_rule(shapes_split_a(), shapes_split_b());
    // whitebox space is split A: disk=0, square=1, plus=2, hstripe=3
    CHECK(s1.map_whitebox(0) == 0);
    CHECK(s1.map_whitebox(4) == 2);
    CHECK(s1.map_whitebox(1) == -1);  // base class 1 belongs to split B only
    // blackbox expectation bridges through the shared superclass name
    CHECK(s1.map_blackbox(0) == 0);   // A's disk -> B's disk
    CHECK(s1.map_blackbox(2) == 1);   // A's square -> B's square
    CHECK(s1.map_blackbox(6) == -1);  // hstripe has no peer in B
    CHECK_THROWS_AS(scenario1_rule(shapes_split_a(), shapes_split_a()), Error);

    ScenarioRule s3 = scenario3_rule(shapes_split_c());
    CHECK(s3.map_whitebox(5) == 2);
    CHECK(s3.map_blackbox(5) == 5);
    // success set of superclass 2 (plus) is its components {4, 5}
    CHECK(rule_tsuc(s3, EvalTarget{2, 2}, 4));
    CHECK(rule_tsuc(s3, EvalTarget{2, 2}, 5));
    CHECK_FALSE(rule_tsuc(s3, EvalTarget{2, 2}, 6));
    EvalPair p;
    p.y_src_wb = 0;  // disk superclass, components {0, 1}
    p.y_src_bb = 1;
    CHECK_FALSE(rule_error(s3, p, 0));
    CHECK_FALSE(rule_error(s3, p, 1));
    CHECK(rule_error(s3, p, 2));
}

TEST_CASE("binomial CI matches the closed form") {
    CHECK(binomial_ci95(0.5f, 100) == doctest::Approx(1.96f * 0.05f));
    CHECK(binomial_ci95(0.0f, 50) == 0.0f);
    CHECK(binomial_ci95(0.3f, 0) == 0.0f);
    CHECK(binomial_ci95(0.2f, 25) ==
          doctest::Approx(1.96f * std::sqrt(0.2f * 0.8f / 25.0f)));
}

TEST_CASE("select_pairs draws doubly-correct sources with admissible targets") {
    auto& f = fx();
    auto pairs = select_pairs(f.plain10, f.res10, f.val, 5, 3, 11, standard_rule());
    CHECK(pairs.size() == 5);
    ModelRunner wb(f.plain10), bb(f.res10);
    for (const auto& p : pairs) {
        CHECK(p.y_src_wb == f.val.labels[p.image_index]);
        CHECK(p.y_src_bb == p.y_src_wb);
        CHECK(wb.predict(f.val.images[p.image_index]) == p.y_src_wb);
        CHECK(bb.predict(f.val.images[p.image_index]) == p.y_src_bb);
        CHECK(p.targets.size() == 3);
        for (const auto& t : p.targets) {
            CHECK(t.wb_label != p.y_src_wb);
            CHECK(t.bb_label == t.wb_label);
        }
    }
    // deterministic under seed
    auto again = select_pairs(f.plain10, f.res10, f.val, 5, 3, 11, standard_rule());
    REQUIRE(again.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        CHECK(again[i].image_index == pairs[i].image_index);
}

TEST_CASE("scenario 2 targets a superclass through one of its components") {
    auto& f = fx();
    ScenarioRule rule = scenario2_rule(shapes_split_c());
    auto pairs = select_pairs(f.plain10, f.super5, f.val, 4, 3, 13, rule);
    CHECK(pairs.size() == 4);
    const auto split = shapes_split_c();
    for (const auto& p : pairs) {
        CHECK(p.y_src_wb == f.val.labels[p.image_index]);
        CHECK(p.y_src_bb == p.y_src_wb / 2);  // split C pairs adjacent classes
        for (const auto& t : p.targets) {
            CHECK(t.bb_label != p.y_src_bb);
            const auto& comps = split.classes[t.bb_label].component_ids;
            CHECK(std::find(comps.begin(), comps.end(), t.wb_label) != comps.end());
        }
    }
}

TEST_CASE("identity attack scores zero error and zero targeted success") {
    auto& f = fx();
    auto pairs = select_pairs(f.plain10, f.res10, f.val, 5, 3, 11, standard_rule());
    TransferReport rep = transfer_evaluate(pairs, identity_attack(), f.val,
                                           f.res10, standard_rule(),
                                           16.0f / 255.0f, 1);
    CHECK(rep.n == 15);
    CHECK(rep.records.size() == 15);
    CHECK(rep.error == 0.0f);
    CHECK(rep.tsuc == 0.0f);
    CHECK(rep.error_ci95 == 0.0f);
    CHECK(rep.iterations_logged == 0);
    CHECK(rep.constraint_violations == 0);
}

TEST_CASE("identity attack under scenario 3 also reads zero") {
    auto& f = fx();
    ScenarioRule rule = scenario3_rule(shapes_split_c());
    auto pairs = select_pairs(f.super5, f.plain10, f.val, 4, 2, 17, rule);
    TransferReport rep = transfer_evaluate(pairs, identity_attack(), f.val,
                                           f.plain10, rule, 16.0f / 255.0f, 1);
    CHECK(rep.n == 8);
    CHECK(rep.error == 0.0f);
    CHECK(rep.tsuc == 0.0f);
}

TEST_CASE("real attack: tSuc never exceeds error, constraints audited") {
    auto& f = fx();
    auto pairs = select_pairs(f.plain10, f.res10, f.val, 5, 2, 19, standard_rule());
    AttackConfig ac;
    ac.iters = 5;
    AttackFn fn = [&](const Tensor& x, int y_tgt) {
        return tmim_attack(f.plain10, x, y_tgt, ac);
    };
    TransferReport rep = transfer_evaluate(pairs, fn, f.val, f.res10,
                                           standard_rule(), ac.epsilon, 1);
    CHECK(rep.n == 10);
    CHECK(rep.tsuc <= rep.error);
    CHECK(rep.iterations_logged == 10 * 5);
    CHECK(rep.constraint_violations == 0);
    for (const auto& r : rep.records) CHECK(r.attack_ok);
    // an attack that always throws is excluded from the denominator
    AttackFn broken = [](const Tensor&, int) -> AttackResult {
        throw Error("synthetic failure");
    };
    TransferReport bad = transfer_evaluate(pairs, broken, f.val, f.res10,
                                           standard_rule(), ac.epsilon, 1);
    CHECK(bad.n == 0);
    for (const auto& r : bad.records) {
        CHECK_FALSE(r.attack_ok);
        CHECK(r.error_msg == "synthetic failure");
    }
}

TEST_CASE("disruption profile: zero perturbation reads zero at every tap") {
    auto& f = fx();
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (int i = 0; i < 4; ++i)
        pairs.emplace_back(f.val.images[i], f.val.images[i]);
    DisruptionProfile prof = disruption_profile(f.plain10, f.bank, pairs, 3);
    REQUIRE(prof.tap_names == std::vector<std::string>{"b2", "b4", "b6"});
    for (float d : prof.disruption) CHECK(d == 0.0f);

    AttackConfig ac;
    ac.iters = 5;
    std::vector<std::pair<Tensor, Tensor>> adv_pairs;
    for (int i = 0; i < 4; ++i) {
        AttackResult r = tmim_attack(f.plain10, f.val.images[i], 3, ac);
        adv_pairs.emplace_back(f.val.images[i], r.adversarial);
    }
    DisruptionProfile moved = disruption_profile(f.plain10, f.bank, adv_pairs, 3);
    for (float d : moved.disruption) {
        CHECK(d >= -1.0f);
        CHECK(d <= 1.0f);
    }
}

TEST_CASE("report CSV round-trips exactly") {
    std::vector<ReportRow> rows(2);
    rows[0] = {"standard", "resnet-s", "plainnet-s", "fda+xent", "b2;b4",
               1e-5f, 1e-4f, 16.0f / 255.0f, 10, 1500,
               0.8125f, 0.0213f, 0.415f, 0.025f, 77};
    rows[1] = {"scenario2", "plainnet-s", "plainnet-s", "tmim", "",
               0.0f, 0.0f, 16.0f / 255.0f, 10, 600,
               0.5f, 0.04f, 0.1f, 0.024f, 78};
    const std::string path = "eval_report_test.csv";
    write_report_csv(rows, path);
    auto back = read_report_csv(path);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].scenario == rows[i].scenario);
        CHECK(back[i].whitebox == rows[i].whitebox);
        CHECK(back[i].blackbox == rows[i].blackbox);
        CHECK(back[i].attack == rows[i].attack);
        CHECK(back[i].layers == rows[i].layers);
        CHECK(back[i].eta == rows[i].eta);
        CHECK(back[i].gamma == rows[i].gamma);
        CHECK(back[i].epsilon == rows[i].epsilon);
        CHECK(back[i].iters == rows[i].iters);
        CHECK(back[i].n == rows[i].n);
        CHECK(back[i].error == rows[i].error);
        CHECK(back[i].tsuc == rows[i].tsuc);
        CHECK(back[i].seed == rows[i].seed);
    }
    std::remove(path.c_str());

    ReportRow bad = rows[0];
    bad.layers = "b2,b4";
    CHECK_THROWS_WITH_AS(write_report_csv({bad}, path),
                         doctest::Contains("must not contain commas"), Error);

    std::ofstream out(path);
    out << "not,a,report,header\n";
    out.close();
    CHECK_THROWS_WITH_AS(read_report_csv(path), doctest::Contains("header"), Error);
    std::remove(path.c_str());
}

TEST_CASE("SVG output is structurally well formed") {
    const std::string bars = "eval_bars_test.svg";
    const std::string lines = "eval_lines_test.svg";
    write_svg_bars({"b1", "b2 & b3"}, {0.5f, -0.25f}, "disruption <test>", bars);
    write_svg_lines({"fda", "tmim"}, {{0, 50, 100}, {0, 50, 100}},
                    {{0.1f, 0.3f, 0.4f}, {0.05f, 0.1f, 0.2f}}, "budgets", lines);
    for (const std::string& path : {bars, lines}) {
        std::ifstream in(path);
        REQUIRE(in.good());
        std::stringstream ss;
        ss << in.rdbuf();
        std::string s = ss.str();
        CHECK(s.rfind("<?xml", 0) == 0);
        CHECK(s.find("<svg") != std::string::npos);
        CHECK(s.find("</svg>") != std::string::npos);
        // raw metacharacters from user strings must have been escaped
        CHECK(s.find("b2 & b3") == std::string::npos);
        bool escaped_or_absent = s.find("&amp;") != std::string::npos || path == lines;
        CHECK(escaped_or_absent);
        CHECK(s.find("disruption <test>") == std::string::npos);
        // every quote opened in an attribute is closed
        CHECK(std::count(s.begin(), s.end(), '"') % 2 == 0);
        std::remove(path.c_str());
    }
    CHECK_THROWS_AS(write_svg_bars({"a"}, {1.0f, 2.0f}, "t", bars), Error);
}
