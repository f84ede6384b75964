// Evaluation report tests: accuracy and per-class accuracy against known
// predictors, margin statistics and violations re-derived independently,
// attention dumps, and multi-seed aggregation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "mipl/errors.hpp"
#include "mipl/evalsuite.hpp"
#include "mipl/rng.hpp"
#include "mipl/trainer.hpp"

using namespace mipl;

namespace {

data::Dataset gen(int m, int k, int d, std::uint64_t seed, int r = 1) {
    data::GenConfig cfg;
    cfg.m = m;
    cfg.k = k;
    cfg.d = d;
    cfg.n_min = 2;
    cfg.n_max = 5;
    cfg.r = r;
    cfg.seed = seed;
    return data::generate(cfg);
}

model::ModelParams zero_params(int d, int k) {
    model::ModelConfig mc;
    mc.embed_dim = 4;
    mc.attn_dim = 3;
    mc.hidden = {4};
    rng::Engine eng(1);
    auto p = model::ModelParams::init(mc, d, k, eng);
    for (Matrix* m : p.matrices()) m->fill(0.0);
    return p;
}

model::ModelParams random_params(int d, int k, std::uint64_t seed) {
    model::ModelConfig mc;
    mc.embed_dim = 5;
    mc.attn_dim = 3;
    mc.hidden = {5};
    rng::Engine eng(seed);
    return model::ModelParams::init(mc, d, k, eng);
}

} // namespace

TEST_CASE("constant predictor: accuracy equals the class-0 frequency") {
    auto ds = gen(40, 3, 4, 7);
    auto params = zero_params(4, 3);
    auto rep = evalsuite::evaluate(params, ds, 1.0);
    int zeros = 0;
    for (const auto& bag : ds.bags) zeros += *bag.true_label == 0 ? 1 : 0;
    CHECK(rep.n == 40);
    CHECK(rep.accuracy ==
          doctest::Approx(static_cast<double>(zeros) / 40).epsilon(1e-15));
    REQUIRE(rep.per_class.size() == 3);
    CHECK(rep.per_class[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rep.per_class[1] == 0.0);
    CHECK(rep.per_class[2] == 0.0);
}

TEST_CASE("an axis-reading classifier on singleton bags is perfect") {
    // Singleton bags, identity extractor, classifier column c = indicator of
    // axis c: the true-class coordinate carries the cluster offset, so argmax
    // recovers the label deterministically at high separation.
    data::GenConfig gc;
    gc.m = 60;
    gc.k = 3;
    gc.d = 5;
    gc.n_min = 1;
    gc.n_max = 1;
    gc.r = 1;
    gc.pos_min = 0.9;
    gc.pos_max = 1.0;
    gc.cluster_sep = 6.0;
    gc.seed = 21;
    auto ds = data::generate(gc);

    model::ModelParams p;
    p.input_dim = 5;
    p.num_classes = 3;
    p.cfg.identity_extractor = true;
    p.cfg.embed_dim = 5;
    p.cfg.attn_dim = 2;
    p.cfg.hidden.clear();
    p.attn_tanh_w = Matrix(5, 2, 0.1);
    p.attn_gate_w = Matrix(5, 2, 0.1);
    p.attn_score_w = Matrix(2, 1, 0.1);
    p.cls_weight = Matrix(5, 3, 0.0);
    for (int c = 0; c < 3; ++c) p.cls_weight.at(c, c) = 1.0;
    p.cls_bias = Matrix(3, 1, 0.0);

    auto rep = evalsuite::evaluate(p, ds, 1.0);
    CHECK(rep.accuracy == 1.0);
    for (int c = 0; c < 3; ++c)
        CHECK(rep.per_class[c] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rep.margin.violation_rate == 0.0);
    CHECK(rep.margin.mean_phi < 1.0);
}

TEST_CASE("margin statistics match an independent re-scan") {
    auto ds = gen(30, 4, 6, 13);
    auto params = random_params(6, 4, 5);
    const double tau = 1.3;
    auto rep = evalsuite::evaluate(params, ds, tau);

    int violations = 0, counted = 0;
    double sum_phi = 0.0;
    std::vector<double> phis;
    for (const auto& bag : ds.bags) {
        ad::Tape t;
        auto f = model::forward(t, model::bind(t, params), bag.instances, tau);
        const auto& probs = f.probs->value.data;
        if (bag.candidates.size() == static_cast<std::size_t>(ds.meta.k))
            continue;
        double best_c = -1.0, best_n = -1.0;
        for (int c = 0; c < ds.meta.k; ++c) {
            const bool is_cand = std::binary_search(bag.candidates.begin(),
                                                    bag.candidates.end(), c);
            if (is_cand)
                best_c = std::max(best_c, probs[c]);
            else
                best_n = std::max(best_n, probs[c]);
        }
        const double phi = 1.0 - (best_c - best_n);
        phis.push_back(phi);
        sum_phi += phi;
        if (best_n > best_c) ++violations;
        ++counted;
    }
    REQUIRE(counted == rep.margin.n_margin_bags);
    CHECK(std::abs(rep.margin.mean_phi - sum_phi / counted) <= 1e-12);
    CHECK(rep.margin.violation_rate ==
          doctest::Approx(static_cast<double>(violations) / counted)
              .epsilon(1e-15));
    double sq = 0.0;
    for (double phi : phis)
        sq += (phi - rep.margin.mean_phi) * (phi - rep.margin.mean_phi);
    CHECK(std::abs(rep.margin.std_phi - std::sqrt(sq / (counted - 1))) <= 1e-12);
}

TEST_CASE("bags whose candidates cover every label are excluded from margins") {
    auto ds = gen(10, 2, 3, 3, 0); // k=2, r=0: singleton candidates
    ds.bags[0].candidates = {0, 1}; // cover all labels
    if (*ds.bags[0].true_label != 0) ds.bags[0].true_label = 1;
    auto params = random_params(3, 2, 5);
    auto rep = evalsuite::evaluate(params, ds, 1.0);
    CHECK(rep.margin.n_margin_bags == 9);
    CHECK(rep.n == 10);
}

TEST_CASE("evaluation requires labels everywhere") {
    auto ds = gen(5, 3, 4, 2);
    ds.bags[3].true_label.reset();
    auto params = random_params(4, 3, 5);
    CHECK_THROWS_AS(evalsuite::evaluate(params, ds, 1.0), contract_error);
}

TEST_CASE("attention dump lines mirror the dataset") {
    auto ds = gen(12, 3, 4, 17);
    auto params = random_params(4, 3, 6);
    const std::string path = "/tmp/mipl_eval_test_attn.jsonl";
    evalsuite::dump_attention(params, ds, 1.1, path);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    int count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        const auto& bag = ds.bags[count];
        CHECK(j.at("id").get<std::string>() == bag.id);
        REQUIRE(j.at("raw").size() == static_cast<std::size_t>(bag.n()));
        REQUIRE(j.at("norm").size() == static_cast<std::size_t>(bag.n()));
        // Raw scores form a distribution.
        double sum = 0.0;
        for (double v : j.at("raw").get<std::vector<double>>()) sum += v;
        CHECK(std::abs(sum - 1.0) <= 1e-10);
        REQUIRE(j.contains("positive_mask"));
        REQUIRE(j.contains("separation"));
        if (!j.at("separation").is_null()) {
            // separation = min over positives - max over negatives of raw.
            auto raw = j.at("raw").get<std::vector<double>>();
            auto mask = j.at("positive_mask").get<std::vector<int>>();
            double min_pos = 1e300, max_neg = -1e300;
            bool has_pos = false, has_neg = false;
            for (std::size_t i = 0; i < raw.size(); ++i) {
                if (mask[i]) {
                    min_pos = std::min(min_pos, raw[i]);
                    has_pos = true;
                } else {
                    max_neg = std::max(max_neg, raw[i]);
                    has_neg = true;
                }
            }
            REQUIRE(has_pos);
            REQUIRE(has_neg);
            CHECK(std::abs(j.at("separation").get<double>() -
                           (min_pos - max_neg)) <= 1e-12);
        }
        ++count;
    }
    CHECK(count == 12);

    // Unlabeled data still dumps attention (no labels required).
    auto unlabeled = ds;
    for (auto& bag : unlabeled.bags) {
        bag.true_label.reset();
        bag.positive_mask.clear();
    }
    evalsuite::dump_attention(params, unlabeled, 1.1, path);
    std::ifstream in2(path);
    std::getline(in2, line);
    auto j2 = nlohmann::json::parse(line);
    CHECK_FALSE(j2.contains("positive_mask"));
    // Without generator flags there is nothing to separate: the key is
    // omitted rather than written as null.
    CHECK_FALSE(j2.contains("separation"));
    std::remove(path.c_str());
}

TEST_CASE("multi_seed aggregates metrics with mean and sample deviation") {
    auto runner = [](std::uint64_t seed) {
        std::map<std::string, double> m;
        m["acc"] = seed == 1 ? 0.9 : 1.0;
        m["phi"] = 0.5;
        return m;
    };
    auto stats = evalsuite::multi_seed(runner, {1, 2});
    REQUIRE(stats.count("acc") == 1);
    CHECK(stats["acc"].mean == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(stats["acc"].stddev ==
          doctest::Approx(std::sqrt(0.005)).epsilon(1e-12));
    CHECK(stats["phi"].mean == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(stats["phi"].stddev == 0.0);

    auto single = evalsuite::multi_seed(runner, {7});
    CHECK(single["acc"].stddev == 0.0);

    CHECK_THROWS_AS(evalsuite::multi_seed(runner, {}), config_error);

    // Runs disagreeing on metric names are a contract violation.
    int call = 0;
    auto flaky = [&call](std::uint64_t) {
        std::map<std::string, double> m;
        m[call++ == 0 ? "a" : "b"] = 1.0;
        return m;
    };
    CHECK_THROWS_AS(evalsuite::multi_seed(flaky, {1, 2}), contract_error);
}
