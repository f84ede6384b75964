// Training loop tests: config validation, cosine schedule, a hand-stepped
// optimizer, the zero-learning-rate fixed point, temperature trajectory,
// bitwise determinism, mode adapters, prediction tie-breaks, and the
// hyperparameter sweep machinery.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "mipl/errors.hpp"
#include "mipl/rng.hpp"
#include "mipl/trainer.hpp"

using namespace mipl;

namespace {

data::Dataset tiny_dataset(int m = 12, std::uint64_t seed = 3) {
    data::GenConfig cfg;
    cfg.m = m;
    cfg.k = 2;
    cfg.d = 3;
    cfg.n_min = 1;
    cfg.n_max = 3;
    cfg.r = 0;
    cfg.seed = seed;
    return data::generate(cfg);
}

data::Dataset tiny_mipl(int m = 12, std::uint64_t seed = 4) {
    data::GenConfig cfg;
    cfg.m = m;
    cfg.k = 3;
    cfg.d = 4;
    cfg.n_min = 2;
    cfg.n_max = 4;
    cfg.r = 1;
    cfg.seed = seed;
    return data::generate(cfg);
}

trainer::TrainConfig tiny_config(int epochs = 3) {
    trainer::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.model.embed_dim = 6;
    cfg.model.attn_dim = 4;
    cfg.model.hidden = {6};
    cfg.seed = 11;
    return cfg;
}

bool same_params(const model::ModelParams& a, const model::ModelParams& b) {
    auto ma = a.matrices();
    auto mb = b.matrices();
    if (ma.size() != mb.size()) return false;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        if (!ma[i]->same_shape(*mb[i])) return false;
        if (ma[i]->data != mb[i]->data) return false;
    }
    return true;
}

} // namespace

TEST_CASE("train rejects invalid configurations") {
    auto ds = tiny_mipl();
    auto cfg = tiny_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.lr0 = -0.1;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.momentum = -0.1;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.weight_decay = -1.0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.tau0 = 0.05; // below the floor
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.tau_min = 0.0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.tau_decay = 0.0;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.tau_decay = 1.5;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    cfg = tiny_config();
    cfg.eval_every = -1;
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
}

TEST_CASE("margin training rejects bags whose candidates cover every label") {
    auto ds = tiny_mipl();
    ds.bags[0].candidates = {0, 1, 2}; // k = 3
    auto cfg = tiny_config();
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
    // With the margin term off the same data is acceptable.
    cfg.margin = losses::MarginVariant::off;
    CHECK_NOTHROW(trainer::train(cfg, ds));
}

TEST_CASE("cosine learning rate decays from lr0 to zero over T epochs") {
    const double lr0 = 0.4;
    const int T = 10;
    double prev = lr0 + 1e-9;
    for (int t = 1; t <= T; ++t) {
        const double lr = trainer::cosine_lr(lr0, t, T);
        const double want =
            lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / T));
        CHECK(lr == doctest::Approx(want).epsilon(1e-15));
        CHECK(lr < prev);
        prev = lr;
    }
    CHECK(trainer::cosine_lr(lr0, T, T) <= 1e-17); // final epoch: lr = 0
    CHECK(trainer::cosine_lr(lr0, 5, 10) == doctest::Approx(lr0 / 2).epsilon(1e-15));
}

TEST_CASE("momentum optimizer follows the hand-stepped recurrence") {
    // v <- mu*v + (g + wd*p); p <- p - lr*v, with mu=0.9, wd=0.1, lr=0.5.
    Matrix p = Matrix::from(1, 2, {1.0, 2.0});
    Matrix g1 = Matrix::from(1, 2, {0.1, -0.2});
    trainer::SgdMomentum opt(0.9, 0.1);
    opt.step({&p}, {&g1}, 0.5);
    // v = (0.1 + 0.1, -0.2 + 0.2) = (0.2, 0.0); p = (0.9, 2.0).
    CHECK(p.data[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(p.data[1] == doctest::Approx(2.0).epsilon(1e-15));

    Matrix g2 = Matrix::from(1, 2, {0.0, 0.0});
    opt.step({&p}, {&g2}, 0.5);
    // v = 0.9*(0.2,0) + (0 + 0.1*(0.9,2.0)) = (0.27, 0.2); p = (0.765, 1.9).
    CHECK(p.data[0] == doctest::Approx(0.765).epsilon(1e-12));
    CHECK(p.data[1] == doctest::Approx(1.9).epsilon(1e-12));

    Matrix wrong(2, 2, 0.0);
    CHECK_THROWS_AS(opt.step({&p}, {&wrong}, 0.1), dim_error);
}

TEST_CASE("zero learning rate leaves parameters at initialization") {
    auto ds = tiny_mipl();
    auto cfg = tiny_config(1);
    cfg.lr0 = 0.0;
    cfg.lambda = 0.0;
    auto res = trainer::train(cfg, ds);
    auto init = trainer::initial_params(cfg, ds);
    CHECK(same_params(res.params, init));

    // The weights were still updated once, with alpha = (T-1)/T = 0 at t=T=1:
    // each bag's weights equal its renormalized candidate probabilities under
    // the initial parameters at the epoch-1 temperature.
    const double tau1 = std::max(cfg.tau_min, cfg.tau0 * cfg.tau_decay);
    CHECK(res.schedule.current == doctest::Approx(tau1).epsilon(1e-15));
    for (const auto& bag : ds.bags) {
        ad::Tape t;
        auto f = model::forward(t, model::bind(t, init), bag.instances, tau1);
        double mass = 0.0;
        for (int c : bag.candidates) mass += f.probs->value.data[c];
        const auto& w = res.weights.of(bag.id);
        for (int c = 0; c < 3; ++c) {
            const bool is_cand =
                std::find(bag.candidates.begin(), bag.candidates.end(), c) !=
                bag.candidates.end();
            if (is_cand)
                CHECK(std::abs(w[c] - f.probs->value.data[c] / mass) <= 1e-12);
            else
                CHECK(w[c] == 0.0);
        }
    }
}

TEST_CASE("temperature trajectory follows the annealing recurrence exactly") {
    auto ds = tiny_dataset(6);
    auto cfg = tiny_config(100);
    cfg.mode = trainer::Mode::mil; // fastest path, margin off
    cfg.model.embed_dim = 3;
    cfg.model.attn_dim = 2;
    cfg.model.hidden = {};
    auto res = trainer::train(cfg, ds);
    REQUIRE(res.report.size() == 100);

    model::TemperatureSchedule ref{cfg.tau0, cfg.tau_min, cfg.tau_decay, cfg.tau0};
    for (int t = 1; t <= 100; ++t) {
        ref.anneal();
        CHECK(res.report[t - 1].tau == ref.current); // bitwise
        CHECK(res.report[t - 1].epoch == t);
        CHECK(res.report[t - 1].lr ==
              doctest::Approx(trainer::cosine_lr(cfg.lr0, t, 100)).epsilon(1e-15));
    }
    // Floor reached at epoch 77 for tau0=5, decay=0.95, floor=0.1.
    CHECK(res.report[75].tau > 0.1);
    CHECK(res.report[76].tau == 0.1);
    CHECK(res.report[99].tau == 0.1);
    CHECK(res.schedule.current == 0.1);
}

TEST_CASE("training is bitwise deterministic under the seed") {
    auto ds = tiny_mipl();
    auto cfg = tiny_config(3);
    auto r1 = trainer::train(cfg, ds);
    auto r2 = trainer::train(cfg, ds);
    CHECK(same_params(r1.params, r2.params));
    REQUIRE(r1.report.size() == r2.report.size());
    for (std::size_t i = 0; i < r1.report.size(); ++i) {
        CHECK(r1.report[i].loss == r2.report[i].loss);
        CHECK(r1.report[i].loss_d == r2.report[i].loss_d);
        CHECK(r1.report[i].loss_m == r2.report[i].loss_m);
        CHECK(r1.report[i].tau == r2.report[i].tau);
        CHECK(r1.report[i].lr == r2.report[i].lr);
    }
    for (const auto& bag : ds.bags)
        CHECK(r1.weights.of(bag.id) == r2.weights.of(bag.id));

    cfg.seed = 12;
    auto r3 = trainer::train(cfg, ds);
    CHECK_FALSE(same_params(r1.params, r3.params));
}

TEST_CASE("mil adapter pins candidates to the true label") {
    auto ds = tiny_mipl();
    auto mil = trainer::mil_adapt(ds);
    for (int i = 0; i < ds.size(); ++i) {
        REQUIRE(mil.bags[i].candidates.size() == 1);
        CHECK(mil.bags[i].candidates[0] == *ds.bags[i].true_label);
    }
    data::Dataset unlabeled = ds;
    unlabeled.bags[2].true_label.reset();
    CHECK_THROWS_AS(trainer::mil_adapt(unlabeled), config_error);
}

TEST_CASE("mil training keeps one-hot weights fixed") {
    auto ds = trainer::mil_adapt(tiny_mipl());
    auto cfg = tiny_config(3);
    cfg.mode = trainer::Mode::mil;
    auto res = trainer::train(cfg, ds);
    for (const auto& bag : ds.bags) {
        const auto& w = res.weights.of(bag.id);
        for (int c = 0; c < 3; ++c)
            CHECK(w[c] == (c == bag.candidates[0] ? 1.0 : 0.0));
    }
    // Margin entries in the report are zero: the term is forced off.
    for (const auto& rec : res.report) CHECK(rec.loss_m == 0.0);

    // mil mode rejects non-singleton candidate sets.
    cfg = tiny_config(1);
    cfg.mode = trainer::Mode::mil;
    CHECK_THROWS_AS(trainer::train(cfg, tiny_mipl()), config_error);
}

TEST_CASE("pll mode accepts only singleton bags") {
    auto bags = tiny_mipl();
    CHECK_THROWS_AS(trainer::check_pll(bags), config_error);

    auto singles = data::degrade_dataset(bags, data::Degrade::mean);
    CHECK_NOTHROW(trainer::check_pll(singles));
    auto cfg = tiny_config(2);
    cfg.mode = trainer::Mode::pll;
    CHECK_NOTHROW(trainer::train(cfg, singles));
    CHECK_THROWS_AS(trainer::train(cfg, bags), config_error);
}

TEST_CASE("mipl training rejects a true label outside the candidate set") {
    auto ds = tiny_mipl();
    ds.bags[0].true_label = ds.bags[0].candidates.back() == 2 ? 0 : 2;
    // Force the label off the candidate set.
    while (std::binary_search(ds.bags[0].candidates.begin(),
                              ds.bags[0].candidates.end(),
                              *ds.bags[0].true_label))
        *ds.bags[0].true_label = (*ds.bags[0].true_label + 1) % 3;
    auto cfg = tiny_config(1);
    CHECK_THROWS_AS(trainer::train(cfg, ds), config_error);
}

TEST_CASE("prediction breaks probability ties toward the lowest class") {
    // All-zero parameters give exactly uniform probabilities for any bag.
    model::ModelConfig mc;
    mc.embed_dim = 4;
    mc.attn_dim = 3;
    mc.hidden = {4};
    rng::Engine eng(1);
    auto params = model::ModelParams::init(mc, 3, 4, eng);
    for (Matrix* m : params.matrices()) m->fill(0.0);

    auto ds = tiny_dataset(6);
    for (const auto& bag : ds.bags)
        CHECK(trainer::predict(params, bag, 1.0) == 0);
}

TEST_CASE("after_batch hook sees every batch and live weight invariants") {
    auto ds = tiny_mipl(10);
    auto cfg = tiny_config(4);
    cfg.batch_size = 8; // 10 bags -> batches of 8 and 2
    int calls = 0;
    int max_batch = -1;
    trainer::TrainHooks hooks;
    hooks.after_batch = [&](int epoch, int batch,
                            const losses::DisambiguationWeights& w) {
        ++calls;
        max_batch = std::max(max_batch, batch);
        CHECK(epoch >= 1);
        CHECK(epoch <= 4);
        for (const auto& bag : ds.bags) {
            const auto& row = w.of(bag.id);
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                const bool is_cand =
                    std::binary_search(bag.candidates.begin(),
                                       bag.candidates.end(), c);
                if (!is_cand) CHECK(row[c] == 0.0);
                sum += row[c];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-10);
        }
    };
    auto res = trainer::train(cfg, ds, nullptr, &hooks);
    CHECK(calls == 4 * 2); // ceil(10/8) = 2 batches per epoch
    CHECK(max_batch == 1); // 0-based batch index
    CHECK(res.report.size() == 4);
}

TEST_CASE("test accuracy is reported at the requested cadence") {
    auto ds = tiny_mipl(10);
    auto test = tiny_mipl(6, 99);
    auto cfg = tiny_config(5);
    cfg.eval_every = 2;
    auto res = trainer::train(cfg, ds, &test);
    REQUIRE(res.report.size() == 5);
    CHECK_FALSE(res.report[0].test_acc.has_value());
    CHECK(res.report[1].test_acc.has_value());
    CHECK_FALSE(res.report[2].test_acc.has_value());
    CHECK(res.report[3].test_acc.has_value());
    CHECK(res.report[4].test_acc.has_value()); // final epoch always

    // Without a test set nothing is reported.
    auto res2 = trainer::train(cfg, ds);
    for (const auto& rec : res2.report) CHECK_FALSE(rec.test_acc.has_value());

    // Mismatched test dimensions are rejected.
    auto bad = tiny_dataset(4);
    CHECK_THROWS_AS(trainer::train(cfg, ds, &bad), config_error);
}

TEST_CASE("accuracy agrees between the parallel scorer and a serial loop") {
    auto ds = tiny_mipl(20);
    auto cfg = tiny_config(2);
    auto res = trainer::train(cfg, ds);
    const double acc = trainer::accuracy(res.params, ds, res.schedule.current);
    int hits = 0;
    for (const auto& bag : ds.bags)
        if (trainer::predict(res.params, bag, res.schedule.current) ==
            *bag.true_label)
            ++hits;
    CHECK(acc == doctest::Approx(static_cast<double>(hits) / ds.size())
                     .epsilon(1e-15));
}

TEST_CASE("sweep grids values by seeds and aggregates per row") {
    auto ds = tiny_mipl(14);
    auto cfg = tiny_config(2);
    auto rows = trainer::sweep(cfg, trainer::SweepParam::lambda, {0.1, 1.0},
                               {1, 2, 3}, ds, 0.7, 1);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        REQUIRE(row.cells.size() == 3);
        double sum = 0.0;
        int n_ok = 0;
        for (const auto& cell : row.cells) {
            CHECK(cell.error.empty());
            REQUIRE(cell.accuracy.has_value());
            sum += *cell.accuracy;
            ++n_ok;
        }
        CHECK(row.mean_acc == doctest::Approx(sum / n_ok).epsilon(1e-12));
        double sq = 0.0;
        for (const auto& cell : row.cells)
            sq += (*cell.accuracy - row.mean_acc) * (*cell.accuracy - row.mean_acc);
        CHECK(row.std_acc ==
              doctest::Approx(std::sqrt(sq / (n_ok - 1))).epsilon(1e-12));
    }
    CHECK(rows[0].value == 0.1);
    CHECK(rows[1].value == 1.0);

    // Parallel execution returns identical numbers.
    auto rows_par = trainer::sweep(cfg, trainer::SweepParam::lambda, {0.1, 1.0},
                                   {1, 2, 3}, ds, 0.7, 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].mean_acc == rows_par[i].mean_acc);
        CHECK(rows[i].std_acc == rows_par[i].std_acc);
        for (std::size_t j = 0; j < rows[i].cells.size(); ++j)
            CHECK(*rows[i].cells[j].accuracy == *rows_par[i].cells[j].accuracy);
    }

    // A bad value is recorded per cell, not fatal for the rest of the grid.
    auto rows_bad = trainer::sweep(cfg, trainer::SweepParam::lambda, {-1.0, 1.0},
                                   {1, 2}, ds, 0.7, 1);
    REQUIRE(rows_bad.size() == 2);
    for (const auto& cell : rows_bad[0].cells) {
        CHECK_FALSE(cell.accuracy.has_value());
        CHECK_FALSE(cell.error.empty());
    }
    for (const auto& cell : rows_bad[1].cells) CHECK(cell.error.empty());

    CHECK_THROWS_AS(trainer::sweep(cfg, trainer::SweepParam::lambda, {},
                                   {1}, ds, 0.7, 1),
                    config_error);
    CHECK_THROWS_AS(trainer::sweep(cfg, trainer::SweepParam::lambda, {1.0}, {},
                                   ds, 0.7, 1),
                    config_error);
}

TEST_CASE("sweep over tau0 exercises the temperature grid") {
    auto ds = tiny_mipl(10);
    auto cfg = tiny_config(2);
    auto rows = trainer::sweep(cfg, trainer::SweepParam::tau0, {1.0, 5.0},
                               {1, 2}, ds, 0.7, 2);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows)
        for (const auto& cell : row.cells) CHECK(cell.error.empty());
}
