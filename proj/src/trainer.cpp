#include "mipl/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "mipl/errors.hpp"
#include "mipl/rng.hpp"

namespace mipl::trainer {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;    // "init"
constexpr std::uint64_t kShuffleStream = 0x73687566ULL; // "shuf"

void check_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (cfg.lr0 < 0.0) throw config_error("train: lr0 must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
        throw config_error("train: momentum must lie in [0, 1)");
    if (cfg.weight_decay < 0.0) throw config_error("train: weight_decay must be >= 0");
    if (cfg.lambda < 0.0) throw config_error("train: lambda must be >= 0");
    if (!(cfg.tau_min > 0.0)) throw config_error("train: tau_min must be positive");
    if (!(cfg.tau0 >= cfg.tau_min))
        throw config_error("train: tau0 must be >= tau_min");
    if (!(cfg.tau_decay > 0.0 && cfg.tau_decay <= 1.0))
        throw config_error("train: tau_decay must lie in (0, 1]");
    if (cfg.eval_every < 0) throw config_error("train: eval_every must be >= 0");
}

void check_mode(const TrainConfig& cfg, const data::Dataset& ds) {
    data::validate_dataset(ds);
    if (ds.bags.empty()) throw config_error("train: empty training set");
    // A candidate set covering every label has no margin; reject it up front
    // rather than aborting mid-epoch when the margin term is evaluated (it is
    // computed for reporting even at lambda = 0).
    const bool margin_on = cfg.mode != Mode::mil &&
                           cfg.margin != losses::MarginVariant::off;
    for (const data::Bag& bag : ds.bags) {
        if (margin_on &&
            bag.candidates.size() == static_cast<std::size_t>(ds.meta.k))
            throw config_error(
                "train: bag " + bag.id +
                " lists every label as a candidate; its margin is undefined "
                "(drop the bag or train with the margin term off)");
        switch (cfg.mode) {
            case Mode::mil:
                if (bag.candidates.size() != 1)
                    throw config_error("train: mil mode needs singleton candidate "
                                       "sets; bag " + bag.id + " has " +
                                       std::to_string(bag.candidates.size()) +
                                       " (run the mil adapter first)");
                break;
            case Mode::pll:
                if (bag.n() != 1)
                    throw config_error("train: pll mode needs singleton bags; bag " +
                                       bag.id + " has " + std::to_string(bag.n()) +
                                       " instances");
                [[fallthrough]];
            case Mode::mipl:
                if (bag.true_label &&
                    !std::binary_search(bag.candidates.begin(), bag.candidates.end(),
                                        *bag.true_label))
                    throw config_error("train: bag " + bag.id +
                                       " carries a true_label outside its candidate set");
                break;
        }
    }
}

} // namespace

void SgdMomentum::step(const std::vector<Matrix*>& params,
                       const std::vector<const Matrix*>& grads, double lr) {
    if (params.size() != grads.size())
        throw contract_error("optimizer: parameter/gradient count mismatch");
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const Matrix* p : params)
            velocity_.emplace_back(p->rows, p->cols, 0.0);
    }
    if (velocity_.size() != params.size())
        throw contract_error("optimizer: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = *grads[i];
        Matrix& v = velocity_[i];
        require_same_shape(p, g, "optimizer");
        require_same_shape(p, v, "optimizer");
        for (std::size_t j = 0; j < p.size(); ++j) {
            v.data[j] = mu_ * v.data[j] + (g.data[j] + wd_ * p.data[j]);
            p.data[j] -= lr * v.data[j];
        }
    }
}

double cosine_lr(double lr0, int t, int total_epochs) {
    return lr0 * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * t / total_epochs));
}

data::Dataset mil_adapt(const data::Dataset& ds) {
    data::Dataset out;
    out.meta = ds.meta;
    out.bags.reserve(ds.bags.size());
    for (const data::Bag& bag : ds.bags) {
        if (!bag.true_label)
            throw config_error("mil adapter: bag " + bag.id + " has no true_label");
        data::Bag b = bag;
        b.candidates = {*bag.true_label};
        out.bags.push_back(std::move(b));
    }
    return out;
}

void check_pll(const data::Dataset& ds) {
    for (const data::Bag& bag : ds.bags)
        if (bag.n() != 1)
            throw config_error("pll check: bag " + bag.id + " has " +
                               std::to_string(bag.n()) + " instances, need 1");
}

model::ModelParams initial_params(const TrainConfig& cfg,
                                  const data::Dataset& ds) {
    rng::Engine init_eng(rng::mix(cfg.seed, kInitStream));
    return model::ModelParams::init(cfg.model, ds.meta.d, ds.meta.k, init_eng);
}

TrainResult train(const TrainConfig& cfg, const data::Dataset& train_ds,
                  const data::Dataset* test_ds, const TrainHooks* hooks) {
    check_config(cfg);
    check_mode(cfg, train_ds);
    if (test_ds) {
        data::validate_dataset(*test_ds);
        if (test_ds->meta.d != train_ds.meta.d || test_ds->meta.k != train_ds.meta.k)
            throw config_error("train: test set dimensions disagree with training set");
    }

    losses::LossConfig loss_cfg;
    loss_cfg.lambda = cfg.lambda;
    // A singleton candidate set has nothing to separate: margin terms are
    // forced off in mil mode.
    loss_cfg.variant =
        cfg.mode == Mode::mil ? losses::MarginVariant::off : cfg.margin;

    TrainResult result;
    result.params = initial_params(cfg, train_ds);
    result.schedule = {cfg.tau0, cfg.tau_min, cfg.tau_decay, cfg.tau0};
    result.weights = losses::DisambiguationWeights::init(train_ds);

    SgdMomentum optimizer(cfg.momentum, cfg.weight_decay);
    const int m = train_ds.size();
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        result.schedule.anneal();
        const double tau = result.schedule.current;
        const double lr = cosine_lr(cfg.lr0, epoch, cfg.epochs);

        rng::Engine shuffle_eng(
            rng::mix(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, shuffle_eng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.tau = tau;
        rec.lr = lr;
        const int num_batches = (m + cfg.batch_size - 1) / cfg.batch_size;

        for (int b = 0; b < num_batches; ++b) {
            const int lo = b * cfg.batch_size;
            const int hi = std::min(m, lo + cfg.batch_size);

            ad::Tape tape;
            model::ParamNodes nodes = model::bind(tape, result.params);
            std::vector<losses::BagTerm> batch;
            batch.reserve(hi - lo);
            for (int i = lo; i < hi; ++i) {
                const data::Bag& bag = train_ds.bags[order[i]];
                model::Forward f = model::forward(tape, nodes, bag.instances, tau);
                result.weights.update(bag, f.probs->value.data, epoch, cfg.epochs);
                batch.push_back({&bag, f.probs});
            }
            losses::LossNodes loss = losses::full_loss(tape, loss_cfg, batch,
                                                       result.weights);
            const double total = loss.total->value.data[0];
            if (!std::isfinite(total))
                throw numeric_error("train: non-finite loss at epoch " +
                                    std::to_string(epoch) + ", batch " +
                                    std::to_string(b));
            tape.backward(loss.total);

            std::vector<const Matrix*> grads;
            grads.reserve(nodes.leaves.size());
            for (const ad::NodePtr& leaf : nodes.leaves) grads.push_back(&leaf->grad);
            optimizer.step(result.params.matrices(), grads, lr);

            rec.loss += total;
            rec.loss_d += loss.disambiguation->value.data[0];
            if (loss.margin) rec.loss_m += loss.margin->value.data[0];
            if (hooks && hooks->after_batch)
                hooks->after_batch(epoch, b, result.weights);
        }
        rec.loss /= num_batches;
        rec.loss_d /= num_batches;
        rec.loss_m /= num_batches;

        if (test_ds && (epoch == cfg.epochs ||
                        (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)))
            rec.test_acc = accuracy(result.params, *test_ds, tau);

        result.report.push_back(rec);
    }
    return result;
}

int predict(const model::ModelParams& params, const data::Bag& bag, double tau) {
    ad::Tape tape;
    model::ParamNodes nodes = model::bind(tape, params);
    model::Forward f = model::forward(tape, nodes, bag.instances, tau);
    const std::vector<double>& p = f.probs->value.data;
    int best = 0;
    for (int c = 1; c < static_cast<int>(p.size()); ++c)
        if (p[c] > p[best]) best = c;
    return best;
}

double accuracy(const model::ModelParams& params, const data::Dataset& ds,
                double tau) {
    if (ds.bags.empty()) throw contract_error("accuracy: empty dataset");
    const int m = ds.size();
    std::vector<int> preds(m, -1);
    std::string failure;
    // Exceptions must not unwind out of the parallel region; capture and
    // rethrow after the join.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        try {
            preds[i] = predict(params, ds.bags[i], tau);
        } catch (const std::exception& e) {
#pragma omp critical
            failure = e.what();
        }
    }
    if (!failure.empty()) throw contract_error("accuracy: " + failure);
    int correct = 0;
    for (int i = 0; i < m; ++i) {
        if (!ds.bags[i].true_label)
            throw contract_error("accuracy: bag " + ds.bags[i].id +
                                 " has no true_label");
        if (preds[i] == *ds.bags[i].true_label) ++correct;
    }
    return static_cast<double>(correct) / m;
}

std::vector<SweepRow> sweep(const TrainConfig& base, SweepParam param,
                            const std::vector<double>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const data::Dataset& full, double ratio, int jobs) {
    if (values.empty()) throw config_error("sweep: empty value list");
    if (seeds.empty()) throw config_error("sweep: empty seed list");
    if (jobs < 1) throw config_error("sweep: jobs must be >= 1");

    const int nv = static_cast<int>(values.size());
    const int ns = static_cast<int>(seeds.size());
    const int cells = nv * ns;
    std::vector<SweepCell> grid(cells);

#pragma omp parallel for num_threads(jobs) schedule(dynamic) if (jobs > 1)
    for (int c = 0; c < cells; ++c) {
        const int vi = c / ns;
        const int si = c % ns;
        SweepCell& cell = grid[c];
        cell.seed = seeds[si];
        try {
            TrainConfig cfg = base;
            cfg.seed = seeds[si];
            if (param == SweepParam::lambda)
                cfg.lambda = values[vi];
            else
                cfg.tau0 = values[vi];
            auto [tr, te] = data::split(full, ratio, seeds[si]);
            TrainResult res = train(cfg, tr, nullptr, nullptr);
            cell.accuracy = accuracy(res.params, te, res.schedule.current);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    }

    std::vector<SweepRow> rows(nv);
    for (int vi = 0; vi < nv; ++vi) {
        SweepRow& row = rows[vi];
        row.value = values[vi];
        row.cells.assign(grid.begin() + static_cast<std::ptrdiff_t>(vi) * ns,
                         grid.begin() + static_cast<std::ptrdiff_t>(vi + 1) * ns);
        double sum = 0.0;
        int n = 0;
        for (const SweepCell& cell : row.cells)
            if (cell.accuracy) {
                sum += *cell.accuracy;
                ++n;
            }
        row.mean_acc = n > 0 ? sum / n : 0.0;
        double ss = 0.0;
        for (const SweepCell& cell : row.cells)
            if (cell.accuracy) ss += (*cell.accuracy - row.mean_acc) *
                                     (*cell.accuracy - row.mean_acc);
        row.std_acc = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    }
    return rows;
}

} // namespace mipl::trainer
