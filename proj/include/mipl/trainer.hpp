#ifndef MIPL_TRAINER_HPP
#define MIPL_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mipl/data.hpp"
#include "mipl/losses.hpp"
#include "mipl/model.hpp"

namespace mipl::trainer {

enum class Mode { mipl, mil, pll };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 8;
    double lr0 = 0.01;         // cosine-decayed: lr0 * (1 + cos(pi*t/T)) / 2
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lambda = 1.0;
    losses::MarginVariant margin = losses::MarginVariant::distribution;
    double tau0 = 5.0;
    double tau_min = 0.1;
    double tau_decay = 0.95;
    Mode mode = Mode::mipl;
    std::uint64_t seed = 0;
    int eval_every = 0; // extra test evaluations every N epochs; final epoch always
    model::ModelConfig model;
};

struct EpochRecord {
    int epoch = 0;
    double tau = 0.0;
    double lr = 0.0;
    double loss_d = 0.0; // mean over batches
    double loss_m = 0.0; // 0 when the margin variant is off
    double loss = 0.0;
    std::optional<double> test_acc;
};

// Observation points for tests; called after every optimizer step.
struct TrainHooks {
    std::function<void(int epoch, int batch,
                       const losses::DisambiguationWeights&)>
        after_batch;
};

struct TrainResult {
    model::ModelParams params;
    model::TemperatureSchedule schedule;
    losses::DisambiguationWeights weights;
    std::vector<EpochRecord> report;
};

// Momentum SGD with coupled weight decay:
// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
class SgdMomentum {
  public:
    SgdMomentum(double momentum, double weight_decay)
        : mu_(momentum), wd_(weight_decay) {}

    void step(const std::vector<Matrix*>& params,
              const std::vector<const Matrix*>& grads, double lr);

  private:
    double mu_;
    double wd_;
    std::vector<Matrix> velocity_; // sized on first step
};

double cosine_lr(double lr0, int t, int total_epochs);

// Replaces every candidate set with {true_label}; requires labels everywhere.
// Training in mil mode additionally forces the margin variant off (a
// singleton candidate set leaves nothing to disambiguate or separate from).
data::Dataset mil_adapt(const data::Dataset& ds);

// Rejects bags with more than one instance.
void check_pll(const data::Dataset& ds);

// Parameters exactly as train() would initialize them for this config and
// dataset (same derived seed stream).
model::ModelParams initial_params(const TrainConfig& cfg,
                                  const data::Dataset& ds);

// Deterministic pipeline: shuffles and parameter draws depend only on
// cfg.seed; bags are processed sequentially, one tape per batch, one
// optimizer step and one weight update per bag per epoch.
TrainResult train(const TrainConfig& cfg, const data::Dataset& train_ds,
                  const data::Dataset* test_ds = nullptr,
                  const TrainHooks* hooks = nullptr);

// Argmax of the forward probabilities, ties to the lowest class index.
int predict(const model::ModelParams& params, const data::Bag& bag, double tau);

// Fraction of labeled bags predicted correctly.
double accuracy(const model::ModelParams& params, const data::Dataset& ds,
                double tau);

enum class SweepParam { lambda, tau0 };

struct SweepCell {
    std::uint64_t seed = 0;
    std::optional<double> accuracy;
    std::string error; // non-empty when the cell failed
};

struct SweepRow {
    double value = 0.0;
    double mean_acc = 0.0;
    double std_acc = 0.0; // sample standard deviation over seeds
    std::vector<SweepCell> cells;
};

// Grid of (value, seed) cells over one hyperparameter. Each cell re-splits
// the dataset with its seed, trains, and scores the held-out bags at the
// final temperature. Cells are independent; jobs > 1 runs them in parallel
// without changing any result. Per-cell errors are recorded, not fatal.
std::vector<SweepRow> sweep(const TrainConfig& base, SweepParam param,
                            const std::vector<double>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const data::Dataset& full, double ratio, int jobs);

} // namespace mipl::trainer

#endif
