#ifndef MIPL_EVALSUITE_HPP
#define MIPL_EVALSUITE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mipl/data.hpp"
#include "mipl/model.hpp"

namespace mipl::evalsuite {

// Margin diagnostics over predicted probabilities vs candidate sets.
// phi = 1 - (max candidate prob - max non-candidate prob); a violation is a
// non-candidate outscoring every candidate. Bags whose candidate set covers
// all labels have no margin and are excluded (counted in n_margin_bags).
struct MarginStats {
    double mean_phi = 0.0;
    double std_phi = 0.0; // sample standard deviation over bags
    double violation_rate = 0.0;
    int n_margin_bags = 0;
};

struct EvalReport {
    double accuracy = 0.0;
    std::vector<double> per_class; // accuracy per true class; 0 when unseen
    MarginStats margin;
    int n = 0;
};

// Scores every bag at the given temperature (callers pass the final annealed
// value from the checkpoint). Every bag must carry a true_label. Bags are
// independent, so scoring runs in parallel without changing the report.
EvalReport evaluate(const model::ModelParams& params, const data::Dataset& ds,
                    double tau);

// JSONL, one line per bag: raw and normalized attention scores, plus — when
// the bag carries generator positive flags — the flags and the separation
// statistic min(raw score over positives) - max(raw score over negatives)
// (null when one side is empty). Bags without flags omit both keys.
void dump_attention(const model::ModelParams& params, const data::Dataset& ds,
                    double tau, const std::string& path);

struct SeedStats {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation; 0 for a single seed
};

// Runs a metric-producing closure once per seed and aggregates each metric.
// All runs must report the same metric names.
std::map<std::string, SeedStats> multi_seed(
    const std::function<std::map<std::string, double>(std::uint64_t)>& runner,
    const std::vector<std::uint64_t>& seeds);

} // namespace mipl::evalsuite

#endif
