#ifndef MIPL_DATA_HPP
#define MIPL_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mipl/matrix.hpp"

namespace mipl::data {

struct DatasetMeta {
    int d = 0; // instance feature width
    int k = 0; // number of classes
    std::string name;
};

// One labeled bag. candidates holds 0-based class indices, sorted ascending,
// no duplicates. true_label is optional on the wire; generated data always
// carries it. positive_mask flags rows drawn from the true-class cluster
// (generator metadata; empty when unknown).
struct Bag {
    std::string id;
    Matrix instances; // n x d, one row per instance
    std::vector<int> candidates;
    std::optional<int> true_label;
    std::vector<std::uint8_t> positive_mask;

    int n() const { return instances.rows; }
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Bag> bags;

    int size() const { return static_cast<int>(bags.size()); }
};

// Candidate noise mechanisms, mutually exclusive: r-mode adds exactly r
// false positive labels per bag; q-mode flips each non-true label into the
// candidate set independently with probability q (resampled if every label
// would flip in, so the candidate set stays a proper subset).
struct GenConfig {
    int m = 100;
    int k = 5;
    int d = 10;
    int n_min = 5;
    int n_max = 15;
    std::optional<int> r;
    std::optional<double> q;
    double pos_min = 0.2;       // positive-instance fraction range
    double pos_max = 0.6;
    double cluster_sep = 3.0;   // centers sit at mutual distance sep*sqrt(d)
    std::uint64_t seed = 0;
    std::string name = "synthetic";
};

// Deterministic under seed; bag i draws from an RNG stream derived from
// (seed, i), so generation parallelizes without changing output.
Dataset generate(const GenConfig& cfg);

// Bag-to-single-instance degradations for feeding bag data to
// single-instance learners.
std::vector<double> mean_degrade(const Bag& bag);     // column means, size d
std::vector<double> maxmin_degrade(const Bag& bag);   // per-dim max then min, size 2d

enum class Degrade { mean, maxmin };

// Collapses every bag to one instance via the chosen degradation; labels and
// candidates carry over, positive masks are dropped.
Dataset degrade_dataset(const Dataset& ds, Degrade kind);

// Random split by bag. |train| = round(ratio * m); both sides must end up
// non-empty. Deterministic under seed.
std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio,
                                  std::uint64_t seed);

// JSONL: one header line {"d","k","name"}, then one line per bag
// {"id","instances","candidates","true_label"[,"positive_mask"]}.
// write o read is the identity (reals round-trip bit-exactly).
void write_jsonl(const Dataset& ds, const std::string& path);
Dataset read_jsonl(const std::string& path);

// Structural invariants shared by generator and reader output. Throws
// schema_error naming the first offending bag.
void validate_dataset(const Dataset& ds);

} // namespace mipl::data

#endif
