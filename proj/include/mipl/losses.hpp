#ifndef MIPL_LOSSES_HPP
#define MIPL_LOSSES_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "mipl/data.hpp"
#include "mipl/tape.hpp"

namespace mipl::losses {

// Per-bag soft labels over the candidate set. Entries off the candidate set
// are exactly zero and stay zero; entries on it are non-negative and sum to 1
// (up to roundoff). The optimizer never sees these: they are constants inside
// every loss graph.
class DisambiguationWeights {
  public:
    // Uniform 1/|candidates| on each bag's candidate set.
    static DisambiguationWeights init(const data::Dataset& ds);

    const std::vector<double>& of(const std::string& bag_id) const;

    // Moving-average pull toward the model's renormalized candidate
    // probabilities: w <- alpha*w + (1-alpha)*p/sum(p over candidates) with
    // alpha = (T-t)/T, epoch t in [1, T]. Off-candidate entries untouched.
    // Candidate probability mass below 1e-300 aborts with numeric_error.
    void update(const data::Bag& bag, const std::vector<double>& probs, int t,
                int T);

    std::size_t size() const { return w_.size(); }
    int num_classes() const { return k_; }

  private:
    std::unordered_map<std::string, std::vector<double>> w_;
    int k_ = 0;
};

// One line per bag, dataset order: {"bag_id", "weights"}.
void write_weights_jsonl(const data::Dataset& ds,
                         const DisambiguationWeights& weights,
                         const std::string& path);

enum class MarginVariant { off, mean, distribution };

// A bag paired with its probability node (1 x k) on the current tape.
struct BagTerm {
    const data::Bag* bag;
    ad::NodePtr probs;
};

// Weighted cross-entropy against the disambiguation weights, averaged over
// the batch: -(1/B) sum_i sum_{c in S_i} w_{i,c} log p_{i,c}. Weights enter
// as constants; no gradient flows into the store. Probabilities are floored
// at 1e-300 inside the log so a candidate whose softmax output underflowed
// to zero cannot abort the run (it contributes the floor value, gradient-free).
ad::NodePtr disambiguation_loss(ad::Tape& tape, const std::vector<BagTerm>& batch,
                                const DisambiguationWeights& weights);

// phi_i = 1 - (max over candidates - max over non-candidates) of the
// predicted probabilities. Ties take the lowest index. A bag whose candidate
// set covers every label has no margin and is rejected.
ad::NodePtr bag_margin(ad::Tape& tape, const data::Bag& bag,
                       const ad::NodePtr& probs);

// Mean of phi over the batch.
ad::NodePtr margin_mean_loss(ad::Tape& tape, const std::vector<BagTerm>& batch);

// mean(phi) / max(1 - sqrt(variance(phi)), 1e-3) with the population
// variance; both statistics stay inside the graph, so gradients flow through
// them. A batch of one (variance 0) reduces to phi_1.
ad::NodePtr margin_distribution_loss(ad::Tape& tape,
                                     const std::vector<BagTerm>& batch);

struct LossConfig {
    double lambda = 1.0;
    MarginVariant variant = MarginVariant::distribution;
};

struct LossNodes {
    ad::NodePtr total;
    ad::NodePtr disambiguation;
    ad::NodePtr margin; // null when the variant is off
};

// total = disambiguation + lambda * margin-term; exactly the disambiguation
// loss when the variant is off or lambda is 0.
LossNodes full_loss(ad::Tape& tape, const LossConfig& cfg,
                    const std::vector<BagTerm>& batch,
                    const DisambiguationWeights& weights);

} // namespace mipl::losses

#endif
