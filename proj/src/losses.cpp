#include "mipl/losses.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "mipl/errors.hpp"

namespace mipl::losses {

DisambiguationWeights DisambiguationWeights::init(const data::Dataset& ds) {
    DisambiguationWeights w;
    w.k_ = ds.meta.k;
    for (const data::Bag& bag : ds.bags) {
        std::vector<double> row(ds.meta.k, 0.0);
        const double u = 1.0 / static_cast<double>(bag.candidates.size());
        for (int c : bag.candidates) row[c] = u;
        if (!w.w_.emplace(bag.id, std::move(row)).second)
            throw contract_error("duplicate bag id: " + bag.id);
    }
    return w;
}

const std::vector<double>& DisambiguationWeights::of(const std::string& bag_id) const {
    auto it = w_.find(bag_id);
    if (it == w_.end())
        throw contract_error("no disambiguation weights for bag " + bag_id);
    return it->second;
}

void DisambiguationWeights::update(const data::Bag& bag,
                                   const std::vector<double>& probs, int t,
                                   int T) {
    if (T < 1 || t < 1 || t > T)
        throw contract_error("weight update: epoch index must satisfy 1 <= t <= T");
    if (static_cast<int>(probs.size()) != k_)
        throw dim_error("weight update: expected " + std::to_string(k_) +
                        " probabilities, got " + std::to_string(probs.size()));
    auto it = w_.find(bag.id);
    if (it == w_.end())
        throw contract_error("no disambiguation weights for bag " + bag.id);

    double mass = 0.0;
    for (int c : bag.candidates) mass += probs[c];
    if (!(mass > 1e-300))
        throw numeric_error("bag " + bag.id +
                            ": candidate probability mass underflowed");
    const double alpha = static_cast<double>(T - t) / static_cast<double>(T);
    for (int c : bag.candidates)
        it->second[c] = alpha * it->second[c] + (1.0 - alpha) * probs[c] / mass;
}

void write_weights_jsonl(const data::Dataset& ds,
                         const DisambiguationWeights& weights,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    for (const data::Bag& bag : ds.bags) {
        nlohmann::ordered_json line;
        line["bag_id"] = bag.id;
        line["weights"] = weights.of(bag.id);
        out << line.dump() << "\n";
    }
    if (!out) throw config_error("short write to " + path);
}

namespace {

// probs[c] as a differentiable scalar; a singleton max is an exact gather.
ad::NodePtr pick(ad::Tape& tape, const ad::NodePtr& probs, int c) {
    return tape.max_over(probs, {c});
}

std::vector<int> non_candidates(const data::Bag& bag, int k) {
    std::vector<int> out;
    std::size_t s = 0;
    for (int c = 0; c < k; ++c) {
        if (s < bag.candidates.size() && bag.candidates[s] == c)
            ++s;
        else
            out.push_back(c);
    }
    return out;
}

void require_batch(const std::vector<BagTerm>& batch, const char* what) {
    if (batch.empty())
        throw contract_error(std::string(what) + ": empty batch");
    for (const BagTerm& term : batch) {
        if (term.bag == nullptr || !term.probs)
            throw contract_error(std::string(what) + ": null bag term");
        if (term.probs->value.rows != 1)
            throw dim_error(std::string(what) + ": probabilities must be a 1xk row");
    }
}

} // namespace

ad::NodePtr disambiguation_loss(ad::Tape& tape, const std::vector<BagTerm>& batch,
                                const DisambiguationWeights& weights) {
    require_batch(batch, "disambiguation_loss");
    ad::NodePtr acc;
    for (const BagTerm& term : batch) {
        const std::vector<double>& w = weights.of(term.bag->id);
        ad::NodePtr bag_sum;
        for (int c : term.bag->candidates) {
            // A logit gap beyond ~745 rounds a softmax output to exactly 0.
            // Floor the picked probability at the same 1e-300 threshold the
            // weight update aborts on: one dead candidate then contributes
            // the floor's log (and no gradient) instead of aborting the run
            // on log(0). A bag whose entire candidate mass vanishes still
            // aborts, in the weight update.
            ad::NodePtr p = tape.clamp_min(pick(tape, term.probs, c), 1e-300);
            ad::NodePtr piece = tape.scale(tape.log(p), w[c]);
            bag_sum = bag_sum ? tape.add(bag_sum, piece) : piece;
        }
        acc = acc ? tape.add(acc, bag_sum) : bag_sum;
    }
    return tape.scale(acc, -1.0 / static_cast<double>(batch.size()));
}

ad::NodePtr bag_margin(ad::Tape& tape, const data::Bag& bag,
                       const ad::NodePtr& probs) {
    const int k = probs->value.cols;
    const std::vector<int> rest = non_candidates(bag, k);
    if (rest.empty())
        throw contract_error("bag " + bag.id +
                             ": candidate set covers every label, margin undefined");
    ad::NodePtr best_candidate = tape.max_over(probs, bag.candidates);
    ad::NodePtr best_other = tape.max_over(probs, rest);
    // 1 - (best candidate - best non-candidate)
    return tape.add_const(tape.scale(tape.sub(best_candidate, best_other), -1.0),
                          1.0);
}

namespace {

ad::NodePtr margin_vector(ad::Tape& tape, const std::vector<BagTerm>& batch) {
    std::vector<ad::NodePtr> phis;
    phis.reserve(batch.size());
    for (const BagTerm& term : batch)
        phis.push_back(bag_margin(tape, *term.bag, term.probs));
    return tape.concat_scalars(phis);
}

} // namespace

ad::NodePtr margin_mean_loss(ad::Tape& tape, const std::vector<BagTerm>& batch) {
    require_batch(batch, "margin_mean_loss");
    return tape.mean(margin_vector(tape, batch));
}

ad::NodePtr margin_distribution_loss(ad::Tape& tape,
                                     const std::vector<BagTerm>& batch) {
    require_batch(batch, "margin_distribution_loss");
    const int b = static_cast<int>(batch.size());
    ad::NodePtr phi = margin_vector(tape, batch);
    ad::NodePtr m = tape.mean(phi);
    ad::NodePtr centered = tape.sub_scalar(phi, m);
    ad::NodePtr var = tape.scale(tape.sum(tape.mul(centered, centered)), 1.0 / b);
    ad::NodePtr sd = tape.sqrt(var);
    // Denominator 1 - sqrt(V), clamped away from zero so a spread near 1
    // cannot blow the loss up.
    ad::NodePtr denom =
        tape.clamp_min(tape.add_const(tape.scale(sd, -1.0), 1.0), 1e-3);
    return tape.div_scalar(m, denom);
}

LossNodes full_loss(ad::Tape& tape, const LossConfig& cfg,
                    const std::vector<BagTerm>& batch,
                    const DisambiguationWeights& weights) {
    if (cfg.lambda < 0.0)
        throw config_error("full_loss: lambda must be non-negative");
    LossNodes out;
    out.disambiguation = disambiguation_loss(tape, batch, weights);
    if (cfg.variant == MarginVariant::off) {
        out.total = out.disambiguation;
        return out;
    }
    out.margin = cfg.variant == MarginVariant::mean
                     ? margin_mean_loss(tape, batch)
                     : margin_distribution_loss(tape, batch);
    out.total = cfg.lambda == 0.0
                    ? out.disambiguation
                    : tape.add(out.disambiguation, tape.scale(out.margin, cfg.lambda));
    return out;
}

} // namespace mipl::losses
