#include "mipl/evalsuite.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "mipl/errors.hpp"

namespace mipl::evalsuite {

namespace {

struct BagScore {
    int pred = -1;
    std::vector<double> probs;
    std::vector<double> raw;
    std::vector<double> norm;
};

// One forward per bag; parallel over bags, results slotted by index.
std::vector<BagScore> score_all(const model::ModelParams& params,
                                const data::Dataset& ds, double tau) {
    const int m = ds.size();
    std::vector<BagScore> out(m);
    std::string failure;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        try {
            ad::Tape tape;
            model::ParamNodes nodes = model::bind(tape, params);
            model::Forward f = model::forward(tape, nodes, ds.bags[i].instances, tau);
            BagScore& s = out[i];
            s.probs = f.probs->value.data;
            s.raw = f.raw_scores->value.data;
            s.norm = f.norm_scores->value.data;
            s.pred = 0;
            for (int c = 1; c < static_cast<int>(s.probs.size()); ++c)
                if (s.probs[c] > s.probs[s.pred]) s.pred = c;
        } catch (const std::exception& e) {
#pragma omp critical
            failure = e.what();
        }
    }
    if (!failure.empty()) throw contract_error("evalsuite: " + failure);
    return out;
}

} // namespace

EvalReport evaluate(const model::ModelParams& params, const data::Dataset& ds,
                    double tau) {
    data::validate_dataset(ds);
    if (ds.bags.empty()) throw contract_error("evaluate: empty dataset");
    for (const data::Bag& bag : ds.bags)
        if (!bag.true_label)
            throw contract_error("evaluate: bag " + bag.id + " has no true_label");

    const std::vector<BagScore> scores = score_all(params, ds, tau);
    const int k = ds.meta.k;
    EvalReport report;
    report.n = ds.size();
    report.per_class.assign(k, 0.0);
    std::vector<int> class_total(k, 0), class_correct(k, 0);

    std::vector<double> phis;
    int violations = 0;
    for (int i = 0; i < ds.size(); ++i) {
        const data::Bag& bag = ds.bags[i];
        const BagScore& s = scores[i];
        const int truth = *bag.true_label;
        ++class_total[truth];
        if (s.pred == truth) {
            ++class_correct[truth];
            report.accuracy += 1.0;
        }
        if (static_cast<int>(bag.candidates.size()) == k) continue;
        double best_cand = -1.0, best_other = -1.0;
        std::size_t ci = 0;
        for (int c = 0; c < k; ++c) {
            const bool is_cand =
                ci < bag.candidates.size() && bag.candidates[ci] == c;
            if (is_cand) {
                ++ci;
                best_cand = std::max(best_cand, s.probs[c]);
            } else {
                best_other = std::max(best_other, s.probs[c]);
            }
        }
        phis.push_back(1.0 - (best_cand - best_other));
        if (best_other > best_cand) ++violations;
    }
    report.accuracy /= report.n;
    for (int c = 0; c < k; ++c)
        report.per_class[c] =
            class_total[c] > 0
                ? static_cast<double>(class_correct[c]) / class_total[c]
                : 0.0;

    report.margin.n_margin_bags = static_cast<int>(phis.size());
    if (!phis.empty()) {
        double mean = 0.0;
        for (double p : phis) mean += p;
        mean /= phis.size();
        double ss = 0.0;
        for (double p : phis) ss += (p - mean) * (p - mean);
        report.margin.mean_phi = mean;
        report.margin.std_phi =
            phis.size() > 1 ? std::sqrt(ss / (phis.size() - 1)) : 0.0;
        report.margin.violation_rate =
            static_cast<double>(violations) / phis.size();
    }
    return report;
}

void dump_attention(const model::ModelParams& params, const data::Dataset& ds,
                    double tau, const std::string& path) {
    data::validate_dataset(ds);
    const std::vector<BagScore> scores = score_all(params, ds, tau);
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    for (int i = 0; i < ds.size(); ++i) {
        const data::Bag& bag = ds.bags[i];
        const BagScore& s = scores[i];
        nlohmann::ordered_json line;
        line["id"] = bag.id;
        line["raw"] = s.raw;
        line["norm"] = s.norm;
        if (!bag.positive_mask.empty()) {
            nlohmann::ordered_json mask = nlohmann::ordered_json::array();
            for (auto f : bag.positive_mask) mask.push_back(static_cast<int>(f));
            line["positive_mask"] = std::move(mask);
            double min_pos = 0.0, max_neg = 0.0;
            bool any_pos = false, any_neg = false;
            for (int j = 0; j < bag.n(); ++j) {
                if (bag.positive_mask[j]) {
                    min_pos = any_pos ? std::min(min_pos, s.raw[j]) : s.raw[j];
                    any_pos = true;
                } else {
                    max_neg = any_neg ? std::max(max_neg, s.raw[j]) : s.raw[j];
                    any_neg = true;
                }
            }
            if (any_pos && any_neg)
                line["separation"] = min_pos - max_neg;
            else
                line["separation"] = nullptr;
        }
        out << line.dump() << "\n";
    }
    if (!out) throw config_error("short write to " + path);
}

std::map<std::string, SeedStats> multi_seed(
    const std::function<std::map<std::string, double>(std::uint64_t)>& runner,
    const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw config_error("multi_seed: empty seed list");
    std::vector<std::map<std::string, double>> results;
    results.reserve(seeds.size());
    for (std::uint64_t seed : seeds) results.push_back(runner(seed));
    for (std::size_t i = 1; i < results.size(); ++i) {
        if (results[i].size() != results[0].size())
            throw contract_error("multi_seed: runs reported different metrics");
        for (const auto& [key, value] : results[0])
            if (!results[i].count(key))
                throw contract_error("multi_seed: run missing metric " + key);
    }
    std::map<std::string, SeedStats> out;
    const double n = static_cast<double>(seeds.size());
    for (const auto& [key, value] : results[0]) {
        SeedStats st;
        for (const auto& r : results) st.mean += r.at(key);
        st.mean /= n;
        if (seeds.size() > 1) {
            double ss = 0.0;
            for (const auto& r : results)
                ss += (r.at(key) - st.mean) * (r.at(key) - st.mean);
            st.stddev = std::sqrt(ss / (n - 1.0));
        }
        out[key] = st;
    }
    return out;
}

} // namespace mipl::evalsuite
