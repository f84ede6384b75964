#include "mipl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "mipl/errors.hpp"
#include "mipl/rng.hpp"

namespace mipl::data {

using json = nlohmann::ordered_json;

namespace {

void check_gen_config(const GenConfig& cfg) {
    if (cfg.m < 1) throw config_error("generate: m must be >= 1");
    if (cfg.k < 2) throw config_error("generate: k must be >= 2");
    if (cfg.d < 1) throw config_error("generate: d must be >= 1");
    if (cfg.n_min < 1 || cfg.n_max < cfg.n_min)
        throw config_error("generate: need 1 <= n_min <= n_max");
    if (cfg.r.has_value() == cfg.q.has_value())
        throw config_error("generate: exactly one of r and q must be set");
    if (cfg.r && (*cfg.r < 0 || *cfg.r > cfg.k - 1))
        throw config_error("generate: r must lie in [0, k-1]");
    // q = 1 would flip every label in and the proper-subset resampling
    // below could never terminate.
    if (cfg.q && !(*cfg.q > 0.0 && *cfg.q < 1.0))
        throw config_error("generate: q must lie in (0, 1)");
    if (!(cfg.pos_min > 0.0 && cfg.pos_min <= cfg.pos_max && cfg.pos_max <= 1.0))
        throw config_error("generate: positive fraction range must satisfy 0 < min <= max <= 1");
    if (!(cfg.cluster_sep > 0.0))
        throw config_error("generate: cluster_sep must be positive");
    // k class centers plus one background center, mutually equidistant on
    // coordinate axes; needs one axis per center.
    if (cfg.d < cfg.k + 1)
        throw config_error("generate: need d >= k+1 to place " +
                           std::to_string(cfg.k) +
                           " class centers plus background at equal mutual distance");
}

Bag make_bag(const GenConfig& cfg, int index) {
    rng::Engine eng(rng::mix(cfg.seed, static_cast<std::uint64_t>(index)));
    Bag bag;
    bag.id = "b" + std::to_string(index);

    const int label = eng.uniform_int(0, cfg.k - 1);
    const int n = eng.uniform_int(cfg.n_min, cfg.n_max);
    const double frac = eng.uniform(cfg.pos_min, cfg.pos_max);
    const int pos =
        std::clamp(static_cast<int>(std::lround(frac * n)), 1, n);

    // Axis c carries the center of class c; axis k the background center.
    // Pairwise center distance = scale * sqrt(2) = cluster_sep * sqrt(d).
    const double scale = cfg.cluster_sep * std::sqrt(cfg.d / 2.0);

    bag.instances = Matrix(n, cfg.d);
    bag.positive_mask.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        const int axis = i < pos ? label : cfg.k;
        for (int j = 0; j < cfg.d; ++j)
            bag.instances.at(i, j) = (j == axis ? scale : 0.0) + eng.normal();
        bag.positive_mask[i] = i < pos ? 1 : 0;
    }

    // Shuffle instance order so positives are not positionally encoded.
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng::shuffle(perm, eng);
    Matrix shuffled(n, cfg.d);
    std::vector<std::uint8_t> mask(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < cfg.d; ++j) shuffled.at(i, j) = bag.instances.at(perm[i], j);
        mask[i] = bag.positive_mask[perm[i]];
    }
    bag.instances = std::move(shuffled);
    bag.positive_mask = std::move(mask);

    bag.true_label = label;
    if (cfg.r) {
        std::vector<int> others;
        others.reserve(cfg.k - 1);
        for (int c = 0; c < cfg.k; ++c)
            if (c != label) others.push_back(c);
        rng::shuffle(others, eng);
        bag.candidates.assign(others.begin(), others.begin() + *cfg.r);
        bag.candidates.push_back(label);
    } else {
        // Resample until at least one label stays out of the candidate set.
        for (;;) {
            bag.candidates.assign(1, label);
            for (int c = 0; c < cfg.k; ++c)
                if (c != label && eng.uniform() < *cfg.q) bag.candidates.push_back(c);
            if (static_cast<int>(bag.candidates.size()) < cfg.k) break;
        }
    }
    std::sort(bag.candidates.begin(), bag.candidates.end());
    return bag;
}

} // namespace

Dataset generate(const GenConfig& cfg) {
    check_gen_config(cfg);
    Dataset ds;
    ds.meta = {cfg.d, cfg.k, cfg.name};
    ds.bags.resize(cfg.m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < cfg.m; ++i) ds.bags[i] = make_bag(cfg, i);
    return ds;
}

std::vector<double> mean_degrade(const Bag& bag) {
    const int n = bag.instances.rows, d = bag.instances.cols;
    std::vector<double> out(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += bag.instances.at(i, j);
    for (double& v : out) v /= n;
    return out;
}

std::vector<double> maxmin_degrade(const Bag& bag) {
    const int n = bag.instances.rows, d = bag.instances.cols;
    std::vector<double> out(2 * d);
    for (int j = 0; j < d; ++j) {
        double hi = bag.instances.at(0, j), lo = hi;
        for (int i = 1; i < n; ++i) {
            hi = std::max(hi, bag.instances.at(i, j));
            lo = std::min(lo, bag.instances.at(i, j));
        }
        out[j] = hi;
        out[d + j] = lo;
    }
    return out;
}

Dataset degrade_dataset(const Dataset& ds, Degrade kind) {
    Dataset out;
    out.meta = ds.meta;
    out.meta.d = kind == Degrade::mean ? ds.meta.d : 2 * ds.meta.d;
    out.meta.name = ds.meta.name + (kind == Degrade::mean ? "-mean" : "-maxmin");
    out.bags.reserve(ds.bags.size());
    for (const Bag& bag : ds.bags) {
        Bag b;
        b.id = bag.id;
        b.candidates = bag.candidates;
        b.true_label = bag.true_label;
        const std::vector<double> row =
            kind == Degrade::mean ? mean_degrade(bag) : maxmin_degrade(bag);
        b.instances = Matrix(1, static_cast<int>(row.size()));
        b.instances.data = row;
        out.bags.push_back(std::move(b));
    }
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio,
                                  std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw config_error("split: ratio must lie strictly between 0 and 1");
    const int m = ds.size();
    const int n_train = static_cast<int>(std::lround(ratio * m));
    if (n_train < 1 || n_train >= m)
        throw config_error("split: both partitions must be non-empty (m=" +
                           std::to_string(m) + ", ratio=" + std::to_string(ratio) + ")");
    std::vector<int> idx(m);
    for (int i = 0; i < m; ++i) idx[i] = i;
    rng::Engine eng(rng::mix(seed, 0x73706c6974ULL)); // stream tag "split"
    rng::shuffle(idx, eng);
    std::vector<int> tr(idx.begin(), idx.begin() + n_train);
    std::vector<int> te(idx.begin() + n_train, idx.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    Dataset train, test;
    train.meta = test.meta = ds.meta;
    for (int i : tr) train.bags.push_back(ds.bags[i]);
    for (int i : te) test.bags.push_back(ds.bags[i]);
    return {std::move(train), std::move(test)};
}

void write_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    json header;
    header["d"] = ds.meta.d;
    header["k"] = ds.meta.k;
    header["name"] = ds.meta.name;
    out << header.dump() << "\n";
    for (const Bag& bag : ds.bags) {
        json line;
        line["id"] = bag.id;
        json rows = json::array();
        for (int i = 0; i < bag.instances.rows; ++i) {
            json row = json::array();
            for (int j = 0; j < bag.instances.cols; ++j)
                row.push_back(bag.instances.at(i, j));
            rows.push_back(std::move(row));
        }
        line["instances"] = std::move(rows);
        line["candidates"] = bag.candidates;
        if (bag.true_label)
            line["true_label"] = *bag.true_label;
        else
            line["true_label"] = nullptr;
        if (!bag.positive_mask.empty()) {
            json mask = json::array();
            for (auto f : bag.positive_mask) mask.push_back(static_cast<int>(f));
            line["positive_mask"] = std::move(mask);
        }
        out << line.dump() << "\n";
    }
    if (!out) throw config_error("short write to " + path);
}

namespace {

[[noreturn]] void bad_schema(int lineno, const std::string& what) {
    throw schema_error("line " + std::to_string(lineno) + ": " + what);
}

} // namespace

Dataset read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open for reading: " + path);
    Dataset ds;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw parse_error("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object()) bad_schema(lineno, "expected a JSON object");
        if (!have_header) {
            if (!j.contains("d") || !j.contains("k") || !j.contains("name"))
                bad_schema(lineno, "header must carry d, k, name");
            if (!j["d"].is_number_integer() || !j["k"].is_number_integer() ||
                !j["name"].is_string())
                bad_schema(lineno, "header field types: d int, k int, name string");
            ds.meta.d = j["d"].get<int>();
            ds.meta.k = j["k"].get<int>();
            ds.meta.name = j["name"].get<std::string>();
            if (ds.meta.d < 1) bad_schema(lineno, "d must be >= 1");
            if (ds.meta.k < 2) bad_schema(lineno, "k must be >= 2");
            have_header = true;
            continue;
        }
        Bag bag;
        if (!j.contains("id") || !j["id"].is_string())
            bad_schema(lineno, "bag needs a string id");
        bag.id = j["id"].get<std::string>();
        if (!j.contains("instances") || !j["instances"].is_array() ||
            j["instances"].empty())
            bad_schema(lineno, "bag " + bag.id + ": instances must be a non-empty array");
        const auto& rows = j["instances"];
        const int n = static_cast<int>(rows.size());
        bag.instances = Matrix(n, ds.meta.d);
        for (int i = 0; i < n; ++i) {
            if (!rows[i].is_array() ||
                static_cast<int>(rows[i].size()) != ds.meta.d)
                bad_schema(lineno, "bag " + bag.id + ": instance " +
                                       std::to_string(i) + " must have exactly " +
                                       std::to_string(ds.meta.d) + " features");
            for (int c = 0; c < ds.meta.d; ++c) {
                if (!rows[i][c].is_number())
                    bad_schema(lineno, "bag " + bag.id + ": non-numeric feature");
                bag.instances.at(i, c) = rows[i][c].get<double>();
            }
        }
        if (!j.contains("candidates") || !j["candidates"].is_array() ||
            j["candidates"].empty())
            bad_schema(lineno, "bag " + bag.id + ": candidates must be a non-empty array");
        for (const auto& c : j["candidates"]) {
            if (!c.is_number_integer())
                bad_schema(lineno, "bag " + bag.id + ": non-integer candidate");
            bag.candidates.push_back(c.get<int>());
        }
        if (j.contains("true_label") && !j["true_label"].is_null()) {
            if (!j["true_label"].is_number_integer())
                bad_schema(lineno, "bag " + bag.id + ": true_label must be an integer or null");
            bag.true_label = j["true_label"].get<int>();
        }
        if (j.contains("positive_mask")) {
            if (!j["positive_mask"].is_array() ||
                static_cast<int>(j["positive_mask"].size()) != n)
                bad_schema(lineno, "bag " + bag.id + ": positive_mask must list one flag per instance");
            for (const auto& f : j["positive_mask"])
                bag.positive_mask.push_back(f.get<int>() ? 1 : 0);
        }
        ds.bags.push_back(std::move(bag));
    }
    if (!have_header) throw schema_error("empty dataset file: " + path);
    try {
        validate_dataset(ds);
    } catch (const schema_error& e) {
        throw schema_error(path + ": " + e.what());
    }
    return ds;
}

void validate_dataset(const Dataset& ds) {
    if (ds.meta.d < 1 || ds.meta.k < 2)
        throw schema_error("dataset needs d >= 1 and k >= 2");
    // Ids key the per-bag disambiguation weights and the attention dumps, so
    // they must be unique.
    std::unordered_set<std::string> seen;
    for (const Bag& bag : ds.bags)
        if (!seen.insert(bag.id).second)
            throw schema_error("duplicate bag id " + bag.id);
    for (const Bag& bag : ds.bags) {
        if (bag.instances.rows < 1 || bag.instances.cols != ds.meta.d)
            throw schema_error("bag " + bag.id + ": instance matrix is " +
                               bag.instances.shape_str() + ", want n x " +
                               std::to_string(ds.meta.d));
        if (bag.candidates.empty())
            throw schema_error("bag " + bag.id + ": empty candidate set");
        int prev = -1;
        for (int c : bag.candidates) {
            if (c < 0 || c >= ds.meta.k)
                throw schema_error("bag " + bag.id + ": candidate " +
                                   std::to_string(c) + " outside [0, " +
                                   std::to_string(ds.meta.k) + ")");
            if (c <= prev)
                throw schema_error("bag " + bag.id +
                                   ": candidates must be sorted and unique");
            prev = c;
        }
        if (bag.true_label && (*bag.true_label < 0 || *bag.true_label >= ds.meta.k))
            throw schema_error("bag " + bag.id + ": true_label outside label space");
        if (!bag.positive_mask.empty() &&
            static_cast<int>(bag.positive_mask.size()) != bag.instances.rows)
            throw schema_error("bag " + bag.id + ": positive_mask length mismatch");
    }
}

} // namespace mipl::data
