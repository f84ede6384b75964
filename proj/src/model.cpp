#include "mipl/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "mipl/errors.hpp"

namespace mipl::model {

using json = nlohmann::ordered_json;

namespace {

Matrix init_uniform(int rows, int cols, double bound, rng::Engine& eng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = eng.uniform(-bound, bound);
    return m;
}

void check_config(const ModelConfig& cfg, int d, int k) {
    if (d < 1) throw config_error("model: input dimension must be >= 1");
    if (k < 2) throw config_error("model: need at least 2 classes");
    if (cfg.attn_dim < 1) throw config_error("model: attn_dim must be >= 1");
    if (cfg.identity_extractor) {
        if (cfg.embed_dim != d)
            throw config_error("model: identity extractor requires embed_dim == d");
        return;
    }
    if (cfg.embed_dim < 1) throw config_error("model: embed_dim must be >= 1");
    for (int h : cfg.hidden)
        if (h < 1) throw config_error("model: hidden widths must be >= 1");
}

} // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, int d, int k,
                              rng::Engine& eng) {
    check_config(cfg, d, k);
    ModelParams p;
    p.input_dim = d;
    p.num_classes = k;
    p.cfg = cfg;
    if (!cfg.identity_extractor) {
        int in = d;
        std::vector<int> outs = cfg.hidden;
        outs.push_back(cfg.embed_dim);
        for (int out : outs) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            LayerParams layer;
            layer.weight = init_uniform(in, out, bound, eng);
            layer.bias = init_uniform(out, 1, bound, eng);
            p.extractor.push_back(std::move(layer));
            in = out;
        }
    }
    const int l = p.embed_dim();
    const double bl = 1.0 / std::sqrt(static_cast<double>(l));
    const double ba = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
    p.attn_tanh_w = init_uniform(l, cfg.attn_dim, bl, eng);
    p.attn_gate_w = init_uniform(l, cfg.attn_dim, bl, eng);
    p.attn_score_w = init_uniform(cfg.attn_dim, 1, ba, eng);
    p.cls_weight = init_uniform(l, k, bl, eng);
    p.cls_bias = init_uniform(k, 1, bl, eng);
    return p;
}

int ModelParams::embed_dim() const {
    return extractor.empty() ? input_dim : extractor.back().weight.cols;
}

std::vector<Matrix*> ModelParams::matrices() {
    std::vector<Matrix*> out;
    for (auto& layer : extractor) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&attn_tanh_w);
    out.push_back(&attn_gate_w);
    out.push_back(&attn_score_w);
    out.push_back(&cls_weight);
    out.push_back(&cls_bias);
    return out;
}

std::vector<const Matrix*> ModelParams::matrices() const {
    std::vector<const Matrix*> out;
    for (const auto& layer : extractor) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&attn_tanh_w);
    out.push_back(&attn_gate_w);
    out.push_back(&attn_score_w);
    out.push_back(&cls_weight);
    out.push_back(&cls_bias);
    return out;
}

std::vector<std::string> ModelParams::names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < extractor.size(); ++i) {
        out.push_back("extractor." + std::to_string(i) + ".weight");
        out.push_back("extractor." + std::to_string(i) + ".bias");
    }
    out.push_back("attention.tanh_weight");
    out.push_back("attention.gate_weight");
    out.push_back("attention.score_weight");
    out.push_back("classifier.weight");
    out.push_back("classifier.bias");
    return out;
}

ParamNodes bind_flat(ad::Tape& tape, const ModelParams& shapes,
                     const std::vector<ad::NodePtr>& flat) {
    const std::size_t expected = shapes.extractor.size() * 2 + 5;
    if (flat.size() != expected)
        throw contract_error("bind_flat: expected " + std::to_string(expected) +
                             " parameter nodes, got " + std::to_string(flat.size()));
    ParamNodes p;
    p.act = shapes.cfg.activation;
    p.leaves = flat;
    std::size_t i = 0;
    for (std::size_t layer = 0; layer < shapes.extractor.size(); ++layer) {
        ParamNodes::Layer pl;
        pl.weight = flat[i++];
        pl.bias = flat[i++];
        pl.weight_t = tape.transpose(pl.weight);
        p.extractor.push_back(std::move(pl));
    }
    p.attn_tanh_w = flat[i++];
    p.attn_gate_w = flat[i++];
    p.attn_score_w = flat[i++];
    p.cls_weight = flat[i++];
    p.cls_bias = flat[i++];
    p.attn_tanh_w_t = tape.transpose(p.attn_tanh_w);
    p.attn_gate_w_t = tape.transpose(p.attn_gate_w);
    p.attn_score_w_t = tape.transpose(p.attn_score_w);
    p.cls_weight_t = tape.transpose(p.cls_weight);
    return p;
}

ParamNodes bind(ad::Tape& tape, const ModelParams& params) {
    std::vector<ad::NodePtr> flat;
    for (const Matrix* m : params.matrices()) flat.push_back(tape.leaf(*m));
    return bind_flat(tape, params, flat);
}

namespace {

ad::NodePtr activate(ad::Tape& tape, Activation act, const ad::NodePtr& x) {
    return act == Activation::tanh ? tape.tanh(x) : tape.relu(x);
}

} // namespace

ad::NodePtr extract(ad::Tape& tape, const ParamNodes& p, const Matrix& instances) {
    // Instances arrive row-per-instance; embeddings live column-per-instance.
    Matrix xt(instances.cols, instances.rows);
    for (int i = 0; i < instances.rows; ++i)
        for (int j = 0; j < instances.cols; ++j) xt.at(j, i) = instances.at(i, j);
    ad::NodePtr h = tape.constant(std::move(xt));
    for (const auto& layer : p.extractor)
        h = activate(tape, p.act,
                     tape.add_colvec(tape.matmul(layer.weight_t, h), layer.bias));
    return h;
}

ad::NodePtr attention_scores(ad::Tape& tape, const ParamNodes& p,
                             const ad::NodePtr& embeddings, double tau) {
    ad::NodePtr gated = tape.mul(tape.tanh(tape.matmul(p.attn_tanh_w_t, embeddings)),
                                 tape.sigmoid(tape.matmul(p.attn_gate_w_t, embeddings)));
    ad::NodePtr logits = tape.matmul(p.attn_score_w_t, gated);
    return tape.softmax_t(logits, tau);
}

ad::NodePtr normalize_scores(ad::Tape& tape, const ad::NodePtr& raw) {
    if (raw->value.rows != 1)
        throw dim_error("normalize_scores: expected a 1xN row, got " +
                        raw->value.shape_str());
    const int n = raw->value.cols;
    if (n == 1) return raw; // single instance: softmax already pinned it to 1
    ad::NodePtr mu = tape.mean(raw);
    ad::NodePtr centered = tape.sub_scalar(raw, mu);
    ad::NodePtr var = tape.scale(tape.sum(tape.mul(centered, centered)),
                                 1.0 / (n - 1));
    ad::NodePtr sd = tape.clamp_min(tape.sqrt(var), 1e-12);
    return tape.div_scalar(centered, sd);
}

ad::NodePtr aggregate(ad::Tape& tape, const ad::NodePtr& embeddings,
                      const ad::NodePtr& norm_scores) {
    return tape.matmul(embeddings, tape.transpose(norm_scores));
}

ad::NodePtr classify(ad::Tape& tape, const ParamNodes& p, const ad::NodePtr& bag_vec) {
    ad::NodePtr logits = tape.add(tape.matmul(p.cls_weight_t, bag_vec), p.cls_bias);
    return tape.softmax_t(tape.transpose(logits), 1.0);
}

Forward forward(ad::Tape& tape, const ParamNodes& p, const Matrix& instances,
                double tau) {
    Forward f;
    f.embeddings = extract(tape, p, instances);
    f.raw_scores = attention_scores(tape, p, f.embeddings, tau);
    f.norm_scores = normalize_scores(tape, f.raw_scores);
    f.bag_vector = aggregate(tape, f.embeddings, f.norm_scores);
    f.probs = classify(tape, p, f.bag_vector);
    return f;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.data;
    return j;
}

Matrix matrix_from_json(const json& j, const std::string& name) {
    if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
        throw schema_error("checkpoint: matrix " + name + " needs rows/cols/data");
    Matrix m(j["rows"].get<int>(), j["cols"].get<int>());
    const auto& data = j["data"];
    if (!data.is_array() || data.size() != m.size())
        throw schema_error("checkpoint: matrix " + name + " data length mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = data[i].get<double>();
    return m;
}

} // namespace

void save_checkpoint(const ModelParams& params, const TemperatureSchedule& sched,
                     const std::string& path) {
    json j;
    j["format"] = "mipl-checkpoint-v1";
    j["d"] = params.input_dim;
    j["k"] = params.num_classes;
    j["embed_dim"] = params.cfg.embed_dim;
    j["attn_dim"] = params.cfg.attn_dim;
    j["hidden"] = params.cfg.hidden;
    j["identity_extractor"] = params.cfg.identity_extractor;
    j["activation"] = params.cfg.activation == Activation::tanh ? "tanh" : "relu";
    j["tau_final"] = sched.current;
    json sj;
    sj["initial"] = sched.initial;
    sj["floor"] = sched.floor;
    sj["decay"] = sched.decay;
    sj["current"] = sched.current;
    j["schedule"] = std::move(sj);
    json pj;
    const auto mats = params.matrices();
    const auto names = params.names();
    for (std::size_t i = 0; i < mats.size(); ++i)
        pj[names[i]] = matrix_to_json(*mats[i]);
    j["params"] = std::move(pj);
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw config_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open for reading: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "mipl-checkpoint-v1")
        throw schema_error(path + ": not a recognized checkpoint");
    Checkpoint ck;
    ModelParams& p = ck.params;
    p.input_dim = j["d"].get<int>();
    p.num_classes = j["k"].get<int>();
    p.cfg.embed_dim = j["embed_dim"].get<int>();
    p.cfg.attn_dim = j["attn_dim"].get<int>();
    p.cfg.hidden = j["hidden"].get<std::vector<int>>();
    p.cfg.identity_extractor = j["identity_extractor"].get<bool>();
    const std::string act = j["activation"].get<std::string>();
    if (act == "tanh")
        p.cfg.activation = Activation::tanh;
    else if (act == "relu")
        p.cfg.activation = Activation::relu;
    else
        throw schema_error(path + ": unknown activation " + act);
    const auto& sj = j["schedule"];
    ck.schedule.initial = sj["initial"].get<double>();
    ck.schedule.floor = sj["floor"].get<double>();
    ck.schedule.decay = sj["decay"].get<double>();
    ck.schedule.current = sj["current"].get<double>();

    if (!p.cfg.identity_extractor) {
        std::vector<int> outs = p.cfg.hidden;
        outs.push_back(p.cfg.embed_dim);
        p.extractor.resize(outs.size());
    }
    const auto names = p.names();
    const auto mats = p.matrices();
    const auto& pj = j["params"];
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!pj.contains(names[i]))
            throw schema_error(path + ": checkpoint missing matrix " + names[i]);
        *mats[i] = matrix_from_json(pj[names[i]], names[i]);
    }
    return ck;
}

} // namespace mipl::model
