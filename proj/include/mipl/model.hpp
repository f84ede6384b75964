#ifndef MIPL_MODEL_HPP
#define MIPL_MODEL_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mipl/data.hpp"
#include "mipl/matrix.hpp"
#include "mipl/rng.hpp"
#include "mipl/tape.hpp"

namespace mipl::model {

enum class Activation { tanh, relu };

struct ModelConfig {
    int embed_dim = 64;           // width of instance embeddings
    int attn_dim = 128;           // attention hidden width
    std::vector<int> hidden{64};  // extractor hidden widths; {} = single layer
    Activation activation = Activation::tanh;
    bool identity_extractor = false; // embeddings are raw features (needs embed_dim == d)
};

// Per-epoch multiplicative temperature decay clamped at a floor:
// current <- max(floor, current * decay), never increasing.
struct TemperatureSchedule {
    double initial = 5.0;
    double floor = 0.1;
    double decay = 0.95;
    double current = 5.0;

    void anneal() { current = std::max(floor, current * decay); }
};

struct LayerParams {
    Matrix weight; // in x out
    Matrix bias;   // out x 1
};

struct ModelParams {
    int input_dim = 0;
    int num_classes = 0;
    ModelConfig cfg;

    std::vector<LayerParams> extractor; // empty when identity_extractor
    Matrix attn_tanh_w;  // embed x attn, feeds the tanh branch of the gate
    Matrix attn_gate_w;  // embed x attn, feeds the sigmoid branch
    Matrix attn_score_w; // attn x 1, projects gated features to one score
    Matrix cls_weight;   // embed x k
    Matrix cls_bias;     // k x 1

    // Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] per matrix, fan_in = input
    // width of the layer the matrix belongs to. Draw order is fixed, so one
    // engine yields reproducible parameters.
    static ModelParams init(const ModelConfig& cfg, int d, int k, rng::Engine& eng);

    int embed_dim() const;

    // All trainable matrices, in a fixed order shared with names().
    std::vector<Matrix*> matrices();
    std::vector<const Matrix*> matrices() const;
    std::vector<std::string> names() const;
};

// Parameter matrices bound to one tape as leaves, plus pre-transposed views
// so each forward pass multiplies without re-materializing transposes.
struct ParamNodes {
    Activation act = Activation::tanh;
    struct Layer {
        ad::NodePtr weight, bias, weight_t;
    };
    std::vector<Layer> extractor;
    ad::NodePtr attn_tanh_w, attn_gate_w, attn_score_w;
    ad::NodePtr attn_tanh_w_t, attn_gate_w_t, attn_score_w_t;
    ad::NodePtr cls_weight, cls_bias, cls_weight_t;

    // Leaves in matrices() order; grads are read back from these.
    std::vector<ad::NodePtr> leaves;
};

ParamNodes bind(ad::Tape& tape, const ModelParams& params);
// Same wiring over caller-provided leaves (matrices() order); lets the
// gradient checker perturb raw matrices and rebuild.
ParamNodes bind_flat(ad::Tape& tape, const ModelParams& shapes,
                     const std::vector<ad::NodePtr>& flat);

// H: embeddings, one column per instance (embed x n).
ad::NodePtr extract(ad::Tape& tape, const ParamNodes& p, const Matrix& instances);

// Gated two-branch attention with tempered softmax; 1 x n, entries in (0, 1],
// summing to 1. Invariant to instance order up to the same permutation.
ad::NodePtr attention_scores(ad::Tape& tape, const ParamNodes& p,
                             const ad::NodePtr& embeddings, double tau);

// Shifts to zero mean and divides by the sample standard deviation
// (n-1 denominator). Singleton input skips normalization; a constant input
// maps to the zero vector via an epsilon-guarded denominator.
ad::NodePtr normalize_scores(ad::Tape& tape, const ad::NodePtr& raw);

// z = H * A'^T: attention-weighted combination of instance embeddings.
ad::NodePtr aggregate(ad::Tape& tape, const ad::NodePtr& embeddings,
                      const ad::NodePtr& norm_scores);

// Linear head + softmax (temperature 1); 1 x k probability row.
ad::NodePtr classify(ad::Tape& tape, const ParamNodes& p, const ad::NodePtr& bag_vec);

struct Forward {
    ad::NodePtr embeddings;  // embed x n
    ad::NodePtr raw_scores;  // 1 x n, post-softmax, pre-normalization
    ad::NodePtr norm_scores; // 1 x n
    ad::NodePtr bag_vector;  // embed x 1
    ad::NodePtr probs;       // 1 x k
};

Forward forward(ad::Tape& tape, const ParamNodes& p, const Matrix& instances,
                double tau);

// Checkpoint: single JSON document with dimensions, schedule state, and every
// parameter matrix as shape + flat row-major array. Reals round-trip
// bit-exactly.
struct Checkpoint {
    ModelParams params;
    TemperatureSchedule schedule;
};

void save_checkpoint(const ModelParams& params, const TemperatureSchedule& sched,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace mipl::model

#endif
