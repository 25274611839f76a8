#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jumpdiff/rng.hpp"
#include "jumpdiff/schedule.hpp"
#include "jumpdiff/state.hpp"
#include "jumpdiff/tape.hpp"

namespace jumpdiff {

// Backbone + heads. Set mode: per-component MLP encoder, mean-pooled context,
// per-component decoder conditioned on the context (deep-set style), so
// eps_pred is permutation-equivariant and the pooled heads are permutation-
// invariant. Ordered mode adds normalized-position input features and an
// insertion-index head over the n+1 gaps.
struct ArchConfig {
    std::string mode = "set";  // "set" | "ordered"
    int hidden = 32;
    int depth = 2;             // hidden layers per MLP, >= 1
    int time_feats = 16;       // sinusoidal features of t/T
    int d = 1;
    int max_components = 2;    // N
    bool direct_rate_head = false;  // optional softplus head for the rate ablation

    bool ordered() const { return mode == "ordered"; }
    void validate() const;
};

struct LayerSpec {
    std::string name;
    int off = 0;
    int len = 0;
    int rows = 0, cols = 0;  // cols == 0 marks a bias/vector entry
};

struct ModelParams {
    ArchConfig arch;
    std::vector<LayerSpec> layout;
    std::vector<double> flat;

    const LayerSpec& find(const std::string& name) const;
    std::span<const double> block(const LayerSpec& l) const {
        return {flat.data() + l.off, static_cast<size_t>(l.len)};
    }
};

// Weights Xavier-uniform, biases zero except the insertion log-std head bias
// which starts at log(0.5).
ModelParams init_params(const ArchConfig& arch, Rng& rng);

// Node handles for one evaluation of the heads on the tape.
struct HeadsNodes {
    Tape::Id x_in = -1;          // the n*d state input (query grad(x_in) for guidance)
    Tape::Id eps_pred = -1;      // n*d
    Tape::Id n0_logits = -1;     // N
    Tape::Id ins_index_logits = -1;  // n+1 (ordered mode only, else -1)
    Tape::Id ins_mean = -1;      // d
    Tape::Id ins_logstd = -1;    // d, clamped to [-5, 2]
    Tape::Id direct_rate = -1;   // scalar, only with direct_rate_head
};

HeadsNodes build_heads(Tape& tape, const ModelParams& params, const TransState& Xt, double t,
                       double horizon_T);

// Plain-value evaluation.
struct HeadsOutput {
    std::vector<double> eps_pred;
    std::vector<double> n0_logits;
    std::vector<double> ins_index_logits;  // empty in set mode
    std::vector<double> ins_mean;
    std::vector<double> ins_logstd;
    double direct_rate = 0.0;  // meaningful only with direct_rate_head
};

HeadsOutput forward_heads(const ModelParams& params, const TransState& Xt, double t,
                          double horizon_T);

// Gradient of a scalar loss built on a fresh tape; layout matches flat params.
// Throws on non-scalar or non-finite loss.
std::vector<double> grad(const ModelParams& params,
                         const std::function<Tape::Id(Tape&, const ModelParams&)>& build_loss);

// softmax as plain doubles (used by the sampler-side rate conversion).
std::vector<double> softmax_values(std::span<const double> logits);

std::vector<double> time_features(double t_over_T, int count);

}  // namespace jumpdiff
