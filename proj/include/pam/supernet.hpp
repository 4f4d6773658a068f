#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pam/autograd.hpp"
#include "pam/pathspace.hpp"
#include "pam/tensor.hpp"

namespace pam {

struct SupernetConfig {
    int resolution = 64;
    int input_channels = 4;  // RGB + trimap plane
    std::vector<int> stem_channels = {16, 32};
    int stage_count = 4;
    int stage_channels = 32;
    int depthwise_kernel = 5;
    int expansion_factor = 2;
    int connect_reduction = 4;
    std::vector<int> pyramid_scales = {1, 2, 4};
    int embedding_buckets = 64;
    int embedding_dim = 16;
    int mlp_hidden = 32;

    int stage_resolution() const { return resolution / 4; }  // two stride-2 stem convs
    void validate() const;                                   // throws naming the offending field
    std::string canonical_string() const;
    std::uint64_t hash() const;
};

// Unified parameter container for the supernet: matting weights (stem, stages,
// connect, pyramid, decoder) and path-estimator weights (select.*, embed.*).
struct Checkpoint {
    std::uint32_t version = 1;
    SupernetConfig config;
    int stage = 1;  // training stage tag, 1..3
    int epoch = 0;
    std::map<std::string, Tensor> params;

    std::uint64_t config_hash() const { return config.hash(); }
};

bool is_path_estimator_param(const std::string& name);

// Kaiming-initialized checkpoint; the second connect conv starts at zero so a
// bypassed stage is an identity map at init.
Checkpoint build(const SupernetConfig& config, std::uint64_t seed);

std::int64_t parameter_count(const Checkpoint& ck);

CostTable build_cost_table(const SupernetConfig& config);

// Leaf Vars over a checkpoint's parameters; grads are read back by name.
struct ParamVars {
    std::map<std::string, nn::Var> vars;

    static ParamVars from(const Checkpoint& ck);
    const nn::Var& at(const std::string& name) const;
};

int constraint_bucket(Flops budget, const CostBounds& bounds, int buckets);

// Row of the learned embedding table for a bucketed budget.
nn::Var embed_constraint(Flops budget, const CostBounds& bounds, const SupernetConfig& config,
                         const ParamVars& params);

struct SelectionOut {
    nn::Var refined;                 // F_rf, same shape as F_s
    nn::Var squeezed;                // F_gs
    std::optional<nn::Var> logits;   // Q_e [bypass, execute]; set when F_c given
};

SelectionOut select_path_layer(const nn::Var& feature, const std::optional<nn::Var>& constraint,
                               int stage_index, const SupernetConfig& config,
                               const ParamVars& params);

nn::Var connect_layer(const nn::Var& src, int stage_index, const SupernetConfig& config,
                      const ParamVars& params);

nn::Var stage_block(const nn::Var& src, int stage_index, const SupernetConfig& config,
                    const ParamVars& params);

// Full forward along a fixed path; gradient-capable when params are leaves.
nn::Var forward_fixed(const SupernetConfig& config, const ParamVars& params, const Tensor& image,
                      const Tensor& trimap, const Path& path);

// Inference convenience: alpha matte (H×W tensor) along a fixed path.
Tensor forward_path(const Checkpoint& ck, const Tensor& image, const Tensor& trimap,
                    const Path& path);

struct BudgetedResult {
    Tensor alpha;
    Path path;
    std::vector<std::array<double, 2>> logits;  // one [bypass, execute] pair per stage
};

// Greedy argmax routing (tie -> bypass) with smallest-margin execute->bypass
// projection until the path fits the budget.
BudgetedResult forward_budgeted(const Checkpoint& ck, const Tensor& image, const Tensor& trimap,
                                Flops budget);

struct RelaxedResult {
    nn::Var alpha;
    std::vector<nn::Var> soft;    // per stage: softmax((Q_e + G)/tau), [bypass, execute]
    std::vector<nn::Var> logits;  // per stage: raw Q_e
    Path hard;                    // hardened decisions used in the forward routing
};

// Straight-through routing: hard one-hot forward, soft gradients. noise is
// stage_count x 2 Gumbel perturbations.
RelaxedResult forward_relaxed(const SupernetConfig& config, const ParamVars& params,
                              const Tensor& image, const Tensor& trimap, Flops budget,
                              double tau, const Tensor& noise);

}  // namespace pam
