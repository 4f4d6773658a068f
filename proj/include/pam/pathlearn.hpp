#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pam/autograd.hpp"
#include "pam/pathspace.hpp"
#include "pam/rng.hpp"
#include "pam/supernet.hpp"
#include "pam/synthdata.hpp"

namespace pam {

// Gumbel-softmax relaxation of a path: soft rows plus hardened decisions.
struct RelaxedPath {
    std::vector<nn::Var> soft;  // per stage, [bypass, execute], sums to 1
    Path hard;                  // argmax per row, tie -> lower index
    Tensor noise;               // the drawn Gumbel perturbations, stages x 2
};

RelaxedPath gumbel_sample(const std::vector<nn::Var>& logits, double tau, Rng& rng);

double uniform_prob(int stage_count);  // 1 / 2^n

// The n_g highest-cost feasible paths under the budget, descending cost,
// ties by ascending canonical index.
std::vector<Path> candidate_set(Flops budget, const CostTable& table, int n_g);

struct PriorBucket {
    Flops budget_lo = 0;
    Flops budget_hi = 0;
    // Categorical over canonical path indices; only nonzero entries stored.
    std::vector<std::pair<std::uint32_t, double>> probs;
};

// Monte Carlo estimate of the optimal-path distribution per budget bucket.
struct PriorTable {
    int stage_count = 0;
    int buckets = 0;
    Flops c_min = 0;
    Flops c_max = 0;
    int n_val = 0;
    int n_g = 0;
    std::uint64_t checkpoint_hash = 0;
    std::vector<PriorBucket> table;
};

std::uint64_t checkpoint_param_hash(const Checkpoint& ck);

// Representative budget per bucket: the smallest budget mapping to it, so
// every supported path is feasible for any budget in the bucket.
std::vector<Flops> bucket_grid(const CostBounds& bounds, int buckets);

// Per-path error rows over the validation set; injectable so the estimator
// can be exercised against a synthetic oracle.
using PathErrorsFn = std::function<std::vector<double>(const Path&)>;

PriorTable estimate_prior(const SupernetConfig& config, std::uint64_t checkpoint_hash, int n_use,
                          const PathErrorsFn& path_errors, int n_val, int n_g);
PriorTable estimate_prior(const Checkpoint& ck, const std::vector<MattingSample>& eval_set,
                          int n_val, int n_g, int workers = 1);

std::vector<Path> draw_from_prior(const PriorTable& prior, Flops budget, int n_e, Rng& rng);

// Batch-mean absolute alpha error over trimap-unknown pixels, per path.
std::vector<double> evaluate_candidates(const Checkpoint& ck, const std::vector<MattingSample>& batch,
                                        const std::vector<Path>& paths);

struct LabelDecision {
    Path chosen;
    double error = 0.0;
    bool from_network = false;  // true when the label is the network's own path
};

// Exact transcription of the online label rule: start from V only when
// C_v < C_g (strict), then replace on strict error improvement in order.
LabelDecision generate_label(const std::vector<Path>& candidates, const std::vector<double>& errors,
                             const Path& network_path, double network_error, Flops network_cost,
                             Flops budget);

// CSV `bucket,budget_lo,budget_hi,path,probability` + JSON sidecar (<path>.meta.json).
void save_prior(const PriorTable& prior, const std::string& path);
PriorTable load_prior(const std::string& path);

}  // namespace pam
