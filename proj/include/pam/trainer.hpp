#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pam/losses.hpp"
#include "pam/pathlearn.hpp"
#include "pam/rng.hpp"
#include "pam/supernet.hpp"
#include "pam/synthdata.hpp"
#include "pam/tensor.hpp"

namespace pam {

struct TrainConfig {
    int epochs_stage1 = 20;
    int epochs_stage2 = 5;
    int epochs_stage3 = 20;
    int batch_size = 4;
    double lr = 3e-4;
    double weight_decay = 3e-5;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int n_eval_paths = 4;   // N^e: candidates scored per iteration
    int n_grid_paths = 10;  // N^g: candidate set size during prior estimation
    int n_val = 200;        // samples used by estimate_prior
    double tau = 1.0;
    int train_count = 2000;
    int eval_count = 200;
    LossWeights weights;

    void validate() const;
    std::string canonical_string() const;
};

// Cosine annealing from lr0 at step 0 to 0 at step == total.
double cosine_lr(std::int64_t step, std::int64_t total, double lr0);

// Rectified Adam with decoupled-style L2 applied to the raw gradient.
class RAdam {
public:
    RAdam(double beta1, double beta2, double weight_decay);

    // Applies one update in place; params without a grad entry are untouched
    // beyond weight decay accumulation being skipped (grad treated as absent).
    void step(std::map<std::string, Tensor>& params,
              const std::map<std::string, Tensor>& grads, double lr);

    std::int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, weight_decay_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_alpha = 0.0;
    double loss_ds = 0.0;
    double loss_pt = 0.0;
    double frac_network = 0.0;  // share of labels taken from the network path
};

struct StageResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

// Deterministic sample streams derived from the data seed.
MattingSample train_sample(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t index);
MattingSample eval_sample(const DataConfig& cfg, std::uint64_t data_seed,
                          std::uint64_t index);
MattingSample val_sample(const DataConfig& cfg, std::uint64_t data_seed,
                         std::uint64_t index);

// Uniform draw over all 2^n stage decision vectors.
Path sample_uniform_path(Rng& rng, int stage_count);

// Stage 1: all stages execute, alpha supervision only.
StageResult run_stage1(const Checkpoint& in, const TrainConfig& tc,
                       const DataConfig& dc, std::uint64_t data_seed);

// Stage 2: one uniformly sampled path per iteration, alpha supervision only.
StageResult run_stage2(const Checkpoint& in, const TrainConfig& tc,
                       const DataConfig& dc, std::uint64_t data_seed);

// Stage 3: budget-conditioned path learning against `prior`, distilling from
// `teacher` (a stage-1-or-later checkpoint evaluated on its full path).
StageResult run_stage3(const Checkpoint& in, const Checkpoint& teacher,
                       const PriorTable& prior, const TrainConfig& tc,
                       const DataConfig& dc, std::uint64_t data_seed);

struct EvalRow {
    std::int64_t budget = 0;
    double flops_mean = 0.0;
    double sad = 0.0;
    double mse = 0.0;
    double grad = 0.0;
    double conn = 0.0;
    double l1_unknown = 0.0;
};

// Mean metrics over the eval stream at each budget, using budget-projected
// inference. Every selected path must fit the budget; violations throw.
std::vector<EvalRow> evaluate_model(const Checkpoint& ck,
                                    const std::vector<std::int64_t>& budgets,
                                    const TrainConfig& tc, const DataConfig& dc,
                                    std::uint64_t data_seed, int workers = 1);

}  // namespace pam
