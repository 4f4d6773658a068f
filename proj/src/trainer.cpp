#include "pam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pam/losses.hpp"
#include "pam/metrics.hpp"
#include "pam/util.hpp"

namespace pam {

namespace {

constexpr std::uint64_t kAugmentKey = 0x41554731;
constexpr std::uint64_t kEvalKey = 0x4556414c;
constexpr std::uint64_t kValKey = 0x56414c44;
constexpr std::uint64_t kShuffleKey = 0x53485546;
constexpr std::uint64_t kPathKey = 0x50415448;
constexpr std::uint64_t kBudgetKey = 0x42554447;
constexpr std::uint64_t kGumbelKey = 0x47554d42;
constexpr std::uint64_t kPriorKey = 0x5052494f;

Rng stream(std::uint64_t data_seed, std::uint64_t purpose, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(data_seed).split(purpose).split(a).split(b);
}

}  // namespace

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("TrainConfig." + what);
    };
    need(epochs_stage1 >= 0, "epochs_stage1: must be >= 0");
    need(epochs_stage2 >= 0, "epochs_stage2: must be >= 0");
    need(epochs_stage3 >= 0, "epochs_stage3: must be >= 0");
    need(batch_size >= 1, "batch_size: must be >= 1");
    need(lr > 0.0, "lr: must be positive");
    need(weight_decay >= 0.0, "weight_decay: must be >= 0");
    need(beta1 >= 0.0 && beta1 < 1.0, "beta1: must be in [0, 1)");
    need(beta2 >= 0.0 && beta2 < 1.0, "beta2: must be in [0, 1)");
    need(n_eval_paths >= 1, "n_eval_paths: must be >= 1");
    need(n_grid_paths >= 1, "n_grid_paths: must be >= 1");
    need(n_val >= 1, "n_val: must be >= 1");
    need(tau > 0.0, "tau: must be positive");
    need(train_count >= batch_size, "train_count: must be >= batch_size");
    need(eval_count >= 1, "eval_count: must be >= 1");
    weights.validate();
}

std::string TrainConfig::canonical_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "epochs=" << epochs_stage1 << "," << epochs_stage2 << "," << epochs_stage3
       << ";batch=" << batch_size << ";lr=" << lr << ";wd=" << weight_decay << ";beta=" << beta1
       << "," << beta2 << ";ne=" << n_eval_paths << ";ng=" << n_grid_paths << ";nval=" << n_val
       << ";tau=" << tau << ";train=" << train_count << ";eval=" << eval_count << ";w="
       << weights.lambda_alpha << "," << weights.lambda_ds << "," << weights.lambda_pt << ","
       << weights.lambda_l1 << "," << weights.lambda_comp << "," << weights.lambda_lap << ","
       << weights.eps;
    return os.str();
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr0) {
    if (total <= 0) throw std::invalid_argument("cosine_lr: total must be positive");
    if (step < 0 || step > total) throw std::invalid_argument("cosine_lr: step out of range");
    double phase = static_cast<double>(step) / static_cast<double>(total);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * phase));
}

RAdam::RAdam(double beta1, double beta2, double weight_decay)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay) {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("RAdam: betas must be in [0, 1)");
}

void RAdam::step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                 double lr) {
    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
    const double rho_t =
        rho_inf - 2.0 * static_cast<double>(t_) * std::pow(beta2_, static_cast<double>(t_)) / bias2;
    const bool rectified = rho_t > 4.0;
    double rect = 0.0;
    if (rectified) {
        rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                         ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    constexpr double kEps = 1e-8;

    for (auto& [name, p] : params) {
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor(p.dims(), 0.0)).first;
            v_.emplace(name, Tensor(p.dims(), 0.0));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        auto git = grads.find(name);
        const Tensor* g = git == grads.end() ? nullptr : &git->second;
        if (g && g->numel() != p.numel())
            throw std::invalid_argument("RAdam::step: grad shape mismatch for " + name);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            double gi = (g ? (*g)[i] : 0.0) + weight_decay_ * p[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            double m_hat = m[i] / bias1;
            if (rectified) {
                double v_hat = std::sqrt(v[i] / bias2);
                p[i] -= lr * rect * m_hat / (v_hat + kEps);
            } else {
                p[i] -= lr * m_hat;
            }
        }
    }
}

MattingSample train_sample(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t index) {
    MattingSample s = generate_sample(data_seed, index, cfg);
    Rng rng = stream(data_seed, kAugmentKey, index, 0);
    return augment(s, rng, cfg);
}

MattingSample eval_sample(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t index) {
    return generate_sample(data_seed ^ kEvalKey, index, cfg);
}

MattingSample val_sample(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t index) {
    return generate_sample(data_seed ^ kValKey, index, cfg);
}

Path sample_uniform_path(Rng& rng, int stage_count) {
    if (stage_count < 1 || stage_count > 20)
        throw std::invalid_argument("sample_uniform_path: stage_count out of range");
    std::int64_t hi = (std::int64_t{1} << stage_count) - 1;
    return Path::from_index(static_cast<std::uint32_t>(rng.uniform_int(0, hi)), stage_count);
}

namespace {

std::vector<std::uint64_t> epoch_order(int count, std::uint64_t data_seed, int stage, int epoch) {
    std::vector<std::uint64_t> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = stream(data_seed, kShuffleKey, static_cast<std::uint64_t>(stage),
                     static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::map<std::string, Tensor> collect_grads(const ParamVars& pv) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : pv.vars) {
        if (!var->grad.empty()) grads.emplace(name, var->grad);
    }
    return grads;
}

struct IterLoss {
    nn::Var total;
    double alpha = 0.0;
    double ds = 0.0;
    double pt = 0.0;
    double frac_network = 0.0;
};

using IterFn =
    std::function<IterLoss(const ParamVars&, const std::vector<MattingSample>&,
                           const std::vector<std::uint64_t>& indices, int epoch, int iter,
                           std::int64_t global_step)>;

StageResult run_epochs(const Checkpoint& in, const TrainConfig& tc, const DataConfig& dc,
                       std::uint64_t data_seed, int stage_tag, int epochs, const IterFn& iter_fn) {
    tc.validate();
    in.config.validate();
    StageResult out;
    out.checkpoint = in;
    out.checkpoint.stage = stage_tag;
    out.checkpoint.epoch = 0;

    const int iters_per_epoch = tc.train_count / tc.batch_size;
    const std::int64_t total_steps = static_cast<std::int64_t>(epochs) * iters_per_epoch;
    if (total_steps == 0) return out;

    RAdam opt(tc.beta1, tc.beta2, tc.weight_decay);
    std::int64_t global_step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<std::uint64_t> order = epoch_order(tc.train_count, data_seed, stage_tag, epoch);
        EpochLog log;
        log.epoch = epoch;
        log.lr = cosine_lr(global_step, total_steps, tc.lr);
        for (int iter = 0; iter < iters_per_epoch; ++iter) {
            std::vector<MattingSample> batch;
            std::vector<std::uint64_t> indices;
            batch.reserve(static_cast<std::size_t>(tc.batch_size));
            for (int b = 0; b < tc.batch_size; ++b) {
                indices.push_back(order[static_cast<std::size_t>(iter) * tc.batch_size + b]);
                batch.push_back(train_sample(dc, data_seed, indices.back()));
            }

            ParamVars pv = ParamVars::from(out.checkpoint);
            IterLoss loss = iter_fn(pv, batch, indices, epoch, iter, global_step);
            double total_value = loss.total->value.data()[0];
            if (!std::isfinite(total_value)) {
                std::ostringstream os;
                os << "training diverged: non-finite loss at stage " << stage_tag << " epoch "
                   << epoch << " iter " << iter;
                throw std::runtime_error(os.str());
            }
            nn::backward(loss.total);
            std::map<std::string, Tensor> grads = collect_grads(pv);
            double lr = cosine_lr(global_step, total_steps, tc.lr);
            opt.step(out.checkpoint.params, grads, lr);

            log.loss_total += total_value;
            log.loss_alpha += loss.alpha;
            log.loss_ds += loss.ds;
            log.loss_pt += loss.pt;
            log.frac_network += loss.frac_network;
            ++global_step;
        }
        log.loss_total /= iters_per_epoch;
        log.loss_alpha /= iters_per_epoch;
        log.loss_ds /= iters_per_epoch;
        log.loss_pt /= iters_per_epoch;
        log.frac_network /= iters_per_epoch;
        out.log.push_back(log);
        out.checkpoint.epoch = epoch + 1;
    }
    return out;
}

IterLoss alpha_only_iteration(const SupernetConfig& config, const ParamVars& pv,
                              const std::vector<MattingSample>& batch, const Path& path,
                              const LossWeights& w) {
    nn::Var sum;
    for (const MattingSample& s : batch) {
        Tensor region = unknown_region(s.trimap);
        nn::Var pred = forward_fixed(config, pv, s.image, s.trimap, path);
        nn::Var la = alpha_loss(pred, s.alpha, s.fg, s.bg, s.image, region, w);
        sum = sum ? nn::add(sum, la) : la;
    }
    nn::Var mean = nn::scale(sum, 1.0 / static_cast<double>(batch.size()));
    IterLoss out;
    out.alpha = mean->value.data()[0];
    out.total = nn::scale(mean, w.lambda_alpha);
    return out;
}

}  // namespace

StageResult run_stage1(const Checkpoint& in, const TrainConfig& tc, const DataConfig& dc,
                       std::uint64_t data_seed) {
    if (in.stage > 1) throw std::invalid_argument("run_stage1: checkpoint already past stage 1");
    const Path full = all_execute(in.config.stage_count);
    return run_epochs(in, tc, dc, data_seed, 1, tc.epochs_stage1,
                      [&](const ParamVars& pv, const std::vector<MattingSample>& batch,
                          const std::vector<std::uint64_t>&, int, int, std::int64_t) {
                          return alpha_only_iteration(in.config, pv, batch, full, tc.weights);
                      });
}

StageResult run_stage2(const Checkpoint& in, const TrainConfig& tc, const DataConfig& dc,
                       std::uint64_t data_seed) {
    if (in.stage < 1) throw std::invalid_argument("run_stage2: needs a stage-1 checkpoint");
    return run_epochs(in, tc, dc, data_seed, 2, tc.epochs_stage2,
                      [&](const ParamVars& pv, const std::vector<MattingSample>& batch,
                          const std::vector<std::uint64_t>&, int epoch, int iter, std::int64_t) {
                          Rng rng = stream(data_seed, kPathKey, static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(iter));
                          Path path = sample_uniform_path(rng, in.config.stage_count);
                          return alpha_only_iteration(in.config, pv, batch, path, tc.weights);
                      });
}

StageResult run_stage3(const Checkpoint& in, const Checkpoint& teacher, const PriorTable& prior,
                       const TrainConfig& tc, const DataConfig& dc, std::uint64_t data_seed) {
    if (in.stage < 2) throw std::invalid_argument("run_stage3: needs a stage-2 checkpoint");
    if (teacher.stage < 1) throw std::invalid_argument("run_stage3: teacher must be trained");
    if (prior.checkpoint_hash != checkpoint_param_hash(in))
        throw HashMismatchError("run_stage3: prior was estimated from a different checkpoint");
    const CostTable table = build_cost_table(in.config);
    const CostBounds bounds = cost_bounds(table);
    if (prior.stage_count != in.config.stage_count || prior.c_min != bounds.c_min ||
        prior.c_max != bounds.c_max)
        throw HashMismatchError("run_stage3: prior cost range does not match the checkpoint");

    const Path teacher_path = all_execute(teacher.config.stage_count);
    const int n = in.config.stage_count;

    Checkpoint snapshot = in;  // refreshed every iteration for candidate scoring
    // The teacher and the dataset are both fixed, so its predictions are
    // computed once per sample and reused across epochs.
    std::vector<Tensor> teacher_cache(static_cast<std::size_t>(tc.train_count));
    auto iter_fn = [&](const ParamVars& pv, const std::vector<MattingSample>& batch,
                       const std::vector<std::uint64_t>& indices, int epoch, int iter,
                       std::int64_t) {
        for (const auto& [name, var] : pv.vars) snapshot.params.at(name) = var->value;

        Rng budget_rng = stream(data_seed, kBudgetKey, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(iter));
        Rng prior_rng = stream(data_seed, kPriorKey, static_cast<std::uint64_t>(epoch),
                               static_cast<std::uint64_t>(iter));
        Rng gumbel_rng = stream(data_seed, kGumbelKey, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(iter));

        Flops budget = budget_rng.uniform_int(bounds.c_min, bounds.c_max);
        std::vector<Path> candidates = draw_from_prior(prior, budget, tc.n_eval_paths, prior_rng);
        std::vector<double> errors = evaluate_candidates(snapshot, batch, candidates);

        IterLoss out;
        nn::Var sum;
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const MattingSample& s = batch[bi];
            Tensor noise({n, 2});
            for (int i = 0; i < 2 * n; ++i) noise.data()[static_cast<std::size_t>(i)] = gumbel_rng.gumbel();

            RelaxedResult rel =
                forward_relaxed(in.config, pv, s.image, s.trimap, budget, tc.tau, noise);
            Tensor region = unknown_region(s.trimap);
            double e_net = mean_abs_error(rel.alpha->value, s.alpha, region);
            Flops c_net = path_cost(rel.hard, table);
            LabelDecision label =
                generate_label(candidates, errors, rel.hard, e_net, c_net, budget);

            Tensor& teacher_pred = teacher_cache[static_cast<std::size_t>(indices[bi])];
            if (teacher_pred.empty())
                teacher_pred = forward_path(teacher, s.image, s.trimap, teacher_path);
            nn::Var la = alpha_loss(rel.alpha, s.alpha, s.fg, s.bg, s.image, region, tc.weights);
            nn::Var lds = distillation_loss(rel.alpha, teacher_pred, region, tc.weights.eps);
            nn::Var lpt = path_loss(rel.logits, label.chosen);
            nn::Var lt = total_loss(la, lds, lpt, tc.weights);
            sum = sum ? nn::add(sum, lt) : lt;

            out.alpha += la->value.data()[0];
            out.ds += lds->value.data()[0];
            out.pt += lpt->value.data()[0];
            if (label.from_network) out.frac_network += 1.0;
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        out.total = nn::scale(sum, inv);
        out.alpha *= inv;
        out.ds *= inv;
        out.pt *= inv;
        out.frac_network *= inv;
        return out;
    };
    return run_epochs(in, tc, dc, data_seed, 3, tc.epochs_stage3, iter_fn);
}

std::vector<EvalRow> evaluate_model(const Checkpoint& ck, const std::vector<std::int64_t>& budgets,
                                    const TrainConfig& tc, const DataConfig& dc,
                                    std::uint64_t data_seed, int workers) {
    if (workers < 1) throw std::invalid_argument("evaluate_model: workers must be >= 1");
    const CostTable table = build_cost_table(ck.config);

    std::vector<MattingSample> eval_set;
    eval_set.reserve(static_cast<std::size_t>(tc.eval_count));
    for (int i = 0; i < tc.eval_count; ++i)
        eval_set.push_back(eval_sample(dc, data_seed, static_cast<std::uint64_t>(i)));

    std::vector<EvalRow> rows;
    for (std::int64_t budget : budgets) {
        struct PerSample {
            MattingMetrics m;
            double l1 = 0.0;
            Flops cost = 0;
        };
        std::vector<PerSample> per(eval_set.size());
        auto work = [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                const MattingSample& s = eval_set[i];
                BudgetedResult res = forward_budgeted(ck, s.image, s.trimap, budget);
                Flops cost = path_cost(res.path, table);
                if (cost > budget)
                    throw std::runtime_error("evaluate_model: selected path exceeds the budget");
                per[i].m = metric_suite(res.alpha, s.alpha, s.trimap);
                per[i].l1 = mean_abs_error(res.alpha, s.alpha, unknown_region(s.trimap));
                per[i].cost = cost;
            }
        };
        if (workers == 1) {
            work(0, eval_set.size());
        } else {
            std::vector<std::thread> pool;
            std::size_t chunk = (eval_set.size() + workers - 1) / static_cast<std::size_t>(workers);
            for (int w = 0; w < workers; ++w) {
                std::size_t begin = static_cast<std::size_t>(w) * chunk;
                std::size_t end = std::min(eval_set.size(), begin + chunk);
                if (begin >= end) break;
                pool.emplace_back(work, begin, end);
            }
            for (auto& t : pool) t.join();
        }
        EvalRow row;
        row.budget = budget;
        for (const PerSample& p : per) {
            row.flops_mean += static_cast<double>(p.cost);
            row.sad += p.m.sad;
            row.mse += p.m.mse;
            row.grad += p.m.grad;
            row.conn += p.m.conn;
            row.l1_unknown += p.l1;
        }
        double inv = 1.0 / static_cast<double>(per.size());
        row.flops_mean *= inv;
        row.sad *= inv;
        row.mse *= inv;
        row.grad *= inv;
        row.conn *= inv;
        row.l1_unknown *= inv;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace pam
