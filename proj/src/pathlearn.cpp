#include "pam/pathlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "pam/losses.hpp"
#include "pam/util.hpp"

namespace pam {

RelaxedPath gumbel_sample(const std::vector<nn::Var>& logits, double tau, Rng& rng) {
    if (tau <= 0.0) throw std::invalid_argument("gumbel_sample: tau must be positive");
    RelaxedPath out;
    int n = static_cast<int>(logits.size());
    out.noise = Tensor({n, 2});
    out.hard.decisions.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (logits[static_cast<std::size_t>(i)]->value.numel() != 2)
            throw std::invalid_argument("gumbel_sample: each logit row must have 2 entries");
        double g0 = rng.gumbel(), g1 = rng.gumbel();
        out.noise.at(i, 0) = g0;
        out.noise.at(i, 1) = g1;
        Tensor g({2}, std::vector<double>{g0 / tau, g1 / tau});
        nn::Var z = nn::add(nn::scale(logits[static_cast<std::size_t>(i)], 1.0 / tau),
                            nn::constant(std::move(g)));
        nn::Var soft = nn::softmax(z);
        out.soft.push_back(soft);
        out.hard.decisions[static_cast<std::size_t>(i)] = soft->value[1] > soft->value[0] ? 1 : 0;
    }
    return out;
}

double uniform_prob(int stage_count) {
    if (stage_count < 1) throw std::invalid_argument("uniform_prob: stage count must be >= 1");
    return std::ldexp(1.0, -stage_count);
}

std::vector<Path> candidate_set(Flops budget, const CostTable& table, int n_g) {
    if (n_g < 1) throw std::invalid_argument("candidate_set: n_g must be >= 1");
    CostBounds bounds = cost_bounds(table);
    if (budget < bounds.c_min)
        throw std::invalid_argument("candidate_set: budget " + std::to_string(budget) +
                                    " below C_min " + std::to_string(bounds.c_min) +
                                    "; no feasible path");
    struct Entry {
        Flops cost;
        std::uint32_t index;
    };
    std::vector<Entry> feasible;
    for (const Path& p : enumerate_paths(table.stages())) {
        Flops c = path_cost(p, table);
        if (c <= budget) feasible.push_back({c, p.index()});
    }
    std::sort(feasible.begin(), feasible.end(), [](const Entry& a, const Entry& b) {
        if (a.cost != b.cost) return a.cost > b.cost;
        return a.index < b.index;
    });
    std::vector<Path> out;
    for (std::size_t i = 0; i < feasible.size() && static_cast<int>(i) < n_g; ++i)
        out.push_back(Path::from_index(feasible[i].index, table.stages()));
    return out;
}

std::uint64_t checkpoint_param_hash(const Checkpoint& ck) {
    std::uint64_t h = 14695981039346656037ULL;
    h = hash_bytes(&ck.stage, sizeof(ck.stage), h);
    h = hash_bytes(&ck.epoch, sizeof(ck.epoch), h);
    for (const auto& [name, t] : ck.params) {
        h = hash_bytes(name.data(), name.size(), h);
        h = hash_bytes(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double), h);
    }
    return h;
}

std::vector<Flops> bucket_grid(const CostBounds& bounds, int buckets) {
    std::vector<Flops> grid(static_cast<std::size_t>(buckets));
    grid[0] = bounds.c_min;
    Flops span = bounds.c_max - bounds.c_min;
    for (int b = 1; b < buckets; ++b) {
        // Smallest integer budget whose rounded bucket index is b.
        __int128 num = static_cast<__int128>(2 * b - 1) * span;
        __int128 den = static_cast<__int128>(2) * (buckets - 1);
        Flops lo = bounds.c_min + static_cast<Flops>((num + den - 1) / den);
        grid[static_cast<std::size_t>(b)] = lo;
    }
    return grid;
}

std::vector<double> evaluate_candidates(const Checkpoint& ck, const std::vector<MattingSample>& batch,
                                        const std::vector<Path>& paths) {
    if (batch.empty() || paths.empty())
        throw std::invalid_argument("evaluate_candidates: empty batch or path list");
    std::vector<double> errors;
    errors.reserve(paths.size());
    for (const Path& p : paths) {
        if (p.stages() != ck.config.stage_count)
            throw std::invalid_argument("evaluate_candidates: path length mismatch");
        double acc = 0.0;
        for (const MattingSample& s : batch) {
            Tensor pred = forward_path(ck, s.image, s.trimap, p);
            acc += mean_abs_error(pred, s.alpha, unknown_region(s.trimap));
        }
        errors.push_back(acc / static_cast<double>(batch.size()));
    }
    return errors;
}

PriorTable estimate_prior(const SupernetConfig& config, std::uint64_t checkpoint_hash, int n_use,
                          const PathErrorsFn& path_errors, int n_val, int n_g) {
    if (n_use < 1) throw std::invalid_argument("estimate_prior: empty eval set");
    if (n_val < 1) throw std::invalid_argument("estimate_prior: n_val must be >= 1");
    const CostTable table = build_cost_table(config);
    const CostBounds bounds = cost_bounds(table);

    PriorTable prior;
    prior.stage_count = config.stage_count;
    prior.buckets = config.embedding_buckets;
    prior.c_min = bounds.c_min;
    prior.c_max = bounds.c_max;
    prior.n_val = n_val;
    prior.n_g = n_g;
    prior.checkpoint_hash = checkpoint_hash;

    // Per-sample errors are shared across buckets: cache one row per path.
    std::vector<std::vector<double>> error_cache(std::size_t{1} << prior.stage_count);
    auto ensure_errors = [&](std::uint32_t path_index) -> const std::vector<double>& {
        std::vector<double>& row = error_cache[path_index];
        if (!row.empty()) return row;
        row = path_errors(Path::from_index(path_index, prior.stage_count));
        if (static_cast<int>(row.size()) != n_use)
            throw std::invalid_argument("estimate_prior: error row size mismatch");
        return row;
    };

    std::vector<Flops> grid = bucket_grid(bounds, prior.buckets);
    std::vector<Flops> costs(std::size_t{1} << prior.stage_count);
    for (std::uint32_t i = 0; i < costs.size(); ++i)
        costs[i] = path_cost(Path::from_index(i, prior.stage_count), table);

    for (int b = 0; b < prior.buckets; ++b) {
        PriorBucket bucket;
        bucket.budget_lo = grid[static_cast<std::size_t>(b)];
        bucket.budget_hi = (b + 1 < prior.buckets) ? grid[static_cast<std::size_t>(b) + 1] - 1 : bounds.c_max;
        std::vector<Path> candidates = candidate_set(bucket.budget_lo, table, n_g);
        std::vector<std::int64_t> wins(candidates.size(), 0);
        for (int i = 0; i < n_use; ++i) {
            int best = -1;
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                double e = ensure_errors(candidates[c].index())[static_cast<std::size_t>(i)];
                if (best < 0) {
                    best = static_cast<int>(c);
                    continue;
                }
                double be = ensure_errors(candidates[static_cast<std::size_t>(best)].index())
                                [static_cast<std::size_t>(i)];
                Flops cc = costs[candidates[c].index()];
                Flops bc = costs[candidates[static_cast<std::size_t>(best)].index()];
                if (e < be || (e == be && cc < bc)) best = static_cast<int>(c);
            }
            ++wins[static_cast<std::size_t>(best)];
        }
        // The estimator divides by N^val even when fewer samples are
        // available; n_use == n_val in normal operation.
        for (std::size_t c = 0; c < candidates.size(); ++c)
            if (wins[c] > 0)
                bucket.probs.push_back({candidates[c].index(),
                                        static_cast<double>(wins[c]) / static_cast<double>(n_use)});
        prior.table.push_back(std::move(bucket));
    }
    return prior;
}

PriorTable estimate_prior(const Checkpoint& ck, const std::vector<MattingSample>& eval_set,
                          int n_val, int n_g, int workers) {
    if (eval_set.empty()) throw std::invalid_argument("estimate_prior: empty eval set");
    if (n_val < 1) throw std::invalid_argument("estimate_prior: n_val must be >= 1");
    if (ck.stage < 2) throw std::invalid_argument("estimate_prior: checkpoint must be past stage-2 warm-up");
    const int n_use = std::min<int>(n_val, static_cast<int>(eval_set.size()));
    auto path_errors = [&](const Path& p) {
        std::vector<double> row(static_cast<std::size_t>(n_use), 0.0);
        auto run = [&](int begin, int end) {
            for (int i = begin; i < end; ++i) {
                const MattingSample& s = eval_set[static_cast<std::size_t>(i)];
                Tensor pred = forward_path(ck, s.image, s.trimap, p);
                row[static_cast<std::size_t>(i)] = mean_abs_error(pred, s.alpha, unknown_region(s.trimap));
            }
        };
        int n_workers = std::max(1, workers);
        if (n_workers == 1) {
            run(0, n_use);
        } else {
            std::vector<std::thread> pool;
            int chunk = (n_use + n_workers - 1) / n_workers;
            for (int t = 0; t < n_workers; ++t) {
                int b = t * chunk, e = std::min(n_use, b + chunk);
                if (b < e) pool.emplace_back(run, b, e);
            }
            for (auto& th : pool) th.join();
        }
        return row;
    };
    return estimate_prior(ck.config, checkpoint_param_hash(ck), n_use, path_errors, n_val, n_g);
}

std::vector<Path> draw_from_prior(const PriorTable& prior, Flops budget, int n_e, Rng& rng) {
    if (n_e < 1) throw std::invalid_argument("draw_from_prior: n_e must be >= 1");
    CostBounds bounds{prior.c_min, prior.c_max};
    int b = constraint_bucket(budget, bounds, prior.buckets);  // throws on unknown bucket
    const PriorBucket& bucket = prior.table[static_cast<std::size_t>(b)];
    std::vector<std::pair<std::uint32_t, double>> support = bucket.probs;
    if (support.empty()) throw std::invalid_argument("draw_from_prior: empty bucket support");

    // Weighted sampling without replacement.
    std::vector<Path> out;
    while (!support.empty() && static_cast<int>(out.size()) < n_e) {
        double total = 0.0;
        for (const auto& [idx, p] : support) total += p;
        double u = rng.uniform() * total;
        std::size_t pick = support.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < support.size(); ++i) {
            acc += support[i].second;
            if (u < acc) {
                pick = i;
                break;
            }
        }
        out.push_back(Path::from_index(support[pick].first, prior.stage_count));
        support.erase(support.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

LabelDecision generate_label(const std::vector<Path>& candidates, const std::vector<double>& errors,
                             const Path& network_path, double network_error, Flops network_cost,
                             Flops budget) {
    if (candidates.empty()) throw std::invalid_argument("generate_label: empty candidate list");
    if (candidates.size() != errors.size())
        throw std::invalid_argument("generate_label: candidates and errors differ in length");
    for (double e : errors)
        if (!std::isfinite(e)) throw std::invalid_argument("generate_label: non-finite error");

    LabelDecision d;
    double best = std::numeric_limits<double>::infinity();
    bool have = false;
    if (network_cost < budget) {  // strict, per the labeling rule
        d.chosen = network_path;
        d.from_network = true;
        best = network_error;
        have = true;
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (errors[i] < best || !have) {
            d.chosen = candidates[i];
            d.from_network = false;
            best = errors[i];
            have = true;
        }
    }
    d.error = best;
    return d;
}

// ----------------------------------------------------------------- prior I/O

void save_prior(const PriorTable& prior, const std::string& path) {
    atomic_write(path, [&prior](std::ostream& out) {
        out << "bucket,budget_lo,budget_hi,path,probability\n";
        for (int b = 0; b < prior.buckets; ++b) {
            const PriorBucket& bucket = prior.table[static_cast<std::size_t>(b)];
            for (const auto& [idx, p] : bucket.probs) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.17g", p);
                out << b << "," << bucket.budget_lo << "," << bucket.budget_hi << ","
                    << Path::from_index(idx, prior.stage_count).bits() << "," << buf << "\n";
            }
        }
    });
    nlohmann::json meta{{"n_val", prior.n_val},
                        {"n_g", prior.n_g},
                        {"checkpoint_hash", prior.checkpoint_hash},
                        {"stage_count", prior.stage_count},
                        {"buckets", prior.buckets},
                        {"c_min", prior.c_min},
                        {"c_max", prior.c_max}};
    atomic_write(path + ".meta.json", [&meta](std::ostream& out) { out << meta.dump(2) << "\n"; });
}

PriorTable load_prior(const std::string& path) {
    nlohmann::json meta = nlohmann::json::parse(read_file(path + ".meta.json"));
    PriorTable prior;
    prior.n_val = meta.at("n_val").get<int>();
    prior.n_g = meta.at("n_g").get<int>();
    prior.checkpoint_hash = meta.at("checkpoint_hash").get<std::uint64_t>();
    prior.stage_count = meta.at("stage_count").get<int>();
    prior.buckets = meta.at("buckets").get<int>();
    prior.c_min = meta.at("c_min").get<Flops>();
    prior.c_max = meta.at("c_max").get<Flops>();
    prior.table.assign(static_cast<std::size_t>(prior.buckets), PriorBucket{});

    std::vector<Flops> grid = bucket_grid({prior.c_min, prior.c_max}, prior.buckets);
    for (int b = 0; b < prior.buckets; ++b) {
        prior.table[static_cast<std::size_t>(b)].budget_lo = grid[static_cast<std::size_t>(b)];
        prior.table[static_cast<std::size_t>(b)].budget_hi =
            (b + 1 < prior.buckets) ? grid[static_cast<std::size_t>(b) + 1] - 1 : prior.c_max;
    }

    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "bucket,budget_lo,budget_hi,path,probability")
        throw std::runtime_error("load_prior: bad header in " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        int b = std::stoi(field);
        std::getline(row, field, ',');  // budget_lo (derived)
        std::getline(row, field, ',');  // budget_hi (derived)
        std::getline(row, field, ',');
        if (static_cast<int>(field.size()) != prior.stage_count)
            throw std::runtime_error("load_prior: bad path bits: " + field);
        std::uint32_t idx = 0;
        for (int i = 0; i < prior.stage_count; ++i)
            if (field[static_cast<std::size_t>(i)] == '1') idx |= (1u << i);
        std::getline(row, field, ',');
        double p = std::stod(field);
        if (b < 0 || b >= prior.buckets) throw std::runtime_error("load_prior: bucket out of range");
        prior.table[static_cast<std::size_t>(b)].probs.push_back({idx, p});
    }
    return prior;
}

}  // namespace pam
