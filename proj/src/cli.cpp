#include "pam/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pam/checkpoint_io.hpp"
#include "pam/config_io.hpp"
#include "pam/image_io.hpp"
#include "pam/pathlearn.hpp"
#include "pam/supernet.hpp"
#include "pam/trainer.hpp"
#include "pam/util.hpp"

namespace pam::cli {

namespace {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// One manifest per invocation, written next to the primary output artifact.
struct Manifest {
    std::string command;
    json resolved_config = json::object();
    json seeds = json::object();
    json inputs = json::object();
    json outputs = json::object();
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void input(const std::string& path) { inputs[path] = hex64(hash_file(path)); }
    void output(const std::string& path) { outputs[path] = hex64(hash_file(path)); }

    void write(const std::string& path) const {
        json j;
        j["command"] = command;
        j["resolved_config"] = resolved_config;
        j["seeds"] = seeds;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["duration_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
    }
};

int env_workers() {
    const char* v = std::getenv("PAM_WORKERS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw std::invalid_argument("PAM_WORKERS: not a positive integer");
    return static_cast<int>(n);
}

FullConfig load_or_default(const std::string& path) {
    if (path.empty()) return FullConfig{};
    return load_config(path);
}

void require_config_match(const Checkpoint& ck, const FullConfig& cfg, const std::string& what) {
    if (ck.config_hash() != cfg.supernet.hash())
        throw HashMismatchError(what + ": checkpoint config hash " + hex64(ck.config_hash()) +
                                " does not match config " + hex64(cfg.supernet.hash()));
}

std::string csv_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
    atomic_write(path, [&](std::ostream& os) {
        os << "epoch,lr,loss_total,loss_alpha,loss_ds,loss_pt,label_source_frac_network\n";
        for (const EpochLog& e : log) {
            os << e.epoch << "," << csv_double(e.lr) << "," << csv_double(e.loss_total) << ","
               << csv_double(e.loss_alpha) << "," << csv_double(e.loss_ds) << ","
               << csv_double(e.loss_pt) << "," << csv_double(e.frac_network) << "\n";
        }
    });
}

// ---- subcommand bodies ----

int cmd_data(Manifest& mf, const std::string& config_path, std::uint64_t seed, int count,
             const std::string& out_dir) {
    FullConfig cfg = load_or_default(config_path);
    mf.resolved_config = json::parse(config_to_json(cfg));
    mf.seeds["seed"] = seed;
    std::filesystem::create_directories(out_dir);
    std::ostringstream index;
    index << "id,image,trimap,alpha\n";
    for (int i = 0; i < count; ++i) {
        MattingSample s = generate_sample(seed, static_cast<std::uint64_t>(i), cfg.data);
        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%05d", i);
        std::string image = std::string(stem) + ".image.ppm";
        std::string trimap = std::string(stem) + ".trimap.pgm";
        std::string alpha = std::string(stem) + ".alpha.pgm";
        write_ppm(s.image, out_dir + "/" + image);
        write_pgm(s.trimap, out_dir + "/" + trimap);
        write_pgm(s.alpha, out_dir + "/" + alpha);
        index << s.id << "," << image << "," << trimap << "," << alpha << "\n";
    }
    std::string index_path = out_dir + "/manifest.csv";
    atomic_write(index_path, [&](std::ostream& os) { os << index.str(); });
    mf.output(index_path);
    mf.write(out_dir + "/manifest.json");
    return 0;
}

int cmd_train(Manifest& mf, int stage, const std::string& config_path, std::uint64_t data_seed,
              const std::string& in_path, const std::string& out_path,
              const std::string& prior_path, const std::string& teacher_path,
              std::string log_path) {
    FullConfig cfg = load_config(config_path);
    mf.resolved_config = json::parse(config_to_json(cfg));
    mf.seeds["data_seed"] = data_seed;
    mf.seeds["model_seed"] = cfg.model_seed;
    mf.input(config_path);

    if (stage >= 2 && in_path.empty())
        throw std::invalid_argument("train: --in is required for stage " + std::to_string(stage));
    if (stage == 3 && prior_path.empty())
        throw std::invalid_argument("train: --prior is required for stage 3");

    Checkpoint in;
    if (in_path.empty()) {
        in = build(cfg.supernet, cfg.model_seed);
    } else {
        mf.input(in_path);
        in = load_checkpoint(in_path);
        require_config_match(in, cfg, "train");
    }

    StageResult result;
    if (stage == 1) {
        result = run_stage1(in, cfg.train, cfg.data, data_seed);
    } else if (stage == 2) {
        result = run_stage2(in, cfg.train, cfg.data, data_seed);
    } else {
        mf.input(prior_path);
        PriorTable prior = load_prior(prior_path);
        Checkpoint teacher = in;
        if (!teacher_path.empty()) {
            mf.input(teacher_path);
            teacher = load_checkpoint(teacher_path);
            require_config_match(teacher, cfg, "train(teacher)");
        }
        result = run_stage3(in, teacher, prior, cfg.train, cfg.data, data_seed);
    }

    save_checkpoint(result.checkpoint, out_path);
    if (log_path.empty()) log_path = out_path + ".log.csv";
    write_train_log(log_path, result.log);
    mf.output(out_path);
    mf.output(log_path);
    mf.write(out_path + ".manifest.json");
    return 0;
}

int cmd_estimate_prior(Manifest& mf, const std::string& ckpt_path, const std::string& config_path,
                       const std::string& out_path, int n_val, int n_g, std::uint64_t data_seed,
                       int workers) {
    FullConfig cfg = load_config(config_path);
    mf.resolved_config = json::parse(config_to_json(cfg));
    mf.seeds["data_seed"] = data_seed;
    mf.input(config_path);
    mf.input(ckpt_path);
    Checkpoint ck = load_checkpoint(ckpt_path);
    require_config_match(ck, cfg, "estimate-prior");
    if (n_val <= 0) n_val = cfg.train.n_val;
    if (n_g <= 0) n_g = cfg.train.n_grid_paths;

    std::vector<MattingSample> val_set;
    val_set.reserve(static_cast<std::size_t>(n_val));
    for (int i = 0; i < n_val; ++i)
        val_set.push_back(val_sample(cfg.data, data_seed, static_cast<std::uint64_t>(i)));

    PriorTable prior = estimate_prior(ck, val_set, n_val, n_g, workers);
    save_prior(prior, out_path);
    mf.output(out_path);
    mf.write(out_path + ".manifest.json");
    return 0;
}

int cmd_infer(Manifest& mf, const std::string& ckpt_path, const std::string& image_path,
              const std::string& trimap_path, std::int64_t budget, const std::string& out_path) {
    mf.input(ckpt_path);
    mf.input(image_path);
    mf.input(trimap_path);
    Checkpoint ck = load_checkpoint(ckpt_path);
    Tensor image = read_ppm(image_path);
    Tensor trimap = read_pgm(trimap_path);
    if (image.dim(1) != ck.config.resolution || image.dim(2) != ck.config.resolution ||
        !(trimap.dim(0) == ck.config.resolution && trimap.dim(1) == ck.config.resolution))
        throw std::invalid_argument("infer: image/trimap resolution does not match the checkpoint");

    BudgetedResult res = forward_budgeted(ck, image, trimap, budget);
    write_pgm(res.alpha, out_path);
    CostTable table = build_cost_table(ck.config);
    json line;
    line["path"] = res.path.bits();
    line["flops"] = path_cost(res.path, table);
    line["budget"] = budget;
    std::cout << line.dump() << "\n";
    mf.output(out_path);
    mf.write(out_path + ".manifest.json");
    return 0;
}

int cmd_eval(Manifest& mf, const std::string& ckpt_path, const std::string& config_path,
             const std::vector<std::int64_t>& budgets, const std::string& out_path,
             std::uint64_t data_seed, int workers) {
    FullConfig cfg = load_config(config_path);
    mf.resolved_config = json::parse(config_to_json(cfg));
    mf.seeds["data_seed"] = data_seed;
    mf.input(config_path);
    mf.input(ckpt_path);
    Checkpoint ck = load_checkpoint(ckpt_path);
    require_config_match(ck, cfg, "eval");

    std::vector<EvalRow> rows = evaluate_model(ck, budgets, cfg.train, cfg.data, data_seed, workers);
    atomic_write(out_path, [&](std::ostream& os) {
        os << "budget,flops_mean,sad,mse,grad,conn,l1_unknown\n";
        for (const EvalRow& r : rows) {
            os << r.budget << "," << csv_double(r.flops_mean) << "," << csv_double(r.sad) << ","
               << csv_double(r.mse) << "," << csv_double(r.grad) << "," << csv_double(r.conn)
               << "," << csv_double(r.l1_unknown) << "\n";
        }
    });
    mf.output(out_path);
    mf.write(out_path + ".manifest.json");
    return 0;
}

int cmd_paths(Manifest& mf, const std::string& config_path, std::int64_t budget,
              const std::string& out_path) {
    FullConfig cfg = load_or_default(config_path);
    mf.resolved_config = json::parse(config_to_json(cfg));
    CostTable table = build_cost_table(cfg.supernet);
    CostBounds bounds = cost_bounds(table);
    if (budget < 0) budget = bounds.c_max;

    std::ostringstream os;
    os << "path,flops,feasible\n";
    for (const Path& p : enumerate_paths(cfg.supernet.stage_count)) {
        os << p.bits() << "," << path_cost(p, table) << ","
           << (is_feasible(p, table, budget) ? 1 : 0) << "\n";
    }
    if (out_path.empty()) {
        std::cout << os.str();
    } else {
        atomic_write(out_path, [&](std::ostream& f) { f << os.str(); });
        mf.output(out_path);
        mf.write(out_path + ".manifest.json");
    }
    return 0;
}

struct ReportRow {
    std::int64_t budget;
    double flops_mean, sad, mse, grad, conn, l1;
};

int cmd_report(Manifest& mf, const std::vector<std::string>& inputs, const std::string& out_path) {
    std::map<std::int64_t, ReportRow> rows;
    for (const std::string& path : inputs) {
        mf.input(path);
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("report: cannot open " + path);
        std::string line;
        if (!std::getline(in, line) || line != "budget,flops_mean,sad,mse,grad,conn,l1_unknown")
            throw std::invalid_argument("report: " + path + " line 1: bad header");
        int lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            ReportRow r{};
            char c[6];
            int n = std::sscanf(line.c_str(), "%lld%c%lf%c%lf%c%lf%c%lf%c%lf%c%lf",
                                reinterpret_cast<long long*>(&r.budget), &c[0], &r.flops_mean,
                                &c[1], &r.sad, &c[2], &r.mse, &c[3], &r.grad, &c[4], &r.conn,
                                &c[5], &r.l1);
            bool commas = n == 13;
            for (int i = 0; commas && i < 6; ++i) commas = c[i] == ',';
            if (!commas)
                throw std::invalid_argument("report: " + path + " line " +
                                            std::to_string(lineno) + ": malformed row");
            if (rows.count(r.budget))
                throw std::invalid_argument("report: " + path + " line " + std::to_string(lineno) +
                                            ": duplicate budget " + std::to_string(r.budget));
            rows.emplace(r.budget, r);
        }
    }
    if (rows.empty()) throw std::invalid_argument("report: no rows in inputs");
    atomic_write(out_path, [&](std::ostream& os) {
        os << "budget,flops_mean,l1,sad,mse,grad,conn\n";
        for (const auto& [budget, r] : rows) {
            os << budget << "," << csv_double(r.flops_mean) << "," << csv_double(r.l1) << ","
               << csv_double(r.sad) << "," << csv_double(r.mse) << "," << csv_double(r.grad)
               << "," << csv_double(r.conn) << "\n";
        }
    });
    mf.output(out_path);
    mf.write(out_path + ".manifest.json");
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"path-adaptive matting toolkit"};
    app.name("pam");
    app.require_subcommand(1);

    Manifest mf;
    mf.command = "pam";
    for (const std::string& a : args) mf.command += " " + a;

    std::string config_path, in_path, out_path, prior_path, teacher_path, log_path;
    std::string ckpt_path, image_path, trimap_path;
    std::uint64_t seed = 1, data_seed = 1;
    int count = 16, stage = 1, n_val = 0, n_g = 0;
    int workers = 1;
    std::int64_t budget = -1;
    std::vector<std::int64_t> budgets;
    std::vector<std::string> report_inputs;
    bool list_paths = false;
    int code = 0;

    auto* data = app.add_subcommand("data", "materialize synthetic samples as image files");
    data->add_option("--seed", seed, "dataset seed");
    data->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
    data->add_option("--out", out_path, "output directory")->required();
    data->add_option("--config", config_path, "config file (JSON)");
    data->callback([&] { code = cmd_data(mf, config_path, seed, count, out_path); });

    auto* train = app.add_subcommand("train", "run one training stage");
    train->add_option("--stage", stage, "training stage")->required()->check(CLI::Range(1, 3));
    train->add_option("--config", config_path, "config file (JSON)")->required();
    train->add_option("--data-seed", data_seed, "dataset seed")->required();
    train->add_option("--in", in_path, "input checkpoint (required for stages 2 and 3)");
    train->add_option("--out", out_path, "output checkpoint")->required();
    train->add_option("--prior", prior_path, "prior table (stage 3)");
    train->add_option("--teacher", teacher_path, "distillation teacher checkpoint (stage 3)");
    train->add_option("--log", log_path, "training log CSV (default: <out>.log.csv)");
    train->callback([&] {
        code = cmd_train(mf, stage, config_path, data_seed, in_path, out_path, prior_path,
                         teacher_path, log_path);
    });

    auto* prior = app.add_subcommand("estimate-prior", "estimate the optimal-path prior");
    prior->add_option("--checkpoint", ckpt_path, "supernet checkpoint")->required();
    prior->add_option("--config", config_path, "config file (JSON)")->required();
    prior->add_option("--out", out_path, "prior table CSV")->required();
    prior->add_option("--n-val", n_val, "validation samples (default: config n_val)");
    prior->add_option("--n-g", n_g, "candidate paths per bucket (default: config n_grid_paths)");
    prior->add_option("--data-seed", data_seed, "dataset seed");
    prior->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    prior->callback([&] {
        code = cmd_estimate_prior(mf, ckpt_path, config_path, out_path, n_val, n_g, data_seed,
                                  workers);
    });

    auto* infer = app.add_subcommand("infer", "matte one image under a budget");
    infer->add_option("--checkpoint", ckpt_path, "supernet checkpoint")->required();
    infer->add_option("--image", image_path, "input image (binary PPM)")->required();
    infer->add_option("--trimap", trimap_path, "input trimap (binary PGM)")->required();
    infer->add_option("--budget", budget, "FLOP budget")->required();
    infer->add_option("--out", out_path, "output alpha (binary PGM)")->required();
    infer->callback(
        [&] { code = cmd_infer(mf, ckpt_path, image_path, trimap_path, budget, out_path); });

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint at one or more budgets");
    eval->add_option("--checkpoint", ckpt_path, "supernet checkpoint")->required();
    eval->add_option("--config", config_path, "config file (JSON)")->required();
    eval->add_option("--budgets", budgets, "FLOP budgets")->required()->delimiter(',');
    eval->add_option("--out", out_path, "output CSV")->required();
    eval->add_option("--data-seed", data_seed, "dataset seed");
    eval->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    eval->callback([&] {
        code = cmd_eval(mf, ckpt_path, config_path, budgets, out_path, data_seed, workers);
    });

    auto* paths = app.add_subcommand("paths", "inspect the path space");
    paths->add_flag("--list", list_paths, "list all paths");
    paths->add_option("--config", config_path, "config file (JSON)");
    paths->add_option("--budget", budget, "feasibility budget (default: C_max)");
    paths->add_option("--out", out_path, "output CSV (default: stdout)");
    paths->callback([&] {
        if (!list_paths) throw CLI::RequiredError("--list");
        code = cmd_paths(mf, config_path, budget, out_path);
    });

    auto* report = app.add_subcommand("report", "merge eval CSVs into one cost-error curve");
    report->add_option("inputs", report_inputs, "eval CSV files")->required();
    report->add_option("--out", out_path, "output CSV")->required();
    report->callback([&] { code = cmd_report(mf, report_inputs, out_path); });

    std::vector<const char*> argv;
    argv.push_back("pam");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        workers = env_workers();
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
        return 2;
    } catch (const HashMismatchError& e) {
        std::cerr << "error: hash-mismatch: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return code;
}

}  // namespace pam::cli
