#include "pam/config_io.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "pam/util.hpp"

namespace pam {

namespace {

using nlohmann::json;

json to_json(const FullConfig& c) {
    json j;
    // supernet
    j["resolution"] = c.supernet.resolution;
    j["input_channels"] = c.supernet.input_channels;
    j["stem_channels"] = c.supernet.stem_channels;
    j["stage_count"] = c.supernet.stage_count;
    j["stage_channels"] = c.supernet.stage_channels;
    j["depthwise_kernel"] = c.supernet.depthwise_kernel;
    j["expansion_factor"] = c.supernet.expansion_factor;
    j["connect_reduction"] = c.supernet.connect_reduction;
    j["pyramid_scales"] = c.supernet.pyramid_scales;
    j["embedding_buckets"] = c.supernet.embedding_buckets;
    j["embedding_dim"] = c.supernet.embedding_dim;
    j["mlp_hidden"] = c.supernet.mlp_hidden;
    // train
    j["epochs_stage1"] = c.train.epochs_stage1;
    j["epochs_stage2"] = c.train.epochs_stage2;
    j["epochs_stage3"] = c.train.epochs_stage3;
    j["batch_size"] = c.train.batch_size;
    j["lr"] = c.train.lr;
    j["weight_decay"] = c.train.weight_decay;
    j["beta1"] = c.train.beta1;
    j["beta2"] = c.train.beta2;
    j["n_eval_paths"] = c.train.n_eval_paths;
    j["n_grid_paths"] = c.train.n_grid_paths;
    j["n_val"] = c.train.n_val;
    j["tau"] = c.train.tau;
    j["train_count"] = c.train.train_count;
    j["eval_count"] = c.train.eval_count;
    j["lambda_alpha"] = c.train.weights.lambda_alpha;
    j["lambda_ds"] = c.train.weights.lambda_ds;
    j["lambda_pt"] = c.train.weights.lambda_pt;
    j["lambda_l1"] = c.train.weights.lambda_l1;
    j["lambda_comp"] = c.train.weights.lambda_comp;
    j["lambda_lap"] = c.train.weights.lambda_lap;
    j["charbonnier_eps"] = c.train.weights.eps;
    // data
    j["min_shapes"] = c.data.min_shapes;
    j["max_shapes"] = c.data.max_shapes;
    j["feather_min"] = c.data.feather_min;
    j["feather_max"] = c.data.feather_max;
    j["trimap_erode"] = c.data.trimap_erode;
    j["trimap_dilate"] = c.data.trimap_dilate;
    j["augment_enabled"] = c.data.augment_enabled;
    j["model_seed"] = c.model_seed;
    return j;
}

template <typename T>
void take(const json& j, std::set<std::string>& seen, const char* key, T& field) {
    auto it = j.find(key);
    if (it == j.end()) return;
    seen.insert(key);
    try {
        field = it->get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string("config: bad value for key '") + key + "'");
    }
}

}  // namespace

std::string config_to_json(const FullConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_config(const FullConfig& cfg, const std::string& path) {
    atomic_write(path, [&](std::ostream& os) { os << config_to_json(cfg); });
}

FullConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be a JSON object");

    FullConfig c;
    std::set<std::string> seen;
    take(j, seen, "resolution", c.supernet.resolution);
    take(j, seen, "input_channels", c.supernet.input_channels);
    take(j, seen, "stem_channels", c.supernet.stem_channels);
    take(j, seen, "stage_count", c.supernet.stage_count);
    take(j, seen, "stage_channels", c.supernet.stage_channels);
    take(j, seen, "depthwise_kernel", c.supernet.depthwise_kernel);
    take(j, seen, "expansion_factor", c.supernet.expansion_factor);
    take(j, seen, "connect_reduction", c.supernet.connect_reduction);
    take(j, seen, "pyramid_scales", c.supernet.pyramid_scales);
    take(j, seen, "embedding_buckets", c.supernet.embedding_buckets);
    take(j, seen, "embedding_dim", c.supernet.embedding_dim);
    take(j, seen, "mlp_hidden", c.supernet.mlp_hidden);
    take(j, seen, "epochs_stage1", c.train.epochs_stage1);
    take(j, seen, "epochs_stage2", c.train.epochs_stage2);
    take(j, seen, "epochs_stage3", c.train.epochs_stage3);
    take(j, seen, "batch_size", c.train.batch_size);
    take(j, seen, "lr", c.train.lr);
    take(j, seen, "weight_decay", c.train.weight_decay);
    take(j, seen, "beta1", c.train.beta1);
    take(j, seen, "beta2", c.train.beta2);
    take(j, seen, "n_eval_paths", c.train.n_eval_paths);
    take(j, seen, "n_grid_paths", c.train.n_grid_paths);
    take(j, seen, "n_val", c.train.n_val);
    take(j, seen, "tau", c.train.tau);
    take(j, seen, "train_count", c.train.train_count);
    take(j, seen, "eval_count", c.train.eval_count);
    take(j, seen, "lambda_alpha", c.train.weights.lambda_alpha);
    take(j, seen, "lambda_ds", c.train.weights.lambda_ds);
    take(j, seen, "lambda_pt", c.train.weights.lambda_pt);
    take(j, seen, "lambda_l1", c.train.weights.lambda_l1);
    take(j, seen, "lambda_comp", c.train.weights.lambda_comp);
    take(j, seen, "lambda_lap", c.train.weights.lambda_lap);
    take(j, seen, "charbonnier_eps", c.train.weights.eps);
    take(j, seen, "min_shapes", c.data.min_shapes);
    take(j, seen, "max_shapes", c.data.max_shapes);
    take(j, seen, "feather_min", c.data.feather_min);
    take(j, seen, "feather_max", c.data.feather_max);
    take(j, seen, "trimap_erode", c.data.trimap_erode);
    take(j, seen, "trimap_dilate", c.data.trimap_dilate);
    take(j, seen, "augment_enabled", c.data.augment_enabled);
    take(j, seen, "model_seed", c.model_seed);

    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!seen.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    }
    c.data.resolution = c.supernet.resolution;
    c.supernet.validate();
    c.train.validate();
    return c;
}

}  // namespace pam
