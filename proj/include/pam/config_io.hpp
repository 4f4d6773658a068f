#pragma once

#include <cstdint>
#include <string>

#include "pam/supernet.hpp"
#include "pam/synthdata.hpp"
#include "pam/trainer.hpp"

namespace pam {

// Everything a run needs, loaded from one flat key-value JSON document.
// Keys mirror the field names of SupernetConfig, TrainConfig and DataConfig;
// `resolution` is shared. Missing keys keep defaults; unknown keys are errors.
struct FullConfig {
    SupernetConfig supernet;
    TrainConfig train;
    DataConfig data;
    std::uint64_t model_seed = 1;
};

FullConfig load_config(const std::string& path);
void save_config(const FullConfig& cfg, const std::string& path);
std::string config_to_json(const FullConfig& cfg);  // canonical (sorted keys)

}  // namespace pam
