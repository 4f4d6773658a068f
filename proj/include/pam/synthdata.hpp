#pragma once

#include <cstdint>
#include <string>

#include "pam/rng.hpp"
#include "pam/tensor.hpp"

namespace pam {

// One synthetic composite with exact ground truth. image = a*F + (1-a)*B
// holds to double precision by construction.
struct MattingSample {
    Tensor image;   // 3×H×W in [0,1]
    Tensor trimap;  // H×W in {0, 0.5, 1}
    Tensor alpha;   // H×W in [0,1]
    Tensor fg;      // 3×H×W
    Tensor bg;      // 3×H×W
    std::string id;
};

struct DataConfig {
    int resolution = 64;
    int min_shapes = 1;
    int max_shapes = 3;
    double feather_min = 1.5;
    double feather_max = 4.0;
    int trimap_erode = 2;   // radius shrinking the certain-foreground set
    int trimap_dilate = 2;  // radius shrinking the certain-background set
    bool augment_enabled = true;
};

// Pure function of (seed, index, config): soft-edged shapes over a smooth
// gradient background, composited exactly.
MattingSample generate_sample(std::uint64_t seed, std::uint64_t index, const DataConfig& config);

// foreground = erosion of {alpha == 1}, background = erosion of {alpha == 0},
// remainder unknown. Throws if both certain sets erode away.
Tensor make_trimap(const Tensor& alpha, int erode_radius, int dilate_radius);

MattingSample hflip_sample(const MattingSample& s);
MattingSample rot90_sample(const MattingSample& s, int quarter_turns);

// Random horizontal flip, joint brightness jitter on F/B with recomposition,
// and a random quarter-turn rotation. Identity when augmentation is disabled.
MattingSample augment(const MattingSample& s, Rng& rng, const DataConfig& config);

}  // namespace pam
