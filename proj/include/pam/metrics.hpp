#pragma once

#include "pam/tensor.hpp"

namespace pam {

// Standard matting error metrics over the trimap-unknown region.
// SAD is reported /1000, MSE and GRAD x1000, CONN /1000.
struct MattingMetrics {
    double sad = 0.0;
    double mse = 0.0;
    double grad = 0.0;
    double conn = 0.0;
};

MattingMetrics metric_suite(const Tensor& pred, const Tensor& gt, const Tensor& trimap);

}  // namespace pam
