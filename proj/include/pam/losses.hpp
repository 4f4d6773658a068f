#pragma once

#include <vector>

#include "pam/autograd.hpp"
#include "pam/pathspace.hpp"
#include "pam/tensor.hpp"

namespace pam {

struct LossWeights {
    double lambda_alpha = 1.0;
    double lambda_ds = 0.05;
    double lambda_pt = 0.05;
    double lambda_l1 = 1.0;
    double lambda_comp = 0.25;
    double lambda_lap = 0.5;
    double eps = 1e-6;

    void validate() const;
};

// Charbonnier mean over the region: sqrt((pred-gt)^2 + eps^2).
nn::Var l1_alpha(const nn::Var& pred, const Tensor& gt, const Tensor& region, double eps);

// Charbonnier between image and pred*F + (1-pred)*B over region and channels.
nn::Var compositional_loss(const nn::Var& pred, const Tensor& fg, const Tensor& bg,
                           const Tensor& image, const Tensor& region, double eps);

// 5-level Laplacian pyramid L1 with binomial 5-tap kernel and 2^(l-1) weights.
nn::Var laplacian_loss(const nn::Var& pred, const Tensor& gt);

nn::Var alpha_loss(const nn::Var& pred, const Tensor& gt, const Tensor& fg, const Tensor& bg,
                   const Tensor& image, const Tensor& region, const LossWeights& w);

nn::Var distillation_loss(const nn::Var& pred, const Tensor& teacher_pred, const Tensor& region,
                          double eps);

// Sum over stages of two-way cross-entropy between softmax(Q_e) and label.
nn::Var path_loss(const std::vector<nn::Var>& logits, const Path& label);

nn::Var total_loss(const nn::Var& loss_alpha, const nn::Var& loss_ds, const nn::Var& loss_pt,
                   const LossWeights& w);

// Mean absolute alpha error over region>0 pixels; plain numbers, no tape.
double mean_abs_error(const Tensor& pred, const Tensor& gt, const Tensor& region);

Tensor unknown_region(const Tensor& trimap);  // 1 where trimap == 0.5

}  // namespace pam
