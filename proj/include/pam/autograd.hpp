#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pam/tensor.hpp"

namespace pam::nn {

// Reverse-mode tape over Tensor ops. A Var owns its value and, when gradients
// are enabled and an ancestor requires them, a closure that scatters its
// output gradient back to its parents.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use during backward
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.dims(), 0.0);
        return grad;
    }
};

Var constant(Tensor value);
Var leaf(Tensor value);  // a parameter: participates in gradient flow
Var make_scalar(double v);

bool grad_enabled();

// Disables tape construction for the enclosing scope (inference forwards).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Backpropagates from a scalar root; accumulates into every reachable
// requires_grad node's grad tensor.
void backward(const Var& root);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- structural ----
Var concat_vec(const std::vector<Var>& parts);       // 1-D concatenation
Var concat_channels(const std::vector<Var>& parts);  // CHW along C
Var channel_gate(const Var& x, const Var& g);        // x[c,h,w] * g[c]
Var broadcast_chw(const Var& v, int h, int w);       // [C] -> C×H×W
Var row(const Var& m, int r);                        // [R,C] -> [C]
Var scale_by(const Var& x, const Var& s, int index); // x * s[index]

// ---- convolution / pooling / resampling (CHW) ----
// weight: [Cout, Cin/groups, k, k], bias: [Cout]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);
Var linear(const Var& x, const Var& w, const Var& b);  // x:[in] w:[out,in] b:[out]
Var global_avg_pool(const Var& x);                     // CHW -> [C]
Var avg_pool_grid(const Var& x, int out_hw);           // CHW -> C×s×s tile means
Var upsample_nearest(const Var& x, int factor);
Var subsample2(const Var& x);                          // stride-2 spatial slice

// ---- reductions / losses ----
Var mean_all(const Var& a);
Var sum_all(const Var& a);
// mean over mask>0 of sqrt((pred-target)^2 + eps^2); mask/target are data.
Var masked_charbonnier(const Var& pred, const Tensor& target, const Tensor& mask, double eps);
// Charbonnier between image and pred*F + (1-pred)*B, mean over mask and channels.
Var composition_charbonnier(const Var& pred, const Tensor& image, const Tensor& fg,
                            const Tensor& bg, const Tensor& mask, double eps);
Var cross_entropy_logits(const Var& logits, int label);  // logits: [n]
Var softmax(const Var& logits);                          // [n] -> [n]
// Forward: one-hot at argmax (ties -> lowest index). Backward: identity.
Var straight_through_onehot(const Var& soft);

}  // namespace pam::nn
