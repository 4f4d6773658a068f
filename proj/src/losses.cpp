#include "pam/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pam {

void LossWeights::validate() const {
    for (double v : {lambda_alpha, lambda_ds, lambda_pt, lambda_l1, lambda_comp, lambda_lap})
        if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("LossWeights: weights must be nonnegative");
    if (eps <= 0.0) throw std::invalid_argument("LossWeights: eps must be positive");
}

nn::Var l1_alpha(const nn::Var& pred, const Tensor& gt, const Tensor& region, double eps) {
    return nn::masked_charbonnier(pred, gt, region, eps);
}

nn::Var compositional_loss(const nn::Var& pred, const Tensor& fg, const Tensor& bg,
                           const Tensor& image, const Tensor& region, double eps) {
    return nn::composition_charbonnier(pred, image, fg, bg, region, eps);
}

namespace {

// 5-tap binomial blur as a fixed-weight convolution.
nn::Var blur(const nn::Var& x) {
    static const Tensor kernel = [] {
        const double k1[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
        Tensor k({1, 1, 5, 5});
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                k[static_cast<std::int64_t>(i) * 5 + j] = k1[i] * k1[j];
        return k;
    }();
    static const Tensor zero_bias({1}, 0.0);
    return nn::conv2d(x, nn::constant(kernel), nn::constant(zero_bias), 1, 2, 1);
}

nn::Var as_chw(const nn::Var& x) {
    if (x->value.rank() == 3) return x;
    if (x->value.rank() != 2) throw std::invalid_argument("laplacian_loss: expects H×W or 1×H×W");
    // Reinterpret H×W as 1×H×W without copying semantics that break the tape.
    Tensor t({1, x->value.dim(0), x->value.dim(1)});
    std::copy(x->value.data(), x->value.data() + x->value.numel(), t.data());
    nn::Var out = nn::constant(std::move(t));
    if (x->requires_grad && nn::grad_enabled()) {
        out->requires_grad = true;
        out->parents = {x};
        out->backprop = [x](nn::Node& n) {
            Tensor& g = x->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        };
    }
    return out;
}

std::vector<nn::Var> laplacian_pyramid(const nn::Var& input) {
    nn::Var g = as_chw(input);
    std::vector<nn::Var> laps;
    for (int level = 0; level < 4; ++level) {
        nn::Var next = nn::subsample2(blur(g));
        laps.push_back(nn::sub(g, blur(nn::upsample_nearest(next, 2))));
        g = next;
    }
    laps.push_back(g);  // coarsest residual
    return laps;
}

}  // namespace

nn::Var laplacian_loss(const nn::Var& pred, const Tensor& gt) {
    const Tensor& pv = pred->value;
    int h = pv.rank() == 3 ? pv.dim(1) : pv.dim(0);
    int w = pv.rank() == 3 ? pv.dim(2) : pv.dim(1);
    if (h != w || h % 16 != 0)
        throw std::invalid_argument("laplacian_loss: inputs must be square with side divisible by 16");
    if (pv.numel() != gt.numel()) throw std::invalid_argument("laplacian_loss: shape mismatch");

    std::vector<nn::Var> lp = laplacian_pyramid(pred);
    std::vector<nn::Var> lg = laplacian_pyramid(nn::constant(gt));
    nn::Var total = nn::make_scalar(0.0);
    for (std::size_t l = 0; l < lp.size(); ++l) {
        nn::Var term = nn::mean_all(nn::abs(nn::sub(lp[l], lg[l])));
        total = nn::add(total, nn::scale(term, std::pow(2.0, static_cast<double>(l))));
    }
    return total;
}

nn::Var alpha_loss(const nn::Var& pred, const Tensor& gt, const Tensor& fg, const Tensor& bg,
                   const Tensor& image, const Tensor& region, const LossWeights& w) {
    w.validate();
    nn::Var out = nn::scale(l1_alpha(pred, gt, region, w.eps), w.lambda_l1);
    if (w.lambda_comp != 0.0)
        out = nn::add(out, nn::scale(compositional_loss(pred, fg, bg, image, region, w.eps), w.lambda_comp));
    if (w.lambda_lap != 0.0)
        out = nn::add(out, nn::scale(laplacian_loss(pred, gt), w.lambda_lap));
    return out;
}

nn::Var distillation_loss(const nn::Var& pred, const Tensor& teacher_pred, const Tensor& region,
                          double eps) {
    return nn::masked_charbonnier(pred, teacher_pred, region, eps);
}

nn::Var path_loss(const std::vector<nn::Var>& logits, const Path& label) {
    if (static_cast<int>(logits.size()) != label.stages())
        throw std::invalid_argument("path_loss: logits list length " + std::to_string(logits.size()) +
                                    " does not match label length " + std::to_string(label.stages()));
    nn::Var total = nn::make_scalar(0.0);
    for (std::size_t i = 0; i < logits.size(); ++i)
        total = nn::add(total, nn::cross_entropy_logits(logits[i], label.decisions[i]));
    return total;
}

nn::Var total_loss(const nn::Var& loss_alpha, const nn::Var& loss_ds, const nn::Var& loss_pt,
                   const LossWeights& w) {
    w.validate();
    for (const nn::Var& v : {loss_alpha, loss_ds, loss_pt})
        if (!std::isfinite(v->value[0])) throw std::invalid_argument("total_loss: non-finite component");
    nn::Var out = nn::scale(loss_alpha, w.lambda_alpha);
    out = nn::add(out, nn::scale(loss_ds, w.lambda_ds));
    return nn::add(out, nn::scale(loss_pt, w.lambda_pt));
}

double mean_abs_error(const Tensor& pred, const Tensor& gt, const Tensor& region) {
    if (pred.numel() != gt.numel() || pred.numel() != region.numel())
        throw std::invalid_argument("mean_abs_error: size mismatch");
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i)
        if (region[i] > 0.0) {
            acc += std::fabs(pred[i] - gt[i]);
            ++count;
        }
    if (count == 0) throw std::invalid_argument("mean_abs_error: empty region");
    return acc / static_cast<double>(count);
}

Tensor unknown_region(const Tensor& trimap) {
    Tensor mask(trimap.dims(), 0.0);
    for (std::int64_t i = 0; i < trimap.numel(); ++i)
        if (trimap[i] > 0.25 && trimap[i] < 0.75) mask[i] = 1.0;
    return mask;
}

}  // namespace pam
