#include "pam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include "pam/losses.hpp"

namespace pam {

namespace {

constexpr double kGradSigma = 1.4;
constexpr double kConnStep = 0.1;
constexpr double kConnTheta = 0.15;

// Separable filter with reflect padding along one axis.
void filter_axis(const Tensor& in, Tensor& out, const std::vector<double>& kernel, bool horizontal) {
    int h = in.dim(0), w = in.dim(1);
    int r = static_cast<int>(kernel.size()) / 2;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                int ii = horizontal ? i : reflect(i + k, h);
                int jj = horizontal ? reflect(j + k, w) : j;
                acc += kernel[static_cast<std::size_t>(k + r)] * in.at(ii, jj);
            }
            out.at(i, j) = acc;
        }
}

// Gradient magnitude via Gaussian derivative filters.
Tensor gaussian_gradient_magnitude(const Tensor& x, double sigma) {
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> g(static_cast<std::size_t>(2 * r + 1)), dg(g.size());
    double gsum = 0.0;
    for (int i = -r; i <= r; ++i) {
        double v = std::exp(-0.5 * i * i / (sigma * sigma));
        g[static_cast<std::size_t>(i + r)] = v;
        gsum += v;
    }
    for (auto& v : g) v /= gsum;
    double ramp = 0.0;
    for (int i = -r; i <= r; ++i) {
        double v = -static_cast<double>(i) / (sigma * sigma) * std::exp(-0.5 * i * i / (sigma * sigma));
        dg[static_cast<std::size_t>(i + r)] = v;
        ramp += -static_cast<double>(i) * v;  // response to a unit ramp
    }
    for (auto& v : dg) v /= ramp;

    Tensor tmp(x.dims()), dx(x.dims()), dy(x.dims());
    filter_axis(x, tmp, g, false);    // smooth vertically
    filter_axis(tmp, dx, dg, true);   // derivative horizontally
    filter_axis(x, tmp, g, true);     // smooth horizontally
    filter_axis(tmp, dy, dg, false);  // derivative vertically

    Tensor mag(x.dims());
    for (std::int64_t i = 0; i < mag.numel(); ++i)
        mag[i] = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
    return mag;
}

// Largest 4-connected component of a binary map; writes 1/0 into `omega`.
void largest_component(const std::vector<char>& bin, int h, int w, std::vector<char>& omega) {
    std::fill(omega.begin(), omega.end(), 0);
    std::vector<int> label(bin.size(), -1);
    int best_label = -1;
    std::int64_t best_size = 0;
    int next = 0;
    std::deque<int> queue;
    for (std::size_t start = 0; start < bin.size(); ++start) {
        if (!bin[start] || label[start] >= 0) continue;
        std::int64_t size = 0;
        label[start] = next;
        queue.push_back(static_cast<int>(start));
        while (!queue.empty()) {
            int p = queue.front();
            queue.pop_front();
            ++size;
            int i = p / w, j = p % w;
            const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                int ii = i + di[k], jj = j + dj[k];
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                int q = ii * w + jj;
                if (bin[static_cast<std::size_t>(q)] && label[static_cast<std::size_t>(q)] < 0) {
                    label[static_cast<std::size_t>(q)] = next;
                    queue.push_back(q);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
        ++next;
    }
    if (best_label >= 0)
        for (std::size_t i = 0; i < bin.size(); ++i)
            if (label[i] == best_label) omega[i] = 1;
}

// Connectivity error: per-pixel threshold at which a pixel leaves the largest
// jointly-connected region, then degradation beyond theta.
double connectivity_error(const Tensor& pred, const Tensor& gt, const Tensor& unknown) {
    int h = pred.dim(0), w = pred.dim(1);
    std::vector<double> lmap(static_cast<std::size_t>(h) * w, -1.0);
    std::vector<char> bin(lmap.size()), omega(lmap.size());
    int steps = static_cast<int>(std::round(1.0 / kConnStep));
    for (int k = 1; k <= steps; ++k) {
        double t = k * kConnStep;
        for (std::size_t i = 0; i < bin.size(); ++i)
            bin[i] = (pred[static_cast<std::int64_t>(i)] >= t && gt[static_cast<std::int64_t>(i)] >= t) ? 1 : 0;
        largest_component(bin, h, w, omega);
        for (std::size_t i = 0; i < bin.size(); ++i)
            if (lmap[i] < 0.0 && !omega[i]) lmap[i] = (k - 1) * kConnStep;
    }
    for (auto& v : lmap)
        if (v < 0.0) v = 1.0;

    double acc = 0.0;
    for (std::size_t i = 0; i < lmap.size(); ++i) {
        if (unknown[static_cast<std::int64_t>(i)] <= 0.0) continue;
        double pd = pred[static_cast<std::int64_t>(i)] - lmap[i];
        double gd = gt[static_cast<std::int64_t>(i)] - lmap[i];
        double pphi = 1.0 - (pd >= kConnTheta ? pd : 0.0);
        double gphi = 1.0 - (gd >= kConnTheta ? gd : 0.0);
        acc += std::fabs(pphi - gphi);
    }
    return acc;
}

}  // namespace

MattingMetrics metric_suite(const Tensor& pred, const Tensor& gt, const Tensor& trimap) {
    if (!pred.same_shape(gt) || !pred.same_shape(trimap))
        throw std::invalid_argument("metric_suite: shape mismatch");
    Tensor unknown = unknown_region(trimap);
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < unknown.numel(); ++i)
        if (unknown[i] > 0.0) ++count;
    if (count == 0) throw std::invalid_argument("metric_suite: empty unknown region");

    MattingMetrics m;
    double sad = 0.0, sse = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i)
        if (unknown[i] > 0.0) {
            double d = pred[i] - gt[i];
            sad += std::fabs(d);
            sse += d * d;
        }
    m.sad = sad / 1000.0;
    m.mse = sse / static_cast<double>(count) * 1000.0;

    Tensor mp = gaussian_gradient_magnitude(pred, kGradSigma);
    Tensor mg = gaussian_gradient_magnitude(gt, kGradSigma);
    double ge = 0.0;
    for (std::int64_t i = 0; i < mp.numel(); ++i)
        if (unknown[i] > 0.0) {
            double d = mp[i] - mg[i];
            ge += d * d;
        }
    m.grad = ge * 1000.0;

    m.conn = connectivity_error(pred, gt, unknown) / 1000.0;
    return m;
}

}  // namespace pam
