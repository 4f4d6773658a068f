#include "pam/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pam {

namespace {

// Smooth color field: bilinear corner gradient plus a few low-frequency waves.
Tensor smooth_field(Rng& rng, int res) {
    Tensor out({3, res, res});
    for (int c = 0; c < 3; ++c) {
        double c00 = rng.uniform(), c01 = rng.uniform(), c10 = rng.uniform(), c11 = rng.uniform();
        struct Wave {
            double fx, fy, phase, amp;
        };
        std::vector<Wave> waves;
        for (int k = 0; k < 3; ++k)
            waves.push_back({rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
                             rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.01, 0.06)});
        // sin(fx*x + fy*y + phase) factored into row/column tables via the angle-sum identity.
        std::vector<double> rs(3 * res), rc(3 * res), cs(3 * res), cc(3 * res);
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < res; ++i) {
                double t = static_cast<double>(i) / (res - 1);
                double ay = 2.0 * M_PI * waves[k].fy * t + waves[k].phase;
                double ax = 2.0 * M_PI * waves[k].fx * t;
                rs[k * res + i] = std::sin(ay);
                rc[k * res + i] = std::cos(ay);
                cs[k * res + i] = std::sin(ax);
                cc[k * res + i] = std::cos(ax);
            }
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                double y = static_cast<double>(i) / (res - 1);
                double x = static_cast<double>(j) / (res - 1);
                double v = c00 * (1 - y) * (1 - x) + c01 * (1 - y) * x + c10 * y * (1 - x) + c11 * y * x;
                for (int k = 0; k < 3; ++k)
                    v += waves[k].amp * (rs[k * res + i] * cc[k * res + j] + rc[k * res + i] * cs[k * res + j]);
                out.at(c, i, j) = std::clamp(v, 0.0, 1.0);
            }
    }
    return out;
}

double dist_point_segment(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0) : 0.0;
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

MattingSample generate_sample(std::uint64_t seed, std::uint64_t index, const DataConfig& config) {
    const int res = config.resolution;
    if (res < 16) throw std::invalid_argument("generate_sample: resolution too small");
    Rng rng = Rng::from_keys(seed, index);

    MattingSample s;
    s.id = std::to_string(seed) + "-" + std::to_string(index);
    s.bg = smooth_field(rng, res);
    s.fg = smooth_field(rng, res);
    s.alpha = Tensor({res, res}, 0.0);

    int n_shapes = static_cast<int>(rng.uniform_int(config.min_shapes, config.max_shapes));
    for (int k = 0; k < n_shapes; ++k) {
        int kind = static_cast<int>(rng.uniform_int(0, 2));
        double feather = rng.uniform(config.feather_min, config.feather_max);
        double cx = rng.uniform(0.3, 0.7) * res;
        double cy = rng.uniform(0.3, 0.7) * res;
        double r0 = rng.uniform(res / 8.0, res / 4.5);
        // Fractal blob: radius modulated by a short Fourier series in angle.
        double a1 = 0, a2 = 0, a3 = 0, p1 = 0, p2 = 0, p3 = 0;
        double bx = 0, by = 0;
        if (kind == 1) {  // capsule endpoints
            double ang = rng.uniform(0.0, 2.0 * M_PI), len = rng.uniform(res / 8.0, res / 4.0);
            bx = cx + std::cos(ang) * len;
            by = cy + std::sin(ang) * len;
            r0 = rng.uniform(res / 14.0, res / 8.0);
        } else if (kind == 2) {
            a1 = rng.uniform(0.0, 0.2);
            a2 = rng.uniform(0.0, 0.15);
            a3 = rng.uniform(0.0, 0.1);
            p1 = rng.uniform(0.0, 2.0 * M_PI);
            p2 = rng.uniform(0.0, 2.0 * M_PI);
            p3 = rng.uniform(0.0, 2.0 * M_PI);
        }
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                double d;
                if (kind == 1) {
                    d = dist_point_segment(j, i, cx, cy, bx, by) - r0;
                } else {
                    double dx = j - cx, dy = i - cy;
                    double rr = r0;
                    if (kind == 2) {
                        double th = std::atan2(dy, dx);
                        rr = r0 * (1.0 + a1 * std::cos(th + p1) + a2 * std::cos(2 * th + p2) +
                                   a3 * std::cos(3 * th + p3));
                    }
                    d = std::sqrt(dx * dx + dy * dy) - rr;
                }
                double a = std::clamp(0.5 - d / feather, 0.0, 1.0);
                s.alpha.at(i, j) = std::max(s.alpha.at(i, j), a);
            }
    }

    s.image = Tensor({3, res, res});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                double a = s.alpha.at(i, j);
                s.image.at(c, i, j) = a * s.fg.at(c, i, j) + (1.0 - a) * s.bg.at(c, i, j);
            }
    s.trimap = make_trimap(s.alpha, config.trimap_erode, config.trimap_dilate);
    return s;
}

namespace {

// Erosion with a Euclidean disk; pixels outside the image count as in-set.
std::vector<char> erode(const std::vector<char>& set, int res, int radius) {
    std::vector<char> out(set.size(), 0);
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offsets.push_back({dy, dx});
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            bool keep = set[static_cast<std::size_t>(i) * res + j] != 0;
            for (std::size_t k = 0; keep && k < offsets.size(); ++k) {
                int ii = i + offsets[k].first, jj = j + offsets[k].second;
                if (ii < 0 || ii >= res || jj < 0 || jj >= res) continue;
                keep = set[static_cast<std::size_t>(ii) * res + jj] != 0;
            }
            out[static_cast<std::size_t>(i) * res + j] = keep ? 1 : 0;
        }
    return out;
}

}  // namespace

Tensor make_trimap(const Tensor& alpha, int erode_radius, int dilate_radius) {
    if (erode_radius < 1 || dilate_radius < 1)
        throw std::invalid_argument("make_trimap: radii must be >= 1");
    if (alpha.rank() != 2) throw std::invalid_argument("make_trimap: alpha must be H×W");
    const int res = alpha.dim(0);
    std::vector<char> fg_set(static_cast<std::size_t>(res) * res), bg_set(fg_set.size());
    bool has_soft = false;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            double a = alpha.at(i, j);
            fg_set[static_cast<std::size_t>(i) * res + j] = (a >= 1.0) ? 1 : 0;
            bg_set[static_cast<std::size_t>(i) * res + j] = (a <= 0.0) ? 1 : 0;
            if (a > 0.0 && a < 1.0) has_soft = true;
        }
    std::vector<char> fg = erode(fg_set, res, erode_radius);
    std::vector<char> bg = erode(bg_set, res, dilate_radius);

    Tensor tri({res, res}, 0.5);
    bool any_fg = false, any_bg = false;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            std::size_t k = static_cast<std::size_t>(i) * res + j;
            if (fg[k]) {
                tri.at(i, j) = 1.0;
                any_fg = true;
            } else if (bg[k]) {
                tri.at(i, j) = 0.0;
                any_bg = true;
            }
        }
    if (!any_fg && !any_bg)
        throw std::invalid_argument(
            "make_trimap: erosion radii (" + std::to_string(erode_radius) + ", " +
            std::to_string(dilate_radius) + ") left no certain pixels; trimap would be all-unknown");
    (void)has_soft;
    return tri;
}

MattingSample hflip_sample(const MattingSample& s) {
    MattingSample o = s;
    const int res = s.alpha.dim(0);
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            o.alpha.at(i, j) = s.alpha.at(i, res - 1 - j);
            o.trimap.at(i, j) = s.trimap.at(i, res - 1 - j);
            for (int c = 0; c < 3; ++c) {
                o.image.at(c, i, j) = s.image.at(c, i, res - 1 - j);
                o.fg.at(c, i, j) = s.fg.at(c, i, res - 1 - j);
                o.bg.at(c, i, j) = s.bg.at(c, i, res - 1 - j);
            }
        }
    return o;
}

MattingSample rot90_sample(const MattingSample& s, int quarter_turns) {
    int q = ((quarter_turns % 4) + 4) % 4;
    MattingSample o = s;
    const int res = s.alpha.dim(0);
    auto map = [&](int i, int j, int& si, int& sj) {
        switch (q) {
            case 0: si = i; sj = j; break;
            case 1: si = j; sj = res - 1 - i; break;  // 90° counterclockwise source
            case 2: si = res - 1 - i; sj = res - 1 - j; break;
            default: si = res - 1 - j; sj = i; break;
        }
    };
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            int si, sj;
            map(i, j, si, sj);
            o.alpha.at(i, j) = s.alpha.at(si, sj);
            o.trimap.at(i, j) = s.trimap.at(si, sj);
            for (int c = 0; c < 3; ++c) {
                o.image.at(c, i, j) = s.image.at(c, si, sj);
                o.fg.at(c, i, j) = s.fg.at(c, si, sj);
                o.bg.at(c, i, j) = s.bg.at(c, si, sj);
            }
        }
    return o;
}

MattingSample augment(const MattingSample& s, Rng& rng, const DataConfig& config) {
    if (!config.augment_enabled) return s;
    bool flip = rng.uniform() < 0.5;
    int turns = static_cast<int>(rng.uniform_int(0, 3));
    double gain = rng.uniform(0.9, 1.1);

    MattingSample o = flip ? hflip_sample(s) : s;
    if (turns) o = rot90_sample(o, turns);
    const int res = o.alpha.dim(0);
    // Joint brightness change on F and B, then recomposite so the identity
    // image = a*F + (1-a)*B holds exactly.
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                o.fg.at(c, i, j) = std::clamp(o.fg.at(c, i, j) * gain, 0.0, 1.0);
                o.bg.at(c, i, j) = std::clamp(o.bg.at(c, i, j) * gain, 0.0, 1.0);
                double a = o.alpha.at(i, j);
                o.image.at(c, i, j) = a * o.fg.at(c, i, j) + (1.0 - a) * o.bg.at(c, i, j);
            }
    return o;
}

}  // namespace pam
