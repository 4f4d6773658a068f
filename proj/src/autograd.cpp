#include "pam/autograd.hpp"

#include <Eigen/Core>

#include <cblas.h>

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace pam::nn {

namespace {

thread_local bool g_grad_enabled = true;

// Activation and patch buffers are hundreds of KB and recycle every
// iteration; keep them on the heap instead of mmap round trips.
[[maybe_unused]] const bool g_malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 64 << 20);
    openblas_set_num_threads(1);
    return true;
}();

// Row-major C = alpha*op(A)*op(B) + beta*C.
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c) {
    gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, n);
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

Var make_node(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

bool tape(std::initializer_list<const Var*> parents) {
    if (!g_grad_enabled) return false;
    for (const Var* p : parents)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

void attach(Var& out, std::vector<Var> parents, std::function<void(Node&)> fn) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_string(a->value.dims()) + " vs " +
                                    shape_string(b->value.dims()));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

Var constant(Tensor value) { return make_node(std::move(value)); }

Var leaf(Tensor value) {
    auto n = make_node(std::move(value));
    n->requires_grad = g_grad_enabled;
    return n;
}

Var make_scalar(double v) { return constant(Tensor({1}, std::vector<double>{v})); }

void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Post-order DFS over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------- arithmetic

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
    Var out = make_node(std::move(y));
    if (tape({&a, &b}))
        attach(out, {a, b}, [a, b](Node& n) {
            for (const Var& p : {a, b})
                if (p->requires_grad) {
                    Tensor& g = p->ensure_grad();
                    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
                }
        });
    return out;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
    Var out = make_node(std::move(y));
    if (tape({&a, &b}))
        attach(out, {a, b}, [a, b](Node& n) {
            if (a->requires_grad) {
                Tensor& g = a->ensure_grad();
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
            }
            if (b->requires_grad) {
                Tensor& g = b->ensure_grad();
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
            }
        });
    return out;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
    Var out = make_node(std::move(y));
    if (tape({&a, &b}))
        attach(out, {a, b}, [a, b](Node& n) {
            if (a->requires_grad) {
                Tensor& g = a->ensure_grad();
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                Tensor& g = b->ensure_grad();
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->value[i];
            }
        });
    return out;
}

Var scale(const Var& a, double s) {
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
    Var out = make_node(std::move(y));
    if (tape({&a}))
        attach(out, {a}, [a, s](Node& n) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
        });
    return out;
}

Var relu(const Var& a) {
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(0.0, y[i]);
    Var out = make_node(std::move(y));
    if (tape({&a}))
        attach(out, {a}, [a](Node& n) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i)
                if (a->value[i] > 0.0) g[i] += n.grad[i];
        });
    return out;
}

Var sigmoid(const Var& a) {
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    Var out = make_node(std::move(y));
    if (tape({&a}))
        attach(out, {a}, [a, out_w = std::weak_ptr<Node>(out)](Node& n) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                double s = n.value[i];
                g[i] += n.grad[i] * s * (1.0 - s);
            }
        });
    return out;
}

Var abs(const Var& a) {
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::fabs(y[i]);
    Var out = make_node(std::move(y));
    if (tape({&a}))
        attach(out, {a}, [a](Node& n) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                double x = a->value[i];
                g[i] += n.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
            }
        });
    return out;
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::clamp(y[i], lo, hi);
    Var out = make_node(std::move(y));
    if (tape({&a}))
        attach(out, {a}, [a, lo, hi](Node& n) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                double x = a->value[i];
                if (x >= lo && x <= hi) g[i] += n.grad[i];
            }
        });
    return out;
}

// ---------------------------------------------------------------- structural

Var concat_vec(const std::vector<Var>& parts) {
    int total = 0;
    for (const Var& p : parts) total += static_cast<int>(p->value.numel());
    Tensor y({total});
    int off = 0;
    for (const Var& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(), y.data() + off);
        off += static_cast<int>(p->value.numel());
    }
    Var out = make_node(std::move(y));
    bool any = false;
    for (const Var& p : parts) any = any || (g_grad_enabled && p->requires_grad);
    if (any)
        attach(out, parts, [parts](Node& n) {
            int off = 0;
            for (const Var& p : parts) {
                int k = static_cast<int>(p->value.numel());
                if (p->requires_grad) {
                    Tensor& g = p->ensure_grad();
                    for (int i = 0; i < k; ++i) g[i] += n.grad[off + i];
                }
                off += k;
            }
        });
    return out;
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
    int h = parts[0]->value.dim(1), w = parts[0]->value.dim(2), c = 0;
    for (const Var& p : parts) {
        if (p->value.dim(1) != h || p->value.dim(2) != w)
            throw std::invalid_argument("concat_channels: spatial mismatch");
        c += p->value.dim(0);
    }
    Tensor y({c, h, w});
    std::int64_t off = 0;
    for (const Var& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(), y.data() + off);
        off += p->value.numel();
    }
    Var out = make_node(std::move(y));
    bool any = false;
    for (const Var& p : parts) any = any || (g_grad_enabled && p->requires_grad);
    if (any)
        attach(out, parts, [parts](Node& n) {
            std::int64_t off = 0;
            for (const Var& p : parts) {
                std::int64_t k = p->value.numel();
                if (p->requires_grad) {
                    Tensor& g = p->ensure_grad();
                    for (std::int64_t i = 0; i < k; ++i) g[i] += n.grad[off + i];
                }
                off += k;
            }
        });
    return out;
}

Var channel_gate(const Var& x, const Var& g) {
    if (x->value.dim(0) != static_cast<int>(g->value.numel()))
        throw std::invalid_argument("channel_gate: channel mismatch");
    int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    Tensor y = x->value;
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) y[static_cast<std::int64_t>(ch) * hw + i] *= g->value[ch];
    Var out = make_node(std::move(y));
    if (tape({&x, &g}))
        attach(out, {x, g}, [x, g, c, hw](Node& n) {
            if (x->requires_grad) {
                Tensor& gx = x->ensure_grad();
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < hw; ++i) {
                        std::int64_t k = static_cast<std::int64_t>(ch) * hw + i;
                        gx[k] += n.grad[k] * g->value[ch];
                    }
            }
            if (g->requires_grad) {
                Tensor& gg = g->ensure_grad();
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        std::int64_t k = static_cast<std::int64_t>(ch) * hw + i;
                        acc += n.grad[k] * x->value[k];
                    }
                    gg[ch] += acc;
                }
            }
        });
    return out;
}

Var broadcast_chw(const Var& v, int h, int w) {
    int c = static_cast<int>(v->value.numel());
    Tensor y({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) y[static_cast<std::int64_t>(ch) * h * w + i] = v->value[ch];
    Var out = make_node(std::move(y));
    if (tape({&v}))
        attach(out, {v}, [v, c, h, w](Node& n) {
            Tensor& g = v->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int i = 0; i < h * w; ++i) acc += n.grad[static_cast<std::int64_t>(ch) * h * w + i];
                g[ch] += acc;
            }
        });
    return out;
}

Var row(const Var& m, int r) {
    if (m->value.rank() != 2 || r < 0 || r >= m->value.dim(0))
        throw std::invalid_argument("row: bad index or rank");
    int c = m->value.dim(1);
    Tensor y({c});
    std::copy(m->value.data() + static_cast<std::int64_t>(r) * c,
              m->value.data() + static_cast<std::int64_t>(r + 1) * c, y.data());
    Var out = make_node(std::move(y));
    if (tape({&m}))
        attach(out, {m}, [m, r, c](Node& n) {
            Tensor& g = m->ensure_grad();
            for (int i = 0; i < c; ++i) g[static_cast<std::int64_t>(r) * c + i] += n.grad[i];
        });
    return out;
}

Var scale_by(const Var& x, const Var& s, int index) {
    if (index < 0 || index >= s->value.numel())
        throw std::invalid_argument("scale_by: bad index");
    double sv = s->value[index];
    Tensor y = x->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= sv;
    Var out = make_node(std::move(y));
    if (tape({&x, &s}))
        attach(out, {x, s}, [x, s, index, sv](Node& n) {
            if (x->requires_grad) {
                Tensor& g = x->ensure_grad();
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * sv;
            }
            if (s->requires_grad) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * x->value[i];
                s->ensure_grad()[index] += acc;
            }
        });
    return out;
}

// ----------------------------------------------------------------- conv2d

namespace {

struct ConvDims {
    int cin, h, w, cout, k, ho, wo, groups, cing, coutg;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
    if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
    ConvDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = w.dim(0);
    d.k = w.dim(2);
    d.groups = groups;
    if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: non-square kernel");
    if (d.cin % groups != 0 || d.cout % groups != 0)
        throw std::invalid_argument("conv2d: groups do not divide channels");
    d.cing = d.cin / groups;
    d.coutg = d.cout / groups;
    if (w.dim(1) != d.cing) throw std::invalid_argument("conv2d: weight Cin mismatch");
    d.ho = (d.h + 2 * pad - d.k) / stride + 1;
    d.wo = (d.w + 2 * pad - d.k) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: empty output");
    return d;
}

// Valid output-column range [lo, hi] for one kernel column offset, i.e. the
// oj with 0 <= oj*stride + kj - pad < w; everything outside is zero padding.
void col_span(int kj, int stride, int pad, int w, int wo, int& lo, int& hi) {
    lo = 0;
    while (lo < wo && lo * stride + kj - pad < 0) ++lo;
    hi = std::min(wo - 1, (w - 1 + pad - kj) / stride);
}

// col: [cing*k*k, ho*wo] for one group, zero padding.
void im2col(const Tensor& x, const ConvDims& d, int g, int stride, int pad, MatRM& col) {
    col.resize(d.cing * d.k * d.k, d.ho * d.wo);
    for (int c = 0; c < d.cing; ++c) {
        const double* xc = x.data() + static_cast<std::int64_t>(g * d.cing + c) * d.h * d.w;
        for (int ki = 0; ki < d.k; ++ki)
            for (int kj = 0; kj < d.k; ++kj) {
                double* row = col.row(c * d.k * d.k + ki * d.k + kj).data();
                int lo, hi;
                col_span(kj, stride, pad, d.w, d.wo, lo, hi);
                for (int oi = 0; oi < d.ho; ++oi) {
                    double* orow = row + static_cast<std::int64_t>(oi) * d.wo;
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= d.h || hi < lo) {
                        for (int oj = 0; oj < d.wo; ++oj) orow[oj] = 0.0;
                        continue;
                    }
                    for (int oj = 0; oj < lo; ++oj) orow[oj] = 0.0;
                    const double* xr = xc + static_cast<std::int64_t>(ii) * d.w +
                                       (static_cast<std::int64_t>(lo) * stride + kj - pad);
                    if (stride == 1) {
                        for (int oj = lo; oj <= hi; ++oj) orow[oj] = xr[oj - lo];
                    } else {
                        for (int oj = lo; oj <= hi; ++oj) orow[oj] = xr[(oj - lo) * stride];
                    }
                    for (int oj = hi + 1; oj < d.wo; ++oj) orow[oj] = 0.0;
                }
            }
    }
}

void col2im_add(const MatRM& col, const ConvDims& d, int g, int stride, int pad, Tensor& dx) {
    for (int c = 0; c < d.cing; ++c) {
        double* xc = dx.data() + static_cast<std::int64_t>(g * d.cing + c) * d.h * d.w;
        for (int ki = 0; ki < d.k; ++ki)
            for (int kj = 0; kj < d.k; ++kj) {
                const double* row = col.row(c * d.k * d.k + ki * d.k + kj).data();
                int lo, hi;
                col_span(kj, stride, pad, d.w, d.wo, lo, hi);
                for (int oi = 0; oi < d.ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= d.h || hi < lo) continue;
                    double* xr = xc + static_cast<std::int64_t>(ii) * d.w +
                                 (static_cast<std::int64_t>(lo) * stride + kj - pad);
                    const double* orow = row + static_cast<std::int64_t>(oi) * d.wo;
                    for (int oj = lo; oj <= hi; ++oj) xr[(oj - lo) * stride] += orow[oj];
                }
            }
    }
}


// Stride-1 convolution as k*k tap GEMMs over a zero-padded input copy. Each
// tap (ki, kj) is one GEMM shifted by a flat offset into the padded planes;
// output columns that land in the padding ring compute garbage and are
// stripped afterwards. This keeps the data movement near the tensor size
// instead of the k*k-fold patch matrices.
struct ShiftScratch {
    std::vector<double> yp, gyp, gxp, wt;
};
ShiftScratch& shift_scratch() {
    static thread_local ShiftScratch s;
    return s;
}

std::shared_ptr<std::vector<double>> pad_input(const Tensor& x, const ConvDims& d, int pad) {
    const int hp = d.h + 2 * pad, wp = d.w + 2 * pad;
    auto xp = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(d.cin) * hp * wp, 0.0);
    for (int c = 0; c < d.cin; ++c) {
        const double* src = x.data() + static_cast<std::int64_t>(c) * d.h * d.w;
        double* dst = xp->data() + (static_cast<std::int64_t>(c) * hp + pad) * wp + pad;
        for (int i = 0; i < d.h; ++i)
            std::copy(src + static_cast<std::int64_t>(i) * d.w,
                      src + static_cast<std::int64_t>(i + 1) * d.w,
                      dst + static_cast<std::int64_t>(i) * wp);
    }
    return xp;
}

void pack_tap(const double* w, int cout, int cin, int ksz, int tap, double* wt) {
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            wt[co * cin + ci] = w[(static_cast<std::int64_t>(co) * cin + ci) * ksz + tap];
}

void shift_forward(const std::vector<double>& xp, const double* w, Tensor& y, const ConvDims& d,
                   int pad) {
    const int hp = d.h + 2 * pad, wp = d.w + 2 * pad, ksz = d.k * d.k;
    const int n = d.ho * wp, plane_p = hp * wp;
    ShiftScratch& sc = shift_scratch();
    sc.yp.resize(static_cast<std::size_t>(d.cout) * n);
    sc.wt.resize(static_cast<std::size_t>(d.cout) * d.cin);
    for (int ki = 0; ki < d.k; ++ki)
        for (int kj = 0; kj < d.k; ++kj) {
            pack_tap(w, d.cout, d.cin, ksz, ki * d.k + kj, sc.wt.data());
            gemm(false, false, d.cout, n, d.cin, 1.0, sc.wt.data(), d.cin,
                 xp.data() + ki * wp + kj, plane_p, (ki || kj) ? 1.0 : 0.0, sc.yp.data());
        }
    for (int co = 0; co < d.cout; ++co)
        for (int r = 0; r < d.ho; ++r)
            std::copy(sc.yp.data() + (static_cast<std::int64_t>(co) * d.ho + r) * wp,
                      sc.yp.data() + (static_cast<std::int64_t>(co) * d.ho + r) * wp + d.wo,
                      y.data() + (static_cast<std::int64_t>(co) * d.ho + r) * d.wo);
}

void shift_backward(const std::vector<double>& xp, const double* w, const double* gy, double* gx,
                    double* gw, const ConvDims& d, int pad) {
    const int hp = d.h + 2 * pad, wp = d.w + 2 * pad, ksz = d.k * d.k;
    const int n = d.ho * wp, plane_p = hp * wp;
    ShiftScratch& sc = shift_scratch();
    sc.gyp.assign(static_cast<std::size_t>(d.cout) * n, 0.0);
    sc.wt.resize(static_cast<std::size_t>(d.cout) * d.cin);
    for (int co = 0; co < d.cout; ++co)
        for (int r = 0; r < d.ho; ++r)
            std::copy(gy + (static_cast<std::int64_t>(co) * d.ho + r) * d.wo,
                      gy + (static_cast<std::int64_t>(co) * d.ho + r) * d.wo + d.wo,
                      sc.gyp.data() + (static_cast<std::int64_t>(co) * d.ho + r) * wp);
    if (gw) {
        for (int ki = 0; ki < d.k; ++ki)
            for (int kj = 0; kj < d.k; ++kj) {
                gemm(false, true, d.cout, d.cin, n, 1.0, sc.gyp.data(), n,
                     xp.data() + ki * wp + kj, plane_p, 0.0, sc.wt.data(), d.cin);
                int tap = ki * d.k + kj;
                for (int co = 0; co < d.cout; ++co)
                    for (int ci = 0; ci < d.cin; ++ci)
                        gw[(static_cast<std::int64_t>(co) * d.cin + ci) * ksz + tap] +=
                            sc.wt[co * d.cin + ci];
            }
    }
    if (gx) {
        sc.gxp.assign(static_cast<std::size_t>(d.cin) * plane_p, 0.0);
        for (int ki = 0; ki < d.k; ++ki)
            for (int kj = 0; kj < d.k; ++kj) {
                pack_tap(w, d.cout, d.cin, ksz, ki * d.k + kj, sc.wt.data());
                gemm(true, false, d.cin, n, d.cout, 1.0, sc.wt.data(), d.cin, sc.gyp.data(), n,
                     1.0, sc.gxp.data() + ki * wp + kj, plane_p);
            }
        for (int c = 0; c < d.cin; ++c) {
            const double* src =
                sc.gxp.data() + (static_cast<std::int64_t>(c) * hp + pad) * wp + pad;
            double* dst = gx + static_cast<std::int64_t>(c) * d.h * d.w;
            for (int i = 0; i < d.h; ++i)
                for (int j = 0; j < d.w; ++j)
                    dst[static_cast<std::int64_t>(i) * d.w + j] +=
                        src[static_cast<std::int64_t>(i) * wp + j];
        }
    }
}

// Reused buffer for untaped forwards and gradient columns.
MatRM& scratch() {
    static thread_local MatRM m;
    return m;
}

// Direct single-channel correlation, accumulated into y; used when each group
// is 1-in/1-out (depthwise stages, blur kernels), where patch lowering loses.
void corr_forward(const double* x, const double* w, double* y, const ConvDims& d, int stride,
                  int pad) {
    for (int ki = 0; ki < d.k; ++ki)
        for (int kj = 0; kj < d.k; ++kj) {
            double wv = w[ki * d.k + kj];
            int lo, hi;
            col_span(kj, stride, pad, d.w, d.wo, lo, hi);
            for (int oi = 0; oi < d.ho; ++oi) {
                int ii = oi * stride + ki - pad;
                if (ii < 0 || ii >= d.h || hi < lo) continue;
                const double* xr = x + static_cast<std::int64_t>(ii) * d.w +
                                   (static_cast<std::int64_t>(lo) * stride + kj - pad);
                double* yr = y + static_cast<std::int64_t>(oi) * d.wo;
                if (stride == 1) {
                    for (int oj = lo; oj <= hi; ++oj) yr[oj] += wv * xr[oj - lo];
                } else {
                    for (int oj = lo; oj <= hi; ++oj) yr[oj] += wv * xr[(oj - lo) * stride];
                }
            }
        }
}

void corr_backward(const double* x, const double* w, const double* gy, double* gx, double* gw,
                 const ConvDims& d, int stride, int pad) {
    for (int ki = 0; ki < d.k; ++ki)
        for (int kj = 0; kj < d.k; ++kj) {
            int lo, hi;
            col_span(kj, stride, pad, d.w, d.wo, lo, hi);
            double acc = 0.0;
            double wv = w[ki * d.k + kj];
            for (int oi = 0; oi < d.ho; ++oi) {
                int ii = oi * stride + ki - pad;
                if (ii < 0 || ii >= d.h || hi < lo) continue;
                std::int64_t base = static_cast<std::int64_t>(ii) * d.w +
                                    (static_cast<std::int64_t>(lo) * stride + kj - pad);
                const double* gyr = gy + static_cast<std::int64_t>(oi) * d.wo;
                if (gw) {
                    const double* xr = x + base;
                    if (stride == 1) {
                        for (int oj = lo; oj <= hi; ++oj) acc += xr[oj - lo] * gyr[oj];
                    } else {
                        for (int oj = lo; oj <= hi; ++oj) acc += xr[(oj - lo) * stride] * gyr[oj];
                    }
                }
                if (gx) {
                    double* gxr = gx + base;
                    if (stride == 1) {
                        for (int oj = lo; oj <= hi; ++oj) gxr[oj - lo] += wv * gyr[oj];
                    } else {
                        for (int oj = lo; oj <= hi; ++oj) gxr[(oj - lo) * stride] += wv * gyr[oj];
                    }
                }
            }
            if (gw) gw[ki * d.k + kj] += acc;
        }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    ConvDims d = conv_dims(x->value, w->value, stride, pad, groups);
    if (b->value.numel() != d.cout) throw std::invalid_argument("conv2d: bias size mismatch");

    Tensor y = Tensor::uninit({d.cout, d.ho, d.wo});
    const bool pointwise = (d.k == 1 && stride == 1 && pad == 0);
    const bool depthwise = !pointwise && d.cing == 1 && d.coutg == 1;
    const bool shifted = !pointwise && !depthwise && stride == 1 && groups == 1;
    const bool taped = tape({&x, &w, &b});
    // Padded copies and patch matrices survive into the backward pass so they
    // are built once.
    std::shared_ptr<std::vector<double>> xp;
    auto cols = (taped && !pointwise && !depthwise && !shifted)
                    ? std::make_shared<std::vector<MatRM>>(groups)
                    : nullptr;
    const std::int64_t plane = static_cast<std::int64_t>(d.ho) * d.wo;
    const std::int64_t xplane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t ksz = static_cast<std::int64_t>(d.k) * d.k;
    if (pointwise) {
        for (int g = 0; g < groups; ++g)
            gemm(false, false, d.coutg, static_cast<int>(xplane), d.cing, 1.0,
                 w->value.data() + static_cast<std::int64_t>(g) * d.coutg * d.cing, d.cing,
                 x->value.data() + g * d.cing * xplane, static_cast<int>(xplane), 0.0,
                 y.data() + g * d.coutg * plane);
    } else if (depthwise) {
        for (int c = 0; c < d.cout; ++c) {
            double* yc = y.data() + c * plane;
            for (std::int64_t i = 0; i < plane; ++i) yc[i] = 0.0;
            corr_forward(x->value.data() + c * xplane, w->value.data() + c * ksz, yc, d, stride,
                         pad);
        }
    } else if (shifted) {
        xp = pad_input(x->value, d, pad);
        shift_forward(*xp, w->value.data(), y, d, pad);
        if (!taped) xp.reset();
    } else {
        for (int g = 0; g < groups; ++g) {
            MatRM& col = cols ? (*cols)[static_cast<std::size_t>(g)] : scratch();
            im2col(x->value, d, g, stride, pad, col);
            gemm(false, false, d.coutg, static_cast<int>(plane), d.cing * static_cast<int>(ksz),
                 1.0, w->value.data() + static_cast<std::int64_t>(g) * d.coutg * d.cing * ksz,
                 d.cing * static_cast<int>(ksz), col.data(), static_cast<int>(plane), 0.0,
                 y.data() + g * d.coutg * plane);
        }
    }
    for (int c = 0; c < d.cout; ++c) {
        double bias = b->value[c];
        double* yc = y.data() + static_cast<std::int64_t>(c) * d.ho * d.wo;
        for (int i = 0; i < d.ho * d.wo; ++i) yc[i] += bias;
    }

    Var out = make_node(std::move(y));
    if (taped)
        attach(out, {x, w, b},
               [x, w, b, d, stride, pad, pointwise, depthwise, shifted, xp, cols](Node& n) {
            const int groups = d.groups;
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                for (int c = 0; c < d.cout; ++c) {
                    const double* gy = n.grad.data() + static_cast<std::int64_t>(c) * d.ho * d.wo;
                    double acc = 0.0;
                    for (int i = 0; i < d.ho * d.wo; ++i) acc += gy[i];
                    gb[c] += acc;
                }
            }
            const bool need_x = x->requires_grad;
            const bool need_w = w->requires_grad;
            if (!need_x && !need_w) return;
            const std::int64_t plane = static_cast<std::int64_t>(d.ho) * d.wo;
            const std::int64_t xplane = static_cast<std::int64_t>(d.h) * d.w;
            const std::int64_t ksz = static_cast<std::int64_t>(d.k) * d.k;
            if (pointwise) {
                for (int g = 0; g < groups; ++g) {
                    const double* wg =
                        w->value.data() + static_cast<std::int64_t>(g) * d.coutg * d.cing;
                    const double* gyg = n.grad.data() + g * d.coutg * plane;
                    const double* xg = x->value.data() + g * d.cing * xplane;
                    if (need_w)
                        gemm(false, true, d.coutg, d.cing, static_cast<int>(plane), 1.0, gyg,
                             static_cast<int>(plane), xg, static_cast<int>(xplane), 1.0,
                             w->ensure_grad().data() +
                                 static_cast<std::int64_t>(g) * d.coutg * d.cing);
                    if (need_x)
                        gemm(true, false, d.cing, static_cast<int>(xplane), d.coutg, 1.0, wg,
                             d.cing, gyg, static_cast<int>(plane), 1.0,
                             x->ensure_grad().data() + g * d.cing * xplane);
                }
                return;
            }
            if (shifted) {
                shift_backward(*xp, w->value.data(), n.grad.data(),
                               need_x ? x->ensure_grad().data() : nullptr,
                               need_w ? w->ensure_grad().data() : nullptr, d, pad);
                return;
            }
            if (depthwise) {
                double* gx = need_x ? x->ensure_grad().data() : nullptr;
                double* gw = need_w ? w->ensure_grad().data() : nullptr;
                for (int c = 0; c < d.cout; ++c) {
                    std::int64_t xoff = c * xplane;
                    std::int64_t woff = c * ksz;
                    corr_backward(x->value.data() + xoff, w->value.data() + woff,
                                  n.grad.data() + c * plane, gx ? gx + xoff : nullptr,
                                  gw ? gw + woff : nullptr, d, stride, pad);
                }
                return;
            }
            const int kc = d.cing * static_cast<int>(ksz);
            for (int g = 0; g < groups; ++g) {
                const double* gyg = n.grad.data() + g * d.coutg * plane;
                const MatRM& col = (*cols)[static_cast<std::size_t>(g)];
                if (need_w)
                    gemm(false, true, d.coutg, kc, static_cast<int>(plane), 1.0, gyg,
                         static_cast<int>(plane), col.data(), static_cast<int>(plane), 1.0,
                         w->ensure_grad().data() + static_cast<std::int64_t>(g) * d.coutg * kc);
                if (need_x) {
                    MatRM& gcol = scratch();
                    gcol.resize(kc, plane);
                    gemm(true, false, kc, static_cast<int>(plane), d.coutg, 1.0,
                         w->value.data() + static_cast<std::int64_t>(g) * d.coutg * kc, kc, gyg,
                         static_cast<int>(plane), 0.0, gcol.data());
                    col2im_add(gcol, d, g, stride, pad, x->ensure_grad());
                }
            }
        });
    return out;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    int in = static_cast<int>(x->value.numel());
    int out_n = w->value.dim(0);
    if (w->value.rank() != 2 || w->value.dim(1) != in || b->value.numel() != out_n)
        throw std::invalid_argument("linear: shape mismatch");
    Tensor y({out_n});
    CMapM wm(w->value.data(), out_n, in);
    Eigen::Map<const Eigen::VectorXd> xv(x->value.data(), in);
    Eigen::Map<Eigen::VectorXd> yv(y.data(), out_n);
    yv.noalias() = wm * xv;
    for (int i = 0; i < out_n; ++i) y[i] += b->value[i];
    Var outv = make_node(std::move(y));
    if (tape({&x, &w, &b}))
        attach(outv, {x, w, b}, [x, w, b, in, out_n](Node& n) {
            Eigen::Map<const Eigen::VectorXd> gy(n.grad.data(), out_n);
            CMapM wm(w->value.data(), out_n, in);
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                for (int i = 0; i < out_n; ++i) gb[i] += n.grad[i];
            }
            if (w->requires_grad) {
                MapM gw(w->ensure_grad().data(), out_n, in);
                Eigen::Map<const Eigen::VectorXd> xv(x->value.data(), in);
                gw.noalias() += gy * xv.transpose();
            }
            if (x->requires_grad) {
                Eigen::Map<Eigen::VectorXd> gx(x->ensure_grad().data(), in);
                gx.noalias() += wm.transpose() * gy;
            }
        });
    return outv;
}

Var global_avg_pool(const Var& x) {
    int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    Tensor y({c});
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* xc = x->value.data() + static_cast<std::int64_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) acc += xc[i];
        y[ch] = acc / hw;
    }
    Var out = make_node(std::move(y));
    if (tape({&x}))
        attach(out, {x}, [x, c, hw](Node& n) {
            Tensor& g = x->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double gv = n.grad[ch] / hw;
                double* gc = g.data() + static_cast<std::int64_t>(ch) * hw;
                for (int i = 0; i < hw; ++i) gc[i] += gv;
            }
        });
    return out;
}

Var avg_pool_grid(const Var& x, int out_hw) {
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (h % out_hw != 0 || w % out_hw != 0)
        throw std::invalid_argument("avg_pool_grid: resolution not divisible by grid");
    int th = h / out_hw, tw = w / out_hw;
    Tensor y({c, out_hw, out_hw});
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < out_hw; ++oi)
            for (int oj = 0; oj < out_hw; ++oj) {
                double acc = 0.0;
                for (int i = 0; i < th; ++i)
                    for (int j = 0; j < tw; ++j) acc += x->value.at(ch, oi * th + i, oj * tw + j);
                y.at(ch, oi, oj) = acc / (th * tw);
            }
    Var out = make_node(std::move(y));
    if (tape({&x}))
        attach(out, {x}, [x, c, out_hw, th, tw](Node& n) {
            Tensor& g = x->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int oi = 0; oi < out_hw; ++oi)
                    for (int oj = 0; oj < out_hw; ++oj) {
                        double gv = n.grad.at(ch, oi, oj) / (th * tw);
                        for (int i = 0; i < th; ++i)
                            for (int j = 0; j < tw; ++j)
                                g.at(ch, oi * th + i, oj * tw + j) += gv;
                    }
        });
    return out;
}

Var upsample_nearest(const Var& x, int factor) {
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor y({c, h * factor, w * factor});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * factor; ++i)
            for (int j = 0; j < w * factor; ++j) y.at(ch, i, j) = x->value.at(ch, i / factor, j / factor);
    Var out = make_node(std::move(y));
    if (tape({&x}))
        attach(out, {x}, [x, c, h, w, factor](Node& n) {
            Tensor& g = x->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h * factor; ++i)
                    for (int j = 0; j < w * factor; ++j)
                        g.at(ch, i / factor, j / factor) += n.grad.at(ch, i, j);
        });
    return out;
}

Var subsample2(const Var& x) {
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    int ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor y({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) y.at(ch, i, j) = x->value.at(ch, 2 * i, 2 * j);
    Var out = make_node(std::move(y));
    if (tape({&x}))
        attach(out, {x}, [x, c, ho, wo](Node& n) {
            Tensor& g = x->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < ho; ++i)
                    for (int j = 0; j < wo; ++j) g.at(ch, 2 * i, 2 * j) += n.grad.at(ch, i, j);
        });
    return out;
}

// ---------------------------------------------------------------- reductions

Var mean_all(const Var& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
    std::int64_t n = a->value.numel();
    Var out = make_node(Tensor({1}, std::vector<double>{acc / static_cast<double>(n)}));
    if (tape({&a}))
        attach(out, {a}, [a, n](Node& nd) {
            Tensor& g = a->ensure_grad();
            double gv = nd.grad[0] / static_cast<double>(n);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
        });
    return out;
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
    Var out = make_node(Tensor({1}, std::vector<double>{acc}));
    if (tape({&a}))
        attach(out, {a}, [a](Node& nd) {
            Tensor& g = a->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[0];
        });
    return out;
}

Var masked_charbonnier(const Var& pred, const Tensor& target, const Tensor& mask, double eps) {
    if (pred->value.numel() != target.numel() || pred->value.numel() != mask.numel())
        throw std::invalid_argument("masked_charbonnier: size mismatch");
    std::int64_t count = 0;
    double acc = 0.0;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] > 0.0) {
            double d = pred->value[i] - target[i];
            acc += std::sqrt(d * d + eps * eps);
            ++count;
        }
    if (count == 0) throw std::invalid_argument("masked_charbonnier: empty region");
    Var out = make_node(Tensor({1}, std::vector<double>{acc / static_cast<double>(count)}));
    if (tape({&pred}))
        attach(out, {pred}, [pred, target, mask, eps, count](Node& nd) {
            Tensor& g = pred->ensure_grad();
            double s = nd.grad[0] / static_cast<double>(count);
            for (std::int64_t i = 0; i < mask.numel(); ++i)
                if (mask[i] > 0.0) {
                    double d = pred->value[i] - target[i];
                    g[i] += s * d / std::sqrt(d * d + eps * eps);
                }
        });
    return out;
}

Var composition_charbonnier(const Var& pred, const Tensor& image, const Tensor& fg,
                            const Tensor& bg, const Tensor& mask, double eps) {
    std::int64_t hw = pred->value.numel();
    if (image.numel() != 3 * hw || fg.numel() != 3 * hw || bg.numel() != 3 * hw ||
        mask.numel() != hw)
        throw std::invalid_argument("composition_charbonnier: size mismatch");
    std::int64_t count = 0;
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i)
        if (mask[i] > 0.0) {
            double p = pred->value[i];
            for (int c = 0; c < 3; ++c) {
                std::int64_t k = c * hw + i;
                double d = image[k] - (p * fg[k] + (1.0 - p) * bg[k]);
                acc += std::sqrt(d * d + eps * eps);
            }
            ++count;
        }
    if (count == 0) throw std::invalid_argument("composition_charbonnier: empty region");
    double denom = static_cast<double>(count) * 3.0;
    Var out = make_node(Tensor({1}, std::vector<double>{acc / denom}));
    if (tape({&pred}))
        attach(out, {pred}, [pred, image, fg, bg, mask, eps, hw, denom](Node& nd) {
            Tensor& g = pred->ensure_grad();
            double s = nd.grad[0] / denom;
            for (std::int64_t i = 0; i < hw; ++i)
                if (mask[i] > 0.0) {
                    double p = pred->value[i];
                    double acc = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        std::int64_t k = c * hw + i;
                        double d = image[k] - (p * fg[k] + (1.0 - p) * bg[k]);
                        acc += d / std::sqrt(d * d + eps * eps) * (bg[k] - fg[k]);
                    }
                    g[i] += s * acc;
                }
        });
    return out;
}

Var cross_entropy_logits(const Var& logits, int label) {
    std::int64_t n = logits->value.numel();
    if (label < 0 || label >= n) throw std::invalid_argument("cross_entropy_logits: bad label");
    double mx = logits->value[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, logits->value[i]);
    double lse = 0.0;
    for (std::int64_t i = 0; i < n; ++i) lse += std::exp(logits->value[i] - mx);
    lse = std::log(lse) + mx;
    Var out = make_node(Tensor({1}, std::vector<double>{lse - logits->value[label]}));
    if (tape({&logits}))
        attach(out, {logits}, [logits, label, lse, n](Node& nd) {
            Tensor& g = logits->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                double p = std::exp(logits->value[i] - lse);
                g[i] += nd.grad[0] * (p - (i == label ? 1.0 : 0.0));
            }
        });
    return out;
}

Var softmax(const Var& logits) {
    std::int64_t n = logits->value.numel();
    Tensor y = logits->value;
    double mx = y[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, y[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        y[i] = std::exp(y[i] - mx);
        z += y[i];
    }
    for (std::int64_t i = 0; i < n; ++i) y[i] /= z;
    Var out = make_node(std::move(y));
    if (tape({&logits}))
        attach(out, {logits}, [logits, n](Node& nd) {
            Tensor& g = logits->ensure_grad();
            double dot = 0.0;
            for (std::int64_t i = 0; i < n; ++i) dot += nd.grad[i] * nd.value[i];
            for (std::int64_t i = 0; i < n; ++i) g[i] += nd.value[i] * (nd.grad[i] - dot);
        });
    return out;
}

Var straight_through_onehot(const Var& soft) {
    std::int64_t n = soft->value.numel();
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < n; ++i)
        if (soft->value[i] > soft->value[arg]) arg = i;
    Tensor y(soft->value.dims(), 0.0);
    y[arg] = 1.0;
    Var out = make_node(std::move(y));
    if (tape({&soft}))
        attach(out, {soft}, [soft](Node& nd) {
            Tensor& g = soft->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
        });
    return out;
}

}  // namespace pam::nn
