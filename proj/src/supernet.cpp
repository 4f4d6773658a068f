#include "pam/supernet.hpp"

#include <cmath>
#include <stdexcept>

#include "pam/rng.hpp"

namespace pam {

namespace {

void reject(const std::string& field, const std::string& why) {
    throw std::invalid_argument("SupernetConfig." + field + ": " + why);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

void SupernetConfig::validate() const {
    if (resolution < 16 || resolution % 16 != 0) reject("resolution", "must be a positive multiple of 16");
    if (input_channels != 4) reject("input_channels", "must be 4 (RGB + trimap plane)");
    if (stem_channels.size() != 2) reject("stem_channels", "expects exactly two entries");
    for (int c : stem_channels)
        if (c <= 0) reject("stem_channels", "entries must be positive");
    if (stage_count < 1 || stage_count > 20) reject("stage_count", "must be in [1, 20]");
    if (stage_channels <= 0) reject("stage_channels", "must be positive");
    if (stem_channels[1] != stage_channels) reject("stem_channels", "second entry must equal stage_channels");
    if (depthwise_kernel < 1 || depthwise_kernel % 2 == 0) reject("depthwise_kernel", "must be odd and positive");
    if (expansion_factor < 1) reject("expansion_factor", "must be >= 1");
    if (connect_reduction <= 0 || stage_channels % connect_reduction != 0)
        reject("connect_reduction", "must divide stage_channels");
    if (stage_channels % 8 != 0) reject("stage_channels", "must be divisible by 8 (decoder widths)");
    if (pyramid_scales.empty()) reject("pyramid_scales", "must be nonempty");
    for (int s : pyramid_scales)
        if (s <= 0 || stage_resolution() % s != 0)
            reject("pyramid_scales", "each scale must divide the stage resolution");
    if (embedding_buckets < 2) reject("embedding_buckets", "must be >= 2");
    if (embedding_dim <= 0) reject("embedding_dim", "must be positive");
    if (mlp_hidden <= 0) reject("mlp_hidden", "must be positive");
}

std::string SupernetConfig::canonical_string() const {
    std::string s = "resolution=" + std::to_string(resolution);
    s += ";input_channels=" + std::to_string(input_channels);
    s += ";stem_channels=";
    for (std::size_t i = 0; i < stem_channels.size(); ++i)
        s += (i ? "," : "") + std::to_string(stem_channels[i]);
    s += ";stage_count=" + std::to_string(stage_count);
    s += ";stage_channels=" + std::to_string(stage_channels);
    s += ";depthwise_kernel=" + std::to_string(depthwise_kernel);
    s += ";expansion_factor=" + std::to_string(expansion_factor);
    s += ";connect_reduction=" + std::to_string(connect_reduction);
    s += ";pyramid_scales=";
    for (std::size_t i = 0; i < pyramid_scales.size(); ++i)
        s += (i ? "," : "") + std::to_string(pyramid_scales[i]);
    s += ";embedding_buckets=" + std::to_string(embedding_buckets);
    s += ";embedding_dim=" + std::to_string(embedding_dim);
    s += ";mlp_hidden=" + std::to_string(mlp_hidden);
    return s;
}

std::uint64_t SupernetConfig::hash() const { return fnv1a(canonical_string()); }

bool is_path_estimator_param(const std::string& name) {
    return name.rfind("select.", 0) == 0 || name.rfind("embed.", 0) == 0;
}

// --------------------------------------------------------------------- build

namespace {

Tensor kaiming_conv(Rng& rng, int cout, int cin_g, int k) {
    Tensor w({cout, cin_g, k, k});
    double std = std::sqrt(2.0 / (static_cast<double>(cin_g) * k * k));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
    return w;
}

Tensor kaiming_linear(Rng& rng, int out, int in) {
    Tensor w({out, in});
    double std = std::sqrt(2.0 / static_cast<double>(in));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
    return w;
}

struct Widths {
    int c;        // stage channels
    int cx;       // expanded stage width
    int cr;       // connect / squeeze bottleneck
    int d1, d2, d3;  // decoder widths
    int pyr;      // pyramid branch width
    int mlp_in;   // squeeze + constraint feature
};

Widths widths(const SupernetConfig& cfg) {
    Widths w;
    w.c = cfg.stage_channels;
    w.cx = cfg.stage_channels * cfg.expansion_factor;
    w.cr = cfg.stage_channels / cfg.connect_reduction;
    w.d1 = cfg.stage_channels / 2;
    w.d2 = cfg.stage_channels / 4;
    w.d3 = cfg.stage_channels / 8;
    w.pyr = cfg.stage_channels / cfg.connect_reduction;
    w.mlp_in = w.cr + cfg.embedding_dim;
    return w;
}

}  // namespace

Checkpoint build(const SupernetConfig& config, std::uint64_t seed) {
    config.validate();
    Checkpoint ck;
    ck.config = config;
    ck.stage = 1;
    ck.epoch = 0;
    Rng rng(seed);
    const Widths w = widths(config);
    const int k = config.depthwise_kernel;

    auto put = [&ck](const std::string& name, Tensor t) { ck.params.emplace(name, std::move(t)); };
    auto conv = [&](const std::string& name, int cout, int cin_g, int kk) {
        put(name + ".weight", kaiming_conv(rng, cout, cin_g, kk));
        put(name + ".bias", Tensor({cout}, 0.0));
    };
    auto lin = [&](const std::string& name, int out, int in) {
        put(name + ".weight", kaiming_linear(rng, out, in));
        put(name + ".bias", Tensor({out}, 0.0));
    };

    conv("stem.conv1", config.stem_channels[0], config.input_channels, 3);
    conv("stem.conv2", config.stem_channels[1], config.stem_channels[0], 3);
    for (int i = 0; i < config.stage_count; ++i) {
        std::string st = "stages." + std::to_string(i);
        conv(st + ".dw", w.c, 1, k);  // depthwise: one filter per channel
        conv(st + ".pw1", w.cx, w.c, 1);
        conv(st + ".pw2", w.c, w.cx, 1);
        std::string cn = "connect." + std::to_string(i);
        conv(cn + ".conv1", w.cr, w.c, 1);
        put(cn + ".conv2.weight", Tensor({w.c, w.cr, 1, 1}, 0.0));  // identity at init
        put(cn + ".conv2.bias", Tensor({w.c}, 0.0));
        std::string se = "select." + std::to_string(i);
        lin(se + ".squeeze", w.cr, w.c);
        lin(se + ".gate", w.c, w.cr);
        lin(se + ".mlp1", config.mlp_hidden, w.mlp_in);
        lin(se + ".mlp2", 2, config.mlp_hidden);
    }
    {
        Tensor table({config.embedding_buckets, config.embedding_dim});
        double std = 1.0 / std::sqrt(static_cast<double>(config.embedding_dim));
        for (std::int64_t i = 0; i < table.numel(); ++i) table[i] = rng.normal() * std;
        put("embed.table", std::move(table));
    }
    for (int s : config.pyramid_scales) conv("pyramid.s" + std::to_string(s), w.pyr, w.c, 1);
    conv("pyramid.fuse", w.c, w.c + static_cast<int>(config.pyramid_scales.size()) * w.pyr, 1);
    conv("decoder.conv1", w.d1, w.c, 3);
    conv("decoder.conv2", w.d2, w.d1, 3);
    conv("decoder.conv3", w.d3, w.d2, 3);
    conv("decoder.head", 1, w.d3, 3);
    return ck;
}

std::int64_t parameter_count(const Checkpoint& ck) {
    std::int64_t n = 0;
    for (const auto& [name, t] : ck.params) n += t.numel();
    return n;
}

// ---------------------------------------------------------------- cost model

CostTable build_cost_table(const SupernetConfig& config) {
    config.validate();
    const Widths w = widths(config);
    const int r2 = config.resolution / 2;
    const int r4 = config.stage_resolution();
    const int r = config.resolution;

    auto conv_cost = [](LayerKind kind, int kk, int cin, int cout, int h, int s = 1) {
        return layer_flops({kind, kk, cin, cout, h, h, s});
    };

    CostTable t;
    // Stem.
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, config.input_channels, config.stem_channels[0], r2, 2);
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, config.stem_channels[0], config.stem_channels[1], r4, 2);
    // Selection layers run on every path.
    Flops select_cost = layer_flops({LayerKind::Mlp, 1, w.c, w.cr, 1, 1, 1}) +
                        layer_flops({LayerKind::Mlp, 1, w.cr, w.c, 1, 1, 1}) +
                        layer_flops({LayerKind::Mlp, 1, w.mlp_in, config.mlp_hidden, 1, 1, 1}) +
                        layer_flops({LayerKind::Mlp, 1, config.mlp_hidden, 2, 1, 1, 1});
    t.fixed_cost += select_cost * config.stage_count;
    // Pyramid pooling.
    for (int s : config.pyramid_scales)
        t.fixed_cost += conv_cost(LayerKind::PointwiseConv, 1, w.c, w.pyr, s);
    t.fixed_cost += conv_cost(LayerKind::PointwiseConv, 1,
                              w.c + static_cast<int>(config.pyramid_scales.size()) * w.pyr, w.c, r4);
    // Decoder.
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, w.c, w.d1, r4);
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, w.d1, w.d2, r2);
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, w.d2, w.d3, r2);
    t.fixed_cost += conv_cost(LayerKind::RegularConv, 3, w.d3, 1, r);

    Flops exec = conv_cost(LayerKind::DepthwiseConv, config.depthwise_kernel, w.c, w.c, r4) +
                 conv_cost(LayerKind::PointwiseConv, 1, w.c, w.cx, r4) +
                 conv_cost(LayerKind::PointwiseConv, 1, w.cx, w.c, r4);
    Flops bypass = conv_cost(LayerKind::PointwiseConv, 1, w.c, w.cr, r4) +
                   conv_cost(LayerKind::PointwiseConv, 1, w.cr, w.c, r4);
    t.execute_cost.assign(static_cast<std::size_t>(config.stage_count), exec);
    t.bypass_cost.assign(static_cast<std::size_t>(config.stage_count), bypass);
    t.validate();
    return t;
}

// ------------------------------------------------------------------ forwards

ParamVars ParamVars::from(const Checkpoint& ck) {
    ParamVars p;
    for (const auto& [name, t] : ck.params) p.vars.emplace(name, nn::leaf(t));
    return p;
}

const nn::Var& ParamVars::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::invalid_argument("ParamVars: missing parameter " + name);
    return it->second;
}

int constraint_bucket(Flops budget, const CostBounds& bounds, int buckets) {
    if (budget < bounds.c_min || budget > bounds.c_max)
        throw std::invalid_argument("budget " + std::to_string(budget) + " outside [" +
                                    std::to_string(bounds.c_min) + ", " + std::to_string(bounds.c_max) + "]");
    __int128 num = static_cast<__int128>(budget - bounds.c_min) * (buckets - 1) * 2 +
                   (bounds.c_max - bounds.c_min);
    __int128 den = static_cast<__int128>(bounds.c_max - bounds.c_min) * 2;
    return static_cast<int>(num / den);
}

nn::Var embed_constraint(Flops budget, const CostBounds& bounds, const SupernetConfig& config,
                         const ParamVars& params) {
    int b = constraint_bucket(budget, bounds, config.embedding_buckets);
    return nn::row(params.at("embed.table"), b);
}

SelectionOut select_path_layer(const nn::Var& feature, const std::optional<nn::Var>& constraint,
                               int stage_index, const SupernetConfig& config,
                               const ParamVars& params) {
    if (feature->value.dim(0) != config.stage_channels)
        throw std::invalid_argument("select_path_layer: channel mismatch");
    std::string p = "select." + std::to_string(stage_index);
    nn::Var pooled = nn::global_avg_pool(feature);
    nn::Var squeezed = nn::relu(nn::linear(pooled, params.at(p + ".squeeze.weight"),
                                           params.at(p + ".squeeze.bias")));
    nn::Var gate = nn::sigmoid(nn::linear(squeezed, params.at(p + ".gate.weight"),
                                          params.at(p + ".gate.bias")));
    SelectionOut out{nn::channel_gate(feature, gate), squeezed, std::nullopt};
    if (constraint) {
        nn::Var h = nn::relu(nn::linear(nn::concat_vec({squeezed, *constraint}),
                                        params.at(p + ".mlp1.weight"), params.at(p + ".mlp1.bias")));
        out.logits = nn::linear(h, params.at(p + ".mlp2.weight"), params.at(p + ".mlp2.bias"));
    }
    return out;
}

nn::Var connect_layer(const nn::Var& src, int stage_index, const SupernetConfig& config,
                      const ParamVars& params) {
    if (src->value.dim(0) != config.stage_channels)
        throw std::invalid_argument("connect_layer: channel mismatch");
    std::string p = "connect." + std::to_string(stage_index);
    nn::Var h = nn::relu(nn::conv2d(src, params.at(p + ".conv1.weight"), params.at(p + ".conv1.bias"), 1, 0, 1));
    nn::Var branch = nn::conv2d(h, params.at(p + ".conv2.weight"), params.at(p + ".conv2.bias"), 1, 0, 1);
    return nn::add(branch, src);
}

nn::Var stage_block(const nn::Var& src, int stage_index, const SupernetConfig& config,
                    const ParamVars& params) {
    if (src->value.dim(0) != config.stage_channels)
        throw std::invalid_argument("stage_block: channel mismatch");
    std::string p = "stages." + std::to_string(stage_index);
    int pad = config.depthwise_kernel / 2;
    nn::Var h = nn::conv2d(src, params.at(p + ".dw.weight"), params.at(p + ".dw.bias"), 1, pad,
                           config.stage_channels);
    h = nn::conv2d(h, params.at(p + ".pw1.weight"), params.at(p + ".pw1.bias"), 1, 0, 1);
    h = nn::relu(h);
    h = nn::conv2d(h, params.at(p + ".pw2.weight"), params.at(p + ".pw2.bias"), 1, 0, 1);
    return nn::add(h, src);
}

namespace {

enum class Routing { Fixed, Greedy, Relaxed };

struct CoreOut {
    nn::Var alpha;
    std::vector<nn::Var> logits;
    std::vector<nn::Var> soft;
    Path realized;
};

nn::Var assemble_input(const SupernetConfig& config, const Tensor& image, const Tensor& trimap) {
    int r = config.resolution;
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != r || image.dim(2) != r)
        throw std::invalid_argument("forward: image must be 3x" + std::to_string(r) + "x" + std::to_string(r));
    bool tri_ok = (trimap.rank() == 2 && trimap.dim(0) == r && trimap.dim(1) == r) ||
                  (trimap.rank() == 3 && trimap.dim(0) == 1 && trimap.dim(1) == r && trimap.dim(2) == r);
    if (!tri_ok) throw std::invalid_argument("forward: trimap resolution mismatch");
    Tensor x({4, r, r});
    std::copy(image.data(), image.data() + image.numel(), x.data());
    std::copy(trimap.data(), trimap.data() + trimap.numel(), x.data() + image.numel());
    return nn::constant(std::move(x));
}

CoreOut forward_core(const SupernetConfig& config, const ParamVars& params, const Tensor& image,
                     const Tensor& trimap, Routing routing, const Path* fixed_path,
                     const std::optional<nn::Var>& constraint, double tau, const Tensor* noise) {
    config.validate();
    if (routing == Routing::Fixed) {
        if (!fixed_path || fixed_path->stages() != config.stage_count)
            throw std::invalid_argument("forward: path length does not match stage_count");
        for (int d : fixed_path->decisions)
            if (d != 0 && d != 1) throw std::invalid_argument("forward: path entries must be 0 or 1");
    }
    if (routing == Routing::Relaxed) {
        if (tau <= 0.0) throw std::invalid_argument("forward_relaxed: tau must be positive");
        if (!noise || noise->rank() != 2 || noise->dim(0) != config.stage_count || noise->dim(1) != 2)
            throw std::invalid_argument("forward_relaxed: noise must be stage_count x 2");
    }

    nn::Var x = assemble_input(config, image, trimap);
    nn::Var feat = nn::relu(nn::conv2d(x, params.at("stem.conv1.weight"), params.at("stem.conv1.bias"), 2, 1, 1));
    feat = nn::relu(nn::conv2d(feat, params.at("stem.conv2.weight"), params.at("stem.conv2.bias"), 2, 1, 1));

    CoreOut out;
    out.realized.decisions.assign(static_cast<std::size_t>(config.stage_count), 0);
    for (int i = 0; i < config.stage_count; ++i) {
        SelectionOut sel = select_path_layer(feat, constraint, i, config, params);
        if (sel.logits) out.logits.push_back(*sel.logits);
        if (routing == Routing::Relaxed) {
            nn::Var perturbed = nn::scale(*sel.logits, 1.0 / tau);
            Tensor g({2}, std::vector<double>{noise->at(i, 0) / tau, noise->at(i, 1) / tau});
            perturbed = nn::add(perturbed, nn::constant(std::move(g)));
            nn::Var soft = nn::softmax(perturbed);
            out.soft.push_back(soft);
            nn::Var hard = nn::straight_through_onehot(soft);
            int d = hard->value[1] > 0.5 ? 1 : 0;
            out.realized.decisions[static_cast<std::size_t>(i)] = d;
            nn::Var exec_out = stage_block(sel.refined, i, config, params);
            nn::Var byp_out = connect_layer(sel.refined, i, config, params);
            feat = nn::add(nn::scale_by(exec_out, hard, 1), nn::scale_by(byp_out, hard, 0));
        } else {
            int d;
            if (routing == Routing::Fixed) {
                d = fixed_path->decisions[static_cast<std::size_t>(i)];
            } else {  // greedy argmax, tie -> bypass
                const Tensor& q = (*sel.logits)->value;
                d = q[1] > q[0] ? 1 : 0;
            }
            out.realized.decisions[static_cast<std::size_t>(i)] = d;
            feat = d ? stage_block(sel.refined, i, config, params)
                     : connect_layer(sel.refined, i, config, params);
        }
    }

    // Pyramid pooling over the final stage feature.
    int r4 = config.stage_resolution();
    std::vector<nn::Var> branches{feat};
    for (int s : config.pyramid_scales) {
        std::string p = "pyramid.s" + std::to_string(s);
        nn::Var b = nn::avg_pool_grid(feat, s);
        b = nn::relu(nn::conv2d(b, params.at(p + ".weight"), params.at(p + ".bias"), 1, 0, 1));
        branches.push_back(nn::upsample_nearest(b, r4 / s));
    }
    nn::Var fused = nn::relu(nn::conv2d(nn::concat_channels(branches), params.at("pyramid.fuse.weight"),
                                        params.at("pyramid.fuse.bias"), 1, 0, 1));

    nn::Var d1 = nn::relu(nn::conv2d(fused, params.at("decoder.conv1.weight"), params.at("decoder.conv1.bias"), 1, 1, 1));
    nn::Var up1 = nn::upsample_nearest(d1, 2);
    nn::Var d2 = nn::relu(nn::conv2d(up1, params.at("decoder.conv2.weight"), params.at("decoder.conv2.bias"), 1, 1, 1));
    nn::Var d3 = nn::relu(nn::conv2d(d2, params.at("decoder.conv3.weight"), params.at("decoder.conv3.bias"), 1, 1, 1));
    nn::Var up2 = nn::upsample_nearest(d3, 2);
    nn::Var head = nn::conv2d(up2, params.at("decoder.head.weight"), params.at("decoder.head.bias"), 1, 1, 1);
    out.alpha = nn::clamp(head, 0.0, 1.0);
    return out;
}

}  // namespace

nn::Var forward_fixed(const SupernetConfig& config, const ParamVars& params, const Tensor& image,
                      const Tensor& trimap, const Path& path) {
    return forward_core(config, params, image, trimap, Routing::Fixed, &path, std::nullopt, 0.0, nullptr)
        .alpha;
}

Tensor forward_path(const Checkpoint& ck, const Tensor& image, const Tensor& trimap, const Path& path) {
    nn::NoGradGuard ng;
    ParamVars params = ParamVars::from(ck);
    nn::Var alpha = forward_fixed(ck.config, params, image, trimap, path);
    int r = ck.config.resolution;
    Tensor out({r, r});
    std::copy(alpha->value.data(), alpha->value.data() + alpha->value.numel(), out.data());
    return out;
}

BudgetedResult forward_budgeted(const Checkpoint& ck, const Tensor& image, const Tensor& trimap,
                                Flops budget) {
    nn::NoGradGuard ng;
    CostTable table = build_cost_table(ck.config);
    CostBounds bounds = cost_bounds(table);
    if (budget < bounds.c_min || budget > bounds.c_max)
        throw std::invalid_argument("forward_budgeted: budget " + std::to_string(budget) +
                                    " outside [" + std::to_string(bounds.c_min) + ", " +
                                    std::to_string(bounds.c_max) + "]");
    ParamVars params = ParamVars::from(ck);
    nn::Var fc = embed_constraint(budget, bounds, ck.config, params);
    CoreOut core = forward_core(ck.config, params, image, trimap, Routing::Greedy, nullptr, fc, 0.0, nullptr);

    BudgetedResult res;
    for (const nn::Var& q : core.logits)
        res.logits.push_back({q->value[0], q->value[1]});
    Path path = core.realized;
    // Greedy projection: drop the executing stage with the weakest execute
    // margin until the path fits.
    while (path_cost(path, table) > budget) {
        int best = -1;
        double best_margin = 0.0;
        for (int i = 0; i < path.stages(); ++i) {
            if (!path.decisions[static_cast<std::size_t>(i)]) continue;
            double margin = res.logits[static_cast<std::size_t>(i)][1] -
                            res.logits[static_cast<std::size_t>(i)][0];
            if (best < 0 || margin < best_margin) {
                best = i;
                best_margin = margin;
            }
        }
        path.decisions[static_cast<std::size_t>(best)] = 0;
    }
    res.path = path;
    if (path == core.realized) {
        int r = ck.config.resolution;
        res.alpha = Tensor({r, r});
        std::copy(core.alpha->value.data(), core.alpha->value.data() + core.alpha->value.numel(),
                  res.alpha.data());
    } else {
        res.alpha = forward_path(ck, image, trimap, path);
    }
    return res;
}

RelaxedResult forward_relaxed(const SupernetConfig& config, const ParamVars& params,
                              const Tensor& image, const Tensor& trimap, Flops budget, double tau,
                              const Tensor& noise) {
    CostBounds bounds = cost_bounds(build_cost_table(config));
    nn::Var fc = embed_constraint(budget, bounds, config, params);
    CoreOut core = forward_core(config, params, image, trimap, Routing::Relaxed, nullptr, fc, tau, &noise);
    return RelaxedResult{core.alpha, core.soft, core.logits, core.realized};
}

}  // namespace pam
