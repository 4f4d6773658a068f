#include "pam/pathspace.hpp"

#include <stdexcept>

namespace pam {

std::uint32_t Path::index() const {
    std::uint32_t idx = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i)
        if (decisions[i]) idx |= (1u << i);
    return idx;
}

Path Path::from_index(std::uint32_t idx, int n) {
    Path p;
    p.decisions.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p.decisions[static_cast<std::size_t>(i)] = (idx >> i) & 1u;
    return p;
}

std::string Path::bits() const {
    std::string s;
    for (int d : decisions) s += (d ? '1' : '0');
    return s;
}

Path all_execute(int n) { return Path::from_index((1u << n) - 1u, n); }
Path all_bypass(int n) { return Path::from_index(0u, n); }

void CostTable::validate() const {
    if (execute_cost.empty() || execute_cost.size() != bypass_cost.size())
        throw std::invalid_argument("CostTable: empty or mismatched stage lists");
    if (fixed_cost < 0) throw std::invalid_argument("CostTable: negative fixed_cost");
    for (std::size_t i = 0; i < execute_cost.size(); ++i) {
        if (execute_cost[i] < 0 || bypass_cost[i] < 0)
            throw std::invalid_argument("CostTable: negative stage cost");
        if (bypass_cost[i] >= execute_cost[i])
            throw std::invalid_argument("CostTable: bypass_cost must be below execute_cost at stage " +
                                        std::to_string(i));
    }
}

namespace {

void require_positive(int v, const char* field) {
    if (v <= 0) throw std::invalid_argument(std::string("LayerSpec: nonpositive ") + field);
}

}  // namespace

Flops layer_flops(const LayerSpec& spec) {
    require_positive(spec.kernel, "kernel");
    require_positive(spec.in_channels, "in_channels");
    require_positive(spec.out_channels, "out_channels");
    require_positive(spec.out_height, "out_height");
    require_positive(spec.out_width, "out_width");
    require_positive(spec.stride, "stride");

    const Flops hw = static_cast<Flops>(spec.out_height) * spec.out_width;
    const Flops k2 = static_cast<Flops>(spec.kernel) * spec.kernel;
    switch (spec.kind) {
        case LayerKind::RegularConv:
            return 2 * k2 * spec.in_channels * spec.out_channels * hw;
        case LayerKind::DepthwiseConv:
            if (spec.in_channels != spec.out_channels)
                throw std::invalid_argument("LayerSpec: depthwise requires in_channels == out_channels");
            return 2 * k2 * spec.in_channels * hw;
        case LayerKind::PointwiseConv:
            return 2 * static_cast<Flops>(spec.in_channels) * spec.out_channels * hw;
        case LayerKind::Mlp:
            return 2 * static_cast<Flops>(spec.in_channels) * spec.out_channels;
        case LayerKind::Pooling:
        case LayerKind::Upsample:
            return 0;
    }
    throw std::invalid_argument("LayerSpec: unknown kind");
}

std::vector<Path> enumerate_paths(int n) {
    if (n < 1 || n > 20)
        throw std::invalid_argument("enumerate_paths: stage count must be in [1, 20]");
    std::vector<Path> paths;
    paths.reserve(std::size_t{1} << n);
    for (std::uint32_t i = 0; i < (1u << n); ++i) paths.push_back(Path::from_index(i, n));
    return paths;
}

Flops path_cost(const Path& path, const CostTable& table) {
    table.validate();
    if (path.stages() != table.stages())
        throw std::invalid_argument("path_cost: path length " + std::to_string(path.stages()) +
                                    " does not match table stages " + std::to_string(table.stages()));
    Flops total = table.fixed_cost;
    for (int i = 0; i < path.stages(); ++i) {
        int d = path.decisions[static_cast<std::size_t>(i)];
        if (d != 0 && d != 1) throw std::invalid_argument("path_cost: decision not in {0,1}");
        total += d ? table.execute_cost[static_cast<std::size_t>(i)]
                   : table.bypass_cost[static_cast<std::size_t>(i)];
    }
    return total;
}

CostBounds cost_bounds(const CostTable& table) {
    table.validate();
    int n = table.stages();
    return {path_cost(all_bypass(n), table), path_cost(all_execute(n), table)};
}

bool is_feasible(const Path& path, const CostTable& table, Flops budget) {
    if (budget < 0) throw std::invalid_argument("is_feasible: negative budget");
    return path_cost(path, table) <= budget;
}

}  // namespace pam
