#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pam {

using Flops = std::int64_t;

// Per-stage execute/bypass decisions. Canonical integer encoding is
// little-endian: bit i holds decisions[i].
struct Path {
    std::vector<int> decisions;

    int stages() const { return static_cast<int>(decisions.size()); }
    std::uint32_t index() const;
    static Path from_index(std::uint32_t idx, int n);
    std::string bits() const;  // e.g. "1010", decision 0 first

    bool operator==(const Path& o) const { return decisions == o.decisions; }
};

Path all_execute(int n);
Path all_bypass(int n);

enum class LayerKind { RegularConv, DepthwiseConv, PointwiseConv, Pooling, Upsample, Mlp };

struct LayerSpec {
    LayerKind kind;
    int kernel = 1;
    int in_channels = 1;
    int out_channels = 1;
    int out_height = 1;
    int out_width = 1;
    int stride = 1;
};

// Exact FLOP accounting for one path through the supernet. Costs are bound to
// a single input resolution.
struct CostTable {
    Flops fixed_cost = 0;
    std::vector<Flops> execute_cost;  // per adaptive stage
    std::vector<Flops> bypass_cost;

    int stages() const { return static_cast<int>(execute_cost.size()); }
    void validate() const;  // throws on invariant violation
};

// 2 FLOPs per multiply-accumulate; bias/activation/pooling arithmetic counts
// as zero, so Pooling/Upsample specs cost nothing and Mlp costs 2*in*out.
Flops layer_flops(const LayerSpec& spec);

std::vector<Path> enumerate_paths(int n);  // canonical index order; 1 <= n <= 20

Flops path_cost(const Path& path, const CostTable& table);

struct CostBounds {
    Flops c_min;
    Flops c_max;
};
CostBounds cost_bounds(const CostTable& table);

bool is_feasible(const Path& path, const CostTable& table, Flops budget);

}  // namespace pam
