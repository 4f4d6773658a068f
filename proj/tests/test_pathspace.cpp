#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <pam/pathspace.hpp>
#include <pam/supernet.hpp>

#include <cstdint>
#include <stdexcept>

using namespace pam;

TEST_CASE("path encoding roundtrips") {
    for (std::uint32_t idx = 0; idx < 16; ++idx) {
        Path p = Path::from_index(idx, 4);
        CHECK(p.index() == idx);
        CHECK(p.stages() == 4);
    }
    Path p = Path::from_index(5, 4);
    CHECK(p.bits() == "1010");  // bit 0 first
    CHECK(all_execute(4).bits() == "1111");
    CHECK(all_bypass(4).bits() == "0000");
    CHECK(all_execute(3).index() == 7);
}

TEST_CASE("enumerate_paths is canonical and complete") {
    auto paths = enumerate_paths(4);
    REQUIRE(paths.size() == 16);
    for (std::uint32_t i = 0; i < 16; ++i) CHECK(paths[i].index() == i);
    CHECK(enumerate_paths(1).size() == 2);
    CHECK_THROWS_AS(enumerate_paths(0), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_paths(21), std::invalid_argument);
}

TEST_CASE("layer_flops closed forms") {
    // 2 FLOPs per multiply-accumulate, counted by hand per layer type.
    LayerSpec reg{LayerKind::RegularConv, 3, 4, 16, 32, 32, 2};
    CHECK(layer_flops(reg) == 2LL * 3 * 3 * 4 * 16 * 32 * 32);

    LayerSpec dw{LayerKind::DepthwiseConv, 5, 32, 32, 16, 16, 1};
    CHECK(layer_flops(dw) == 2LL * 5 * 5 * 32 * 16 * 16);

    LayerSpec pw{LayerKind::PointwiseConv, 1, 32, 64, 16, 16, 1};
    CHECK(layer_flops(pw) == 2LL * 32 * 64 * 16 * 16);

    LayerSpec mlp{LayerKind::Mlp, 1, 16, 32, 1, 1, 1};
    CHECK(layer_flops(mlp) == 2LL * 16 * 32);

    LayerSpec pool{LayerKind::Pooling, 2, 32, 32, 8, 8, 2};
    CHECK(layer_flops(pool) == 0);
    LayerSpec up{LayerKind::Upsample, 1, 8, 8, 32, 32, 1};
    CHECK(layer_flops(up) == 0);

    LayerSpec bad = dw;
    bad.out_channels = 16;
    CHECK_THROWS_AS(layer_flops(bad), std::invalid_argument);
    bad = reg;
    bad.kernel = 0;
    CHECK_THROWS_AS(layer_flops(bad), std::invalid_argument);
}

TEST_CASE("cost table invariants") {
    CostTable t;
    t.fixed_cost = 100;
    t.execute_cost = {50, 60};
    t.bypass_cost = {5, 6};
    t.validate();

    CostTable bad = t;
    bad.bypass_cost = {5};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = t;
    bad.bypass_cost[1] = 60;  // bypass must be strictly cheaper
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = t;
    bad.fixed_cost = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("path_cost sums chosen branches") {
    CostTable t;
    t.fixed_cost = 1000;
    t.execute_cost = {50, 60, 70};
    t.bypass_cost = {5, 6, 7};

    CHECK(path_cost(all_bypass(3), t) == 1000 + 5 + 6 + 7);
    CHECK(path_cost(all_execute(3), t) == 1000 + 50 + 60 + 70);
    CHECK(path_cost(Path::from_index(0b101, 3), t) == 1000 + 50 + 6 + 70);

    // Adding one execute decision never lowers the cost.
    for (const Path& p : enumerate_paths(3)) {
        for (int i = 0; i < 3; ++i) {
            if (p.decisions[static_cast<std::size_t>(i)]) continue;
            Path q = p;
            q.decisions[static_cast<std::size_t>(i)] = 1;
            CHECK(path_cost(q, t) > path_cost(p, t));
        }
    }

    CHECK_THROWS_AS(path_cost(all_execute(2), t), std::invalid_argument);
    Path bad = all_bypass(3);
    bad.decisions[0] = 2;
    CHECK_THROWS_AS(path_cost(bad, t), std::invalid_argument);
}

TEST_CASE("cost_bounds and feasibility boundaries") {
    CostTable t;
    t.fixed_cost = 1000;
    t.execute_cost = {50, 60, 70, 80};
    t.bypass_cost = {5, 6, 7, 8};

    CostBounds b = cost_bounds(t);
    CHECK(b.c_min == 1000 + 26);
    CHECK(b.c_max == 1000 + 260);

    Path p = Path::from_index(0b0011, 4);
    Flops c = path_cost(p, t);
    CHECK(is_feasible(p, t, c));
    CHECK_FALSE(is_feasible(p, t, c - 1));
    CHECK(is_feasible(all_bypass(4), t, b.c_min));
    CHECK_FALSE(is_feasible(all_execute(4), t, b.c_max - 1));
    CHECK_THROWS_AS(is_feasible(p, t, -1), std::invalid_argument);
}

TEST_CASE("supernet cost table at the default resolution") {
    SupernetConfig cfg;
    CostTable t = build_cost_table(cfg);
    t.validate();
    REQUIRE(t.stages() == 4);

    // Fixed part rebuilt layer by layer from the architecture definition:
    // stem, per-stage selection layers, pyramid pooling, decoder, head.
    const Flops hw16 = 16 * 16;
    Flops fixed = 0;
    fixed += 2LL * 3 * 3 * 4 * 16 * 32 * 32;    // stem conv1, 64 -> 32
    fixed += 2LL * 3 * 3 * 16 * 32 * 16 * 16;   // stem conv2, 32 -> 16
    // Selection layer per stage: squeeze/excite MLPs on pooled features plus
    // the gating MLP over [squeezed, constraint embedding].
    const Flops select = 2LL * 32 * 8 + 2LL * 8 * 32 + 2LL * (8 + 16) * 32 + 2LL * 32 * 2;
    fixed += 4 * select;
    for (int scale : {1, 2, 4}) fixed += 2LL * 32 * 8 * scale * scale;  // pyramid branches
    fixed += 2LL * (32 + 3 * 8) * 32 * hw16;    // pyramid fuse pointwise
    fixed += 2LL * 3 * 3 * 32 * 16 * hw16;      // decoder 16x16
    fixed += 2LL * 3 * 3 * 16 * 8 * 32 * 32;    // decoder 32x32
    fixed += 2LL * 3 * 3 * 8 * 4 * 32 * 32;     // decoder refine
    fixed += 2LL * 3 * 3 * 4 * 1 * 64 * 64;     // head at full resolution
    CHECK(t.fixed_cost == fixed);

    Flops exec = 2LL * 5 * 5 * 32 * hw16        // depthwise 5x5
               + 2LL * 32 * 64 * hw16           // expand pointwise
               + 2LL * 64 * 32 * hw16;          // project pointwise
    Flops byp = 2LL * 32 * 8 * hw16             // connect reduce
              + 2LL * 8 * 32 * hw16;            // connect restore
    for (int s = 0; s < 4; ++s) {
        CHECK(t.execute_cost[static_cast<std::size_t>(s)] == exec);
        CHECK(t.bypass_cost[static_cast<std::size_t>(s)] == byp);
    }

    CostBounds b = cost_bounds(t);
    CHECK(b.c_min == 11129856);
    CHECK(b.c_max == 20108288);
    CHECK(b.c_max - b.c_min == 8978432);
    CHECK(exec - byp == 2244608);
}
