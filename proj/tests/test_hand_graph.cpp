#include <algorithm>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "hagcn/hand_graph.hpp"

using namespace hagcn;

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
}

}  // namespace

TEST(JointMap, IsPermutation) {
    std::set<std::size_t> seen{joint::wrist};
    for (std::size_t f = 0; f < joint::fingers; ++f)
        for (std::size_t i = 0; i < joint::per_finger; ++i) seen.insert(joint::of(f, i));
    EXPECT_EQ(seen.size(), 21u);
    EXPECT_EQ(*seen.rbegin(), 20u);
    EXPECT_EQ(joint::tip(1), joint::index_tip);
    EXPECT_EQ(joint::base(2), joint::middle_base);
}

TEST(Topology, NaturalEdgesFormSpanningTree) {
    const auto g = build_topology();
    ASSERT_EQ(g.natural_edges.size(), 20u);
    std::vector<std::size_t> uf(kVertexCount);
    std::iota(uf.begin(), uf.end(), std::size_t{0});
    for (const auto& [a, b] : g.natural_edges) {
        const auto ra = find_root(uf, a), rb = find_root(uf, b);
        EXPECT_NE(ra, rb) << "cycle through " << a << "-" << b;
        uf[ra] = rb;
    }
    const auto root = find_root(uf, 0);
    for (std::size_t v = 0; v < kVertexCount; ++v) EXPECT_EQ(find_root(uf, v), root);
    // wrist children
    std::set<std::size_t> wrist_children;
    for (const auto& [c, p] : g.natural_edges)
        if (p == joint::wrist) wrist_children.insert(c);
    EXPECT_EQ(wrist_children, (std::set<std::size_t>{1, 5, 9, 13, 17}));
}

TEST(Topology, SupplementaryEdges) {
    const auto g = build_topology();
    EXPECT_EQ(g.supp_neighbor_edges, (std::vector<Edge>{{4, 5}, {8, 9}, {12, 13}, {16, 17}}));
    EXPECT_EQ(g.supp_bend_edges, (std::vector<Edge>{{4, 2}, {8, 6}, {12, 10}, {16, 14}, {20, 18}}));
    std::set<std::pair<std::size_t, std::size_t>> all;
    auto add = [&](const std::vector<Edge>& edges) {
        for (auto [a, b] : edges) all.insert({std::min(a, b), std::max(a, b)});
    };
    add(g.natural_edges);
    add(g.supp_neighbor_edges);
    add(g.supp_bend_edges);
    EXPECT_EQ(all.size(), 29u);
    // pinky tip has no neighbour edge
    for (const auto& [a, b] : g.supp_neighbor_edges) EXPECT_NE(a, joint::pinky_tip);
}

TEST(Topology, ParentsAndDepth) {
    const auto g = build_topology();
    EXPECT_EQ(g.parent_of[0], 0u);
    EXPECT_EQ(g.parent_of[8], 7u);
    EXPECT_EQ(g.parent_of[5], 0u);
    EXPECT_EQ(g.depth[0], 0u);
    EXPECT_EQ(g.depth[4], 4u);
}

TEST(Adjacency, NonzeroCounts) {
    const auto g = build_topology();
    EXPECT_EQ(build_raw_adjacency(g, false).nonzero_count(1), 20u);
    EXPECT_EQ(build_raw_adjacency(g, true).nonzero_count(1), 29u);
    EXPECT_EQ(build_raw_adjacency(g, true).nonzero_count(2), 29u);
    EXPECT_EQ(build_raw_adjacency(g, true).nonzero_count(0), 21u);
}

TEST(Adjacency, SelfSliceIsIdentity) {
    for (bool supp : {false, true}) {
        const auto a = build_adjacency(build_topology(), supp);
        for (std::size_t i = 0; i < kVertexCount; ++i)
            for (std::size_t j = 0; j < kVertexCount; ++j) EXPECT_EQ(a(i, j, 0), i == j ? 1.0 : 0.0);
    }
}

TEST(Adjacency, TransposeDuality) {
    for (bool supp : {false, true}) {
        const auto a = build_raw_adjacency(build_topology(), supp);
        for (std::size_t i = 0; i < kVertexCount; ++i)
            for (std::size_t j = 0; j < kVertexCount; ++j) EXPECT_EQ(a(i, j, 1), a(j, i, 2));
    }
}

TEST(Adjacency, InwardPointsTowardWrist) {
    const auto g = build_topology();
    const auto a = build_raw_adjacency(g, true);
    for (std::size_t v = 1; v < kVertexCount; ++v) EXPECT_EQ(a(v, g.parent_of[v], 1), 1.0);
    EXPECT_EQ(a(8, 9, 1), 1.0);  // index tip -> middle base
    EXPECT_EQ(a(9, 8, 1), 0.0);
    EXPECT_EQ(a(20, 18, 1), 1.0);
    EXPECT_EQ(a(0, 0, 1), 0.0);
}

TEST(Adjacency, RowStochastic) {
    for (bool supp : {false, true}) {
        const auto a = build_adjacency(build_topology(), supp);
        for (std::size_t k = 0; k < kSubsetCount; ++k)
            for (std::size_t i = 0; i < kVertexCount; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < kVertexCount; ++j) {
                    EXPECT_GE(a(i, j, k), 0.0);
                    s += a(i, j, k);
                }
                EXPECT_TRUE(std::abs(s - 1.0) <= 1e-12 || s == 0.0) << "k=" << k << " row " << i << " sum " << s;
            }
    }
    // wrist has no inward edge; fingertips have no outward edge without supplements
    const auto plain = build_adjacency(build_topology(), false);
    double wrist = 0.0, tip = 0.0;
    for (std::size_t j = 0; j < kVertexCount; ++j) {
        wrist += plain(0, j, 1);
        tip += plain(joint::index_tip, j, 2);
    }
    EXPECT_EQ(wrist, 0.0);
    EXPECT_EQ(tip, 0.0);
}

TEST(Adjacency, RepeatedBuildsAreIdentical) {
    EXPECT_TRUE(build_adjacency(build_topology(), true) == build_adjacency(build_topology(), true));
    EXPECT_FALSE(build_adjacency(build_topology(), true) == build_adjacency(build_topology(), false));
}

TEST(Adjacency, SubsetMajorLayout) {
    const auto a = build_adjacency(build_topology(), true);
    const auto m = a.subset_major();
    ASSERT_EQ(m.size(), kSubsetCount * kVertexCount * kVertexCount);
    for (std::size_t k = 0; k < kSubsetCount; ++k)
        for (std::size_t i = 0; i < kVertexCount; ++i)
            for (std::size_t j = 0; j < kVertexCount; ++j)
                EXPECT_EQ(m[(k * kVertexCount + i) * kVertexCount + j], a(i, j, k));
}

TEST(BonePairs, RootAndChain) {
    const auto pairs = bone_pairs(build_topology());
    ASSERT_EQ(pairs.size(), 21u);
    EXPECT_EQ(pairs[0], (Edge{0, 0}));
    EXPECT_EQ(pairs[8], (Edge{8, 7}));
    EXPECT_EQ(pairs[13], (Edge{13, 0}));
    for (std::size_t v = 0; v < pairs.size(); ++v) EXPECT_EQ(pairs[v].first, v);
}
