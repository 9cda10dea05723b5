#pragma once

// 21-landmark hand graph: natural skeleton tree plus two families of
// supplementary fingertip links, and the [V, V, 3] adjacency stack.

#include <algorithm>
#include <array>
#include <cstddef>
#include <utility>
#include <vector>

namespace hagcn {

inline constexpr std::size_t kVertexCount = 21;
inline constexpr std::size_t kSubsetCount = 3;

// Landmark indices (wrist first, then four joints per finger, thumb to pinky).
namespace joint {
inline constexpr std::size_t wrist = 0;
inline constexpr std::size_t thumb_base = 1, thumb_proximal = 2, thumb_middle = 3, thumb_tip = 4;
inline constexpr std::size_t index_base = 5, index_proximal = 6, index_middle = 7, index_tip = 8;
inline constexpr std::size_t middle_base = 9, middle_proximal = 10, middle_middle = 11, middle_tip = 12;
inline constexpr std::size_t ring_base = 13, ring_proximal = 14, ring_middle = 15, ring_tip = 16;
inline constexpr std::size_t pinky_base = 17, pinky_proximal = 18, pinky_middle = 19, pinky_tip = 20;

inline constexpr std::size_t fingers = 5;
inline constexpr std::size_t per_finger = 4;

// i-th joint (0 = base .. 3 = tip) of finger f (0 = thumb .. 4 = pinky).
constexpr std::size_t of(std::size_t finger, std::size_t i) { return 1 + finger * per_finger + i; }
constexpr std::size_t base(std::size_t finger) { return of(finger, 0); }
constexpr std::size_t tip(std::size_t finger) { return of(finger, 3); }
}  // namespace joint

using Edge = std::pair<std::size_t, std::size_t>;

struct HandGraphTopology {
    std::size_t vertex_count = kVertexCount;
    std::vector<Edge> natural_edges;         // (child, parent)
    std::vector<Edge> supp_neighbor_edges;   // (fingertip, base of next finger)
    std::vector<Edge> supp_bend_edges;       // (fingertip, proximal joint of same finger)
    std::array<std::size_t, kVertexCount> parent_of{};  // wrist is its own parent
    std::array<std::size_t, kVertexCount> depth{};      // tree distance from the wrist

    std::vector<Edge> supplementary_edges() const {
        auto all = supp_neighbor_edges;
        all.insert(all.end(), supp_bend_edges.begin(), supp_bend_edges.end());
        return all;
    }
};

inline HandGraphTopology build_topology() {
    HandGraphTopology g;
    g.parent_of[joint::wrist] = joint::wrist;
    for (std::size_t f = 0; f < joint::fingers; ++f) {
        for (std::size_t i = 0; i < joint::per_finger; ++i) {
            const std::size_t child = joint::of(f, i);
            const std::size_t parent = i == 0 ? joint::wrist : joint::of(f, i - 1);
            g.parent_of[child] = parent;
            g.depth[child] = i + 1;
            g.natural_edges.emplace_back(child, parent);
        }
    }
    // The pinky has no neighbour on its right.
    for (std::size_t f = 0; f + 1 < joint::fingers; ++f)
        g.supp_neighbor_edges.emplace_back(joint::tip(f), joint::base(f + 1));
    for (std::size_t f = 0; f < joint::fingers; ++f)
        g.supp_bend_edges.emplace_back(joint::tip(f), joint::of(f, 1));
    return g;
}

// Stored as [V][V][3]; entry (i, j, k) is the weight from vertex i to j in
// subset k (0 = self, 1 = inward/toward wrist, 2 = outward).
class AdjacencyStack {
public:
    static constexpr std::size_t V = kVertexCount;
    static constexpr std::size_t K = kSubsetCount;

    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * V + j) * K + k]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[(i * V + j) * K + k]; }

    std::array<std::size_t, 3> shape() const { return {V, V, K}; }

    // Row-major [V, V] copy of one subset.
    std::vector<double> slice(std::size_t k) const {
        std::vector<double> out(V * V);
        for (std::size_t i = 0; i < V; ++i)
            for (std::size_t j = 0; j < V; ++j) out[i * V + j] = (*this)(i, j, k);
        return out;
    }

    // Row-major [K, V, V]; the layout the network consumes.
    std::vector<double> subset_major() const {
        std::vector<double> out;
        out.reserve(K * V * V);
        for (std::size_t k = 0; k < K; ++k) {
            auto s = slice(k);
            out.insert(out.end(), s.begin(), s.end());
        }
        return out;
    }

    std::size_t nonzero_count(std::size_t k) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < V; ++i)
            for (std::size_t j = 0; j < V; ++j) n += (*this)(i, j, k) != 0.0;
        return n;
    }

    void normalize_rows() {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t i = 0; i < V; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < V; ++j) sum += (*this)(i, j, k);
                if (sum == 0.0) continue;
                for (std::size_t j = 0; j < V; ++j) (*this)(i, j, k) /= sum;
            }
        }
    }

    friend bool operator==(const AdjacencyStack&, const AdjacencyStack&) = default;

private:
    std::array<double, V * V * K> data_{};
};

// Directed subsets before row normalization. Supplementary edges are
// oriented from the deeper vertex toward the shallower one, like tree edges.
inline AdjacencyStack build_raw_adjacency(const HandGraphTopology& g, bool include_supplementary) {
    AdjacencyStack a;
    for (std::size_t v = 0; v < kVertexCount; ++v) a(v, v, 0) = 1.0;
    auto add_inward = [&](std::size_t from, std::size_t to) {
        a(from, to, 1) = 1.0;
        a(to, from, 2) = 1.0;
    };
    for (const auto& [child, parent] : g.natural_edges) add_inward(child, parent);
    if (include_supplementary) {
        for (auto [u, v] : g.supplementary_edges()) {
            if (g.depth[u] < g.depth[v]) std::swap(u, v);
            add_inward(u, v);
        }
    }
    return a;
}

inline AdjacencyStack build_adjacency(const HandGraphTopology& g, bool include_supplementary) {
    auto a = build_raw_adjacency(g, include_supplementary);
    a.normalize_rows();
    return a;
}

// (joint, parent) for every joint in index order; the wrist pairs with itself.
inline std::vector<Edge> bone_pairs(const HandGraphTopology& g) {
    std::vector<Edge> pairs;
    pairs.reserve(kVertexCount);
    for (std::size_t v = 0; v < kVertexCount; ++v) pairs.emplace_back(v, g.parent_of[v]);
    return pairs;
}

}  // namespace hagcn
