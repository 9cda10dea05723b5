#pragma once

// Adaptive graph convolutional network over the hand graph.
//
// Block:
//   adj_k   = Abar_k + B_k + gate_k * softmax_v( mean_{e,t} theta_k(x)[e,t,w] * phi_k(x)[e,t,v] )
//   y       = relu(bn( sum_k W_k . x . adj_k ))
//   y       = bn(tconv(y) + bias)
//   out     = relu(y + residual(x))
// Model: input bn over (channel, joint) -> blocks -> global average pool -> fc.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "hand_graph.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace hagcn {

using ad::Mode;
using ad::Shape;
using ad::Tensor;

enum class Stream : std::uint8_t { joint = 0, bone = 1 };

inline std::string to_string(Stream s) { return s == Stream::joint ? "joint" : "bone"; }

struct AgcnBlockConfig {
    std::size_t in_channels = 3;
    std::size_t out_channels = 64;
    std::size_t temporal_stride = 1;
    std::size_t temporal_kernel = 9;
    std::size_t embed_channels = 16;

    bool needs_projection() const { return in_channels != out_channels || temporal_stride != 1; }

    void validate() const {
        if (in_channels == 0 || out_channels == 0) throw ValidationError("block channels must be positive");
        if (temporal_kernel % 2 == 0) throw ValidationError("temporal kernel must be odd");
        if (temporal_stride != 1 && temporal_stride != 2) throw ValidationError("temporal stride must be 1 or 2");
        if (embed_channels == 0) throw ValidationError("embed channels must be positive");
    }
};

inline std::size_t default_embed_channels(std::size_t out_channels) {
    return std::max<std::size_t>(out_channels / 4, 4);
}

inline AgcnBlockConfig make_block_config(std::size_t in, std::size_t out, std::size_t stride,
                                         std::size_t kernel = 9) {
    return {in, out, stride, kernel, default_embed_channels(out)};
}

// 3-64-64-64-128-128-256-256 with temporal stride 2 entering 128 and 256.
inline std::vector<AgcnBlockConfig> default_channel_plan(std::size_t in_channels = 3) {
    return {
        make_block_config(in_channels, 64, 1), make_block_config(64, 64, 1),   make_block_config(64, 64, 1),
        make_block_config(64, 128, 2),         make_block_config(128, 128, 1), make_block_config(128, 256, 2),
        make_block_config(256, 256, 1),
    };
}

template <typename T>
struct BatchNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
    ad::BatchNormState<T> state;

    explicit BatchNormParams(Shape shape = {1})
        : gamma(Tensor<T>::full(shape, T(1), true)), beta(Tensor<T>::zeros(shape, true)), state(ad::numel(shape)) {}

    Tensor<T> operator()(const Tensor<T>& x, const std::vector<std::size_t>& kept_axes, Mode mode) {
        return ad::batch_norm(x, kept_axes, gamma, beta, mode, state);
    }
};

template <typename T>
struct AgcnBlockParams {
    AgcnBlockConfig config;
    Tensor<T> weight;       // [K, Cout, Cin]
    Tensor<T> learned_adj;  // B, [K, V, V]
    Tensor<T> theta;        // [K*E, Cin]
    Tensor<T> phi;          // [K*E, Cin]
    Tensor<T> gate;         // [K, 1, 1]
    BatchNormParams<T> gcn_bn;
    Tensor<T> tcn_weight;  // [Cout, Cout, kt, 1]
    Tensor<T> tcn_bias;    // [Cout, 1, 1]
    BatchNormParams<T> tcn_bn;
    Tensor<T> res_weight;  // [Cout, Cin, 1, 1], present iff config.needs_projection()
    BatchNormParams<T> res_bn;
};

namespace detail {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace detail

template <typename T>
AgcnBlockParams<T> init_block(const AgcnBlockConfig& cfg, Rng& rng) {
    cfg.validate();
    constexpr std::size_t K = kSubsetCount, V = kVertexCount;
    const std::size_t Cin = cfg.in_channels, Cout = cfg.out_channels, E = cfg.embed_channels;
    AgcnBlockParams<T> p;
    p.config = cfg;
    p.weight = detail::normal_tensor<T>({K, Cout, Cin}, std::sqrt(2.0 / static_cast<double>(Cout * K)), rng);
    p.learned_adj = Tensor<T>::zeros({K, V, V}, true);
    p.theta = detail::normal_tensor<T>({K * E, Cin}, std::sqrt(2.0 / static_cast<double>(E)), rng);
    p.phi = detail::normal_tensor<T>({K * E, Cin}, std::sqrt(2.0 / static_cast<double>(E)), rng);
    p.gate = Tensor<T>::full({K, 1, 1}, T(1), true);
    p.gcn_bn = BatchNormParams<T>({Cout});
    p.tcn_weight = detail::normal_tensor<T>({Cout, Cout, cfg.temporal_kernel, 1},
                                            std::sqrt(2.0 / static_cast<double>(Cout * cfg.temporal_kernel)), rng);
    p.tcn_bias = Tensor<T>::zeros({Cout, 1, 1}, true);
    p.tcn_bn = BatchNormParams<T>({Cout});
    if (cfg.needs_projection()) {
        p.res_weight = detail::normal_tensor<T>({Cout, Cin, 1, 1}, std::sqrt(2.0 / static_cast<double>(Cout)), rng);
        p.res_bn = BatchNormParams<T>({Cout});
    }
    return p;
}

// Data-dependent adjacency C_k for every sample: [N, K, V, V], rows sum to 1.
template <typename T>
Tensor<T> data_adjacency(const Tensor<T>& x, const AgcnBlockParams<T>& p) {
    const std::size_t N = x.dim(0), Cin = x.dim(1), TT = x.dim(2), V = x.dim(3);
    const std::size_t K = kSubsetCount, E = p.config.embed_channels;
    auto flat = ad::reshape(x, {N, Cin, TT * V});
    auto a = ad::reshape(ad::matmul(p.theta, flat), {N, K, E * TT, V});
    auto b = ad::reshape(ad::matmul(p.phi, flat), {N, K, E * TT, V});
    auto affinity = ad::scale(ad::matmul(ad::transpose_last2(a), b), T(1) / static_cast<T>(E * TT));
    return ad::softmax(affinity, -1);
}

// Per-sample adjacency used by the spatial step: [N, K, V, V].
template <typename T>
Tensor<T> block_adjacency(const Tensor<T>& x, const AgcnBlockParams<T>& p, const Tensor<T>& fixed_adj) {
    auto learned = ad::add(fixed_adj, p.learned_adj);
    return ad::add(learned, ad::mul(p.gate, data_adjacency(x, p)));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, AgcnBlockParams<T>& p, const Tensor<T>& fixed_adj, Mode mode) {
    const auto& cfg = p.config;
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(3) != kVertexCount)
        throw ShapeError("block_forward: input " + ad::shape_str(x.shape()) + " does not match block with " +
                         std::to_string(cfg.in_channels) + " input channels over 21 joints");
    auto adj = block_adjacency(x, p, fixed_adj);
    auto y = ad::relu(p.gcn_bn(ad::spatial_graph_conv(x, adj, p.weight), {1}, mode));
    const std::size_t pad = (cfg.temporal_kernel - 1) / 2;
    y = p.tcn_bn(ad::add(ad::temporal_conv(y, p.tcn_weight, cfg.temporal_stride, pad), p.tcn_bias), {1}, mode);
    Tensor<T> residual = x;
    if (cfg.needs_projection())
        residual = p.res_bn(ad::temporal_conv(x, p.res_weight, cfg.temporal_stride, 0), {1}, mode);
    return ad::relu(ad::add(y, residual));
}

// out[..., v] = x[..., v] - x[..., parent(v)]; the wrist bone is zero.
template <typename T>
Tensor<T> to_bone_stream(const Tensor<T>& x, const std::vector<Edge>& pairs) {
    std::vector<std::size_t> parent(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].first != i) throw ValidationError("bone pairs must be ordered by joint index");
        parent[i] = pairs[i].second;
    }
    return ad::vertex_difference(x, parent);
}

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
class AgcnModel {
public:
    AgcnModel() = default;

    static AgcnModel create(std::vector<std::string> classes, Stream stream, std::uint64_t seed,
                            std::vector<AgcnBlockConfig> plan = default_channel_plan(),
                            bool include_supplementary = true) {
        if (classes.empty()) throw ValidationError("model needs at least one class");
        if (plan.empty()) throw ValidationError("model needs at least one block");
        for (std::size_t i = 1; i < plan.size(); ++i) {
            if (plan[i].in_channels != plan[i - 1].out_channels)
                throw ValidationError("block " + std::to_string(i) + " input does not match previous output");
            if (plan[i].out_channels < plan[i - 1].out_channels)
                throw ValidationError("block channel sequence must be non-decreasing");
        }
        AgcnModel m;
        m.classes_ = std::move(classes);
        m.stream_ = stream;
        const auto topo = build_topology();
        const auto adj = build_adjacency(topo, include_supplementary).subset_major();
        m.adjacency_ = Tensor<T>({kSubsetCount, kVertexCount, kVertexCount}, std::vector<T>(adj.begin(), adj.end()));
        m.bone_pairs_ = bone_pairs(topo);
        m.input_bn_ = BatchNormParams<T>({plan.front().in_channels, kVertexCount});
        Rng rng(seed);
        for (const auto& cfg : plan) m.blocks_.push_back(init_block<T>(cfg, rng));
        const std::size_t c_final = plan.back().out_channels, k = m.classes_.size();
        m.fc_weight_ = detail::normal_tensor<T>({c_final, k}, std::sqrt(2.0 / static_cast<double>(k)), rng);
        m.fc_bias_ = Tensor<T>::zeros({k}, true);
        return m;
    }

    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t num_classes() const { return classes_.size(); }
    Stream stream() const { return stream_; }
    const Tensor<T>& adjacency() const { return adjacency_; }
    const std::vector<Edge>& bone_pair_list() const { return bone_pairs_; }
    std::vector<AgcnBlockParams<T>>& blocks() { return blocks_; }
    const std::vector<AgcnBlockParams<T>>& blocks() const { return blocks_; }
    BatchNormParams<T>& input_bn() { return input_bn_; }
    Tensor<T>& fc_weight() { return fc_weight_; }
    Tensor<T>& fc_bias() { return fc_bias_; }

    std::vector<AgcnBlockConfig> plan() const {
        std::vector<AgcnBlockConfig> out;
        for (const auto& b : blocks_) out.push_back(b.config);
        return out;
    }

    // Features after the last block, before pooling.
    Tensor<T> features(const Tensor<T>& joints, Mode mode) {
        if (joints.rank() != 4 || joints.dim(3) != kVertexCount || joints.dim(1) != blocks_.front().config.in_channels)
            throw ShapeError("model input must be [N," + std::to_string(blocks_.front().config.in_channels) +
                             ",T,21], got " + ad::shape_str(joints.shape()));
        Tensor<T> x = stream_ == Stream::bone ? to_bone_stream(joints, bone_pairs_) : joints;
        x = input_bn_(x, {1, 3}, mode);
        for (auto& b : blocks_) x = block_forward(x, b, adjacency_, mode);
        return x;
    }

    // [N, C, T, V] raw joint coordinates -> [N, classes] logits.
    Tensor<T> forward(const Tensor<T>& joints, Mode mode) {
        auto pooled = ad::global_avg_pool(features(joints, mode));
        const std::size_t n = pooled.dim(0), c = pooled.dim(1);
        // One product per sample keeps each row independent of batch composition.
        auto logits = ad::matmul(ad::reshape(pooled, {n, 1, c}), fc_weight_);
        return ad::add(ad::reshape(logits, {n, num_classes()}), fc_bias_);
    }

    // Learnable tensors, in a fixed order.
    std::vector<NamedTensor<T>> parameters() {
        std::vector<NamedTensor<T>> out;
        out.push_back({"input_bn.gamma", input_bn_.gamma});
        out.push_back({"input_bn.beta", input_bn_.beta});
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            auto& b = blocks_[i];
            const std::string p = "blocks." + std::to_string(i) + ".";
            out.push_back({p + "weight", b.weight});
            out.push_back({p + "learned_adj", b.learned_adj});
            out.push_back({p + "theta", b.theta});
            out.push_back({p + "phi", b.phi});
            out.push_back({p + "gate", b.gate});
            out.push_back({p + "gcn_bn.gamma", b.gcn_bn.gamma});
            out.push_back({p + "gcn_bn.beta", b.gcn_bn.beta});
            out.push_back({p + "tcn_weight", b.tcn_weight});
            out.push_back({p + "tcn_bias", b.tcn_bias});
            out.push_back({p + "tcn_bn.gamma", b.tcn_bn.gamma});
            out.push_back({p + "tcn_bn.beta", b.tcn_bn.beta});
            if (b.config.needs_projection()) {
                out.push_back({p + "res_weight", b.res_weight});
                out.push_back({p + "res_bn.gamma", b.res_bn.gamma});
                out.push_back({p + "res_bn.beta", b.res_bn.beta});
            }
        }
        out.push_back({"fc.weight", fc_weight_});
        out.push_back({"fc.bias", fc_bias_});
        return out;
    }

    // Running statistics of every batch-norm layer, by name prefix.
    std::vector<std::pair<std::string, ad::BatchNormState<T>*>> batch_norm_states() {
        std::vector<std::pair<std::string, ad::BatchNormState<T>*>> out;
        out.emplace_back("input_bn", &input_bn_.state);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            auto& b = blocks_[i];
            const std::string p = "blocks." + std::to_string(i) + ".";
            out.emplace_back(p + "gcn_bn", &b.gcn_bn.state);
            out.emplace_back(p + "tcn_bn", &b.tcn_bn.state);
            if (b.config.needs_projection()) out.emplace_back(p + "res_bn", &b.res_bn.state);
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }

private:
    std::vector<std::string> classes_;
    Stream stream_ = Stream::joint;
    Tensor<T> adjacency_;  // [K, V, V], fixed
    std::vector<Edge> bone_pairs_;
    BatchNormParams<T> input_bn_;
    std::vector<AgcnBlockParams<T>> blocks_;
    Tensor<T> fc_weight_;  // [C_final, classes]
    Tensor<T> fc_bias_;    // [classes]
};

// Sum of the two streams' class probabilities, renormalized per row.
template <typename T>
std::vector<T> fuse_streams(const Tensor<T>& logits_joint, const Tensor<T>& logits_bone) {
    if (logits_joint.shape() != logits_bone.shape() || logits_joint.rank() != 2)
        throw ShapeError("fuse_streams: logits shapes differ: " + ad::shape_str(logits_joint.shape()) + " vs " +
                         ad::shape_str(logits_bone.shape()));
    auto pj = ad::softmax(logits_joint.detach(), -1);
    auto pb = ad::softmax(logits_bone.detach(), -1);
    const std::size_t n = logits_joint.dim(0), k = logits_joint.dim(1);
    std::vector<T> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) {
            out[i * k + j] = pj.values()[i * k + j] + pb.values()[i * k + j];
            s += out[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= s;
    }
    return out;
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
    auto p = ad::softmax(logits.detach(), -1);
    return {p.values().begin(), p.values().end()};
}

}  // namespace hagcn
