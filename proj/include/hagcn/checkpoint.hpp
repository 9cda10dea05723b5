#pragma once

// Binary checkpoint, little-endian throughout:
//   "AGCN" | u16 version | u8 stream | u16 class count
//   | per class: u16 length, UTF-8 bytes
//   | per tensor until EOF: u16 name length, name, u8 rank, u32 dims[rank], f32 values
//
// Tensors: "graph.adjacency" [K,V,V], "config.temporal_strides" [blocks],
// every learnable parameter, and "<bn>.running_mean" / "<bn>.running_var".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "agcn.hpp"
#include "errors.hpp"

namespace hagcn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    void str16(std::string_view s) {
        if (s.size() > UINT16_MAX) throw CheckpointError("string too long for checkpoint");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s);
    }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}
    bool done() const { return pos_ == data_.size(); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint16_t u16() {
        std::uint16_t v = u8();
        v |= static_cast<std::uint16_t>(u8()) << 8;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str16() { return std::string(bytes(u16())); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

struct RawTensor {
    Shape shape;
    std::vector<float> values;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Shape& shape, const auto& values) {
    w.str16(name);
    if (shape.size() > UINT8_MAX) throw CheckpointError("rank too large");
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (auto v : values) w.f32(static_cast<float>(v));
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(AgcnModel<T>& model) {
    detail::ByteWriter w;
    w.bytes("AGCN");
    w.u16(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(model.stream()));
    if (model.num_classes() > UINT16_MAX) throw CheckpointError("too many classes");
    w.u16(static_cast<std::uint16_t>(model.num_classes()));
    for (const auto& c : model.classes()) w.str16(c);

    detail::write_tensor(w, "graph.adjacency", model.adjacency().shape(), model.adjacency().values());
    std::vector<float> strides;
    for (const auto& b : model.blocks()) strides.push_back(static_cast<float>(b.config.temporal_stride));
    detail::write_tensor(w, "config.temporal_strides", {strides.size()}, strides);
    for (auto& p : model.parameters()) detail::write_tensor(w, p.name, p.tensor.shape(), p.tensor.values());
    for (auto& [name, state] : model.batch_norm_states()) {
        detail::write_tensor(w, name + ".running_mean", {state->running_mean.size()}, state->running_mean);
        detail::write_tensor(w, name + ".running_var", {state->running_var.size()}, state->running_var);
    }
    return w.take();
}

template <typename T>
AgcnModel<T> parse_checkpoint(std::string_view data) {
    detail::ByteReader r(data);
    if (data.size() < 4 || r.bytes(4) != "AGCN") throw CheckpointError("not an AGCN checkpoint (bad magic)");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const auto tag = r.u8();
    if (tag > 1) throw CheckpointError("unknown stream tag " + std::to_string(tag));
    const Stream stream = static_cast<Stream>(tag);
    std::vector<std::string> classes(r.u16());
    for (auto& c : classes) c = r.str16();

    std::map<std::string, detail::RawTensor> tensors;
    while (!r.done()) {
        auto name = r.str16();
        detail::RawTensor t;
        const auto rank = r.u8();
        for (int i = 0; i < rank; ++i) t.shape.push_back(r.u32());
        t.values.resize(ad::numel(t.shape));
        for (auto& v : t.values) v = r.f32();
        if (!tensors.emplace(name, std::move(t)).second) throw CheckpointError("duplicate tensor '" + name + "'");
    }
    auto take = [&](const std::string& name, const Shape& expect) -> detail::RawTensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        if (!expect.empty() && it->second.shape != expect)
            throw CheckpointError("tensor '" + name + "' has shape " + ad::shape_str(it->second.shape) +
                                  ", expected " + ad::shape_str(expect));
        return it->second;
    };

    // Rebuild the block plan from parameter shapes.
    const auto& strides = take("config.temporal_strides", {}).values;
    std::vector<AgcnBlockConfig> plan;
    for (std::size_t i = 0; i < strides.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        const auto& w = take(p + "weight", {});
        const auto& th = take(p + "theta", {});
        const auto& tw = take(p + "tcn_weight", {});
        if (w.shape.size() != 3 || th.shape.size() != 2 || tw.shape.size() != 4)
            throw CheckpointError("malformed block " + std::to_string(i));
        AgcnBlockConfig cfg;
        cfg.in_channels = w.shape[2];
        cfg.out_channels = w.shape[1];
        cfg.temporal_stride = static_cast<std::size_t>(strides[i]);
        cfg.temporal_kernel = tw.shape[2];
        cfg.embed_channels = th.shape[0] / kSubsetCount;
        plan.push_back(cfg);
    }
    AgcnModel<T> model;
    try {
        model = AgcnModel<T>::create(classes, stream, 0, plan);
    } catch (const ValidationError& e) {
        throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
    }

    auto copy_into = [&](const std::string& name, Tensor<T>& dst) {
        const auto& src = take(name, dst.shape());
        auto out = dst.mutable_values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src.values[i]);
    };
    Tensor<T> adjacency = model.adjacency();
    copy_into("graph.adjacency", adjacency);
    for (auto& p : model.parameters()) copy_into(p.name, p.tensor);
    for (auto& [name, state] : model.batch_norm_states()) {
        const Shape s{state->running_mean.size()};
        const auto& mean = take(name + ".running_mean", s).values;
        const auto& var = take(name + ".running_var", s).values;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            state->running_mean[i] = static_cast<T>(mean[i]);
            state->running_var[i] = static_cast<T>(var[i]);
        }
    }
    return model;
}

template <typename T>
void save_checkpoint(AgcnModel<T>& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    const auto bytes = serialize_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("failed writing " + path.string());
}

template <typename T>
AgcnModel<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint<T>(ss.str());
}

}  // namespace hagcn
