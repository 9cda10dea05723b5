#pragma once

// key=value run settings shared by the CLI commands. One setting per line,
// '#' starts a comment. Unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agcn.hpp"
#include "errors.hpp"
#include "pipeline.hpp"

namespace hagcn {

enum class StreamSelection { joint, bone, both };

struct RunConfig {
    std::string manifest;
    std::string out;
    StreamSelection stream = StreamSelection::both;
    PreprocessConfig preprocess;
    TrainConfig train;

    // Echo order.
    static const std::vector<std::string>& keys() {
        static const std::vector<std::string> k{"manifest", "out",      "stream", "T",    "missing",  "resample",
                                                "epochs",   "batch",    "lr",     "momentum", "seed", "precision"};
        return k;
    }

    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;

    std::string echo() const {
        std::string out;
        for (const auto& k : keys()) out += k + "=" + get(k) + "\n";
        return out;
    }

    std::vector<Stream> streams() const {
        switch (stream) {
            case StreamSelection::joint: return {Stream::joint};
            case StreamSelection::bone: return {Stream::bone};
            default: return {Stream::joint, Stream::bone};
        }
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view value) {
    N out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || value.empty())
        throw ValidationError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "'");
    return out;
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
    using detail::parse_number;
    value = detail::trim(value);
    if (key == "manifest") {
        manifest = value;
    } else if (key == "out") {
        out = value;
    } else if (key == "stream") {
        if (value == "joint") stream = StreamSelection::joint;
        else if (value == "bone") stream = StreamSelection::bone;
        else if (value == "both") stream = StreamSelection::both;
        else throw ValidationError("stream must be joint, bone or both");
    } else if (key == "T") {
        preprocess.time_steps = parse_number<std::size_t>(key, value);
    } else if (key == "missing") {
        if (value == "interpolate") preprocess.missing = MissingFramePolicy::interpolate;
        else if (value == "zero-fill") preprocess.missing = MissingFramePolicy::zero_fill;
        else throw ValidationError("missing must be interpolate or zero-fill");
    } else if (key == "resample") {
        if (value == "uniform-index") preprocess.resample = ResamplePolicy::uniform_index;
        else if (value == "pad-repeat-last") preprocess.resample = ResamplePolicy::pad_repeat_last;
        else throw ValidationError("resample must be uniform-index or pad-repeat-last");
    } else if (key == "epochs") {
        train.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "batch") {
        train.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "lr") {
        train.learning_rate = parse_number<double>(key, value);
    } else if (key == "momentum") {
        train.momentum = parse_number<double>(key, value);
    } else if (key == "seed") {
        train.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "precision") {
        train.precision = parse_number<int>(key, value);
    } else {
        throw ValidationError("unknown config key '" + std::string(key) + "'");
    }
    preprocess.validate();
    train.validate();
}

inline std::string RunConfig::get(std::string_view key) const {
    if (key == "manifest") return manifest;
    if (key == "out") return out;
    if (key == "stream")
        return stream == StreamSelection::joint ? "joint" : stream == StreamSelection::bone ? "bone" : "both";
    if (key == "T") return std::to_string(preprocess.time_steps);
    if (key == "missing") return preprocess.missing == MissingFramePolicy::interpolate ? "interpolate" : "zero-fill";
    if (key == "resample")
        return preprocess.resample == ResamplePolicy::uniform_index ? "uniform-index" : "pad-repeat-last";
    if (key == "epochs") return std::to_string(train.epochs);
    if (key == "batch") return std::to_string(train.batch_size);
    if (key == "lr") return detail::format_double(train.learning_rate);
    if (key == "momentum") return detail::format_double(train.momentum);
    if (key == "seed") return std::to_string(train.seed);
    if (key == "precision") return std::to_string(train.precision);
    throw ValidationError("unknown config key '" + std::string(key) + "'");
}

// Applies every key=value line of `text` to `cfg`.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
        cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

}  // namespace hagcn
