#pragma once

// Separable toy data: each class is one fixed random hand pose, and every
// frame of every clip is that pose plus Gaussian jitter.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "keypoints.hpp"
#include "rng.hpp"

namespace hagcn {

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t per_class = 16;
    std::size_t frames = 60;
    double noise = 0.01;
    std::uint64_t seed = 1;
};

inline std::string synthetic_class_name(std::size_t c) {
    std::string s = "class" + std::to_string(c);
    if (c < 10) s.insert(5, "0");
    return s;
}

inline std::vector<FramePose> synthetic_class_poses(const SyntheticSpec& spec) {
    Rng rng(spec.seed);
    std::vector<FramePose> poses(spec.classes);
    for (auto& pose : poses)
        for (auto& j : pose) j = {0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(), 0.2 * rng.uniform() - 0.1};
    return poses;
}

// Clips ordered class by class.
inline std::vector<KeypointSequence> make_synthetic_sequences(const SyntheticSpec& spec) {
    if (spec.classes == 0 || spec.per_class == 0 || spec.frames == 0)
        throw ValidationError("synthetic spec needs at least one class, clip and frame");
    const auto poses = synthetic_class_poses(spec);
    Rng rng(spec.seed ^ 0x5EEDULL);
    std::vector<KeypointSequence> out;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            KeypointSequence seq;
            seq.label = synthetic_class_name(c);
            seq.video_id = seq.label + "_" + std::to_string(i);
            seq.fps = 30.0;
            for (std::size_t f = 0; f < spec.frames; ++f) {
                HandFrame frame;
                frame.frame_index = static_cast<std::int64_t>(f);
                frame.detected = true;
                frame.handedness = Handedness::right;
                frame.detection_score = 0.95;
                for (std::size_t j = 0; j < kJointCount; ++j) {
                    frame.joints[j].x = poses[c][j].x + spec.noise * rng.normal();
                    frame.joints[j].y = poses[c][j].y + spec.noise * rng.normal();
                    frame.joints[j].z = poses[c][j].z + spec.noise * rng.normal();
                }
                seq.frames.push_back(frame);
            }
            out.push_back(std::move(seq));
        }
    }
    return out;
}

// Writes root/<label>/<video_id>.json for every clip.
inline void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
    for (const auto& seq : make_synthetic_sequences(spec)) {
        const auto dir = root / seq.label;
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / (seq.video_id + ".json"), std::ios::binary);
        if (!out) throw ValidationError("cannot write into " + dir.string());
        out << serialize_sequence(seq);
    }
}

}  // namespace hagcn
