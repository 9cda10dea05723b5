#pragma once

// Sequence preprocessing into [C, T, V] tensors, the SGD training loop, and
// evaluation into a ClassificationReport.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agcn.hpp"
#include "errors.hpp"
#include "keypoints.hpp"
#include "metrics.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace hagcn {

inline constexpr std::size_t kInputChannels = 3;

enum class MissingFramePolicy { interpolate, zero_fill };
enum class ResamplePolicy { uniform_index, pad_repeat_last };

struct PreprocessConfig {
    std::size_t time_steps = 50;
    MissingFramePolicy missing = MissingFramePolicy::interpolate;
    ResamplePolicy resample = ResamplePolicy::uniform_index;

    void validate() const {
        if (time_steps < 2) throw ValidationError("time_steps must be at least 2");
    }
};

// One pose per input frame. Undetected frames are linearly interpolated
// (by frame_index) between the nearest detected neighbours and held
// constant past the first/last detection, or zeroed.
inline std::vector<FramePose> fill_missing_frames(const KeypointSequence& seq, MissingFramePolicy policy) {
    if (seq.detected_count() == 0)
        throw ValidationError("sequence '" + seq.video_id + "' has no detected frames");
    const std::size_t L = seq.frames.size();
    std::vector<FramePose> out(L);
    if (policy == MissingFramePolicy::zero_fill) {
        for (std::size_t i = 0; i < L; ++i)
            if (seq.frames[i].detected) out[i] = seq.frames[i].joints;
        return out;
    }
    std::vector<std::size_t> detected;
    for (std::size_t i = 0; i < L; ++i)
        if (seq.frames[i].detected) detected.push_back(i);
    std::size_t next = 0;  // index into `detected` of the first detection at or after i
    for (std::size_t i = 0; i < L; ++i) {
        while (next < detected.size() && detected[next] < i) ++next;
        if (next < detected.size() && detected[next] == i) {
            out[i] = seq.frames[i].joints;
        } else if (next == 0) {
            out[i] = seq.frames[detected.front()].joints;
        } else if (next == detected.size()) {
            out[i] = seq.frames[detected.back()].joints;
        } else {
            const auto& a = seq.frames[detected[next - 1]];
            const auto& b = seq.frames[detected[next]];
            const double w = static_cast<double>(seq.frames[i].frame_index - a.frame_index) /
                             static_cast<double>(b.frame_index - a.frame_index);
            for (std::size_t j = 0; j < kJointCount; ++j) {
                out[i][j].x = a.joints[j].x + w * (b.joints[j].x - a.joints[j].x);
                out[i][j].y = a.joints[j].y + w * (b.joints[j].y - a.joints[j].y);
                out[i][j].z = a.joints[j].z + w * (b.joints[j].z - a.joints[j].z);
            }
        }
    }
    return out;
}

// Source frame for each of the T output steps.
inline std::vector<std::size_t> resample_indices(std::size_t length, std::size_t time_steps, ResamplePolicy policy) {
    if (length == 0) throw ValidationError("cannot resample an empty sequence");
    if (time_steps < 2) throw ValidationError("time_steps must be at least 2");
    std::vector<std::size_t> idx(time_steps);
    if (policy == ResamplePolicy::pad_repeat_last && length < time_steps) {
        for (std::size_t i = 0; i < time_steps; ++i) idx[i] = std::min(i, length - 1);
        return idx;
    }
    // round-half-up of i*(L-1)/(T-1), in integers
    const std::size_t span = length - 1, den = time_steps - 1;
    for (std::size_t i = 0; i < time_steps; ++i) idx[i] = (2 * i * span + den) / (2 * den);
    return idx;
}

// [C=3, T, V=21] in row-major order, as doubles.
inline std::vector<double> encode_sequence(const KeypointSequence& seq, const PreprocessConfig& cfg) {
    cfg.validate();
    const auto poses = fill_missing_frames(seq, cfg.missing);
    const auto idx = resample_indices(poses.size(), cfg.time_steps, cfg.resample);
    const std::size_t TT = cfg.time_steps, V = kJointCount;
    std::vector<double> out(kInputChannels * TT * V);
    for (std::size_t t = 0; t < TT; ++t) {
        const auto& pose = poses[idx[t]];
        for (std::size_t v = 0; v < V; ++v) {
            out[(0 * TT + t) * V + v] = pose[v].x;
            out[(1 * TT + t) * V + v] = pose[v].y;
            out[(2 * TT + t) * V + v] = pose[v].z;
        }
    }
    return out;
}

template <typename T>
Tensor<T> to_input_tensor(const KeypointSequence& seq, const PreprocessConfig& cfg) {
    auto v = encode_sequence(seq, cfg);
    return Tensor<T>({kInputChannels, cfg.time_steps, kJointCount}, std::vector<T>(v.begin(), v.end()));
}

struct EncodedSample {
    std::string video_id;
    int label = -1;
    std::vector<double> data;  // [3, T, 21]
};

// Reads and encodes every manifest entry; labels index into `classes`.
inline std::vector<EncodedSample> load_samples(const DatasetManifest& manifest, const std::vector<std::string>& classes,
                                               const PreprocessConfig& cfg) {
    std::vector<EncodedSample> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        auto it = std::lower_bound(classes.begin(), classes.end(), e.label);
        if (it == classes.end() || *it != e.label)
            throw ClassMismatchError("label '" + e.label + "' of " + e.video_id + " is not a model class");
        auto seq = read_sequence_file(e.path);
        try {
            out.push_back({e.video_id, static_cast<int>(it - classes.begin()), encode_sequence(seq, cfg)});
        } catch (const ValidationError& err) {
            throw ValidationError(e.path + ": " + err.what());
        }
    }
    return out;
}

template <typename T>
Tensor<T> make_batch(std::span<const EncodedSample> samples, std::span<const std::size_t> which, std::size_t time_steps,
                     std::vector<int>* labels = nullptr) {
    const std::size_t per = kInputChannels * time_steps * kJointCount;
    std::vector<T> v(which.size() * per);
    if (labels) labels->clear();
    for (std::size_t b = 0; b < which.size(); ++b) {
        const auto& s = samples[which[b]];
        if (s.data.size() != per) throw ShapeError("sample " + s.video_id + " has the wrong encoded length");
        std::copy(s.data.begin(), s.data.end(), v.begin() + static_cast<std::ptrdiff_t>(b * per));
        if (labels) labels->push_back(s.label);
    }
    return Tensor<T>({which.size(), kInputChannels, time_steps, kJointCount}, std::move(v));
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    std::size_t epochs = 5;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    int precision = 32;

    void validate() const {
        if (batch_size == 0) throw ValidationError("batch_size must be positive");
        if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be non-negative");
        if (epochs == 0) throw ValidationError("epochs must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
        if (precision != 32 && precision != 64) throw ValidationError("precision must be 32 or 64");
    }
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // optimizer steps completed so far
    double loss = 0.0;      // sample-weighted mean over the epoch
    double train_acc = 0.0;
};

inline std::string epochs_to_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,step,loss,train_acc\n";
    char line[128];
    for (const auto& e : log) {
        std::snprintf(line, sizeof line, "%zu,%zu,%.6f,%.6f\n", e.epoch, e.step, e.loss, e.train_acc);
        out += line;
    }
    return out;
}

// Heavy-ball SGD: v = momentum * v + g;  p -= lr * v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}

    void step(std::vector<NamedTensor<T>>& params) {
        if (velocity_.empty()) {
            for (const auto& p : params) velocity_.emplace_back(p.tensor.size(), T(0));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& vel = velocity_[i];
            auto values = params[i].tensor.mutable_values();
            auto grad = params[i].tensor.grad();
            for (std::size_t j = 0; j < vel.size(); ++j) {
                const T g = grad.empty() ? T(0) : grad[j];
                vel[j] = static_cast<T>(momentum_) * vel[j] + g;
                values[j] -= static_cast<T>(lr_) * vel[j];
            }
        }
    }

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<T>> velocity_;
};

template <typename T>
struct TrainResult {
    AgcnModel<T> model;
    std::vector<EpochLog> epochs;
};

struct ModelOptions {
    std::vector<AgcnBlockConfig> plan = default_channel_plan();
    bool include_supplementary = true;
};

// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochLog&)>;

inline std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
    return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(stream) + 1;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.values().subspan(i * k, k);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += best == labels[i];
    }
    return correct;
}

template <typename T>
TrainResult<T> train(std::span<const EncodedSample> samples, const std::vector<std::string>& classes,
                     std::size_t time_steps, const TrainConfig& cfg, Stream stream, const ModelOptions& options = {},
                     const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (samples.empty()) throw ValidationError("training set is empty");
    TrainResult<T> result{AgcnModel<T>::create(classes, stream, stream_seed(cfg.seed, stream), options.plan,
                                               options.include_supplementary),
                          {}};
    auto& model = result.model;
    auto params = model.parameters();
    SgdMomentum<T> optimizer(cfg.learning_rate, cfg.momentum);
    Rng shuffle_rng(cfg.seed);

    std::vector<std::size_t> order(samples.size());
    std::vector<int> labels;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> which(order.data() + start, end - start);
            auto x = make_batch<T>(samples, which, time_steps, &labels);
            try {
                auto logits = model.forward(x, Mode::train);
                auto loss = ad::cross_entropy(logits, std::span<const int>(labels));
                ad::backward(loss);
                loss_sum += static_cast<double>(loss.item()) * static_cast<double>(which.size());
                correct += count_correct(logits, labels);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step + 1) + ": " + e.what());
            }
            optimizer.step(params);
            model.zero_grad();
            ++step;
        }
        EpochLog log{epoch, step, loss_sum / static_cast<double>(samples.size()),
                     static_cast<double>(correct) / static_cast<double>(samples.size())};
        if (!std::isfinite(log.loss))
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
        result.epochs.push_back(log);
        if (on_epoch && !on_epoch(log)) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename T>
void require_same_classes(const std::vector<AgcnModel<T>*>& models) {
    if (models.empty() || models.size() > 2) throw ValidationError("evaluation takes one or two models");
    for (const auto* m : models)
        if (m->classes() != models.front()->classes())
            throw ClassMismatchError("models were trained on different class lists");
}

// Row-major [N, classes] probabilities: softmax of one model, or the fused
// two-stream scores.
template <typename T>
std::vector<T> predict_probabilities(const std::vector<AgcnModel<T>*>& models, std::span<const EncodedSample> samples,
                                     std::size_t time_steps, std::size_t batch_size = 64) {
    require_same_classes(models);
    const std::size_t k = models.front()->num_classes();
    std::vector<T> out;
    out.reserve(samples.size() * k);
    std::vector<std::size_t> which;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        which.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) which.push_back(i);
        auto x = make_batch<T>(samples, which, time_steps);
        std::vector<T> probs;
        if (models.size() == 1) {
            probs = softmax_rows(models[0]->forward(x, Mode::eval));
        } else {
            probs = fuse_streams(models[0]->forward(x, Mode::eval), models[1]->forward(x, Mode::eval));
        }
        out.insert(out.end(), probs.begin(), probs.end());
    }
    return out;
}

template <typename T>
ClassificationReport evaluate(const std::vector<AgcnModel<T>*>& models, std::span<const EncodedSample> samples,
                              std::size_t time_steps, std::size_t batch_size = 64) {
    if (samples.empty()) throw ValidationError("evaluation set is empty");
    const auto probs = predict_probabilities(models, samples, time_steps, batch_size);
    const std::size_t k = models.front()->num_classes();
    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const T* row = probs.data() + i * k;
        const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
        confusion.at(static_cast<std::size_t>(samples[i].label))[pred] += 1;
    }
    return compute_metrics(confusion, models.front()->classes());
}

}  // namespace hagcn
