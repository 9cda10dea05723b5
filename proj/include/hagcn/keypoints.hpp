#pragma once

// Keypoint interchange format, dataset manifests, and the stratified split.
//
// One UTF-8 JSON document per video:
//   { "video_id": str, "label": str, "fps": num,
//     "frames": [ { "frame_index": int, "detected": bool,
//                   "handedness": "Left"|"Right"|"Unknown",
//                   "detection_score": num,          // iff detected
//                   "joints": [[x,y,z] x 21] } ] }   // iff detected
//
// A detected frame may instead carry "hands": [{handedness, detection_score,
// joints}, ...]; the hand with the highest detection_score is kept.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace hagcn {

inline constexpr std::size_t kJointCount = 21;

struct JointCoordinate {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const JointCoordinate&, const JointCoordinate&) = default;
};

using FramePose = std::array<JointCoordinate, kJointCount>;

enum class Handedness { left, right, unknown };

inline std::string_view to_string(Handedness h) {
    switch (h) {
        case Handedness::left: return "Left";
        case Handedness::right: return "Right";
        default: return "Unknown";
    }
}

inline std::optional<Handedness> parse_handedness(std::string_view s) {
    if (s == "Left") return Handedness::left;
    if (s == "Right") return Handedness::right;
    if (s == "Unknown") return Handedness::unknown;
    return std::nullopt;
}

struct HandFrame {
    std::int64_t frame_index = 0;
    bool detected = false;
    Handedness handedness = Handedness::unknown;
    std::optional<double> detection_score;  // set iff detected
    std::array<JointCoordinate, kJointCount> joints{};  // meaningful iff detected

    friend bool operator==(const HandFrame&, const HandFrame&) = default;
};

struct KeypointSequence {
    std::string video_id;
    std::string label;
    double fps = 30.0;
    std::vector<HandFrame> frames;

    std::size_t detected_count() const {
        return static_cast<std::size_t>(
            std::count_if(frames.begin(), frames.end(), [](const HandFrame& f) { return f.detected; }));
    }

    friend bool operator==(const KeypointSequence&, const KeypointSequence&) = default;
};

namespace detail {

using nlohmann::json;

inline std::string frame_where(std::size_t position, std::optional<std::int64_t> index) {
    return "frame " + std::to_string(index ? *index : static_cast<std::int64_t>(position));
}

inline double finite_number(const json& v, const std::string& what) {
    if (!v.is_number()) throw ValidationError(what + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError("non-finite coordinate at " + what);
    return d;
}

// nlohmann parses "NaN" only as a string, so detect that spelling too.
inline double coordinate(const json& v, const std::string& where) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "NaN" || s == "nan" || s == "Infinity" || s == "-Infinity" || s == "inf" || s == "-inf")
            throw ValidationError("non-finite coordinate at " + where);
    }
    if (v.is_null()) throw ValidationError("non-finite coordinate at " + where);
    return finite_number(v, where);
}

struct ParsedHand {
    Handedness handedness = Handedness::unknown;
    double score = 0.0;
    std::array<JointCoordinate, kJointCount> joints{};
};

inline ParsedHand parse_hand(const json& obj, const std::string& where, bool require_score) {
    ParsedHand hand;
    if (auto it = obj.find("handedness"); it != obj.end()) {
        if (!it->is_string()) throw ValidationError("handedness must be a string at " + where);
        auto h = parse_handedness(it->get<std::string>());
        if (!h) throw ValidationError("unknown handedness '" + it->get<std::string>() + "' at " + where);
        hand.handedness = *h;
    }
    auto score = obj.find("detection_score");
    if (score == obj.end()) {
        if (require_score) throw ValidationError("missing detection_score on detected " + where);
    } else {
        hand.score = finite_number(*score, "detection_score at " + where);
        if (hand.score < 0.0 || hand.score > 1.0)
            throw ValidationError("detection_score outside [0,1] at " + where);
    }
    auto joints = obj.find("joints");
    if (joints == obj.end() || !joints->is_array())
        throw ValidationError("missing joints array on detected " + where);
    if (joints->size() != kJointCount)
        throw ValidationError("joint count " + std::to_string(joints->size()) + " ≠ 21 at " + where);
    for (std::size_t j = 0; j < kJointCount; ++j) {
        const auto& p = (*joints)[j];
        const std::string jwhere = where + ", joint " + std::to_string(j);
        if (!p.is_array() || p.size() != 3)
            throw ValidationError("joint must be [x,y,z] at " + jwhere);
        hand.joints[j] = {coordinate(p[0], jwhere), coordinate(p[1], jwhere), coordinate(p[2], jwhere)};
    }
    return hand;
}

// Python's json module writes bare NaN/Infinity tokens. Quote them so the
// strict parser accepts the document and validation can name the location.
inline std::string quote_nonfinite_tokens(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool in_string = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = raw[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < raw.size()) {
                out += raw[++i];
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            continue;
        }
        bool replaced = false;
        for (std::string_view tok : {"-Infinity", "Infinity", "NaN"}) {
            if (raw.substr(i, tok.size()) == tok) {
                out += '"';
                out += tok;
                out += '"';
                i += tok.size() - 1;
                replaced = true;
                break;
            }
        }
        if (!replaced) out += c;
    }
    return out;
}

}  // namespace detail

// Parses and validates one interchange document.
inline KeypointSequence parse_sequence(std::string_view raw) {
    using detail::json;
    json doc;
    try {
        doc = json::parse(detail::quote_nonfinite_tokens(raw));
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed document: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("malformed document: top level must be an object");

    KeypointSequence seq;
    auto require = [&](const char* key) -> const json& {
        auto it = doc.find(key);
        if (it == doc.end()) throw ValidationError(std::string("malformed document: missing key '") + key + "'");
        return *it;
    };
    const auto& vid = require("video_id");
    const auto& label = require("label");
    if (!vid.is_string() || !label.is_string())
        throw ValidationError("malformed document: video_id and label must be strings");
    seq.video_id = vid.get<std::string>();
    seq.label = label.get<std::string>();
    if (seq.video_id.empty()) throw ValidationError("malformed document: empty video_id");
    seq.fps = detail::finite_number(require("fps"), "fps");
    if (seq.fps <= 0.0) throw ValidationError("malformed document: fps must be positive");

    const auto& frames = require("frames");
    if (!frames.is_array()) throw ValidationError("malformed document: frames must be an array");
    seq.frames.reserve(frames.size());
    std::optional<std::int64_t> previous;
    for (std::size_t pos = 0; pos < frames.size(); ++pos) {
        const auto& f = frames[pos];
        std::string where = detail::frame_where(pos, std::nullopt);
        if (!f.is_object()) throw ValidationError("frame must be an object at " + where);
        auto fi = f.find("frame_index");
        if (fi == f.end() || !fi->is_number_integer())
            throw ValidationError("missing integer frame_index at " + where);
        HandFrame frame;
        frame.frame_index = fi->get<std::int64_t>();
        where = detail::frame_where(pos, frame.frame_index);
        if (frame.frame_index < 0) throw ValidationError("negative frame_index at " + where);
        if (previous && frame.frame_index <= *previous)
            throw ValidationError("non-monotonic frame_index at " + where + " (previous " +
                                  std::to_string(*previous) + ")");
        previous = frame.frame_index;

        auto det = f.find("detected");
        if (det == f.end() || !det->is_boolean()) throw ValidationError("missing boolean detected at " + where);
        frame.detected = det->get<bool>();

        if (frame.detected) {
            detail::ParsedHand hand;
            if (auto hands = f.find("hands"); hands != f.end()) {
                if (!hands->is_array() || hands->empty())
                    throw ValidationError("hands must be a non-empty array at " + where);
                bool first = true;
                for (std::size_t h = 0; h < hands->size(); ++h) {
                    auto candidate = detail::parse_hand((*hands)[h], where + ", hand " + std::to_string(h), true);
                    if (first || candidate.score > hand.score) hand = candidate;
                    first = false;
                }
            } else {
                hand = detail::parse_hand(f, where, true);
            }
            frame.handedness = hand.handedness;
            frame.detection_score = hand.score;
            frame.joints = hand.joints;
        } else {
            if (f.contains("joints") || f.contains("detection_score"))
                throw ValidationError("joints/detection_score present on undetected " + where);
            if (auto h = f.find("handedness"); h != f.end()) {
                auto parsed = h->is_string() ? parse_handedness(h->get<std::string>()) : std::nullopt;
                if (!parsed) throw ValidationError("bad handedness at " + where);
                frame.handedness = *parsed;
            }
        }
        seq.frames.push_back(frame);
    }
    return seq;
}

inline std::string serialize_sequence(const KeypointSequence& seq) {
    using detail::json;
    json doc;
    doc["video_id"] = seq.video_id;
    doc["label"] = seq.label;
    doc["fps"] = seq.fps;
    json frames = json::array();
    for (const auto& f : seq.frames) {
        json jf;
        jf["frame_index"] = f.frame_index;
        jf["detected"] = f.detected;
        jf["handedness"] = std::string(to_string(f.handedness));
        if (f.detected) {
            jf["detection_score"] = f.detection_score.value_or(0.0);
            json joints = json::array();
            for (const auto& j : f.joints) joints.push_back({j.x, j.y, j.z});
            jf["joints"] = std::move(joints);
        }
        frames.push_back(std::move(jf));
    }
    doc["frames"] = std::move(frames);
    return doc.dump();
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline KeypointSequence read_sequence_file(const std::filesystem::path& path) {
    try {
        return parse_sequence(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
    std::string video_id;
    std::string label;
    std::string path;
    std::string split;  // "", "train" or "test"

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<std::string> classes;  // sorted
    std::vector<ManifestEntry> entries;  // sorted by (label, video_id)
    std::uint64_t split_seed = 0;

    std::size_t class_index(std::string_view label) const {
        auto it = std::lower_bound(classes.begin(), classes.end(), label);
        if (it == classes.end() || *it != label)
            throw ValidationError("label '" + std::string(label) + "' is not in the class list");
        return static_cast<std::size_t>(it - classes.begin());
    }

    std::map<std::string, std::size_t> counts_per_class() const {
        std::map<std::string, std::size_t> counts;
        for (const auto& e : entries) ++counts[e.label];
        return counts;
    }

    DatasetManifest filtered(std::string_view split) const {
        DatasetManifest out;
        out.classes = classes;
        out.split_seed = split_seed;
        for (const auto& e : entries)
            if (e.split == split) out.entries.push_back(e);
        return out;
    }
};

namespace detail {

inline void sort_entries(std::vector<ManifestEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
        return std::tie(a.label, a.video_id) < std::tie(b.label, b.video_id);
    });
}

inline std::vector<std::string> classes_of(const std::vector<ManifestEntry>& entries) {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.label);
    return {s.begin(), s.end()};
}

}  // namespace detail

// Scans `root/<class>/*.json`. Every document is parsed, so any invalid file
// aborts with the full list of per-file diagnostics.
inline DatasetManifest build_manifest(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ValidationError("dataset root is not a directory: " + root.string());

    std::vector<fs::path> class_dirs;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) class_dirs.push_back(d.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw ValidationError("no class directories under " + root.string());

    DatasetManifest m;
    std::vector<std::string> problems;
    std::map<std::string, std::string> seen_ids;
    for (const auto& dir : class_dirs) {
        const std::string label = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir))
            if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            problems.push_back("empty class directory: " + dir.string());
            continue;
        }
        for (const auto& file : files) {
            try {
                auto seq = read_sequence_file(file);
                if (seq.label != label)
                    throw ValidationError(file.string() + ": label '" + seq.label +
                                          "' does not match directory '" + label + "'");
                auto [it, inserted] = seen_ids.emplace(seq.video_id, file.string());
                if (!inserted)
                    throw ValidationError("duplicate video_id '" + seq.video_id + "' in " + file.string() +
                                          " and " + it->second);
                m.entries.push_back({seq.video_id, label, file.string(), ""});
            } catch (const ValidationError& e) {
                problems.emplace_back(e.what());
            }
        }
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " validation problem(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
    detail::sort_entries(m.entries);
    m.classes = detail::classes_of(m.entries);
    return m;
}

// Per-class test count: round-half-up of fraction*n, at least 1 and at most n-1.
inline std::size_t stratified_test_count(std::size_t n, double test_fraction) {
    auto k = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n) + 0.5 + 1e-9));
    k = std::max<std::size_t>(k, 1);
    return std::min(k, n - 1);
}

// Splits each class independently. The selection depends only on the seed
// and the (sorted) manifest contents.
inline std::pair<DatasetManifest, DatasetManifest> stratified_split(const DatasetManifest& manifest,
                                                                   double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ValidationError("test fraction must lie strictly between 0 and 1");

    std::map<std::string, std::vector<ManifestEntry>> by_class;
    for (const auto& e : manifest.entries) by_class[e.label].push_back(e);

    DatasetManifest train, test;
    train.classes = test.classes = manifest.classes;
    train.split_seed = test.split_seed = seed;
    Rng rng(seed);
    for (auto& [label, entries] : by_class) {
        if (entries.size() < 2)
            throw ValidationError("class '" + label + "' has fewer than 2 entries; cannot split");
        detail::sort_entries(entries);
        std::vector<std::size_t> order(entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        const std::size_t k = stratified_test_count(entries.size(), test_fraction);
        std::vector<bool> in_test(entries.size(), false);
        for (std::size_t i = 0; i < k; ++i) in_test[order[i]] = true;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            auto e = entries[i];
            e.split = in_test[i] ? "test" : "train";
            (in_test[i] ? test : train).entries.push_back(std::move(e));
        }
    }
    detail::sort_entries(train.entries);
    detail::sort_entries(test.entries);
    return {std::move(train), std::move(test)};
}

// Train and test merged back into one manifest with the split column set.
inline DatasetManifest merge_split(const DatasetManifest& train, const DatasetManifest& test) {
    DatasetManifest m;
    m.classes = train.classes;
    m.split_seed = train.split_seed;
    m.entries = train.entries;
    m.entries.insert(m.entries.end(), test.entries.begin(), test.entries.end());
    detail::sort_entries(m.entries);
    return m;
}

// ---------------------------------------------------------------------------
// Manifest CSV: video_id,label,path,split

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ValidationError("unterminated quote on manifest line " + std::to_string(line_no));
    fields.push_back(std::move(cur));
    return fields;
}

}  // namespace detail

inline std::string manifest_to_csv(const DatasetManifest& m) {
    std::string out = "video_id,label,path,split\n";
    for (const auto& e : m.entries) {
        out += detail::csv_field(e.video_id) + ',' + detail::csv_field(e.label) + ',' +
               detail::csv_field(e.path) + ',' + detail::csv_field(e.split) + '\n';
    }
    return out;
}

inline DatasetManifest manifest_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ValidationError("empty manifest");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "video_id,label,path,split") throw ValidationError("manifest header must be video_id,label,path,split");
    DatasetManifest m;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line, line_no);
        if (f.size() != 4) throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
        if (f[3] != "" && f[3] != "train" && f[3] != "test")
            throw ValidationError("manifest line " + std::to_string(line_no) + ": bad split '" + f[3] + "'");
        if (!ids.insert(f[0]).second)
            throw ValidationError("manifest line " + std::to_string(line_no) + ": duplicate video_id '" + f[0] + "'");
        m.entries.push_back({f[0], f[1], f[2], f[3]});
    }
    detail::sort_entries(m.entries);
    m.classes = detail::classes_of(m.entries);
    return m;
}

}  // namespace hagcn
