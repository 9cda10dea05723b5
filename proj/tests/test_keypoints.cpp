#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <gtest/gtest.h>

#include "hagcn/keypoints.hpp"
#include "hagcn/synthetic.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace hagcn;

namespace {

std::string joints_json(double x0 = 0.5, std::size_t count = 21) {
    std::string s = "[";
    for (std::size_t j = 0; j < count; ++j) {
        if (j) s += ",";
        s += "[" + std::to_string(j == 0 ? x0 : 0.01 * static_cast<double>(j)) + ",0.5,0.0]";
    }
    return s + "]";
}

std::string detected_frame(int index, const std::string& joints) {
    return R"({"frame_index":)" + std::to_string(index) +
           R"(,"detected":true,"handedness":"Right","detection_score":0.9,"joints":)" + joints + "}";
}

std::string missing_frame(int index) {
    return R"({"frame_index":)" + std::to_string(index) + R"(,"detected":false,"handedness":"Unknown"})";
}

std::string document(const std::string& frames, const std::string& id = "v1", const std::string& label = "bad") {
    return R"({"video_id":")" + id + R"(","label":")" + label + R"(","fps":30,"frames":[)" + frames + "]}";
}

std::string error_of(const std::string& doc) {
    try {
        parse_sequence(doc);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(ParseSequence, KeepsUndetectedFrames) {
    std::string frames;
    for (int i = 0; i < 73; ++i) {
        if (i) frames += ",";
        frames += (i == 10 || i == 11 || i == 40) ? missing_frame(i) : detected_frame(i, joints_json());
    }
    const auto seq = parse_sequence(document(frames));
    EXPECT_EQ(seq.frames.size(), 73u);
    EXPECT_EQ(seq.detected_count(), 70u);
    EXPECT_FALSE(seq.frames[10].detected);
    EXPECT_FALSE(seq.frames[10].detection_score.has_value());
    EXPECT_EQ(seq.video_id, "v1");
    EXPECT_EQ(seq.label, "bad");
    EXPECT_DOUBLE_EQ(seq.frames[0].joints[20].x, 0.2);
}

TEST(ParseSequence, RejectsWrongJointCountWithLocation) {
    std::string frames;
    for (int i = 0; i < 8; ++i) {
        if (i) frames += ",";
        frames += detected_frame(i, joints_json(0.5, i == 5 ? 20 : 21));
    }
    EXPECT_NE(error_of(document(frames)).find("joint count 20 ≠ 21 at frame 5"), std::string::npos)
        << error_of(document(frames));
}

TEST(ParseSequence, RejectsNonFiniteCoordinates) {
    std::string joints = joints_json();
    // joint 3's x becomes a bare NaN token
    const auto pos = joints.find("[0.030000");
    ASSERT_NE(pos, std::string::npos);
    joints.replace(pos + 1, 8, "NaN");
    const auto msg = error_of(document(detected_frame(0, joints)));
    EXPECT_NE(msg.find("non-finite coordinate at frame 0, joint 3"), std::string::npos) << msg;

    std::string inf = joints_json();
    inf.replace(inf.find("[0.030000") + 1, 8, "-Infinity");
    EXPECT_NE(error_of(document(detected_frame(0, inf))).find("non-finite"), std::string::npos);
}

TEST(ParseSequence, RejectsNonMonotonicFrameIndex) {
    const auto doc = document(detected_frame(0, joints_json()) + "," + detected_frame(2, joints_json()) + "," +
                              detected_frame(2, joints_json()));
    const auto msg = error_of(doc);
    EXPECT_NE(msg.find("non-monotonic frame_index"), std::string::npos) << msg;
    EXPECT_NE(msg.find("frame 2"), std::string::npos) << msg;
}

TEST(ParseSequence, RejectsMalformedDocuments) {
    EXPECT_NE(error_of("{not json").find("malformed document"), std::string::npos);
    EXPECT_NE(error_of("[1,2]").find("malformed document"), std::string::npos);
    EXPECT_NE(error_of(R"({"video_id":"a","label":"b","fps":30})").find("malformed document"), std::string::npos);
    EXPECT_NE(error_of(document(R"({"frame_index":0,"detected":true,"handedness":"Right","joints":)" +
                                joints_json() + "}"))
                  .find("detection_score"),
              std::string::npos);
    EXPECT_FALSE(error_of(document(R"({"frame_index":0,"detected":false,"detection_score":0.5})")).empty());
    EXPECT_FALSE(error_of(document(R"({"frame_index":0,"detected":true,"handedness":"Up","detection_score":0.5,"joints":)" +
                                   joints_json() + "}"))
                     .empty());
}

TEST(ParseSequence, KeepsHighestScoringHand) {
    const std::string frame = R"({"frame_index":0,"detected":true,"hands":[)"
                              R"({"handedness":"Left","detection_score":0.7,"joints":)" +
                              joints_json(0.1) + R"(},{"handedness":"Right","detection_score":0.95,"joints":)" +
                              joints_json(0.9) + "}]}";
    const auto seq = parse_sequence(document(frame));
    ASSERT_EQ(seq.frames.size(), 1u);
    EXPECT_EQ(seq.frames[0].handedness, Handedness::right);
    EXPECT_DOUBLE_EQ(*seq.frames[0].detection_score, 0.95);
    EXPECT_DOUBLE_EQ(seq.frames[0].joints[0].x, 0.9);
}

TEST(ParseSequence, RoundTripProperty) {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Rng rng(seed);
        KeypointSequence seq;
        seq.video_id = "vid" + std::to_string(seed);
        seq.label = "label" + std::to_string(seed % 3);
        seq.fps = 10.0 + 50.0 * rng.uniform();
        std::int64_t index = static_cast<std::int64_t>(rng.below(5));
        const auto frames = 1 + rng.below(40);
        for (std::size_t f = 0; f < frames; ++f) {
            HandFrame fr;
            fr.frame_index = index;
            index += 1 + static_cast<std::int64_t>(rng.below(3));
            fr.detected = f == 0 || rng.uniform() < 0.8;
            fr.handedness = static_cast<Handedness>(rng.below(3));
            if (fr.detected) {
                fr.detection_score = rng.uniform();
                for (auto& j : fr.joints) j = {rng.uniform(), rng.uniform(), rng.normal() * 0.1};
            }
            seq.frames.push_back(fr);
        }
        const auto text = serialize_sequence(seq);
        const auto back = parse_sequence(text);
        EXPECT_EQ(back, seq) << "seed " << seed;
        EXPECT_EQ(serialize_sequence(back), text);
    }
}

TEST(BuildManifest, SortsAndCounts) {
    test::TempDir tmp;
    SyntheticSpec spec;
    spec.classes = 3;
    spec.per_class = 4;
    spec.frames = 3;
    write_synthetic_dataset(tmp.path(), spec);
    const auto m = build_manifest(tmp.path());
    ASSERT_EQ(m.classes.size(), 3u);
    EXPECT_EQ(m.classes[0], "class00");
    EXPECT_EQ(m.entries.size(), 12u);
    EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.label, a.video_id) < std::tie(b.label, b.video_id);
    }));
    for (const auto& [label, n] : m.counts_per_class()) EXPECT_EQ(n, 4u) << label;
}

TEST(BuildManifest, SingleClassDirectory) {
    test::TempDir tmp;
    fs::create_directories(tmp.path() / "bad");
    for (const char* id : {"b1", "b2"}) {
        std::ofstream(tmp.path() / "bad" / (std::string(id) + ".json"))
            << document(detected_frame(0, joints_json()), id, "bad");
    }
    const auto m = build_manifest(tmp.path());
    EXPECT_EQ(m.classes, std::vector<std::string>{"bad"});
    EXPECT_EQ(m.entries.size(), 2u);
}

TEST(BuildManifest, RejectsDuplicateIdsAndEmptyClasses) {
    test::TempDir tmp;
    fs::create_directories(tmp.path() / "a");
    fs::create_directories(tmp.path() / "b");
    fs::create_directories(tmp.path() / "empty");
    std::ofstream(tmp.path() / "a" / "x.json") << document(detected_frame(0, joints_json()), "same", "a");
    std::ofstream(tmp.path() / "b" / "y.json") << document(detected_frame(0, joints_json()), "same", "b");
    try {
        build_manifest(tmp.path());
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("duplicate video_id 'same'"), std::string::npos) << msg;
        EXPECT_NE(msg.find("empty class directory"), std::string::npos) << msg;
    }
}

TEST(BuildManifest, RejectsEmptyRoot) {
    test::TempDir tmp;
    EXPECT_THROW(build_manifest(tmp.path()), ValidationError);
    EXPECT_THROW(build_manifest(tmp.path() / "missing"), ValidationError);
}

namespace {

DatasetManifest manifest_with_counts(const std::vector<std::size_t>& counts) {
    DatasetManifest m;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const auto label = "c" + std::to_string(10 + c);
        m.classes.push_back(label);
        for (std::size_t i = 0; i < counts[c]; ++i)
            m.entries.push_back({label + "_" + std::to_string(100 + i), label, "/x/" + label, ""});
    }
    return m;
}

// Independent per-class count: round half up, floor of one.
std::size_t expected_test_count(std::size_t n, double f) {
    const auto k = static_cast<std::size_t>(f * static_cast<double>(n) + 0.5);
    return k < 1 ? 1 : k;
}

}  // namespace

TEST(StratifiedSplit, TenEntriesGiveTwoTest) {
    const auto [train, test] = stratified_split(manifest_with_counts({10}), 0.2, 3);
    EXPECT_EQ(train.entries.size(), 8u);
    EXPECT_EQ(test.entries.size(), 2u);
}

TEST(StratifiedSplit, RoundingExamples) {
    EXPECT_EQ(stratified_test_count(8, 0.2), 2u);   // 1.6
    EXPECT_EQ(stratified_test_count(12, 0.2), 2u);  // 2.4
    EXPECT_EQ(stratified_test_count(2, 0.2), 1u);   // floor of one
    EXPECT_EQ(stratified_test_count(22, 0.2), 4u);  // 4.4
    EXPECT_EQ(stratified_test_count(15, 0.1), 2u);  // 1.5 rounds up
}

TEST(StratifiedSplit, PartitionProperty) {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::size_t> counts;
        const auto classes = 1 + rng.below(12);
        for (std::size_t c = 0; c < classes; ++c) counts.push_back(2 + rng.below(30));
        const double f = 0.05 + 0.5 * rng.uniform();
        const auto m = manifest_with_counts(counts);
        const auto [train, test] = stratified_split(m, f, rng.next_u64());

        std::map<std::string, std::string> where;
        for (const auto& e : train.entries) EXPECT_TRUE(where.emplace(e.video_id, "train").second);
        for (const auto& e : test.entries) EXPECT_TRUE(where.emplace(e.video_id, "test").second) << "overlap";
        EXPECT_EQ(where.size(), m.entries.size());

        const auto per_class = test.counts_per_class();
        for (std::size_t c = 0; c < counts.size(); ++c) {
            const auto label = m.classes[c];
            const std::size_t want = std::min(expected_test_count(counts[c], f), counts[c] - 1);
            EXPECT_EQ(per_class.count(label) ? per_class.at(label) : 0u, want) << "n=" << counts[c] << " f=" << f;
        }
    }
}

TEST(StratifiedSplit, TotalMatchesCountingOracle) {
    // A 611-entry manifest over 40 classes: sizes drawn in 8..22, then
    // nudged one clip at a time until they sum to 611.
    std::vector<std::size_t> counts;
    Rng rng(2024);
    std::size_t total = 0;
    for (int c = 0; c < 40; ++c) {
        counts.push_back(8 + rng.below(15));
        total += counts.back();
    }
    while (total != 611) {
        auto& n = counts[rng.below(40)];
        if (total < 611 && n < 22) ++n, ++total;
        if (total > 611 && n > 8) --n, --total;
    }
    std::size_t oracle = 0;
    for (auto n : counts) oracle += expected_test_count(n, 0.2);
    const auto [train, test] = stratified_split(manifest_with_counts(counts), 0.2, 7);
    EXPECT_EQ(test.entries.size(), oracle);
    EXPECT_EQ(train.entries.size() + test.entries.size(), 611u);
}

TEST(StratifiedSplit, DeterministicInSeed) {
    const auto m = manifest_with_counts({9, 14, 22, 8});
    const auto a = stratified_split(m, 0.2, 7);
    const auto b = stratified_split(m, 0.2, 7);
    EXPECT_EQ(manifest_to_csv(merge_split(a.first, a.second)), manifest_to_csv(merge_split(b.first, b.second)));
    bool differs = false;
    for (std::uint64_t s = 8; s < 20 && !differs; ++s) {
        const auto c = stratified_split(m, 0.2, s);
        differs = c.second.entries != a.second.entries;
    }
    EXPECT_TRUE(differs) << "seed has no effect";
}

TEST(StratifiedSplit, RejectsTinyClassesAndBadFractions) {
    EXPECT_THROW(stratified_split(manifest_with_counts({5, 1}), 0.2, 1), ValidationError);
    EXPECT_THROW(stratified_split(manifest_with_counts({5}), 0.0, 1), ValidationError);
    EXPECT_THROW(stratified_split(manifest_with_counts({5}), 1.0, 1), ValidationError);
}

TEST(ManifestCsv, RoundTripWithQuoting) {
    auto m = manifest_with_counts({3, 2});
    m.entries[0].path = "/data/with,comma/\"quoted\".json";
    m.entries[1].split = "test";
    const auto text = manifest_to_csv(m);
    EXPECT_EQ(text.substr(0, text.find('\n')), "video_id,label,path,split");
    const auto back = manifest_from_csv(text);
    EXPECT_EQ(back.entries, m.entries);
    EXPECT_EQ(back.classes, m.classes);
}

TEST(ManifestCsv, RejectsBadInput) {
    EXPECT_THROW(manifest_from_csv(""), ValidationError);
    EXPECT_THROW(manifest_from_csv("id,label\n"), ValidationError);
    EXPECT_THROW(manifest_from_csv("video_id,label,path,split\na,b,c,validation\n"), ValidationError);
    EXPECT_THROW(manifest_from_csv("video_id,label,path,split\na,b,c,\na,b,d,\n"), ValidationError);
}
