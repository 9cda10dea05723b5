#include <gtest/gtest.h>

#include "hagcn/checkpoint.hpp"
#include "support/checks.hpp"
#include "support/temp_dir.hpp"

using namespace hagcn;
using namespace hagcn::check;

namespace {

AgcnModel<double> trained_tiny(Stream stream) {
    std::vector<AgcnBlockConfig> plan{make_block_config(3, 8, 1), make_block_config(8, 16, 2)};
    auto m = AgcnModel<double>::create({"alpha", "beta", "gamma"}, stream, 5, plan);
    Rng rng(5);
    // one train pass moves the running statistics; perturb B so it is not all zero
    m.forward(random_tensor({4, 3, 8, 21}, rng, false), ad::Mode::train);
    for (auto& v : m.blocks()[1].learned_adj.mutable_values()) v = static_cast<double>(static_cast<float>(rng.uniform()));
    return m;
}

// Values stored as f32: round the model to float first so the round trip is exact.
void round_to_float(AgcnModel<double>& m) {
    Tensor64 adjacency = m.adjacency();  // shares storage
    for (auto& v : adjacency.mutable_values()) v = static_cast<double>(static_cast<float>(v));
    for (auto& p : m.parameters())
        for (auto& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
    for (auto& [name, s] : m.batch_norm_states()) {
        for (auto& v : s->running_mean) v = static_cast<double>(static_cast<float>(v));
        for (auto& v : s->running_var) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesEvalLogits) {
    for (auto stream : {Stream::joint, Stream::bone}) {
        auto m = trained_tiny(stream);
        round_to_float(m);
        test::TempDir dir;
        const auto path = dir.path() / "model.agcn";
        save_checkpoint(m, path);
        auto loaded = load_checkpoint<double>(path);
        EXPECT_EQ(loaded.classes(), m.classes());
        EXPECT_EQ(loaded.stream(), stream);
        ASSERT_EQ(loaded.blocks().size(), 2u);
        EXPECT_EQ(loaded.blocks()[1].config.temporal_stride, 2u);
        EXPECT_EQ(loaded.blocks()[1].config.out_channels, 16u);

        Rng rng(9);
        auto x = random_tensor({3, 3, 8, 21}, rng, false);
        const auto a = m.forward(x, ad::Mode::eval), b = loaded.forward(x, ad::Mode::eval);
        EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
        EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(m));
    }
}

TEST(Checkpoint, HeaderLayout) {
    auto m = trained_tiny(Stream::bone);
    const auto bytes = serialize_checkpoint(m);
    EXPECT_EQ(bytes.substr(0, 4), "AGCN");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 1);  // bone
    EXPECT_EQ(bytes[7], 3);  // class count
    EXPECT_EQ(bytes[8], 0);
    EXPECT_EQ(bytes[9], 5);
    EXPECT_EQ(bytes.substr(11, 5), "alpha");
}

TEST(Checkpoint, RejectsCorruptInput) {
    auto m = trained_tiny(Stream::joint);
    const auto good = serialize_checkpoint(m);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(parse_checkpoint<double>(bad_magic), CheckpointError);

    auto bad_version = good;
    bad_version[4] = 2;
    try {
        parse_checkpoint<double>(bad_version);
        FAIL() << "version 2 accepted";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }

    auto bad_stream = good;
    bad_stream[6] = 7;
    EXPECT_THROW(parse_checkpoint<double>(bad_stream), CheckpointError);

    for (std::size_t cut : {std::size_t{2}, std::size_t{20}, good.size() / 2, good.size() - 1})
        EXPECT_THROW(parse_checkpoint<double>(std::string_view(good).substr(0, cut)), CheckpointError) << cut;

    EXPECT_THROW(load_checkpoint<double>("/nonexistent/model.agcn"), CheckpointError);
}

TEST(Checkpoint, FloatModelLoadsAsDouble) {
    std::vector<AgcnBlockConfig> plan{make_block_config(3, 8, 1)};
    auto m = AgcnModel<float>::create({"a", "b"}, Stream::joint, 3, plan);
    const auto bytes = serialize_checkpoint(m);
    auto d = parse_checkpoint<double>(bytes);
    EXPECT_EQ(serialize_checkpoint(d), bytes);
}
