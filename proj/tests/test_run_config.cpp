#include <gtest/gtest.h>

#include "hagcn/run_config.hpp"

using namespace hagcn;

TEST(RunConfig, DefaultsEcho) {
    RunConfig cfg;
    EXPECT_EQ(cfg.echo(),
              "manifest=\nout=\nstream=both\nT=50\nmissing=interpolate\nresample=uniform-index\n"
              "epochs=5\nbatch=64\nlr=0.01\nmomentum=0.9\nseed=0\nprecision=32\n");
    EXPECT_EQ(cfg.streams().size(), 2u);
}

TEST(RunConfig, EchoRoundTrips) {
    RunConfig cfg;
    cfg.set("lr", "0.003");
    cfg.set("T", "32");
    cfg.set("stream", "bone");
    cfg.set("missing", "zero-fill");
    cfg.set("resample", "pad-repeat-last");
    cfg.set("manifest", "data/manifest.csv");
    cfg.set("precision", "64");
    RunConfig back;
    apply_config_text(back, cfg.echo());
    EXPECT_EQ(back.echo(), cfg.echo());
    EXPECT_EQ(back.train.learning_rate, 0.003);
    EXPECT_EQ(back.preprocess.time_steps, 32u);
    EXPECT_EQ(back.streams(), std::vector<Stream>{Stream::bone});
}

TEST(RunConfig, CommentsAndBlankLines) {
    RunConfig cfg;
    apply_config_text(cfg, "# settings\n\n  epochs = 7  # more\r\nbatch=16\n");
    EXPECT_EQ(cfg.train.epochs, 7u);
    EXPECT_EQ(cfg.train.batch_size, 16u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
    RunConfig cfg;
    EXPECT_THROW(cfg.set("learning_rate", "0.1"), ValidationError);
    EXPECT_THROW(cfg.set("epochs", "five"), ValidationError);
    EXPECT_THROW(cfg.set("epochs", "0"), ValidationError);
    EXPECT_THROW(cfg.set("batch", "-1"), ValidationError);
    EXPECT_THROW(cfg.set("lr", "1e-2x"), ValidationError);
    EXPECT_THROW(cfg.set("missing", "drop"), ValidationError);
    EXPECT_THROW(cfg.set("stream", "skeleton"), ValidationError);
    EXPECT_THROW(cfg.set("precision", "16"), ValidationError);
    EXPECT_THROW(cfg.get("nope"), ValidationError);
    EXPECT_THROW(apply_config_text(cfg, "epochs 5\n"), ValidationError);
    EXPECT_THROW(apply_config_text(cfg, "colour=blue\n"), ValidationError);
}
