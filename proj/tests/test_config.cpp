#include <gtest/gtest.h>

#include <filesystem>

#include "anchorvo/config.hpp"
#include "anchorvo/errors.hpp"

namespace anchorvo {
namespace {

namespace fs = std::filesystem;

TEST(Config, DefaultsMatchTheFixedConfiguration) {
  const PipelineConfig c;
  EXPECT_EQ(c.max_keyframes, 9);
  EXPECT_EQ(c.support_per_gap, 3);
  EXPECT_EQ(c.max_anchors, 64);
  EXPECT_EQ(c.width, 256);
  EXPECT_EQ(c.height, 192);
  EXPECT_EQ(c.gradient_patch, 4);
  EXPECT_EQ(c.max_frames, 24);
  EXPECT_DOUBLE_EQ(c.keyframes.translation_threshold, 0.02);
  EXPECT_DOUBLE_EQ(c.keyframes.overlap_threshold, 0.6);
  EXPECT_DOUBLE_EQ(c.backend.robust.huber_delta, 1.345);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(dump_config(parse_config("")), dump_config(PipelineConfig{}));
}

TEST(Config, ZeroKeyframesIsRejected) {
  EXPECT_THROW(parse_config("[window]\nmax_keyframes = 0\n"), ConfigError);
  PipelineConfig c;
  c.max_keyframes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, EveryRangeIsChecked) {
  const char* bad[] = {
      "[image]\nwidth = 16\n",
      "[window]\nmax_frames = 4\n",
      "[window]\nmax_anchors = 0\n",
      "[sampling]\ngradient_patch = 0\n",
      "[sampling]\ncvr_variance_fraction = 1.0\n",
      "[kernel]\npixel_length_scale = 0\n",
      "[kernel]\nrelative_jitter = 0\n",
      "[tracking]\nlevels = 7\n",
      "[tracking]\nmin_valid_fraction = 0\n",
      "[tracking]\niterations = 3 0 2\n",
      "[keyframe]\noverlap_threshold = 1.0\n",
      "[visibility]\nthreshold = -0.1\n",
      "[robust]\nhuber_delta = 0\n",
      "[backend]\nmarginal_sigma = 0\n",
      "[backend]\niterations = 0\n",
      "[pipeline]\ninitial_depth = 0\n",
  };
  for (const char* text : bad) EXPECT_THROW(parse_config(text), ConfigError) << text;
}

TEST(Config, UnknownAndMalformedInput) {
  EXPECT_THROW(parse_config("[window]\nmax_keyframe = 9\n"), ConfigError);
  EXPECT_THROW(parse_config("[windows]\nmax_keyframes = 9\n"), ConfigError);
  EXPECT_THROW(parse_config("max_keyframes = 9\n"), ConfigError);
  EXPECT_THROW(parse_config("[window]\nmax_keyframes = nine\n"), ConfigError);
  EXPECT_THROW(parse_config("[pipeline]\nanchor_sharing = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[tracking]\niterations = 3 x\n"), ConfigError);
  EXPECT_THROW(parse_config("[window\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/anchorvo.ini"), ConfigError);
}

TEST(Config, ValuesAreRead) {
  const PipelineConfig c = parse_config(
      "; comment\n[window]\nmax_keyframes = 5\n[tracking]\niterations = 4 3 2\n"
      "[pipeline]\nanchor_sharing = false\nseed = 42\n[kernel]\nfeature_length_scale = 2.5\n");
  EXPECT_EQ(c.max_keyframes, 5);
  EXPECT_EQ(c.tracking.iterations, (std::vector<int>{4, 3, 2}));
  EXPECT_FALSE(c.anchor_sharing);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_DOUBLE_EQ(c.kernel.feature_length_scale, 2.5);
  EXPECT_EQ(c.max_anchors, 64);
}

TEST(Config, DumpRoundTrips) {
  PipelineConfig c;
  c.max_keyframes = 7;
  c.kernel.feature_length_scale = 1.0 / 3.0;
  c.backend.gp_prior_scale = 0.0123456789012345;
  c.tracking.iterations = {9, 8};
  c.check_anchoring = true;
  c.seed = 123456789012ULL;
  const std::string text = dump_config(c);
  const PipelineConfig back = parse_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.kernel.feature_length_scale, c.kernel.feature_length_scale);
  EXPECT_EQ(back.backend.gp_prior_scale, c.backend.gp_prior_scale);
}

TEST(Config, ShippedFileIsTheDefault) {
  const PipelineConfig c = load_config(fs::path(ANCHORVO_SOURCE_DIR) / "configs" / "default.ini");
  EXPECT_EQ(dump_config(c), dump_config(PipelineConfig{}));
}

}  // namespace
}  // namespace anchorvo
