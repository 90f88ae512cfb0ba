#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "anchorvo/backend.hpp"
#include "anchorvo/frontend.hpp"
#include "anchorvo/kernel.hpp"

namespace anchorvo {

/// Every tunable of a run. Defaults follow a 256 x 192 working resolution,
/// a window of 9 keyframes with 3 support frames per gap (24 frames in
/// total), 64 anchors per keyframe and one sample per 4 x 4 patch.
struct PipelineConfig {
  int width = 256;
  int height = 192;
  int max_keyframes = 9;
  int support_per_gap = 3;
  int max_frames = 24;
  int max_anchors = 64;
  int gradient_patch = 4;

  FeatureConfig kernel;
  TrackingConfig tracking;
  KeyframePolicy keyframes;
  BackendConfig backend;

  double visibility_threshold = 0.1;
  double bootstrap_sigma_d = 0.05;
  int observation_cell = 4;
  /// CVR stops once the largest conditional variance falls below this
  /// fraction of the signal variance.
  double cvr_variance_fraction = 0.05;
  double cvr_min_dist = 8.0;
  double cvr_border = 8.0;

  /// Depth of the flat initial map.
  double initial_depth = 1.0;
  /// Share anchors between keyframes through visibility matching. When off,
  /// every keyframe gets fresh anchors.
  bool anchor_sharing = true;
  /// Runs the backend after each inserted support frame as well as after
  /// each keyframe.
  bool optimize_on_support = true;
  /// Records the anchor interpolation error after every optimizer iteration.
  bool check_anchoring = false;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first out-of-range field.
  void validate() const;
};

/// Reads an INI file; keys absent from the file keep their defaults.
/// Unknown sections or keys are rejected.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& text);
/// INI text of every field, loadable by parse_config.
std::string dump_config(const PipelineConfig& config);

}  // namespace anchorvo
