#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "anchorvo/config.hpp"
#include "anchorvo/eval.hpp"
#include "anchorvo/io.hpp"
#include "anchorvo/synth.hpp"

namespace anchorvo {

/// Frames at the working resolution plus optional ground truth.
struct Sequence {
  PinholeCamera camera;
  std::vector<double> timestamps;
  std::vector<Image> images;
  std::vector<TimedPose> groundtruth;
  std::vector<Image> depths;
};

Sequence sequence_from_dataset(Dataset dataset);
/// Renders every trajectory pose, resized to `width` x `height`.
Sequence sequence_from_scene(const SyntheticScene& scene, int width, int height);

struct KeyframeRecord {
  int frame_index = -1;
  double timestamp = 0.0;
  SE3Pose pose;
  Image depth;  // dense decoded depth at every pixel
  Eigen::Matrix3Xd points_world;  // dense sample points
  std::vector<double> intensity;
  std::vector<int> anchor_ids;
};

struct StageTimings {
  double tracking = 0.0;
  double keyframe_creation = 0.0;
  double optimization = 0.0;
  double finalization = 0.0;
};

struct RunResult {
  std::vector<TimedPose> trajectory;  // every processed frame
  std::vector<TimedPose> keyframe_trajectory;
  std::vector<KeyframeRecord> keyframes;  // creation order
  std::vector<AnchorPoint> anchors;       // by id
  std::vector<int> support_frames;
  int frames_processed = 0;
  bool tracking_lost = false;
  std::string status = "ok";
  int optimizer_iterations = 0;
  /// Largest anchor interpolation error seen after any optimizer iteration
  /// (only measured with check_anchoring).
  double max_anchor_interpolation_error = 0.0;
  StageTimings timings;
};

/// Processes frames in order: track, decide, and on insertion update the map
/// and run the sliding-window optimizer. Tracking loss stops the run and
/// keeps everything estimated so far. `log` receives one line per event.
RunResult run_pipeline(const Sequence& sequence, const PipelineConfig& config, std::ostream* log = nullptr);

PointCloud build_pointcloud(const RunResult& result, const Sequence& sequence);

struct EvalReport {
  SimilarityAlignment trajectory;
  SimilarityAlignment keyframe_trajectory;
  double trajectory_length = 0.0;
  std::optional<DepthMetrics> depth;
  std::optional<DepthMetrics> consistency;
};

/// Keyframe depth as stored on disk: only what evaluation needs.
struct KeyframeDepth {
  int frame_index = -1;
  double timestamp = 0.0;
  Image depth;
};

/// Needs ground-truth poses; depth metrics additionally need ground-truth depth.
EvalReport evaluate_run(std::span<const TimedPose> trajectory, std::span<const KeyframeDepth> keyframes,
                        const Sequence& sequence, const ConsistencyConfig& consistency = {});
EvalReport evaluate_run(const RunResult& result, const Sequence& sequence, const ConsistencyConfig& consistency = {});

std::string eval_report_json(const EvalReport& report);

/// Writes trajectory.txt, keyframes.txt, keyframe_trajectory.txt, depth/,
/// pointcloud.ply and run.log into `directory`.
void write_run_artifacts(const std::filesystem::path& directory, const RunResult& result, const Sequence& sequence,
                         const PipelineConfig& config, const std::string& log_text);
/// Reads back trajectory.txt, keyframes.txt and depth/.
std::pair<std::vector<TimedPose>, std::vector<KeyframeDepth>> read_run_artifacts(const std::filesystem::path& directory);

}  // namespace anchorvo
