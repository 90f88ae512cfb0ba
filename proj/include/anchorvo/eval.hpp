#pragma once

#include <array>
#include <span>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/image.hpp"
#include "anchorvo/io.hpp"
#include "anchorvo/se3.hpp"

namespace anchorvo {

/// Ratio thresholds reported by the depth metrics: 1.02 ... 1.25^3.
inline constexpr std::array<double, 6> kDeltaThresholds = {1.02, 1.05, 1.10, 1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};

/// Similarity mapping estimate coordinates onto the reference:
/// x_ref ~ scale * rotation * x_est + translation.
struct SimilarityAlignment {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double ate_rmse = 0.0;
  int pairs = 0;

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return scale * rotation * p + translation; }
};

/// Closed-form least-squares similarity over positions. Throws
/// InsufficientDataError for fewer than three pairs.
SimilarityAlignment align_trajectory_scale(std::span<const Vec3> estimate, std::span<const Vec3> reference);
/// Pairs poses by timestamp (within `tolerance`) before aligning.
SimilarityAlignment align_trajectory_scale(std::span<const TimedPose> estimate, std::span<const TimedPose> reference,
                                           double tolerance = 1e-4);

struct DepthMetrics {
  double absrel = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::array<double, kDeltaThresholds.size()> delta{};  // fraction with max ratio < threshold
  long count = 0;
};

/// Metrics over pixels where both maps are positive; the estimate is
/// multiplied by `scale` first. Throws EmptyEvaluationError when nothing is valid.
DepthMetrics depth_metrics(const Image& estimate, const Image& ground_truth, double scale = 1.0);

/// Accumulates per-pixel errors across several depth maps.
class DepthAccumulator {
 public:
  void add(double estimate, double reference);
  [[nodiscard]] DepthMetrics result() const;
  [[nodiscard]] long count() const { return count_; }

 private:
  double abs_rel_ = 0.0;
  double sq_ = 0.0;
  double abs_ = 0.0;
  std::array<long, kDeltaThresholds.size()> within_{};
  long count_ = 0;
};

struct ConsistencyFrame {
  Image estimated_depth;
  Image ground_truth_depth;
  SE3Pose estimated_pose;
  SE3Pose ground_truth_pose;
};

struct ConsistencyConfig {
  /// Ground-truth correspondences must agree to this fraction of the scene
  /// scale (median ground-truth depth of the source frame).
  double agreement_fraction = 0.01;
};

/// Cross-view consistency of consecutive pairs in both directions. Pixel
/// correspondences come from the ground truth; a source pixel's estimated
/// depth is transferred with the estimated poses and compared with the
/// target's estimated depth: |D_B - z_AB| / z_AB.
DepthMetrics consistency_metrics(std::span<const ConsistencyFrame> frames, const PinholeCamera& camera,
                                 const ConsistencyConfig& config = {});

}  // namespace anchorvo
