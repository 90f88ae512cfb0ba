#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/geometry.hpp"
#include "anchorvo/kernel.hpp"
#include "anchorvo/photometric.hpp"

namespace anchorvo {

struct TrackingConfig {
  int num_levels = 3;
  /// Iteration budget per level, coarsest first.
  std::vector<int> iterations = {30, 20, 10};
  double convergence = 1e-7;
  int max_rejections = 5;
  double min_valid_fraction = 0.2;
  RobustConfig robust;
  double border_margin = 1.0;
};

struct TrackingState {
  SE3Pose pose;  // T_WC of the tracked frame
  AffineBrightness affine;
  int reference_id = -1;
  std::vector<int> levels_used;
  int iterations = 0;
  double final_cost = 0.0;
  double valid_fraction = 0.0;
};

/// Reference-side data of inverse-compositional alignment, built once per
/// keyframe geometry and reused for every tracked frame.
class TrackingReference {
 public:
  struct Level {
    PinholeCamera camera;
    Eigen::Matrix3Xd points;                       // reference camera frame
    Eigen::VectorXd intensity;                     // I_r at the projections
    Eigen::Matrix<double, Eigen::Dynamic, 6> jacobian;  // grad I_r * dpi * [I, -[P]x]
  };

  TrackingReference(const ImagePyramid& pyramid, const SE3Pose& pose, const AffineBrightness& affine,
                    const DenseGeometry& geometry, const PinholeCamera& camera, int num_levels, int keyframe_id);

  [[nodiscard]] const Level& level(int l) const { return levels_[l]; }
  [[nodiscard]] int num_levels() const { return static_cast<int>(levels_.size()); }
  [[nodiscard]] const SE3Pose& pose() const { return pose_; }
  [[nodiscard]] const AffineBrightness& affine() const { return affine_; }
  [[nodiscard]] int keyframe_id() const { return keyframe_id_; }

 private:
  std::vector<Level> levels_;
  SE3Pose pose_;
  AffineBrightness affine_;
  int keyframe_id_;
};

/// Coarse-to-fine robust alignment of `frame` against the reference with the
/// geometry held fixed. Throws TrackingLostError when too few residuals stay
/// valid or the cost becomes non-finite.
TrackingState track_frame(const ImagePyramid& frame, const TrackingReference& reference, const TrackingState& init,
                          const TrackingConfig& config = {});

/// Constant-velocity prediction T_prev * (T_prev2^-1 T_prev).
SE3Pose predict_constant_velocity(const SE3Pose& previous, const SE3Pose& before_previous);

struct MotionStats {
  double translation_ratio = 0.0;  // |t_rel| / median depth
  double overlap = 1.0;            // unique projected pixels / dense points
};

MotionStats motion_stats(const DenseGeometry& keyframe_geometry, const SE3Pose& keyframe_pose,
                         const SE3Pose& frame_pose, const PinholeCamera& camera);

struct KeyframePolicy {
  double translation_threshold = 0.02;
  double overlap_threshold = 0.6;
  /// Support-frame tests use the keyframe thresholds scaled by this factor.
  double support_scale = 0.25;
  int max_support_per_gap = 3;
};

enum class FrameDecision { kRegular, kSupport, kKeyframe };

/// `current` is measured against the newest keyframe. The support tests use
/// the scaled thresholds on the motion since the last inserted frame
/// (keyframe or support frame): `translation_since_insert` relative to the
/// median depth and the overlap lost since `overlap_at_insert`.
FrameDecision decide_keyframe(const MotionStats& current, double translation_since_insert, double overlap_at_insert,
                              int supports_in_gap, const KeyframePolicy& policy = {});

struct DepthObservations {
  std::vector<Vec2> pixels;
  Eigen::VectorXd logdepth;
};

/// Projects world points into a camera and keeps the nearest one per
/// `cell` x `cell` block.
DepthObservations project_observations(const Eigen::Matrix3Xd& points_world, const SE3Pose& pose,
                                       const PinholeCamera& camera, int cell = 4, double border = 0.0);

struct CompressionResult {
  Eigen::VectorXd anchor_logdepth;  // d_M
  Eigen::VectorXd residuals;        // cond d_M - d_N
  double sigma = 0.0;               // std of the residuals
};

/// argmin_d |cond d - d_N|^2 / sigma_d^2 + d^T (K_MM + jitter I)^-1 d, solved
/// in the coefficient space alpha = (K_MM + jitter I)^-1 d. Throws
/// EmptyVisibilityError without observations or anchors.
CompressionResult compress_dense_to_sparse(const CovarianceModel& model, std::span<const Vec2> observation_pixels,
                                           const Eigen::VectorXd& observation_logdepth,
                                           std::span<const Vec2> anchor_pixels, double sigma_d, double jitter,
                                           double sigma_min = 1e-3);

struct VisibilityReport {
  std::vector<int> matched_anchor_ids;
  std::vector<int> rejected_anchor_ids;
  std::vector<double> rejected_discrepancy;
  Eigen::VectorXd compressed_logdepth;
  double residual_sigma = 0.0;
  /// Index of each matched anchor in the candidate list.
  std::vector<int> matched_index;
};

/// Matched iff |projected log-depth - compressed log-depth| < threshold.
VisibilityReport check_visibility(std::span<const int> candidate_ids, const Eigen::VectorXd& candidate_logdepth,
                                  const CompressionResult& compression, double threshold);

struct CvrConfig {
  double variance_threshold = 0.05;  // absolute
  double min_dist = 8.0;
  double border = 8.0;
  int max_selections = 64;
};

/// Variances within this fraction of the signal variance of the maximum are
/// tied. Far-apart pixels decorrelate to below rounding, so exact comparison
/// would let last-bit noise pick among them.
inline constexpr double kCvrTieTolerance = 1e-14;

/// Greedy conditional-variance-reduction sampling. Returns indices into
/// `domain` in selection order. Ties go to the lowest index.
std::vector<int> cvr_sample(const CovarianceModel& model, std::span<const Vec2> existing, std::span<const Vec2> domain,
                            const CvrConfig& config, double jitter);

/// Closed-form new-anchor log-depths with the matched ones held fixed:
///   (C2^T C2 / sd^2 + I / ss^2) d2 = C2^T (d_N - C1 d1) / sd^2 + s / ss^2
Eigen::VectorXd solve_new_anchor_logdepths(const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                                           const Eigen::VectorXd& d1, const Eigen::VectorXd& dn, double prior_logdepth,
                                           double sigma_d, double sigma_s);

struct AnchorInitResult {
  Eigen::VectorXd logdepth;
  std::vector<Vec3> points_world;
};

AnchorInitResult initialize_new_anchors(const CovarianceModel& model, std::span<const Vec2> matched_pixels,
                                        const Eigen::VectorXd& matched_logdepth, std::span<const Vec2> new_pixels,
                                        const DepthObservations& observations, double prior_logdepth, double sigma_d,
                                        double sigma_s, double jitter, const SE3Pose& pose,
                                        const PinholeCamera& camera);

}  // namespace anchorvo
