#pragma once

#include <Eigen/Core>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/geometry.hpp"
#include "anchorvo/image.hpp"

namespace anchorvo {

/// Grayscale pyramid; level 0 is the working resolution and each coarser
/// level is a 2x2 average of the previous one.
struct ImagePyramid {
  std::vector<Image> levels;
  std::vector<ImageGradients> gradients;

  static ImagePyramid build(const Image& image, int num_levels);
  [[nodiscard]] int num_levels() const { return static_cast<int>(levels.size()); }
};

/// Per-frame gain (log) and bias. (0, 0) is the identity transfer.
struct AffineBrightness {
  double a = 0.0;
  double b = 0.0;
};

/// Reference keyframe hosts the geometry, target supplies intensities.
struct PhotometricEdge {
  int reference_id = -1;
  int target_id = -1;
};

/// One pixel per `patch` x `patch` block: the block's gradient-magnitude
/// argmax, ties broken towards the top-left. Blocks at the right and bottom
/// borders are clipped.
std::vector<Vec2> sample_high_gradient_pixels(const ImageGradients& gradients, int patch = 4);
std::vector<Vec2> sample_high_gradient_pixels(const ImagePyramid& pyramid, int patch = 4, int level = 0);

struct FrameView {
  const ImagePyramid* pyramid = nullptr;
  SE3Pose pose;
  AffineBrightness affine;
};

struct PhotometricConfig {
  /// Bilinear lookups must stay this far inside the border.
  double border_margin = 1.0;
  double min_depth = kDefaultMinDepth;
};

struct PhotometricResidual {
  double value = 0.0;
  bool valid = false;
  Vec2 target_pixel = Vec2::Zero();
  Vec3 target_point = Vec3::Zero();  // in the target camera frame
  double reference_intensity = 0.0;
  Vec2 target_gradient = Vec2::Zero();
  double gain = 1.0;  // exp(a_t - a_r)
};

/// r = I_t(p_t) + b_t - (exp(a_t - a_r) I_r(p_r) + b_r) for dense point `n`.
PhotometricResidual photometric_residual(const FrameView& reference, const FrameView& target,
                                         const PinholeCamera& camera, const DenseGeometry& geometry, Eigen::Index n,
                                         const PhotometricConfig& config = {});

/// Residual Jacobians with the anchor block kept in factored form: the full
/// anchor row is anchor_scale * factors.anchor_coeff.row(n) (x) anchor_axis^T.
struct CompactResidualJacobian {
  double anchor_scale = 0.0;
  Eigen::Matrix<double, 1, 6> pose_reference;
  Eigen::Matrix<double, 1, 6> pose_target;
  Eigen::Matrix<double, 1, 2> affine_reference;  // (a_r, b_r)
  Eigen::Matrix<double, 1, 2> affine_target;     // (a_t, b_t)
};

CompactResidualJacobian compact_residual_jacobian(const FrameView& reference, const FrameView& target,
                                                  const PinholeCamera& camera, const DenseGeometry& geometry,
                                                  const DenseJacobianFactors& factors, Eigen::Index n,
                                                  const PhotometricResidual& residual);

struct ResidualJacobians {
  Eigen::RowVectorXd anchors;  // 1 x 3M
  Eigen::Matrix<double, 1, 6> pose_reference;
  Eigen::Matrix<double, 1, 6> pose_target;
  Eigen::Matrix<double, 1, 2> affine_reference;
  Eigen::Matrix<double, 1, 2> affine_target;
};

/// Expanded Jacobians of a valid residual.
ResidualJacobians residual_jacobians(const FrameView& reference, const FrameView& target, const PinholeCamera& camera,
                                     const DenseGeometry& geometry, Eigen::Index n, const PhotometricConfig& config = {});

struct RobustConfig {
  double huber_delta = 1.345;
  double sigma_min = 1e-3;
  double mad_scale = 1.4826;
};

struct RobustWeights {
  Eigen::VectorXd weights;
  double sigma = 0.0;
};

/// Huber IRLS weights with sigma = mad_scale * median |r| (clamped at
/// sigma_min). Invalid entries receive zero weight. Throws
/// DegenerateEdgeError when nothing is valid.
RobustWeights robust_weights(const Eigen::VectorXd& residuals, const std::vector<char>& valid,
                             const RobustConfig& config = {});
RobustWeights robust_weights(const Eigen::VectorXd& residuals, const RobustConfig& config = {});

/// Huber cost of r/sigma, scaled so that the IRLS weight equals 1/sigma^2 on inliers.
double huber_cost(double residual, double sigma, double delta);
double huber_weight(double residual, double sigma, double delta);

}  // namespace anchorvo
