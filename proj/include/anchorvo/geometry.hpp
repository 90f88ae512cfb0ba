#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/kernel.hpp"
#include "anchorvo/se3.hpp"

namespace anchorvo {

/// Points closer than this along the optical axis are treated as behind the camera.
inline constexpr double kDefaultMinDepth = 1e-4;

/// A world-frame 3D point shared by every keyframe that sees it.
struct AnchorPoint {
  int id = -1;
  Vec3 position_world = Vec3::Zero();
  int host_keyframe_id = -1;
  /// Pixel in the host keyframe where the anchor was first observed.
  Vec2 host_pixel = Vec2::Zero();
  /// Log median depth of the keyframe the anchor was initialised from.
  double median_logdepth_at_init = 0.0;
};

struct AnchorProjection {
  Vec2 pixel = Vec2::Zero();
  double logdepth = 0.0;
  bool in_front = false;
  Vec3 point_camera = Vec3::Zero();
};

AnchorProjection project_point(const SE3Pose& pose, const PinholeCamera& camera, const Vec3& point_world,
                               double min_depth = kDefaultMinDepth);
AnchorProjection project_anchor(const SE3Pose& pose, const PinholeCamera& camera, const AnchorPoint& anchor,
                                double min_depth = kDefaultMinDepth);

/// Dense log-depth decoded from anchors through a fixed conditioning matrix,
/// plus the per-pixel chain-rule factors reused by every Jacobian.
struct DenseGeometry {
  int keyframe_id = -1;
  std::vector<Vec2> query_pixels;
  std::shared_ptr<const Eigen::MatrixXd> cond;

  Eigen::Matrix3Xd anchor_points_camera;  // P_C^m
  Eigen::VectorXd anchor_logdepth;        // d_M
  Eigen::VectorXd logdepth;               // d_N = cond d_M
  Eigen::Matrix3Xd points_camera;         // P_C^n
  Eigen::Matrix3Xd points_world;          // P_W^n

  [[nodiscard]] Eigen::Index num_queries() const { return logdepth.size(); }
  [[nodiscard]] Eigen::Index num_anchors() const { return anchor_logdepth.size(); }
};

/// Throws Error if any anchor is not in front of the camera.
DenseGeometry decode_dense(std::span<const Vec3> anchor_positions, const SE3Pose& pose,
                           const PinholeCamera& camera, std::shared_ptr<const Eigen::MatrixXd> cond,
                           std::span<const Vec2> query_pixels, int keyframe_id = -1,
                           double min_depth = kDefaultMinDepth);

inline DenseGeometry decode_dense(std::span<const Vec3> anchor_positions, const SE3Pose& pose,
                                  const PinholeCamera& camera, const CovarianceMatrices& cov,
                                  std::span<const Vec2> query_pixels, int keyframe_id = -1) {
  return decode_dense(anchor_positions, pose, camera, std::make_shared<const Eigen::MatrixXd>(cov.cond),
                      query_pixels, keyframe_id);
}

/// Median of exp(d_N).
double median_depth(const DenseGeometry& geometry);

/// Moves an anchor that fell behind its host camera back onto the host pixel
/// ray at `median_depth`. Anchors in front are returned unchanged.
AnchorPoint reset_behind_camera(const AnchorPoint& anchor, const SE3Pose& host_pose, const PinholeCamera& camera,
                                double median_depth, double min_depth = kDefaultMinDepth);

/// Compact form of the dense-point Jacobians for one keyframe.
///
///   dP_W^n / dP_W^m = ray_dir_n * anchor_coeff(n, m) * anchor_axis^T
///   dP_W^n / dxi    = direct_n + ray_dir_n * pose_chain.row(n)
///
/// where ray_dir_n = R ray_n z^n, anchor_coeff = cond(n, m) / z^m and
/// anchor_axis = R e_z.
struct DenseJacobianFactors {
  Eigen::Matrix3Xd ray_dir;
  Eigen::MatrixXd anchor_coeff;          // N x M
  Vec3 anchor_axis;                      // R e_z
  Eigen::Matrix<double, Eigen::Dynamic, 6> anchor_pose_rows;  // M x 6, d(d^m)/dxi
  Eigen::Matrix<double, Eigen::Dynamic, 6> pose_chain;        // N x 6
};

DenseJacobianFactors dense_jacobian_factors(const DenseGeometry& geometry, const SE3Pose& pose);

/// d(d^m)/dP_W^m and d(d^m)/dxi for an anchor at camera point `point_camera`.
Eigen::RowVector3d logdepth_jacobian_wrt_anchor(const Vec3& point_camera, const SE3Pose& pose);
Eigen::Matrix<double, 1, 6> logdepth_jacobian_wrt_pose(const Vec3& point_camera);
/// d(pixel)/dP_W^m and d(pixel)/dxi.
Mat23 pixel_jacobian_wrt_anchor(const Vec3& point_camera, const SE3Pose& pose, const PinholeCamera& camera);
Eigen::Matrix<double, 2, 6> pixel_jacobian_wrt_pose(const Vec3& point_camera, const PinholeCamera& camera);
/// d(R^T (P - t))/dxi under right perturbation.
Mat36 camera_point_jacobian_wrt_pose(const Vec3& point_camera);

/// Full 3N x 3M block Jacobian dP_W^n / dP_W^m (cond frozen).
Eigen::MatrixXd jacobian_dense_wrt_anchors(const DenseGeometry& geometry, const SE3Pose& pose);
/// Full 3N x 6 Jacobian dP_W^n / dxi for right-multiplied tangent perturbations.
Eigen::MatrixXd jacobian_dense_wrt_pose(const DenseGeometry& geometry, const SE3Pose& pose);

}  // namespace anchorvo
