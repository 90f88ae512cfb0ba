#include "anchorvo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "anchorvo/errors.hpp"

namespace anchorvo {

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DimensionError("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DimensionError("image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw DimensionError("principal point must lie inside the image");
  }
}

PinholeCamera PinholeCamera::at_level(int level) const {
  const double scale = 1.0 / static_cast<double>(1 << level);
  return {fx * scale, fy * scale, (cx + 0.5) * scale - 0.5, (cy + 0.5) * scale - 0.5, width >> level,
          height >> level};
}

PinholeCamera PinholeCamera::resized(int new_width, int new_height) const {
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  return {fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5, new_width, new_height};
}

AnchorProjection project_point(const SE3Pose& pose, const PinholeCamera& camera, const Vec3& point_world,
                               double min_depth) {
  AnchorProjection out;
  out.point_camera = pose.to_local(point_world);
  const double z = out.point_camera.z();
  out.in_front = z > min_depth;
  if (out.in_front) {
    out.pixel = camera.project(out.point_camera);
    out.logdepth = std::log(z);
  }
  return out;
}

AnchorProjection project_anchor(const SE3Pose& pose, const PinholeCamera& camera, const AnchorPoint& anchor,
                                double min_depth) {
  return project_point(pose, camera, anchor.position_world, min_depth);
}

DenseGeometry decode_dense(std::span<const Vec3> anchor_positions, const SE3Pose& pose,
                           const PinholeCamera& camera, std::shared_ptr<const Eigen::MatrixXd> cond,
                           std::span<const Vec2> query_pixels, int keyframe_id, double min_depth) {
  const auto m = static_cast<Eigen::Index>(anchor_positions.size());
  const auto n = static_cast<Eigen::Index>(query_pixels.size());
  if (cond->rows() != n || cond->cols() != m) {
    throw DimensionError("conditioning matrix is " + std::to_string(cond->rows()) + "x" +
                         std::to_string(cond->cols()) + ", expected " + std::to_string(n) + "x" + std::to_string(m));
  }
  DenseGeometry g;
  g.keyframe_id = keyframe_id;
  g.query_pixels.assign(query_pixels.begin(), query_pixels.end());
  g.cond = std::move(cond);
  g.anchor_points_camera.resize(3, m);
  g.anchor_logdepth.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vec3 pc = pose.to_local(anchor_positions[i]);
    if (!(pc.z() > min_depth)) {
      throw Error("anchor " + std::to_string(i) + " is behind keyframe " + std::to_string(keyframe_id) +
                  "; reset it before decoding");
    }
    g.anchor_points_camera.col(i) = pc;
    g.anchor_logdepth(i) = std::log(pc.z());
  }
  g.logdepth.noalias() = (*g.cond) * g.anchor_logdepth;
  g.points_camera.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) g.points_camera.col(i) = camera.unproject(query_pixels[i], std::exp(g.logdepth(i)));
  g.points_world = (pose.rotation() * g.points_camera).colwise() + pose.translation();
  return g;
}

double median_depth(const DenseGeometry& geometry) {
  if (geometry.logdepth.size() == 0) throw EmptyEvaluationError("median depth of an empty geometry");
  std::vector<double> d(geometry.logdepth.data(), geometry.logdepth.data() + geometry.logdepth.size());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return std::exp(*mid);
}

AnchorPoint reset_behind_camera(const AnchorPoint& anchor, const SE3Pose& host_pose, const PinholeCamera& camera,
                                double median_depth, double min_depth) {
  if (host_pose.to_local(anchor.position_world).z() > min_depth) return anchor;
  AnchorPoint out = anchor;
  out.position_world = host_pose * camera.unproject(anchor.host_pixel, median_depth);
  return out;
}

Mat36 camera_point_jacobian_wrt_pose(const Vec3& point_camera) {
  Mat36 j;
  j.leftCols<3>() = -Mat3::Identity();
  j.rightCols<3>() = skew(point_camera);
  return j;
}

Eigen::RowVector3d logdepth_jacobian_wrt_anchor(const Vec3& point_camera, const SE3Pose& pose) {
  return pose.rotation().col(2).transpose() / point_camera.z();
}

Eigen::Matrix<double, 1, 6> logdepth_jacobian_wrt_pose(const Vec3& point_camera) {
  Eigen::Matrix<double, 1, 6> j;
  j << 0.0, 0.0, -1.0, -point_camera.y(), point_camera.x(), 0.0;
  return j / point_camera.z();
}

Mat23 pixel_jacobian_wrt_anchor(const Vec3& point_camera, const SE3Pose& pose, const PinholeCamera& camera) {
  return camera.project_jacobian(point_camera) * pose.rotation().transpose();
}

Eigen::Matrix<double, 2, 6> pixel_jacobian_wrt_pose(const Vec3& point_camera, const PinholeCamera& camera) {
  return camera.project_jacobian(point_camera) * camera_point_jacobian_wrt_pose(point_camera);
}

DenseJacobianFactors dense_jacobian_factors(const DenseGeometry& geometry, const SE3Pose& pose) {
  const Eigen::Index m = geometry.num_anchors();
  DenseJacobianFactors f;
  // dP_W^n/dd^n = R P_C^n since P_C^n = ray_n exp(d^n).
  f.ray_dir = pose.rotation() * geometry.points_camera;
  const Eigen::ArrayXd inv_z = geometry.anchor_points_camera.row(2).transpose().array().inverse();
  f.anchor_coeff = (*geometry.cond) * inv_z.matrix().asDiagonal();
  f.anchor_axis = pose.rotation().col(2);
  f.anchor_pose_rows.resize(m, 6);
  for (Eigen::Index i = 0; i < m; ++i) {
    f.anchor_pose_rows.row(i) = logdepth_jacobian_wrt_pose(geometry.anchor_points_camera.col(i));
  }
  f.pose_chain.noalias() = (*geometry.cond) * f.anchor_pose_rows;
  return f;
}

Eigen::MatrixXd jacobian_dense_wrt_anchors(const DenseGeometry& geometry, const SE3Pose& pose) {
  const Eigen::Index n = geometry.num_queries();
  const Eigen::Index m = geometry.num_anchors();
  const DenseJacobianFactors f = dense_jacobian_factors(geometry, pose);
  Eigen::MatrixXd j(3 * n, 3 * m);
  for (Eigen::Index a = 0; a < n; ++a) {
    const Mat3 base = f.ray_dir.col(a) * f.anchor_axis.transpose();
    for (Eigen::Index b = 0; b < m; ++b) j.block<3, 3>(3 * a, 3 * b) = f.anchor_coeff(a, b) * base;
  }
  return j;
}

Eigen::MatrixXd jacobian_dense_wrt_pose(const DenseGeometry& geometry, const SE3Pose& pose) {
  const Eigen::Index n = geometry.num_queries();
  const DenseJacobianFactors f = dense_jacobian_factors(geometry, pose);
  Eigen::MatrixXd j(3 * n, 6);
  for (Eigen::Index a = 0; a < n; ++a) {
    Mat36 direct;
    direct.leftCols<3>() = pose.rotation();
    direct.rightCols<3>() = -pose.rotation() * skew(geometry.points_camera.col(a));
    j.block<3, 6>(3 * a, 0) = direct + f.ray_dir.col(a) * f.pose_chain.row(a);
  }
  return j;
}

}  // namespace anchorvo
