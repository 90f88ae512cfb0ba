#include "anchorvo/photometric.hpp"

#include <algorithm>
#include <cmath>

#include "anchorvo/errors.hpp"

namespace anchorvo {

ImagePyramid ImagePyramid::build(const Image& image, int num_levels) {
  ImagePyramid pyr;
  pyr.levels.push_back(image);
  for (int l = 1; l < num_levels; ++l) pyr.levels.push_back(downsample_2x2(pyr.levels.back()));
  for (const Image& level : pyr.levels) pyr.gradients.push_back(scharr_gradients(level));
  return pyr;
}

std::vector<Vec2> sample_high_gradient_pixels(const ImageGradients& gradients, int patch) {
  const int w = gradients.gx.width();
  const int h = gradients.gx.height();
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>((w + patch - 1) / patch) * ((h + patch - 1) / patch));
  for (int py = 0; py < h; py += patch) {
    for (int px = 0; px < w; px += patch) {
      int best_x = px;
      int best_y = py;
      double best = -1.0;
      for (int y = py; y < std::min(py + patch, h); ++y) {
        for (int x = px; x < std::min(px + patch, w); ++x) {
          const double mag = gradients.gx(x, y) * gradients.gx(x, y) + gradients.gy(x, y) * gradients.gy(x, y);
          if (mag > best) {
            best = mag;
            best_x = x;
            best_y = y;
          }
        }
      }
      out.emplace_back(best_x, best_y);
    }
  }
  return out;
}

std::vector<Vec2> sample_high_gradient_pixels(const ImagePyramid& pyramid, int patch, int level) {
  return sample_high_gradient_pixels(pyramid.gradients.at(level), patch);
}

PhotometricResidual photometric_residual(const FrameView& reference, const FrameView& target,
                                         const PinholeCamera& camera, const DenseGeometry& geometry, Eigen::Index n,
                                         const PhotometricConfig& config) {
  PhotometricResidual out;
  out.target_point = target.pose.to_local(geometry.points_world.col(n));
  if (!(out.target_point.z() > config.min_depth)) return out;
  out.target_pixel = camera.project(out.target_point);
  const Image& target_image = target.pyramid->levels[0];
  if (!target_image.inside(out.target_pixel.x(), out.target_pixel.y(), config.border_margin)) return out;

  const Vec2& p_ref = geometry.query_pixels[n];
  out.reference_intensity = reference.pyramid->levels[0].bilinear(p_ref.x(), p_ref.y());
  const double target_intensity = target_image.bilinear(out.target_pixel.x(), out.target_pixel.y());
  out.target_gradient = target_image.bilinear_gradient(out.target_pixel.x(), out.target_pixel.y());
  out.gain = std::exp(target.affine.a - reference.affine.a);
  out.value = target_intensity + target.affine.b - (out.gain * out.reference_intensity + reference.affine.b);
  out.valid = true;
  return out;
}

CompactResidualJacobian compact_residual_jacobian(const FrameView& reference, const FrameView& target,
                                                  const PinholeCamera& camera, const DenseGeometry& geometry,
                                                  const DenseJacobianFactors& factors, Eigen::Index n,
                                                  const PhotometricResidual& residual) {
  CompactResidualJacobian j;
  const Eigen::RowVector3d image_to_point =
      residual.target_gradient.transpose() * camera.project_jacobian(residual.target_point);
  // d r / d P_W^n
  const Eigen::RowVector3d d_world = image_to_point * target.pose.rotation().transpose();
  j.pose_target = image_to_point * camera_point_jacobian_wrt_pose(residual.target_point);
  j.anchor_scale = d_world.dot(factors.ray_dir.col(n));

  const Mat3& r_ref = reference.pose.rotation();
  Eigen::Matrix<double, 1, 6> direct;
  direct.leftCols<3>() = d_world * r_ref;
  direct.rightCols<3>() = -d_world * r_ref * skew(geometry.points_camera.col(n));
  j.pose_reference = direct + j.anchor_scale * factors.pose_chain.row(n);

  j.affine_reference << residual.gain * residual.reference_intensity, -1.0;
  j.affine_target << -residual.gain * residual.reference_intensity, 1.0;
  return j;
}

ResidualJacobians residual_jacobians(const FrameView& reference, const FrameView& target, const PinholeCamera& camera,
                                     const DenseGeometry& geometry, Eigen::Index n, const PhotometricConfig& config) {
  const PhotometricResidual res = photometric_residual(reference, target, camera, geometry, n, config);
  const DenseJacobianFactors factors = dense_jacobian_factors(geometry, reference.pose);
  const CompactResidualJacobian c = compact_residual_jacobian(reference, target, camera, geometry, factors, n, res);
  ResidualJacobians out;
  const Eigen::Index m = geometry.num_anchors();
  out.anchors.resize(3 * m);
  if (res.valid) {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.anchors.segment<3>(3 * i) = c.anchor_scale * factors.anchor_coeff(n, i) * factors.anchor_axis.transpose();
    }
    out.pose_reference = c.pose_reference;
    out.pose_target = c.pose_target;
    out.affine_reference = c.affine_reference;
    out.affine_target = c.affine_target;
  } else {
    out.anchors.setZero();
    out.pose_reference.setZero();
    out.pose_target.setZero();
    out.affine_reference.setZero();
    out.affine_target.setZero();
  }
  return out;
}

double huber_weight(double residual, double sigma, double delta) {
  const double x = std::abs(residual) / sigma;
  return x <= delta ? 1.0 / (sigma * sigma) : delta / (x * sigma * sigma);
}

double huber_cost(double residual, double sigma, double delta) {
  const double x = std::abs(residual) / sigma;
  return x <= delta ? x * x : 2.0 * delta * x - delta * delta;
}

RobustWeights robust_weights(const Eigen::VectorXd& residuals, const std::vector<char>& valid,
                             const RobustConfig& config) {
  std::vector<double> abs_valid;
  abs_valid.reserve(residuals.size());
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    if (valid[i]) abs_valid.push_back(std::abs(residuals(i)));
  }
  if (abs_valid.empty()) throw DegenerateEdgeError("no valid residuals to estimate a robust scale from");

  const std::size_t k = abs_valid.size();
  auto mid = abs_valid.begin() + static_cast<std::ptrdiff_t>(k / 2);
  std::nth_element(abs_valid.begin(), mid, abs_valid.end());
  double median = *mid;
  if (k % 2 == 0) median = 0.5 * (median + *std::max_element(abs_valid.begin(), mid));

  RobustWeights out;
  out.sigma = std::max(config.mad_scale * median, config.sigma_min);
  out.weights.resize(residuals.size());
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    out.weights(i) = valid[i] ? huber_weight(residuals(i), out.sigma, config.huber_delta) : 0.0;
  }
  return out;
}

RobustWeights robust_weights(const Eigen::VectorXd& residuals, const RobustConfig& config) {
  return robust_weights(residuals, std::vector<char>(residuals.size(), 1), config);
}

}  // namespace anchorvo
