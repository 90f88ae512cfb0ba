#include <cmath>

#include "anchorvo/se3.hpp"

namespace anchorvo {

namespace {

/// Below this angle the series expansions are exact to double precision.
constexpr double kSeriesAngle = 1e-4;

/// (1 - cos t) / t^2 without cancellation.
double one_minus_cos_over_sq(double theta) {
  const double s = std::sin(0.5 * theta) / (0.5 * theta);
  return 0.5 * s * s;
}

// V(omega) maps the translational tangent into the group translation.
Mat3 left_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < kSeriesAngle) return Mat3::Identity() + 0.5 * w + w * w / 6.0;
  return Mat3::Identity() + one_minus_cos_over_sq(theta) * w +
         (theta - std::sin(theta)) / (theta * theta * theta) * w * w;
}

Mat3 left_jacobian_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < kSeriesAngle) return Mat3::Identity() - 0.5 * w + w * w / 12.0;
  const double half = 0.5 * theta;
  const double coeff = (1.0 - half / std::tan(half)) / (theta * theta);
  return Mat3::Identity() - 0.5 * w + coeff * w * w;
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < kSeriesAngle) return Mat3::Identity() + w + 0.5 * w * w;
  return Mat3::Identity() + std::sin(theta) / theta * w + one_minus_cos_over_sq(theta) * w * w;
}

Vec3 so3_log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(Eigen::Quaterniond(rotation).normalized());
  Vec3 v = aa.angle() * aa.axis();
  if (aa.angle() > M_PI) v = (aa.angle() - 2.0 * M_PI) * aa.axis();
  return v;
}

Mat3 so3_right_jacobian_inverse(const Vec3& omega) { return left_jacobian_inverse(-omega); }

SE3Pose SE3Pose::exp(const Vec6& xi) {
  const Vec3 v = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  return {so3_exp(omega), left_jacobian(omega) * v};
}

SE3Pose SE3Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation) {
  return {q.normalized().toRotationMatrix(), translation};
}

Vec6 SE3Pose::log() const {
  const Vec3 omega = so3_log(rotation_);
  Vec6 xi;
  xi.head<3>() = left_jacobian_inverse(omega) * translation_;
  xi.tail<3>() = omega;
  return xi;
}

SE3Pose SE3Pose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -rt * translation_};
}

SE3Pose SE3Pose::normalized() const {
  return {Eigen::Quaterniond(rotation_).normalized().toRotationMatrix(), translation_};
}

Eigen::Quaterniond SE3Pose::quaternion() const {
  Eigen::Quaterniond q(rotation_);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

}  // namespace anchorvo
