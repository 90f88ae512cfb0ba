#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace anchorvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

Mat3 skew(const Vec3& v);

/// Rodrigues exponential of a rotation vector.
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& rotation);
/// Inverse of the right Jacobian of SO(3).
Mat3 so3_right_jacobian_inverse(const Vec3& omega);

/// Rigid transform T_WC mapping camera coordinates into the world frame.
///
/// Tangent vectors are ordered (translation, rotation) and applied on the
/// right: `pose.retract(xi) == pose * SE3Pose::exp(xi)`.
class SE3Pose {
 public:
  SE3Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  SE3Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {}

  static SE3Pose exp(const Vec6& xi);
  static SE3Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation);

  [[nodiscard]] Vec6 log() const;
  [[nodiscard]] SE3Pose inverse() const;
  [[nodiscard]] SE3Pose retract(const Vec6& xi) const { return *this * exp(xi); }
  /// Re-projects the rotation onto SO(3).
  [[nodiscard]] SE3Pose normalized() const;

  SE3Pose operator*(const SE3Pose& other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
  }
  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  /// R^T (p - t): world point expressed in this frame.
  [[nodiscard]] Vec3 to_local(const Vec3& world_point) const {
    return rotation_.transpose() * (world_point - translation_);
  }

  [[nodiscard]] const Mat3& rotation() const { return rotation_; }
  [[nodiscard]] const Vec3& translation() const { return translation_; }
  [[nodiscard]] Eigen::Quaterniond quaternion() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

}  // namespace anchorvo
