#pragma once

#include "anchorvo/se3.hpp"

namespace anchorvo {

/// Pinhole intrinsics with pixel-centre convention (pixel (0,0) is the centre
/// of the top-left pixel).
struct PinholeCamera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws DimensionError when the intrinsics are not usable.
  void validate() const;

  [[nodiscard]] Vec2 project(const Vec3& point) const {
    return {fx * point.x() / point.z() + cx, fy * point.y() / point.z() + cy};
  }
  /// Ray through `pixel` with unit z.
  [[nodiscard]] Vec3 ray(const Vec2& pixel) const { return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0}; }
  [[nodiscard]] Vec3 unproject(const Vec2& pixel, double depth) const { return ray(pixel) * depth; }

  /// d(project)/d(point).
  [[nodiscard]] Mat23 project_jacobian(const Vec3& point) const {
    const double iz = 1.0 / point.z();
    Mat23 j;
    j << fx * iz, 0.0, -fx * point.x() * iz * iz, 0.0, fy * iz, -fy * point.y() * iz * iz;
    return j;
  }

  [[nodiscard]] bool in_image(const Vec2& pixel, double margin = 0.0) const {
    return pixel.x() >= margin && pixel.y() >= margin && pixel.x() <= width - 1 - margin &&
           pixel.y() <= height - 1 - margin;
  }

  /// Intrinsics of pyramid level `level` (each level halves the resolution).
  [[nodiscard]] PinholeCamera at_level(int level) const;
  /// Intrinsics after resizing the image to `new_width` x `new_height`.
  [[nodiscard]] PinholeCamera resized(int new_width, int new_height) const;
};

}  // namespace anchorvo
