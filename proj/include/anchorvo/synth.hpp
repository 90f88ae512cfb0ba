#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/image.hpp"
#include "anchorvo/se3.hpp"

namespace anchorvo {

/// Value-noise texture: `octaves` layers of quintic-interpolated lattice noise,
/// frequency doubling and amplitude halving per octave. Output in [0, 1].
struct ValueNoise {
  std::uint64_t seed = 1;
  double cell = 0.05;  // lattice spacing of the coarsest octave, scene units
  int octaves = 3;

  [[nodiscard]] double operator()(double u, double v) const;
};

/// Textured rectangle; a non-positive half extent makes that axis unbounded.
struct PlanePrimitive {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 axis_u = Vec3::UnitX();  // in-plane, orthogonal to normal
  double half_u = 0.0;
  double half_v = 0.0;
  ValueNoise texture;
  double albedo = 0.6;
  double contrast = 0.8;

  [[nodiscard]] Vec3 axis_v() const { return normal.cross(axis_u); }
  /// Ray parameter t of o + t d on the primitive, if hit with t > 0.
  [[nodiscard]] std::optional<double> intersect(const Vec3& origin, const Vec3& direction) const;
  [[nodiscard]] double albedo_at(const Vec3& point) const;
};

/// Axis-aligned box expanded into its six faces.
std::vector<PlanePrimitive> box_faces(const Vec3& min_corner, const Vec3& max_corner, const ValueNoise& texture,
                                      double albedo, double contrast);

struct SyntheticScene {
  std::vector<PlanePrimitive> primitives;
  PinholeCamera camera;
  std::vector<double> timestamps;
  std::vector<SE3Pose> trajectory;  // T_WC
  Vec3 light_direction = Vec3(0.3, -0.4, -1.0).normalized();  // direction light travels
  double ambient = 0.35;
  int supersample = 2;
};

struct RenderedFrame {
  Image image;  // intensity in [0, 1]
  Image depth;  // z-depth, 0 where no primitive is hit
};

/// Nearest-hit ray casting. Depth is sampled at pixel centres; intensity is
/// the mean of `supersample` x `supersample` Lambertian-shaded sub-samples.
RenderedFrame render_frame(const SyntheticScene& scene, const SE3Pose& pose, const PinholeCamera& camera);

/// z-depth of the nearest primitive along the ray through `pixel`, or 0.
double render_depth_at(const SyntheticScene& scene, const SE3Pose& pose, const PinholeCamera& camera,
                       const Vec2& pixel);

/// Camera translating along +x over `length`, with a sinusoidal yaw of
/// `yaw_amplitude` radians and a small vertical bob.
std::vector<SE3Pose> lateral_sweep(int frames, double length, double yaw_amplitude, double bob = 0.0);
/// Straight segment along `direction` with seeded i.i.d. positional jitter.
std::vector<SE3Pose> straight_line(int frames, const Vec3& direction, double length, double jitter,
                                   std::uint64_t seed);
/// Arc of `angle` radians on a circle of `radius` around a point ahead of
/// the camera, looking at the centre.
std::vector<SE3Pose> circular_arc(int frames, double radius, double angle);

/// Foreground plane in front of a textured background plane, viewed by a
/// 256 x 192 camera sweeping sideways. `seed` changes the textures.
SyntheticScene two_plane_scene(std::uint64_t seed, int frames = 60);

/// Scene description in INI form: [camera], [trajectory], [render] and one
/// section per primitive named plane_<k> or box_<k>. `seed_offset` is added
/// to every texture seed.
SyntheticScene load_scene(const std::filesystem::path& path, std::uint64_t seed_offset = 0);

/// Writes the scene as a dataset directory (rgb/, depth/, calib.txt,
/// timestamps.txt, groundtruth.txt).
void write_dataset(const SyntheticScene& scene, const std::filesystem::path& directory);

}  // namespace anchorvo
