#include <gtest/gtest.h>

#include <Eigen/LU>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "anchorvo/errors.hpp"
#include "anchorvo/io.hpp"
#include "anchorvo/synth.hpp"
#include "test_support.hpp"

namespace anchorvo {
namespace {

namespace fs = std::filesystem;

SyntheticScene single_plane(double z) {
  SyntheticScene scene;
  scene.camera = {100.0, 100.0, 50.0, 40.0, 101, 81};
  PlanePrimitive p;
  p.center = Vec3(0.0, 0.0, z);
  p.normal = Vec3(0.0, 0.0, -1.0);
  p.axis_u = Vec3::UnitX();
  scene.primitives.push_back(p);
  return scene;
}

/// Nearest hit solved as a 3 x 3 system in (t, u, v) per primitive.
double oracle_depth(const SyntheticScene& scene, const SE3Pose& pose, const Vec2& pixel) {
  const Vec3 d = pose.rotation() * scene.camera.ray(pixel);
  const Vec3 o = pose.translation();
  double best = std::numeric_limits<double>::infinity();
  for (const PlanePrimitive& p : scene.primitives) {
    Mat3 a;
    a.col(0) = d;
    a.col(1) = -p.axis_u;
    a.col(2) = -p.axis_v();
    if (std::abs(a.determinant()) < 1e-12) continue;
    const Vec3 tuv = a.partialPivLu().solve(p.center - o);
    if (tuv(0) <= 0.0) continue;
    if (p.half_u > 0.0 && std::abs(tuv(1)) > p.half_u) continue;
    if (p.half_v > 0.0 && std::abs(tuv(2)) > p.half_v) continue;
    best = std::min(best, tuv(0));
  }
  return std::isfinite(best) ? best : 0.0;
}

TEST(Render, FrontoParallelOnAxisDepth) {
  const SyntheticScene scene = single_plane(2.0);
  EXPECT_EQ(render_depth_at(scene, SE3Pose(), scene.camera, Vec2(50.0, 40.0)), 2.0);
  const RenderedFrame frame = render_frame(scene, SE3Pose(), scene.camera);
  EXPECT_EQ(frame.depth(50, 40), 2.0);
  // z-depth, not range: constant over a fronto-parallel plane.
  EXPECT_NEAR(frame.depth(0, 0), 2.0, 1e-14);
}

TEST(Render, MissGivesInvalidSentinel) {
  SyntheticScene scene = single_plane(2.0);
  scene.primitives[0].half_u = 0.1;
  scene.primitives[0].half_v = 0.1;
  const RenderedFrame frame = render_frame(scene, SE3Pose(), scene.camera);
  EXPECT_EQ(frame.depth(0, 0), 0.0);
  EXPECT_EQ(frame.image(0, 0), 0.0);
  EXPECT_GT(frame.depth(50, 40), 0.0);
  // Looking away from the plane.
  const SE3Pose back(so3_exp(Vec3(0.0, std::numbers::pi, 0.0)), Vec3::Zero());
  EXPECT_EQ(render_depth_at(scene, back, scene.camera, Vec2(50.0, 40.0)), 0.0);
}

TEST(Render, DepthMatchesAnalyticIntersection) {
  std::mt19937_64 rng(1);
  const SyntheticScene scene = two_plane_scene(0, 60);
  int foreground = 0;
  for (int f = 0; f < 60; f += 7) {
    const SE3Pose& pose = scene.trajectory[f];
    for (const Vec2& p : testing::random_pixels(rng, scene.camera, 300, 0.0)) {
      const double depth = render_depth_at(scene, pose, scene.camera, p);
      const double oracle = oracle_depth(scene, pose, p);
      ASSERT_GT(oracle, 0.0);
      EXPECT_LE(std::abs(depth - oracle), 1e-12 * oracle);
      if (depth < 1.0) ++foreground;
    }
  }
  // The sample must exercise the occlusion, not only the background.
  EXPECT_GT(foreground, 100);
}

TEST(Render, NearestHitAtOverlap) {
  const SyntheticScene scene = two_plane_scene(0, 3);
  const SE3Pose& pose = scene.trajectory[1];
  const Vec2 centre(scene.camera.cx, scene.camera.cy);
  const Vec3 d = pose.rotation() * scene.camera.ray(centre);
  const auto fg = scene.primitives[1].intersect(pose.translation(), d);
  const auto bg = scene.primitives[0].intersect(pose.translation(), d);
  ASSERT_TRUE(fg && bg);
  ASSERT_LT(*fg, *bg);
  EXPECT_EQ(render_depth_at(scene, pose, scene.camera, centre), *fg);
}

TEST(Render, BoxFacesAreClosed) {
  SyntheticScene scene;
  scene.camera = {80.0, 80.0, 31.5, 23.5, 64, 48};
  const auto faces = box_faces(Vec3(-1.5, -1.5, 2.0), Vec3(1.5, 1.5, 3.0), {3, 0.1, 3}, 0.6, 0.5);
  ASSERT_EQ(faces.size(), 6u);
  scene.primitives = faces;
  // The near face is at z = 2 and covers the whole view.
  const RenderedFrame frame = render_frame(scene, SE3Pose(), scene.camera);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) EXPECT_NEAR(frame.depth(x, y), 2.0, 1e-12);
  }
  // From inside, every ray hits a face.
  const SE3Pose inside(Mat3::Identity(), Vec3(0.0, 0.0, 2.5));
  const RenderedFrame in = render_frame(scene, inside, scene.camera);
  EXPECT_GT(in.depth.array().minCoeff(), 0.0);
}

TEST(Render, Deterministic) {
  const SyntheticScene scene = two_plane_scene(4, 2);
  const RenderedFrame a = render_frame(scene, scene.trajectory[1], scene.camera);
  const RenderedFrame b = render_frame(two_plane_scene(4, 2), scene.trajectory[1], scene.camera);
  EXPECT_TRUE((a.image.array() == b.image.array()).all());
  EXPECT_TRUE((a.depth.array() == b.depth.array()).all());
  const RenderedFrame c = render_frame(two_plane_scene(5, 2), scene.trajectory[1], scene.camera);
  EXPECT_FALSE((a.image.array() == c.image.array()).all());
}

TEST(Texture, ValueNoiseRangeAndContinuity) {
  const ValueNoise noise{9, 0.05, 3};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng);
    const double b = u(rng);
    const double v = noise(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(noise(a + 1e-9, b), v, 1e-6);
  }
}

/// Coverage and texture over every frame of a scene.
void expect_renderable(const SyntheticScene& scene, int stride) {
  for (std::size_t f = 0; f < scene.trajectory.size(); f += stride) {
    const RenderedFrame frame = render_frame(scene, scene.trajectory[f], scene.camera);
    const double covered = (frame.depth.array() > 0.0).cast<double>().mean();
    EXPECT_GE(covered, 0.3) << f;
    int patches = 0;
    int textured = 0;
    for (int py = 0; py + 4 <= frame.image.height(); py += 4) {
      for (int px = 0; px + 4 <= frame.image.width(); px += 4) {
        double g = 0.0;
        for (int y = py; y < py + 4; ++y) {
          for (int x = px; x + 1 < px + 4; ++x) g = std::max(g, std::abs(frame.image(x + 1, y) - frame.image(x, y)));
        }
        for (int y = py; y + 1 < py + 4; ++y) {
          for (int x = px; x < px + 4; ++x) g = std::max(g, std::abs(frame.image(x, y + 1) - frame.image(x, y)));
        }
        ++patches;
        // A quarter of one 8-bit grey level.
        if (g > 1e-3) ++textured;
      }
    }
    EXPECT_GE(static_cast<double>(textured) / patches, 0.9) << f;
  }
}

TEST(Scene, TwoPlaneCoverageAndTexture) { expect_renderable(two_plane_scene(0, 60), 11); }

TEST(Scene, ConfigFileMatchesBuiltIn) {
  const SyntheticScene file = load_scene(fs::path(ANCHORVO_SOURCE_DIR) / "configs" / "two_plane.ini");
  const SyntheticScene built = two_plane_scene(0, 60);
  ASSERT_EQ(file.trajectory.size(), built.trajectory.size());
  ASSERT_EQ(file.primitives.size(), 2u);
  for (std::size_t i = 0; i < built.trajectory.size(); ++i) {
    EXPECT_LT((file.trajectory[i].rotation() - built.trajectory[i].rotation()).norm(), 1e-12);
    EXPECT_LT((file.trajectory[i].translation() - built.trajectory[i].translation()).norm(), 1e-12);
    EXPECT_NEAR(file.timestamps[i], built.timestamps[i], 1e-15);
  }
  const RenderedFrame a = render_frame(file, file.trajectory[30], file.camera);
  const RenderedFrame b = render_frame(built, built.trajectory[30], built.camera);
  EXPECT_LT((a.depth.array() - b.depth.array()).abs().maxCoeff(), 1e-12);
  expect_renderable(file, 29);
}

TEST(Scene, TrajectoryGenerators) {
  const auto sweep = lateral_sweep(11, 0.4, 0.05, 0.01);
  ASSERT_EQ(sweep.size(), 11u);
  EXPECT_NEAR((sweep.back().translation() - sweep.front().translation()).x(), 0.4, 1e-12);
  const auto line = straight_line(5, Vec3(0.0, 0.0, 2.0), 1.0, 0.0, 3);
  EXPECT_LT((line[4].translation() - Vec3(0.0, 0.0, 1.0)).norm(), 1e-12);
  EXPECT_EQ(straight_line(5, Vec3::UnitX(), 1.0, 0.01, 3)[2].translation(),
            straight_line(5, Vec3::UnitX(), 1.0, 0.01, 3)[2].translation());
  // Every arc pose looks at the circle centre.
  const auto arc = circular_arc(7, 1.5, 0.6);
  for (const SE3Pose& p : arc) {
    const Vec3 axis = p.rotation() * Vec3::UnitZ();
    const Vec3 to_centre = (Vec3(0.0, 0.0, 1.5) - p.translation()).normalized();
    EXPECT_NEAR(axis.dot(to_centre), 1.0, 1e-12);
  }
}

TEST(Scene, LoadErrors) {
  const fs::path dir = fs::temp_directory_path() / "anchorvo_test_scene";
  fs::create_directories(dir);
  EXPECT_THROW(load_scene(dir / "missing.ini"), InputError);
  {
    std::ofstream out(dir / "empty.ini");
    out << "[camera]\nfx=100\nfy=100\ncx=31.5\ncy=23.5\nwidth=64\nheight=48\n[trajectory]\ntype=line\n";
  }
  EXPECT_THROW(load_scene(dir / "empty.ini"), InputError);
  {
    std::ofstream out(dir / "bad.ini");
    out << "[camera]\nfx=100\nfy=100\ncx=31.5\ncy=23.5\nwidth=64\nheight=48\n[trajectory]\ntype=spiral\n"
           "[plane_a]\ncenter=0 0 1\nnormal=0 0 -1\n";
  }
  EXPECT_THROW(load_scene(dir / "bad.ini"), InputError);
  fs::remove_all(dir);
}

TEST(Scene, WriteDatasetRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "anchorvo_test_dataset";
  fs::remove_all(dir);
  SyntheticScene scene = two_plane_scene(1, 3);
  scene.camera = scene.camera.resized(64, 48);
  write_dataset(scene, dir);
  const Dataset ds = load_dataset(dir, 64, 48);
  ASSERT_EQ(ds.images.size(), 3u);
  ASSERT_EQ(ds.depths.size(), 3u);
  ASSERT_EQ(ds.groundtruth.size(), 3u);
  const RenderedFrame frame = render_frame(scene, scene.trajectory[2], scene.camera);
  // 16-bit quantization of intensity and depth.
  EXPECT_LT((ds.images[2].array() - frame.image.array()).abs().maxCoeff(), 1.0 / 65535.0);
  EXPECT_LT((ds.depths[2].array() - frame.depth.array()).abs().maxCoeff(), 0.5 / kDepthPngScale + 1e-12);
  EXPECT_NEAR(ds.timestamps[1], 1.0 / 30.0, 1e-6);
  EXPECT_LT((ds.groundtruth[2].pose.translation() - scene.trajectory[2].translation()).norm(), 1e-6);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace anchorvo
