#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "anchorvo/errors.hpp"
#include "anchorvo/eval.hpp"
#include "anchorvo/synth.hpp"
#include "test_support.hpp"

namespace anchorvo {
namespace {

std::vector<Vec3> random_path(std::mt19937_64& rng, int n) {
  std::vector<Vec3> out;
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    p += testing::random_vec3(rng, 0.1);
    out.push_back(p);
  }
  return out;
}

TEST(Align, IdentityGivesUnitScaleAndZeroError) {
  std::mt19937_64 rng(1);
  const auto path = random_path(rng, 20);
  const SimilarityAlignment a = align_trajectory_scale(path, path);
  EXPECT_NEAR(a.scale, 1.0, 1e-12);
  EXPECT_LT(a.ate_rmse, 1e-12);
  EXPECT_LT((a.rotation - Mat3::Identity()).norm(), 1e-12);
  EXPECT_EQ(a.pairs, 20);
}

TEST(Align, ExactSimilarityIsRecovered) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto reference = random_path(rng, 15);
    const SE3Pose motion = testing::random_pose(rng, 2.0, 3.0);
    std::vector<Vec3> estimate;
    for (const Vec3& p : reference) estimate.push_back(motion * (2.0 * p));
    // The alignment maps the estimate onto the reference, so it undoes x2.
    const SimilarityAlignment a = align_trajectory_scale(estimate, reference);
    EXPECT_NEAR(a.scale, 0.5, 1e-12);
    EXPECT_LT(a.ate_rmse, 1e-10);
    EXPECT_LT((a.rotation - motion.rotation().transpose()).norm(), 1e-10);
    EXPECT_NEAR(a.rotation.determinant(), 1.0, 1e-12);
  }
}

TEST(Align, ReflectionIsNotAllowed) {
  std::mt19937_64 rng(3);
  const auto reference = random_path(rng, 30);
  std::vector<Vec3> mirrored;
  for (const Vec3& p : reference) mirrored.emplace_back(-p.x(), p.y(), p.z());
  const SimilarityAlignment a = align_trajectory_scale(mirrored, reference);
  EXPECT_NEAR(a.rotation.determinant(), 1.0, 1e-12);
  EXPECT_GT(a.ate_rmse, 1e-3);
}

TEST(Align, NoiseMatchesMonteCarloExpectation) {
  // With i.i.d. N(0, s^2) noise per coordinate, the residual after fitting 7
  // parameters has E[ATE^2] = s^2 (3N - 7) / N to first order.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int n = 400;
  const double sigma = 0.01;
  double mean_sq = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto reference = random_path(rng, n);
    std::vector<Vec3> estimate;
    double raw = 0.0;
    for (const Vec3& p : reference) {
      const Vec3 e = sigma * Vec3(noise(rng), noise(rng), noise(rng));
      estimate.push_back(p + e);
      raw += e.squaredNorm();
    }
    const SimilarityAlignment a = align_trajectory_scale(estimate, reference);
    EXPECT_LE(a.ate_rmse, std::sqrt(raw / n));
    mean_sq += a.ate_rmse * a.ate_rmse / trials;
  }
  const double expected = sigma * sigma * (3.0 * n - 7.0) / n;
  // Standard error of the mean of a chi-square with ~3N dof over 200 trials.
  EXPECT_NEAR(mean_sq / expected, 1.0, 4.0 * std::sqrt(2.0 / (3.0 * n * trials)) + 2e-3);
}

TEST(Align, TooFewPairs) {
  const std::vector<Vec3> two{Vec3::Zero(), Vec3::UnitX()};
  EXPECT_THROW(align_trajectory_scale(two, two), InsufficientDataError);
}

TEST(Align, PairsByTimestamp) {
  std::mt19937_64 rng(5);
  const auto path = random_path(rng, 10);
  std::vector<TimedPose> reference;
  std::vector<TimedPose> estimate;
  for (int i = 0; i < 10; ++i) {
    reference.push_back({0.1 * i, SE3Pose(Mat3::Identity(), path[i])});
    // Every other estimate, with a timestamp jitter inside the tolerance.
    if (i % 2 == 0) estimate.push_back({0.1 * i + 2e-5, SE3Pose(Mat3::Identity(), 3.0 * path[i])});
  }
  estimate.push_back({5.0, SE3Pose()});  // no partner
  const SimilarityAlignment a = align_trajectory_scale(estimate, reference);
  EXPECT_EQ(a.pairs, 5);
  EXPECT_NEAR(a.scale, 1.0 / 3.0, 1e-12);
  EXPECT_LT(a.ate_rmse, 1e-12);
  const std::vector<TimedPose> lone(estimate.begin(), estimate.begin() + 2);
  EXPECT_THROW(align_trajectory_scale(lone, reference), InsufficientDataError);
}

Image constant(int w, int h, double v) { return Image(w, h, v); }

TEST(DepthMetrics, ExactEstimate) {
  const Image gt = testing::noise_image(20, 10, 6);
  Image g = gt;
  g.array() += 0.5;
  const DepthMetrics m = depth_metrics(g, g);
  EXPECT_EQ(m.absrel, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  for (const double d : m.delta) EXPECT_EQ(d, 1.0);
  EXPECT_EQ(m.count, 200);
}

TEST(DepthMetrics, UniformScaleError) {
  const Image gt = constant(10, 10, 2.0);
  // Just inside the 1.05 boundary, since the ratio test is strict.
  const double factor = 1.05 * 0.9999;
  const DepthMetrics m = depth_metrics(constant(10, 10, 2.0 * factor), gt);
  EXPECT_NEAR(m.absrel, factor - 1.0, 1e-12);
  EXPECT_NEAR(m.mae, 2.0 * (factor - 1.0), 1e-12);
  EXPECT_NEAR(m.rmse, 2.0 * (factor - 1.0), 1e-12);
  EXPECT_EQ(m.delta[0], 0.0);
  EXPECT_EQ(m.delta[1], 1.0);
  // Just outside it.
  EXPECT_EQ(depth_metrics(constant(10, 10, 2.0 * 1.05 * 1.0001), gt).delta[1], 0.0);
}

TEST(DepthMetrics, HalfExactHalfDouble) {
  Image est = constant(8, 4, 1.5);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 8; ++x) est(x, y) = 3.0;
  }
  const DepthMetrics m = depth_metrics(est, constant(8, 4, 1.5));
  EXPECT_NEAR(m.absrel, 0.5, 1e-15);
  EXPECT_NEAR(m.mae, 0.75, 1e-15);
  EXPECT_NEAR(m.rmse, std::sqrt(0.5 * 1.5 * 1.5), 1e-15);
  EXPECT_EQ(m.delta[3], 0.5);
  EXPECT_EQ(m.delta[5], 0.5);  // 2 > 1.25^3 = 1.953
}

TEST(DepthMetrics, ScaleAndValidity) {
  Image est = constant(4, 4, 0.5);
  Image gt = constant(4, 4, 1.0);
  est(0, 0) = 0.0;
  gt(1, 0) = 0.0;
  est(2, 0) = std::nan("");
  const DepthMetrics m = depth_metrics(est, gt, 2.0);
  EXPECT_EQ(m.count, 13);
  EXPECT_EQ(m.absrel, 0.0);
  EXPECT_THROW(depth_metrics(constant(4, 4, 0.0), gt), EmptyEvaluationError);
  EXPECT_THROW(depth_metrics(constant(4, 3, 1.0), gt), DimensionError);
}

TEST(DepthMetrics, DeltaFractionsMonotone) {
  std::mt19937_64 rng(7);
  std::lognormal_distribution<double> ratio(0.0, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    Image est(30, 20);
    Image gt(30, 20);
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 30; ++x) {
        gt(x, y) = 1.0 + 0.1 * x;
        est(x, y) = gt(x, y) * ratio(rng);
      }
    }
    const DepthMetrics m = depth_metrics(est, gt);
    for (std::size_t k = 0; k < m.delta.size(); ++k) {
      EXPECT_GE(m.delta[k], 0.0);
      EXPECT_LE(m.delta[k], 1.0);
      if (k > 0) EXPECT_GE(m.delta[k], m.delta[k - 1]);
    }
  }
}

/// Fronto-parallel plane at depth 2 seen from two laterally offset poses.
std::vector<ConsistencyFrame> lateral_pair(const PinholeCamera& camera, double b_factor) {
  std::vector<ConsistencyFrame> frames(2);
  for (int i = 0; i < 2; ++i) {
    frames[i].ground_truth_depth = Image(camera.width, camera.height, 2.0);
    frames[i].estimated_depth = frames[i].ground_truth_depth;
    frames[i].ground_truth_pose = SE3Pose(Mat3::Identity(), Vec3(0.2 * i, 0.0, 0.0));
    frames[i].estimated_pose = frames[i].ground_truth_pose;
  }
  frames[1].estimated_depth.array() *= b_factor;
  return frames;
}

TEST(Consistency, ExactEstimatesGiveZero) {
  const SyntheticScene scene = two_plane_scene(0, 30);
  const PinholeCamera cam = scene.camera.resized(64, 48);
  std::vector<ConsistencyFrame> frames;
  for (int f = 0; f < 30; f += 10) {
    const RenderedFrame r = render_frame(scene, scene.trajectory[f], cam);
    frames.push_back({r.depth, r.depth, scene.trajectory[f], scene.trajectory[f]});
  }
  const DepthMetrics m = consistency_metrics(frames, cam);
  // z-depth is not bilinear in the pixel on a tilted plane; only lookup error remains.
  EXPECT_LT(m.absrel, 1e-4);
  EXPECT_GT(m.count, 64 * 48);
  const PinholeCamera small = testing::small_camera();
  EXPECT_LT(consistency_metrics(lateral_pair(small, 1.0), small).absrel, 1e-14);
}

TEST(Consistency, ScaledSecondFrame) {
  const PinholeCamera cam = testing::small_camera();
  const DepthMetrics m = consistency_metrics(lateral_pair(cam, 1.1), cam);
  // Forward pairs see |1.1 z - z| / z = 0.1; backward pairs |z - 1.1 z| / 1.1 z = 1/11.
  EXPECT_GE(m.absrel, 1.0 / 11.0 - 1e-12);
  EXPECT_LE(m.absrel, 0.1 + 1e-12);
  EXPECT_NEAR(m.absrel, 0.5 * (0.1 + 1.0 / 11.0), 2e-3);
}

TEST(Consistency, IgnoresAccuracy) {
  // A common scale on depths and baseline leaves consistency untouched.
  const PinholeCamera cam = testing::small_camera();
  auto frames = lateral_pair(cam, 1.0);
  for (auto& f : frames) {
    f.estimated_depth.array() *= 3.0;
    f.estimated_pose = SE3Pose(f.estimated_pose.rotation(), 3.0 * f.estimated_pose.translation());
  }
  EXPECT_LT(consistency_metrics(frames, cam).absrel, 1e-12);
}

TEST(Consistency, InvariantToGlobalRigidMotion) {
  std::mt19937_64 rng(8);
  const SyntheticScene scene = two_plane_scene(1, 20);
  const PinholeCamera cam = scene.camera.resized(64, 48);
  std::vector<ConsistencyFrame> frames;
  for (int f = 0; f < 20; f += 9) {
    const RenderedFrame r = render_frame(scene, scene.trajectory[f], cam);
    Image est = r.depth;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 64; ++x) est(x, y) *= 1.0 + 0.05 * std::sin(0.3 * x + f);
    }
    const SE3Pose wobble = scene.trajectory[f] * SE3Pose::exp(testing::random_tangent(rng, 0.01));
    frames.push_back({est, r.depth, wobble, scene.trajectory[f]});
  }
  const DepthMetrics base = consistency_metrics(frames, cam);
  const SE3Pose g = testing::random_pose(rng, 1.0, 1.0);
  for (auto& f : frames) {
    f.estimated_pose = g * f.estimated_pose;
    f.ground_truth_pose = g * f.ground_truth_pose;
  }
  const DepthMetrics moved = consistency_metrics(frames, cam);
  EXPECT_GT(base.absrel, 1e-3);
  EXPECT_NEAR(moved.absrel, base.absrel, 1e-12);
  EXPECT_EQ(moved.count, base.count);
}

TEST(Consistency, GroundTruthDisagreementIsExcluded) {
  const PinholeCamera cam = testing::small_camera();
  auto frames = lateral_pair(cam, 1.1);
  // The second view sees something nearer: no correspondence survives the check.
  frames[1].ground_truth_depth.array() = 1.0;
  EXPECT_THROW(consistency_metrics(frames, cam), EmptyEvaluationError);
}

}  // namespace
}  // namespace anchorvo
