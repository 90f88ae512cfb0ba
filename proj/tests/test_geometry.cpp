#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "anchorvo/errors.hpp"
#include "anchorvo/geometry.hpp"
#include "test_support.hpp"

namespace anchorvo {
namespace {

using testing::make_geometry_fixture;
using testing::random_pose;
using testing::random_tangent;
using testing::random_vec3;
using testing::relative_error;

TEST(SE3, GroupAxioms) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const SE3Pose a = random_pose(rng, 1.0, 1.0);
    const SE3Pose b = random_pose(rng, 1.0, 1.0);
    const SE3Pose c = random_pose(rng, 1.0, 1.0);
    const SE3Pose ab_c = (a * b) * c;
    const SE3Pose a_bc = a * (b * c);
    EXPECT_LT((ab_c.rotation() - a_bc.rotation()).norm(), 1e-10);
    EXPECT_LT((ab_c.translation() - a_bc.translation()).norm(), 1e-10);
    const SE3Pose id = a * a.inverse();
    EXPECT_LT((id.rotation() - Mat3::Identity()).norm(), 1e-10);
    EXPECT_LT(id.translation().norm(), 1e-10);
    EXPECT_LT((a.rotation().transpose() * a.rotation() - Mat3::Identity()).norm(), 1e-10);
    EXPECT_NEAR(a.rotation().determinant(), 1.0, 1e-10);
  }
}

TEST(SE3, ExpLogRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vec6 xi = random_tangent(rng, 0.5);
    EXPECT_LT((SE3Pose::exp(xi).log() - xi).norm(), 1e-10);
  }
}

TEST(SE3, SmallAnglesStayFinite) {
  // Angles where 1 - cos(theta) rounds to zero.
  for (const double theta : {0.0, 1e-12, 1e-9, 1.5e-8, 3e-8, 1e-6, 1e-4, 1e-3}) {
    const Vec3 omega = Vec3(1.0, -2.0, 0.5).normalized() * theta;
    const Mat3 jr_inv = so3_right_jacobian_inverse(omega);
    ASSERT_TRUE(jr_inv.allFinite()) << theta;
    EXPECT_LT((jr_inv - (Mat3::Identity() + 0.5 * skew(omega))).norm(), 1e-6) << theta;
    Vec6 xi;
    xi << 0.1, 0.2, 0.3, omega;
    EXPECT_TRUE(SE3Pose::exp(xi).log().allFinite()) << theta;
    EXPECT_LT((SE3Pose::exp(xi).log() - xi).norm(), 1e-12) << theta;
  }
}

TEST(SE3, RightJacobianInverseMatchesFiniteDifferences) {
  // Log(R0^T R0 Exp(phi) Exp(d)) ~ phi + Jr^-1(phi) d.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 phi = random_vec3(rng, 0.7);
    const Mat3 analytic = so3_right_jacobian_inverse(phi);
    Mat3 numeric;
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      const Vec3 d = Vec3::Unit(k) * h;
      numeric.col(k) = (so3_log(so3_exp(phi) * so3_exp(d)) - so3_log(so3_exp(phi) * so3_exp(-d))) / (2.0 * h);
    }
    EXPECT_LT(relative_error(analytic, numeric), 1e-7);
  }
}

TEST(SE3, QuaternionOfQuarterTurn) {
  const SE3Pose p(so3_exp(Vec3(0.0, 0.0, std::numbers::pi / 2.0)), Vec3::Zero());
  const Eigen::Quaterniond q = p.quaternion();
  EXPECT_NEAR(q.x(), 0.0, 1e-12);
  EXPECT_NEAR(q.y(), 0.0, 1e-12);
  EXPECT_NEAR(q.z(), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(q.w(), std::sqrt(0.5), 1e-12);
}

TEST(Camera, ProjectUnprojectRoundTrip) {
  const PinholeCamera cam{200.0, 210.0, 127.5, 95.5, 256, 192};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> z(0.1, 5.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    EXPECT_LT((cam.unproject(cam.project(p), p.z()) - p).norm(), 1e-10);
  }
}

TEST(Camera, ValidationRejectsBadIntrinsics) {
  EXPECT_THROW((PinholeCamera{0.0, 1.0, 5.0, 5.0, 10, 10}.validate()), DimensionError);
  EXPECT_THROW((PinholeCamera{1.0, 1.0, 10.0, 5.0, 10, 10}.validate()), DimensionError);
  EXPECT_NO_THROW((PinholeCamera{1.0, 1.0, 5.0, 5.0, 10, 10}.validate()));
}

TEST(Camera, PyramidLevelKeepsPixelCentres) {
  const PinholeCamera cam{200.0, 200.0, 127.5, 95.5, 256, 192};
  const PinholeCamera half = cam.at_level(1);
  EXPECT_DOUBLE_EQ(half.fx, 100.0);
  EXPECT_DOUBLE_EQ(half.cx, 63.5);
  EXPECT_DOUBLE_EQ(half.cy, 47.5);
  EXPECT_EQ(half.width, 128);
  EXPECT_EQ(half.height, 96);
}

TEST(ProjectAnchor, OnAxisPoint) {
  const PinholeCamera cam{100.0, 100.0, 50.0, 50.0, 101, 101};
  AnchorPoint a;
  a.position_world = Vec3(0.0, 0.0, 1.0);
  AnchorProjection p = project_anchor(SE3Pose(), cam, a);
  EXPECT_TRUE(p.in_front);
  EXPECT_DOUBLE_EQ(p.pixel.x(), 50.0);
  EXPECT_DOUBLE_EQ(p.pixel.y(), 50.0);
  EXPECT_DOUBLE_EQ(p.logdepth, 0.0);
  a.position_world = Vec3(0.0, 0.0, std::exp(1.0));
  EXPECT_NEAR(project_anchor(SE3Pose(), cam, a).logdepth, 1.0, 1e-15);
  a.position_world = Vec3(0.0, 0.0, -1.0);
  EXPECT_FALSE(project_anchor(SE3Pose(), cam, a).in_front);
}

TEST(ProjectAnchor, MatchesIndependentComposition) {
  const PinholeCamera cam{180.0, 170.0, 60.0, 45.0, 120, 90};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const SE3Pose pose = random_pose(rng, 0.5, 0.4);
    AnchorPoint a;
    a.position_world = pose * Vec3(0.1 * i / 50.0, -0.2, 1.5);
    // Homogeneous-matrix route as the oracle.
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    t.topLeftCorner<3, 3>() = pose.rotation();
    t.topRightCorner<3, 1>() = pose.translation();
    const Eigen::Vector4d pc = t.inverse() * a.position_world.homogeneous();
    const AnchorProjection p = project_anchor(pose, cam, a);
    EXPECT_NEAR(p.pixel.x(), cam.fx * pc.x() / pc.z() + cam.cx, 1e-10);
    EXPECT_NEAR(p.pixel.y(), cam.fy * pc.y() / pc.z() + cam.cy, 1e-10);
    EXPECT_NEAR(p.logdepth, std::log(pc.z()), 1e-12);
  }
}

TEST(DecodeDense, InterpolatesAnchorsExactly) {
  std::mt19937_64 rng(6);
  auto f = make_geometry_fixture(rng, 12, 4);
  // Anchors spaced like the sampler spaces them; clustered anchors make
  // K_MM ill-conditioned and the jitter then dominates the error.
  f.anchor_pixels.clear();
  f.anchors_world.clear();
  for (int y = 6; y < 48; y += 14) {
    for (int x = 6; x < 64; x += 14) {
      f.anchor_pixels.emplace_back(x, y);
      f.anchors_world.push_back(f.pose * f.camera.unproject(Vec2(x, y), 1.0 + 0.05 * ((x + y) % 7)));
    }
  }
  f.query_pixels = f.anchor_pixels;
  const CovarianceMatrices cov = build_covariance(*f.model, f.model->gather(f.anchor_pixels),
                                                  f.model->gather(f.query_pixels), f.model->default_jitter());
  f.cond = std::make_shared<const Eigen::MatrixXd>(cov.cond);
  f.redecode();
  EXPECT_LT((f.geometry.logdepth - f.geometry.anchor_logdepth).cwiseAbs().maxCoeff(), 1e-6);
  // Backprojected dense points at anchor pixels reproduce the anchors.
  for (std::size_t i = 0; i < f.anchors_world.size(); ++i) {
    EXPECT_LT((f.geometry.points_world.col(static_cast<Eigen::Index>(i)) - f.anchors_world[i]).norm(), 1e-5);
  }
}

TEST(DecodeDense, SingleAnchorConstantFeatures) {
  const PinholeCamera cam = testing::small_camera();
  const CovarianceModel model = CovarianceModel::from_image(Image(cam.width, cam.height, 0.5), FeatureConfig{});
  const std::vector<Vec2> anchor_px{Vec2(30.0, 20.0)};
  const std::vector<Vec3> anchor{cam.unproject(anchor_px[0], 2.0)};
  const std::vector<Vec2> queries{Vec2(10.0, 10.0), Vec2(30.0, 20.0), Vec2(50.0, 40.0)};
  const CovarianceMatrices cov =
      build_covariance(model, model.gather(anchor_px), model.gather(queries), model.default_jitter());
  const DenseGeometry g = decode_dense(anchor, SE3Pose(), cam, cov, queries);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const double dp2 = (queries[i] - anchor_px[0]).squaredNorm();
    const double k = std::exp(-0.5 * dp2 / (24.0 * 24.0));
    EXPECT_NEAR(g.logdepth(static_cast<Eigen::Index>(i)), k / (1.0 + 1e-6) * std::log(2.0), 1e-12);
  }
}

TEST(DecodeDense, FrontoParallelPlaneImprovesWithMoreAnchors) {
  const PinholeCamera cam = testing::small_camera();
  std::mt19937_64 rng(7);
  const CovarianceModel model = CovarianceModel::from_image(testing::noise_image(cam.width, cam.height, 3), {});
  const auto queries = testing::random_pixels(rng, cam, 200, 4.0);
  auto max_deviation = [&](int m) {
    const auto px = testing::distinct_grid_pixels(rng, cam, m, 2);
    std::vector<Vec3> anchors;
    for (const Vec2& p : px) anchors.push_back(cam.unproject(p, 1.5));
    const CovarianceMatrices cov =
        build_covariance(model, model.gather(px), model.gather(queries), model.default_jitter());
    const DenseGeometry g = decode_dense(anchors, SE3Pose(), cam, cov, queries);
    return (g.points_camera.row(2).array() - 1.5).abs().maxCoeff();
  };
  const double sparse = max_deviation(4);
  const double dense = max_deviation(60);
  EXPECT_LT(dense, sparse);
  EXPECT_LT(dense, 0.3);
}

TEST(DecodeDense, RejectsAnchorBehindCamera) {
  std::mt19937_64 rng(8);
  auto f = make_geometry_fixture(rng, 4, 8);
  f.anchors_world[0] = f.pose * Vec3(0.0, 0.0, -1.0);
  EXPECT_THROW(f.redecode(), Error);
}

TEST(ResetBehindCamera, MovesOntoHostRay) {
  const PinholeCamera cam{100.0, 100.0, 50.0, 50.0, 101, 101};
  AnchorPoint a;
  a.host_pixel = Vec2(60.0, 40.0);
  a.position_world = Vec3(0.1, 0.0, -1.0);
  const AnchorPoint r = reset_behind_camera(a, SE3Pose(), cam, 2.0);
  EXPECT_NEAR(r.position_world.z(), 2.0, 1e-12);
  EXPECT_LT((cam.project(r.position_world) - a.host_pixel).norm(), 1e-12);

  a.position_world = Vec3(0.0, 0.0, kDefaultMinDepth / 2.0);
  EXPECT_NEAR(reset_behind_camera(a, SE3Pose(), cam, 2.0).position_world.z(), 2.0, 1e-12);

  a.position_world = Vec3(0.0, 0.0, 3.0);
  EXPECT_EQ(reset_behind_camera(a, SE3Pose(), cam, 2.0).position_world, a.position_world);
}

/// Central differences of the decoded world points with cond frozen.
Eigen::MatrixXd numeric_wrt_anchors(testing::GeometryFixture f, double h) {
  const Eigen::Index n = f.geometry.num_queries();
  const Eigen::Index m = f.geometry.num_anchors();
  Eigen::MatrixXd j(3 * n, 3 * m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (int k = 0; k < 3; ++k) {
      testing::GeometryFixture plus = f;
      testing::GeometryFixture minus = f;
      plus.anchors_world[a](k) += h;
      minus.anchors_world[a](k) -= h;
      plus.redecode();
      minus.redecode();
      const Eigen::MatrixXd d = (plus.geometry.points_world - minus.geometry.points_world) / (2.0 * h);
      j.col(3 * a + k) = Eigen::Map<const Eigen::VectorXd>(d.data(), 3 * n);
    }
  }
  return j;
}

Eigen::MatrixXd numeric_wrt_pose(const testing::GeometryFixture& f, double h) {
  const Eigen::Index n = f.geometry.num_queries();
  Eigen::MatrixXd j(3 * n, 6);
  for (int k = 0; k < 6; ++k) {
    testing::GeometryFixture plus = f;
    testing::GeometryFixture minus = f;
    plus.pose = f.pose.retract(Vec6::Unit(k) * h);
    minus.pose = f.pose.retract(-Vec6::Unit(k) * h);
    plus.redecode();
    minus.redecode();
    const Eigen::MatrixXd d = (plus.geometry.points_world - minus.geometry.points_world) / (2.0 * h);
    j.col(k) = Eigen::Map<const Eigen::VectorXd>(d.data(), 3 * n);
  }
  return j;
}

TEST(DenseJacobians, AnchorsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = make_geometry_fixture(rng, 4, 16);
    const Eigen::MatrixXd analytic = jacobian_dense_wrt_anchors(f.geometry, f.pose);
    EXPECT_LT(relative_error(analytic, numeric_wrt_anchors(f, 1e-6)), 1e-5) << trial;
  }
}

TEST(DenseJacobians, PoseMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = make_geometry_fixture(rng, 6, 16);
    const Eigen::MatrixXd analytic = jacobian_dense_wrt_pose(f.geometry, f.pose);
    EXPECT_LT(relative_error(analytic, numeric_wrt_pose(f, 1e-6)), 1e-5) << trial;
  }
}

TEST(DenseJacobians, AnchorAtItsOwnPixelActsOnTheRay) {
  // A query at the anchor pixel moves with the anchor's depth only: the block
  // is the projection onto the viewing ray (rank one, ray as its range).
  const PinholeCamera cam = testing::small_camera();
  const CovarianceModel model = CovarianceModel::from_image(testing::noise_image(cam.width, cam.height, 5), {});
  const std::vector<Vec2> px{Vec2(20.0, 30.0)};
  const std::vector<Vec3> anchor{cam.unproject(px[0], 1.7)};
  const CovarianceMatrices cov = build_covariance(model, model.gather(px), model.gather(px), 0.0);
  const DenseGeometry g = decode_dense(anchor, SE3Pose(), cam, cov, px);
  const Eigen::MatrixXd j = jacobian_dense_wrt_anchors(g, SE3Pose());
  const Vec3 ray = cam.ray(px[0]);
  const Eigen::Matrix3d expected = ray * Vec3::UnitZ().transpose();
  EXPECT_LT((j - expected).norm(), 1e-10);
}

TEST(DenseJacobians, DenseCouplingThroughCond) {
  std::mt19937_64 rng(11);
  const auto f = make_geometry_fixture(rng, 5, 12);
  const Eigen::MatrixXd j = jacobian_dense_wrt_anchors(f.geometry, f.pose);
  for (Eigen::Index n = 0; n < f.geometry.num_queries(); ++n) {
    for (Eigen::Index m = 0; m < f.geometry.num_anchors(); ++m) {
      const bool zero_block = j.block(3 * n, 3 * m, 3, 3).isZero(0.0);
      EXPECT_EQ(zero_block, (*f.cond)(n, m) == 0.0);
    }
  }
}

TEST(DenseJacobians, LogdepthAndPixelChains) {
  std::mt19937_64 rng(12);
  const PinholeCamera cam = testing::small_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const SE3Pose pose = random_pose(rng, 0.3, 0.2);
    const Vec3 pw = pose * Vec3(0.1, -0.05, 1.3) + random_vec3(rng, 0.05);
    auto logdepth = [&](const SE3Pose& p, const Vec3& x) { return std::log(p.to_local(x).z()); };
    auto pixel = [&](const SE3Pose& p, const Vec3& x) { return cam.project(p.to_local(x)); };
    const Vec3 pc = pose.to_local(pw);
    const double h = 1e-6;
    Eigen::RowVector3d num_anchor;
    Eigen::Matrix<double, 2, 3> num_pixel_anchor;
    for (int k = 0; k < 3; ++k) {
      const Vec3 d = Vec3::Unit(k) * h;
      num_anchor(k) = (logdepth(pose, pw + d) - logdepth(pose, pw - d)) / (2.0 * h);
      num_pixel_anchor.col(k) = (pixel(pose, pw + d) - pixel(pose, pw - d)) / (2.0 * h);
    }
    Eigen::Matrix<double, 1, 6> num_pose;
    Eigen::Matrix<double, 2, 6> num_pixel_pose;
    for (int k = 0; k < 6; ++k) {
      const SE3Pose plus = pose.retract(Vec6::Unit(k) * h);
      const SE3Pose minus = pose.retract(-Vec6::Unit(k) * h);
      num_pose(k) = (logdepth(plus, pw) - logdepth(minus, pw)) / (2.0 * h);
      num_pixel_pose.col(k) = (pixel(plus, pw) - pixel(minus, pw)) / (2.0 * h);
    }
    EXPECT_LT(relative_error(logdepth_jacobian_wrt_anchor(pc, pose), num_anchor), 1e-7);
    EXPECT_LT(relative_error(logdepth_jacobian_wrt_pose(pc), num_pose), 1e-7);
    EXPECT_LT(relative_error(pixel_jacobian_wrt_anchor(pc, pose, cam), num_pixel_anchor), 1e-7);
    EXPECT_LT(relative_error(pixel_jacobian_wrt_pose(pc, cam), num_pixel_pose), 1e-7);
  }
}

TEST(MedianDepth, OfDecodedGeometry) {
  std::mt19937_64 rng(13);
  const auto f = make_geometry_fixture(rng, 6, 31);
  std::vector<double> depths(f.geometry.logdepth.data(), f.geometry.logdepth.data() + f.geometry.logdepth.size());
  std::sort(depths.begin(), depths.end());
  EXPECT_NEAR(median_depth(f.geometry), std::exp(depths[15]), 1e-12);
}

}  // namespace
}  // namespace anchorvo
