#include "anchorvo/eval.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "anchorvo/errors.hpp"

namespace anchorvo {

SimilarityAlignment align_trajectory_scale(std::span<const Vec3> estimate, std::span<const Vec3> reference) {
  if (estimate.size() != reference.size()) throw DimensionError("trajectory alignment needs paired positions");
  const auto n = static_cast<double>(estimate.size());
  if (estimate.size() < 3) throw InsufficientDataError("trajectory alignment needs at least three pose pairs");

  Vec3 mu_e = Vec3::Zero();
  Vec3 mu_r = Vec3::Zero();
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    mu_e += estimate[i];
    mu_r += reference[i];
  }
  mu_e /= n;
  mu_r /= n;
  Mat3 cov = Mat3::Zero();
  double var_e = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const Vec3 de = estimate[i] - mu_e;
    cov += (reference[i] - mu_r) * de.transpose();
    var_e += de.squaredNorm();
  }
  cov /= n;
  var_e /= n;

  SimilarityAlignment out;
  out.pairs = static_cast<int>(estimate.size());
  if (var_e < 1e-300) {
    out.translation = mu_r - mu_e;
  } else {
    const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
    out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    out.scale = (svd.singularValues().asDiagonal() * s).trace() / var_e;
    out.translation = mu_r - out.scale * out.rotation * mu_e;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) sq += (reference[i] - out.apply(estimate[i])).squaredNorm();
  out.ate_rmse = std::sqrt(sq / n);
  return out;
}

SimilarityAlignment align_trajectory_scale(std::span<const TimedPose> estimate, std::span<const TimedPose> reference,
                                           double tolerance) {
  std::vector<Vec3> est;
  std::vector<Vec3> ref;
  std::size_t j = 0;
  for (const TimedPose& e : estimate) {
    while (j < reference.size() && reference[j].timestamp < e.timestamp - tolerance) ++j;
    if (j < reference.size() && std::abs(reference[j].timestamp - e.timestamp) <= tolerance) {
      est.push_back(e.pose.translation());
      ref.push_back(reference[j].pose.translation());
    }
  }
  return align_trajectory_scale(est, ref);
}

void DepthAccumulator::add(double estimate, double reference) {
  const double diff = std::abs(estimate - reference);
  abs_rel_ += diff / reference;
  sq_ += diff * diff;
  abs_ += diff;
  const double ratio = std::max(estimate / reference, reference / estimate);
  for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k) {
    if (ratio < kDeltaThresholds[k]) ++within_[k];
  }
  ++count_;
}

DepthMetrics DepthAccumulator::result() const {
  if (count_ == 0) throw EmptyEvaluationError("no valid pixels to evaluate");
  DepthMetrics m;
  const auto n = static_cast<double>(count_);
  m.absrel = abs_rel_ / n;
  m.rmse = std::sqrt(sq_ / n);
  m.mae = abs_ / n;
  for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k) m.delta[k] = static_cast<double>(within_[k]) / n;
  m.count = count_;
  return m;
}

DepthMetrics depth_metrics(const Image& estimate, const Image& ground_truth, double scale) {
  if (estimate.width() != ground_truth.width() || estimate.height() != ground_truth.height()) {
    throw DimensionError("depth maps are not registered");
  }
  DepthAccumulator acc;
  for (int y = 0; y < estimate.height(); ++y) {
    for (int x = 0; x < estimate.width(); ++x) {
      const double e = estimate(x, y) * scale;
      const double g = ground_truth(x, y);
      if (e > 0.0 && g > 0.0 && std::isfinite(e)) acc.add(e, g);
    }
  }
  return acc.result();
}

namespace {

/// Bilinear depth lookup that refuses to mix in invalid neighbours.
bool sample_depth(const Image& depth, const Vec2& p, double& out) {
  if (!depth.inside(p.x(), p.y())) return false;
  const int x0 = std::min(static_cast<int>(p.x()), depth.width() - 2);
  const int y0 = std::min(static_cast<int>(p.y()), depth.height() - 2);
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      if (!(depth(x0 + dx, y0 + dy) > 0.0)) return false;
    }
  }
  out = depth.bilinear(p.x(), p.y());
  return true;
}

double median_positive(const Image& depth) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < depth.array().size(); ++i) {
    const double d = depth.array().data()[i];
    if (d > 0.0) v.push_back(d);
  }
  if (v.empty()) return 0.0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

void accumulate_direction(const ConsistencyFrame& a, const ConsistencyFrame& b, const PinholeCamera& camera,
                          double threshold, DepthAccumulator& acc) {
  const SE3Pose gt_ab = b.ground_truth_pose.inverse() * a.ground_truth_pose;
  const SE3Pose est_ab = b.estimated_pose.inverse() * a.estimated_pose;
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const double gt_a = a.ground_truth_depth(x, y);
      const double est_a = a.estimated_depth(x, y);
      if (!(gt_a > 0.0) || !(est_a > 0.0)) continue;
      const Vec3 q_gt = gt_ab * camera.unproject(Vec2(x, y), gt_a);
      if (!(q_gt.z() > 0.0)) continue;
      const Vec2 pb = camera.project(q_gt);
      double gt_b = 0.0;
      if (!sample_depth(b.ground_truth_depth, pb, gt_b) || std::abs(gt_b - q_gt.z()) >= threshold) continue;
      double est_b = 0.0;
      if (!sample_depth(b.estimated_depth, pb, est_b)) continue;
      const double z_ab = (est_ab * camera.unproject(Vec2(x, y), est_a)).z();
      if (!(z_ab > 0.0)) continue;
      acc.add(est_b, z_ab);
    }
  }
}

}  // namespace

DepthMetrics consistency_metrics(std::span<const ConsistencyFrame> frames, const PinholeCamera& camera,
                                 const ConsistencyConfig& config) {
  DepthAccumulator acc;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    const double thr_ab = config.agreement_fraction * median_positive(frames[i].ground_truth_depth);
    const double thr_ba = config.agreement_fraction * median_positive(frames[i + 1].ground_truth_depth);
    accumulate_direction(frames[i], frames[i + 1], camera, thr_ab, acc);
    accumulate_direction(frames[i + 1], frames[i], camera, thr_ba, acc);
  }
  return acc.result();
}

}  // namespace anchorvo
