#include "anchorvo/frontend.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "anchorvo/errors.hpp"

namespace anchorvo {

TrackingReference::TrackingReference(const ImagePyramid& pyramid, const SE3Pose& pose, const AffineBrightness& affine,
                                     const DenseGeometry& geometry, const PinholeCamera& camera, int num_levels,
                                     int keyframe_id)
    : pose_(pose), affine_(affine), keyframe_id_(keyframe_id) {
  const int levels = std::min(num_levels, pyramid.num_levels());
  const Eigen::Index n = geometry.num_queries();
  for (int l = 0; l < levels; ++l) {
    Level level;
    level.camera = camera.at_level(l);
    const Image& image = pyramid.levels[l];
    const ImageGradients& grad = pyramid.gradients[l];
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 p = geometry.points_camera.col(i);
      const Vec2 px = level.camera.project(p);
      if (p.z() > kDefaultMinDepth && image.inside(px.x(), px.y(), 1.0)) keep.push_back(i);
    }
    const auto k = static_cast<Eigen::Index>(keep.size());
    level.points.resize(3, k);
    level.intensity.resize(k);
    level.jacobian.resize(k, 6);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Vec3 p = geometry.points_camera.col(keep[j]);
      const Vec2 px = level.camera.project(p);
      level.points.col(j) = p;
      level.intensity(j) = image.bilinear(px.x(), px.y());
      const Eigen::RowVector2d g(grad.gx.bilinear(px.x(), px.y()), grad.gy.bilinear(px.x(), px.y()));
      const Eigen::RowVector3d gp = g * level.camera.project_jacobian(p);
      level.jacobian.block<1, 3>(j, 0) = gp;
      level.jacobian.block<1, 3>(j, 3) = -gp * skew(p);
    }
    levels_.push_back(std::move(level));
  }
}

namespace {

struct LevelResiduals {
  Eigen::VectorXd values;
  std::vector<char> valid;
  int num_valid = 0;
};

LevelResiduals level_residuals(const Image& image, const TrackingReference::Level& level, const SE3Pose& warp,
                               const AffineBrightness& reference_affine, const AffineBrightness& affine,
                               double margin) {
  const Eigen::Index n = level.points.cols();
  LevelResiduals out;
  out.values = Eigen::VectorXd::Zero(n);
  out.valid.assign(n, 0);
  const double gain = std::exp(affine.a - reference_affine.a);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 q = warp * Vec3(level.points.col(i));
    if (!(q.z() > kDefaultMinDepth)) continue;
    const Vec2 px = level.camera.project(q);
    if (!image.inside(px.x(), px.y(), margin)) continue;
    out.values(i) = image.bilinear(px.x(), px.y()) + affine.b - (gain * level.intensity(i) + reference_affine.b);
    out.valid[i] = 1;
    ++out.num_valid;
  }
  return out;
}

double mean_robust_cost(const LevelResiduals& r, double sigma, double delta) {
  if (r.num_valid == 0) return std::numeric_limits<double>::infinity();
  double cost = 0.0;
  for (Eigen::Index i = 0; i < r.values.size(); ++i) {
    if (r.valid[i]) cost += huber_cost(r.values(i), sigma, delta);
  }
  return cost / r.num_valid;
}

}  // namespace

TrackingState track_frame(const ImagePyramid& frame, const TrackingReference& reference, const TrackingState& init,
                          const TrackingConfig& config) {
  TrackingState state = init;
  state.reference_id = reference.keyframe_id();
  state.levels_used.clear();
  state.iterations = 0;

  // Warp maps reference-camera points into the tracked camera.
  SE3Pose warp = init.pose.inverse() * reference.pose();
  AffineBrightness affine = init.affine;
  const AffineBrightness& ref_affine = reference.affine();
  const int levels = std::min({reference.num_levels(), frame.num_levels(), config.num_levels});

  for (int l = levels - 1; l >= 0; --l) {
    const TrackingReference::Level& level = reference.level(l);
    const Image& image = frame.levels[l];
    const Eigen::Index n = level.points.cols();
    if (n == 0) throw TrackingLostError("reference has no points at pyramid level " + std::to_string(l));
    state.levels_used.push_back(l);
    const int budget = l < static_cast<int>(config.iterations.size()) ? config.iterations[l] : config.iterations.back();
    double lambda = 1e-4;

    for (int it = 0; it < budget; ++it) {
      const LevelResiduals res = level_residuals(image, level, warp, ref_affine, affine, config.border_margin);
      state.valid_fraction = static_cast<double>(res.num_valid) / static_cast<double>(n);
      if (state.valid_fraction < config.min_valid_fraction) {
        throw TrackingLostError("only " + std::to_string(res.num_valid) + " of " + std::to_string(n) +
                                " residuals valid at pyramid level " + std::to_string(l));
      }
      const RobustWeights robust = robust_weights(res.values, res.valid, config.robust);
      const double cost = mean_robust_cost(res, robust.sigma, config.robust.huber_delta);
      if (!std::isfinite(cost)) throw TrackingLostError("non-finite tracking cost");
      state.final_cost = cost;

      const double gain = std::exp(affine.a - ref_affine.a);
      Eigen::Matrix<double, 8, 8> h = Eigen::Matrix<double, 8, 8>::Zero();
      Eigen::Matrix<double, 8, 1> b = Eigen::Matrix<double, 8, 1>::Zero();
      Eigen::Matrix<double, 8, 1> j;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!res.valid[i]) continue;
        j.head<6>() = -gain * level.jacobian.row(i).transpose();
        j(6) = -gain * level.intensity(i);
        j(7) = 1.0;
        const double w = robust.weights(i);
        h.noalias() += w * j * j.transpose();
        b.noalias() -= w * res.values(i) * j;
      }

      bool accepted = false;
      Eigen::Matrix<double, 8, 1> delta;
      for (int attempt = 0; attempt <= config.max_rejections; ++attempt) {
        Eigen::Matrix<double, 8, 8> damped = h;
        damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
        delta = damped.ldlt().solve(b);
        if (!delta.allFinite()) {
          lambda *= 10.0;
          continue;
        }
        const SE3Pose trial_warp = (warp * SE3Pose::exp(-delta.head<6>())).normalized();
        const AffineBrightness trial_affine{affine.a + delta(6), affine.b + delta(7)};
        const LevelResiduals trial =
            level_residuals(image, level, trial_warp, ref_affine, trial_affine, config.border_margin);
        const double trial_cost = mean_robust_cost(trial, robust.sigma, config.robust.huber_delta);
        if (trial_cost < cost &&
            static_cast<double>(trial.num_valid) >= config.min_valid_fraction * static_cast<double>(n)) {
          warp = trial_warp;
          affine = trial_affine;
          state.final_cost = trial_cost;
          lambda *= 0.5;
          accepted = true;
          break;
        }
        lambda *= 10.0;
      }
      ++state.iterations;
      if (!accepted || delta.lpNorm<Eigen::Infinity>() < config.convergence) break;
    }
  }

  if (!std::isfinite(state.final_cost)) throw TrackingLostError("non-finite tracking cost");
  state.pose = (reference.pose() * warp.inverse()).normalized();
  state.affine = affine;
  return state;
}

SE3Pose predict_constant_velocity(const SE3Pose& previous, const SE3Pose& before_previous) {
  return (previous * (before_previous.inverse() * previous)).normalized();
}

MotionStats motion_stats(const DenseGeometry& keyframe_geometry, const SE3Pose& keyframe_pose,
                         const SE3Pose& frame_pose, const PinholeCamera& camera) {
  MotionStats out;
  const Eigen::Index n = keyframe_geometry.num_queries();
  if (n == 0) throw EmptyEvaluationError("keyframe geometry has no dense points");
  const SE3Pose relative = keyframe_pose.inverse() * frame_pose;
  out.translation_ratio = relative.translation().norm() / median_depth(keyframe_geometry);

  std::set<std::pair<int, int>> unique;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 q = frame_pose.to_local(keyframe_geometry.points_world.col(i));
    if (!(q.z() > kDefaultMinDepth)) continue;
    const Vec2 px = camera.project(q);
    const int x = static_cast<int>(std::lround(px.x()));
    const int y = static_cast<int>(std::lround(px.y()));
    if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) continue;
    unique.emplace(x, y);
  }
  out.overlap = static_cast<double>(unique.size()) / static_cast<double>(n);
  return out;
}

FrameDecision decide_keyframe(const MotionStats& current, double translation_since_insert, double overlap_at_insert,
                              int supports_in_gap, const KeyframePolicy& policy) {
  if (current.translation_ratio > policy.translation_threshold || current.overlap < policy.overlap_threshold) {
    return FrameDecision::kKeyframe;
  }
  if (supports_in_gap >= policy.max_support_per_gap) return FrameDecision::kRegular;
  if (translation_since_insert > policy.support_scale * policy.translation_threshold ||
      overlap_at_insert - current.overlap > policy.support_scale * (1.0 - policy.overlap_threshold)) {
    return FrameDecision::kSupport;
  }
  return FrameDecision::kRegular;
}

DepthObservations project_observations(const Eigen::Matrix3Xd& points_world, const SE3Pose& pose,
                                       const PinholeCamera& camera, int cell, double border) {
  std::map<std::pair<int, int>, std::pair<double, Vec2>> nearest;  // (cy, cx) -> (z, pixel)
  for (Eigen::Index i = 0; i < points_world.cols(); ++i) {
    const Vec3 q = pose.to_local(points_world.col(i));
    if (!(q.z() > kDefaultMinDepth)) continue;
    const Vec2 px = camera.project(q);
    if (!camera.in_image(px, border)) continue;
    const std::pair<int, int> key{static_cast<int>(px.y()) / cell, static_cast<int>(px.x()) / cell};
    const auto it = nearest.find(key);
    if (it == nearest.end() || q.z() < it->second.first) nearest[key] = {q.z(), px};
  }
  DepthObservations out;
  out.logdepth.resize(static_cast<Eigen::Index>(nearest.size()));
  Eigen::Index k = 0;
  for (const auto& [key, value] : nearest) {
    out.pixels.push_back(value.second);
    out.logdepth(k++) = std::log(value.first);
  }
  return out;
}

CompressionResult compress_dense_to_sparse(const CovarianceModel& model, std::span<const Vec2> observation_pixels,
                                           const Eigen::VectorXd& observation_logdepth,
                                           std::span<const Vec2> anchor_pixels, double sigma_d, double jitter,
                                           double sigma_min) {
  if (observation_pixels.empty()) throw EmptyVisibilityError("no dense observations project into the keyframe");
  if (anchor_pixels.empty()) throw EmptyVisibilityError("no anchors project into the keyframe");
  const PixelFeatureSet anchors = model.gather(anchor_pixels);
  const PixelFeatureSet queries = model.gather(observation_pixels);
  const CovarianceMatrices cov = build_covariance(model, anchors, queries, jitter);
  const Eigen::Index m = cov.kmm.rows();
  const Eigen::MatrixXd kmm = cov.kmm + cov.jitter * Eigen::MatrixXd::Identity(m, m);

  const double inv_var = 1.0 / (sigma_d * sigma_d);
  const Eigen::MatrixXd a = inv_var * cov.knm.transpose() * cov.knm + kmm;
  const Eigen::VectorXd rhs = inv_var * cov.knm.transpose() * observation_logdepth;
  const Eigen::VectorXd alpha = a.ldlt().solve(rhs);

  CompressionResult out;
  out.anchor_logdepth = kmm * alpha;
  out.residuals = cov.knm * alpha - observation_logdepth;
  const double mean = out.residuals.mean();
  const double var = (out.residuals.array() - mean).square().mean();
  out.sigma = std::max(std::sqrt(var), sigma_min);
  return out;
}

VisibilityReport check_visibility(std::span<const int> candidate_ids, const Eigen::VectorXd& candidate_logdepth,
                                  const CompressionResult& compression, double threshold) {
  VisibilityReport out;
  out.compressed_logdepth = compression.anchor_logdepth;
  out.residual_sigma = compression.sigma;
  for (std::size_t i = 0; i < candidate_ids.size(); ++i) {
    const double diff = std::abs(candidate_logdepth(static_cast<Eigen::Index>(i)) -
                                 compression.anchor_logdepth(static_cast<Eigen::Index>(i)));
    if (diff < threshold) {
      out.matched_anchor_ids.push_back(candidate_ids[i]);
      out.matched_index.push_back(static_cast<int>(i));
    } else {
      out.rejected_anchor_ids.push_back(candidate_ids[i]);
      out.rejected_discrepancy.push_back(diff);
    }
  }
  return out;
}

std::vector<int> cvr_sample(const CovarianceModel& model, std::span<const Vec2> existing, std::span<const Vec2> domain,
                            const CvrConfig& config, double jitter) {
  const auto e = static_cast<Eigen::Index>(existing.size());
  const auto d = static_cast<Eigen::Index>(domain.size());
  const Eigen::Index rows = e + d;
  std::vector<Vec2> all(existing.begin(), existing.end());
  all.insert(all.end(), domain.begin(), domain.end());
  const PixelFeatureSet features = model.gather(all);

  Eigen::VectorXd variance(rows);
  for (Eigen::Index i = 0; i < rows; ++i) variance(i) = model.eval(features[i], features[i]);
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(rows, e + config.max_selections);
  std::vector<char> pivoted(rows, 0);
  Eigen::Index rank = 0;

  // Adds row p to the conditioning set with one incremental Cholesky column.
  auto condition_on = [&](Eigen::Index p) {
    const double diag = std::sqrt(std::max(variance(p), 0.0) + jitter);
    const PixelFeatureSet pivot{features.pixels.col(p), features.features.col(p)};
    const Eigen::VectorXd k = model.matrix(features, pivot).col(0);
    Eigen::VectorXd column = k - chol.leftCols(rank) * chol.row(p).head(rank).transpose();
    column /= diag;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (pivoted[i]) column(i) = 0.0;
    }
    column(p) = diag;
    chol.col(rank++) = column;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!pivoted[i] && i != p) variance(i) -= column(i) * column(i);
    }
    pivoted[p] = 1;
  };

  const int width = model.feature_map().width();
  const int height = model.feature_map().height();
  std::vector<char> admissible(d, 1);
  const double min_dist2 = config.min_dist * config.min_dist;
  auto exclude_near = [&](const Vec2& q) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (admissible[j] && (domain[j] - q).squaredNorm() < min_dist2) admissible[j] = 0;
    }
  };
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vec2& p = domain[j];
    if (p.x() < config.border || p.y() < config.border || p.x() > width - 1 - config.border ||
        p.y() > height - 1 - config.border) {
      admissible[j] = 0;
    }
  }
  for (Eigen::Index i = 0; i < e; ++i) {
    condition_on(i);
    exclude_near(existing[i]);
  }

  const double tie = kCvrTieTolerance * model.signal_variance();
  std::vector<int> selected;
  while (static_cast<int>(selected.size()) < config.max_selections) {
    double best_var = -1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (admissible[j]) best_var = std::max(best_var, std::max(variance(e + j), 0.0));
    }
    if (best_var < 0.0 || best_var < config.variance_threshold) break;
    Eigen::Index best = 0;
    while (!admissible[best] || std::max(variance(e + best), 0.0) < best_var - tie) ++best;
    selected.push_back(static_cast<int>(best));
    admissible[best] = 0;
    exclude_near(domain[best]);
    condition_on(e + best);
  }
  return selected;
}

Eigen::VectorXd solve_new_anchor_logdepths(const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                                           const Eigen::VectorXd& d1, const Eigen::VectorXd& dn, double prior_logdepth,
                                           double sigma_d, double sigma_s) {
  const Eigen::Index m2 = c2.cols();
  const double wd = 1.0 / (sigma_d * sigma_d);
  const double ws = 1.0 / (sigma_s * sigma_s);
  Eigen::VectorXd target = dn;
  if (c1.cols() > 0) target -= c1 * d1;
  const Eigen::MatrixXd a = wd * c2.transpose() * c2 + ws * Eigen::MatrixXd::Identity(m2, m2);
  const Eigen::VectorXd rhs = wd * c2.transpose() * target + Eigen::VectorXd::Constant(m2, ws * prior_logdepth);
  return a.ldlt().solve(rhs);
}

AnchorInitResult initialize_new_anchors(const CovarianceModel& model, std::span<const Vec2> matched_pixels,
                                        const Eigen::VectorXd& matched_logdepth, std::span<const Vec2> new_pixels,
                                        const DepthObservations& observations, double prior_logdepth, double sigma_d,
                                        double sigma_s, double jitter, const SE3Pose& pose,
                                        const PinholeCamera& camera) {
  AnchorInitResult out;
  const auto m1 = static_cast<Eigen::Index>(matched_pixels.size());
  const auto m2 = static_cast<Eigen::Index>(new_pixels.size());
  if (m2 == 0) return out;
  if (observations.pixels.empty()) {
    out.logdepth = Eigen::VectorXd::Constant(m2, prior_logdepth);
  } else {
    std::vector<Vec2> all(matched_pixels.begin(), matched_pixels.end());
    all.insert(all.end(), new_pixels.begin(), new_pixels.end());
    const CovarianceMatrices cov = build_covariance(model, model.gather(all), model.gather(observations.pixels), jitter);
    out.logdepth = solve_new_anchor_logdepths(cov.cond.leftCols(m1), cov.cond.rightCols(m2), matched_logdepth,
                                              observations.logdepth, prior_logdepth, sigma_d, sigma_s);
  }
  for (Eigen::Index i = 0; i < m2; ++i) {
    out.points_world.push_back(pose * camera.unproject(new_pixels[i], std::exp(out.logdepth(i))));
  }
  return out;
}

}  // namespace anchorvo
