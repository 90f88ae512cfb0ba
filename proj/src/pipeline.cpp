#include "anchorvo/pipeline.hpp"

#include <json.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "anchorvo/backend.hpp"
#include "anchorvo/errors.hpp"
#include "anchorvo/frontend.hpp"

namespace anchorvo {

namespace fs = std::filesystem;

Sequence sequence_from_dataset(Dataset dataset) {
  Sequence seq;
  seq.camera = dataset.camera;
  seq.timestamps = std::move(dataset.timestamps);
  seq.images = std::move(dataset.images);
  seq.groundtruth = std::move(dataset.groundtruth);
  seq.depths = std::move(dataset.depths);
  return seq;
}

Sequence sequence_from_scene(const SyntheticScene& scene, int width, int height) {
  Sequence seq;
  seq.camera = scene.camera.resized(width, height);
  seq.timestamps = scene.timestamps;
  const bool native = scene.camera.width == width && scene.camera.height == height;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    RenderedFrame f = render_frame(scene, scene.trajectory[i], scene.camera);
    seq.images.push_back(native ? std::move(f.image) : resize_area(f.image, width, height));
    seq.depths.push_back(native ? std::move(f.depth) : resize_nearest(f.depth, width, height));
    seq.groundtruth.push_back({scene.timestamps[i], scene.trajectory[i]});
  }
  return seq;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

enum class FrameRole { kRegular, kSupport, kKeyframe };

struct FrameState {
  FrameRole role = FrameRole::kRegular;
  int reference_keyframe = -1;
  SE3Pose relative;  // T_kf^-1 T_f for regular frames
  AffineBrightness affine;
  std::optional<SE3Pose> final_pose;  // set once the frame leaves the window
};

class Runner {
 public:
  Runner(const Sequence& sequence, const PipelineConfig& config, std::ostream* log)
      : seq_(sequence), cfg_(config), camera_(sequence.camera), log_(log), sigma_d_(config.bootstrap_sigma_d) {
    policy_ = cfg_.keyframes;
    policy_.max_support_per_gap = cfg_.support_per_gap;
  }

  RunResult run() {
    if (seq_.images.empty()) throw InputError("sequence has no frames");
    cfg_.validate();
    camera_.validate();
    frames_.resize(seq_.images.size());
    for (std::size_t i = 0; i < seq_.images.size(); ++i) {
      const int index = static_cast<int>(i);
      try {
        process(index);
      } catch (const TrackingLostError& e) {
        result_.tracking_lost = true;
        result_.status = std::string("tracking lost at frame ") + std::to_string(index) + ": " + e.what();
        say(result_.status);
        break;
      }
      result_.frames_processed = index + 1;
    }
    finalize();
    return std::move(result_);
  }

 private:
  void say(const std::string& line) {
    if (log_) *log_ << line << '\n';
  }

  std::shared_ptr<const ImagePyramid> pyramid(int index) const {
    return std::make_shared<const ImagePyramid>(
        ImagePyramid::build(seq_.images[index], std::max(cfg_.tracking.num_levels, 1)));
  }

  /// Current best estimate of a processed frame's pose.
  SE3Pose current_pose(int index) const {
    const FrameState& f = frames_[index];
    if (f.final_pose) return *f.final_pose;
    if (const Frame* w = window_.find_frame(index)) return w->pose;
    return current_pose(f.reference_keyframe) * f.relative;
  }

  void process(int index) {
    auto pyr = pyramid(index);
    if (index == 0) {
      const auto start = Clock::now();
      add_keyframe(index, pyr, SE3Pose(), AffineBrightness{});
      result_.timings.keyframe_creation += seconds_since(start);
      refresh_reference();
      last_inserted_pose_ = SE3Pose();
      overlap_at_insert_ = 1.0;
      return;
    }

    TrackingState init;
    init.pose = index >= 2 ? predict_constant_velocity(current_pose(index - 1), current_pose(index - 2))
                           : current_pose(index - 1);
    init.affine = frames_[index - 1].affine;
    if (const Frame* prev = window_.find_frame(index - 1)) init.affine = prev->affine;

    auto start = Clock::now();
    const TrackingState tracked = track_frame(*pyr, *reference_, init, cfg_.tracking);
    result_.timings.tracking += seconds_since(start);

    const Keyframe& newest = window_.keyframes.back();
    const MotionStats stats = motion_stats(newest_geometry_, newest.frame.pose, tracked.pose, camera_);
    const double since_insert = (last_inserted_pose_.inverse() * tracked.pose).translation().norm() /
                                median_depth(newest_geometry_);
    const FrameDecision decision = decide_keyframe(stats, since_insert, overlap_at_insert_, supports_in_gap_, policy_);

    FrameState& state = frames_[index];
    state.affine = tracked.affine;
    state.reference_keyframe = newest.id();
    state.relative = newest.frame.pose.inverse() * tracked.pose;

    if (decision == FrameDecision::kRegular) return;
    char stats_text[96];
    std::snprintf(stats_text, sizeof(stats_text), " (translation %.4f, overlap %.3f)", stats.translation_ratio,
                  stats.overlap);

    if (decision == FrameDecision::kKeyframe) {
      start = Clock::now();
      if (static_cast<int>(window_.keyframes.size()) >= cfg_.max_keyframes) marginalize();
      add_keyframe(index, pyr, tracked.pose, tracked.affine);
      result_.timings.keyframe_creation += seconds_since(start);
      supports_in_gap_ = 0;
      say("frame " + std::to_string(index) + ": keyframe with " +
          std::to_string(window_.keyframes.back().anchor_ids.size()) + " anchors" + stats_text);
    } else {
      if (window_.num_frames() >= cfg_.max_frames && !window_.support_frames.empty()) {
        archive_support(window_.support_frames.front());
        window_.support_frames.erase(window_.support_frames.begin());
      }
      state.role = FrameRole::kSupport;
      window_.support_frames.push_back({index, seq_.timestamps[index], pyr, tracked.pose, tracked.affine});
      ++supports_in_gap_;
      result_.support_frames.push_back(index);
      say("frame " + std::to_string(index) + ": support frame" + stats_text);
    }

    if (decision == FrameDecision::kKeyframe || cfg_.optimize_on_support) optimize();
    refresh_reference();
    last_inserted_pose_ = window_.find_frame(index)->pose;
    overlap_at_insert_ = decision == FrameDecision::kKeyframe ? 1.0 : stats.overlap;
  }

  void optimize() {
    const auto start = Clock::now();
    std::function<void(const SlidingWindow&)> hook;
    if (cfg_.check_anchoring) {
      hook = [this](const SlidingWindow& w) {
        result_.max_anchor_interpolation_error =
            std::max(result_.max_anchor_interpolation_error, max_anchor_interpolation_error(w, camera_));
      };
    }
    try {
      const OptimizationReport report = optimize_window(window_, camera_, cfg_.backend, hook);
      result_.optimizer_iterations += report.iterations;
    } catch (const SingularSystemError& e) {
      say(std::string("optimizer skipped: ") + e.what());
    }
    result_.timings.optimization += seconds_since(start);
  }

  void refresh_reference() {
    const Keyframe& k = window_.keyframes.back();
    const std::vector<Vec3> positions = window_.anchor_positions(k);
    newest_geometry_ = decode_dense(positions, k.frame.pose, camera_, k.cond, k.query_pixels, k.id());
    reference_.emplace(*k.frame.pyramid, k.frame.pose, k.frame.affine, newest_geometry_, camera_,
                       cfg_.tracking.num_levels, k.id());
  }

  void add_keyframe(int index, std::shared_ptr<const ImagePyramid> pyr, const SE3Pose& pose,
                    const AffineBrightness& affine) {
    auto model = std::make_shared<const CovarianceModel>(CovarianceModel::from_image(pyr->levels[0], cfg_.kernel));
    const double jitter = model->default_jitter();
    Keyframe kf;
    kf.frame = {index, seq_.timestamps[index], pyr, pose, affine};
    kf.query_pixels = sample_high_gradient_pixels(*pyr, cfg_.gradient_patch);

    CvrConfig cvr{cfg_.cvr_variance_fraction * cfg_.kernel.signal_variance, cfg_.cvr_min_dist, cfg_.cvr_border,
                  cfg_.max_anchors};
    std::vector<int> kept_ids;
    std::vector<Vec2> kept_pixels;
    std::vector<double> kept_logdepth;
    std::vector<Vec2> new_pixels;
    Eigen::VectorXd new_logdepth;
    std::vector<Vec3> new_points;
    double prior_logdepth = std::log(cfg_.initial_depth);

    if (window_.keyframes.empty()) {
      for (const int j : cvr_sample(*model, {}, kf.query_pixels, cvr, jitter)) new_pixels.push_back(kf.query_pixels[j]);
      new_logdepth = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(new_pixels.size()), prior_logdepth);
      for (const Vec2& p : new_pixels) new_points.push_back(pose * camera_.unproject(p, cfg_.initial_depth));
    } else {
      prior_logdepth = std::log(median_depth(newest_geometry_));
      const DepthObservations obs =
          project_observations(newest_geometry_.points_world, pose, camera_, cfg_.observation_cell);
      double sigma_d = sigma_d_;

      if (cfg_.anchor_sharing && !obs.pixels.empty()) {
        std::vector<int> cand_ids;
        std::vector<Vec2> cand_pixels;
        std::vector<double> cand_logdepth;
        for (const auto& [id, anchor] : window_.anchors) {
          const AnchorProjection proj = project_anchor(pose, camera_, anchor);
          if (!proj.in_front || !camera_.in_image(proj.pixel)) continue;
          cand_ids.push_back(id);
          cand_pixels.push_back(proj.pixel);
          cand_logdepth.push_back(proj.logdepth);
        }
        if (!cand_ids.empty()) {
          const CompressionResult comp =
              compress_dense_to_sparse(*model, obs.pixels, obs.logdepth, cand_pixels, sigma_d_, jitter);
          sigma_d_ = comp.sigma;
          sigma_d = comp.sigma;
          const Eigen::Map<const Eigen::VectorXd> cand_d(cand_logdepth.data(),
                                                         static_cast<Eigen::Index>(cand_logdepth.size()));
          const VisibilityReport vis = check_visibility(cand_ids, cand_d, comp, cfg_.visibility_threshold);
          std::vector<Vec2> matched_pixels;
          for (const int m : vis.matched_index) matched_pixels.push_back(cand_pixels[m]);
          for (const int j : cvr_sample(*model, {}, matched_pixels, cvr, jitter)) {
            const int m = vis.matched_index[j];
            kept_ids.push_back(cand_ids[m]);
            kept_pixels.push_back(cand_pixels[m]);
            kept_logdepth.push_back(cand_logdepth[m]);
          }
          say("keyframe " + std::to_string(index) + ": " + std::to_string(cand_ids.size()) + " candidates, " +
              std::to_string(vis.matched_anchor_ids.size()) + " matched, " + std::to_string(kept_ids.size()) +
              " kept, sigma_d " + std::to_string(comp.sigma));
        }
      }

      CvrConfig fresh = cvr;
      fresh.max_selections = cfg_.max_anchors - static_cast<int>(kept_ids.size());
      if (fresh.max_selections > 0) {
        for (const int j : cvr_sample(*model, kept_pixels, kf.query_pixels, fresh, jitter)) {
          new_pixels.push_back(kf.query_pixels[j]);
        }
      }
      const Eigen::Map<const Eigen::VectorXd> d1(kept_logdepth.data(), static_cast<Eigen::Index>(kept_logdepth.size()));
      const AnchorInitResult init = initialize_new_anchors(*model, kept_pixels, d1, new_pixels, obs, prior_logdepth,
                                                           sigma_d, sigma_d, jitter, pose, camera_);
      new_logdepth = init.logdepth;
      new_points = init.points_world;
    }

    if (kept_ids.empty() && new_pixels.empty()) throw EmptyAnchorError("keyframe has no anchors");
    kf.anchor_ids = kept_ids;
    kf.anchor_pixels = kept_pixels;
    for (std::size_t i = 0; i < new_pixels.size(); ++i) {
      AnchorPoint a;
      a.id = next_anchor_id_++;
      a.position_world = new_points[i];
      a.host_keyframe_id = index;
      a.host_pixel = new_pixels[i];
      a.median_logdepth_at_init = prior_logdepth;
      window_.anchors.emplace(a.id, a);
      kf.anchor_ids.push_back(a.id);
      kf.anchor_pixels.push_back(new_pixels[i]);
    }
    kf.log_median_depth = prior_logdepth;
    attach_covariance(kf, model, jitter);

    frames_[index].role = FrameRole::kKeyframe;
    frames_[index].reference_keyframe = index;
    frames_[index].affine = affine;
    if (window_.keyframes.empty()) window_.gauge = GaugePrior{index, pose, affine};
    window_.keyframes.push_back(std::move(kf));
  }

  void archive_support(const Frame& f) { frames_[f.id].final_pose = f.pose; }

  void archive_keyframe(const Keyframe& k) {
    frames_[k.id()].final_pose = k.frame.pose;
    KeyframeRecord rec;
    rec.frame_index = k.id();
    rec.timestamp = k.frame.timestamp;
    rec.pose = k.frame.pose;
    rec.anchor_ids = k.anchor_ids;

    const std::vector<Vec3> positions = window_.anchor_positions(k);
    const DenseGeometry sparse = decode_dense(positions, k.frame.pose, camera_, k.cond, k.query_pixels, k.id());
    rec.points_world = sparse.points_world;
    const Image& image = k.frame.pyramid->levels[0];
    for (const Vec2& p : k.query_pixels) rec.intensity.push_back(image.bilinear(p.x(), p.y()));

    std::vector<Vec2> all_pixels;
    all_pixels.reserve(static_cast<std::size_t>(camera_.width) * camera_.height);
    for (int y = 0; y < camera_.height; ++y) {
      for (int x = 0; x < camera_.width; ++x) all_pixels.emplace_back(x, y);
    }
    const CovarianceMatrices cov = build_covariance(*k.covariance, k.covariance->gather(k.anchor_pixels),
                                                    k.covariance->gather(all_pixels), k.covariance->default_jitter());
    const Eigen::VectorXd logdepth = cov.cond * sparse.anchor_logdepth;
    rec.depth = Image(camera_.width, camera_.height);
    for (int y = 0; y < camera_.height; ++y) {
      for (int x = 0; x < camera_.width; ++x) {
        rec.depth(x, y) = std::exp(logdepth(static_cast<Eigen::Index>(y) * camera_.width + x));
      }
    }
    records_.push_back(std::move(rec));
  }

  void marginalize() {
    // Anchors of the removed keyframe are still in the window here.
    archive_keyframe(window_.keyframes.front());
    const MarginalizationResult m = marginalize_oldest(window_);
    for (const Frame& f : m.removed_support_frames) archive_support(f);
    say("marginalised keyframe " + std::to_string(m.removed.id()) + ": " + std::to_string(m.retired_anchor_ids.size()) +
        " anchors retired, " + std::to_string(m.new_prior_anchor_ids.size()) + " priors");
  }

  void finalize() {
    const auto start = Clock::now();
    for (const Keyframe& k : window_.keyframes) archive_keyframe(k);
    for (const Frame& f : window_.support_frames) archive_support(f);

    std::sort(records_.begin(), records_.end(),
              [](const KeyframeRecord& a, const KeyframeRecord& b) { return a.frame_index < b.frame_index; });
    for (int i = 0; i < result_.frames_processed; ++i) {
      const SE3Pose pose = current_pose(i);
      result_.trajectory.push_back({seq_.timestamps[i], pose});
      if (frames_[i].role == FrameRole::kKeyframe) result_.keyframe_trajectory.push_back({seq_.timestamps[i], pose});
    }
    result_.keyframes = std::move(records_);

    std::vector<AnchorPoint> anchors = window_.retired;
    for (const auto& [id, a] : window_.anchors) anchors.push_back(a);
    std::sort(anchors.begin(), anchors.end(), [](const AnchorPoint& a, const AnchorPoint& b) { return a.id < b.id; });
    result_.anchors = std::move(anchors);
    result_.timings.finalization += seconds_since(start);
  }

  const Sequence& seq_;
  PipelineConfig cfg_;
  PinholeCamera camera_;
  std::ostream* log_;
  KeyframePolicy policy_;

  SlidingWindow window_;
  std::vector<FrameState> frames_;
  std::vector<KeyframeRecord> records_;
  DenseGeometry newest_geometry_;
  std::optional<TrackingReference> reference_;
  double sigma_d_;
  int next_anchor_id_ = 0;
  SE3Pose last_inserted_pose_;
  double overlap_at_insert_ = 1.0;
  int supports_in_gap_ = 0;
  RunResult result_;
};

}  // namespace

RunResult run_pipeline(const Sequence& sequence, const PipelineConfig& config, std::ostream* log) {
  return Runner(sequence, config, log).run();
}

PointCloud build_pointcloud(const RunResult& result, const Sequence& sequence) {
  std::vector<Vec3> points;
  PointCloud cloud;
  for (const KeyframeRecord& k : result.keyframes) {
    for (Eigen::Index i = 0; i < k.points_world.cols(); ++i) {
      points.push_back(k.points_world.col(i));
      cloud.intensity.push_back(k.intensity[static_cast<std::size_t>(i)]);
      cloud.is_anchor.push_back(0);
    }
  }
  for (const AnchorPoint& a : result.anchors) {
    points.push_back(a.position_world);
    const Image& host = sequence.images.at(static_cast<std::size_t>(a.host_keyframe_id));
    cloud.intensity.push_back(host.bilinear(a.host_pixel.x(), a.host_pixel.y()));
    cloud.is_anchor.push_back(1);
  }
  cloud.points.resize(3, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) cloud.points.col(static_cast<Eigen::Index>(i)) = points[i];
  return cloud;
}

EvalReport evaluate_run(std::span<const TimedPose> trajectory, std::span<const KeyframeDepth> keyframes,
                        const Sequence& sequence, const ConsistencyConfig& consistency) {
  if (sequence.groundtruth.empty()) throw InputError("evaluation needs ground-truth poses");
  EvalReport report;
  report.trajectory = align_trajectory_scale(trajectory, sequence.groundtruth);
  for (std::size_t i = 1; i < sequence.groundtruth.size(); ++i) {
    report.trajectory_length +=
        (sequence.groundtruth[i].pose.translation() - sequence.groundtruth[i - 1].pose.translation()).norm();
  }

  auto pose_at = [&](double t) -> std::optional<SE3Pose> {
    for (const TimedPose& p : trajectory) {
      if (std::abs(p.timestamp - t) <= 1e-4) return p.pose;
    }
    return std::nullopt;
  };
  std::vector<TimedPose> kf_traj;
  for (const KeyframeDepth& k : keyframes) {
    if (const auto p = pose_at(k.timestamp)) kf_traj.push_back({k.timestamp, *p});
  }
  if (kf_traj.size() >= 3) report.keyframe_trajectory = align_trajectory_scale(kf_traj, sequence.groundtruth);

  if (!sequence.depths.empty() && !keyframes.empty()) {
    DepthAccumulator acc;
    std::vector<ConsistencyFrame> frames;
    for (const KeyframeDepth& k : keyframes) {
      const auto idx = static_cast<std::size_t>(k.frame_index);
      if (idx >= sequence.depths.size() || idx >= sequence.groundtruth.size()) continue;
      const Image& gt = sequence.depths[idx];
      for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
          const double e = k.depth(x, y) * report.trajectory.scale;
          if (gt(x, y) > 0.0 && e > 0.0 && std::isfinite(e)) acc.add(e, gt(x, y));
        }
      }
      if (const auto p = pose_at(k.timestamp)) frames.push_back({k.depth, gt, *p, sequence.groundtruth[idx].pose});
    }
    if (acc.count() > 0) report.depth = acc.result();
    if (frames.size() >= 2) report.consistency = consistency_metrics(frames, sequence.camera, consistency);
  }
  return report;
}

EvalReport evaluate_run(const RunResult& result, const Sequence& sequence, const ConsistencyConfig& consistency) {
  std::vector<KeyframeDepth> kfs;
  for (const KeyframeRecord& k : result.keyframes) kfs.push_back({k.frame_index, k.timestamp, k.depth});
  return evaluate_run(result.trajectory, kfs, sequence, consistency);
}

std::string eval_report_json(const EvalReport& report) {
  using nlohmann::json;
  auto metrics = [](const DepthMetrics& m) {
    json deltas = json::object();
    for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k) deltas[format_fixed(kDeltaThresholds[k])] = m.delta[k];
    return json{{"absrel", m.absrel}, {"rmse", m.rmse}, {"mae", m.mae}, {"count", m.count}, {"delta", deltas}};
  };
  json j;
  j["ate_rmse"] = report.trajectory.ate_rmse;
  j["ate_scale"] = report.trajectory.scale;
  j["ate_pairs"] = report.trajectory.pairs;
  j["keyframe_ate_rmse"] = report.keyframe_trajectory.ate_rmse;
  j["keyframe_pairs"] = report.keyframe_trajectory.pairs;
  j["trajectory_length"] = report.trajectory_length;
  if (report.depth) j["depth"] = metrics(*report.depth);
  if (report.consistency) j["consistency"] = metrics(*report.consistency);
  return j.dump(2);
}

void write_run_artifacts(const fs::path& directory, const RunResult& result, const Sequence& sequence,
                         const PipelineConfig& config, const std::string& log_text) {
  fs::create_directories(directory / "depth");
  export_trajectory(directory / "trajectory.txt", result.trajectory);
  export_trajectory(directory / "keyframe_trajectory.txt", result.keyframe_trajectory);
  std::ofstream kf(directory / "keyframes.txt");
  kf << "# frame_index timestamp depth_file\n";
  for (const KeyframeRecord& k : result.keyframes) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", k.frame_index);
    write_depth_png(directory / "depth" / name, k.depth);
    kf << k.frame_index << ' ' << format_fixed(k.timestamp) << " depth/" << name << '\n';
  }
  export_pointcloud(directory / "pointcloud.ply", build_pointcloud(result, sequence));
  std::ofstream(directory / "config_used.ini") << dump_config(config);

  std::ofstream log(directory / "run.log");
  log << log_text;
  log << "status: " << result.status << '\n';
  log << "frames processed: " << result.frames_processed << '\n';
  log << "keyframes: " << result.keyframes.size() << ", support frames: " << result.support_frames.size()
      << ", anchors: " << result.anchors.size() << '\n';
  log << "optimizer iterations: " << result.optimizer_iterations << '\n';
  if (config.check_anchoring) log << "max anchor interpolation error: " << result.max_anchor_interpolation_error << '\n';
  log << "time tracking: " << result.timings.tracking << " s\n";
  log << "time keyframe creation: " << result.timings.keyframe_creation << " s\n";
  log << "time optimization: " << result.timings.optimization << " s\n";
  log << "time finalization: " << result.timings.finalization << " s\n";
}

std::pair<std::vector<TimedPose>, std::vector<KeyframeDepth>> read_run_artifacts(const fs::path& directory) {
  auto trajectory = load_trajectory(directory / "trajectory.txt");
  std::ifstream in(directory / "keyframes.txt");
  if (!in) throw InputError("run directory has no keyframes.txt");
  std::vector<KeyframeDepth> keyframes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    KeyframeDepth k;
    std::string file;
    if (!(ls >> k.frame_index >> k.timestamp >> file)) throw InputError("malformed keyframes.txt line");
    k.depth = read_depth_png(directory / file);
    keyframes.push_back(std::move(k));
  }
  return {std::move(trajectory), std::move(keyframes)};
}

}  // namespace anchorvo
