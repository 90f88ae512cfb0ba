#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/geometry.hpp"
#include "anchorvo/kernel.hpp"
#include "anchorvo/photometric.hpp"

namespace anchorvo {

/// Size of a frame's state block: se(3) tangent followed by (a, b).
inline constexpr int kFrameBlockDim = 8;
inline constexpr int kAnchorBlockDim = 3;

struct Frame {
  int id = -1;
  double timestamp = 0.0;
  std::shared_ptr<const ImagePyramid> pyramid;
  SE3Pose pose;
  AffineBrightness affine;

  [[nodiscard]] FrameView view() const { return {pyramid.get(), pose, affine}; }
};

/// A frame that hosts dense geometry. The anchor set, conditioning pixels and
/// covariance matrices are fixed when the keyframe is created.
struct Keyframe {
  Frame frame;
  std::shared_ptr<const CovarianceModel> covariance;
  std::vector<int> anchor_ids;
  std::vector<Vec2> anchor_pixels;
  std::vector<Vec2> query_pixels;
  std::shared_ptr<const Eigen::MatrixXd> cond;           // N x M
  std::shared_ptr<const Eigen::MatrixXd> gp_information;  // (K_MM + jitter I)^-1
  /// Mean of the GP depth prior (log median depth at creation).
  double log_median_depth = 0.0;

  [[nodiscard]] int id() const { return frame.id; }
};

/// Builds the cached covariance state of a keyframe from its anchor pixels.
void attach_covariance(Keyframe& keyframe, std::shared_ptr<const CovarianceModel> model, double jitter);

struct MarginalPrior {
  int anchor_id = -1;
  Vec3 position = Vec3::Zero();
};

struct GaugePrior {
  int frame_id = -1;
  SE3Pose pose;
  AffineBrightness affine;
};

struct SlidingWindow {
  std::vector<Keyframe> keyframes;   // oldest first
  std::vector<Frame> support_frames;  // oldest first
  std::map<int, AnchorPoint> anchors;
  std::vector<MarginalPrior> marginal_priors;
  std::optional<GaugePrior> gauge;
  /// Anchors no longer seen by any keyframe in the window.
  std::vector<AnchorPoint> retired;

  [[nodiscard]] const Keyframe* find_keyframe(int id) const;
  Keyframe* find_keyframe(int id);
  [[nodiscard]] const Frame* find_frame(int id) const;
  Frame* find_frame(int id);
  [[nodiscard]] int num_frames() const {
    return static_cast<int>(keyframes.size() + support_frames.size());
  }
  /// Photometric edges: consecutive keyframes in both directions and every
  /// support frame against its two temporally nearest keyframes.
  [[nodiscard]] std::vector<PhotometricEdge> edges() const;
  /// Anchor positions in the order of the keyframe's anchor_ids.
  [[nodiscard]] std::vector<Vec3> anchor_positions(const Keyframe& keyframe) const;
};

/// Ordering of the optimisation variables: frames in time order, then
/// anchors in creation order.
struct StateLayout {
  std::vector<int> frame_ids;
  std::vector<int> anchor_ids;
  std::unordered_map<int, int> frame_offset;
  std::unordered_map<int, int> anchor_offset;
  int dim = 0;

  static StateLayout from_window(const SlidingWindow& window);
};

struct BackendConfig {
  RobustConfig robust;
  PhotometricConfig photometric;
  double median_depth_sigma = 1.0;
  double pixel_sigma = 1.0;
  double gp_prior_scale = 1e-2;
  double gauge_pose_sigma = 1e-4;
  double gauge_affine_sigma = 1e-2;
  double marginal_sigma = 1e-2;
  int max_iterations = 6;
  double step_tolerance = 1e-6;
  double initial_lambda_factor = 1e-6;
  int max_rejections = 5;
};

enum class PriorKind { kMedianDepth, kGpDepth, kPixel, kGauge, kMarginalLandmark };

struct StateBlock {
  bool is_frame = true;
  int id = -1;
  [[nodiscard]] int dim() const { return is_frame ? kFrameBlockDim : kAnchorBlockDim; }
};

/// Linearised prior: `jacobian` columns are the blocks concatenated in order.
struct PriorFactor {
  PriorKind kind = PriorKind::kMedianDepth;
  std::vector<StateBlock> blocks;
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd information;

  [[nodiscard]] double cost() const { return residual.dot(information * residual); }
};

std::vector<PriorFactor> add_prior_factors(const SlidingWindow& window, const PinholeCamera& camera,
                                           const BackendConfig& config);

/// Per-pixel terms of one photometric edge sharing a reference keyframe.
/// Invalid pixels carry zero weight.
struct EdgePixelTerms {
  Eigen::VectorXd anchor_scale;  // N
  Eigen::VectorXd weight;        // N
  Eigen::VectorXd residual;      // N
  Eigen::MatrixXd pose_jacobian;  // N x P
};

struct GeometryBlocks {
  Eigen::MatrixXd anchor_anchor;             // 3M x 3M
  std::vector<Eigen::MatrixXd> pose_anchor;  // per edge, P x 3M
  Eigen::VectorXd anchor_gradient;           // 3M, -J^T W r
};

/// Hessian geometry blocks with the rotation and depth selector factored out
/// of the pixel sum, so the reduction runs over M instead of 3M.
GeometryBlocks accumulate_geometry_blocks_factored(const Eigen::MatrixXd& anchor_coeff, const Vec3& anchor_axis,
                                                   std::span<const EdgePixelTerms> edges);
/// Reference implementation summing full per-pixel 3M-dimensional rows.
GeometryBlocks accumulate_geometry_blocks_naive(const Eigen::MatrixXd& anchor_coeff, const Vec3& anchor_axis,
                                                std::span<const EdgePixelTerms> edges);

struct NormalEquations {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;  // -J^T W r
  double cost = 0.0;
  std::vector<PhotometricEdge> edges;
  std::vector<double> edge_sigmas;  // robust scale per edge, NaN when skipped
  int valid_residuals = 0;
  /// Median dense depth of each keyframe at the linearisation point.
  std::unordered_map<int, double> median_depths;
};

/// Gauss-Newton system over all photometric edges and prior factors. Throws
/// AssemblyError on non-finite residuals or Jacobians.
NormalEquations assemble_normal_equations(const SlidingWindow& window, const StateLayout& layout,
                                          const PinholeCamera& camera, const BackendConfig& config);

/// Robust cost with the edge scales frozen at `sigmas`; +inf if an anchor
/// cannot be decoded.
double evaluate_cost(const SlidingWindow& window, const PinholeCamera& camera, const BackendConfig& config,
                     const std::vector<PhotometricEdge>& edges, const std::vector<double>& sigmas);

/// Applies a state increment (retraction on poses, addition elsewhere).
void apply_increment(SlidingWindow& window, const StateLayout& layout, const Eigen::VectorXd& delta);

/// Resets anchors that fell behind any keyframe viewing them. Returns the
/// number of resets.
int reset_anchors_behind_cameras(SlidingWindow& window, const PinholeCamera& camera,
                                 const std::unordered_map<int, double>& median_depths);

struct StepOutcome {
  bool accepted = false;
  double cost = 0.0;
  double step_inf_norm = 0.0;
  int rejections = 0;
  int resets = 0;
};

/// One damped Gauss-Newton step: Cholesky of H + lambda I, accept only if the
/// robust cost decreases. Lambda follows x10 on rejection and /2 on acceptance.
/// Throws SingularSystemError when no damping makes H + lambda I factorisable.
StepOutcome solve_and_update(const NormalEquations& system, SlidingWindow& window, const StateLayout& layout,
                             const PinholeCamera& camera, const BackendConfig& config, double& lambda);

struct OptimizationReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> costs;
  int accepted_steps = 0;
};

OptimizationReport optimize_window(SlidingWindow& window, const PinholeCamera& camera, const BackendConfig& config,
                                   const std::function<void(const SlidingWindow&)>& on_iteration = {});

struct MarginalizationResult {
  Keyframe removed;
  std::vector<Frame> removed_support_frames;
  std::vector<int> retired_anchor_ids;
  std::vector<int> new_prior_anchor_ids;
};

/// Drops the oldest keyframe and the support frames before the next one,
/// turning still-observed anchors into isotropic world-position priors and
/// retiring the rest. The gauge prior moves to the new oldest keyframe.
MarginalizationResult marginalize_oldest(SlidingWindow& window);

/// Decoded geometry of every keyframe keyed by keyframe id.
std::unordered_map<int, DenseGeometry> decode_window(const SlidingWindow& window, const PinholeCamera& camera);

/// Largest |decoded log-depth - anchor log-depth| at the conditioning pixels
/// over all keyframes.
double max_anchor_interpolation_error(const SlidingWindow& window, const PinholeCamera& camera);

}  // namespace anchorvo
