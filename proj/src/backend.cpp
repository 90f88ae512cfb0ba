#include "anchorvo/backend.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anchorvo/errors.hpp"

namespace anchorvo {

namespace {

constexpr int kEdgeBlockDim = 2 * kFrameBlockDim;

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

/// Adds a local block system into the global one.
void scatter(const std::vector<std::pair<int, int>>& slots, const Eigen::MatrixXd& h_local,
             const Eigen::VectorXd& g_local, Eigen::MatrixXd& h, Eigen::VectorXd& g) {
  int row = 0;
  for (const auto& [ro, rd] : slots) {
    int col = 0;
    for (const auto& [co, cd] : slots) {
      h.block(ro, co, rd, cd) += h_local.block(row, col, rd, cd);
      col += cd;
    }
    g.segment(ro, rd) += g_local.segment(row, rd);
    row += rd;
  }
}

std::vector<std::pair<int, int>> slots_of(const std::vector<StateBlock>& blocks, const StateLayout& layout) {
  std::vector<std::pair<int, int>> slots;
  slots.reserve(blocks.size());
  for (const StateBlock& b : blocks) {
    const auto& offsets = b.is_frame ? layout.frame_offset : layout.anchor_offset;
    const auto it = offsets.find(b.id);
    if (it == offsets.end()) throw AssemblyError("prior references a block outside the window");
    slots.emplace_back(it->second, b.dim());
  }
  return slots;
}

struct EdgeResiduals {
  Eigen::VectorXd values;
  std::vector<char> valid;
  std::vector<PhotometricResidual> details;
};

EdgeResiduals edge_residuals(const Frame& reference, const Frame& target, const PinholeCamera& camera,
                             const DenseGeometry& geometry, const PhotometricConfig& config) {
  const Eigen::Index n = geometry.num_queries();
  EdgeResiduals out;
  out.values = Eigen::VectorXd::Zero(n);
  out.valid.assign(n, 0);
  out.details.resize(n);
  const FrameView ref = reference.view();
  const FrameView tgt = target.view();
  for (Eigen::Index i = 0; i < n; ++i) {
    out.details[i] = photometric_residual(ref, tgt, camera, geometry, i, config);
    if (out.details[i].valid) {
      out.values(i) = out.details[i].value;
      out.valid[i] = 1;
    }
  }
  return out;
}

}  // namespace

void attach_covariance(Keyframe& keyframe, std::shared_ptr<const CovarianceModel> model, double jitter) {
  const PixelFeatureSet anchors = model->gather(keyframe.anchor_pixels);
  const PixelFeatureSet queries = model->gather(keyframe.query_pixels);
  CovarianceMatrices cov = build_covariance(*model, anchors, queries, jitter);
  keyframe.cond = std::make_shared<const Eigen::MatrixXd>(std::move(cov.cond));
  const Eigen::Index m = cov.kmm.rows();
  keyframe.gp_information =
      std::make_shared<const Eigen::MatrixXd>(cov.kmm_llt.solve(Eigen::MatrixXd::Identity(m, m)));
  keyframe.covariance = std::move(model);
}

const Keyframe* SlidingWindow::find_keyframe(int id) const {
  for (const Keyframe& k : keyframes) {
    if (k.id() == id) return &k;
  }
  return nullptr;
}

Keyframe* SlidingWindow::find_keyframe(int id) {
  return const_cast<Keyframe*>(std::as_const(*this).find_keyframe(id));
}

const Frame* SlidingWindow::find_frame(int id) const {
  if (const Keyframe* k = find_keyframe(id)) return &k->frame;
  for (const Frame& f : support_frames) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

Frame* SlidingWindow::find_frame(int id) { return const_cast<Frame*>(std::as_const(*this).find_frame(id)); }

std::vector<PhotometricEdge> SlidingWindow::edges() const {
  std::vector<PhotometricEdge> out;
  for (std::size_t i = 0; i + 1 < keyframes.size(); ++i) {
    out.push_back({keyframes[i].id(), keyframes[i + 1].id()});
    out.push_back({keyframes[i + 1].id(), keyframes[i].id()});
  }
  for (const Frame& s : support_frames) {
    std::vector<const Keyframe*> order;
    for (const Keyframe& k : keyframes) order.push_back(&k);
    std::stable_sort(order.begin(), order.end(), [&](const Keyframe* a, const Keyframe* b) {
      return std::abs(a->frame.timestamp - s.timestamp) < std::abs(b->frame.timestamp - s.timestamp);
    });
    for (std::size_t i = 0; i < std::min<std::size_t>(2, order.size()); ++i) {
      out.push_back({order[i]->id(), s.id});
    }
  }
  return out;
}

std::vector<Vec3> SlidingWindow::anchor_positions(const Keyframe& keyframe) const {
  std::vector<Vec3> out;
  out.reserve(keyframe.anchor_ids.size());
  for (const int id : keyframe.anchor_ids) {
    const auto it = anchors.find(id);
    if (it == anchors.end()) throw AssemblyError("keyframe references an unknown anchor");
    out.push_back(it->second.position_world);
  }
  return out;
}

StateLayout StateLayout::from_window(const SlidingWindow& window) {
  StateLayout layout;
  std::vector<std::pair<double, int>> frames;
  for (const Keyframe& k : window.keyframes) frames.emplace_back(k.frame.timestamp, k.id());
  for (const Frame& f : window.support_frames) frames.emplace_back(f.timestamp, f.id);
  std::sort(frames.begin(), frames.end());
  int offset = 0;
  for (const auto& [t, id] : frames) {
    layout.frame_ids.push_back(id);
    layout.frame_offset[id] = offset;
    offset += kFrameBlockDim;
  }
  for (const auto& [id, anchor] : window.anchors) {
    layout.anchor_ids.push_back(id);
    layout.anchor_offset[id] = offset;
    offset += kAnchorBlockDim;
  }
  layout.dim = offset;
  return layout;
}

std::unordered_map<int, DenseGeometry> decode_window(const SlidingWindow& window, const PinholeCamera& camera) {
  std::unordered_map<int, DenseGeometry> out;
  for (const Keyframe& k : window.keyframes) {
    const std::vector<Vec3> positions = window.anchor_positions(k);
    out.emplace(k.id(), decode_dense(positions, k.frame.pose, camera, k.cond, k.query_pixels, k.id()));
  }
  return out;
}

double max_anchor_interpolation_error(const SlidingWindow& window, const PinholeCamera& camera) {
  double worst = 0.0;
  for (const Keyframe& k : window.keyframes) {
    const PixelFeatureSet anchors = k.covariance->gather(k.anchor_pixels);
    const CovarianceMatrices cov =
        build_covariance(*k.covariance, anchors, anchors, k.covariance->default_jitter());
    const std::vector<Vec3> positions = window.anchor_positions(k);
    const DenseGeometry g = decode_dense(positions, k.frame.pose, camera,
                                         std::make_shared<const Eigen::MatrixXd>(cov.cond), k.anchor_pixels, k.id());
    worst = std::max(worst, (g.logdepth - g.anchor_logdepth).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<PriorFactor> add_prior_factors(const SlidingWindow& window, const PinholeCamera& camera,
                                           const BackendConfig& config) {
  std::vector<PriorFactor> factors;

  // Median-depth and pixel priors tie each anchor to its host observation.
  for (const auto& [id, anchor] : window.anchors) {
    const Keyframe* host = window.find_keyframe(anchor.host_keyframe_id);
    if (host == nullptr) continue;
    const AnchorProjection proj = project_anchor(host->frame.pose, camera, anchor);
    if (!proj.in_front) continue;
    const std::vector<StateBlock> blocks{{true, host->id()}, {false, id}};

    PriorFactor depth;
    depth.kind = PriorKind::kMedianDepth;
    depth.blocks = blocks;
    depth.residual = Eigen::VectorXd::Constant(1, proj.logdepth - anchor.median_logdepth_at_init);
    depth.jacobian = Eigen::MatrixXd::Zero(1, kFrameBlockDim + kAnchorBlockDim);
    depth.jacobian.block<1, 6>(0, 0) = logdepth_jacobian_wrt_pose(proj.point_camera);
    depth.jacobian.block<1, 3>(0, kFrameBlockDim) = logdepth_jacobian_wrt_anchor(proj.point_camera, host->frame.pose);
    depth.information = Eigen::MatrixXd::Constant(1, 1, 1.0 / (config.median_depth_sigma * config.median_depth_sigma));
    factors.push_back(std::move(depth));

    PriorFactor pixel;
    pixel.kind = PriorKind::kPixel;
    pixel.blocks = blocks;
    pixel.residual = proj.pixel - anchor.host_pixel;
    pixel.jacobian = Eigen::MatrixXd::Zero(2, kFrameBlockDim + kAnchorBlockDim);
    pixel.jacobian.block<2, 6>(0, 0) = pixel_jacobian_wrt_pose(proj.point_camera, camera);
    pixel.jacobian.block<2, 3>(0, kFrameBlockDim) = pixel_jacobian_wrt_anchor(proj.point_camera, host->frame.pose, camera);
    pixel.information = Eigen::MatrixXd::Identity(2, 2) / (config.pixel_sigma * config.pixel_sigma);
    factors.push_back(std::move(pixel));
  }

  // GP prior on each keyframe's anchor log-depths around its median.
  for (const Keyframe& k : window.keyframes) {
    const Eigen::Index m = static_cast<Eigen::Index>(k.anchor_ids.size());
    if (m == 0 || !k.gp_information) continue;
    PriorFactor gp;
    gp.kind = PriorKind::kGpDepth;
    gp.blocks.push_back({true, k.id()});
    gp.residual.resize(m);
    gp.jacobian = Eigen::MatrixXd::Zero(m, kFrameBlockDim + kAnchorBlockDim * m);
    bool ok = true;
    for (Eigen::Index i = 0; i < m; ++i) {
      const AnchorPoint& anchor = window.anchors.at(k.anchor_ids[i]);
      const AnchorProjection proj = project_anchor(k.frame.pose, camera, anchor);
      if (!proj.in_front) {
        ok = false;
        break;
      }
      gp.blocks.push_back({false, anchor.id});
      gp.residual(i) = proj.logdepth - k.log_median_depth;
      gp.jacobian.block<1, 6>(i, 0) = logdepth_jacobian_wrt_pose(proj.point_camera);
      gp.jacobian.block<1, 3>(i, kFrameBlockDim + kAnchorBlockDim * i) =
          logdepth_jacobian_wrt_anchor(proj.point_camera, k.frame.pose);
    }
    if (!ok) continue;
    gp.information = config.gp_prior_scale * *k.gp_information;
    factors.push_back(std::move(gp));
  }

  // Gauge on the oldest keyframe.
  if (window.gauge) {
    if (const Frame* f = window.find_frame(window.gauge->frame_id)) {
      const GaugePrior& gauge = *window.gauge;
      const Mat3 r0t = gauge.pose.rotation().transpose();
      const Vec3 phi = so3_log(r0t * f->pose.rotation());
      PriorFactor p;
      p.kind = PriorKind::kGauge;
      p.blocks = {{true, f->id}};
      p.residual.resize(kFrameBlockDim);
      p.residual.head<3>() = r0t * (f->pose.translation() - gauge.pose.translation());
      p.residual.segment<3>(3) = phi;
      p.residual(6) = f->affine.a - gauge.affine.a;
      p.residual(7) = f->affine.b - gauge.affine.b;
      p.jacobian = Eigen::MatrixXd::Zero(kFrameBlockDim, kFrameBlockDim);
      p.jacobian.block<3, 3>(0, 0) = r0t * f->pose.rotation();
      p.jacobian.block<3, 3>(3, 3) = so3_right_jacobian_inverse(phi);
      p.jacobian(6, 6) = 1.0;
      p.jacobian(7, 7) = 1.0;
      Eigen::VectorXd info(kFrameBlockDim);
      info.head<6>().setConstant(1.0 / (config.gauge_pose_sigma * config.gauge_pose_sigma));
      info.tail<2>().setConstant(1.0 / (config.gauge_affine_sigma * config.gauge_affine_sigma));
      p.information = info.asDiagonal();
      factors.push_back(std::move(p));
    }
  }

  for (const MarginalPrior& prior : window.marginal_priors) {
    const auto it = window.anchors.find(prior.anchor_id);
    if (it == window.anchors.end()) continue;
    PriorFactor p;
    p.kind = PriorKind::kMarginalLandmark;
    p.blocks = {{false, prior.anchor_id}};
    p.residual = it->second.position_world - prior.position;
    p.jacobian = Eigen::MatrixXd::Identity(3, 3);
    p.information = Eigen::MatrixXd::Identity(3, 3) / (config.marginal_sigma * config.marginal_sigma);
    factors.push_back(std::move(p));
  }
  return factors;
}

GeometryBlocks accumulate_geometry_blocks_factored(const Eigen::MatrixXd& anchor_coeff, const Vec3& anchor_axis,
                                                   std::span<const EdgePixelTerms> edges) {
  const Eigen::Index n = anchor_coeff.rows();
  const Eigen::Index m = anchor_coeff.cols();
  Eigen::VectorXd pixel_weight = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd pixel_gradient = Eigen::VectorXd::Zero(n);
  GeometryBlocks out;
  out.pose_anchor.reserve(edges.size());
  for (const EdgePixelTerms& e : edges) {
    const Eigen::VectorXd wa = e.weight.cwiseProduct(e.anchor_scale);
    pixel_weight += wa.cwiseProduct(e.anchor_scale);
    pixel_gradient -= wa.cwiseProduct(e.residual);
    const Eigen::MatrixXd reduced = e.pose_jacobian.transpose() * wa.asDiagonal() * anchor_coeff;  // P x M
    Eigen::MatrixXd expanded(reduced.rows(), 3 * m);
    for (Eigen::Index j = 0; j < m; ++j) expanded.middleCols<3>(3 * j) = reduced.col(j) * anchor_axis.transpose();
    out.pose_anchor.push_back(std::move(expanded));
  }
  const Eigen::MatrixXd gram = anchor_coeff.transpose() * pixel_weight.asDiagonal() * anchor_coeff;  // M x M
  const Eigen::VectorXd grad = anchor_coeff.transpose() * pixel_gradient;
  const Mat3 outer = anchor_axis * anchor_axis.transpose();
  out.anchor_anchor.resize(3 * m, 3 * m);
  out.anchor_gradient.resize(3 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.anchor_gradient.segment<3>(3 * i) = grad(i) * anchor_axis;
    for (Eigen::Index j = 0; j < m; ++j) out.anchor_anchor.block<3, 3>(3 * i, 3 * j) = gram(i, j) * outer;
  }
  return out;
}

GeometryBlocks accumulate_geometry_blocks_naive(const Eigen::MatrixXd& anchor_coeff, const Vec3& anchor_axis,
                                                std::span<const EdgePixelTerms> edges) {
  const Eigen::Index n = anchor_coeff.rows();
  const Eigen::Index m = anchor_coeff.cols();
  GeometryBlocks out;
  out.anchor_anchor = Eigen::MatrixXd::Zero(3 * m, 3 * m);
  out.anchor_gradient = Eigen::VectorXd::Zero(3 * m);
  Eigen::RowVectorXd row(3 * m);
  for (const EdgePixelTerms& e : edges) {
    Eigen::MatrixXd pose_anchor = Eigen::MatrixXd::Zero(e.pose_jacobian.cols(), 3 * m);
    for (Eigen::Index p = 0; p < n; ++p) {
      const double w = e.weight(p);
      if (w == 0.0) continue;
      for (Eigen::Index j = 0; j < m; ++j) {
        row.segment<3>(3 * j) = e.anchor_scale(p) * anchor_coeff(p, j) * anchor_axis.transpose();
      }
      out.anchor_anchor.noalias() += w * row.transpose() * row;
      out.anchor_gradient.noalias() -= w * e.residual(p) * row.transpose();
      pose_anchor.noalias() += w * e.pose_jacobian.row(p).transpose() * row;
    }
    out.pose_anchor.push_back(std::move(pose_anchor));
  }
  return out;
}

NormalEquations assemble_normal_equations(const SlidingWindow& window, const StateLayout& layout,
                                          const PinholeCamera& camera, const BackendConfig& config) {
  NormalEquations sys;
  sys.hessian = Eigen::MatrixXd::Zero(layout.dim, layout.dim);
  sys.gradient = Eigen::VectorXd::Zero(layout.dim);
  sys.edges = window.edges();
  sys.edge_sigmas.assign(sys.edges.size(), std::numeric_limits<double>::quiet_NaN());

  const auto geometries = decode_window(window, camera);
  for (const auto& [id, g] : geometries) sys.median_depths[id] = median_depth(g);

  for (const Keyframe& k : window.keyframes) {
    const DenseGeometry& geometry = geometries.at(k.id());
    const DenseJacobianFactors factors = dense_jacobian_factors(geometry, k.frame.pose);
    const Eigen::Index n = geometry.num_queries();
    const FrameView ref_view = k.frame.view();

    std::vector<EdgePixelTerms> terms;
    std::vector<int> target_ids;
    for (std::size_t e = 0; e < sys.edges.size(); ++e) {
      if (sys.edges[e].reference_id != k.id()) continue;
      const Frame* target = window.find_frame(sys.edges[e].target_id);
      if (target == nullptr) throw AssemblyError("edge target is not in the window");
      const EdgeResiduals res = edge_residuals(k.frame, *target, camera, geometry, config.photometric);
      RobustWeights robust;
      try {
        robust = robust_weights(res.values, res.valid, config.robust);
      } catch (const DegenerateEdgeError&) {
        continue;
      }
      sys.edge_sigmas[e] = robust.sigma;

      EdgePixelTerms t;
      t.anchor_scale = Eigen::VectorXd::Zero(n);
      t.weight = robust.weights;
      t.residual = res.values;
      t.pose_jacobian = Eigen::MatrixXd::Zero(n, kEdgeBlockDim);
      const FrameView tgt_view = target->view();
      for (Eigen::Index p = 0; p < n; ++p) {
        if (!res.valid[p]) continue;
        const CompactResidualJacobian j =
            compact_residual_jacobian(ref_view, tgt_view, camera, geometry, factors, p, res.details[p]);
        t.anchor_scale(p) = j.anchor_scale;
        t.pose_jacobian.block<1, 6>(p, 0) = j.pose_reference;
        t.pose_jacobian.block<1, 2>(p, 6) = j.affine_reference;
        t.pose_jacobian.block<1, 6>(p, 8) = j.pose_target;
        t.pose_jacobian.block<1, 2>(p, 14) = j.affine_target;
        sys.cost += huber_cost(res.values(p), robust.sigma, config.robust.huber_delta);
        ++sys.valid_residuals;
      }
      if (!all_finite(t.pose_jacobian) || !t.anchor_scale.allFinite() || !t.residual.allFinite()) {
        throw AssemblyError("non-finite photometric residual or Jacobian on edge " + std::to_string(k.id()) + " -> " +
                            std::to_string(target->id));
      }

      const Eigen::MatrixXd jw = t.pose_jacobian.transpose() * t.weight.asDiagonal();
      const Eigen::MatrixXd h_local = jw * t.pose_jacobian;
      const Eigen::VectorXd g_local = -(jw * t.residual);
      scatter({{layout.frame_offset.at(k.id()), kFrameBlockDim}, {layout.frame_offset.at(target->id), kFrameBlockDim}},
              h_local, g_local, sys.hessian, sys.gradient);
      terms.push_back(std::move(t));
      target_ids.push_back(target->id);
    }
    if (terms.empty()) continue;

    const GeometryBlocks blocks = accumulate_geometry_blocks_factored(factors.anchor_coeff, factors.anchor_axis, terms);
    const Eigen::Index m = geometry.num_anchors();
    std::vector<int> anchor_offsets(m);
    for (Eigen::Index i = 0; i < m; ++i) anchor_offsets[i] = layout.anchor_offset.at(k.anchor_ids[i]);
    for (Eigen::Index i = 0; i < m; ++i) {
      sys.gradient.segment<3>(anchor_offsets[i]) += blocks.anchor_gradient.segment<3>(3 * i);
      for (Eigen::Index j = 0; j < m; ++j) {
        sys.hessian.block<3, 3>(anchor_offsets[i], anchor_offsets[j]) += blocks.anchor_anchor.block<3, 3>(3 * i, 3 * j);
      }
    }
    const int ref_offset = layout.frame_offset.at(k.id());
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const int tgt_offset = layout.frame_offset.at(target_ids[e]);
      const Eigen::MatrixXd& pa = blocks.pose_anchor[e];
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto ref_block = pa.block<kFrameBlockDim, 3>(0, 3 * i);
        const auto tgt_block = pa.block<kFrameBlockDim, 3>(kFrameBlockDim, 3 * i);
        sys.hessian.block<kFrameBlockDim, 3>(ref_offset, anchor_offsets[i]) += ref_block;
        sys.hessian.block<3, kFrameBlockDim>(anchor_offsets[i], ref_offset) += ref_block.transpose();
        sys.hessian.block<kFrameBlockDim, 3>(tgt_offset, anchor_offsets[i]) += tgt_block;
        sys.hessian.block<3, kFrameBlockDim>(anchor_offsets[i], tgt_offset) += tgt_block.transpose();
      }
    }
  }

  for (const PriorFactor& p : add_prior_factors(window, camera, config)) {
    if (!p.residual.allFinite() || !all_finite(p.jacobian)) {
      throw AssemblyError("non-finite prior factor of kind " + std::to_string(static_cast<int>(p.kind)));
    }
    const Eigen::MatrixXd jw = p.jacobian.transpose() * p.information;
    scatter(slots_of(p.blocks, layout), jw * p.jacobian, -(jw * p.residual), sys.hessian, sys.gradient);
    sys.cost += p.cost();
  }
  // Block products round differently above and below the diagonal.
  sys.hessian = (0.5 * (sys.hessian + sys.hessian.transpose())).eval();
  if (!sys.hessian.allFinite() || !sys.gradient.allFinite()) throw AssemblyError("non-finite normal equations");
  return sys;
}

double evaluate_cost(const SlidingWindow& window, const PinholeCamera& camera, const BackendConfig& config,
                     const std::vector<PhotometricEdge>& edges, const std::vector<double>& sigmas) {
  std::unordered_map<int, DenseGeometry> geometries;
  try {
    geometries = decode_window(window, camera);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
  double cost = 0.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (!std::isfinite(sigmas[e])) continue;
    const Keyframe* ref = window.find_keyframe(edges[e].reference_id);
    const Frame* tgt = window.find_frame(edges[e].target_id);
    const DenseGeometry& g = geometries.at(ref->id());
    const FrameView rv = ref->frame.view();
    const FrameView tv = tgt->view();
    for (Eigen::Index p = 0; p < g.num_queries(); ++p) {
      const PhotometricResidual r = photometric_residual(rv, tv, camera, g, p, config.photometric);
      if (r.valid) cost += huber_cost(r.value, sigmas[e], config.robust.huber_delta);
    }
  }
  for (const PriorFactor& p : add_prior_factors(window, camera, config)) cost += p.cost();
  return std::isfinite(cost) ? cost : std::numeric_limits<double>::infinity();
}

void apply_increment(SlidingWindow& window, const StateLayout& layout, const Eigen::VectorXd& delta) {
  for (const int id : layout.frame_ids) {
    Frame* f = window.find_frame(id);
    const Eigen::Index o = layout.frame_offset.at(id);
    f->pose = f->pose.retract(delta.segment<6>(o)).normalized();
    f->affine.a += delta(o + 6);
    f->affine.b += delta(o + 7);
  }
  for (const int id : layout.anchor_ids) {
    window.anchors.at(id).position_world += delta.segment<3>(layout.anchor_offset.at(id));
  }
}

int reset_anchors_behind_cameras(SlidingWindow& window, const PinholeCamera& camera,
                                 const std::unordered_map<int, double>& median_depths) {
  int resets = 0;
  auto depth_of = [&](int keyframe_id) {
    const auto it = median_depths.find(keyframe_id);
    return it == median_depths.end() ? 1.0 : it->second;
  };
  // Two passes: a reset onto one keyframe's ray can land behind another.
  for (int pass = 0; pass < 2; ++pass) {
    for (const Keyframe& k : window.keyframes) {
      for (std::size_t i = 0; i < k.anchor_ids.size(); ++i) {
        AnchorPoint& anchor = window.anchors.at(k.anchor_ids[i]);
        if (k.frame.pose.to_local(anchor.position_world).z() > kDefaultMinDepth) continue;
        const Keyframe* host = window.find_keyframe(anchor.host_keyframe_id);
        if (host != nullptr && host->frame.pose.to_local(anchor.position_world).z() <= kDefaultMinDepth) {
          anchor = reset_behind_camera(anchor, host->frame.pose, camera, depth_of(host->id()));
        } else {
          anchor.position_world = k.frame.pose * camera.unproject(k.anchor_pixels[i], depth_of(k.id()));
        }
        ++resets;
      }
    }
  }
  return resets;
}

StepOutcome solve_and_update(const NormalEquations& system, SlidingWindow& window, const StateLayout& layout,
                             const PinholeCamera& camera, const BackendConfig& config, double& lambda) {
  StepOutcome out;
  out.cost = system.cost;
  const Eigen::Index d = system.hessian.rows();
  if (lambda <= 0.0) {
    lambda = config.initial_lambda_factor * std::max(system.hessian.trace(), 1e-12) / static_cast<double>(std::max<Eigen::Index>(d, 1));
  }

  // Only the optimised state is backed up; structure does not change here.
  std::vector<std::pair<SE3Pose, AffineBrightness>> frame_backup;
  for (const int id : layout.frame_ids) {
    const Frame* f = window.find_frame(id);
    frame_backup.emplace_back(f->pose, f->affine);
  }
  std::vector<AnchorPoint> anchor_backup;
  for (const int id : layout.anchor_ids) anchor_backup.push_back(window.anchors.at(id));
  auto restore = [&] {
    for (std::size_t i = 0; i < layout.frame_ids.size(); ++i) {
      Frame* f = window.find_frame(layout.frame_ids[i]);
      f->pose = frame_backup[i].first;
      f->affine = frame_backup[i].second;
    }
    for (std::size_t i = 0; i < layout.anchor_ids.size(); ++i) window.anchors.at(layout.anchor_ids[i]) = anchor_backup[i];
  };

  bool any_factorised = false;
  for (int attempt = 0; attempt <= config.max_rejections; ++attempt) {
    Eigen::MatrixXd damped = system.hessian;
    damped.diagonal().array() += lambda;
    const Eigen::LLT<Eigen::MatrixXd> llt(damped);
    if (llt.info() != Eigen::Success) {
      lambda *= 10.0;
      ++out.rejections;
      continue;
    }
    any_factorised = true;
    const Eigen::VectorXd delta = llt.solve(system.gradient);
    if (!delta.allFinite()) {
      lambda *= 10.0;
      ++out.rejections;
      continue;
    }
    apply_increment(window, layout, delta);
    const int resets = reset_anchors_behind_cameras(window, camera, system.median_depths);
    const double cost = evaluate_cost(window, camera, config, system.edges, system.edge_sigmas);
    if (cost < system.cost) {
      out.accepted = true;
      out.cost = cost;
      out.step_inf_norm = delta.lpNorm<Eigen::Infinity>();
      out.resets = resets;
      lambda *= 0.5;
      return out;
    }
    restore();
    lambda *= 10.0;
    ++out.rejections;
  }
  if (!any_factorised) throw SingularSystemError("damped normal equations are not positive definite");
  return out;
}

OptimizationReport optimize_window(SlidingWindow& window, const PinholeCamera& camera, const BackendConfig& config,
                                   const std::function<void(const SlidingWindow&)>& on_iteration) {
  OptimizationReport report;
  double lambda = 0.0;
  for (int it = 0; it < config.max_iterations; ++it) {
    const StateLayout layout = StateLayout::from_window(window);
    const NormalEquations system = assemble_normal_equations(window, layout, camera, config);
    if (it == 0) {
      report.initial_cost = system.cost;
      report.costs.push_back(system.cost);
    }
    const StepOutcome step = solve_and_update(system, window, layout, camera, config, lambda);
    ++report.iterations;
    report.costs.push_back(step.cost);
    if (on_iteration) on_iteration(window);
    if (!step.accepted) break;
    ++report.accepted_steps;
    if (step.step_inf_norm < config.step_tolerance) break;
  }
  report.final_cost = report.costs.empty() ? 0.0 : report.costs.back();
  return report;
}

MarginalizationResult marginalize_oldest(SlidingWindow& window) {
  if (window.keyframes.empty()) throw InsufficientDataError("no keyframe to marginalise");
  MarginalizationResult out;
  out.removed = window.keyframes.front();
  window.keyframes.erase(window.keyframes.begin());

  const double cutoff = window.keyframes.empty() ? std::numeric_limits<double>::infinity()
                                                 : window.keyframes.front().frame.timestamp;
  auto split = std::stable_partition(window.support_frames.begin(), window.support_frames.end(),
                                     [&](const Frame& f) { return f.timestamp < cutoff; });
  out.removed_support_frames.assign(window.support_frames.begin(), split);
  window.support_frames.erase(window.support_frames.begin(), split);

  for (const int id : out.removed.anchor_ids) {
    const bool observed = std::any_of(window.keyframes.begin(), window.keyframes.end(), [&](const Keyframe& k) {
      return std::find(k.anchor_ids.begin(), k.anchor_ids.end(), id) != k.anchor_ids.end();
    });
    auto existing = std::find_if(window.marginal_priors.begin(), window.marginal_priors.end(),
                                 [&](const MarginalPrior& p) { return p.anchor_id == id; });
    if (observed) {
      const Vec3 position = window.anchors.at(id).position_world;
      if (existing != window.marginal_priors.end()) {
        existing->position = position;
      } else {
        window.marginal_priors.push_back({id, position});
      }
      out.new_prior_anchor_ids.push_back(id);
    } else {
      if (existing != window.marginal_priors.end()) window.marginal_priors.erase(existing);
      const auto it = window.anchors.find(id);
      if (it != window.anchors.end()) {
        window.retired.push_back(it->second);
        window.anchors.erase(it);
      }
      out.retired_anchor_ids.push_back(id);
    }
  }

  if (window.keyframes.empty()) {
    window.gauge.reset();
  } else {
    const Frame& oldest = window.keyframes.front().frame;
    window.gauge = GaugePrior{oldest.id, oldest.pose, oldest.affine};
  }
  return out;
}

}  // namespace anchorvo
