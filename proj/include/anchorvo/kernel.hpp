#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <span>
#include <vector>

#include "anchorvo/image.hpp"
#include "anchorvo/se3.hpp"

namespace anchorvo {

struct FeatureConfig {
  /// Number of blur scales; the feature dimension is 2 * num_scales
  /// (blurred intensity and gradient magnitude per scale).
  int num_scales = 3;
  /// Blur sigma of the finest scale in pixels; doubles per scale.
  double base_sigma = 1.0;
  double pixel_length_scale = 24.0;
  double feature_length_scale = 4.0;
  double signal_variance = 1.0;
  /// Conditioning jitter relative to the signal variance.
  double relative_jitter = 1e-6;

  [[nodiscard]] int feature_dim() const { return 2 * num_scales; }
};

/// Dense H x W x F per-pixel descriptor.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int width, int height, int dims);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int dims() const { return dims_; }

  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> at(int x, int y) const {
    return {data_.data() + index(x, y), dims_};
  }
  Eigen::Map<Eigen::VectorXd> at(int x, int y) { return {data_.data() + index(x, y), dims_}; }
  /// Descriptor of the pixel nearest to a sub-pixel location (clamped).
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> nearest(const Vec2& pixel) const;

 private:
  [[nodiscard]] std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * dims_;
  }

  int width_ = 0;
  int height_ = 0;
  int dims_ = 0;
  std::vector<double> data_;
};

/// Multi-scale blurred intensity and Scharr gradient magnitude, each channel
/// normalised to zero mean and unit variance over the image.
FeatureMap extract_features(const Image& image, const FeatureConfig& config);

struct PixelFeature {
  Vec2 pixel;
  Eigen::VectorXd feature;
};

/// Column-wise batch of pixel/feature pairs.
struct PixelFeatureSet {
  Eigen::Matrix2Xd pixels;
  Eigen::MatrixXd features;

  [[nodiscard]] Eigen::Index size() const { return pixels.cols(); }
  [[nodiscard]] PixelFeature operator[](Eigen::Index i) const { return {pixels.col(i), features.col(i)}; }
};

/// Image-conditioned depth covariance
///   k(a, b) = s2 * exp(-|p_a - p_b|^2 / (2 l_p^2)) * exp(-|f_a - f_b|^2 / (2 l_f^2)).
class CovarianceModel {
 public:
  CovarianceModel(FeatureMap features, double pixel_length_scale, double feature_length_scale,
                  double signal_variance, double relative_jitter = 1e-6);
  static CovarianceModel from_image(const Image& image, const FeatureConfig& config);

  [[nodiscard]] PixelFeature at(const Vec2& pixel) const;
  [[nodiscard]] PixelFeatureSet gather(std::span<const Vec2> pixels) const;

  [[nodiscard]] double eval(const PixelFeature& a, const PixelFeature& b) const;
  /// Cross-covariance matrix with rows indexed by `rows` and columns by `cols`.
  [[nodiscard]] Eigen::MatrixXd matrix(const PixelFeatureSet& rows, const PixelFeatureSet& cols) const;

  [[nodiscard]] const FeatureMap& feature_map() const { return features_; }
  [[nodiscard]] double pixel_length_scale() const { return pixel_length_scale_; }
  [[nodiscard]] double feature_length_scale() const { return feature_length_scale_; }
  [[nodiscard]] double signal_variance() const { return signal_variance_; }
  [[nodiscard]] double default_jitter() const { return relative_jitter_ * signal_variance_; }

 private:
  FeatureMap features_;
  double pixel_length_scale_;
  double feature_length_scale_;
  double signal_variance_;
  double relative_jitter_;
};

double kernel_eval(const CovarianceModel& model, const PixelFeature& a, const PixelFeature& b);

/// Covariances between anchors (M) and queries (N) plus the cached
/// conditioning matrix cond = K_NM (K_MM + jitter I)^-1.
struct CovarianceMatrices {
  Eigen::MatrixXd kmm;
  Eigen::MatrixXd knm;
  Eigen::MatrixXd cond;
  /// Jitter actually used (after any retries).
  double jitter = 0.0;
  /// Cholesky factor of K_MM + jitter I.
  Eigen::LLT<Eigen::MatrixXd> kmm_llt;
};

/// Solves against K_MM + jitter I, retrying with 10x jitter up to three times.
/// Throws EmptyAnchorError for M = 0 and SingularCovarianceError when every
/// attempt fails.
CovarianceMatrices build_covariance(const CovarianceModel& model, const PixelFeatureSet& anchors,
                                    const PixelFeatureSet& queries, double jitter);

/// GP posterior variance of each query given the anchors:
/// diag(K_NN) - diag(K_NM (K_MM + jitter I)^-1 K_MN), clamped at zero.
Eigen::VectorXd conditional_variance(const CovarianceModel& model, const PixelFeatureSet& anchors,
                                     const PixelFeatureSet& queries, double jitter);

}  // namespace anchorvo
