#include "anchorvo/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "anchorvo/errors.hpp"

namespace anchorvo {

namespace {

constexpr int kMinImageSize = 16;
constexpr int kCholeskyRetries = 3;

Eigen::LLT<Eigen::MatrixXd> factor_with_retries(const Eigen::MatrixXd& kmm, double jitter, double fallback,
                                                double* used) {
  double current = jitter;
  for (int attempt = 0; attempt <= kCholeskyRetries; ++attempt) {
    Eigen::MatrixXd regularised = kmm;
    regularised.diagonal().array() += current;
    Eigen::LLT<Eigen::MatrixXd> llt(regularised);
    if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
      *used = current;
      return llt;
    }
    current = current > 0.0 ? current * 10.0 : fallback;
  }
  throw SingularCovarianceError("Cholesky of K_MM failed after " + std::to_string(kCholeskyRetries) +
                                " jitter increases (last jitter " + std::to_string(current / 10.0) + ")");
}

}  // namespace

FeatureMap::FeatureMap(int width, int height, int dims)
    : width_(width), height_(height), dims_(dims), data_(static_cast<std::size_t>(width) * height * dims, 0.0) {}

Eigen::Map<const Eigen::VectorXd> FeatureMap::nearest(const Vec2& pixel) const {
  const int x = std::clamp(static_cast<int>(std::lround(pixel.x())), 0, width_ - 1);
  const int y = std::clamp(static_cast<int>(std::lround(pixel.y())), 0, height_ - 1);
  return at(x, y);
}

FeatureMap extract_features(const Image& image, const FeatureConfig& config) {
  if (image.width() < kMinImageSize || image.height() < kMinImageSize) {
    throw DimensionError("feature extraction needs at least " + std::to_string(kMinImageSize) + "x" +
                         std::to_string(kMinImageSize) + " pixels, got " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()));
  }
  if (config.num_scales < 1) throw DimensionError("feature extraction needs at least one scale");

  const int w = image.width();
  const int h = image.height();
  FeatureMap map(w, h, config.feature_dim());
  std::vector<ImageArray> channels;
  channels.reserve(config.feature_dim());
  double sigma = config.base_sigma;
  for (int s = 0; s < config.num_scales; ++s, sigma *= 2.0) {
    Image blurred = gaussian_blur(image, sigma);
    const ImageGradients g = scharr_gradients(blurred);
    channels.push_back(blurred.array());
    channels.push_back((g.gx.array().square() + g.gy.array().square()).sqrt());
  }
  for (int c = 0; c < config.feature_dim(); ++c) {
    ImageArray& ch = channels[c];
    const double mean = ch.mean();
    const double stddev = std::sqrt((ch - mean).square().mean());
    // Flat channels carry no information and normalise to zero.
    const double scale = stddev > 1e-9 ? 1.0 / stddev : 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) map.at(x, y)[c] = (ch(y, x) - mean) * scale;
    }
  }
  return map;
}

CovarianceModel::CovarianceModel(FeatureMap features, double pixel_length_scale, double feature_length_scale,
                                 double signal_variance, double relative_jitter)
    : features_(std::move(features)),
      pixel_length_scale_(pixel_length_scale),
      feature_length_scale_(feature_length_scale),
      signal_variance_(signal_variance),
      relative_jitter_(relative_jitter) {
  if (!(pixel_length_scale > 0.0) || !(feature_length_scale > 0.0) || !(signal_variance > 0.0)) {
    throw DimensionError("covariance length scales and signal variance must be positive");
  }
  if (relative_jitter < 0.0) throw DimensionError("jitter must be non-negative");
}

CovarianceModel CovarianceModel::from_image(const Image& image, const FeatureConfig& config) {
  return {extract_features(image, config), config.pixel_length_scale, config.feature_length_scale,
          config.signal_variance, config.relative_jitter};
}

PixelFeature CovarianceModel::at(const Vec2& pixel) const { return {pixel, features_.nearest(pixel)}; }

PixelFeatureSet CovarianceModel::gather(std::span<const Vec2> pixels) const {
  PixelFeatureSet set{Eigen::Matrix2Xd(2, pixels.size()), Eigen::MatrixXd(features_.dims(), pixels.size())};
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    set.pixels.col(i) = pixels[i];
    set.features.col(i) = features_.nearest(pixels[i]);
  }
  return set;
}

double CovarianceModel::eval(const PixelFeature& a, const PixelFeature& b) const {
  const double dp = (a.pixel - b.pixel).squaredNorm();
  const double df = (a.feature - b.feature).squaredNorm();
  return signal_variance_ * std::exp(-0.5 * dp / (pixel_length_scale_ * pixel_length_scale_)) *
         std::exp(-0.5 * df / (feature_length_scale_ * feature_length_scale_));
}

Eigen::MatrixXd CovarianceModel::matrix(const PixelFeatureSet& rows, const PixelFeatureSet& cols) const {
  const Eigen::Index n = rows.size();
  const Eigen::Index m = cols.size();
  const Eigen::Index f = rows.features.rows();
  const double ip = 1.0 / (pixel_length_scale_ * pixel_length_scale_);
  const double iff = 1.0 / (feature_length_scale_ * feature_length_scale_);
  Eigen::MatrixXd k(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double pjx = cols.pixels(0, j);
    const double pjy = cols.pixels(1, j);
    const double* fj = cols.features.col(j).data();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dx = rows.pixels(0, i) - pjx;
      const double dy = rows.pixels(1, i) - pjy;
      const double* fi = rows.features.col(i).data();
      double df = 0.0;
      for (Eigen::Index c = 0; c < f; ++c) {
        const double d = fi[c] - fj[c];
        df += d * d;
      }
      k(i, j) = signal_variance_ * std::exp(-0.5 * ((dx * dx + dy * dy) * ip + df * iff));
    }
  }
  return k;
}

double kernel_eval(const CovarianceModel& model, const PixelFeature& a, const PixelFeature& b) {
  return model.eval(a, b);
}

CovarianceMatrices build_covariance(const CovarianceModel& model, const PixelFeatureSet& anchors,
                                    const PixelFeatureSet& queries, double jitter) {
  if (anchors.size() == 0) throw EmptyAnchorError("covariance needs at least one anchor");
  if (jitter < 0.0) throw DimensionError("jitter must be non-negative");
  CovarianceMatrices out;
  out.kmm = model.matrix(anchors, anchors);
  out.knm = model.matrix(queries, anchors);
  out.kmm_llt = factor_with_retries(out.kmm, jitter, model.default_jitter(), &out.jitter);
  out.cond = out.kmm_llt.solve(out.knm.transpose()).transpose();
  return out;
}

Eigen::VectorXd conditional_variance(const CovarianceModel& model, const PixelFeatureSet& anchors,
                                     const PixelFeatureSet& queries, double jitter) {
  const Eigen::Index n = queries.size();
  Eigen::VectorXd var = Eigen::VectorXd::Constant(n, model.signal_variance());
  if (anchors.size() == 0) return var;
  const Eigen::MatrixXd kmm = model.matrix(anchors, anchors);
  double used = 0.0;
  const auto llt = factor_with_retries(kmm, jitter, model.default_jitter(), &used);
  const Eigen::MatrixXd kmn = model.matrix(anchors, queries);
  const Eigen::MatrixXd v = llt.matrixL().solve(kmn);
  var -= v.colwise().squaredNorm().transpose();
  return var.cwiseMax(0.0);
}

}  // namespace anchorvo
