#pragma once

#include <Eigen/Core>

namespace anchorvo {

using ImageArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-channel floating point image. Indexed as (x, y) = (column, row).
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0);
  explicit Image(ImageArray data) : data_(std::move(data)) {}

  [[nodiscard]] int width() const { return static_cast<int>(data_.cols()); }
  [[nodiscard]] int height() const { return static_cast<int>(data_.rows()); }
  [[nodiscard]] bool empty() const { return data_.size() == 0; }

  double& operator()(int x, int y) { return data_(y, x); }
  double operator()(int x, int y) const { return data_(y, x); }

  [[nodiscard]] const ImageArray& array() const { return data_; }
  ImageArray& array() { return data_; }

  /// Bilinear lookup. Coordinates are clamped to the image domain.
  [[nodiscard]] double bilinear(double x, double y) const;
  /// Exact derivative of the bilinear interpolant at an interior point
  /// (one-sided at cell boundaries, zero outside the domain).
  [[nodiscard]] Eigen::Vector2d bilinear_gradient(double x, double y) const;

  /// True when (x, y) leaves at least `margin` pixels to every border.
  [[nodiscard]] bool inside(double x, double y, double margin = 0.0) const {
    return x >= margin && y >= margin && x <= width() - 1 - margin && y <= height() - 1 - margin;
  }

 private:
  ImageArray data_;
};

struct ImageGradients {
  Image gx;
  Image gy;
};

/// 3x3 Scharr derivative normalised to intensity per pixel; borders replicate.
ImageGradients scharr_gradients(const Image& image);

/// 2x2 box average; odd trailing rows/cols are dropped.
Image downsample_2x2(const Image& image);

/// Separable Gaussian blur with replicated borders.
Image gaussian_blur(const Image& image, double sigma);

}  // namespace anchorvo
