#include "anchorvo/image.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace anchorvo {

Image::Image(int width, int height, double fill) : data_(ImageArray::Constant(height, width, fill)) {}

double Image::bilinear(double x, double y) const {
  const double xc = std::clamp(x, 0.0, static_cast<double>(width() - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(height() - 1));
  const int x0 = std::min(static_cast<int>(xc), width() - 2 < 0 ? 0 : width() - 2);
  const int y0 = std::min(static_cast<int>(yc), height() - 2 < 0 ? 0 : height() - 2);
  const int x1 = std::min(x0 + 1, width() - 1);
  const int y1 = std::min(y0 + 1, height() - 1);
  const double ax = xc - x0;
  const double ay = yc - y0;
  const double top = (1.0 - ax) * data_(y0, x0) + ax * data_(y0, x1);
  const double bottom = (1.0 - ax) * data_(y1, x0) + ax * data_(y1, x1);
  return (1.0 - ay) * top + ay * bottom;
}

Eigen::Vector2d Image::bilinear_gradient(double x, double y) const {
  if (width() < 2 || height() < 2 || !inside(x, y)) return Eigen::Vector2d::Zero();
  const int x0 = std::min(static_cast<int>(x), width() - 2);
  const int y0 = std::min(static_cast<int>(y), height() - 2);
  const double ax = x - x0;
  const double ay = y - y0;
  const double i00 = data_(y0, x0);
  const double i01 = data_(y0, x0 + 1);
  const double i10 = data_(y0 + 1, x0);
  const double i11 = data_(y0 + 1, x0 + 1);
  return {(1.0 - ay) * (i01 - i00) + ay * (i11 - i10), (1.0 - ax) * (i10 - i00) + ax * (i11 - i01)};
}

ImageGradients scharr_gradients(const Image& image) {
  const int w = image.width();
  const int h = image.height();
  ImageGradients out{Image(w, h), Image(w, h)};
  auto at = [&](int x, int y) {
    return image(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 3.0 * (at(x + 1, y - 1) - at(x - 1, y - 1)) + 10.0 * (at(x + 1, y) - at(x - 1, y)) +
                        3.0 * (at(x + 1, y + 1) - at(x - 1, y + 1));
      const double gy = 3.0 * (at(x - 1, y + 1) - at(x - 1, y - 1)) + 10.0 * (at(x, y + 1) - at(x, y - 1)) +
                        3.0 * (at(x + 1, y + 1) - at(x + 1, y - 1));
      out.gx(x, y) = gx / 32.0;
      out.gy(x, y) = gy / 32.0;
    }
  }
  return out;
}

Image downsample_2x2(const Image& image) {
  const int w = image.width() / 2;
  const int h = image.height() / 2;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out(x, y) = 0.25 * (image(2 * x, 2 * y) + image(2 * x + 1, 2 * y) + image(2 * x, 2 * y + 1) +
                          image(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;

  const int w = image.width();
  const int h = image.height();
  Image horizontal(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * image(std::clamp(x + i, 0, w - 1), y);
      horizontal(x, y) = acc;
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * horizontal(x, std::clamp(y + i, 0, h - 1));
      out(x, y) = acc;
    }
  }
  return out;
}

}  // namespace anchorvo
