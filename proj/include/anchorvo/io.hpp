#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "anchorvo/camera.hpp"
#include "anchorvo/image.hpp"
#include "anchorvo/se3.hpp"

namespace anchorvo {

/// Metres (or scene units) per raw unit in 16-bit depth PNGs.
inline constexpr double kDepthPngScale = 5000.0;

struct TimedPose {
  double timestamp = 0.0;
  SE3Pose pose;
};

/// Fixed six-decimal formatting; negative zero prints as 0.
std::string format_fixed(double value);

/// One line per pose: `timestamp tx ty tz qx qy qz qw`.
std::string format_trajectory(std::span<const TimedPose> poses);
void export_trajectory(const std::filesystem::path& path, std::span<const TimedPose> poses);
/// Skips blank lines and lines starting with '#'.
std::vector<TimedPose> parse_trajectory(std::istream& in);
std::vector<TimedPose> load_trajectory(const std::filesystem::path& path);

struct PointCloud {
  Eigen::Matrix3Xd points;
  std::vector<double> intensity;  // [0, 1]
  std::vector<char> is_anchor;
};

/// ASCII PLY with x y z, an 8-bit grey intensity and an anchor flag.
void export_pointcloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_pointcloud(const std::filesystem::path& path);

/// Loads any OpenCV-readable image as grey in [0, 1].
Image read_image(const std::filesystem::path& path);
void write_image_png16(const std::filesystem::path& path, const Image& image);
/// Depth as 16-bit PNG at kDepthPngScale; zero marks invalid pixels.
void write_depth_png(const std::filesystem::path& path, const Image& depth);
Image read_depth_png(const std::filesystem::path& path);

/// Area-averaged resize.
Image resize_area(const Image& image, int width, int height);
/// Nearest-neighbour resize for depth maps.
Image resize_nearest(const Image& image, int width, int height);

/// `fx fy cx cy width height` on one line.
void write_calib(const std::filesystem::path& path, const PinholeCamera& camera);
PinholeCamera read_calib(const std::filesystem::path& path);

/// A dataset directory:
///   rgb/            images, processed in lexicographic filename order
///   calib.txt       intrinsics of the stored images
///   timestamps.txt  optional, one timestamp per image (default index / 30)
///   groundtruth.txt optional trajectory
///   depth/          optional 16-bit depth PNGs named like the images
struct Dataset {
  PinholeCamera camera;  // at the working resolution
  std::vector<double> timestamps;
  std::vector<Image> images;
  std::vector<TimedPose> groundtruth;
  std::vector<Image> depths;  // empty when absent
};

/// Reads the dataset and resizes everything to `width` x `height`. Throws
/// InputError for missing or empty inputs.
Dataset load_dataset(const std::filesystem::path& directory, int width, int height);

}  // namespace anchorvo
