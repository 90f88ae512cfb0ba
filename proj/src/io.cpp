#include "anchorvo/io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "anchorvo/errors.hpp"

namespace anchorvo {

namespace fs = std::filesystem;

namespace {

cv::Mat to_mat(const Image& image) {
  cv::Mat m(image.height(), image.width(), CV_64F);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) m.at<double>(y, x) = image(x, y);
  }
  return m;
}

Image from_mat(const cv::Mat& m) {
  cv::Mat d;
  m.convertTo(d, CV_64F);
  Image out(d.cols, d.rows);
  for (int y = 0; y < d.rows; ++y) {
    for (int x = 0; x < d.cols; ++x) out(x, y) = d.at<double>(y, x);
  }
  return out;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

std::string format_fixed(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

namespace {

double round_fixed(double v) { return std::strtod(format_fixed(v).c_str(), nullptr); }

Eigen::Quaterniond round_fixed(const Eigen::Quaterniond& q) {
  return {round_fixed(q.w()), round_fixed(q.x()), round_fixed(q.y()), round_fixed(q.z())};
}

/// Six-decimal quaternion that survives parse and re-export unchanged.
/// Parsing normalizes, which can push a plainly rounded component across a
/// rounding boundary, so iterate to a fixed point of that round trip.
Eigen::Quaterniond stable_quaternion(const SE3Pose& pose) {
  Eigen::Quaterniond q = round_fixed(pose.quaternion());
  for (int i = 0; i < 8; ++i) {
    const Eigen::Quaterniond next = round_fixed(SE3Pose::from_quaternion(q, Vec3::Zero()).quaternion());
    if (next.coeffs() == q.coeffs()) break;
    q = next;
  }
  return q;
}

}  // namespace

std::string format_trajectory(std::span<const TimedPose> poses) {
  std::string out;
  for (const TimedPose& p : poses) {
    const Vec3& t = p.pose.translation();
    const Eigen::Quaterniond q = stable_quaternion(p.pose);
    for (const double v : {p.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z()}) {
      out += format_fixed(v);
      out += ' ';
    }
    out += format_fixed(q.w());
    out += '\n';
  }
  return out;
}

void export_trajectory(const fs::path& path, std::span<const TimedPose> poses) {
  std::ofstream out = open_output(path);
  out << format_trajectory(poses);
}

std::vector<TimedPose> parse_trajectory(std::istream& in) {
  std::vector<TimedPose> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw InputError("malformed trajectory line " + std::to_string(number));
    }
    out.push_back({t, SE3Pose::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz))});
  }
  return out;
}

std::vector<TimedPose> load_trajectory(const fs::path& path) {
  std::ifstream in = open_input(path);
  return parse_trajectory(in);
}

void export_pointcloud(const fs::path& path, const PointCloud& cloud) {
  const auto n = static_cast<std::size_t>(cloud.points.cols());
  if (cloud.intensity.size() != n || cloud.is_anchor.size() != n) {
    throw DimensionError("point cloud attribute sizes disagree");
  }
  std::ofstream out = open_output(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << n
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty uchar intensity\n"
         "property uchar anchor\nend_header\n";
  char buf[128];
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cloud.points.col(static_cast<Eigen::Index>(i));
    const int grey = static_cast<int>(std::lround(std::clamp(cloud.intensity[i], 0.0, 1.0) * 255.0));
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d\n", c.x(), c.y(), c.z(), grey, cloud.is_anchor[i] ? 1 : 0);
    out << buf;
  }
}

PointCloud load_pointcloud(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) n = std::stoul(line.substr(15));
    if (line == "end_header") break;
  }
  PointCloud cloud;
  cloud.points.resize(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    int grey, anchor;
    if (!(in >> x >> y >> z >> grey >> anchor)) throw InputError("truncated PLY '" + path.string() + "'");
    cloud.points.col(static_cast<Eigen::Index>(i)) = Vec3(x, y, z);
    cloud.intensity.push_back(grey / 255.0);
    cloud.is_anchor.push_back(static_cast<char>(anchor != 0));
  }
  return cloud;
}

Image read_image(const fs::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (raw.empty()) throw InputError("cannot read image '" + path.string() + "'");
  cv::Mat grey;
  if (raw.channels() == 3) {
    cv::cvtColor(raw, grey, cv::COLOR_BGR2GRAY);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, grey, cv::COLOR_BGRA2GRAY);
  } else {
    grey = raw;
  }
  double scale = 1.0;
  switch (grey.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: break;
  }
  cv::Mat d;
  grey.convertTo(d, CV_64F, scale);
  return from_mat(d);
}

void write_image_png16(const fs::path& path, const Image& image) {
  cv::Mat out;
  to_mat(image).convertTo(out, CV_16U, 65535.0);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw InputError("cannot write image '" + path.string() + "'");
}

void write_depth_png(const fs::path& path, const Image& depth) {
  cv::Mat out;
  to_mat(depth).convertTo(out, CV_16U, kDepthPngScale);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw InputError("cannot write depth '" + path.string() + "'");
}

Image read_depth_png(const fs::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw InputError("cannot read depth '" + path.string() + "'");
  cv::Mat d;
  raw.convertTo(d, CV_64F, 1.0 / kDepthPngScale);
  return from_mat(d);
}

Image resize_area(const Image& image, int width, int height) {
  if (image.width() == width && image.height() == height) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  return from_mat(out);
}

Image resize_nearest(const Image& image, int width, int height) {
  if (image.width() == width && image.height() == height) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return from_mat(out);
}

void write_calib(const fs::path& path, const PinholeCamera& camera) {
  std::ofstream out = open_output(path);
  out << format_fixed(camera.fx) << ' ' << format_fixed(camera.fy) << ' ' << format_fixed(camera.cx) << ' '
      << format_fixed(camera.cy) << ' ' << camera.width << ' ' << camera.height << '\n';
}

PinholeCamera read_calib(const fs::path& path) {
  std::ifstream in = open_input(path);
  PinholeCamera camera;
  if (!(in >> camera.fx >> camera.fy >> camera.cx >> camera.cy >> camera.width >> camera.height)) {
    throw InputError("calib.txt must hold 'fx fy cx cy width height'");
  }
  camera.validate();
  return camera;
}

Dataset load_dataset(const fs::path& directory, int width, int height) {
  if (!fs::is_directory(directory)) throw InputError("dataset '" + directory.string() + "' is not a directory");
  const fs::path rgb = directory / "rgb";
  if (!fs::is_directory(rgb)) throw InputError("dataset has no rgb/ directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(rgb)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("dataset '" + directory.string() + "' has no images");

  Dataset ds;
  const PinholeCamera native = read_calib(directory / "calib.txt");
  ds.camera = native.resized(width, height);

  const fs::path times = directory / "timestamps.txt";
  if (fs::exists(times)) {
    std::ifstream in = open_input(times);
    double t;
    while (in >> t) ds.timestamps.push_back(t);
    if (ds.timestamps.size() != files.size()) throw InputError("timestamps.txt does not match the image count");
  } else {
    for (std::size_t i = 0; i < files.size(); ++i) ds.timestamps.push_back(static_cast<double>(i) / 30.0);
  }

  const fs::path depth_dir = directory / "depth";
  const bool has_depth = fs::is_directory(depth_dir);
  for (const fs::path& f : files) {
    const Image image = read_image(f);
    if (image.width() != native.width || image.height() != native.height) {
      throw InputError("image '" + f.filename().string() + "' does not match calib.txt");
    }
    ds.images.push_back(resize_area(image, width, height));
    if (has_depth) {
      const fs::path d = depth_dir / f.filename();
      if (!fs::exists(d)) throw InputError("missing depth map for '" + f.filename().string() + "'");
      ds.depths.push_back(resize_nearest(read_depth_png(d), width, height));
    }
  }
  if (fs::exists(directory / "groundtruth.txt")) ds.groundtruth = load_trajectory(directory / "groundtruth.txt");
  return ds;
}

}  // namespace anchorvo
