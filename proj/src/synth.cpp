#include "anchorvo/synth.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "anchorvo/errors.hpp"
#include "anchorvo/io.hpp"

namespace anchorvo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h =
      splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) ^ splitmix64(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

Mat3 rotation_y(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 r;
  r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return r;
}

Vec3 orthogonal_axis(const Vec3& normal, const Vec3& hint) {
  Vec3 u = hint - normal * normal.dot(hint);
  if (u.norm() < 1e-9) u = Vec3::UnitY() - normal * normal.dot(Vec3::UnitY());
  return u.normalized();
}

PlanePrimitive make_plane(const Vec3& center, const Vec3& normal, double half_u, double half_v,
                          const ValueNoise& texture, double albedo, double contrast) {
  PlanePrimitive p;
  p.center = center;
  p.normal = normal.normalized();
  p.axis_u = orthogonal_axis(p.normal, Vec3::UnitX());
  p.half_u = half_u;
  p.half_v = half_v;
  p.texture = texture;
  p.albedo = albedo;
  p.contrast = contrast;
  return p;
}

Vec3 parse_vec3(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  Vec3 v;
  if (!(in >> v.x() >> v.y() >> v.z())) throw InputError("expected three numbers for '" + key + "'");
  return v;
}

struct Hit {
  double t = 0.0;
  const PlanePrimitive* primitive = nullptr;
};

Hit nearest_hit(const SyntheticScene& scene, const Vec3& origin, const Vec3& direction) {
  Hit best;
  for (const PlanePrimitive& p : scene.primitives) {
    const auto t = p.intersect(origin, direction);
    if (t && (best.primitive == nullptr || *t < best.t)) best = {*t, &p};
  }
  return best;
}

double shade(const SyntheticScene& scene, const Hit& hit, const Vec3& origin, const Vec3& direction) {
  const Vec3 point = origin + hit.t * direction;
  Vec3 n = hit.primitive->normal;
  if (n.dot(direction) > 0.0) n = -n;
  const double lambert = std::max(0.0, -n.dot(scene.light_direction));
  return hit.primitive->albedo_at(point) * (scene.ambient + (1.0 - scene.ambient) * lambert);
}

}  // namespace

double ValueNoise::operator()(double u, double v) const {
  double sum = 0.0;
  double norm = 0.0;
  double amplitude = 1.0;
  double frequency = 1.0 / cell;
  for (int o = 0; o < octaves; ++o) {
    const double x = u * frequency;
    const double y = v * frequency;
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const double tx = quintic(x - fx);
    const double ty = quintic(y - fy);
    const std::uint64_t s = splitmix64(seed + static_cast<std::uint64_t>(o));
    const double v00 = lattice(s, ix, iy);
    const double v10 = lattice(s, ix + 1, iy);
    const double v01 = lattice(s, ix, iy + 1);
    const double v11 = lattice(s, ix + 1, iy + 1);
    const double top = v00 + tx * (v10 - v00);
    const double bottom = v01 + tx * (v11 - v01);
    sum += amplitude * (top + ty * (bottom - top));
    norm += amplitude;
    amplitude *= 0.5;
    frequency *= 2.0;
  }
  return sum / norm;
}

std::optional<double> PlanePrimitive::intersect(const Vec3& origin, const Vec3& direction) const {
  const double denom = normal.dot(direction);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = normal.dot(center - origin) / denom;
  if (!(t > 0.0)) return std::nullopt;
  const Vec3 local = origin + t * direction - center;
  if (half_u > 0.0 && std::abs(local.dot(axis_u)) > half_u) return std::nullopt;
  if (half_v > 0.0 && std::abs(local.dot(axis_v())) > half_v) return std::nullopt;
  return t;
}

double PlanePrimitive::albedo_at(const Vec3& point) const {
  const Vec3 local = point - center;
  const double n = texture(local.dot(axis_u), local.dot(axis_v()));
  return std::clamp(albedo + contrast * (n - 0.5), 0.02, 1.0);
}

std::vector<PlanePrimitive> box_faces(const Vec3& min_corner, const Vec3& max_corner, const ValueNoise& texture,
                                      double albedo, double contrast) {
  const Vec3 c = 0.5 * (min_corner + max_corner);
  const Vec3 h = 0.5 * (max_corner - min_corner);
  std::vector<PlanePrimitive> faces;
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    for (const double side : {-1.0, 1.0}) {
      Vec3 center = c;
      center(axis) += side * h(axis);
      PlanePrimitive p;
      p.center = center;
      p.normal = Vec3::Unit(axis) * side;
      p.axis_u = Vec3::Unit(a);
      // axis_v = normal x axis_u is +-unit(b); the half extents are symmetric.
      p.half_u = h(a);
      p.half_v = h(b);
      p.texture = texture;
      p.texture.seed = texture.seed + static_cast<std::uint64_t>(2 * axis + (side > 0 ? 1 : 0));
      p.albedo = albedo;
      p.contrast = contrast;
      faces.push_back(p);
    }
  }
  return faces;
}

double render_depth_at(const SyntheticScene& scene, const SE3Pose& pose, const PinholeCamera& camera,
                       const Vec2& pixel) {
  const Vec3 direction = pose.rotation() * camera.ray(pixel);
  const Hit hit = nearest_hit(scene, pose.translation(), direction);
  return hit.primitive ? hit.t : 0.0;
}

RenderedFrame render_frame(const SyntheticScene& scene, const SE3Pose& pose, const PinholeCamera& camera) {
  RenderedFrame out{Image(camera.width, camera.height), Image(camera.width, camera.height)};
  const int ss = std::max(1, scene.supersample);
  const Vec3 origin = pose.translation();
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      out.depth(x, y) = render_depth_at(scene, pose, camera, Vec2(x, y));
      double sum = 0.0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const Vec2 p(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5);
          const Vec3 direction = pose.rotation() * camera.ray(p);
          const Hit hit = nearest_hit(scene, origin, direction);
          if (hit.primitive) sum += shade(scene, hit, origin, direction);
        }
      }
      out.image(x, y) = sum / (ss * ss);
    }
  }
  return out;
}

std::vector<SE3Pose> lateral_sweep(int frames, double length, double yaw_amplitude, double bob) {
  std::vector<SE3Pose> poses;
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    const double phase = 2.0 * std::numbers::pi * s;
    poses.emplace_back(rotation_y(yaw_amplitude * std::sin(phase)),
                       Vec3(-0.5 * length + length * s, bob * std::sin(phase), 0.0));
  }
  return poses;
}

std::vector<SE3Pose> straight_line(int frames, const Vec3& direction, double length, double jitter,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 d = direction.normalized();
  std::vector<SE3Pose> poses;
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    Vec3 t = d * length * s;
    if (jitter > 0.0) t += jitter * Vec3(noise(rng), noise(rng), noise(rng));
    poses.emplace_back(Mat3::Identity(), t);
  }
  return poses;
}

std::vector<SE3Pose> circular_arc(int frames, double radius, double angle) {
  std::vector<SE3Pose> poses;
  const Vec3 center(0.0, 0.0, radius);
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.5;
    const double theta = angle * (s - 0.5);
    const Vec3 position = center + radius * Vec3(std::sin(theta), 0.0, -std::cos(theta));
    poses.emplace_back(rotation_y(-theta), position);
  }
  return poses;
}

SyntheticScene two_plane_scene(std::uint64_t seed, int frames) {
  SyntheticScene scene;
  scene.camera = {200.0, 200.0, 127.5, 95.5, 256, 192};
  const std::uint64_t base = 1 + 7919 * seed;
  scene.primitives.push_back(make_plane({0.0, 0.0, 1.3}, {0.1, 0.0, -1.0}, 0.0, 0.0, {base, 0.06, 3}, 0.4, 0.8));
  scene.primitives.push_back(
      make_plane({-0.05, 0.0, 0.8}, {-0.15, 0.1, -1.0}, 0.2, 0.15, {base + 1, 0.04, 3}, 0.8, 0.8));
  scene.trajectory = lateral_sweep(frames, 0.3, 2.0 * std::numbers::pi / 180.0, 0.01);
  for (int i = 0; i < frames; ++i) scene.timestamps.push_back(i / 30.0);
  return scene;
}

SyntheticScene load_scene(const std::filesystem::path& path, std::uint64_t seed_offset) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError("cannot read scene '" + path.string() + "': " + e.message());
  }

  try {
    SyntheticScene scene;
    const pt::ptree& cam = tree.get_child("camera");
    scene.camera = {cam.get<double>("fx"), cam.get<double>("fy"), cam.get<double>("cx"), cam.get<double>("cy"),
                    cam.get<int>("width"), cam.get<int>("height")};
    scene.camera.validate();

    if (const auto render = tree.get_child_optional("render")) {
      scene.supersample = render->get<int>("supersample", scene.supersample);
      scene.ambient = render->get<double>("ambient", scene.ambient);
      if (const auto light = render->get_optional<std::string>("light")) {
        scene.light_direction = parse_vec3(*light, "light").normalized();
      }
    }

    const pt::ptree& traj = tree.get_child("trajectory");
    const std::string type = traj.get<std::string>("type", "lateral");
    const int frames = traj.get<int>("frames", 60);
    const double fps = traj.get<double>("fps", 30.0);
    if (frames < 1 || fps <= 0.0) throw InputError("trajectory needs frames >= 1 and fps > 0");
    const double deg = std::numbers::pi / 180.0;
    if (type == "lateral") {
      scene.trajectory = lateral_sweep(frames, traj.get<double>("length", 0.3),
                                       traj.get<double>("yaw_amplitude_deg", 0.0) * deg, traj.get<double>("bob", 0.0));
    } else if (type == "line") {
      scene.trajectory = straight_line(frames, parse_vec3(traj.get<std::string>("direction", "1 0 0"), "direction"),
                                       traj.get<double>("length", 0.3), traj.get<double>("jitter", 0.0),
                                       traj.get<std::uint64_t>("seed", 0) + seed_offset);
    } else if (type == "arc") {
      scene.trajectory =
          circular_arc(frames, traj.get<double>("radius", 1.0), traj.get<double>("angle_deg", 10.0) * deg);
    } else {
      throw InputError("unknown trajectory type '" + type + "'");
    }
    for (int i = 0; i < frames; ++i) scene.timestamps.push_back(i / fps);

    for (const auto& [name, section] : tree) {
      const bool is_plane = name.rfind("plane", 0) == 0;
      const bool is_box = name.rfind("box", 0) == 0;
      if (!is_plane && !is_box) continue;
      ValueNoise texture{section.get<std::uint64_t>("texture_seed", 1) + seed_offset,
                         section.get<double>("texture_cell", 0.05), section.get<int>("octaves", 3)};
      const double albedo = section.get<double>("albedo", 0.6);
      const double contrast = section.get<double>("contrast", 0.8);
      if (is_plane) {
        PlanePrimitive p = make_plane(parse_vec3(section.get<std::string>("center"), "center"),
                                      parse_vec3(section.get<std::string>("normal"), "normal"),
                                      section.get<double>("half_u", 0.0), section.get<double>("half_v", 0.0), texture,
                                      albedo, contrast);
        if (const auto hint = section.get_optional<std::string>("axis_u")) {
          p.axis_u = orthogonal_axis(p.normal, parse_vec3(*hint, "axis_u"));
        }
        scene.primitives.push_back(p);
      } else {
        const auto faces = box_faces(parse_vec3(section.get<std::string>("min"), "min"),
                                     parse_vec3(section.get<std::string>("max"), "max"), texture, albedo, contrast);
        scene.primitives.insert(scene.primitives.end(), faces.begin(), faces.end());
      }
    }
    if (scene.primitives.empty()) throw InputError("scene has no primitives");
    return scene;
  } catch (const pt::ptree_error& e) {
    throw InputError("malformed scene '" + path.string() + "': " + e.what());
  }
}

void write_dataset(const SyntheticScene& scene, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "rgb");
  fs::create_directories(directory / "depth");
  write_calib(directory / "calib.txt", scene.camera);
  std::ofstream times(directory / "timestamps.txt");
  std::vector<TimedPose> gt;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    const RenderedFrame frame = render_frame(scene, scene.trajectory[i], scene.camera);
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    write_image_png16(directory / "rgb" / name, frame.image);
    write_depth_png(directory / "depth" / name, frame.depth);
    times << format_fixed(scene.timestamps[i]) << '\n';
    gt.push_back({scene.timestamps[i], scene.trajectory[i]});
  }
  export_trajectory(directory / "groundtruth.txt", gt);
}

}  // namespace anchorvo
