#include "anchorvo/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "anchorvo/errors.hpp"

namespace anchorvo {

namespace pt = boost::property_tree;

namespace {

/// Calls f(section, key, field) for every configurable field.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("image", "width", c.width);
  f("image", "height", c.height);

  f("window", "max_keyframes", c.max_keyframes);
  f("window", "support_per_gap", c.support_per_gap);
  f("window", "max_frames", c.max_frames);
  f("window", "max_anchors", c.max_anchors);

  f("sampling", "gradient_patch", c.gradient_patch);
  f("sampling", "cvr_variance_fraction", c.cvr_variance_fraction);
  f("sampling", "cvr_min_dist", c.cvr_min_dist);
  f("sampling", "cvr_border", c.cvr_border);

  f("kernel", "num_scales", c.kernel.num_scales);
  f("kernel", "base_sigma", c.kernel.base_sigma);
  f("kernel", "pixel_length_scale", c.kernel.pixel_length_scale);
  f("kernel", "feature_length_scale", c.kernel.feature_length_scale);
  f("kernel", "signal_variance", c.kernel.signal_variance);
  f("kernel", "relative_jitter", c.kernel.relative_jitter);

  f("tracking", "levels", c.tracking.num_levels);
  f("tracking", "iterations", c.tracking.iterations);
  f("tracking", "convergence", c.tracking.convergence);
  f("tracking", "max_rejections", c.tracking.max_rejections);
  f("tracking", "min_valid_fraction", c.tracking.min_valid_fraction);
  f("tracking", "border_margin", c.tracking.border_margin);

  f("keyframe", "translation_threshold", c.keyframes.translation_threshold);
  f("keyframe", "overlap_threshold", c.keyframes.overlap_threshold);
  f("keyframe", "support_scale", c.keyframes.support_scale);

  f("visibility", "threshold", c.visibility_threshold);
  f("visibility", "bootstrap_sigma_d", c.bootstrap_sigma_d);
  f("visibility", "observation_cell", c.observation_cell);

  f("robust", "huber_delta", c.backend.robust.huber_delta);
  f("robust", "sigma_min", c.backend.robust.sigma_min);
  f("robust", "mad_scale", c.backend.robust.mad_scale);

  f("backend", "median_depth_sigma", c.backend.median_depth_sigma);
  f("backend", "pixel_sigma", c.backend.pixel_sigma);
  f("backend", "gp_prior_scale", c.backend.gp_prior_scale);
  f("backend", "gauge_pose_sigma", c.backend.gauge_pose_sigma);
  f("backend", "gauge_affine_sigma", c.backend.gauge_affine_sigma);
  f("backend", "marginal_sigma", c.backend.marginal_sigma);
  f("backend", "iterations", c.backend.max_iterations);
  f("backend", "step_tolerance", c.backend.step_tolerance);
  f("backend", "initial_lambda_factor", c.backend.initial_lambda_factor);
  f("backend", "max_rejections", c.backend.max_rejections);
  f("backend", "border_margin", c.backend.photometric.border_margin);

  f("pipeline", "initial_depth", c.initial_depth);
  f("pipeline", "anchor_sharing", c.anchor_sharing);
  f("pipeline", "optimize_on_support", c.optimize_on_support);
  f("pipeline", "check_anchoring", c.check_anchoring);
  f("pipeline", "seed", c.seed);
}

template <class T>
void read_value(const pt::ptree& section, const std::string& key, T& field) {
  const auto child = section.get_child_optional(key);
  if (!child) return;
  const auto v = child->get_value_optional<T>();
  if (!v) throw ConfigError("'" + key + "' has the wrong type: '" + child->data() + "'");
  field = *v;
}

void read_value(const pt::ptree& section, const std::string& key, std::vector<int>& field) {
  const auto text = section.get_optional<std::string>(key);
  if (!text) return;
  std::istringstream in(*text);
  std::vector<int> values;
  int v = 0;
  while (in >> v) values.push_back(v);
  if (!in.eof() || values.empty()) throw ConfigError("'" + key + "' must be a list of integers");
  field = values;
}

void read_value(const pt::ptree& section, const std::string& key, bool& field) {
  const auto text = section.get_optional<std::string>(key);
  if (!text) return;
  if (*text == "true" || *text == "1" || *text == "yes") {
    field = true;
  } else if (*text == "false" || *text == "0" || *text == "no") {
    field = false;
  } else {
    throw ConfigError("'" + key + "' must be a boolean");
  }
}

std::string to_text(int v) { return std::to_string(v); }
std::string to_text(std::uint64_t v) { return std::to_string(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
/// Shortest text that parses back to the same double.
std::string to_text(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}
std::string to_text(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid configuration: " + what);
}

}  // namespace

void PipelineConfig::validate() const {
  require(width >= 32 && height >= 32, "image size must be at least 32 x 32");
  require(max_keyframes >= 2, "window.max_keyframes must be >= 2");
  require(support_per_gap >= 0, "window.support_per_gap must be >= 0");
  require(max_frames >= max_keyframes, "window.max_frames must be >= window.max_keyframes");
  require(max_anchors >= 1, "window.max_anchors must be >= 1");
  require(gradient_patch >= 1, "sampling.gradient_patch must be >= 1");
  require(cvr_variance_fraction >= 0.0 && cvr_variance_fraction < 1.0, "sampling.cvr_variance_fraction in [0, 1)");
  require(cvr_min_dist >= 0.0 && cvr_border >= 0.0, "sampling distances must be non-negative");
  require(kernel.num_scales >= 1, "kernel.num_scales must be >= 1");
  require(kernel.base_sigma > 0.0, "kernel.base_sigma must be positive");
  require(kernel.pixel_length_scale > 0.0 && kernel.feature_length_scale > 0.0, "kernel length scales must be positive");
  require(kernel.signal_variance > 0.0, "kernel.signal_variance must be positive");
  require(kernel.relative_jitter > 0.0 && kernel.relative_jitter < 1.0, "kernel.relative_jitter in (0, 1)");
  require(tracking.num_levels >= 1 && tracking.num_levels <= 6, "tracking.levels in [1, 6]");
  require(!tracking.iterations.empty(), "tracking.iterations must not be empty");
  for (const int it : tracking.iterations) require(it >= 1, "tracking.iterations entries must be >= 1");
  require(tracking.min_valid_fraction > 0.0 && tracking.min_valid_fraction <= 1.0,
          "tracking.min_valid_fraction in (0, 1]");
  require(tracking.max_rejections >= 0, "tracking.max_rejections must be >= 0");
  require(keyframes.translation_threshold > 0.0, "keyframe.translation_threshold must be positive");
  require(keyframes.overlap_threshold > 0.0 && keyframes.overlap_threshold < 1.0, "keyframe.overlap_threshold in (0, 1)");
  require(keyframes.support_scale > 0.0 && keyframes.support_scale <= 1.0, "keyframe.support_scale in (0, 1]");
  require(visibility_threshold > 0.0, "visibility.threshold must be positive");
  require(bootstrap_sigma_d > 0.0, "visibility.bootstrap_sigma_d must be positive");
  require(observation_cell >= 1, "visibility.observation_cell must be >= 1");
  require(backend.robust.huber_delta > 0.0 && backend.robust.sigma_min > 0.0 && backend.robust.mad_scale > 0.0,
          "robust parameters must be positive");
  require(backend.median_depth_sigma > 0.0 && backend.pixel_sigma > 0.0 && backend.gp_prior_scale >= 0.0 &&
              backend.gauge_pose_sigma > 0.0 && backend.gauge_affine_sigma > 0.0 && backend.marginal_sigma > 0.0,
          "backend prior sigmas must be positive");
  require(backend.max_iterations >= 1, "backend.iterations must be >= 1");
  require(backend.max_rejections >= 0, "backend.max_rejections must be >= 0");
  require(backend.initial_lambda_factor > 0.0, "backend.initial_lambda_factor must be positive");
  require(initial_depth > 0.0, "pipeline.initial_depth must be positive");
}

PipelineConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("malformed configuration: " + e.message());
  }

  PipelineConfig config;
  std::set<std::string> known;
  try {
    visit_fields(config, [&](const char* section, const char* key, auto& field) {
      known.insert(std::string(section) + "/" + key);
      if (const auto s = tree.get_child_optional(pt::ptree::path_type(section, '/'))) {
        read_value(*s, key, field);
      }
    });
  } catch (const pt::ptree_bad_data& e) {
    throw ConfigError(std::string("configuration value has the wrong type: ") + e.what());
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) throw ConfigError("configuration key '" + section + "' must live in a section");
    for (const auto& [key, value] : entries) {
      if (!known.contains(section + "/" + key)) throw ConfigError("unknown configuration key [" + section + "] " + key);
    }
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string dump_config(const PipelineConfig& config) {
  std::string out;
  std::string current;
  PipelineConfig copy = config;
  visit_fields(copy, [&](const char* section, const char* key, auto& field) {
    if (current != section) {
      out += (out.empty() ? "[" : "\n[") + std::string(section) + "]\n";
      current = section;
    }
    out += std::string(key) + " = " + to_text(field) + "\n";
  });
  return out;
}

}  // namespace anchorvo
