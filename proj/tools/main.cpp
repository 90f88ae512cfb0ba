#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "anchorvo/config.hpp"
#include "anchorvo/errors.hpp"
#include "anchorvo/io.hpp"
#include "anchorvo/pipeline.hpp"
#include "anchorvo/synth.hpp"

namespace fs = std::filesystem;
using namespace anchorvo;

namespace {

/// Exit codes: 0 success, 1 usage or input error, 2 tracking lost.
constexpr int kExitError = 1;
constexpr int kExitTrackingLost = 2;

/// A directory is a dataset; anything else is a scene description.
Sequence load_source(const fs::path& source, const PipelineConfig& config) {
  if (fs::is_directory(source)) return sequence_from_dataset(load_dataset(source, config.width, config.height));
  if (!fs::is_regular_file(source)) throw InputError("input '" + source.string() + "' does not exist");
  return sequence_from_scene(load_scene(source, config.seed), config.width, config.height);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text << '\n';
}

int run_command(const fs::path& source, const fs::path& config_path, const fs::path& out_dir,
                std::optional<std::uint64_t> seed, bool evaluate) {
  PipelineConfig config = config_path.empty() ? PipelineConfig{} : load_config(config_path);
  if (seed) config.seed = *seed;
  const Sequence sequence = load_source(source, config);

  std::ostringstream log;
  const RunResult result = run_pipeline(sequence, config, &log);
  write_run_artifacts(out_dir, result, sequence, config, log.str());
  std::cout << "processed " << result.frames_processed << " frames, " << result.keyframes.size() << " keyframes, "
            << result.anchors.size() << " anchors\n";

  if (evaluate) {
    if (sequence.groundtruth.empty()) throw InputError("--eval needs ground-truth poses");
    const std::string report = eval_report_json(evaluate_run(result, sequence));
    write_text(out_dir / "eval.json", report);
    std::cout << report << '\n';
  }
  if (result.tracking_lost) {
    std::cerr << result.status << '\n';
    return kExitTrackingLost;
  }
  return 0;
}

int render_command(const fs::path& scene_path, const fs::path& out_dir, std::uint64_t seed) {
  write_dataset(load_scene(scene_path, seed), out_dir);
  std::cout << "wrote " << out_dir.string() << '\n';
  return 0;
}

int eval_command(const fs::path& run_dir, const fs::path& dataset_dir, const fs::path& config_path) {
  const PipelineConfig config = config_path.empty() ? PipelineConfig{} : load_config(config_path);
  const Sequence sequence = sequence_from_dataset(load_dataset(dataset_dir, config.width, config.height));
  const auto [trajectory, keyframes] = read_run_artifacts(run_dir);
  const std::string report = eval_report_json(evaluate_run(trajectory, keyframes, sequence));
  write_text(run_dir / "eval.json", report);
  std::cout << report << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-based dense monocular visual odometry"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the pipeline on a dataset directory or a scene description");
  std::string run_source;
  std::string run_config;
  std::string run_out;
  std::optional<std::uint64_t> run_seed;
  bool run_eval = false;
  run->add_option("source", run_source, "Dataset directory or scene .ini")->required();
  run->add_option("--config", run_config, "Pipeline configuration (.ini)");
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--seed", run_seed, "Seed; offsets scene texture seeds");
  run->add_flag("--eval", run_eval, "Write eval.json against the ground truth");

  auto* render = app.add_subcommand("render", "Render a scene description to a dataset directory");
  std::string render_scene;
  std::string render_out;
  std::uint64_t render_seed = 0;
  render->add_option("scene", render_scene, "Scene .ini")->required();
  render->add_option("--out", render_out, "Output dataset directory")->required();
  render->add_option("--seed", render_seed, "Offset added to every texture seed");

  auto* eval = app.add_subcommand("eval", "Compute metrics of a finished run");
  std::string eval_run;
  std::string eval_dataset;
  std::string eval_config;
  eval->add_option("run_dir", eval_run, "Run output directory")->required();
  eval->add_option("dataset", eval_dataset, "Dataset directory with ground truth")->required();
  eval->add_option("--config", eval_config, "Configuration used for the run (working resolution)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version requests succeed; every other parse failure is a usage error.
    return app.exit(e) == 0 ? 0 : kExitError;
  }

  try {
    if (*run) return run_command(run_source, run_config, run_out, run_seed, run_eval);
    if (*render) return render_command(render_scene, render_out, render_seed);
    return eval_command(eval_run, eval_dataset, eval_config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
