// lgsim: simulate, sample, evaluate, train the toy adaptation model and check
// gradients. Exit codes: 0 success, 2 usage or configuration error, 3 runtime
// failure (including a failed gradient check or diverged training).

#include "lgsim/da_core.hpp"
#include "lgsim/errors.hpp"
#include "lgsim/eval.hpp"
#include "lgsim/pipeline.hpp"
#include "lgsim/plot.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace lgsim;

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw IoFailure("cannot write " + file.string());
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

DMinPolicy parse_dmin(const std::string& text) {
  if (text == "per-point") return DMinPolicy::per_point();
  if (text.rfind("const:", 0) == 0) {
    try {
      std::size_t used = 0;
      const std::string v = text.substr(6);
      const double px = std::stod(v, &used);
      if (used == v.size() && std::isfinite(px) && px >= 0.0) return DMinPolicy::constant(px);
    } catch (const std::exception&) {
    }
  }
  throw UsageError("--dmin expects per-point or const:<pixels>, got '" + text + "'");
}

StartPolicy parse_start(const std::string& text) {
  if (text == "edge-random") return StartPolicy::EdgeRandom;
  if (text == "edge-deterministic") return StartPolicy::EdgeDeterministic;
  throw UsageError("--start expects edge-random or edge-deterministic, got '" + text + "'");
}

GenerationMode parse_mode(const std::string& text) {
  try {
    return parse_generation_mode(text);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

struct SamplerFlags {
  std::uint64_t seed = 0;
  std::string dmin = "per-point";
  std::string start = "edge-random";
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    app->add_option("--dmin", dmin, "d_min policy: per-point or const:<pixels>")->capture_default_str();
    app->add_option("--start", start, "Walk start: edge-random or edge-deterministic")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 256u));
  }
  SamplerConfig config() const {
    SamplerConfig c;
    c.d_min = parse_dmin(dmin);
    c.start = parse_start(start);
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_pr_plots(const EvalTable& table, const fs::path& out) {
  for (IouMetric m : {IouMetric::Bev, IouMetric::ThreeD}) {
    std::vector<PlotSeries> series;
    for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
      const ApResult& cell = table.at(m, d);
      PlotSeries s{to_string(d) + " (AP " + percent(cell.ap) + ")", {}, {}};
      for (const auto& p : cell.pr) {
        s.x.push_back(p.recall);
        s.y.push_back(p.precision);
      }
      series.push_back(std::move(s));
    }
    PlotSpec spec{"Car " + std::string(m == IouMetric::Bev ? "BEV" : "3D") + " precision-recall", "recall",
                  "precision", 0.0, 1.0, 0.0, 1.0};
    write_text(out / ("pr_" + to_string(m) + ".svg"), svg_line_chart(spec, series));
  }
}

void write_loss_plot(const ToyReport& report, const fs::path& file) {
  std::vector<PlotSeries> series(5);
  const char* names[] = {"detection", "sample", "anchor", "consistency", "total"};
  for (std::size_t k = 0; k < series.size(); ++k) series[k].name = names[k];
  for (const auto& e : report.epochs) {
    const double v[] = {e.loss.detection, e.loss.sample, e.loss.anchor, e.loss.consistency, e.loss.total};
    for (std::size_t k = 0; k < series.size(); ++k) {
      series[k].x.push_back(e.epoch);
      series[k].y.push_back(v[k]);
    }
  }
  char title[96];
  std::snprintf(title, sizeof title, "Toy adversarial training (lambda %.3g, r %.3g)", report.config.lambda,
                report.config.grl.r);
  write_text(file, svg_line_chart({title, "epoch", "loss"}, series));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR simulation, guided sampling, domain adaptation toys and KITTI-style evaluation"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Ray-cast scans, depth maps and labels for a scene file");
  std::string scenes;
  fs::path out;
  std::optional<std::uint64_t> sim_seed;
  unsigned threads = 1;
  sim->add_option("--scenes", scenes, "Scene YAML file")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_option("--seed", sim_seed, "LiDAR noise/dropout seed (overrides the scene file)");
  sim->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 256u));

  // sample
  auto* smp = app.add_subcommand("sample", "Convert a simulated tree into clouds for one generation mode");
  fs::path input;
  std::string mode;
  SamplerFlags sampler;
  smp->add_option("--input", input, "Simulated dataset directory or manifest")->required()->check(CLI::ExistingPath);
  smp->add_option("--mode", mode, "carla-origin, depth-bp or lidar-guided")->required();
  smp->add_option("--out", out, "Output directory (defaults to the input directory)");
  sampler.add(smp);

  // export
  auto* exp = app.add_subcommand("export", "simulate followed by sample for several modes");
  std::vector<std::string> modes{"carla-origin", "depth-bp", "lidar-guided"};
  SamplerFlags exp_sampler;
  exp->add_option("--scenes", scenes, "Scene YAML file")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Output directory")->required();
  exp->add_option("--mode", modes, "Generation modes (repeatable)")->capture_default_str();
  exp->add_option("--lidar-seed", sim_seed, "LiDAR noise/dropout seed (overrides the scene file)");
  exp_sampler.add(exp);

  // eval
  auto* ev = app.add_subcommand("eval", "Average precision of detections against a dataset");
  fs::path gt, detections;
  EvalOptions eval_opts;
  ev->add_option("--gt", gt, "Ground-truth dataset directory or manifest")->required()->check(CLI::ExistingPath);
  ev->add_option("--detections", detections, "Directory of <frame id>.txt detection files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_option("--ap-points", eval_opts.ap_points, "Recall sampling: 11 or 40")
      ->capture_default_str()
      ->check(CLI::IsMember({11, 40}));
  ev->add_option("--split", eval_opts.split, "Only frames of this split (default: all)");
  ev->add_option("--iou", eval_opts.iou_threshold, "IoU threshold")->capture_default_str()->check(CLI::Range(1e-9, 1.0));
  ev->add_option("--easy-points", eval_opts.thresholds.easy, "Points for easy")->capture_default_str();
  ev->add_option("--moderate-points", eval_opts.thresholds.moderate, "Points for moderate")->capture_default_str();
  ev->add_option("--threads", eval_opts.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 256u));

  // jitter
  auto* jit = app.add_subcommand("jitter", "Write ground truth perturbed by Gaussian noise as detections");
  double sigma = 0.1;
  std::uint64_t seed = 0;
  std::string jitter_split;
  jit->add_option("--gt", gt, "Ground-truth dataset directory or manifest")->required()->check(CLI::ExistingPath);
  jit->add_option("--out", out, "Detection directory")->required();
  jit->add_option("--sigma", sigma, "Noise on centre and dimensions (metres) and yaw (radians)")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  jit->add_option("--seed", seed, "Noise seed")->capture_default_str();
  jit->add_option("--split", jitter_split, "Only frames of this split (default: all)");

  // train-toy
  auto* toy = app.add_subcommand("train-toy", "Adversarial domain adaptation on synthetic feature maps");
  ToyTrainConfig toy_cfg;
  bool location_sum = false;
  toy->add_option("--lambda", toy_cfg.lambda, "Weight of the adaptation losses")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  toy->add_option("--grl-r", toy_cfg.grl.r, "Gradient reversal magnitude")->capture_default_str()->check(
      CLI::PositiveNumber);
  toy->add_option("--epochs", toy_cfg.epochs, "Training epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  toy->add_option("--seed", toy_cfg.seed, "Data and initialisation seed")->capture_default_str();
  toy->add_flag("--location-sum", location_sum, "Sum domain terms over map locations instead of averaging");
  toy->add_option("--out", out, "Output directory")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  GradcheckOptions gc_opts;
  gc->add_option("--seed", gc_opts.seed, "Seed for random configurations")->capture_default_str();
  gc->add_option("--configs", gc_opts.configurations, "Random configurations")->capture_default_str()->check(
      CLI::Range(1, 100000));
  gc->add_option("--out", out, "Directory for gradcheck.json");
  gc->add_flag("--inject-grl-sign-bug", gc_opts.inject_grl_sign_bug)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*sim) {
      SceneSuite suite = load_scene_suite(scenes);
      if (sim_seed) suite.sensors.lidar.seed = *sim_seed;
      const auto m = simulate_dataset(suite, out, threads);
      std::cout << "simulated " << m.frames.size() << " frames into " << out.string() << "\n";
    } else if (*smp) {
      const GenerationMode gm = parse_mode(mode);
      const SamplerConfig cfg = sampler.config();
      const auto raw = load_manifest(manifest_path(input));
      const fs::path target = out.empty() ? raw.root : out;
      const auto m = sample_dataset(raw, gm, cfg, target);
      std::cout << "sampled " << m.frames.size() << " frames (" << mode << ") into " << target.string() << "\n";
    } else if (*exp) {
      std::vector<GenerationMode> gms;
      for (const auto& s : modes) gms.push_back(parse_mode(s));
      const SamplerConfig cfg = exp_sampler.config();
      SceneSuite suite = load_scene_suite(scenes);
      if (sim_seed) suite.sensors.lidar.seed = *sim_seed;
      const auto m = export_dataset(suite, gms, cfg, out);
      std::cout << "exported " << m.frames.size() << " frames into " << out.string() << "\n";
    } else if (*ev) {
      try {
        eval_opts.thresholds.validate();
      } catch (const BadThresholds& e) {
        throw UsageError(e.what());
      }
      const auto manifest = load_manifest(manifest_path(gt));
      const auto dets = read_detections(detections, eval_frame_ids(manifest, eval_opts), eval_opts.class_name);
      const EvalTable table = evaluate_dataset(manifest, dets, eval_opts);
      write_text(out / "eval.csv", eval_to_csv(table));
      write_text(out / "eval.json", eval_to_json(table));
      write_pr_plots(table, out);
      std::cout << eval_to_csv(table);
    } else if (*jit) {
      EvalOptions opts;
      opts.split = jitter_split;
      const auto manifest = load_manifest(manifest_path(gt));
      const auto dets = jittered_ground_truth(load_ground_truth(manifest, opts), sigma, seed);
      fs::create_directories(out);
      for (const auto& [id, list] : dets) write_detections(list, out / (id + ".txt"));
      std::cout << "wrote detections for " << dets.size() << " frames into " << out.string() << "\n";
    } else if (*toy) {
      toy_cfg.reduce = location_sum ? LocationReduce::Sum : LocationReduce::Mean;
      try {
        const ToyReport report = toy_adversarial_train(toy_cfg);
        write_text(out / "report.json", report_to_json(report));
        write_loss_plot(report, out / "loss.svg");
        std::printf("source_task_accuracy %.4f\ntarget_task_accuracy %.4f\ndomain_accuracy %.4f\n",
                    report.source_task_accuracy, report.target_task_accuracy, report.domain_accuracy);
      } catch (const DivergedTraining& e) {
        write_text(out / "report.json", report_to_json(e.partial()));
        write_loss_plot(e.partial(), out / "loss.svg");
        throw;
      }
    } else if (*gc) {
      const GradcheckReport report = run_gradcheck(gc_opts);
      std::printf("%-24s %10s %14s  %s\n", "op", "checked", "max_rel_error", "result");
      for (const auto& e : report.entries) {
        std::printf("%-24s %10zu %14.3e  %s\n", e.op.c_str(), e.checked, e.max_rel_error,
                    e.max_rel_error < report.tolerance ? "pass" : "FAIL");
      }
      if (!out.empty()) write_text(out / "gradcheck.json", gradcheck_to_json(report));
      if (!report.passed()) {
        std::cerr << "error: GradcheckFailed: max relative error " << report.max_rel_error() << " >= "
                  << report.tolerance << "\n";
        return kExitRuntime;
      }
      std::printf("all %zu ops pass (tolerance %.0e)\n", report.entries.size(), report.tolerance);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: Runtime: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
