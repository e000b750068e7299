#include "rlvo/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rlvo/checkpoint.hpp"
#include "rlvo/config.hpp"
#include "rlvo/errors.hpp"
#include "rlvo/evaluation.hpp"
#include "rlvo/metrics.hpp"
#include "rlvo/trainer.hpp"
#include "rlvo/trajectory_io.hpp"

namespace rlvo {

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> config;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c = g.config ? load_run_config(*g.config) : RunConfig{};
  if (g.seed) c.seed = *g.seed;
  if (g.output_dir) c.output_dir = *g.output_dir;
  c.validate();
  return c;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

int cmd_train(const GlobalOptions& g, std::optional<int> iterations, bool resume, std::ostream& out) {
  RunConfig config = resolve_config(g);
  if (iterations) {
    config.ppo.iterations = *iterations;
    config.validate();
  }
  TrainOptions options;
  options.resume = resume;
  options.log = &out;
  const TrainResult r = train(config, options);
  out << "trained " << r.iterations_completed << " iterations; outputs in "
      << config.output_dir.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::optional<int> episodes;
  std::optional<int> every_k;
  std::vector<std::string> baselines = kBaselineNames;
  bool sample = false;
};

int cmd_eval(const GlobalOptions& g, const EvalArgs& a, std::ostream& out) {
  RunConfig config = resolve_config(g);
  if (a.episodes) config.eval.episodes = *a.episodes;
  if (a.every_k) config.eval.every_k = *a.every_k;
  if (a.sample) config.eval.sample_actions = true;
  config.validate();
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const EvalReport report = evaluate(&ck.agent, a.baselines, config);
  write_eval_outputs(report, config.output_dir, provenance(config));
  out << "policy        ate[m]      completion  keyframes   mean_e_tran  return\n";
  for (const auto& p : report.policies) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s  %-10.4f  %-10.3f  %-10.1f  %-11.5f  %.4f\n",
                  p.name.c_str(), p.mean_ate(), p.completion_rate(), p.mean_keyframes(),
                  p.mean_e_tran(), p.mean_return());
    out << line;
  }
  out << "outputs written to " << config.output_dir.string() << "\n";
  return kExitOk;
}

struct MetricsArgs {
  std::string estimated;
  std::string ground_truth;
  std::optional<double> rpe_window;
  bool kitti_percent = false;
  std::optional<std::string> csv;
};

int cmd_metrics(const GlobalOptions& g, const MetricsArgs& a, std::ostream& out) {
  const RunConfig config = resolve_config(g);
  const Trajectory est = read_tum(std::filesystem::path(a.estimated));
  const Trajectory gt = read_tum(std::filesystem::path(a.ground_truth));
  const AteResult result = ate(est, gt);
  out << "ATE [m]: " << fmt("%.6f", result.rmse) << "\n";
  out << "associated poses: " << result.matched << " of " << gt.size() << "\n";

  std::optional<RpeCdf> rpe;
  if (a.rpe_window) {
    rpe = rpe_distance_windows(est, gt, *a.rpe_window);
    out << "RPE CDF (" << fmt("%g", *a.rpe_window) << " m windows, " << rpe->errors.size()
        << " windows):\n";
    for (const auto& [e, p] : rpe->cdf_points) out << "  " << fmt("%.6f", e) << " " << fmt("%.6f", p) << "\n";
  }
  std::optional<double> percent;
  if (a.kitti_percent) {
    percent = ate_per_distance(est, gt);
    out << "ATE per distance [%]: " << fmt("%.6f", *percent) << "\n";
  }
  if (a.csv) {
    std::ofstream os(*a.csv, std::ios::trunc);
    if (!os) throw Error("cannot write " + *a.csv);
    os << "# " << provenance(config) << "\n" << "metric,value,cumulative_probability\n";
    os << "ate," << format_csv_number(result.rmse) << ",\n";
    if (percent) os << "ate_per_distance_percent," << format_csv_number(*percent) << ",\n";
    if (rpe) {
      for (const auto& [e, p] : rpe->cdf_points) {
        os << "rpe," << format_csv_number(e) << ',' << format_csv_number(p) << "\n";
      }
    }
  }
  return kExitOk;
}

int cmd_align(const GlobalOptions& g, const std::string& est_path, const std::string& gt_path,
              const std::string& out_path, std::ostream& out) {
  const RunConfig config = resolve_config(g);
  const Trajectory est = read_tum(std::filesystem::path(est_path));
  const Trajectory gt = read_tum(std::filesystem::path(gt_path));
  const Association assoc = associate(est, gt);
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  for (std::size_t k = 0; k < assoc.size(); ++k) {
    src.push_back(est[assoc.estimated_index[k]].translation());
    dst.push_back(gt[assoc.ground_truth_index[k]].translation());
  }
  const SimilarityTransform s = umeyama_align(src, dst);
  write_tum(std::filesystem::path(out_path), apply_transform(s, est), {provenance(config)});
  const Quat& q = s.rotation();
  const Vec3& t = s.translation();
  out << "scale: " << fmt("%.12g", s.scale()) << "\n";
  out << "rotation (qx qy qz qw): " << fmt("%.12g", q.x()) << " " << fmt("%.12g", q.y()) << " "
      << fmt("%.12g", q.z()) << " " << fmt("%.12g", q.w()) << "\n";
  out << "translation: " << fmt("%.12g", t.x()) << " " << fmt("%.12g", t.y()) << " "
      << fmt("%.12g", t.z()) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keyframe and grid-size selection agents for a simulated visual odometry front end"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Master seed")->configurable(false);
  app.add_option("--output-dir", g.output_dir, "Directory for run outputs");
  app.add_option("--config", g.config, "JSON run configuration");
  app.fallthrough();

  std::optional<int> iterations;
  bool resume = false;
  CLI::App* train_cmd = app.add_subcommand("train", "Train an agent with PPO");
  train_cmd->add_option("--iterations", iterations, "Override ppo.iterations")->check(CLI::NonNegativeNumber);
  train_cmd->add_flag("--resume", resume, "Continue from the run directory's training state");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against scripted baselines");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_args.episodes, "Held-out episodes")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--every-k", eval_args.every_k, "Period of the every_k baseline")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--baselines", eval_args.baselines, "Subset of every_frame, every_k, never, random")
      ->delimiter(',');
  eval_cmd->add_flag("--sample", eval_args.sample, "Sample actions instead of taking the argmax");

  MetricsArgs metrics_args;
  CLI::App* metrics_cmd = app.add_subcommand("metrics", "Trajectory error metrics of TUM files");
  metrics_cmd->add_option("estimated", metrics_args.estimated, "Estimated trajectory")->required();
  metrics_cmd->add_option("groundtruth", metrics_args.ground_truth, "Ground-truth trajectory")->required();
  metrics_cmd->add_option("--rpe-window", metrics_args.rpe_window, "RPE window length in meters")
      ->check(CLI::PositiveNumber);
  metrics_cmd->add_flag("--kitti-percent", metrics_args.kitti_percent, "Report ATE per distance in percent");
  metrics_cmd->add_option("--csv", metrics_args.csv, "Write metrics as CSV");

  std::string align_est;
  std::string align_gt;
  std::string align_out;
  CLI::App* align_cmd = app.add_subcommand("align", "Similarity-align an estimate onto ground truth");
  align_cmd->add_option("estimated", align_est, "Estimated trajectory")->required();
  align_cmd->add_option("groundtruth", align_gt, "Ground-truth trajectory")->required();
  align_cmd->add_option("output", align_out, "Aligned trajectory to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(g, iterations, resume, out);
    if (eval_cmd->parsed()) return cmd_eval(g, eval_args, out);
    if (metrics_cmd->parsed()) return cmd_metrics(g, metrics_args, out);
    if (align_cmd->parsed()) return cmd_align(g, align_est, align_gt, align_out, out);
  } catch (const InvalidConfig& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateInput& e) {
    err << "alignment failed: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NoAssociation& e) {
    err << "association failed: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "error: no command given\n";
  return kExitUsage;
}

}  // namespace rlvo
