// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rlvo/checkpoint.hpp"
#include "rlvo/errors.hpp"
#include "rlvo/evaluation.hpp"
#include "rlvo/metrics.hpp"
#include "rlvo/ppo.hpp"
#include "rlvo/reward.hpp"
#include "rlvo/trainer.hpp"
#include "support/bandit_env.hpp"
#include "support/generators.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace rlvo;
using namespace rlvo::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // runtime limit, part of the criterion
  std::function<Outcome()> run;
};

std::string fmt(const char* format, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

fs::path g_work_dir;
std::ostream* g_log = nullptr;

// ---------------------------------------------------------------------------

Outcome reward_constants() {
  const RewardConfig c = RewardConfig::standard();
  const double a = reward(0.2, false, c);
  const double b = reward(0.0, true, c);
  const double d = reward(100.0, false, c);
  const bool ok = c.lambda1 == 0.01 && c.lambda2 == 5e-3 && std::abs(a) <= 1e-12 &&
                  std::abs(b + 0.003) <= 1e-12 && std::abs(d + 0.01) <= 1e-12;
  return {ok, "r(0.2,0)=" + fmt("%.3g", a) + " r(0,1)=" + fmt("%.6g", b) + " r(100,0)=" + fmt("%.6g", d)};
}

Outcome umeyama_recovery() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double s = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    const Quat r = random_rotation(rng);
    const Vec3 t = random_vec(rng, 5.0);
    const std::vector<Vec3> src = random_points(rng, 3 + rng.uniform_index(50), 2.0);
    std::vector<Vec3> dst;
    for (const Vec3& p : src) dst.push_back(s * (r * p) + t);
    const SimilarityTransform e = umeyama_align(src, dst);
    worst = std::max({worst, std::abs(e.scale() - s) / s,
                      (e.rotation().toRotationMatrix() - r.toRotationMatrix()).norm(),
                      (e.translation() - t).norm() / std::max(1.0, t.norm())});
  }
  int rejected = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 origin = random_vec(rng);
    const Vec3 dir = random_vec(rng).normalized();
    std::vector<Vec3> line;
    for (int i = 0; i < 10; ++i) line.push_back(origin + rng.normal() * dir);
    try {
      umeyama_align(line, line);
    } catch (const DegenerateInput&) {
      ++rejected;
    }
  }
  return {worst <= 1e-9 && rejected == 20,
          "max rel err " + fmt("%.2e", worst) + ", collinear rejected " + std::to_string(rejected) + "/20"};
}

PoseWindow random_window(Rng& rng) {
  PoseWindow w;
  const Trajectory gt = random_trajectory(rng, 5, 0.2);
  for (const Pose& p : gt) {
    w.ground_truth.push_back(p);
    w.estimated.push_back(Pose(p.timestamp(), p.translation() + random_vec(rng, 0.05), p.rotation()));
  }
  return w;
}

Outcome window_geometry() {
  Rng rng(303);
  const RewardConfig c;
  double invariance = 0.0;
  double oracle = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    PoseWindow w = random_window(rng);
    const double e = sliding_window_error(w, c);

    std::vector<Vec3> est;
    std::vector<Vec3> gt;
    for (int i = 0; i < 3; ++i) {
      est.push_back(w.estimated[i].translation());
      gt.push_back(w.ground_truth[i].translation());
    }
    const double expected =
        (apply_h(eigen_umeyama(est, gt), w.estimated.back().translation()) - w.ground_truth.back().translation()).norm();
    oracle = std::max(oracle, std::abs(e - expected));

    const SimilarityTransform t(std::exp(rng.uniform(std::log(0.1), std::log(10.0))), random_rotation(rng),
                                random_vec(rng, 10.0));
    for (Pose& p : w.estimated) p = Pose(p.timestamp(), t.apply(p.translation()), t.rotation() * p.rotation());
    invariance = std::max(invariance, std::abs(sliding_window_error(w, c) - e));
  }
  return {invariance <= 1e-9 && oracle <= 1e-9,
          "invariance " + fmt("%.2e", invariance) + ", oracle " + fmt("%.2e", oracle) + " over 1000 windows"};
}

Outcome gradient_check() {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst_fraction = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(404, {seed}));
    Agent agent = Agent::create(NetConfig{}, seed);
    // Move the policy heads away from their near-zero initialization.
    perturb(agent.policy, rng, 0.05);
    const RolloutBuffer b = random_loss_buffer(agent, rng, 8);
    const GradCheckResult r = check_ppo_gradients(agent, b, PpoConfig{}, rng, 12);
    checked += r.checked;
    passed += r.passed;
    worst_fraction = std::min(worst_fraction, r.pass_fraction());
  }
  const double fraction = static_cast<double>(passed) / static_cast<double>(checked);
  return {fraction >= 0.99, std::to_string(passed) + "/" + std::to_string(checked) + " coordinates (" +
                                fmt("%.4f", fraction) + ", worst seed " + fmt("%.4f", worst_fraction) + ")"};
}

Outcome gae_oracle() {
  Rng rng(505);
  PpoConfig c;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    RolloutBuffer b = random_buffer(1 + rng.uniform_index(8), 1 + rng.uniform_index(100), rng);
    compute_gae(b, b.last_values, c);
    const GaeOracle o = brute_gae(b, b.last_values, c.gamma, c.gae_lambda);
    for (std::size_t i = 0; i < b.size(); ++i) {
      worst = std::max({worst, std::abs(b.raw_advantages[i] - o.advantages[i]), std::abs(b.returns[i] - o.returns[i])});
    }
  }
  return {c.gamma == 0.6 && worst <= 1e-10, "gamma " + fmt("%g", c.gamma) + ", max abs err " + fmt("%.2e", worst)};
}

Outcome masked_sampling() {
  Rng rng(606);
  std::size_t invalid_hits = 0;
  std::size_t coverage_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    RolloutBuffer b = random_buffer(1 + rng.uniform_index(8), 10 + rng.uniform_index(200), rng, 0.1,
                                    rng.uniform(0.05, 0.95));
    if (b.valid_count() == 0) b.transitions[0].valid = true;
    for (int epoch = 0; epoch < 3; ++epoch) {
      std::multiset<std::size_t> seen;
      for (const auto& batch : masked_minibatches(b, 1 + static_cast<int>(rng.uniform_index(100)), rng)) {
        for (std::size_t i : batch) {
          if (!b.transitions[i].valid) ++invalid_hits;
          seen.insert(i);
        }
      }
      std::set<std::size_t> unique(seen.begin(), seen.end());
      if (seen.size() != b.valid_count() || unique.size() != seen.size()) ++coverage_failures;
    }
  }
  return {invalid_hits == 0 && coverage_failures == 0,
          "invalid indices drawn " + std::to_string(invalid_hits) + ", coverage failures " +
              std::to_string(coverage_failures)};
}

Outcome bandit() {
  RunConfig cfg;
  cfg.ppo.num_envs = 8;
  cfg.ppo.rollout_len = 32;
  cfg.ppo.minibatch_size = 64;
  cfg.ppo.epochs = 4;
  cfg.output_dir = g_work_dir / "bandit";
  cfg.seed = 7;
  fs::remove_all(cfg.output_dir);
  TrainOptions opts;
  opts.stop_after = 200;
  opts.env_factory = [](std::size_t) { return std::make_unique<BanditEnv>(); };
  const TrainResult r = train(cfg, opts);

  // Sampled actions on fresh contexts.
  BanditEnv env;
  Rng rng(708);
  int correct = 0;
  const int trials = 4000;
  for (int i = 0; i < trials; ++i) {
    const Observation obs = env.reset(derive_seed(709, {static_cast<std::uint64_t>(i)}));
    const PolicyOutput out = policy_forward(r.agent.policy, r.agent.config, r.agent.policy_input(obs));
    if (sample(out, rng).action.keyframe == env.flag()) ++correct;
  }
  const double rate = static_cast<double>(correct) / trials;
  return {rate >= 0.95, "sampled correct-action rate " + fmt("%.4f", rate) + " after " +
                            std::to_string(r.iterations_completed) + " iterations"};
}

// ---------------------------------------------------------------------------
// Full-scale training shared by the end-to-end and penalty-sweep criteria.

RunConfig training_config(double lambda2) {
  RunConfig cfg;
  cfg.seed = 2024;
  cfg.env.reward.lambda2 = lambda2;
  // Plain SGD at this learning rate never moves the encoder far enough to
  // learn a count-dependent keyframe rule within the iteration budget.
  cfg.ppo.optimizer = OptimizerKind::Adam;
  cfg.eval.episodes = 20;
  cfg.output_dir = g_work_dir / ("train_lambda2_" + fmt("%g", lambda2));
  return cfg;
}

struct TrainedRun {
  EvalReport report;
  double seconds = 0.0;
};

TrainedRun train_and_evaluate(double lambda2, const std::vector<std::string>& baselines) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig cfg = training_config(lambda2);
  fs::remove_all(cfg.output_dir);
  TrainOptions opts;
  opts.log = g_log;
  train(cfg, opts);
  const LoadedCheckpoint best = load_checkpoint(cfg.output_dir / run_files::kBest);
  TrainedRun run;
  run.report = evaluate(&best.agent, baselines, cfg);
  write_eval_outputs(run.report, cfg.output_dir / "eval", provenance(cfg));
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

TrainedRun g_standard_run;
bool g_have_standard_run = false;

Outcome end_to_end() {
  g_standard_run = train_and_evaluate(5e-3, kBaselineNames);
  g_have_standard_run = true;
  const EvalReport& r = g_standard_run.report;
  const PolicyReport& agent = r.find("agent");
  double best_baseline = -std::numeric_limits<double>::infinity();
  std::string best_name;
  for (const std::string& name : kBaselineNames) {
    if (r.find(name).mean_return() > best_baseline) {
      best_baseline = r.find(name).mean_return();
      best_name = name;
    }
  }
  const PolicyReport& every_frame = r.find("every_frame");
  const PolicyReport& never = r.find("never");
  const bool a = agent.mean_return() >= best_baseline;
  const bool b = agent.mean_keyframes() < every_frame.mean_keyframes() &&
                 agent.completion_rate() >= every_frame.completion_rate();
  const bool c = agent.mean_e_tran() < never.mean_e_tran();
  std::string detail = "(a) return " + fmt("%.4f", agent.mean_return()) + " vs " + best_name + " " +
                       fmt("%.4f", best_baseline) + (a ? " ok" : " FAIL") + "; (b) keyframes " +
                       fmt("%.1f", agent.mean_keyframes()) + " vs " + fmt("%.1f", every_frame.mean_keyframes()) +
                       ", completion " + fmt("%.2f", agent.completion_rate()) + " vs " +
                       fmt("%.2f", every_frame.completion_rate()) + (b ? " ok" : " FAIL") + "; (c) e_tran " +
                       fmt("%.5f", agent.mean_e_tran()) + " vs never " + fmt("%.5f", never.mean_e_tran()) +
                       (c ? " ok" : " FAIL");
  return {a && b && c, detail};
}

double g_end_to_end_seconds = 0.0;
constexpr double kEndToEndLimitSeconds = 1800.0;

Outcome penalty_sweep() {
  const auto start = std::chrono::steady_clock::now();
  if (!g_have_standard_run) {
    g_standard_run = train_and_evaluate(5e-3, {});
    g_have_standard_run = true;
  }
  const TrainedRun none = train_and_evaluate(0.0, {});
  const TrainedRun high = train_and_evaluate(7.5e-3, {});
  const double k0 = none.report.find("agent").keyframe_rate();
  const double k1 = g_standard_run.report.find("agent").keyframe_rate();
  const double k2 = high.report.find("agent").keyframe_rate();
  // The sweep counts the reused lambda2 = 5e-3 run, and the limit is three
  // times the end-to-end limit. The ratio to the measured end-to-end time is
  // reported too; it exceeds 3 because frequent keyframes track more points.
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() +
                         (g_end_to_end_seconds > 0.0 ? g_standard_run.seconds : 0.0);
  const double budget = 3.0 * kEndToEndLimitSeconds;
  const double reference = g_end_to_end_seconds > 0.0 ? g_end_to_end_seconds : g_standard_run.seconds;
  const bool monotone = k0 >= k1 && k1 >= k2;
  return {monotone && elapsed <= budget,
          "keyframe rate " + fmt("%.4f", k0) + " (0) >= " + fmt("%.4f", k1) + " (5e-3) >= " + fmt("%.4f", k2) +
              " (7.5e-3)" + (monotone ? "" : " violated") + "; " + fmt("%.0f", elapsed) + " s of " +
              fmt("%.0f", budget) + " s budget, " + fmt("%.2f", elapsed / reference) +
              "x the end-to-end run"};
}

Outcome metric_oracles() {
  Rng rng(1010);
  double worst_ate = 0.0;
  double worst_rpe = 0.0;
  double worst_pct = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Trajectory gt = random_trajectory(rng, 100 + rng.uniform_index(200), 0.1);
    const Trajectory est = distorted_copy(gt, rng, std::exp(rng.uniform(-1.0, 1.0)), random_rotation(rng),
                                          random_vec(rng, 3.0), rng.uniform(0.0, 0.1));
    const double oracle = brute_ate(est, gt);
    worst_ate = std::max(worst_ate, std::abs(ate(est, gt).rmse - oracle));
    worst_pct = std::max(worst_pct, std::abs(ate_per_distance(est, gt) - 100.0 * oracle / gt.path_length()));
    const RpeCdf rpe = rpe_distance_windows(est, gt, 5.0);
    const std::vector<double> expected = brute_rpe(est, gt, 5.0);
    if (rpe.errors.size() != expected.size()) {
      worst_rpe = std::numeric_limits<double>::infinity();
      continue;
    }
    for (std::size_t i = 0; i < expected.size(); ++i) worst_rpe = std::max(worst_rpe, std::abs(rpe.errors[i] - expected[i]));
  }
  return {worst_ate <= 1e-9 && worst_rpe <= 1e-9 && worst_pct <= 1e-9,
          "ATE " + fmt("%.2e", worst_ate) + ", RPE " + fmt("%.2e", worst_rpe) + ", ATE% " + fmt("%.2e", worst_pct)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string metrics_without_wallclock(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string serialize(const RolloutBuffer& b) {
  std::ostringstream os;
  os.precision(17);
  for (const Transition& t : b.transitions) {
    const Observation& o = t.observation();
    os << o.keypoints.rows();
    for (Eigen::Index i = 0; i < o.keypoints.size(); ++i) os << ' ' << o.keypoints.data()[i];
    for (Eigen::Index i = 0; i < o.map_stats.size(); ++i) os << ' ' << o.map_stats(i);
    for (Eigen::Index i = 0; i < t.privileged_observation.extra.size(); ++i) os << ' ' << t.privileged_observation.extra(i);
    os << ' ' << t.action.keyframe << ' ' << t.action.grid_size_index << ' ' << t.log_prob << ' ' << t.reward << ' '
       << t.value << ' ' << t.done << ' ' << t.valid << '\n';
  }
  for (double v : b.last_values) os << v << ' ';
  return os.str();
}

Outcome determinism() {
  // Rollout buffers, serial and threaded.
  std::vector<std::string> buffers;
  for (int threads : {1, 1, 4}) {
    RunConfig cfg;
    cfg.ppo.num_threads = threads;
    VecEnv env(std::vector<EnvConfig>(8, cfg.env), threads);
    const Agent agent = Agent::create(cfg.net, 11);
    RolloutState state = RolloutState::start(env, 12);
    collect_rollout(agent, env, state, cfg.ppo);
    buffers.push_back(serialize(collect_rollout(agent, env, state, cfg.ppo)));
  }
  const bool rollouts_equal = buffers[0] == buffers[1] && buffers[0] == buffers[2];

  // Short training runs, serial and threaded.
  std::vector<std::string> metrics;
  std::vector<std::string> latest;
  std::vector<std::string> best;
  int run = 0;
  for (int threads : {1, 1, 4}) {
    RunConfig cfg;
    cfg.seed = 99;
    cfg.ppo.num_threads = threads;
    cfg.ppo.rollout_len = 100;
    cfg.ppo.minibatch_size = 200;
    cfg.ppo.epochs = 3;
    cfg.ppo.iterations = 3;
    cfg.output_dir = g_work_dir / ("determinism_" + std::to_string(run++));
    fs::remove_all(cfg.output_dir);
    train(cfg);
    metrics.push_back(metrics_without_wallclock(cfg.output_dir / run_files::kMetrics));
    latest.push_back(slurp(cfg.output_dir / run_files::kLatest));
    best.push_back(slurp(cfg.output_dir / run_files::kBest));
  }
  auto same = [](const std::vector<std::string>& v) { return v[0] == v[1] && v[0] == v[2]; };
  const bool ok = rollouts_equal && same(metrics) && same(latest) && same(best);
  return {ok, std::string("rollouts ") + (rollouts_equal ? "identical" : "DIFFER") + ", metrics " +
                  (same(metrics) ? "identical" : "DIFFER") + ", checkpoints " +
                  (same(latest) && same(best) ? "identical" : "DIFFER") + " (threads 1, 1, 4)"};
}

Outcome entropy_and_sampling() {
  Agent agent = Agent::create(NetConfig{}, 12);
  agent.policy.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  Rng rng(1212);
  NetInput in;
  in.keypoints = Matrix::Random(30, 3);
  in.map_stats = Eigen::VectorXd::Random(map_stat::kDim);
  const PolicyOutput uniform = policy_forward(agent.policy, agent.config, in);
  const double h = log_prob_and_entropy(uniform, Action{}).entropy;
  const double h_err = std::abs(h - (std::log(2.0) + std::log(5.0)));

  PolicyOutput out;
  out.keyframe_logits = Eigen::VectorXd(2);
  out.keyframe_logits << 0.7, -0.2;
  out.gridsize_logits = Eigen::VectorXd(5);
  out.gridsize_logits << -1.0, 0.5, 0.0, 1.2, -0.3;
  const int draws = 100000;
  Eigen::VectorXd kf = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd grid = Eigen::VectorXd::Zero(5);
  for (int i = 0; i < draws; ++i) {
    const SampledAction s = sample(out, rng);
    kf(s.action.keyframe ? 1 : 0) += 1.0;
    grid(s.action.grid_size_index) += 1.0;
  }
  double worst_sigma = 0.0;
  auto check = [&](const Eigen::VectorXd& counts, const Eigen::VectorXd& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double sigma = std::sqrt(draws * p(i) * (1.0 - p(i)));
      worst_sigma = std::max(worst_sigma, std::abs(counts(i) - draws * p(i)) / sigma);
    }
  };
  check(kf, out.keyframe_probabilities());
  check(grid, out.gridsize_probabilities());
  return {h_err <= 1e-12 && worst_sigma <= 3.0,
          "uniform entropy err " + fmt("%.2e", h_err) + ", worst deviation " + fmt("%.2f", worst_sigma) + " sigma"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work_dir = (fs::temp_directory_path() / "rlvo_acceptance").string();
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--work-dir", work_dir, "Scratch directory for training runs");
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--verbose", verbose, "Print training progress");
  CLI11_PARSE(app, argc, argv);
  g_work_dir = work_dir;
  fs::create_directories(g_work_dir);
  if (verbose) g_log = &std::cerr;

  const std::vector<Criterion> criteria{
      {1, "reward constants", 1.0, reward_constants},
      {2, "umeyama alignment", 5.0, umeyama_recovery},
      {3, "sliding-window reward geometry", 10.0, window_geometry},
      {4, "gradient correctness", 120.0, gradient_check},
      {5, "GAE/returns oracle", 10.0, gae_oracle},
      {6, "masked sampling", 10.0, masked_sampling},
      {7, "PPO bandit sanity", 120.0, bandit},
      {8, "end-to-end training", kEndToEndLimitSeconds, end_to_end},
      {9, "penalty monotonicity", 3.0 * kEndToEndLimitSeconds, penalty_sweep},
      {10, "metric oracles", 30.0, metric_oracles},
      {11, "determinism", 300.0, determinism},
      {12, "entropy and sampling", 30.0, entropy_and_sampling},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.id == 8) g_end_to_end_seconds = seconds;
    const bool in_time = seconds <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt("%.1f", seconds) << " s" << (in_time ? "" : ", over the " + fmt("%.0f", c.budget_s) + " s limit")
              << ")" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
