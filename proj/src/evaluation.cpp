#include "rlvo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "rlvo/errors.hpp"
#include "rlvo/metrics.hpp"
#include "rlvo/trajectory_io.hpp"

namespace rlvo {

namespace {

inline constexpr std::uint64_t kEvalStream = 7;

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

class FixedPolicy final : public Policy {
 public:
  FixedPolicy(bool keyframe, int grid) : action_{keyframe, grid} {}
  Action act(const Observation&, Rng&) override { return action_; }

 private:
  Action action_;
};

class EveryKPolicy final : public Policy {
 public:
  EveryKPolicy(int k, int grid) : k_(k), grid_(grid) {}
  Action act(const Observation&, Rng&) override {
    ++since_;
    const bool kf = since_ >= k_;
    if (kf) since_ = 0;
    return {kf, grid_};
  }

 private:
  int k_;
  int grid_;
  int since_ = 0;
};

class RandomPolicy final : public Policy {
 public:
  Action act(const Observation&, Rng& rng) override {
    const bool kf = rng.uniform() < 0.5;
    return {kf, static_cast<int>(rng.uniform_index(kNumGridSizes))};
  }
};

class AgentPolicy final : public Policy {
 public:
  AgentPolicy(const Agent& agent, bool sample) : agent_(agent), sample_(sample) {}
  Action act(const Observation& obs, Rng& rng) override {
    const PolicyOutput out = policy_forward(agent_.policy, agent_.config, agent_.policy_input(obs));
    return sample_ ? sample(out, rng).action : greedy_action(out);
  }

 private:
  const Agent& agent_;
  bool sample_;
};

template <typename F>
double mean_of(const std::vector<EvalEpisode>& eps, F&& f, bool skip_nan) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : eps) {
    const double v = f(e);
    if (skip_nan && std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : nan();
}

void check_baseline(const std::string& name) {
  for (const auto& b : kBaselineNames) {
    if (b == name) return;
  }
  throw InvalidConfig("unknown baseline \"" + name + "\" (expected every_frame, every_k, never or random)");
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

}  // namespace

PolicyFactory every_frame_policy(int grid_index) {
  return [grid_index] { return std::make_unique<FixedPolicy>(true, grid_index); };
}

PolicyFactory every_k_policy(int k, int grid_index) {
  if (k < 1) throw InvalidConfig("every_k needs k >= 1");
  return [k, grid_index] { return std::make_unique<EveryKPolicy>(k, grid_index); };
}

PolicyFactory never_policy(int grid_index) {
  return [grid_index] { return std::make_unique<FixedPolicy>(false, grid_index); };
}

PolicyFactory random_policy() {
  return [] { return std::make_unique<RandomPolicy>(); };
}

PolicyFactory agent_policy(const Agent& agent, bool sample) {
  return [&agent, sample] { return std::make_unique<AgentPolicy>(agent, sample); };
}

double PolicyReport::mean_ate() const {
  return mean_of(episodes, [](const EvalEpisode& e) { return e.ate; }, true);
}
double PolicyReport::completion_rate() const {
  return mean_of(episodes, [](const EvalEpisode& e) { return e.completed ? 1.0 : 0.0; }, false);
}
double PolicyReport::mean_keyframes() const {
  return mean_of(episodes, [](const EvalEpisode& e) { return static_cast<double>(e.keyframes); }, false);
}
double PolicyReport::keyframe_rate() const {
  double kf = 0.0;
  double steps = 0.0;
  for (const auto& e : episodes) {
    kf += e.keyframes;
    steps += e.steps;
  }
  return steps > 0.0 ? kf / steps : nan();
}
double PolicyReport::mean_e_tran() const {
  return mean_of(episodes, [](const EvalEpisode& e) { return e.mean_e_tran; }, true);
}
double PolicyReport::mean_return() const {
  return mean_of(episodes, [](const EvalEpisode& e) { return e.episode_return; }, false);
}

const PolicyReport& EvalReport::find(const std::string& name) const {
  for (const auto& p : policies) {
    if (p.name == name) return p;
  }
  throw IndexOutOfRange("no policy named \"" + name + "\" in the report");
}

std::uint64_t eval_episode_seed(const EvalConfig& config, int episode) {
  return derive_seed(config.seed, {kEvalStream, static_cast<std::uint64_t>(episode)});
}

PolicyReport evaluate_policy(const std::string& name, const PolicyFactory& factory,
                             const EnvConfig& env_config, const EvalConfig& config) {
  config.validate();
  PolicyReport report;
  report.name = name;
  report.episodes.resize(static_cast<std::size_t>(config.episodes));
  parallel_for(report.episodes.size(), config.num_threads, [&](std::size_t i) {
    EvalEpisode& ep = report.episodes[i];
    ep.episode = static_cast<int>(i);
    ep.seed = eval_episode_seed(config, ep.episode);
    VoEnv env(env_config);
    Observation obs = env.reset(ep.seed);
    auto policy = factory();
    Rng rng(derive_seed(ep.seed, {kEvalStream}));
    double e_sum = 0.0;
    int e_count = 0;
    while (!env.done()) {
      const StepResult r = env.step(policy->act(obs, rng));
      ep.episode_return += r.reward;
      ep.steps += 1;
      if (r.info.e_tran) {
        e_sum += *r.info.e_tran;
        ++e_count;
      }
      obs = r.observation();
    }
    ep.keyframes = std::count(env.episode_log().keyframe_flags.begin(),
                              env.episode_log().keyframe_flags.end(), true);
    ep.mean_e_tran = e_count > 0 ? e_sum / e_count : nan();
    ep.log = env.episode_log();
    try {
      const AteResult a = ate(ep.log.estimated, ep.log.ground_truth);
      ep.ate = a.rmse;
      ep.completed = a.completed && env.mode() != VoMode::Lost;
    } catch (const Error&) {
      ep.ate = nan();
      ep.completed = false;
    }
  });
  return report;
}

EvalReport evaluate(const Agent* agent, const std::vector<std::string>& baselines,
                    const RunConfig& config) {
  for (const auto& b : baselines) check_baseline(b);
  EvalReport report;
  report.seed = config.seed;
  report.config_hash = config_hash(config);
  const int grid = config.env.initial_grid_index;
  if (agent) {
    report.policies.push_back(evaluate_policy(
        "agent", agent_policy(*agent, config.eval.sample_actions), config.env, config.eval));
  }
  for (const auto& b : baselines) {
    PolicyFactory f;
    if (b == "every_frame") f = every_frame_policy(grid);
    if (b == "every_k") f = every_k_policy(config.eval.every_k, grid);
    if (b == "never") f = never_policy(grid);
    if (b == "random") f = random_policy();
    report.policies.push_back(evaluate_policy(b, f, config.env, config.eval));
  }
  return report;
}

void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir,
                        const std::string& provenance) {
  std::filesystem::create_directories(dir / "trajectories");
  const std::string comment = "# " + provenance;
  auto num = [](double v) { return format_csv_number(v); };

  {
    std::ofstream os = open_output(dir / "eval_episodes.csv");
    os << comment << "\n"
       << "policy,episode,seed,ate,completed,keyframes,mean_e_tran,episode_return,steps\n";
    for (const auto& p : report.policies) {
      for (const auto& e : p.episodes) {
        os << p.name << ',' << e.episode << ',' << e.seed << ',' << num(e.ate) << ','
           << (e.completed ? 1 : 0) << ',' << e.keyframes << ',' << num(e.mean_e_tran) << ','
           << num(e.episode_return) << ',' << e.steps << "\n";
      }
    }
  }
  {
    std::ofstream os = open_output(dir / "eval_summary.csv");
    os << comment << "\n"
       << "policy,episodes,mean_ate,completion_rate,mean_keyframes,keyframe_rate,mean_e_tran,mean_return\n";
    for (const auto& p : report.policies) {
      os << p.name << ',' << p.episodes.size() << ',' << num(p.mean_ate()) << ','
         << num(p.completion_rate()) << ',' << num(p.mean_keyframes()) << ','
         << num(p.keyframe_rate()) << ',' << num(p.mean_e_tran()) << ',' << num(p.mean_return())
         << "\n";
    }
  }
  if (report.policies.empty()) return;

  const std::vector<std::string> tum_comments{provenance};
  for (const auto& e : report.policies.front().episodes) {
    write_tum(dir / "trajectories" / ("groundtruth_ep" + std::to_string(e.episode) + ".txt"),
              e.log.ground_truth, tum_comments);
  }
  for (const auto& p : report.policies) {
    std::ofstream hist = open_output(dir / ("keyframe_histogram_" + p.name + ".csv"));
    hist << comment << "\n" << "episode,kind,bin_lower,bin_width,keyframes\n";
    for (const auto& e : p.episodes) {
      write_tum(dir / "trajectories" / (p.name + "_ep" + std::to_string(e.episode) + ".txt"),
                e.log.estimated, tum_comments);
      KeyframeHistogram h;
      try {
        h = keyframe_velocity_histogram(e.log.ground_truth, e.log.keyframe_flags);
      } catch (const Error&) {
        continue;
      }
      for (const auto& [lo, count] : h.translational_bins) {
        hist << e.episode << ",translational," << num(lo) << ',' << num(h.translational_bin_width)
             << ',' << count << "\n";
      }
      for (const auto& [lo, count] : h.angular_bins) {
        hist << e.episode << ",angular," << num(lo) << ',' << num(h.angular_bin_width) << ','
             << count << "\n";
      }
    }
  }
}

}  // namespace rlvo
