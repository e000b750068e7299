#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlvo/config.hpp"
#include "rlvo/network.hpp"
#include "rlvo/sim_env.hpp"

namespace rlvo {

// Stateful per-episode decision rule.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(const Observation& obs, Rng& rng) = 0;
};

using PolicyFactory = std::function<std::unique_ptr<Policy>()>;

// Scripted baselines use the environment's initial grid size.
PolicyFactory every_frame_policy(int grid_index);
// Keyframe on every k-th step since the last keyframe it requested.
PolicyFactory every_k_policy(int k, int grid_index);
PolicyFactory never_policy(int grid_index);
// Uniform over both action heads.
PolicyFactory random_policy();
// Argmax per head, or sampled when `sample` is set. The agent must outlive
// the returned factory.
PolicyFactory agent_policy(const Agent& agent, bool sample = false);

struct EvalEpisode {
  int episode = 0;
  std::uint64_t seed = 0;
  double ate = 0.0;  // NaN when fewer than 3 poses could be associated
  bool completed = false;
  int keyframes = 0;
  double mean_e_tran = 0.0;  // NaN when no step produced an error
  double episode_return = 0.0;
  int steps = 0;
  EpisodeLog log;
};

struct PolicyReport {
  std::string name;
  std::vector<EvalEpisode> episodes;

  // Means over episodes; NaN entries are skipped by mean_ate / mean_e_tran.
  double mean_ate() const;
  double completion_rate() const;
  double mean_keyframes() const;
  double keyframe_rate() const;  // keyframes per step
  double mean_e_tran() const;
  double mean_return() const;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<PolicyReport> policies;

  const PolicyReport& find(const std::string& name) const;  // throws IndexOutOfRange
};

// Seed of held-out episode i.
std::uint64_t eval_episode_seed(const EvalConfig& config, int episode);

// Runs `episodes` episodes of one policy on the held-out seeds.
PolicyReport evaluate_policy(const std::string& name, const PolicyFactory& factory,
                             const EnvConfig& env, const EvalConfig& config);

// Names accepted by the `baselines` argument.
inline const std::vector<std::string> kBaselineNames{"every_frame", "every_k", "never", "random"};

// The agent (when given, reported as "agent") followed by each named baseline,
// all on identical seeds. Throws InvalidConfig for unknown baseline names.
EvalReport evaluate(const Agent* agent, const std::vector<std::string>& baselines,
                    const RunConfig& config);

// Writes eval_episodes.csv, eval_summary.csv, keyframe_histogram_<policy>.csv
// and trajectories/ (ground truth once per episode, one estimate per policy)
// into `dir`. `provenance` becomes a leading comment line of every file.
void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir,
                        const std::string& provenance);

}  // namespace rlvo
