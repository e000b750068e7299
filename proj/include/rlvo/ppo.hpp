#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rlvo/network.hpp"
#include "rlvo/random.hpp"
#include "rlvo/sim_env.hpp"

namespace rlvo {

enum class OptimizerKind { SgdMomentum, Adam };

std::string to_string(OptimizerKind kind);
// Throws InvalidConfig for unknown names.
OptimizerKind optimizer_from_string(const std::string& name);

struct PpoConfig {
  double gamma = 0.6;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  int epochs = 10;
  int minibatch_size = 500;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  int num_envs = 8;
  int rollout_len = 250;
  int iterations = 300;
  // Worker threads for rollout inference and gradient accumulation. Results
  // do not depend on this value.
  int num_threads = 1;

  // Throws InvalidConfig.
  void validate() const;
};

struct Transition {
  PrivilegedObservation privileged_observation;  // state the action was taken in
  Action action;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  bool valid = false;

  const Observation& observation() const { return privileged_observation.observation; }
};

struct EpisodeSummary {
  double episode_return = 0.0;
  double mean_e_tran = 0.0;  // NaN when no step produced an error
  int keyframes = 0;
  int length = 0;
  bool completed = false;  // reached the final frame without being lost
};

// Transitions of instance e at time t live at e * rollout_len + t.
struct RolloutBuffer {
  std::size_t num_envs = 0;
  std::size_t rollout_len = 0;
  std::vector<Transition> transitions;
  std::vector<double> last_values;  // critic at the post-rollout states
  std::vector<double> returns;
  std::vector<double> raw_advantages;  // before standardization
  std::vector<double> advantages;  // standardized over valid entries

  // Bookkeeping for logging.
  std::vector<EpisodeSummary> finished_episodes;
  std::size_t keyframe_steps = 0;
  double e_tran_sum = 0.0;
  std::size_t e_tran_count = 0;

  std::size_t size() const { return transitions.size(); }
  std::size_t index(std::size_t env, std::size_t t) const { return env * rollout_len + t; }
  Transition& at(std::size_t env, std::size_t t) { return transitions.at(index(env, t)); }
  const Transition& at(std::size_t env, std::size_t t) const { return transitions.at(index(env, t)); }
  std::size_t valid_count() const;
};

// Per-instance state carried across rollouts: the pending observation, the
// action-sampling stream, and partial episode statistics.
struct RolloutState {
  std::vector<PrivilegedObservation> current;
  std::vector<Rng> rngs;
  std::vector<EpisodeSummary> partial;
  std::vector<double> e_tran_sums;
  std::vector<int> e_tran_counts;

  // Resets vec_env from master_seed and seeds instance i's sampler with
  // derive_seed(master_seed, {1, i}).
  static RolloutState start(VecEnv& vec_env, std::uint64_t master_seed);

  void save(std::ostream& os) const;
  void load(std::istream& is);
};

// Runs rollout_len steps on every instance with the policy sampled
// stochastically. The agent is not modified.
RolloutBuffer collect_rollout(const Agent& agent, VecEnv& vec_env, RolloutState& state,
                              const PpoConfig& config);

// GAE over every transition, bootstrapping with (1 - done) and with
// last_values at the rollout boundary. Throws EmptyBuffer, LengthMismatch.
void compute_gae(RolloutBuffer& buffer, const std::vector<double>& last_values,
                 const PpoConfig& config);

// Shuffled valid indices split into minibatches; each valid index appears
// exactly once. Throws NoValidStates, InvalidConfig.
std::vector<std::vector<std::size_t>> masked_minibatches(const RolloutBuffer& buffer,
                                                         int minibatch_size, Rng& rng);

struct LossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// Mean clipped-surrogate, value and entropy terms over `indices`, with the
// gradient of
//   policy_loss + value_coef * value_loss - entropy_coef * entropy
// accumulated into the two sinks. Samples are reduced in fixed-size chunks in
// index order. Throws NonFiniteLoss.
LossStats ppo_loss_and_gradients(const Agent& agent, const RolloutBuffer& buffer,
                                 std::span<const std::size_t> indices, const PpoConfig& config,
                                 PolicyGradients& policy_grads, CriticGradients& critic_grads);

struct OptimizerState {
  PolicyParameters policy_m;
  PolicyParameters policy_v;
  CriticParameters critic_m;
  CriticParameters critic_v;
  std::int64_t steps = 0;

  static OptimizerState create(const Agent& agent);
  void save(std::ostream& os) const;
  void load(std::istream& is);
};

// Global-norm clipping followed by one optimizer step. Returns the pre-clip norm.
double apply_gradients(Agent& agent, PolicyGradients policy_grads, CriticGradients critic_grads,
                       OptimizerState& state, const PpoConfig& config);

struct UpdateStats {
  LossStats loss;  // means over minibatches
  double grad_norm = 0.0;
  int minibatches = 0;
};

// `epochs` passes over masked minibatches. On NonFiniteLoss the agent and
// optimizer state are restored before rethrowing. Throws NoValidStates
// without touching anything.
UpdateStats ppo_update(Agent& agent, const RolloutBuffer& buffer, const PpoConfig& config,
                       OptimizerState& optimizer, Rng& rng);

// Feeds every observation of the buffer into the agent's running normalizers.
void update_normalizers(Agent& agent, const RolloutBuffer& buffer);

}  // namespace rlvo
