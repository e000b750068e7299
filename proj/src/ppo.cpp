#include "rlvo/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "rlvo/binary_io.hpp"
#include "rlvo/errors.hpp"

namespace rlvo {

namespace {

constexpr std::size_t kGradientChunk = 16;

template <typename Params>
std::vector<Matrix*> tensors(Params& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

template <typename Params>
void add_into(Params& dst, Params& src) {
  auto d = tensors(dst);
  auto s = tensors(src);
  for (std::size_t i = 0; i < d.size(); ++i) *d[i] += *s[i];
}

template <typename Params>
double squared_norm(Params& p) {
  double total = 0.0;
  for (Matrix* m : tensors(p)) total += m->squaredNorm();
  return total;
}

template <typename Params>
void scale_all(Params& p, double c) {
  for (Matrix* m : tensors(p)) *m *= c;
}

template <typename Params>
void step_params(Params& params, Params& grads, Params& m_state, Params& v_state,
                 const PpoConfig& config, std::int64_t step) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m = tensors(m_state);
  auto v = tensors(v_state);
  const double lr = config.learning_rate;
  if (config.optimizer == OptimizerKind::SgdMomentum) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      *m[i] = config.momentum * *m[i] + *g[i];
      *p[i] -= lr * *m[i];
    }
    return;
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    *m[i] = b1 * *m[i] + (1.0 - b1) * *g[i];
    v[i]->array() = b2 * v[i]->array() + (1.0 - b2) * g[i]->array().square();
    p[i]->array() -=
        lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + config.adam_epsilon);
  }
}

template <typename Params>
void write_params(std::ostream& os, const Params& p) {
  p.for_each([&](const std::string&, const Matrix& m) { bin::write_matrix(os, m); });
}

template <typename Params>
void read_params(std::istream& is, Params& p) {
  p.for_each([&](const std::string& name, Matrix& m) {
    Matrix value = bin::read_matrix(is);
    if (value.rows() != m.rows() || value.cols() != m.cols()) {
      throw CheckpointError("optimizer state for '" + name + "' has the wrong shape");
    }
    m = std::move(value);
  });
}

void write_observation(std::ostream& os, const PrivilegedObservation& p) {
  bin::write_matrix(os, p.observation.keypoints);
  bin::write_matrix(os, p.observation.map_stats);
  bin::write_matrix(os, p.extra);
}

PrivilegedObservation read_observation(std::istream& is) {
  PrivilegedObservation p;
  const Matrix kp = bin::read_matrix(is);
  if (kp.cols() != 3) throw CheckpointError("stored keypoints must have 3 columns");
  p.observation.keypoints = kp;
  p.observation.map_stats = bin::read_matrix(is).reshaped();
  p.extra = bin::read_matrix(is).reshaped();
  return p;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd_momentum";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd_momentum") return OptimizerKind::SgdMomentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw InvalidConfig("ppo.optimizer must be \"sgd_momentum\" or \"adam\", got \"" + name + "\"");
}

void PpoConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidConfig("ppo: " + what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(clip_epsilon > 0.0, "clip_epsilon must be positive");
  require(epochs >= 1, "epochs must be at least 1");
  require(minibatch_size >= 1, "minibatch_size must be at least 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "adam betas must be in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon must be positive");
  require(value_coef >= 0.0 && entropy_coef >= 0.0, "loss coefficients must be non-negative");
  require(max_grad_norm > 0.0, "max_grad_norm must be positive");
  require(num_envs >= 1 && rollout_len >= 1, "num_envs and rollout_len must be positive");
  require(iterations >= 0, "iterations must be non-negative");
  require(num_threads >= 1, "num_threads must be at least 1");
}

std::size_t RolloutBuffer::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(transitions.begin(), transitions.end(), [](const Transition& t) { return t.valid; }));
}

RolloutState RolloutState::start(VecEnv& vec_env, std::uint64_t master_seed) {
  vec_env.reset(master_seed);
  RolloutState s;
  s.current = vec_env.privileged_observations();
  const std::size_t n = vec_env.size();
  for (std::size_t i = 0; i < n; ++i) s.rngs.emplace_back(derive_seed(master_seed, {1, i}));
  s.partial.assign(n, EpisodeSummary{});
  s.e_tran_sums.assign(n, 0.0);
  s.e_tran_counts.assign(n, 0);
  return s;
}

void RolloutState::save(std::ostream& os) const {
  bin::write<std::uint64_t>(os, current.size());
  for (std::size_t i = 0; i < current.size(); ++i) {
    write_observation(os, current[i]);
    rngs[i].save(os);
    bin::write<double>(os, partial[i].episode_return);
    bin::write<std::int32_t>(os, partial[i].keyframes);
    bin::write<std::int32_t>(os, partial[i].length);
    bin::write<double>(os, e_tran_sums[i]);
    bin::write<std::int32_t>(os, e_tran_counts[i]);
  }
}

void RolloutState::load(std::istream& is) {
  const auto n = bin::read<std::uint64_t>(is);
  if (n > (1u << 20)) throw CheckpointError("implausible rollout state size");
  RolloutState s;
  for (std::uint64_t i = 0; i < n; ++i) {
    s.current.push_back(read_observation(is));
    Rng rng(0);
    rng.load(is);
    s.rngs.push_back(rng);
    EpisodeSummary e;
    e.episode_return = bin::read<double>(is);
    e.keyframes = bin::read<std::int32_t>(is);
    e.length = bin::read<std::int32_t>(is);
    s.partial.push_back(e);
    s.e_tran_sums.push_back(bin::read<double>(is));
    s.e_tran_counts.push_back(bin::read<std::int32_t>(is));
  }
  *this = std::move(s);
}

RolloutBuffer collect_rollout(const Agent& agent, VecEnv& vec_env, RolloutState& state,
                              const PpoConfig& config) {
  const std::size_t n = vec_env.size();
  if (state.current.size() != n) {
    throw LengthMismatch("rollout state tracks " + std::to_string(state.current.size()) +
                         " instances, environment has " + std::to_string(n));
  }
  const auto len = static_cast<std::size_t>(config.rollout_len);
  RolloutBuffer buffer;
  buffer.num_envs = n;
  buffer.rollout_len = len;
  buffer.transitions.resize(n * len);

  std::vector<Action> actions(n);
  for (std::size_t t = 0; t < len; ++t) {
    parallel_for(n, config.num_threads, [&](std::size_t e) {
      Transition& tr = buffer.at(e, t);
      tr.privileged_observation = state.current[e];
      const PolicyOutput out =
          policy_forward(agent.policy, agent.config, agent.policy_input(tr.observation()));
      const SampledAction s = sample(out, state.rngs[e]);
      tr.action = s.action;
      tr.log_prob = s.log_prob;
      tr.value = critic_forward(agent.critic, agent.config, agent.critic_input(tr.privileged_observation));
      actions[e] = s.action;
    });
    std::vector<StepResult> results = vec_env.step(actions);
    for (std::size_t e = 0; e < n; ++e) {
      Transition& tr = buffer.at(e, t);
      StepResult& r = results[e];
      tr.reward = r.reward;
      tr.done = r.done;
      tr.valid = r.valid;

      EpisodeSummary& ep = state.partial[e];
      ep.episode_return += r.reward;
      ep.length += 1;
      if (r.info.keyframe_inserted) {
        ep.keyframes += 1;
        buffer.keyframe_steps += 1;
      }
      if (r.info.e_tran) {
        state.e_tran_sums[e] += *r.info.e_tran;
        state.e_tran_counts[e] += 1;
        buffer.e_tran_sum += *r.info.e_tran;
        buffer.e_tran_count += 1;
      }
      if (r.done) {
        ep.completed = r.info.mode != VoMode::Lost;
        ep.mean_e_tran = state.e_tran_counts[e] > 0
                             ? state.e_tran_sums[e] / state.e_tran_counts[e]
                             : nan();
        buffer.finished_episodes.push_back(ep);
        ep = EpisodeSummary{};
        state.e_tran_sums[e] = 0.0;
        state.e_tran_counts[e] = 0;
      }
      state.current[e] = std::move(r.privileged_observation);
    }
  }

  buffer.last_values.assign(n, 0.0);
  parallel_for(n, config.num_threads, [&](std::size_t e) {
    buffer.last_values[e] =
        critic_forward(agent.critic, agent.config, agent.critic_input(state.current[e]));
  });
  return buffer;
}

void compute_gae(RolloutBuffer& buffer, const std::vector<double>& last_values,
                 const PpoConfig& config) {
  if (buffer.transitions.empty()) throw EmptyBuffer("cannot compute advantages of an empty buffer");
  if (buffer.num_envs * buffer.rollout_len != buffer.transitions.size()) {
    throw LengthMismatch("buffer layout does not match its transition count");
  }
  if (last_values.size() != buffer.num_envs) {
    throw LengthMismatch("expected " + std::to_string(buffer.num_envs) + " bootstrap values, got " +
                         std::to_string(last_values.size()));
  }
  const std::size_t total = buffer.transitions.size();
  buffer.raw_advantages.assign(total, 0.0);
  buffer.returns.assign(total, 0.0);
  const double gamma = config.gamma;
  const double lambda = config.gae_lambda;
  for (std::size_t e = 0; e < buffer.num_envs; ++e) {
    double gae = 0.0;
    for (std::size_t k = buffer.rollout_len; k-- > 0;) {
      const Transition& tr = buffer.at(e, k);
      const double next_value =
          k + 1 == buffer.rollout_len ? last_values[e] : buffer.at(e, k + 1).value;
      const double nonterminal = tr.done ? 0.0 : 1.0;
      const double delta = tr.reward + gamma * next_value * nonterminal - tr.value;
      gae = delta + gamma * lambda * nonterminal * gae;
      const std::size_t i = buffer.index(e, k);
      buffer.raw_advantages[i] = gae;
      buffer.returns[i] = gae + tr.value;
    }
  }

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (buffer.transitions[i].valid) {
      sum += buffer.raw_advantages[i];
      ++count;
    }
  }
  const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    if (buffer.transitions[i].valid) sq += std::pow(buffer.raw_advantages[i] - mean, 2);
  }
  const double sd = count > 0 ? std::sqrt(sq / static_cast<double>(count)) : 0.0;
  buffer.advantages.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double centered = buffer.raw_advantages[i] - mean;
    buffer.advantages[i] = sd > 0.0 ? centered / sd : centered;
  }
}

std::vector<std::vector<std::size_t>> masked_minibatches(const RolloutBuffer& buffer,
                                                         int minibatch_size, Rng& rng) {
  if (minibatch_size < 1) throw InvalidConfig("minibatch_size must be at least 1");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < buffer.transitions.size(); ++i) {
    if (buffer.transitions[i].valid) valid.push_back(i);
  }
  if (valid.empty()) throw NoValidStates("rollout contains no valid states");
  for (std::size_t i = valid.size() - 1; i > 0; --i) {
    std::swap(valid[i], valid[rng.uniform_index(i + 1)]);
  }
  std::vector<std::vector<std::size_t>> out;
  const auto mb = static_cast<std::size_t>(minibatch_size);
  for (std::size_t begin = 0; begin < valid.size(); begin += mb) {
    const std::size_t end = std::min(valid.size(), begin + mb);
    out.emplace_back(valid.begin() + static_cast<std::ptrdiff_t>(begin),
                     valid.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

LossStats ppo_loss_and_gradients(const Agent& agent, const RolloutBuffer& buffer,
                                 std::span<const std::size_t> indices, const PpoConfig& config,
                                 PolicyGradients& policy_grads, CriticGradients& critic_grads) {
  if (indices.empty()) return {};
  if (buffer.advantages.size() != buffer.transitions.size()) {
    throw EmptyBuffer("advantages have not been computed for this buffer");
  }
  const double weight = 1.0 / static_cast<double>(indices.size());
  const std::size_t chunks = (indices.size() + kGradientChunk - 1) / kGradientChunk;

  struct Partial {
    PolicyGradients policy;
    CriticGradients critic;
    LossStats stats;
  };
  std::vector<Partial> partials(chunks);

  parallel_for(chunks, config.num_threads, [&](std::size_t c) {
    Partial& part = partials[c];
    part.policy = zeros_like(agent.policy);
    part.critic = zeros_like(agent.critic);
    const std::size_t end = std::min(indices.size(), (c + 1) * kGradientChunk);
    for (std::size_t k = c * kGradientChunk; k < end; ++k) {
      const std::size_t i = indices[k];
      const Transition& tr = buffer.transitions.at(i);
      const double adv = buffer.advantages[i];
      const double ret = buffer.returns[i];

      ad::Tape tape;
      const PolicyVars pv =
          policy_graph(tape, agent.policy, agent.config, agent.policy_input(tr.observation()), &part.policy);
      const ad::Var lk = ad::log_softmax_rows(pv.keyframe_logits);
      const ad::Var lg = ad::log_softmax_rows(pv.gridsize_logits);
      const ad::Var logp = ad::add(ad::pick(lk, 0, tr.action.keyframe ? 1 : 0),
                                   ad::pick(lg, 0, tr.action.grid_size_index));
      const ad::Var log_ratio = ad::add_scalar(logp, -tr.log_prob);
      const ad::Var ratio = ad::exp(log_ratio);
      const ad::Var surrogate =
          ad::minimum(ad::scale(ratio, adv),
                      ad::scale(ad::clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon), adv));
      const ad::Var neg_entropy =
          ad::add(ad::sum(ad::mul(ad::exp(lk), lk)), ad::sum(ad::mul(ad::exp(lg), lg)));
      const ad::Var value = critic_graph(tape, agent.critic, agent.config,
                                         agent.critic_input(tr.privileged_observation), &part.critic);
      const ad::Var value_error = ad::square(ad::add_scalar(value, -ret));
      const ad::Var loss =
          ad::add(ad::add(ad::scale(surrogate, -weight), ad::scale(value_error, weight * config.value_coef)),
                  ad::scale(neg_entropy, weight * config.entropy_coef));
      if (!std::isfinite(loss.scalar())) {
        throw NonFiniteLoss("non-finite loss at buffer index " + std::to_string(i));
      }
      tape.backward(loss);

      const double r = ratio.scalar();
      const double lr = log_ratio.scalar();
      part.stats.policy_loss += -surrogate.scalar() * weight;
      part.stats.value_loss += value_error.scalar() * weight;
      part.stats.entropy += -neg_entropy.scalar() * weight;
      part.stats.clip_fraction += (std::abs(r - 1.0) > config.clip_epsilon ? 1.0 : 0.0) * weight;
      part.stats.approx_kl += ((r - 1.0) - lr) * weight;
    }
  });

  LossStats stats;
  for (Partial& part : partials) {
    add_into(policy_grads, part.policy);
    add_into(critic_grads, part.critic);
    stats.policy_loss += part.stats.policy_loss;
    stats.value_loss += part.stats.value_loss;
    stats.entropy += part.stats.entropy;
    stats.clip_fraction += part.stats.clip_fraction;
    stats.approx_kl += part.stats.approx_kl;
  }
  return stats;
}

OptimizerState OptimizerState::create(const Agent& agent) {
  OptimizerState s;
  s.policy_m = zeros_like(agent.policy);
  s.policy_v = zeros_like(agent.policy);
  s.critic_m = zeros_like(agent.critic);
  s.critic_v = zeros_like(agent.critic);
  return s;
}

void OptimizerState::save(std::ostream& os) const {
  write_params(os, policy_m);
  write_params(os, policy_v);
  write_params(os, critic_m);
  write_params(os, critic_v);
  bin::write<std::int64_t>(os, steps);
}

void OptimizerState::load(std::istream& is) {
  read_params(is, policy_m);
  read_params(is, policy_v);
  read_params(is, critic_m);
  read_params(is, critic_v);
  steps = bin::read<std::int64_t>(is);
}

double apply_gradients(Agent& agent, PolicyGradients policy_grads, CriticGradients critic_grads,
                       OptimizerState& state, const PpoConfig& config) {
  const double norm = std::sqrt(squared_norm(policy_grads) + squared_norm(critic_grads));
  if (!std::isfinite(norm)) throw NonFiniteLoss("non-finite gradient norm");
  if (norm > config.max_grad_norm) {
    const double c = config.max_grad_norm / (norm + 1e-6);
    scale_all(policy_grads, c);
    scale_all(critic_grads, c);
  }
  state.steps += 1;
  step_params(agent.policy, policy_grads, state.policy_m, state.policy_v, config, state.steps);
  step_params(agent.critic, critic_grads, state.critic_m, state.critic_v, config, state.steps);
  return norm;
}

UpdateStats ppo_update(Agent& agent, const RolloutBuffer& buffer, const PpoConfig& config,
                       OptimizerState& optimizer, Rng& rng) {
  // Probe for valid states before anything is modified.
  if (buffer.valid_count() == 0) throw NoValidStates("rollout contains no valid states");

  const PolicyParameters saved_policy = agent.policy;
  const CriticParameters saved_critic = agent.critic;
  const OptimizerState saved_optimizer = optimizer;
  UpdateStats stats;
  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (const auto& batch : masked_minibatches(buffer, config.minibatch_size, rng)) {
        PolicyGradients gp = zeros_like(agent.policy);
        CriticGradients gc = zeros_like(agent.critic);
        const LossStats s = ppo_loss_and_gradients(agent, buffer, batch, config, gp, gc);
        stats.grad_norm += apply_gradients(agent, std::move(gp), std::move(gc), optimizer, config);
        stats.loss.policy_loss += s.policy_loss;
        stats.loss.value_loss += s.value_loss;
        stats.loss.entropy += s.entropy;
        stats.loss.clip_fraction += s.clip_fraction;
        stats.loss.approx_kl += s.approx_kl;
        stats.minibatches += 1;
      }
    }
  } catch (const NonFiniteLoss&) {
    agent.policy = saved_policy;
    agent.critic = saved_critic;
    optimizer = saved_optimizer;
    throw;
  }
  const double m = static_cast<double>(stats.minibatches);
  stats.loss.policy_loss /= m;
  stats.loss.value_loss /= m;
  stats.loss.entropy /= m;
  stats.loss.clip_fraction /= m;
  stats.loss.approx_kl /= m;
  stats.grad_norm /= m;
  return stats;
}

void update_normalizers(Agent& agent, const RolloutBuffer& buffer) {
  const auto n = static_cast<Eigen::Index>(buffer.transitions.size());
  if (n == 0) return;
  Matrix stats(n, agent.config.map_stats_dim);
  Matrix extra(n, agent.config.privileged_extra_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PrivilegedObservation& p = buffer.transitions[static_cast<std::size_t>(i)].privileged_observation;
    stats.row(i) = p.observation.map_stats.transpose();
    extra.row(i) = p.extra.transpose();
  }
  agent.map_stats_normalizer.update(stats);
  agent.privileged_normalizer.update(extra);
}

}  // namespace rlvo
