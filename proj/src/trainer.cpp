#include "rlvo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "rlvo/binary_io.hpp"
#include "rlvo/checkpoint.hpp"
#include "rlvo/errors.hpp"
#include "rlvo/trajectory_io.hpp"

namespace rlvo {

namespace {

constexpr char kStateMagic[8] = {'R', 'L', 'V', 'O', 'S', 'T', 'A', 'T'};
constexpr std::uint32_t kStateVersion = 1;

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

struct TrainState {
  Agent agent;
  OptimizerState optimizer;
  RolloutState rollout;
  Rng update_rng{0};
  std::int64_t iteration = 0;
  double best_return = -std::numeric_limits<double>::infinity();
  std::deque<double> recent_returns;
  double wallclock_s = 0.0;
};

void save_state(const std::filesystem::path& path, const TrainState& s, const VecEnv& env,
                const CheckpointMetadata& meta) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kStateMagic, sizeof(kStateMagic));
    bin::write<std::uint32_t>(os, kStateVersion);
    write_agent(os, s.agent, meta);
    s.optimizer.save(os);
    env.save_state(os);
    s.rollout.save(os);
    s.update_rng.save(os);
    bin::write<std::int64_t>(os, s.iteration);
    bin::write<double>(os, s.best_return);
    bin::write<std::uint64_t>(os, s.recent_returns.size());
    for (double r : s.recent_returns) bin::write<double>(os, r);
    bin::write<double>(os, s.wallclock_s);
    if (!os) throw CheckpointError("failed to write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void load_state(const std::filesystem::path& path, TrainState& s, VecEnv& env,
                const std::string& expected_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open training state " + path.string());
  char magic[sizeof(kStateMagic)] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kStateMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + ": not a training state file");
  }
  if (bin::read<std::uint32_t>(is) != kStateVersion) {
    throw CheckpointError(path.string() + ": unsupported training state version");
  }
  LoadedCheckpoint ck = read_agent(is);
  if (ck.metadata.config_hash != expected_hash) {
    throw CheckpointError(path.string() + ": training state was produced with config " +
                          ck.metadata.config_hash + ", current config is " + expected_hash);
  }
  s.agent = std::move(ck.agent);
  s.optimizer = OptimizerState::create(s.agent);
  s.optimizer.load(is);
  env.load_state(is);
  s.rollout.load(is);
  if (s.rollout.current.size() != env.size()) {
    throw CheckpointError(path.string() + ": rollout state does not match the environment count");
  }
  s.update_rng.load(is);
  s.iteration = bin::read<std::int64_t>(is);
  s.best_return = bin::read<double>(is);
  const auto n = bin::read<std::uint64_t>(is);
  if (n > kReturnWindow) throw CheckpointError(path.string() + ": corrupt return history");
  s.recent_returns.clear();
  for (std::uint64_t i = 0; i < n; ++i) s.recent_returns.push_back(bin::read<double>(is));
  s.wallclock_s = bin::read<double>(is);
}

// Keeps the provenance line, the header and the first `rows` data rows.
std::vector<std::string> existing_metric_lines(const std::filesystem::path& path, std::int64_t rows) {
  std::vector<std::string> lines;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  const auto keep = static_cast<std::size_t>(rows) + 2;
  if (lines.size() < keep) {
    throw CheckpointError(path.string() + " has fewer rows than the training state records");
  }
  lines.resize(keep);
  return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

}  // namespace

std::string IterationMetrics::csv_row() const {
  std::string row = std::to_string(iteration);
  for (double v : {mean_return, mean_e_tran, keyframe_rate, loss.policy_loss, loss.value_loss,
                   loss.entropy, loss.clip_fraction, loss.approx_kl, wallclock_s}) {
    row += ',';
    row += format_csv_number(v);
  }
  return row;
}

std::string provenance(const RunConfig& config) {
  return "seed=" + std::to_string(config.seed) + " config_hash=" + config_hash(config);
}

TrainResult train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const std::filesystem::path dir = config.output_dir;
  std::filesystem::create_directories(dir);
  const std::string hash = config_hash(config);
  const CheckpointMetadata meta{config.seed, hash};
  const PpoConfig& ppo = config.ppo;

  VecEnv env = options.env_factory
                   ? VecEnv(static_cast<std::size_t>(ppo.num_envs), options.env_factory, ppo.num_threads)
                   : VecEnv(std::vector<EnvConfig>(static_cast<std::size_t>(ppo.num_envs), config.env),
                            ppo.num_threads);

  TrainState state;
  const std::filesystem::path state_path = dir / run_files::kState;
  const std::filesystem::path metrics_path = dir / run_files::kMetrics;
  std::vector<std::string> metric_lines;
  if (options.resume && std::filesystem::exists(state_path)) {
    load_state(state_path, state, env, hash);
    metric_lines = existing_metric_lines(metrics_path, state.iteration);
  } else {
    state.agent = Agent::create(config.net, derive_seed(config.seed, {10}));
    state.optimizer = OptimizerState::create(state.agent);
    state.rollout = RolloutState::start(env, derive_seed(config.seed, {11}));
    state.update_rng = Rng(derive_seed(config.seed, {12}));
    metric_lines = {"# " + provenance(config), kMetricsHeader};
  }
  write_text(dir / run_files::kConfig, to_json(config));
  {
    std::string text;
    for (const auto& l : metric_lines) text += l + "\n";
    write_text(metrics_path, text);
  }

  const std::int64_t target = options.stop_after ? *options.stop_after : ppo.iterations;
  TrainResult result;
  const auto started = std::chrono::steady_clock::now();
  const double wallclock_base = state.wallclock_s;

  while (state.iteration < target) {
    RolloutBuffer buffer = collect_rollout(state.agent, env, state.rollout, ppo);
    compute_gae(buffer, buffer.last_values, ppo);

    IterationMetrics m;
    m.iteration = state.iteration + 1;
    try {
      m.loss = ppo_update(state.agent, buffer, ppo, state.optimizer, state.update_rng).loss;
    } catch (const NoValidStates&) {
      std::cerr << "warning: iteration " << m.iteration
                << " collected no valid states; update skipped\n";
      m.loss = {nan(), nan(), nan(), nan(), nan()};
    } catch (const NonFiniteLoss& e) {
      std::cerr << "warning: iteration " << m.iteration << " aborted (" << e.what()
                << "); parameters restored\n";
      m.loss = {nan(), nan(), nan(), nan(), nan()};
    }
    update_normalizers(state.agent, buffer);
    state.iteration += 1;
    state.agent.iteration = state.iteration;

    for (const EpisodeSummary& ep : buffer.finished_episodes) {
      state.recent_returns.push_back(ep.episode_return);
      if (state.recent_returns.size() > kReturnWindow) state.recent_returns.pop_front();
    }
    m.mean_return = state.recent_returns.empty()
                        ? nan()
                        : std::accumulate(state.recent_returns.begin(), state.recent_returns.end(), 0.0) /
                              static_cast<double>(state.recent_returns.size());
    m.mean_e_tran = buffer.e_tran_count > 0 ? buffer.e_tran_sum / static_cast<double>(buffer.e_tran_count)
                                            : nan();
    m.keyframe_rate = static_cast<double>(buffer.keyframe_steps) / static_cast<double>(buffer.size());
    state.wallclock_s =
        wallclock_base +
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    m.wallclock_s = state.wallclock_s;

    {
      std::ofstream os(metrics_path, std::ios::app);
      if (!os) throw Error("cannot append to " + metrics_path.string());
      os << m.csv_row() << "\n";
    }
    save_checkpoint(dir / run_files::kLatest, state.agent, meta);
    if (!state.recent_returns.empty() && m.mean_return > state.best_return) {
      state.best_return = m.mean_return;
      save_checkpoint(dir / run_files::kBest, state.agent, meta);
    }
    save_state(state_path, state, env, meta);

    if (options.log) {
      *options.log << "iter " << m.iteration << "/" << target << " return " << m.mean_return
                   << " e_tran " << m.mean_e_tran << " kf_rate " << m.keyframe_rate << " entropy "
                   << m.loss.entropy << " kl " << m.loss.approx_kl << " t " << m.wallclock_s << "s\n";
      options.log->flush();
    }
    result.metrics.push_back(m);
  }
  if (!std::filesystem::exists(dir / run_files::kBest)) {
    save_checkpoint(dir / run_files::kBest, state.agent, meta);
  }

  result.agent = std::move(state.agent);
  result.iterations_completed = state.iteration;
  result.best_mean_return = state.best_return;
  return result;
}

}  // namespace rlvo
