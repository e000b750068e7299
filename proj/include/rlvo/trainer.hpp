#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rlvo/config.hpp"
#include "rlvo/network.hpp"
#include "rlvo/ppo.hpp"

namespace rlvo {

inline constexpr const char* kMetricsHeader =
    "iteration,mean_return,mean_e_tran,keyframe_rate,policy_loss,value_loss,entropy,"
    "clip_fraction,approx_kl,wallclock_s";

// Episodes averaged into mean_return.
inline constexpr std::size_t kReturnWindow = 32;

struct IterationMetrics {
  std::int64_t iteration = 0;  // 1-based
  double mean_return = 0.0;  // rolling mean over the last kReturnWindow finished episodes
  double mean_e_tran = 0.0;  // over this iteration's steps with a defined error
  double keyframe_rate = 0.0;  // keyframes per step this iteration
  LossStats loss;
  double wallclock_s = 0.0;

  // Row in kMetricsHeader order.
  std::string csv_row() const;
};

// Output file names inside the run directory.
namespace run_files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kLatest = "checkpoint_latest.bin";
inline constexpr const char* kBest = "checkpoint_best.bin";
inline constexpr const char* kState = "train_state.bin";
}  // namespace run_files

// "seed=<seed> config_hash=<hash>", embedded in every output artifact.
std::string provenance(const RunConfig& config);

struct TrainOptions {
  // Continue from <output_dir>/train_state.bin when it exists.
  bool resume = false;
  // Stop once this many iterations are complete (default: ppo.iterations).
  std::optional<int> stop_after;
  // Progress lines, one per iteration.
  std::ostream* log = nullptr;
  // Replaces the default VoEnv instances built from config.env.
  VecEnv::Factory env_factory;
};

struct TrainResult {
  Agent agent;
  std::vector<IterationMetrics> metrics;  // rows produced by this call
  std::int64_t iterations_completed = 0;
  double best_mean_return = 0.0;
};

// Alternates rollout collection, advantage estimation and PPO updates.
// Writes the config snapshot, the metrics CSV, best/latest checkpoints and a
// resumable training state to config.output_dir after every iteration.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

}  // namespace rlvo
