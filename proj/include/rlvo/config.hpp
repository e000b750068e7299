#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rlvo/network.hpp"
#include "rlvo/ppo.hpp"
#include "rlvo/sim_env.hpp"

namespace rlvo {

struct EvalConfig {
  int episodes = 5;
  int every_k = 10;  // period of the every_k baseline
  // Held-out episode i uses derive_seed(seed, {kEvalStream, i}).
  std::uint64_t seed = 1000;
  bool sample_actions = false;  // greedy by default
  int num_threads = 1;

  void validate() const;
};

// Everything a run needs. The reward section of a config file is stored in
// env.reward.
struct RunConfig {
  EnvConfig env;
  NetConfig net;
  PpoConfig ppo;
  EvalConfig eval;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
};

// JSON document with optional sections "env", "net", "ppo", "reward", "eval"
// and top-level "seed" and "output_dir". Every field is optional; unknown
// keys are rejected. Throws InvalidConfig (with `source` in the message).
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
// Throws InvalidConfig when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

// Complete snapshot with every field, keys sorted, 2-space indent.
std::string to_json(const RunConfig& config);
// 16 hex digits of the 64-bit FNV-1a hash of the snapshot, excluding
// output_dir and the thread counts so that relocating a run or changing its
// parallelism does not change its identity.
std::string config_hash(const RunConfig& config);

}  // namespace rlvo
