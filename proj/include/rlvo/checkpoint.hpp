#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "rlvo/network.hpp"

namespace rlvo {

inline constexpr char kCheckpointMagic[8] = {'R', 'L', 'V', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct LoadedCheckpoint {
  Agent agent;
  CheckpointMetadata metadata;
};

// Layout: magic, version (u32), metadata, NetConfig, iteration, then every
// named tensor in declaration order (rows, cols, row-major f64), then the two
// normalizers. All integers and floats little-endian.
void write_agent(std::ostream& os, const Agent& agent, const CheckpointMetadata& metadata);
// Throws CheckpointError on any mismatch or truncation.
LoadedCheckpoint read_agent(std::istream& is);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Agent& agent,
                     const CheckpointMetadata& metadata);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rlvo
