#include "rlvo/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rlvo/binary_io.hpp"
#include "rlvo/errors.hpp"

namespace rlvo {

namespace {

void write_config(std::ostream& os, const NetConfig& c) {
  for (int v : {c.token_count, c.token_dim, c.heads, c.mlp_hidden, c.map_stats_dim,
                c.keyframe_classes, c.gridsize_classes, c.privileged_extra_dim}) {
    bin::write<std::int32_t>(os, v);
  }
  bin::write<double>(os, c.depth_scale);
}

NetConfig read_config(std::istream& is) {
  NetConfig c;
  for (int* v : {&c.token_count, &c.token_dim, &c.heads, &c.mlp_hidden, &c.map_stats_dim,
                 &c.keyframe_classes, &c.gridsize_classes, &c.privileged_extra_dim}) {
    *v = bin::read<std::int32_t>(is);
  }
  c.depth_scale = bin::read<double>(is);
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw CheckpointError(std::string("invalid network config: ") + e.what());
  }
  return c;
}

void write_normalizer(std::ostream& os, const RunningNormalizer& n) {
  bin::write_matrix(os, n.mean());
  bin::write_matrix(os, n.variance());
  bin::write<double>(os, n.count());
}

RunningNormalizer read_normalizer(std::istream& is, int dim, const char* which) {
  Eigen::MatrixXd mean = bin::read_matrix(is);
  Eigen::MatrixXd var = bin::read_matrix(is);
  const double count = bin::read<double>(is);
  if (mean.cols() != 1 || var.cols() != 1 || mean.rows() != dim || var.rows() != dim) {
    throw CheckpointError(std::string(which) + " normalizer has the wrong dimension");
  }
  RunningNormalizer n(dim);
  n.set_state(mean.col(0), var.col(0), count);
  return n;
}

template <typename Params>
void write_tensors(std::ostream& os, const Params& params) {
  params.for_each([&](const std::string& name, const Matrix& m) {
    bin::write_string(os, name);
    bin::write_matrix(os, m);
  });
}

template <typename Params>
void read_tensors(std::istream& is, Params& params) {
  params.for_each([&](const std::string& name, Matrix& m) {
    const std::string stored = bin::read_string(is, 256);
    if (stored != name) {
      throw CheckpointError("expected tensor '" + name + "', found '" + stored + "'");
    }
    Matrix value = bin::read_matrix(is);
    if (value.rows() != m.rows() || value.cols() != m.cols()) {
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(value.rows()) +
                            "x" + std::to_string(value.cols()) + ", expected " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    m = std::move(value);
  });
}

}  // namespace

void write_agent(std::ostream& os, const Agent& agent, const CheckpointMetadata& metadata) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  bin::write<std::uint32_t>(os, kCheckpointVersion);
  bin::write<std::uint64_t>(os, metadata.seed);
  bin::write_string(os, metadata.config_hash);
  write_config(os, agent.config);
  bin::write<std::int64_t>(os, agent.iteration);
  write_tensors(os, agent.policy);
  write_tensors(os, agent.critic);
  write_normalizer(os, agent.map_stats_normalizer);
  write_normalizer(os, agent.privileged_normalizer);
  if (!os) throw CheckpointError("failed to write checkpoint");
}

LoadedCheckpoint read_agent(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const auto version = bin::read<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  out.metadata.seed = bin::read<std::uint64_t>(is);
  out.metadata.config_hash = bin::read_string(is, 256);
  const NetConfig config = read_config(is);
  // Shapes come from a freshly initialized agent; values are overwritten.
  Agent agent = Agent::create(config, 0);
  agent.iteration = bin::read<std::int64_t>(is);
  read_tensors(is, agent.policy);
  read_tensors(is, agent.critic);
  agent.map_stats_normalizer = read_normalizer(is, config.map_stats_dim, "map statistics");
  agent.privileged_normalizer =
      read_normalizer(is, config.privileged_extra_dim, "privileged feature");
  out.agent = std::move(agent);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Agent& agent,
                     const CheckpointMetadata& metadata) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    write_agent(os, agent, metadata);
    os.flush();
    if (!os) throw CheckpointError("failed to write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    LoadedCheckpoint out = read_agent(is);
    if (is.peek() != std::char_traits<char>::eof()) {
      throw CheckpointError("trailing bytes after checkpoint payload");
    }
    return out;
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace rlvo
