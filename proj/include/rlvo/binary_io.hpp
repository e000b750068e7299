#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "rlvo/errors.hpp"
#include "rlvo/geometry.hpp"

// Little-endian binary helpers shared by checkpoints and training-state files.
namespace rlvo::bin {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

template <typename T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw CheckpointError("unexpected end of binary stream");
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_size = (1ULL << 32)) {
  const auto n = read<std::uint64_t>(is);
  if (n > max_size) throw CheckpointError("string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("unexpected end of binary stream");
  return s;
}

// rows, cols (uint64) then row-major float64 values.
inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  write<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  write<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write<double>(os, m(r, c));
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
  const auto rows = read<std::uint64_t>(is);
  const auto cols = read<std::uint64_t>(is);
  if (rows > (1ULL << 24) || cols > (1ULL << 24) || rows * cols > (1ULL << 28)) {
    throw CheckpointError("matrix dimensions out of range");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read<double>(is);
  return m;
}

inline void write_vec3(std::ostream& os, const Vec3& v) {
  for (int i = 0; i < 3; ++i) write<double>(os, v[i]);
}

inline Vec3 read_vec3(std::istream& is) {
  Vec3 v;
  for (int i = 0; i < 3; ++i) v[i] = read<double>(is);
  return v;
}

inline void write_pose(std::ostream& os, const Pose& p) {
  write<double>(os, p.timestamp());
  write_vec3(os, p.translation());
  const Quat& q = p.rotation();
  write<double>(os, q.w());
  write<double>(os, q.x());
  write<double>(os, q.y());
  write<double>(os, q.z());
}

inline Pose read_pose(std::istream& is) {
  const double t = read<double>(is);
  const Vec3 p = read_vec3(is);
  const double w = read<double>(is);
  const double x = read<double>(is);
  const double y = read<double>(is);
  const double z = read<double>(is);
  return Pose::from_canonical(t, p, Quat(w, x, y, z));
}

}  // namespace rlvo::bin
