#pragma once

#include <cmath>
#include <vector>

#include "rlvo/geometry.hpp"
#include "rlvo/random.hpp"

namespace rlvo::testing {

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
  return Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
}

inline Quat random_rotation(Rng& rng) {
  Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return canonical_quaternion(q);
}

inline std::vector<Vec3> random_points(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vec(rng, scale));
  return out;
}

// Smooth 3-D random walk sampled at 20 Hz.
inline Trajectory random_trajectory(Rng& rng, std::size_t n, double step = 0.1) {
  Trajectory t;
  Vec3 p = Vec3::Zero();
  Vec3 v = random_vec(rng, step);
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back(Pose(0.05 * static_cast<double>(i), p, random_rotation(rng)));
    v = 0.9 * v + random_vec(rng, 0.3 * step);
    p += v;
  }
  return t;
}

// Ground truth mapped through a similarity plus per-pose noise.
inline Trajectory distorted_copy(const Trajectory& gt, Rng& rng, double scale, const Quat& r,
                                 const Vec3& t, double noise) {
  Trajectory out;
  for (const Pose& p : gt) {
    const Vec3 x = scale * (r * p.translation()) + t + random_vec(rng, noise);
    out.push_back(Pose(p.timestamp(), x, r * p.rotation()));
  }
  return out;
}

}  // namespace rlvo::testing
