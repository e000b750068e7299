#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "rlvo/geometry.hpp"

namespace rlvo {

// Nearest-neighbour timestamp association tolerance, seconds.
inline constexpr double kAssociationTolerance = 0.02;
// Fraction of ground-truth timestamps an estimate must cover to count as completed.
inline constexpr double kCompletionFraction = 0.99;

struct Association {
  std::vector<std::size_t> estimated_index;
  std::vector<std::size_t> ground_truth_index;
  std::size_t size() const { return estimated_index.size(); }
};

// One-to-one nearest-timestamp matching; unmatched poses are dropped.
Association associate(const Trajectory& estimated, const Trajectory& ground_truth,
                      double tolerance = kAssociationTolerance);

struct AteResult {
  double rmse = 0.0;
  std::vector<double> per_pose_errors;
  SimilarityTransform alignment;
  std::size_t matched = 0;
  // Estimate covers at least 99 % of the ground-truth timestamps.
  bool completed = false;
};

// Absolute translation error after similarity alignment of the associated
// estimated positions onto the ground truth.
AteResult ate(const Trajectory& estimated, const Trajectory& ground_truth,
              double tolerance = kAssociationTolerance);

struct RpeCdf {
  double window_length = 0.0;
  std::vector<double> errors;  // sorted ascending
  std::vector<std::pair<double, double>> cdf_points;  // (error, cumulative probability)
};

// Relative position error over ground-truth distance windows. A window starts
// at every associated frame and ends at the first frame whose forward path
// length reaches `window`; the window is aligned on its own and the error of
// its final position is recorded.
RpeCdf rpe_distance_windows(const Trajectory& estimated, const Trajectory& ground_truth,
                            double window = 5.0, double tolerance = kAssociationTolerance);

// 100 * ATE / total ground-truth path length.
double ate_per_distance(const Trajectory& estimated, const Trajectory& ground_truth,
                        double tolerance = kAssociationTolerance);

struct KeyframeHistogram {
  // (lower bin edge, keyframe count); bins cover [0, max observed velocity].
  std::vector<std::pair<double, std::size_t>> translational_bins;
  std::vector<std::pair<double, std::size_t>> angular_bins;
  double translational_bin_width = 0.0;
  double angular_bin_width = 0.0;
  // Keyframes among frames 1..N-1 (frame 0 has no velocity).
  std::size_t total_keyframes = 0;
};

KeyframeHistogram keyframe_velocity_histogram(const Trajectory& ground_truth,
                                              const std::vector<bool>& keyframe_flags,
                                              double translational_bin_width = 0.25,
                                              double angular_bin_width = 0.25);

}  // namespace rlvo
