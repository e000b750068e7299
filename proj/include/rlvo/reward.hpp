#pragma once

#include <vector>

#include "rlvo/geometry.hpp"

namespace rlvo {

// r = lambda1 * max(clip_floor, error_offset - e_tran) - lambda2 * keyframe
struct RewardConfig {
  double lambda1 = 0.01;
  double lambda2 = 5e-3;
  double clip_floor = -1.0;
  double error_offset = 0.2;  // meters
  int window_size = 5;
  int align_count = 3;

  // Throws InvalidConfig.
  void validate() const;

  static RewardConfig standard() { return {}; }
  static RewardConfig no_penalty() {
    RewardConfig c;
    c.lambda2 = 0.0;
    return c;
  }
  static RewardConfig high_penalty() {
    RewardConfig c;
    c.lambda2 = 7.5e-3;
    return c;
  }

  // Value emitted while the VO state is invalid (relocalizing or lost).
  double invalid_state_reward() const { return lambda1 * clip_floor; }
};

// The last window_size estimated / ground-truth poses, oldest first.
struct PoseWindow {
  std::vector<Pose> estimated;
  std::vector<Pose> ground_truth;
};

// Aligns the first align_count estimated positions to ground truth, maps the
// final estimated position through that alignment and returns its distance to
// the final ground-truth position. Throws DegenerateWindow when the window is
// short or the alignment is degenerate.
double sliding_window_error(const PoseWindow& window, const RewardConfig& config);

double reward(double e_tran, bool keyframe_taken, const RewardConfig& config);

}  // namespace rlvo
