#include "rlvo/reward.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rlvo/errors.hpp"

namespace rlvo {

void RewardConfig::validate() const {
  if (align_count < 3) throw InvalidConfig("reward.align_count must be >= 3");
  if (window_size < align_count) throw InvalidConfig("reward.window_size must be >= align_count");
  if (!(lambda1 >= 0.0)) throw InvalidConfig("reward.lambda1 must be >= 0");
  if (!(lambda2 >= 0.0)) throw InvalidConfig("reward.lambda2 must be >= 0");
  if (!std::isfinite(clip_floor) || !std::isfinite(error_offset)) {
    throw InvalidConfig("reward.clip_floor and reward.error_offset must be finite");
  }
}

double sliding_window_error(const PoseWindow& window, const RewardConfig& config) {
  const auto size = static_cast<std::size_t>(config.window_size);
  if (window.estimated.size() != size || window.ground_truth.size() != size) {
    throw DegenerateWindow("window holds " + std::to_string(window.estimated.size()) + "/" +
                           std::to_string(window.ground_truth.size()) + " poses, expected " +
                           std::to_string(size));
  }
  const auto k = static_cast<std::size_t>(config.align_count);
  std::vector<Vec3> est(k);
  std::vector<Vec3> gt(k);
  for (std::size_t i = 0; i < k; ++i) {
    est[i] = window.estimated[i].translation();
    gt[i] = window.ground_truth[i].translation();
  }
  SimilarityTransform alignment;
  try {
    alignment = umeyama_align(est, gt);
  } catch (const DegenerateInput& e) {
    throw DegenerateWindow(e.what());
  }
  return (alignment.apply(window.estimated.back().translation()) -
          window.ground_truth.back().translation())
      .norm();
}

double reward(double e_tran, bool keyframe_taken, const RewardConfig& config) {
  return config.lambda1 * std::max(config.clip_floor, config.error_offset - e_tran) -
         config.lambda2 * (keyframe_taken ? 1.0 : 0.0);
}

}  // namespace rlvo
