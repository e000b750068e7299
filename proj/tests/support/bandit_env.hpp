#pragma once

#include <istream>
#include <ostream>

#include "rlvo/binary_io.hpp"
#include "rlvo/sim_env.hpp"

namespace rlvo::testing {

// One-step contextual bandit: the observation carries a binary flag in the
// previous-keyframe slot of map_stats and the keyframe action earns 1 exactly
// when it matches the flag. Every step terminates the episode.
class BanditEnv final : public Environment {
 public:
  static constexpr int kFlagIndex = map_stat::kPreviousKeyframe;

  Observation reset(std::uint64_t seed) override {
    rng_ = Rng(seed);
    draw();
    done_ = false;
    return observation();
  }

  StepResult step(const Action& action) override {
    if (done_) throw SteppedAfterDone("bandit stepped after done");
    action.grid_size();
    StepResult r;
    r.reward = action.keyframe == flag_ ? 1.0 : 0.0;
    r.done = true;
    r.valid = true;
    r.info.keyframe_inserted = action.keyframe;
    done_ = true;
    draw();
    r.privileged_observation = privileged_observation();
    return r;
  }

  PrivilegedObservation privileged_observation() const override {
    PrivilegedObservation p;
    p.observation = observation();
    return p;
  }

  bool done() const override { return done_; }
  bool flag() const { return flag_; }

  void save_state(std::ostream& os) const override {
    rng_.save(os);
    bin::write<std::uint8_t>(os, flag_ ? 1 : 0);
    bin::write<std::uint8_t>(os, done_ ? 1 : 0);
    bin::write_matrix(os, keypoints_);
  }

  void load_state(std::istream& is) override {
    rng_.load(is);
    flag_ = bin::read<std::uint8_t>(is) != 0;
    done_ = bin::read<std::uint8_t>(is) != 0;
    keypoints_ = bin::read_matrix(is);
  }

 private:
  Observation observation() const {
    Observation obs;
    obs.keypoints = keypoints_;
    obs.map_stats(kFlagIndex) = flag_ ? 1.0 : 0.0;
    return obs;
  }

  void draw() {
    flag_ = rng_.uniform() < 0.5;
    keypoints_.resize(5, 3);
    for (Eigen::Index i = 0; i < keypoints_.rows(); ++i) {
      keypoints_(i, 0) = rng_.uniform();
      keypoints_(i, 1) = rng_.uniform();
      keypoints_(i, 2) = rng_.uniform(1.0, 10.0);
    }
  }

  Rng rng_{0};
  bool flag_ = false;
  bool done_ = true;
  Eigen::MatrixXd keypoints_ = Eigen::MatrixXd(0, 3);
};

}  // namespace rlvo::testing
