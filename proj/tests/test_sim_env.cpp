#include "doctest.h"

#include <set>
#include <sstream>

#include "rlvo/errors.hpp"
#include "rlvo/sim_env.hpp"

using namespace rlvo;

namespace {

EnvConfig small_config() {
  EnvConfig c;
  c.episode_length = 120;
  return c;
}

Action scripted_action(int t) { return Action{t % 3 == 0, t % kNumGridSizes}; }

std::vector<StepResult> run(VoEnv& env, std::uint64_t seed) {
  env.reset(seed);
  std::vector<StepResult> out;
  for (int t = 0; !env.done(); ++t) out.push_back(env.step(scripted_action(t)));
  return out;
}

void check_same(const StepResult& a, const StepResult& b) {
  CHECK(a.privileged_observation == b.privileged_observation);
  CHECK(a.reward == b.reward);
  CHECK(a.done == b.done);
  CHECK(a.valid == b.valid);
  CHECK(a.info.mode == b.info.mode);
}

}  // namespace

TEST_CASE("episodes are deterministic in the seed") {
  VoEnv a(small_config());
  VoEnv b(small_config());
  const auto ra = run(a, 5);
  const auto rb = run(b, 5);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) check_same(ra[i], rb[i]);

  VoEnv c(small_config());
  const auto rc = run(c, 6);
  bool differs = rc.size() != ra.size();
  for (std::size_t i = 0; !differs && i < ra.size(); ++i) differs = !(ra[i].privileged_observation == rc[i].privileged_observation);
  CHECK(differs);
}

TEST_CASE("episode length and termination") {
  VoEnv env(small_config());
  const Observation obs = env.reset(1);
  CHECK(obs.keypoints.rows() > 0);
  CHECK(obs.map_stats.size() == map_stat::kDim);
  const auto results = run(env, 1);
  const bool lost = results.back().info.mode == VoMode::Lost;
  if (!lost) CHECK(results.back().info.frame == 119);
  CHECK(results.back().done);
  for (std::size_t i = 0; i + 1 < results.size(); ++i) CHECK_FALSE(results[i].done);
  CHECK_THROWS_AS(env.step(Action{}), SteppedAfterDone);
  CHECK_THROWS_AS(env.step(Action{}), SteppedAfterDone);
}

TEST_CASE("a keyframe on every frame keeps tracking") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    VoEnv env(small_config());
    env.reset(seed);
    while (!env.done()) {
      const StepResult r = env.step(Action{true, 0});
      CHECK(r.info.mode == VoMode::Tracking);
      CHECK(r.info.keyframe_inserted);
    }
  }
}

TEST_CASE("without keyframes the tracked count never grows and tracking is lost") {
  VoEnv env(EnvConfig{});
  env.reset(3);
  int previous = env.n_tracked();
  bool lost = false;
  while (!env.done() && !lost) {
    const StepResult r = env.step(Action{false, 0});
    lost = r.info.mode != VoMode::Tracking;
    if (!lost) CHECK(r.info.n_tracked <= previous);
    previous = r.info.n_tracked;
  }
  CHECK(lost);
}

TEST_CASE("invalid grid index is rejected") {
  VoEnv env(small_config());
  env.reset(2);
  CHECK_THROWS_AS(env.step(Action{false, 5}), IndexOutOfRange);
  CHECK_THROWS_AS(env.step(Action{false, -1}), IndexOutOfRange);
}

TEST_CASE("tracked keypoints respect the grid: at most one per cell") {
  EnvConfig cfg = small_config();
  VoEnv env(cfg);
  env.reset(3);
  for (int t = 0; !env.done(); ++t) {
    const Action a = scripted_action(t);
    const StepResult r = env.step(a);
    if (r.info.mode != VoMode::Tracking || !r.valid) continue;
    const int g = a.grid_size();
    CHECK(r.info.grid_size == g);
    CHECK(r.info.n_tracked <= env.grid_capacity(g));
    const auto& kp = r.observation().keypoints;
    std::set<std::pair<int, int>> cells;
    for (Eigen::Index i = 0; i < kp.rows(); ++i) {
      cells.insert({static_cast<int>(kp(i, 0) * cfg.image_width) / g,
                    static_cast<int>(kp(i, 1) * cfg.image_height) / g});
    }
    CHECK(cells.size() == static_cast<std::size_t>(kp.rows()));
  }
  CHECK(env.grid_capacity(20) == 32 * 24);
  CHECK(env.grid_capacity(25) == 26 * 20);
}

TEST_CASE("observations are finite and keypoints lie in the image") {
  VoEnv env(small_config());
  env.reset(4);
  while (!env.done()) {
    const StepResult r = env.step(Action{false, 2});
    const auto& obs = r.observation();
    CHECK(obs.map_stats.allFinite());
    CHECK(r.privileged_observation.extra.size() == kPrivilegedExtraDim);
    CHECK(r.privileged_observation.extra.allFinite());
    if (obs.keypoints.rows() > 0) {
      CHECK(obs.keypoints.col(0).minCoeff() >= 0.0);
      CHECK(obs.keypoints.col(0).maxCoeff() < 1.0);
      CHECK(obs.keypoints.col(2).minCoeff() > 0.0);
    }
    CHECK(std::isfinite(r.reward));
  }
}

TEST_CASE("rewards follow the reward rule") {
  EnvConfig cfg = small_config();
  VoEnv env(cfg);
  env.reset(5);
  int scored = 0;
  for (int t = 0; !env.done(); ++t) {
    const Action a = scripted_action(t);
    const StepResult r = env.step(a);
    if (!r.valid) {
      CHECK(r.reward == cfg.reward.invalid_state_reward());
    } else if (r.info.e_tran) {
      ++scored;
      CHECK(r.reward == doctest::Approx(reward(*r.info.e_tran, r.info.keyframe_inserted, cfg.reward)).epsilon(1e-12));
      CHECK(r.privileged_observation.extra(0) == *r.info.e_tran);
    }
  }
  CHECK(scored > 10);
}

TEST_CASE("save and load restore the full state") {
  VoEnv env(small_config());
  env.reset(7);
  for (int t = 0; t < 40 && !env.done(); ++t) env.step(scripted_action(t));
  std::stringstream ss;
  env.save_state(ss);

  VoEnv copy(small_config());
  copy.load_state(ss);
  for (int t = 40; !env.done(); ++t) {
    const StepResult a = env.step(scripted_action(t));
    const StepResult b = copy.step(scripted_action(t));
    check_same(a, b);
  }
  CHECK(copy.done());
}

TEST_CASE("vector environment auto-resets and is independent of thread count") {
  std::vector<EnvConfig> configs(4, small_config());
  VecEnv serial(configs, 1);
  VecEnv threaded(configs, 3);
  serial.reset(99);
  threaded.reset(99);
  int resets = 0;
  for (int t = 0; t < 300; ++t) {
    std::vector<Action> actions;
    for (std::size_t i = 0; i < 4; ++i) actions.push_back(scripted_action(t + static_cast<int>(i)));
    const auto a = serial.step(actions);
    const auto b = threaded.step(actions);
    for (std::size_t i = 0; i < 4; ++i) {
      check_same(a[i], b[i]);
      if (a[i].done) {
        ++resets;
        CHECK_FALSE(serial.at(i).done());
      }
    }
  }
  CHECK(resets >= 8);
  CHECK(serial.episode_seed(0, 0) != serial.episode_seed(0, 1));
  CHECK(serial.episode_seed(0, 0) != serial.episode_seed(1, 0));

  std::stringstream ss;
  serial.save_state(ss);
  VecEnv restored(configs, 2);
  restored.load_state(ss);
  std::vector<Action> actions(4, Action{true, 1});
  const auto a = serial.step(actions);
  const auto b = restored.step(actions);
  for (std::size_t i = 0; i < 4; ++i) check_same(a[i], b[i]);

  CHECK_THROWS_AS(serial.reset(std::vector<std::uint64_t>{1, 2}), LengthMismatch);
  CHECK_THROWS_AS(serial.step(std::vector<Action>(3)), LengthMismatch);
}

TEST_CASE("environment config validation") {
  EnvConfig c;
  c.episode_length = 3;
  CHECK_THROWS_AS(VoEnv{c}, InvalidConfig);
  c = EnvConfig{};
  c.initial_grid_index = 7;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = EnvConfig{};
  c.reloc_success_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  CHECK_NOTHROW(EnvConfig{}.validate());
}
