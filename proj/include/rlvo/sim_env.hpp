#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlvo/geometry.hpp"
#include "rlvo/random.hpp"
#include "rlvo/reward.hpp"

namespace rlvo {

enum class VoMode { Initializing, Tracking, Relocalizing, Lost };

std::string to_string(VoMode mode);

inline constexpr std::array<int, 5> kGridSizes{20, 25, 30, 35, 40};
inline constexpr int kNumGridSizes = static_cast<int>(kGridSizes.size());

// Layout of Observation::map_stats.
namespace map_stat {
inline constexpr int kNewestKeyframeTranslation = 0;  // 3 values
inline constexpr int kNewestKeyframeAngle = 3;
inline constexpr int kOldestKeyframeTranslation = 4;  // 3 values
inline constexpr int kOldestKeyframeAngle = 7;
inline constexpr int kKeypointCount = 8;  // log(max(n, 1) / min_keypoints)
inline constexpr int kTimeSinceKeyframe = 9;  // seconds
inline constexpr int kGridSize = 10;  // (g - 20) / 20
inline constexpr int kPreviousKeyframe = 11;
inline constexpr int kDim = 12;
}  // namespace map_stat

inline constexpr int kFutureHorizon = 5;
// e_tran followed by (translation norm, rotation angle) for each future step.
inline constexpr int kPrivilegedExtraDim = 1 + 2 * kFutureHorizon;

// Image-plane keypoint; quality is simulator-internal and never observed.
struct Keypoint {
  double u = 0.0;  // normalized to [0, 1)
  double v = 0.0;
  double depth = 1.0;  // meters
  double quality = 1.0;
};

struct Observation {
  // N x 3 rows of (u, v, depth), u and v normalized, depth in meters.
  Eigen::MatrixX3d keypoints = Eigen::MatrixX3d(0, 3);
  Eigen::VectorXd map_stats = Eigen::VectorXd::Zero(map_stat::kDim);

  // Shape-checked, exact element comparison.
  friend bool operator==(const Observation& a, const Observation& b);
};

struct PrivilegedObservation {
  Observation observation;
  Eigen::VectorXd extra = Eigen::VectorXd::Zero(kPrivilegedExtraDim);

  friend bool operator==(const PrivilegedObservation& a, const PrivilegedObservation& b);
};

struct Action {
  bool keyframe = false;
  int grid_size_index = 0;

  int grid_size() const;
  friend bool operator==(const Action&, const Action&) = default;
};

struct StepInfo {
  Pose ground_truth;
  std::optional<Pose> estimated;
  VoMode mode = VoMode::Tracking;
  int keyframe_count = 0;  // keyframes selected by the agent this episode
  int frame = 0;
  int n_tracked = 0;
  int grid_size = 0;
  bool keyframe_inserted = false;
  std::optional<double> e_tran;
};

struct StepResult {
  PrivilegedObservation privileged_observation;
  double reward = 0.0;
  bool done = false;
  // The state the action was taken in was tracking.
  bool valid = false;
  StepInfo info;

  const Observation& observation() const { return privileged_observation.observation; }
};

// Common surface of every environment the trainer can drive.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual Observation reset(std::uint64_t seed) = 0;
  // Throws SteppedAfterDone once the episode has terminated.
  virtual StepResult step(const Action& action) = 0;
  virtual PrivilegedObservation privileged_observation() const = 0;
  virtual bool done() const = 0;

  // Full dynamic state, including random streams.
  virtual void save_state(std::ostream& os) const = 0;
  virtual void load_state(std::istream& is) = 0;
};

struct EnvConfig {
  int episode_length = 500;  // frames, including initialization
  int image_width = 640;
  int image_height = 480;
  double focal_length = 320.0;  // pixels
  double frame_rate = 20.0;  // Hz

  // Candidate detections drawn at each keyframe.
  int landmark_count = 10000;
  double min_depth = 1.0;
  double max_depth = 10.0;
  double quality_min = 0.2;

  // Ornstein-Uhlenbeck body twist.
  double velocity_std = 0.3;  // m/s per axis
  double angular_velocity_std = 0.3;  // rad/s per axis
  double mean_reversion = 0.9;  // per-frame retention
  // Per-episode multiplier on both stds, uniform in [min, max].
  double motion_scale_min = 0.5;
  double motion_scale_max = 1.5;

  // Drift increment std = drift_sigma0 * (1 + drift_alpha * d_kf) / sqrt(n).
  double drift_sigma0 = 0.002;  // m
  double drift_alpha = 2.0;  // 1/m
  double drift_beta = 0.5;  // drift-rate damping on keyframe insertion
  double drift_rotation_ratio = 0.1;  // rad of rotation drift per m of translation drift

  // Per-frame survival = quality * exp(-(kappa_t |dt| + kappa_r dtheta)).
  double survival_kappa_t = 1.0;  // 1/m
  double survival_kappa_r = 1.0;  // 1/rad

  int min_keypoints = 10;
  int init_frames = 5;
  int reloc_max_frames = 20;
  double reloc_success_prob = 0.3;
  int initial_grid_index = 2;
  int keyframe_window = 5;

  RewardConfig reward;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
};

// One row of the per-step episode log.
struct StepRecord {
  int step = 0;
  int frame = 0;
  VoMode mode = VoMode::Tracking;
  bool valid = false;
  bool keyframe = false;
  int grid_size = 0;
  int n_tracked = 0;
  std::optional<double> e_tran;
  double reward = 0.0;
};

struct EpisodeLog {
  Trajectory ground_truth;  // frames 0..current
  Trajectory estimated;  // frames with a pose estimate
  std::vector<bool> keyframe_flags;  // per ground-truth frame, agent-selected keyframes
  std::vector<StepRecord> steps;
};

// Stochastic stand-in for a monocular VO front end: a camera follows a
// smooth random trajectory, keypoints are spawned on a grid at keyframes and
// decay with motion, the estimate drifts faster with fewer keypoints and
// longer keyframe baselines, and tracking falls back to relocalization when
// too few keypoints survive.
class VoEnv final : public Environment {
 public:
  explicit VoEnv(EnvConfig config);

  Observation reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  PrivilegedObservation privileged_observation() const override;
  bool done() const override { return done_; }

  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;

  Observation observation() const;
  const EnvConfig& config() const { return config_; }
  VoMode mode() const { return mode_; }
  int frame() const { return frame_; }
  int frames_since_keyframe() const { return frames_since_keyframe_; }
  double distance_since_keyframe() const { return distance_since_keyframe_; }
  int n_tracked() const { return static_cast<int>(keypoints_.size()); }
  int grid_size() const { return kGridSizes[static_cast<std::size_t>(grid_index_)]; }
  const std::vector<Pose>& ground_truth() const { return ground_truth_; }
  const EpisodeLog& episode_log() const { return log_; }
  std::optional<double> current_e_tran() const { return e_tran_; }

  // ceil(W / g) * ceil(H / g)
  int grid_capacity(int grid_size) const;

 private:
  struct Tracked {
    Vec3 world;
    Keypoint keypoint;
  };

  void generate_trajectory(Rng& rng);
  void track_keypoints(const Pose& previous, const Pose& current);
  void apply_grid(int grid_size);
  void spawn_keypoints(const Pose& camera, int grid_size);
  void register_keyframe(const Pose& estimate);
  void update_drift();
  Pose estimate_from_drift(const Pose& ground_truth) const;
  void push_window(const Pose& estimate, const Pose& ground_truth);
  void clear_window();

  EnvConfig config_;
  Rng rng_{0};
  std::vector<Pose> ground_truth_;
  std::vector<Tracked> keypoints_;
  std::deque<Pose> keyframes_;  // estimated keyframe poses, newest last
  std::deque<Pose> window_estimated_;
  std::deque<Pose> window_ground_truth_;

  VoMode mode_ = VoMode::Initializing;
  int frame_ = 0;
  int grid_index_ = 0;
  bool previous_keyframe_ = false;
  int frames_since_keyframe_ = 0;
  double distance_since_keyframe_ = 0.0;
  int keyframe_count_ = 0;
  int reloc_frames_ = 0;
  int steps_ = 0;
  bool done_ = true;

  Pose drift_;
  Vec3 drift_rate_translation_ = Vec3::Zero();
  Vec3 drift_rate_rotation_ = Vec3::Zero();
  Pose last_estimate_;
  std::optional<double> e_tran_;

  EpisodeLog log_;
};

// Independent environment instances stepped element-wise. A terminated
// instance reports done for its terminal step and is immediately reset with
// a fresh sequence seed derived from its base seed and episode counter.
class VecEnv {
 public:
  using Factory = std::function<std::unique_ptr<Environment>(std::size_t index)>;

  VecEnv(std::size_t count, const Factory& factory, int num_threads = 1);
  // One VoEnv per config.
  explicit VecEnv(const std::vector<EnvConfig>& configs, int num_threads = 1);

  std::size_t size() const { return envs_.size(); }
  Environment& at(std::size_t i) { return *envs_.at(i); }
  const Environment& at(std::size_t i) const { return *envs_.at(i); }

  // Instance i starts from derive_seed(master_seed, {i}).
  std::vector<Observation> reset(std::uint64_t master_seed);
  // Throws LengthMismatch.
  std::vector<Observation> reset(const std::vector<std::uint64_t>& seeds);
  std::vector<StepResult> step(const std::vector<Action>& actions);
  std::vector<PrivilegedObservation> privileged_observations() const;

  // Seed used for episode `episode` of instance i (episode 0 is the base seed).
  std::uint64_t episode_seed(std::size_t i, std::uint64_t episode) const;

  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

 private:
  std::vector<std::unique_ptr<Environment>> envs_;
  std::vector<std::uint64_t> base_seeds_;
  std::vector<std::uint64_t> episodes_;
  int num_threads_ = 1;
};

// Runs fn(i) for i in [0, n) on up to num_threads threads. Work is split in
// contiguous blocks; callers must not depend on execution order.
void parallel_for(std::size_t n, int num_threads, const std::function<void(std::size_t)>& fn);

}  // namespace rlvo
