#include "rlvo/sim_env.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "rlvo/binary_io.hpp"
#include "rlvo/errors.hpp"

namespace rlvo {

std::string to_string(VoMode mode) {
  switch (mode) {
    case VoMode::Initializing: return "initializing";
    case VoMode::Tracking: return "tracking";
    case VoMode::Relocalizing: return "relocalizing";
    case VoMode::Lost: return "lost";
  }
  return "unknown";
}

namespace {

bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

Vec3 normal3(Rng& rng) {
  const double x = rng.normal();
  const double y = rng.normal();
  const double z = rng.normal();
  return {x, y, z};
}

}  // namespace

bool operator==(const Observation& a, const Observation& b) {
  return same_matrix(a.keypoints, b.keypoints) && same_matrix(a.map_stats, b.map_stats);
}

bool operator==(const PrivilegedObservation& a, const PrivilegedObservation& b) {
  return a.observation == b.observation && same_matrix(a.extra, b.extra);
}

int Action::grid_size() const {
  if (grid_size_index < 0 || grid_size_index >= kNumGridSizes) {
    throw IndexOutOfRange("grid size index " + std::to_string(grid_size_index) + " out of range");
  }
  return kGridSizes[static_cast<std::size_t>(grid_size_index)];
}

void EnvConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidConfig(std::string("env: ") + what);
  };
  require(image_width > 0 && image_height > 0, "image dimensions must be positive");
  require(focal_length > 0.0, "focal_length must be positive");
  require(frame_rate > 0.0, "frame_rate must be positive");
  require(landmark_count > 0, "landmark_count must be positive");
  require(min_depth > 0.0 && max_depth >= min_depth, "need 0 < min_depth <= max_depth");
  require(quality_min >= 0.0 && quality_min < 1.0, "quality_min must be in [0, 1)");
  require(velocity_std >= 0.0 && angular_velocity_std >= 0.0, "velocity stds must be >= 0");
  require(mean_reversion >= 0.0 && mean_reversion <= 1.0, "mean_reversion must be in [0, 1]");
  require(motion_scale_min >= 0.0 && motion_scale_max >= motion_scale_min,
          "need 0 <= motion_scale_min <= motion_scale_max");
  require(drift_sigma0 >= 0.0 && drift_alpha >= 0.0 && drift_rotation_ratio >= 0.0,
          "drift parameters must be >= 0");
  require(drift_beta >= 0.0 && drift_beta < 1.0, "drift_beta must be in [0, 1)");
  require(survival_kappa_t >= 0.0 && survival_kappa_r >= 0.0, "survival kappas must be >= 0");
  require(min_keypoints >= 1, "min_keypoints must be >= 1");
  require(init_frames >= 1, "init_frames must be >= 1");
  require(reloc_max_frames >= 1, "reloc_max_frames must be >= 1");
  require(reloc_success_prob >= 0.0 && reloc_success_prob <= 1.0,
          "reloc_success_prob must be in [0, 1]");
  require(initial_grid_index >= 0 && initial_grid_index < kNumGridSizes,
          "initial_grid_index out of range");
  require(keyframe_window >= 1, "keyframe_window must be >= 1");
  reward.validate();
  require(episode_length > init_frames + reward.window_size,
          "episode_length must exceed init_frames + reward.window_size");
}

VoEnv::VoEnv(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

int VoEnv::grid_capacity(int grid_size) const {
  const int cols = (config_.image_width + grid_size - 1) / grid_size;
  const int rows = (config_.image_height + grid_size - 1) / grid_size;
  return cols * rows;
}

void VoEnv::generate_trajectory(Rng& rng) {
  const auto length = static_cast<std::size_t>(config_.episode_length);
  const double dt = 1.0 / config_.frame_rate;
  const double scale = rng.uniform(config_.motion_scale_min, config_.motion_scale_max);
  const double sv = config_.velocity_std * scale;
  const double sw = config_.angular_velocity_std * scale;
  const double rho = config_.mean_reversion;
  const double innovation = std::sqrt(1.0 - rho * rho);

  Vec3 v = sv * normal3(rng);
  Vec3 w = sw * normal3(rng);
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();

  ground_truth_.clear();
  ground_truth_.reserve(length);
  for (std::size_t k = 0; k < length; ++k) {
    ground_truth_.emplace_back(static_cast<double>(k) * dt, position, rotation);
    v = rho * v + innovation * sv * normal3(rng);
    w = rho * w + innovation * sw * normal3(rng);
    position += rotation * (v * dt);
    rotation = canonical_quaternion(rotation * rotation_vector_quaternion(w * dt));
  }
}

void VoEnv::track_keypoints(const Pose& previous, const Pose& current) {
  const Pose motion = relative(previous, current);
  const double decay = std::exp(-(config_.survival_kappa_t * motion.translation().norm() +
                                  config_.survival_kappa_r * rotation_angle(motion)));
  const Pose world_to_camera = inverse(current);
  const double cx = 0.5 * config_.image_width;
  const double cy = 0.5 * config_.image_height;

  std::vector<Tracked> kept;
  kept.reserve(keypoints_.size());
  for (const auto& t : keypoints_) {
    const Vec3 pc = world_to_camera.transform_point(t.world);
    if (pc.z() < 0.05) continue;
    const double u = config_.focal_length * pc.x() / pc.z() + cx;
    const double v = config_.focal_length * pc.y() / pc.z() + cy;
    if (u < 0.0 || v < 0.0 || u >= config_.image_width || v >= config_.image_height) continue;
    if (!(rng_.uniform() < t.keypoint.quality * decay)) continue;
    Tracked next = t;
    next.keypoint.u = u / config_.image_width;
    next.keypoint.v = v / config_.image_height;
    next.keypoint.depth = pc.z();
    kept.push_back(next);
  }
  keypoints_ = std::move(kept);
}

void VoEnv::apply_grid(int grid_size) {
  const int cols = (config_.image_width + grid_size - 1) / grid_size;
  const int rows = (config_.image_height + grid_size - 1) / grid_size;
  std::vector<int> best(static_cast<std::size_t>(cols * rows), -1);
  auto cell_of = [&](const Keypoint& k) {
    const int cu = std::min(cols - 1, static_cast<int>(k.u * config_.image_width) / grid_size);
    const int cv = std::min(rows - 1, static_cast<int>(k.v * config_.image_height) / grid_size);
    return static_cast<std::size_t>(cv * cols + cu);
  };
  for (std::size_t i = 0; i < keypoints_.size(); ++i) {
    int& slot = best[cell_of(keypoints_[i].keypoint)];
    if (slot < 0 || keypoints_[i].keypoint.quality >
                        keypoints_[static_cast<std::size_t>(slot)].keypoint.quality) {
      slot = static_cast<int>(i);
    }
  }
  std::vector<Tracked> kept;
  kept.reserve(keypoints_.size());
  for (std::size_t i = 0; i < keypoints_.size(); ++i) {
    if (best[cell_of(keypoints_[i].keypoint)] == static_cast<int>(i)) kept.push_back(keypoints_[i]);
  }
  keypoints_ = std::move(kept);
}

void VoEnv::spawn_keypoints(const Pose& camera, int grid_size) {
  const int cols = (config_.image_width + grid_size - 1) / grid_size;
  const int rows = (config_.image_height + grid_size - 1) / grid_size;
  const std::size_t cells = static_cast<std::size_t>(cols * rows);
  std::vector<bool> occupied(cells, false);
  for (const auto& t : keypoints_) {
    const int cu = std::min(cols - 1, static_cast<int>(t.keypoint.u * config_.image_width) / grid_size);
    const int cv = std::min(rows - 1, static_cast<int>(t.keypoint.v * config_.image_height) / grid_size);
    occupied[static_cast<std::size_t>(cv * cols + cu)] = true;
  }

  // The same number of draws happens regardless of grid size and occupancy.
  std::vector<int> best(cells, -1);
  std::vector<Keypoint> candidates(static_cast<std::size_t>(config_.landmark_count));
  const double log_min = std::log(config_.min_depth);
  const double log_max = std::log(config_.max_depth);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Keypoint& k = candidates[i];
    k.u = rng_.uniform();
    k.v = rng_.uniform();
    k.depth = std::exp(rng_.uniform(log_min, log_max));
    k.quality = 1.0 - (1.0 - config_.quality_min) * rng_.uniform();  // (quality_min, 1]
    const int cu = static_cast<int>(k.u * config_.image_width) / grid_size;
    const int cv = static_cast<int>(k.v * config_.image_height) / grid_size;
    const auto cell = static_cast<std::size_t>(cv * cols + cu);
    if (occupied[cell]) continue;
    int& slot = best[cell];
    if (slot < 0 || k.quality > candidates[static_cast<std::size_t>(slot)].quality) {
      slot = static_cast<int>(i);
    }
  }

  const double cx = 0.5 * config_.image_width;
  const double cy = 0.5 * config_.image_height;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (best[cell] < 0) continue;
    const Keypoint& k = candidates[static_cast<std::size_t>(best[cell])];
    const double px = k.u * config_.image_width;
    const double py = k.v * config_.image_height;
    const Vec3 pc(k.depth * (px - cx) / config_.focal_length,
                  k.depth * (py - cy) / config_.focal_length, k.depth);
    keypoints_.push_back({camera.transform_point(pc), k});
  }
}

void VoEnv::register_keyframe(const Pose& estimate) {
  keyframes_.push_back(estimate);
  while (static_cast<int>(keyframes_.size()) > config_.keyframe_window) keyframes_.pop_front();
}

void VoEnv::update_drift() {
  const double n = std::max(1.0, static_cast<double>(keypoints_.size()));
  const double sigma = config_.drift_sigma0 *
                       (1.0 + config_.drift_alpha * distance_since_keyframe_) / std::sqrt(n);
  drift_rate_translation_ += sigma * normal3(rng_);
  drift_rate_rotation_ += sigma * config_.drift_rotation_ratio * normal3(rng_);
  drift_ = Pose(0.0, drift_.translation() + drift_rate_translation_,
                rotation_vector_quaternion(drift_rate_rotation_) * drift_.rotation());
}

Pose VoEnv::estimate_from_drift(const Pose& ground_truth) const {
  return compose(drift_, ground_truth);
}

void VoEnv::push_window(const Pose& estimate, const Pose& ground_truth) {
  window_estimated_.push_back(estimate);
  window_ground_truth_.push_back(ground_truth);
  const auto size = static_cast<std::size_t>(config_.reward.window_size);
  while (window_estimated_.size() > size) {
    window_estimated_.pop_front();
    window_ground_truth_.pop_front();
  }
}

void VoEnv::clear_window() {
  window_estimated_.clear();
  window_ground_truth_.clear();
}

Observation VoEnv::reset(std::uint64_t seed) {
  config_.seed = seed;
  Rng trajectory_rng(derive_seed(seed, {0}));
  rng_ = Rng(derive_seed(seed, {1}));
  generate_trajectory(trajectory_rng);

  log_ = EpisodeLog{};
  mode_ = VoMode::Initializing;
  // Initialization runs on ground-truth poses.
  for (int k = 0; k < config_.init_frames; ++k) {
    const Pose& gt = ground_truth_[static_cast<std::size_t>(k)];
    log_.ground_truth.push_back(gt);
    log_.estimated.push_back(gt);
    log_.keyframe_flags.push_back(false);
  }
  frame_ = config_.init_frames - 1;
  const Pose& current = ground_truth_[static_cast<std::size_t>(frame_)];

  drift_ = Pose::identity();
  drift_rate_translation_.setZero();
  drift_rate_rotation_.setZero();
  grid_index_ = config_.initial_grid_index;
  keypoints_.clear();
  spawn_keypoints(current, grid_size());
  keyframes_.clear();
  register_keyframe(current);
  last_estimate_ = current;
  clear_window();

  mode_ = VoMode::Tracking;
  previous_keyframe_ = false;
  frames_since_keyframe_ = 0;
  distance_since_keyframe_ = 0.0;
  keyframe_count_ = 0;
  reloc_frames_ = 0;
  steps_ = 0;
  e_tran_.reset();
  done_ = false;
  return observation();
}

StepResult VoEnv::step(const Action& action) {
  if (done_) throw SteppedAfterDone("step() called on a terminated episode; call reset()");
  const int requested_grid = action.grid_size();  // validates the index

  const VoMode previous_mode = mode_;
  const Pose& previous_gt = ground_truth_[static_cast<std::size_t>(frame_)];
  ++frame_;
  ++steps_;
  const Pose& gt = ground_truth_[static_cast<std::size_t>(frame_)];
  distance_since_keyframe_ += (gt.translation() - previous_gt.translation()).norm();

  const RewardConfig& rc = config_.reward;
  std::optional<Pose> estimate;
  bool keyframe_inserted = false;
  double r = rc.invalid_state_reward();
  e_tran_.reset();

  if (previous_mode == VoMode::Tracking) {
    grid_index_ = action.grid_size_index;
    track_keypoints(previous_gt, gt);
    apply_grid(requested_grid);
    // Keypoints detected in a new keyframe count towards the tracking check.
    if (action.keyframe) spawn_keypoints(gt, requested_grid);
    if (static_cast<int>(keypoints_.size()) < config_.min_keypoints) {
      mode_ = VoMode::Relocalizing;
      reloc_frames_ = 0;
      keypoints_.clear();
      clear_window();
    } else {
      if (action.keyframe) {
        keyframe_inserted = true;
        ++keyframe_count_;
        drift_rate_translation_ *= config_.drift_beta;
        drift_rate_rotation_ *= config_.drift_beta;
      }
      update_drift();
      estimate = estimate_from_drift(gt);
      if (keyframe_inserted) {
        register_keyframe(*estimate);
        frames_since_keyframe_ = 0;
        distance_since_keyframe_ = 0.0;
      } else {
        ++frames_since_keyframe_;
      }
      push_window(*estimate, gt);
      double positional = 0.0;  // under-filled or degenerate window
      if (window_estimated_.size() == static_cast<std::size_t>(rc.window_size)) {
        PoseWindow window{{window_estimated_.begin(), window_estimated_.end()},
                          {window_ground_truth_.begin(), window_ground_truth_.end()}};
        try {
          e_tran_ = sliding_window_error(window, rc);
          positional = rc.lambda1 * std::max(rc.clip_floor, rc.error_offset - *e_tran_);
        } catch (const DegenerateWindow&) {
        }
      }
      r = positional - rc.lambda2 * (keyframe_inserted ? 1.0 : 0.0);
    }
  } else if (previous_mode == VoMode::Relocalizing) {
    ++reloc_frames_;
    if (rng_.uniform() < config_.reloc_success_prob) {
      // Relocalized: tracking restarts from a system keyframe at this frame.
      mode_ = VoMode::Tracking;
      spawn_keypoints(gt, grid_size());
      drift_rate_translation_ *= config_.drift_beta;
      drift_rate_rotation_ *= config_.drift_beta;
      estimate = estimate_from_drift(gt);
      register_keyframe(*estimate);
      frames_since_keyframe_ = 0;
      distance_since_keyframe_ = 0.0;
      push_window(*estimate, gt);
    } else if (reloc_frames_ >= config_.reloc_max_frames) {
      mode_ = VoMode::Lost;
    }
  }

  previous_keyframe_ = keyframe_inserted;
  if (estimate) last_estimate_ = *estimate;
  if (mode_ == VoMode::Lost || frame_ >= config_.episode_length - 1) done_ = true;

  log_.ground_truth.push_back(gt);
  if (estimate) log_.estimated.push_back(*estimate);
  log_.keyframe_flags.push_back(keyframe_inserted);

  StepResult result;
  result.privileged_observation = privileged_observation();
  result.reward = r;
  result.done = done_;
  result.valid = previous_mode == VoMode::Tracking;
  result.info.ground_truth = gt;
  result.info.estimated = estimate;
  result.info.mode = mode_;
  result.info.keyframe_count = keyframe_count_;
  result.info.frame = frame_;
  result.info.n_tracked = n_tracked();
  result.info.grid_size = grid_size();
  result.info.keyframe_inserted = keyframe_inserted;
  result.info.e_tran = e_tran_;

  log_.steps.push_back({steps_, frame_, mode_, result.valid, keyframe_inserted, grid_size(),
                        n_tracked(), e_tran_, r});
  return result;
}

Observation VoEnv::observation() const {
  Observation obs;
  if (mode_ == VoMode::Tracking) {
    obs.keypoints.resize(static_cast<Eigen::Index>(keypoints_.size()), 3);
    for (std::size_t i = 0; i < keypoints_.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      obs.keypoints(r, 0) = keypoints_[i].keypoint.u;
      obs.keypoints(r, 1) = keypoints_[i].keypoint.v;
      obs.keypoints(r, 2) = keypoints_[i].keypoint.depth;
    }
  }
  Eigen::VectorXd& s = obs.map_stats;
  if (!keyframes_.empty()) {
    const Pose newest = relative(keyframes_.back(), last_estimate_);
    const Pose oldest = relative(keyframes_.front(), last_estimate_);
    s.segment<3>(map_stat::kNewestKeyframeTranslation) = newest.translation();
    s(map_stat::kNewestKeyframeAngle) = rotation_angle(newest);
    s.segment<3>(map_stat::kOldestKeyframeTranslation) = oldest.translation();
    s(map_stat::kOldestKeyframeAngle) = rotation_angle(oldest);
  }
  // Log scale resolves counts near the tracking minimum, where loss is imminent.
  s(map_stat::kKeypointCount) =
      std::log(std::max<double>(static_cast<double>(obs.keypoints.rows()), 1.0) / config_.min_keypoints);
  s(map_stat::kTimeSinceKeyframe) = frames_since_keyframe_ / config_.frame_rate;
  s(map_stat::kGridSize) = (grid_size() - kGridSizes.front()) /
                           static_cast<double>(kGridSizes.back() - kGridSizes.front());
  s(map_stat::kPreviousKeyframe) = previous_keyframe_ ? 1.0 : 0.0;
  return obs;
}

PrivilegedObservation VoEnv::privileged_observation() const {
  PrivilegedObservation p;
  p.observation = observation();
  p.extra(0) = e_tran_.value_or(0.0);
  for (int k = 1; k <= kFutureHorizon; ++k) {
    const int f = frame_ + k;
    if (f >= static_cast<int>(ground_truth_.size())) break;  // zero padding
    const Pose motion = relative(ground_truth_[static_cast<std::size_t>(f - 1)],
                                 ground_truth_[static_cast<std::size_t>(f)]);
    p.extra(2 * k - 1) = motion.translation().norm();
    p.extra(2 * k) = rotation_angle(motion);
  }
  return p;
}

void VoEnv::save_state(std::ostream& os) const {
  using namespace bin;
  write<std::uint64_t>(os, config_.seed);
  rng_.save(os);
  write<std::uint64_t>(os, ground_truth_.size());
  for (const auto& p : ground_truth_) write_pose(os, p);
  write<std::uint64_t>(os, keypoints_.size());
  for (const auto& t : keypoints_) {
    write_vec3(os, t.world);
    write<double>(os, t.keypoint.u);
    write<double>(os, t.keypoint.v);
    write<double>(os, t.keypoint.depth);
    write<double>(os, t.keypoint.quality);
  }
  auto write_poses = [&](const std::deque<Pose>& poses) {
    write<std::uint64_t>(os, poses.size());
    for (const auto& p : poses) write_pose(os, p);
  };
  write_poses(keyframes_);
  write_poses(window_estimated_);
  write_poses(window_ground_truth_);
  write<std::int32_t>(os, static_cast<std::int32_t>(mode_));
  write<std::int32_t>(os, frame_);
  write<std::int32_t>(os, grid_index_);
  write<std::uint8_t>(os, previous_keyframe_);
  write<std::int32_t>(os, frames_since_keyframe_);
  write<double>(os, distance_since_keyframe_);
  write<std::int32_t>(os, keyframe_count_);
  write<std::int32_t>(os, reloc_frames_);
  write<std::int32_t>(os, steps_);
  write<std::uint8_t>(os, done_);
  write_pose(os, drift_);
  write_vec3(os, drift_rate_translation_);
  write_vec3(os, drift_rate_rotation_);
  write_pose(os, last_estimate_);
  write<std::uint8_t>(os, e_tran_.has_value());
  write<double>(os, e_tran_.value_or(0.0));
}

void VoEnv::load_state(std::istream& is) {
  using namespace bin;
  config_.seed = read<std::uint64_t>(is);
  rng_.load(is);
  const auto n_gt = read<std::uint64_t>(is);
  if (n_gt != static_cast<std::uint64_t>(config_.episode_length)) {
    throw CheckpointError("environment state does not match the configured episode length");
  }
  ground_truth_.clear();
  for (std::uint64_t i = 0; i < n_gt; ++i) ground_truth_.push_back(read_pose(is));
  const auto n_kp = read<std::uint64_t>(is);
  if (n_kp > (1u << 24)) throw CheckpointError("keypoint count out of range");
  keypoints_.clear();
  for (std::uint64_t i = 0; i < n_kp; ++i) {
    Tracked t;
    t.world = read_vec3(is);
    t.keypoint.u = read<double>(is);
    t.keypoint.v = read<double>(is);
    t.keypoint.depth = read<double>(is);
    t.keypoint.quality = read<double>(is);
    keypoints_.push_back(t);
  }
  auto read_poses = [&](std::deque<Pose>& poses) {
    const auto n = read<std::uint64_t>(is);
    if (n > (1u << 20)) throw CheckpointError("pose count out of range");
    poses.clear();
    for (std::uint64_t i = 0; i < n; ++i) poses.push_back(read_pose(is));
  };
  read_poses(keyframes_);
  read_poses(window_estimated_);
  read_poses(window_ground_truth_);
  mode_ = static_cast<VoMode>(read<std::int32_t>(is));
  frame_ = read<std::int32_t>(is);
  grid_index_ = read<std::int32_t>(is);
  previous_keyframe_ = read<std::uint8_t>(is) != 0;
  frames_since_keyframe_ = read<std::int32_t>(is);
  distance_since_keyframe_ = read<double>(is);
  keyframe_count_ = read<std::int32_t>(is);
  reloc_frames_ = read<std::int32_t>(is);
  steps_ = read<std::int32_t>(is);
  done_ = read<std::uint8_t>(is) != 0;
  drift_ = read_pose(is);
  drift_rate_translation_ = read_vec3(is);
  drift_rate_rotation_ = read_vec3(is);
  last_estimate_ = read_pose(is);
  const bool has_e = read<std::uint8_t>(is) != 0;
  const double e = read<double>(is);
  e_tran_ = has_e ? std::optional<double>(e) : std::nullopt;
  if (grid_index_ < 0 || grid_index_ >= kNumGridSizes || frame_ < 0 ||
      frame_ >= config_.episode_length) {
    throw CheckpointError("environment state out of range");
  }
  // The episode log is not part of the dynamic state.
  log_ = EpisodeLog{};
}

void parallel_for(std::size_t n, int num_threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, num_threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

VecEnv::VecEnv(std::size_t count, const Factory& factory, int num_threads)
    : base_seeds_(count, 0), episodes_(count, 0), num_threads_(num_threads) {
  envs_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) envs_.push_back(factory(i));
}

VecEnv::VecEnv(const std::vector<EnvConfig>& configs, int num_threads)
    : VecEnv(configs.size(), [&](std::size_t i) { return std::make_unique<VoEnv>(configs[i]); },
             num_threads) {}

std::vector<Observation> VecEnv::reset(std::uint64_t master_seed) {
  std::vector<std::uint64_t> seeds(envs_.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(master_seed, {i});
  return reset(seeds);
}

std::vector<Observation> VecEnv::reset(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != envs_.size()) {
    throw LengthMismatch("vec reset: " + std::to_string(seeds.size()) + " seeds for " +
                         std::to_string(envs_.size()) + " instances");
  }
  std::vector<Observation> out(envs_.size());
  base_seeds_ = seeds;
  std::fill(episodes_.begin(), episodes_.end(), 0);
  parallel_for(envs_.size(), num_threads_, [&](std::size_t i) { out[i] = envs_[i]->reset(seeds[i]); });
  return out;
}

std::uint64_t VecEnv::episode_seed(std::size_t i, std::uint64_t episode) const {
  return episode == 0 ? base_seeds_.at(i) : derive_seed(base_seeds_.at(i), {episode});
}

std::vector<StepResult> VecEnv::step(const std::vector<Action>& actions) {
  if (actions.size() != envs_.size()) {
    throw LengthMismatch("vec step: " + std::to_string(actions.size()) + " actions for " +
                         std::to_string(envs_.size()) + " instances");
  }
  std::vector<StepResult> out(envs_.size());
  parallel_for(envs_.size(), num_threads_, [&](std::size_t i) {
    out[i] = envs_[i]->step(actions[i]);
    if (out[i].done) {
      ++episodes_[i];
      envs_[i]->reset(episode_seed(i, episodes_[i]));
      out[i].privileged_observation = envs_[i]->privileged_observation();
    }
  });
  return out;
}

std::vector<PrivilegedObservation> VecEnv::privileged_observations() const {
  std::vector<PrivilegedObservation> out;
  out.reserve(envs_.size());
  for (const auto& e : envs_) out.push_back(e->privileged_observation());
  return out;
}

void VecEnv::save_state(std::ostream& os) const {
  bin::write<std::uint64_t>(os, envs_.size());
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    bin::write<std::uint64_t>(os, base_seeds_[i]);
    bin::write<std::uint64_t>(os, episodes_[i]);
    envs_[i]->save_state(os);
  }
}

void VecEnv::load_state(std::istream& is) {
  const auto n = bin::read<std::uint64_t>(is);
  if (n != envs_.size()) throw CheckpointError("vec env state has a different instance count");
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    base_seeds_[i] = bin::read<std::uint64_t>(is);
    episodes_[i] = bin::read<std::uint64_t>(is);
    envs_[i]->load_state(is);
  }
}

}  // namespace rlvo
