#include "rlvo/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "rlvo/errors.hpp"

namespace rlvo {

using nlohmann::json;

namespace {

// Reads optional fields from one JSON object and rejects leftovers.
class Section {
 public:
  Section(const json& doc, std::string name, const std::string& source)
      : name_(std::move(name)), source_(source) {
    if (!doc.is_object()) fail("must be an object");
    doc_ = &doc;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = doc_->find(key);
    if (it == doc_->end()) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) fail(std::string(key) + " must be an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) fail(std::string(key) + " must be a number");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      fail(std::string(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = doc_->find(key);
    return it == doc_->end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : doc_->items()) {
      if (!seen_.count(item.key())) fail("unknown key \"" + item.key() + "\"");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw InvalidConfig(source_ + ": " + (name_.empty() ? "" : name_ + ": ") + msg);
  }

 private:
  const json* doc_ = nullptr;
  std::string name_;
  std::string source_;
  std::set<std::string> seen_;
};

template <typename F>
void with_section(Section& parent, const char* key, const std::string& source, F&& f) {
  if (const json* node = parent.child(key)) {
    Section s(*node, key, source);
    f(s);
    s.finish();
  }
}

void env_fields(Section& s, EnvConfig& c) {
  s.get("episode_length", c.episode_length);
  s.get("image_width", c.image_width);
  s.get("image_height", c.image_height);
  s.get("focal_length", c.focal_length);
  s.get("frame_rate", c.frame_rate);
  s.get("landmark_count", c.landmark_count);
  s.get("min_depth", c.min_depth);
  s.get("max_depth", c.max_depth);
  s.get("quality_min", c.quality_min);
  s.get("velocity_std", c.velocity_std);
  s.get("angular_velocity_std", c.angular_velocity_std);
  s.get("mean_reversion", c.mean_reversion);
  s.get("motion_scale_min", c.motion_scale_min);
  s.get("motion_scale_max", c.motion_scale_max);
  s.get("drift_sigma0", c.drift_sigma0);
  s.get("drift_alpha", c.drift_alpha);
  s.get("drift_beta", c.drift_beta);
  s.get("drift_rotation_ratio", c.drift_rotation_ratio);
  s.get("survival_kappa_t", c.survival_kappa_t);
  s.get("survival_kappa_r", c.survival_kappa_r);
  s.get("min_keypoints", c.min_keypoints);
  s.get("init_frames", c.init_frames);
  s.get("reloc_max_frames", c.reloc_max_frames);
  s.get("reloc_success_prob", c.reloc_success_prob);
  s.get("initial_grid_index", c.initial_grid_index);
  s.get("keyframe_window", c.keyframe_window);
}

void reward_fields(Section& s, RewardConfig& c) {
  s.get("lambda1", c.lambda1);
  s.get("lambda2", c.lambda2);
  s.get("clip_floor", c.clip_floor);
  s.get("error_offset", c.error_offset);
  s.get("window_size", c.window_size);
  s.get("align_count", c.align_count);
}

void net_fields(Section& s, NetConfig& c) {
  s.get("token_count", c.token_count);
  s.get("token_dim", c.token_dim);
  s.get("heads", c.heads);
  s.get("mlp_hidden", c.mlp_hidden);
  s.get("depth_scale", c.depth_scale);
}

void ppo_fields(Section& s, PpoConfig& c) {
  s.get("gamma", c.gamma);
  s.get("gae_lambda", c.gae_lambda);
  s.get("clip_epsilon", c.clip_epsilon);
  s.get("epochs", c.epochs);
  s.get("minibatch_size", c.minibatch_size);
  s.get("learning_rate", c.learning_rate);
  std::string optimizer = to_string(c.optimizer);
  s.get("optimizer", optimizer);
  try {
    c.optimizer = optimizer_from_string(optimizer);
  } catch (const InvalidConfig& e) {
    s.fail(e.what());
  }
  s.get("momentum", c.momentum);
  s.get("adam_beta1", c.adam_beta1);
  s.get("adam_beta2", c.adam_beta2);
  s.get("adam_epsilon", c.adam_epsilon);
  s.get("value_coef", c.value_coef);
  s.get("entropy_coef", c.entropy_coef);
  s.get("max_grad_norm", c.max_grad_norm);
  s.get("num_envs", c.num_envs);
  s.get("rollout_len", c.rollout_len);
  s.get("iterations", c.iterations);
  s.get("num_threads", c.num_threads);
}

void eval_fields(Section& s, EvalConfig& c) {
  s.get("episodes", c.episodes);
  s.get("every_k", c.every_k);
  s.get("seed", c.seed);
  s.get("sample_actions", c.sample_actions);
  s.get("num_threads", c.num_threads);
}

json snapshot(const RunConfig& c, bool include_output_dir) {
  const EnvConfig& e = c.env;
  const RewardConfig& r = c.env.reward;
  const NetConfig& n = c.net;
  const PpoConfig& p = c.ppo;
  json doc;
  doc["seed"] = c.seed;
  if (include_output_dir) doc["output_dir"] = c.output_dir.string();
  doc["env"] = {{"episode_length", e.episode_length},
                {"image_width", e.image_width},
                {"image_height", e.image_height},
                {"focal_length", e.focal_length},
                {"frame_rate", e.frame_rate},
                {"landmark_count", e.landmark_count},
                {"min_depth", e.min_depth},
                {"max_depth", e.max_depth},
                {"quality_min", e.quality_min},
                {"velocity_std", e.velocity_std},
                {"angular_velocity_std", e.angular_velocity_std},
                {"mean_reversion", e.mean_reversion},
                {"motion_scale_min", e.motion_scale_min},
                {"motion_scale_max", e.motion_scale_max},
                {"drift_sigma0", e.drift_sigma0},
                {"drift_alpha", e.drift_alpha},
                {"drift_beta", e.drift_beta},
                {"drift_rotation_ratio", e.drift_rotation_ratio},
                {"survival_kappa_t", e.survival_kappa_t},
                {"survival_kappa_r", e.survival_kappa_r},
                {"min_keypoints", e.min_keypoints},
                {"init_frames", e.init_frames},
                {"reloc_max_frames", e.reloc_max_frames},
                {"reloc_success_prob", e.reloc_success_prob},
                {"initial_grid_index", e.initial_grid_index},
                {"keyframe_window", e.keyframe_window}};
  doc["reward"] = {{"lambda1", r.lambda1},         {"lambda2", r.lambda2},
                   {"clip_floor", r.clip_floor},   {"error_offset", r.error_offset},
                   {"window_size", r.window_size}, {"align_count", r.align_count}};
  doc["net"] = {{"token_count", n.token_count}, {"token_dim", n.token_dim},
                {"heads", n.heads},             {"mlp_hidden", n.mlp_hidden},
                {"depth_scale", n.depth_scale}};
  doc["ppo"] = {{"gamma", p.gamma},
                {"gae_lambda", p.gae_lambda},
                {"clip_epsilon", p.clip_epsilon},
                {"epochs", p.epochs},
                {"minibatch_size", p.minibatch_size},
                {"learning_rate", p.learning_rate},
                {"optimizer", to_string(p.optimizer)},
                {"momentum", p.momentum},
                {"adam_beta1", p.adam_beta1},
                {"adam_beta2", p.adam_beta2},
                {"adam_epsilon", p.adam_epsilon},
                {"value_coef", p.value_coef},
                {"entropy_coef", p.entropy_coef},
                {"max_grad_norm", p.max_grad_norm},
                {"num_envs", p.num_envs},
                {"rollout_len", p.rollout_len},
                {"iterations", p.iterations},
                {"num_threads", p.num_threads}};
  doc["eval"] = {{"episodes", c.eval.episodes},
                 {"every_k", c.eval.every_k},
                 {"seed", c.eval.seed},
                 {"sample_actions", c.eval.sample_actions},
                 {"num_threads", c.eval.num_threads}};
  return doc;
}

}  // namespace

void EvalConfig::validate() const {
  if (episodes < 1) throw InvalidConfig("eval: episodes must be at least 1");
  if (every_k < 1) throw InvalidConfig("eval: every_k must be at least 1");
  if (num_threads < 1) throw InvalidConfig("eval: num_threads must be at least 1");
}

void RunConfig::validate() const {
  env.validate();
  net.validate();
  ppo.validate();
  eval.validate();
  if (net.map_stats_dim != map_stat::kDim || net.privileged_extra_dim != kPrivilegedExtraDim ||
      net.gridsize_classes != kNumGridSizes || net.keyframe_classes != 2) {
    throw InvalidConfig("net: input/output dimensions must match the environment");
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(source + ": " + e.what());
  }
  RunConfig c;
  Section top(doc, "", source);
  top.get("seed", c.seed);
  std::string output_dir = c.output_dir.string();
  top.get("output_dir", output_dir);
  c.output_dir = output_dir;
  with_section(top, "env", source, [&](Section& s) { env_fields(s, c.env); });
  with_section(top, "reward", source, [&](Section& s) { reward_fields(s, c.env.reward); });
  with_section(top, "net", source, [&](Section& s) { net_fields(s, c.net); });
  with_section(top, "ppo", source, [&](Section& s) { ppo_fields(s, c.ppo); });
  with_section(top, "eval", source, [&](Section& s) { eval_fields(s, c.eval); });
  top.finish();
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_json(const RunConfig& config) { return snapshot(config, true).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  // Thread counts do not change results, so they are not part of a run's identity.
  json doc = snapshot(config, false);
  doc["ppo"].erase("num_threads");
  doc["eval"].erase("num_threads");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rlvo
