#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>

#include "rlvo/autodiff.hpp"
#include "rlvo/random.hpp"
#include "rlvo/sim_env.hpp"

namespace rlvo {

using Matrix = Eigen::MatrixXd;

struct NetConfig {
  int token_count = 4;  // M learned query tokens
  int token_dim = 32;  // D
  int heads = 4;
  int mlp_hidden = 128;
  int map_stats_dim = map_stat::kDim;
  int keyframe_classes = 2;
  int gridsize_classes = kNumGridSizes;
  int privileged_extra_dim = kPrivilegedExtraDim;
  // Keypoint depth is divided by this before entering the encoder.
  double depth_scale = 10.0;

  void validate() const;  // throws InvalidConfig
  int encoding_dim() const { return token_count * token_dim; }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Cross-attention from learned tokens onto the keypoint set.
struct EncoderParameters {
  Matrix tokens;  // M x D
  Matrix query_weight, query_bias;  // D x D, 1 x D
  // No key bias: it would shift all scores of a query equally.
  Matrix key_weight;  // 3 x D
  Matrix value_weight, value_bias;  // 3 x D, 1 x D
  Matrix output_weight, output_bias;  // D x D, 1 x D

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "tokens", self.tokens);
    f(prefix + "query_weight", self.query_weight);
    f(prefix + "query_bias", self.query_bias);
    f(prefix + "key_weight", self.key_weight);
    f(prefix + "value_weight", self.value_weight);
    f(prefix + "value_bias", self.value_bias);
    f(prefix + "output_weight", self.output_weight);
    f(prefix + "output_bias", self.output_bias);
  }
};

// Two hidden layers with ReLU after each.
struct TrunkParameters {
  Matrix hidden1_weight, hidden1_bias;
  Matrix hidden2_weight, hidden2_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "hidden1_weight", self.hidden1_weight);
    f(prefix + "hidden1_bias", self.hidden1_bias);
    f(prefix + "hidden2_weight", self.hidden2_weight);
    f(prefix + "hidden2_bias", self.hidden2_bias);
  }
};

struct PolicyParameters {
  EncoderParameters encoder;
  TrunkParameters trunk;
  Matrix keyframe_weight, keyframe_bias;
  Matrix grid_weight, grid_bias;

  // f(name, matrix) over every tensor in declaration order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    EncoderParameters::visit(self.encoder, "policy.encoder.", f);
    TrunkParameters::visit(self.trunk, "policy.trunk.", f);
    f(std::string("policy.keyframe_weight"), self.keyframe_weight);
    f(std::string("policy.keyframe_bias"), self.keyframe_bias);
    f(std::string("policy.grid_weight"), self.grid_weight);
    f(std::string("policy.grid_bias"), self.grid_bias);
  }
};

struct CriticParameters {
  EncoderParameters encoder;
  TrunkParameters trunk;
  Matrix value_weight, value_bias;

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    EncoderParameters::visit(self.encoder, "critic.encoder.", f);
    TrunkParameters::visit(self.trunk, "critic.trunk.", f);
    f(std::string("critic.value_weight"), self.value_weight);
    f(std::string("critic.value_bias"), self.value_bias);
  }
};

// Gradients share the parameter layout.
using PolicyGradients = PolicyParameters;
using CriticGradients = CriticParameters;

template <typename Params>
Params zeros_like(const Params& p) {
  Params out = p;
  out.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return out;
}

template <typename Params>
std::size_t count_parameters(const Params& p) {
  std::size_t n = 0;
  p.for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Closed-form counts from the config dimensions.
std::size_t expected_policy_parameter_count(const NetConfig& config);
std::size_t expected_critic_parameter_count(const NetConfig& config);

// Orthogonal init (gain sqrt(2) for hidden layers, 1 for attention
// projections and the value head, 0.01 for the policy heads), zero biases,
// tokens ~ N(0, 0.5^2). Deterministic in seed.
PolicyParameters init_policy_parameters(const NetConfig& config, std::uint64_t seed);
CriticParameters init_critic_parameters(const NetConfig& config, std::uint64_t seed);

// Network-ready inputs: keypoints with depth scaled, standardized map stats.
struct NetInput {
  Matrix keypoints = Matrix(0, 3);  // N x 3
  Eigen::VectorXd map_stats;
  Eigen::VectorXd extra;  // privileged features, critic only
};

struct PolicyOutput {
  Eigen::VectorXd keyframe_logits;  // 2
  Eigen::VectorXd gridsize_logits;  // 5

  Eigen::VectorXd keyframe_probabilities() const;
  Eigen::VectorXd gridsize_probabilities() const;
};

// Numerically stable softmax / log-softmax of a vector.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

// Variable encoder output, flattened row-major (length M * D).
// Throws MalformedKeypoints for non-finite or wrongly shaped keypoints.
Eigen::VectorXd variable_encode(const EncoderParameters& params, const NetConfig& config,
                                const Matrix& keypoints);
PolicyOutput policy_forward(const PolicyParameters& params, const NetConfig& config,
                            const NetInput& input);
double critic_forward(const CriticParameters& params, const NetConfig& config,
                      const NetInput& input);

// Graph-building forms used for training. Passing null gradient sinks records
// the parameters as constants.
struct PolicyVars {
  ad::Var keyframe_logits;  // 1 x 2
  ad::Var gridsize_logits;  // 1 x 5
};
ad::Var encode_graph(ad::Tape& tape, const EncoderParameters& params, const NetConfig& config,
                     const Matrix& keypoints, EncoderParameters* grads);
PolicyVars policy_graph(ad::Tape& tape, const PolicyParameters& params, const NetConfig& config,
                        const NetInput& input, PolicyGradients* grads);
ad::Var critic_graph(ad::Tape& tape, const CriticParameters& params, const NetConfig& config,
                     const NetInput& input, CriticGradients* grads);

struct SampledAction {
  Action action;
  double log_prob = 0.0;
};

// Independent categorical draws from both heads.
SampledAction sample(const PolicyOutput& output, Rng& rng);
// Argmax of each head.
Action greedy_action(const PolicyOutput& output);

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};
// Joint log-probability and summed head entropies. Throws IndexOutOfRange.
LogProbEntropy log_prob_and_entropy(const PolicyOutput& output, const Action& action);

// Running mean / variance used to standardize feature vectors.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim);

  void update(const Matrix& batch);  // rows are samples
  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& variance() const { return var_; }
  double count() const { return count_; }
  void set_state(Eigen::VectorXd mean, Eigen::VectorXd var, double count);

  static constexpr double kClip = 10.0;
  static constexpr double kEpsilon = 1e-8;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd var_;
  double count_ = 1e-4;
};

// Everything a checkpoint holds.
struct Agent {
  NetConfig config;
  PolicyParameters policy;
  CriticParameters critic;
  RunningNormalizer map_stats_normalizer;
  RunningNormalizer privileged_normalizer;
  std::int64_t iteration = 0;

  static Agent create(const NetConfig& config, std::uint64_t seed);

  NetInput policy_input(const Observation& obs) const;
  NetInput critic_input(const PrivilegedObservation& obs) const;
};

}  // namespace rlvo
