#include "rlvo/network.hpp"

#include <Eigen/QR>

#include <cmath>
#include <string>

#include "rlvo/errors.hpp"

namespace rlvo {

void NetConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidConfig(std::string("net: ") + what);
  };
  require(token_count > 0 && token_dim > 0 && heads > 0 && mlp_hidden > 0,
          "dimensions must be positive");
  require(token_dim % heads == 0, "token_dim must be divisible by heads");
  require(map_stats_dim > 0 && keyframe_classes > 0 && gridsize_classes > 0 &&
              privileged_extra_dim >= 0,
          "input/output dimensions must be positive");
  require(depth_scale > 0.0, "depth_scale must be positive");
}

namespace {

std::size_t encoder_count(const NetConfig& c) {
  const std::size_t m = static_cast<std::size_t>(c.token_count);
  const std::size_t d = static_cast<std::size_t>(c.token_dim);
  return m * d + 2 * (d * d + d) + 3 * d + (3 * d + d);
}

std::size_t trunk_count(std::size_t in, std::size_t h) { return in * h + h + h * h + h; }

Matrix orthogonal(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
  const bool tall = rows >= cols;
  const Eigen::Index r = tall ? rows : cols;
  const Eigen::Index c = tall ? cols : rows;
  Matrix a(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(r, c);
  const Matrix upper = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j) {
    if (upper(j, j) < 0.0) q.col(j) *= -1.0;
  }
  Matrix out = tall ? q : Matrix(q.transpose());
  return gain * out;
}

EncoderParameters init_encoder(const NetConfig& c, Rng& rng) {
  const Eigen::Index d = c.token_dim;
  EncoderParameters e;
  e.tokens.resize(c.token_count, d);
  for (Eigen::Index i = 0; i < e.tokens.size(); ++i) e.tokens(i) = 0.5 * rng.normal();
  e.query_weight = orthogonal(d, d, 1.0, rng);
  e.query_bias = Matrix::Zero(1, d);
  e.key_weight = orthogonal(3, d, 1.0, rng);
  e.value_weight = orthogonal(3, d, 1.0, rng);
  e.value_bias = Matrix::Zero(1, d);
  e.output_weight = orthogonal(d, d, 1.0, rng);
  e.output_bias = Matrix::Zero(1, d);
  return e;
}

TrunkParameters init_trunk(Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  const double gain = std::sqrt(2.0);
  TrunkParameters t;
  t.hidden1_weight = orthogonal(in, hidden, gain, rng);
  t.hidden1_bias = Matrix::Zero(1, hidden);
  t.hidden2_weight = orthogonal(hidden, hidden, gain, rng);
  t.hidden2_bias = Matrix::Zero(1, hidden);
  return t;
}

ad::Var bind(ad::Tape& tape, const Matrix& value, Matrix* grad) { return tape.parameter(value, grad); }

ad::Var linear(ad::Tape& tape, const ad::Var& x, const Matrix& w, const Matrix& b, Matrix* gw,
               Matrix* gb) {
  return ad::add_row_broadcast(ad::matmul(x, bind(tape, w, gw)), bind(tape, b, gb));
}

ad::Var trunk_graph(ad::Tape& tape, const ad::Var& x, const TrunkParameters& p,
                    TrunkParameters* g) {
  const ad::Var h1 = ad::relu(linear(tape, x, p.hidden1_weight, p.hidden1_bias,
                                     g ? &g->hidden1_weight : nullptr,
                                     g ? &g->hidden1_bias : nullptr));
  return ad::relu(linear(tape, h1, p.hidden2_weight, p.hidden2_bias,
                         g ? &g->hidden2_weight : nullptr, g ? &g->hidden2_bias : nullptr));
}

Eigen::VectorXd row_to_vector(const Matrix& row) { return row.row(0).transpose(); }

void check_input(const NetConfig& config, const NetInput& input, bool critic) {
  if (input.map_stats.size() != config.map_stats_dim) {
    throw MalformedKeypoints("map_stats has length " + std::to_string(input.map_stats.size()) +
                             ", expected " + std::to_string(config.map_stats_dim));
  }
  if (critic && input.extra.size() != config.privileged_extra_dim) {
    throw MalformedKeypoints("privileged features have length " +
                             std::to_string(input.extra.size()) + ", expected " +
                             std::to_string(config.privileged_extra_dim));
  }
  if (!input.map_stats.allFinite() || (critic && !input.extra.allFinite())) {
    throw MalformedKeypoints("non-finite map statistics");
  }
}

}  // namespace

std::size_t expected_policy_parameter_count(const NetConfig& c) {
  const auto h = static_cast<std::size_t>(c.mlp_hidden);
  const auto in = static_cast<std::size_t>(c.encoding_dim() + c.map_stats_dim);
  return encoder_count(c) + trunk_count(in, h) +
         (h + 1) * static_cast<std::size_t>(c.keyframe_classes) +
         (h + 1) * static_cast<std::size_t>(c.gridsize_classes);
}

std::size_t expected_critic_parameter_count(const NetConfig& c) {
  const auto h = static_cast<std::size_t>(c.mlp_hidden);
  const auto in =
      static_cast<std::size_t>(c.encoding_dim() + c.map_stats_dim + c.privileged_extra_dim);
  return encoder_count(c) + trunk_count(in, h) + h + 1;
}

PolicyParameters init_policy_parameters(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, {1}));
  PolicyParameters p;
  p.encoder = init_encoder(config, rng);
  p.trunk = init_trunk(config.encoding_dim() + config.map_stats_dim, config.mlp_hidden, rng);
  p.keyframe_weight = orthogonal(config.mlp_hidden, config.keyframe_classes, 0.01, rng);
  p.keyframe_bias = Matrix::Zero(1, config.keyframe_classes);
  p.grid_weight = orthogonal(config.mlp_hidden, config.gridsize_classes, 0.01, rng);
  p.grid_bias = Matrix::Zero(1, config.gridsize_classes);
  return p;
}

CriticParameters init_critic_parameters(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, {2}));
  CriticParameters p;
  p.encoder = init_encoder(config, rng);
  p.trunk = init_trunk(config.encoding_dim() + config.map_stats_dim + config.privileged_extra_dim,
                       config.mlp_hidden, rng);
  p.value_weight = orthogonal(config.mlp_hidden, 1, 1.0, rng);
  p.value_bias = Matrix::Zero(1, 1);
  return p;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Eigen::VectorXd PolicyOutput::keyframe_probabilities() const { return softmax(keyframe_logits); }
Eigen::VectorXd PolicyOutput::gridsize_probabilities() const { return softmax(gridsize_logits); }

ad::Var encode_graph(ad::Tape& tape, const EncoderParameters& p, const NetConfig& config,
                     const Matrix& keypoints, EncoderParameters* g) {
  if (keypoints.cols() != 3) {
    throw MalformedKeypoints("keypoints must be N x 3, got " + std::to_string(keypoints.cols()) +
                             " columns");
  }
  if (!keypoints.allFinite()) throw MalformedKeypoints("non-finite keypoint coordinates");

  const ad::Var x = tape.constant(keypoints);
  const ad::Var tokens = bind(tape, p.tokens, g ? &g->tokens : nullptr);
  const ad::Var queries = linear(tape, tokens, p.query_weight, p.query_bias,
                                 g ? &g->query_weight : nullptr, g ? &g->query_bias : nullptr);
  const ad::Var context = ad::projected_attention(
      queries, x, bind(tape, p.key_weight, g ? &g->key_weight : nullptr),
      bind(tape, p.value_weight, g ? &g->value_weight : nullptr),
      bind(tape, p.value_bias, g ? &g->value_bias : nullptr), config.heads);
  const ad::Var out = linear(tape, context, p.output_weight, p.output_bias,
                             g ? &g->output_weight : nullptr, g ? &g->output_bias : nullptr);
  return ad::flatten(out);
}

PolicyVars policy_graph(ad::Tape& tape, const PolicyParameters& p, const NetConfig& config,
                        const NetInput& input, PolicyGradients* g) {
  check_input(config, input, false);
  const ad::Var enc = encode_graph(tape, p.encoder, config, input.keypoints, g ? &g->encoder : nullptr);
  const ad::Var features = ad::concat_cols(enc, tape.constant(input.map_stats.transpose()));
  const ad::Var h = trunk_graph(tape, features, p.trunk, g ? &g->trunk : nullptr);
  PolicyVars out;
  out.keyframe_logits = linear(tape, h, p.keyframe_weight, p.keyframe_bias,
                               g ? &g->keyframe_weight : nullptr, g ? &g->keyframe_bias : nullptr);
  out.gridsize_logits = linear(tape, h, p.grid_weight, p.grid_bias, g ? &g->grid_weight : nullptr,
                               g ? &g->grid_bias : nullptr);
  return out;
}

ad::Var critic_graph(ad::Tape& tape, const CriticParameters& p, const NetConfig& config,
                     const NetInput& input, CriticGradients* g) {
  check_input(config, input, true);
  const ad::Var enc = encode_graph(tape, p.encoder, config, input.keypoints, g ? &g->encoder : nullptr);
  Matrix side(1, input.map_stats.size() + input.extra.size());
  side << input.map_stats.transpose(), input.extra.transpose();
  const ad::Var features = ad::concat_cols(enc, tape.constant(std::move(side)));
  const ad::Var h = trunk_graph(tape, features, p.trunk, g ? &g->trunk : nullptr);
  return linear(tape, h, p.value_weight, p.value_bias, g ? &g->value_weight : nullptr,
                g ? &g->value_bias : nullptr);
}

Eigen::VectorXd variable_encode(const EncoderParameters& params, const NetConfig& config,
                                const Matrix& keypoints) {
  ad::Tape tape;
  return row_to_vector(encode_graph(tape, params, config, keypoints, nullptr).value());
}

PolicyOutput policy_forward(const PolicyParameters& params, const NetConfig& config,
                            const NetInput& input) {
  ad::Tape tape;
  const PolicyVars v = policy_graph(tape, params, config, input, nullptr);
  return {row_to_vector(v.keyframe_logits.value()), row_to_vector(v.gridsize_logits.value())};
}

double critic_forward(const CriticParameters& params, const NetConfig& config,
                      const NetInput& input) {
  ad::Tape tape;
  return critic_graph(tape, params, config, input, nullptr).scalar();
}

namespace {

int draw(const Eigen::VectorXd& probabilities, double u) {
  double cumulative = 0.0;
  const auto n = static_cast<int>(probabilities.size());
  for (int i = 0; i < n - 1; ++i) {
    cumulative += probabilities(i);
    if (u < cumulative) return i;
  }
  return n - 1;
}

double entropy_of(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd lp = log_softmax(logits);
  return -(lp.array().exp() * lp.array()).sum();
}

}  // namespace

SampledAction sample(const PolicyOutput& output, Rng& rng) {
  const int kf = draw(output.keyframe_probabilities(), rng.uniform());
  const int grid = draw(output.gridsize_probabilities(), rng.uniform());
  SampledAction s;
  s.action.keyframe = kf == 1;
  s.action.grid_size_index = grid;
  s.log_prob = log_softmax(output.keyframe_logits)(kf) + log_softmax(output.gridsize_logits)(grid);
  return s;
}

Action greedy_action(const PolicyOutput& output) {
  Eigen::Index kf = 0;
  Eigen::Index grid = 0;
  output.keyframe_logits.maxCoeff(&kf);
  output.gridsize_logits.maxCoeff(&grid);
  return Action{kf == 1, static_cast<int>(grid)};
}

LogProbEntropy log_prob_and_entropy(const PolicyOutput& output, const Action& action) {
  const int kf = action.keyframe ? 1 : 0;
  if (kf >= output.keyframe_logits.size() || action.grid_size_index < 0 ||
      action.grid_size_index >= output.gridsize_logits.size()) {
    throw IndexOutOfRange("action outside the policy output support");
  }
  LogProbEntropy out;
  out.log_prob = log_softmax(output.keyframe_logits)(kf) +
                 log_softmax(output.gridsize_logits)(action.grid_size_index);
  out.entropy = entropy_of(output.keyframe_logits) + entropy_of(output.gridsize_logits);
  return out;
}

RunningNormalizer::RunningNormalizer(int dim)
    : mean_(Eigen::VectorXd::Zero(dim)), var_(Eigen::VectorXd::Ones(dim)) {}

void RunningNormalizer::update(const Matrix& batch) {
  if (batch.rows() == 0) return;
  if (batch.cols() != mean_.size()) throw InvalidConfig("normalizer batch width mismatch");
  const double n = static_cast<double>(batch.rows());
  const Eigen::VectorXd batch_mean = batch.colwise().mean().transpose();
  const Eigen::VectorXd batch_var =
      (batch.rowwise() - batch_mean.transpose()).array().square().colwise().sum().transpose() / n;
  const Eigen::VectorXd delta = batch_mean - mean_;
  const double total = count_ + n;
  mean_ += delta * (n / total);
  const Eigen::VectorXd m2 = var_ * count_ + batch_var * n + delta.cwiseAbs2() * (count_ * n / total);
  var_ = m2 / total;
  count_ = total;
}

Eigen::VectorXd RunningNormalizer::normalize(const Eigen::VectorXd& x) const {
  if (x.size() != mean_.size()) throw MalformedKeypoints("normalizer input width mismatch");
  return ((x - mean_).array() / (var_.array() + kEpsilon).sqrt()).cwiseMax(-kClip).cwiseMin(kClip);
}

void RunningNormalizer::set_state(Eigen::VectorXd mean, Eigen::VectorXd var, double count) {
  if (mean.size() != var.size()) throw CheckpointError("normalizer mean/variance size mismatch");
  mean_ = std::move(mean);
  var_ = std::move(var);
  count_ = count;
}

Agent Agent::create(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Agent a;
  a.config = config;
  a.policy = init_policy_parameters(config, seed);
  a.critic = init_critic_parameters(config, seed);
  a.map_stats_normalizer = RunningNormalizer(config.map_stats_dim);
  a.privileged_normalizer = RunningNormalizer(config.privileged_extra_dim);
  return a;
}

NetInput Agent::policy_input(const Observation& obs) const {
  NetInput in;
  if (obs.keypoints.cols() != 3) throw MalformedKeypoints("keypoints must have 3 columns");
  in.keypoints = obs.keypoints;
  in.keypoints.col(2) /= config.depth_scale;
  if (!in.keypoints.allFinite()) throw MalformedKeypoints("non-finite keypoint coordinates");
  in.map_stats = map_stats_normalizer.normalize(obs.map_stats);
  return in;
}

NetInput Agent::critic_input(const PrivilegedObservation& obs) const {
  NetInput in = policy_input(obs.observation);
  in.extra = privileged_normalizer.normalize(obs.extra);
  return in;
}

}  // namespace rlvo
