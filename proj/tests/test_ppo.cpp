#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rlvo/checkpoint.hpp"
#include "rlvo/errors.hpp"
#include "rlvo/ppo.hpp"
#include "rlvo/trainer.hpp"
#include "support/bandit_env.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace rlvo;
using namespace rlvo::testing;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> all_indices(const RolloutBuffer& b) {
  std::vector<std::size_t> idx(b.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

RunConfig small_run(const fs::path& dir) {
  RunConfig c;
  c.env.episode_length = 60;
  c.ppo.num_envs = 2;
  c.ppo.rollout_len = 40;
  c.ppo.minibatch_size = 40;
  c.ppo.epochs = 2;
  c.ppo.iterations = 4;
  c.net.mlp_hidden = 32;
  c.net.token_dim = 16;
  c.output_dir = dir;
  c.seed = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics.csv with the wallclock column dropped.
std::vector<std::string> metric_rows(const fs::path& p) {
  std::vector<std::string> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) rows.push_back(line.substr(0, line.rfind(',')));
  return rows;
}

}  // namespace

TEST_CASE("GAE on a hand-worked example") {
  RolloutBuffer b;
  b.num_envs = 1;
  b.rollout_len = 3;
  b.transitions.resize(3);
  b.transitions[0].reward = 1.0;
  b.transitions[0].value = 0.5;
  b.transitions[1].reward = 0.0;
  b.transitions[1].value = 1.0;
  b.transitions[1].done = true;
  b.transitions[2].reward = 2.0;
  b.transitions[2].value = 0.0;
  for (auto& t : b.transitions) t.valid = true;
  PpoConfig c;
  c.gamma = 0.5;
  c.gae_lambda = 1.0;
  compute_gae(b, {4.0}, c);
  // delta = (1 + 0.5 - 0.5, 0 - 1, 2 + 2 - 0) = (1, -1, 4)
  CHECK(b.raw_advantages[2] == 4.0);
  CHECK(b.raw_advantages[1] == -1.0);
  CHECK(b.raw_advantages[0] == 0.5);
  CHECK(b.returns[0] == 1.0);
  CHECK(b.returns[1] == 0.0);
  CHECK(b.returns[2] == 4.0);
}

TEST_CASE("GAE base cases") {
  RolloutBuffer one;
  one.num_envs = 1;
  one.rollout_len = 1;
  one.transitions.resize(1);
  one.transitions[0].reward = 0.7;
  one.transitions[0].value = 0.2;
  one.transitions[0].done = true;
  compute_gae(one, {9.0}, PpoConfig{});
  CHECK(one.returns[0] == 0.7);
  CHECK(one.raw_advantages[0] == doctest::Approx(0.5));

  RolloutBuffer two;
  two.num_envs = 1;
  two.rollout_len = 2;
  two.transitions.resize(2);
  two.transitions[0].reward = 1.0;
  two.transitions[1].reward = 1.0;
  two.transitions[1].done = true;
  PpoConfig c;
  c.gae_lambda = 1.0;
  compute_gae(two, {0.0}, c);
  CHECK(two.returns[0] == doctest::Approx(1.6));
  CHECK(two.returns[1] == 1.0);
}

TEST_CASE("GAE matches the brute-force discounted sum") {
  Rng rng(41);
  PpoConfig c;
  for (int trial = 0; trial < 100; ++trial) {
    RolloutBuffer b = random_buffer(1 + rng.uniform_index(6), 1 + rng.uniform_index(60), rng);
    compute_gae(b, b.last_values, c);
    const GaeOracle o = brute_gae(b, b.last_values, c.gamma, c.gae_lambda);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(std::abs(b.raw_advantages[i] - o.advantages[i]) <= 1e-10);
      CHECK(std::abs(b.returns[i] - o.returns[i]) <= 1e-10);
    }
  }
}

TEST_CASE("advantages are standardized over valid entries only") {
  Rng rng(42);
  RolloutBuffer b = random_buffer(4, 50, rng);
  compute_gae(b, b.last_values, PpoConfig{});
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!b.transitions[i].valid) continue;
    sum += b.advantages[i];
    sq += b.advantages[i] * b.advantages[i];
    ++n;
  }
  CHECK(std::abs(sum / n) < 1e-12);
  CHECK(std::abs(sq / n - 1.0) < 1e-12);

  // Validity flags do not change returns.
  RolloutBuffer flipped = b;
  for (auto& t : flipped.transitions) t.valid = !t.valid;
  compute_gae(flipped, flipped.last_values, PpoConfig{});
  CHECK(flipped.returns == b.returns);
  CHECK(flipped.raw_advantages == b.raw_advantages);
}

TEST_CASE("GAE error cases") {
  RolloutBuffer empty;
  CHECK_THROWS_AS(compute_gae(empty, {}, PpoConfig{}), EmptyBuffer);
  Rng rng(43);
  RolloutBuffer b = random_buffer(2, 5, rng);
  CHECK_THROWS_AS(compute_gae(b, {1.0}, PpoConfig{}), LengthMismatch);
}

TEST_CASE("masked minibatches cover every valid index exactly once") {
  Rng rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    RolloutBuffer b = random_buffer(1 + rng.uniform_index(8), 1 + rng.uniform_index(100), rng, 0.1, rng.uniform());
    if (b.valid_count() == 0) {
      CHECK_THROWS_AS(masked_minibatches(b, 16, rng), NoValidStates);
      continue;
    }
    const int mb = 1 + static_cast<int>(rng.uniform_index(64));
    const auto batches = masked_minibatches(b, mb, rng);
    std::multiset<std::size_t> seen;
    for (const auto& batch : batches) {
      CHECK(batch.size() <= static_cast<std::size_t>(mb));
      CHECK_FALSE(batch.empty());
      for (std::size_t i : batch) {
        CHECK(b.transitions[i].valid);
        seen.insert(i);
      }
    }
    CHECK(seen.size() == b.valid_count());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == seen.size());
  }
  RolloutBuffer b = random_buffer(2, 10, rng, 0.1, 0.0);
  CHECK_THROWS_AS(masked_minibatches(b, 4, rng), NoValidStates);
  b.transitions[3].valid = true;
  CHECK_THROWS_AS(masked_minibatches(b, 0, rng), InvalidConfig);
}

TEST_CASE("analytic loss gradients match finite differences") {
  NetConfig net;
  net.token_dim = 8;
  net.heads = 2;
  net.mlp_hidden = 16;
  Rng rng(45);
  for (int seed = 0; seed < 3; ++seed) {
    Agent agent = Agent::create(net, static_cast<std::uint64_t>(seed));
    perturb(agent.policy, rng, 0.1);
    const RolloutBuffer b = random_loss_buffer(agent, rng, 8);
    const GradCheckResult r = check_ppo_gradients(agent, b, PpoConfig{}, rng, 0);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("zero advantages leave only the entropy term in the policy loss") {
  Agent agent = Agent::create(NetConfig{}, 1);
  Rng rng(46);
  RolloutBuffer b = random_loss_buffer(agent, rng, 10);
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  PpoConfig c;
  c.entropy_coef = 0.0;
  PolicyGradients pg = zeros_like(agent.policy);
  CriticGradients cg = zeros_like(agent.critic);
  const LossStats s = ppo_loss_and_gradients(agent, b, all_indices(b), c, pg, cg);
  CHECK(s.policy_loss == 0.0);
  pg.for_each([](const std::string&, const Matrix& m) { CHECK(m.isZero()); });
}

TEST_CASE("an unbounded clip range reduces to the importance-weighted policy gradient") {
  Agent agent = Agent::create(NetConfig{}, 2);
  Rng rng(47);
  perturb(agent.policy, rng, 0.05);
  const RolloutBuffer b = random_loss_buffer(agent, rng, 12);
  PpoConfig c;
  c.clip_epsilon = 1e9;
  c.entropy_coef = 0.0;
  PolicyGradients pg = zeros_like(agent.policy);
  CriticGradients cg = zeros_like(agent.critic);
  ppo_loss_and_gradients(agent, b, all_indices(b), c, pg, cg);

  // Independent graph: -mean(exp(log pi - log pi_old) * A).
  PolicyGradients oracle = zeros_like(agent.policy);
  for (std::size_t i = 0; i < b.size(); ++i) {
    ad::Tape tape;
    const Transition& t = b.transitions[i];
    const PolicyVars v = policy_graph(tape, agent.policy, agent.config, agent.policy_input(t.observation()), &oracle);
    const ad::Var lp = ad::pick(ad::log_softmax_rows(v.keyframe_logits), 0, t.action.keyframe ? 1 : 0) +
                       ad::pick(ad::log_softmax_rows(v.gridsize_logits), 0, t.action.grid_size_index);
    const ad::Var ratio = ad::exp(ad::add_scalar(lp, -t.log_prob));
    tape.backward(ad::scale(ratio, -b.advantages[i] / static_cast<double>(b.size())));
  }
  std::vector<Matrix> expected;
  oracle.for_each([&](const std::string&, const Matrix& m) { expected.push_back(m); });
  std::size_t k = 0;
  pg.for_each([&](const std::string&, const Matrix& m) {
    const double scale = std::max(1e-12, expected[k].cwiseAbs().maxCoeff());
    CHECK((m - expected[k]).cwiseAbs().maxCoeff() / scale < 1e-9);
    ++k;
  });
}

TEST_CASE("repeated updates on a bandit buffer favour the rewarded action") {
  Agent agent = Agent::create(NetConfig{}, 3);
  Rng rng(49);
  RolloutBuffer b = random_loss_buffer(agent, rng, 32);
  const Action rewarded{true, 2};
  for (std::size_t i = 0; i < b.size(); ++i) {
    Transition& t = b.transitions[i];
    t.action = i % 2 == 0 ? rewarded : Action{false, static_cast<int>(i % 5)};
    const PolicyOutput out = policy_forward(agent.policy, agent.config, agent.policy_input(t.observation()));
    t.log_prob = log_prob_and_entropy(out, t.action).log_prob;
    b.advantages[i] = i % 2 == 0 ? 1.0 : -1.0;
  }
  PpoConfig c;
  c.epochs = 1;
  c.minibatch_size = 32;
  c.learning_rate = 0.05;
  OptimizerState opt = OptimizerState::create(agent);
  for (int update = 0; update < 50; ++update) {
    ppo_update(agent, b, c, opt, rng);
    // Refresh the behaviour log-probabilities so each update is a fresh on-policy step.
    for (auto& t : b.transitions) {
      const PolicyOutput out = policy_forward(agent.policy, agent.config, agent.policy_input(t.observation()));
      t.log_prob = log_prob_and_entropy(out, t.action).log_prob;
    }
  }
  double p = 0.0;
  for (const auto& t : b.transitions) {
    const PolicyOutput out = policy_forward(agent.policy, agent.config, agent.policy_input(t.observation()));
    p += std::exp(log_prob_and_entropy(out, rewarded).log_prob);
  }
  CHECK(p / static_cast<double>(b.size()) > 0.9);
}

TEST_CASE("rollouts are deterministic and store the sampling log-probability") {
  RunConfig cfg = small_run("unused");
  auto collect = [&](int threads) {
    PpoConfig ppo = cfg.ppo;
    ppo.num_threads = threads;
    VecEnv env(std::vector<EnvConfig>(2, cfg.env), threads);
    Agent agent = Agent::create(cfg.net, 5);
    RolloutState state = RolloutState::start(env, 77);
    RolloutBuffer first = collect_rollout(agent, env, state, ppo);
    RolloutBuffer second = collect_rollout(agent, env, state, ppo);
    return std::make_pair(std::move(first), std::move(second));
  };
  const auto a = collect(1);
  const auto b = collect(2);
  REQUIRE(a.second.size() == b.second.size());
  for (std::size_t i = 0; i < a.second.size(); ++i) {
    const Transition& x = a.second.transitions[i];
    const Transition& y = b.second.transitions[i];
    CHECK(x.privileged_observation == y.privileged_observation);
    CHECK(x.action == y.action);
    CHECK(x.log_prob == y.log_prob);
    CHECK(x.value == y.value);
    CHECK(x.reward == y.reward);
  }
  CHECK(a.second.last_values == b.second.last_values);

  const Agent agent = Agent::create(cfg.net, 5);
  for (const Transition& t : a.first.transitions) {
    const PolicyOutput out = policy_forward(agent.policy, agent.config, agent.policy_input(t.observation()));
    CHECK(std::abs(log_prob_and_entropy(out, t.action).log_prob - t.log_prob) < 1e-12);
    CHECK(std::abs(critic_forward(agent.critic, agent.config,
                                  agent.critic_input(t.privileged_observation)) - t.value) < 1e-12);
  }
}

TEST_CASE("one update on real rollouts stays close to the old policy") {
  RunConfig cfg = small_run("unused");
  cfg.ppo.rollout_len = 100;
  cfg.ppo.minibatch_size = 50;
  VecEnv env(std::vector<EnvConfig>(2, cfg.env), 1);
  Agent agent = Agent::create(cfg.net, 6);
  RolloutState state = RolloutState::start(env, 8);
  RolloutBuffer b = collect_rollout(agent, env, state, cfg.ppo);
  compute_gae(b, b.last_values, cfg.ppo);
  OptimizerState opt = OptimizerState::create(agent);
  Rng rng(9);
  const UpdateStats s = ppo_update(agent, b, cfg.ppo, opt, rng);
  CHECK(s.minibatches > 0);
  CHECK(std::isfinite(s.loss.policy_loss));
  CHECK(s.loss.approx_kl < 0.05);
  CHECK(s.loss.clip_fraction >= 0.0);
  CHECK(s.loss.clip_fraction <= 1.0);
}

TEST_CASE("non-finite losses restore the agent and optimizer") {
  Agent agent = Agent::create(NetConfig{}, 7);
  Rng rng(48);
  RolloutBuffer b = random_loss_buffer(agent, rng, 20);
  b.returns[5] = std::nan("");
  const Agent before = agent;
  OptimizerState opt = OptimizerState::create(agent);
  PpoConfig c;
  c.minibatch_size = 4;
  CHECK_THROWS_AS(ppo_update(agent, b, c, opt, rng), NonFiniteLoss);
  std::vector<Matrix> expected;
  before.policy.for_each([&](const std::string&, const Matrix& m) { expected.push_back(m); });
  std::size_t k = 0;
  agent.policy.for_each([&](const std::string&, const Matrix& m) { CHECK(m == expected[k++]); });
  CHECK(opt.steps == 0);

  for (auto& t : b.transitions) t.valid = false;
  CHECK_THROWS_AS(ppo_update(agent, b, c, opt, rng), NoValidStates);
}

TEST_CASE("gradient clipping bounds the update") {
  Agent agent = Agent::create(NetConfig{}, 8);
  const Agent before = agent;
  PolicyGradients pg = zeros_like(agent.policy);
  CriticGradients cg = zeros_like(agent.critic);
  pg.trunk.hidden1_bias(0, 0) = 30.0;
  cg.value_bias(0, 0) = 40.0;
  PpoConfig c;
  c.learning_rate = 1.0;
  OptimizerState opt = OptimizerState::create(agent);
  const double norm = apply_gradients(agent, pg, cg, opt, c);
  CHECK(norm == doctest::Approx(50.0));
  CHECK(before.policy.trunk.hidden1_bias(0, 0) - agent.policy.trunk.hidden1_bias(0, 0) ==
        doctest::Approx(0.5 * 0.6).epsilon(1e-6));
  CHECK(before.critic.value_bias(0, 0) - agent.critic.value_bias(0, 0) == doctest::Approx(0.5 * 0.8).epsilon(1e-6));
}

TEST_CASE("PPO learns a one-step bandit") {
  RunConfig cfg;
  cfg.ppo.num_envs = 4;
  cfg.ppo.rollout_len = 64;
  cfg.ppo.minibatch_size = 64;
  cfg.ppo.epochs = 4;
  cfg.ppo.optimizer = OptimizerKind::Adam;
  cfg.ppo.learning_rate = 1e-3;
  cfg.net.mlp_hidden = 32;
  cfg.net.token_dim = 16;
  cfg.output_dir = fs::temp_directory_path() / "rlvo_test_bandit";
  fs::remove_all(cfg.output_dir);
  TrainOptions opts;
  opts.stop_after = 60;
  opts.env_factory = [](std::size_t) { return std::make_unique<BanditEnv>(); };
  const TrainResult r = train(cfg, opts);
  CHECK(r.metrics.back().mean_return > 0.9);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("training writes metrics and checkpoints, and resuming reproduces a straight run") {
  const fs::path root = fs::temp_directory_path() / "rlvo_test_resume";
  fs::remove_all(root);
  const RunConfig straight = small_run(root / "straight");
  const TrainResult full = train(straight);
  CHECK(full.iterations_completed == 4);
  CHECK(full.metrics.size() == 4);
  const auto rows = metric_rows(root / "straight" / run_files::kMetrics);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].rfind("# seed=3 config_hash=", 0) == 0);
  for (const char* f : {run_files::kConfig, run_files::kLatest, run_files::kBest, run_files::kState}) {
    CHECK(fs::exists(root / "straight" / f));
  }

  RunConfig split = small_run(root / "split");
  TrainOptions first;
  first.stop_after = 2;
  train(split, first);
  TrainOptions second;
  second.resume = true;
  const TrainResult rest = train(split, second);
  CHECK(rest.metrics.size() == 2);
  CHECK(metric_rows(root / "split" / run_files::kMetrics) == rows);
  CHECK(slurp(root / "split" / run_files::kLatest) == slurp(root / "straight" / run_files::kLatest));

  RunConfig other = split;
  other.seed = 4;
  TrainOptions resume;
  resume.resume = true;
  CHECK_THROWS_AS(train(other, resume), CheckpointError);
  fs::remove_all(root);
}

TEST_CASE("smoke run logs one row per iteration") {
  const fs::path dir = fs::temp_directory_path() / "rlvo_test_smoke";
  fs::remove_all(dir);
  RunConfig cfg = small_run(dir);
  cfg.ppo.rollout_len = 20;
  cfg.ppo.epochs = 1;
  cfg.ppo.iterations = 10;
  const TrainResult r = train(cfg);
  CHECK(r.metrics.size() == 10);
  const auto rows = metric_rows(dir / run_files::kMetrics);
  CHECK(rows.size() == 12);
  CHECK(rows[1] + ",wallclock_s" == kMetricsHeader);
  const LoadedCheckpoint ck = load_checkpoint(dir / run_files::kLatest);
  CHECK(ck.agent.iteration == 10);
  CHECK(ck.metadata.seed == cfg.seed);
  CHECK(ck.metadata.config_hash == config_hash(cfg));
  fs::remove_all(dir);
}
