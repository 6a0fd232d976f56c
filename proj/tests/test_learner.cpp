#include <cmath>

#include "doctest.h"
#include "support.hpp"

using namespace crossnav;
using testing::hand_world;
using testing::randomize;
using testing::small_run_config;
using testing::tiny_critic_config;
using testing::tiny_navigator_config;
using testing::tiny_world_config;

namespace {

struct Setup {
  WorldGraph world = generate_world(tiny_world_config(12, 3.0), 51);
  EpisodeSpec episode;
  Navigator nav = make_navigator(tiny_navigator_config(), 2);
  Critic critic = make_critic(tiny_critic_config(), 3);
  Setup() {
    EpisodeConfig ec;
    ec.min_hops = 2;
    ec.max_hops = 4;
    episode = generate_episode(world, 4, ec, 9);
  }
};

Vec returns_oracle(const Vec& r, double gamma) {
  Vec out(r.size(), 0.0);
  for (std::size_t t = 0; t < r.size(); ++t)
    for (std::size_t u = t; u < r.size(); ++u) out[t] += std::pow(gamma, static_cast<double>(u - t)) * r[u];
  return out;
}

bool all_zero(const ParamSet& p) {
  for (const auto& e : p)
    for (double v : e.tensor.values())
      if (v != 0.0) return false;
  return true;
}

Dataset small_dataset(std::uint64_t seed = 3) { return generate_split(small_run_config().split, seed); }

TrainerState small_trainer(const Dataset& data, std::uint64_t seed = 1) {
  const auto rc = small_run_config();
  return init_trainer(navigator_config_for(data, rc.navigator), critic_config_for(data, rc.critic), seed);
}

}  // namespace

TEST_CASE("immediate reward examples") {
  // a line of viewpoints 2 m apart; the target is viewpoint 0
  const auto w = hand_world({{0, 0}, {2, 0}, {4, 0}, {6, 0}, {8, 0}}, {{0, 1}, {1, 2}, {2, 3}, {3, 4}},
                            tiny_world_config());
  const AgentState at5{4, 0, 0}, at3{3, 0, 0}, at2{1, 0, 0};
  CHECK(immediate_reward(w, 0, at5, at3, false, 3.0) == doctest::Approx(2.0));
  CHECK(immediate_reward(w, 0, at3, at2, true, 3.0) == 1.0);   // rests 2 m away
  CHECK(immediate_reward(w, 0, at5, at3, true, 3.0) == 0.0);   // rests 6 m away
  CHECK(immediate_reward(w, 0, at5, at3, true, 3.0, false) == doctest::Approx(2.0));

  const auto u = hand_world({{0, 0}, {2.5, 0}, {3.5, 0}, {5, 0}}, {{0, 1}, {0, 2}, {0, 3}}, tiny_world_config());
  CHECK(immediate_reward(u, 0, {3, 0, 0}, {1, 0, 0}, false, 3.0) == doctest::Approx(2.5));
  CHECK(immediate_reward(u, 0, {3, 0, 0}, {1, 0, 0}, true, 3.0) == 1.0);
  CHECK(immediate_reward(u, 0, {3, 0, 0}, {2, 0, 0}, true, 3.0) == 0.0);
}

TEST_CASE("discounted returns") {
  CHECK(discounted_returns(Vec{1, 1, 1}, 0.5) == Vec{1.75, 1.5, 1.0});
  const Vec r{0.3, -1.2, 2.0, 0.7};
  CHECK(discounted_returns(r, 0.0) == r);
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Vec x(1 + static_cast<std::size_t>(trial));
    for (auto& v : x) v = u(rng);
    const auto got = discounted_returns(x, 0.95);
    const auto want = returns_oracle(x, 0.95);
    for (std::size_t t = 0; t < x.size(); ++t) {
      CHECK(got[t] == doctest::Approx(want[t]).epsilon(1e-12));
      const double next = t + 1 < x.size() ? got[t + 1] : 0.0;
      CHECK(got[t] == x[t] + 0.95 * next);
    }
  }
}

TEST_CASE("advantages") {
  CHECK(advantages(Vec{1, 0}, 0.5, 2.0) == Vec{2.0, 1.0});
  CHECK(advantages(Vec{1, -3}, 0.7, 0.0) == Vec{1, -3});
  CHECK(RewardConfig{}.delta == 2.0);
  CHECK(RewardConfig{}.gamma == 0.95);
  CHECK(RewardConfig{}.d_success == 3.0);
}

TEST_CASE("reward records telescope and satisfy the recursion") {
  Setup s;
  RewardConfig cfg;
  cfg.success_indicator = false;
  auto rng = make_rng(6);
  for (int i = 0; i < 10; ++i) {
    const auto traj = rollout(s.nav, s.world, s.episode, RolloutMode::Sample, rng, 10);
    const auto rec = compute_rewards(s.world, s.episode, traj, s.critic, cfg);
    double sum = 0.0;
    for (double r : rec.immediate) sum += r;
    const double d0 = geodesic_distance(s.world, s.episode.start().viewpoint, s.episode.target());
    const double dT = geodesic_distance(s.world, traj.end_state.viewpoint, s.episode.target());
    CHECK(std::abs(sum - (d0 - dT)) <= 1e-9);
    for (std::size_t t = 0; t < rec.returns.size(); ++t) {
      const double next = t + 1 < rec.returns.size() ? rec.returns[t + 1] : 0.0;
      CHECK(rec.returns[t] == rec.immediate[t] + cfg.gamma * next);
      CHECK(rec.advantages[t] == rec.returns[t] + cfg.delta * rec.intrinsic);
    }
    CHECK(rec.intrinsic > 0.0);
    CHECK(rec.intrinsic <= 1.0);
  }
}

TEST_CASE("supervised loss of a uniform policy") {
  // both demonstration states offer three moves plus STOP
  const auto w = hand_world({{0, 0}, {5, 0}, {0, 5}, {0, -5}, {5, 5}, {5, -5}},
                            {{0, 1}, {0, 2}, {0, 3}, {1, 4}, {1, 5}}, tiny_world_config());
  const EpisodeSpec e(0, 0, Instruction{{0, 6, 4, 6}}, {0, 0.0, 0.0}, 1, {0, 1}, 7);
  const auto zero = make_zero_navigator(tiny_navigator_config());
  const auto g = sl_gradient(zero, w, e);
  CHECK(g.loss == doctest::Approx(2 * std::log(4.0)).epsilon(1e-14));

  auto nav = make_navigator(tiny_navigator_config(), 4);
  const LossAndGradFn fn = [&](const ParamSet& p) {
    auto r = sl_gradient(Navigator{nav.config, p}, w, e);
    return std::make_pair(r.loss, std::move(r.grads));
  };
  CHECK(testing::max_error_above_floor(fn, nav.params, 1e-5) < 1e-4);
  CHECK(testing::max_abs_error(fn, nav.params, 1e-5) < 1e-9);
}

TEST_CASE("supervised loss vanishes as the policy becomes deterministic") {
  const auto w = hand_world({{0, 0}, {5, 0}}, {{0, 1}}, tiny_world_config());
  const EpisodeSpec e(0, 0, Instruction{{0, 6, 4, 6}}, {0, 0.0, 0.0}, 1, {0, 1}, 7);
  auto nav = make_navigator(tiny_navigator_config(), 4);
  randomize(nav.params, 5);
  const auto g = sl_gradient(nav, w, e);
  CHECK(g.loss > 0.0);
  AdamState opt = AdamState::for_params(nav.params);
  TrainConfig tc;
  tc.lr_sl = 0.05;
  tc.dropout = 0.0;
  tc.weight_decay = 0.0;
  auto rng = make_rng(1);
  double loss = 0.0;
  for (int i = 0; i < 300; ++i) loss = sl_step(nav, opt, w, e, tc, rng);
  CHECK(loss < 1e-3);
  CHECK(sl_gradient(nav, w, e).loss < 1e-3);
}

TEST_CASE("rl gradient equals a direct REINFORCE implementation") {
  Setup s;
  randomize(s.nav.params, 8, 0.5);
  TrainConfig tc;
  tc.lr_rl = 1e-3;
  RewardConfig rc;
  rc.delta = 0.0;
  rc.success_indicator = false;
  s.nav.config.dropout = 0.5;

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto rng = make_rng(seed);
    auto rng_copy = rng;
    const auto sample = rl_sample(s.nav, s.critic, s.world, s.episode, rng_copy, tc, rc);
    const auto& traj = sample.trajectory;

    // rewards recomputed from geodesics, returns by the double sum
    Vec r;
    AgentState prev = traj.steps.front().state;
    for (std::size_t t = 0; t < traj.length(); ++t) {
      const AgentState next = t + 1 < traj.length() ? traj.steps[t + 1].state : traj.end_state;
      r.push_back(geodesic_distance(s.world, prev.viewpoint, s.episode.target()) -
                  geodesic_distance(s.world, next.viewpoint, s.episode.target()));
      prev = next;
    }
    const Vec A = returns_oracle(r, rc.gamma);

    // -sum_t A_t grad log pi(a_t|s_t), one step at a time
    ParamSet grad = s.nav.params.zeros_like();
    for (std::size_t t = 0; t < traj.length(); ++t) {
      Vec onehot(traj.length(), 0.0);
      onehot[t] = 1.0;
      const auto g = trajectory_logprob_backward(s.nav, s.world, s.episode, traj, onehot);
      grad.add_scaled(g.grads, -A[t]);
    }
    Navigator expected = s.nav;
    AdamState expected_opt = AdamState::for_params(s.nav.params);
    adam_update(expected.params, grad, expected_opt, adam_hyper(tc.lr_rl, tc.weight_decay));

    Navigator nav = s.nav;
    AdamState opt = AdamState::for_params(nav.params);
    const auto stats = rl_step(nav, opt, s.critic, s.world, s.episode, rng, tc, rc);
    CHECK(stats.return0 == doctest::Approx(A.front()).epsilon(1e-12));
    for (const auto& e : nav.params) {
      const auto& want = expected.params.at(e.name);
      for (std::size_t i = 0; i < e.tensor.size(); ++i) CHECK(e.tensor[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("rl step is reproducible; zero advantages leave parameters unchanged") {
  Setup s;
  TrainConfig tc;
  RewardConfig rc;
  Navigator a = s.nav, b = s.nav;
  AdamState oa = AdamState::for_params(a.params), ob = oa;
  auto ra = make_rng(3), rb = make_rng(3);
  rl_step(a, oa, s.critic, s.world, s.episode, ra, tc, rc);
  rl_step(b, ob, s.critic, s.world, s.episode, rb, tc, rc);
  CHECK(a.params == b.params);
  CHECK(oa == ob);
  CHECK_FALSE(a.params == s.nav.params);

  auto rng = make_rng(4);
  const auto traj = rollout(s.nav, s.world, s.episode, RolloutMode::Sample, rng, 10);
  const auto g = policy_gradient(s.nav, s.world, s.episode, traj, Vec(traj.length(), 0.0));
  CHECK(all_zero(g.grads));
  Navigator c = s.nav;
  AdamState oc = AdamState::for_params(c.params);
  adam_update(c.params, g.grads, oc, adam_hyper(1e-3, 0.0));
  CHECK(c.params == s.nav.params);
}

TEST_CASE("replay buffer keeps the strictly best entry") {
  Setup s;
  auto rng = make_rng(1);
  const auto t = rollout(s.nav, s.world, s.episode, RolloutMode::Sample, rng, 10);
  ReplayBuffer buf;
  const std::vector<double> rewards{0.2, 0.9, 0.5};
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 3; ++k) trajs.push_back(rollout(s.nav, s.world, s.episode, RolloutMode::Sample, rng, 10));
  const auto best = static_cast<std::size_t>(std::max_element(rewards.begin(), rewards.end()) - rewards.begin());
  CHECK(best == 1);  // the second rollout
  CHECK(buf.offer(7, trajs[best], rewards[best]));
  CHECK_FALSE(buf.offer(7, t, 0.9));
  CHECK_FALSE(buf.offer(7, t, 0.3));
  CHECK(buf.find(7)->trajectory == trajs[1]);
  CHECK(buf.offer(7, t, 0.95));
  CHECK(buf.find(7)->trajectory == t);
  CHECK(buf.size() == 1);
  CHECK(buf.find(8) == nullptr);
}

TEST_CASE("sil collection selects the argmax and the buffer is monotone") {
  Setup s;
  randomize(s.critic.params, 4);
  const auto sealed = s.episode.sealed_copy();
  ReplayBuffer buf;
  auto rng = make_rng(2);
  double prev_best = -1.0;
  for (int round = 0; round < 5; ++round) {
    const auto c = sil_collect(s.nav, s.critic, s.world, sealed, 4, 10, rng, buf);
    REQUIRE(c.rewards.size() == 4);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < c.rewards.size(); ++k)
      if (c.rewards[k] > c.rewards[arg]) arg = k;
    CHECK(static_cast<std::size_t>(c.best) == arg);
    for (std::size_t k = 0; k < c.rewards.size(); ++k)
      CHECK(c.rewards[k] == intrinsic_reward(s.critic, sealed.instruction(), s.world, c.rollouts[k]).value);
    const auto* entry = buf.find(sealed.id());
    REQUIRE(entry != nullptr);
    CHECK(entry->reward >= prev_best);
    CHECK(entry->reward >= c.rewards[arg]);
    CHECK(c.replaced == (entry->reward == c.rewards[arg] && c.rewards[arg] > prev_best));
    CHECK(intrinsic_reward(s.critic, sealed.instruction(), s.world, entry->trajectory).value == entry->reward);
    prev_best = entry->reward;
  }
  CHECK_THROWS(sil_collect(s.nav, s.critic, s.world, sealed, 0, 10, rng, buf));
}

TEST_CASE("sil loss scales the imitation loss by the stored reward") {
  Setup s;
  auto rng = make_rng(3);
  const auto traj = rollout(s.nav, s.world, s.episode, RolloutMode::Sample, rng, 10);
  const ReplayEntry entry{traj, 0.37};
  const auto weighted = sil_gradient(s.nav, s.world, s.episode, entry, SilLoss::Weighted);
  const auto imitation = sil_gradient(s.nav, s.world, s.episode, entry, SilLoss::Imitation);
  double nll = 0.0;
  for (double lp : replay_log_probs(s.nav, s.world, s.episode, traj)) nll -= lp;
  CHECK(imitation.loss == doctest::Approx(nll).epsilon(1e-12));
  CHECK(weighted.loss == doctest::Approx(0.37 * nll).epsilon(1e-12));
  for (const auto& e : weighted.grads)
    for (std::size_t i = 0; i < e.tensor.size(); ++i)
      CHECK(e.tensor[i] == doctest::Approx(0.37 * imitation.grads.at(e.name)[i]).epsilon(1e-12));

  const ReplayEntry zero{traj, 0.0};
  Navigator nav = s.nav;
  AdamState opt = AdamState::for_params(nav.params);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  sil_step(nav, opt, s.world, s.episode.sealed_copy(), zero, tc, rng);
  CHECK(nav.params == s.nav.params);

  const auto other = generate_world(tiny_world_config(12, 3.0), 52);
  CHECK_THROWS_AS(sil_gradient(s.nav, other, s.episode, entry, SilLoss::Weighted), TrajectoryIntegrityError);
}

TEST_CASE("critic pretraining lowers the loss and leaves it non-negative") {
  const auto data = small_dataset();
  auto state = small_trainer(data);
  std::vector<EpisodeSpec> one{data.train.front()};
  Dataset single = data;
  single.train = one;
  const double before = critic_loss(state.critic, data, one);
  TrainConfig tc;
  tc.epochs_critic = 1;
  tc.lr_critic = 1e-2;
  const auto hist = pretrain_critic(state, single, tc);
  REQUIRE_FALSE(hist.empty());
  const double after = critic_loss(state.critic, data, one);
  CHECK(after < before);
  CHECK(after >= 0.0);
  for (const auto& h : hist) CHECK(h.loss >= 0.0);
}

TEST_CASE("training phases") {
  const auto data = small_dataset();
  auto rc = small_run_config();

  SUBCASE("identical seeds give identical histories") {
    auto a = small_trainer(data), b = small_trainer(data);
    const auto ha = train(a, data, rc.train, rc.reward);
    const auto hb = train(b, data, rc.train, rc.reward);
    CHECK(ha == hb);
    CHECK(a.navigator.params == b.navigator.params);
    CHECK_FALSE(ha.empty());
  }

  SUBCASE("zero RL epochs return the supervised model") {
    auto a = small_trainer(data), b = small_trainer(data);
    pretrain_critic(a, data, rc.train);
    train_sl(a, data, rc.train, rc.reward);
    auto tc = rc.train;
    tc.epochs_rl = 0;
    train(b, data, tc, rc.reward);
    CHECK(a.navigator.params == b.navigator.params);
  }

  SUBCASE("the critic stays frozen during policy learning") {
    auto a = small_trainer(data);
    pretrain_critic(a, data, rc.train);
    const auto frozen = a.critic.params;
    const auto traj = demonstration_trajectory(data.world(data.train[0].world_id()), data.train[0]);
    const double r0 =
        intrinsic_reward(a.critic, data.train[0].instruction(), data.world(data.train[0].world_id()), traj).value;
    train_sl(a, data, rc.train, rc.reward);
    train_rl(a, data, rc.train, rc.reward);
    train_sil(a, data, rc.train, rc.reward, SilMode::Train);
    CHECK(a.critic.params == frozen);
    CHECK(intrinsic_reward(a.critic, data.train[0].instruction(), data.world(data.train[0].world_id()), traj).value ==
          r0);
  }
}

TEST_CASE("unseen self-imitation never reads supervision") {
  auto data = small_dataset();
  for (auto& e : data.unseen_val) e = e.stripped_copy();
  auto rc = small_run_config();
  auto state = small_trainer(data);
  train_sl(state, data, rc.train, rc.reward);
  const auto before = state.navigator.params;
  const auto hist = train_sil(state, data, rc.train, rc.reward, SilMode::Unseen);
  CHECK_FALSE(state.navigator.params == before);
  for (const auto& h : hist) CHECK(h.split != "unseen_val");
  CHECK(state.phase == "sil-unseen");

  auto sealed = small_dataset();
  for (auto& e : sealed.unseen_val) e = e.sealed_copy();
  auto s2 = small_trainer(sealed);
  CHECK_NOTHROW(train_sil(s2, sealed, rc.train, rc.reward, SilMode::Unseen));
}

TEST_CASE("evaluation does not depend on the worker count") {
  const auto data = small_dataset();
  auto state = small_trainer(data);
  RewardConfig rc;
  const auto one = evaluate_split(state.navigator, data, data.train, rc, 10, 1);
  const auto three = evaluate_split(state.navigator, data, data.train, rc, 10, 3);
  CHECK(one.sr == three.sr);
  CHECK(one.spl == three.spl);
  REQUIRE(one.episodes.size() == three.episodes.size());
  for (std::size_t i = 0; i < one.episodes.size(); ++i)
    CHECK(one.episodes[i].trajectory == three.episodes[i].trajectory);
}
