#include <cmath>

#include "doctest.h"
#include "support.hpp"

using namespace crossnav;
using testing::randomize;
using testing::tiny_critic_config;
using testing::tiny_world_config;

namespace {

struct Pair {
  WorldGraph world = generate_world(tiny_world_config(10, 3.0), 41);
  EpisodeSpec episode;
  Trajectory trajectory;
  Pair() {
    EpisodeConfig ec;
    ec.min_hops = 2;
    ec.max_hops = 2;
    ec.d_success = 0.5;
    episode = generate_episode(world, 3, ec, 0);
    trajectory = demonstration_trajectory(world, episode);
  }
};

Critic random_critic(int vocab, std::uint64_t seed) {
  auto c = make_critic(tiny_critic_config(vocab), seed);
  randomize(c.params, seed + 100);
  return c;
}

// Step-by-step decoder written directly against the parameter names.
Vec decoder_oracle(const Critic& critic, const std::vector<Vec>& enc, const LstmState& final_state,
                   const Instruction& instruction) {
  const auto& p = critic.params;
  LstmState state = final_state;
  Vec out;
  for (std::size_t i = 0; i < instruction.tokens.size(); ++i) {
    Vec input;
    if (i == 0) {
      input.assign(p.at("critic.bos").values().begin(), p.at("critic.bos").values().end());
    } else {
      auto r = p.at("critic.word_embedding").row(static_cast<std::size_t>(instruction.tokens[i - 1]));
      input.assign(r.begin(), r.end());
    }
    state = lstm_forward(input, state, p.at("critic.dec_lstm.weight"), p.at("critic.dec_lstm.bias")).next;
    auto [ctx, weights] =
        dot_product_attention(state.h, enc, AttentionParams{p.at("critic.dec_attn.query"), p.at("critic.dec_attn.key")});
    auto hid = affine(concat(state.h, ctx), p.at("critic.head.hidden.weight"), p.at("critic.head.hidden.bias").values());
    for (auto& v : hid) v = std::tanh(v);
    const auto logits = affine(hid, p.at("critic.head.out.weight"), p.at("critic.head.out.bias").values());
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    out.push_back(logits[static_cast<std::size_t>(instruction.tokens[i])] - mx - std::log(z));
  }
  return out;
}

}  // namespace

TEST_CASE("trajectory encoder shapes") {
  Pair pr;
  const auto c = random_critic(8, 1);
  Trajectory one = pr.trajectory;
  one.steps.resize(1);
  CHECK(encode_trajectory(c, pr.world, one).size() == 1);
  CHECK(encode_trajectory(c, pr.world, pr.trajectory).size() == pr.trajectory.length());
  for (const auto& f : encode_trajectory(make_zero_critic(tiny_critic_config(8)), pr.world, pr.trajectory))
    CHECK(f == Vec(4, 0.0));
  Trajectory empty;
  CHECK_THROWS(encode_trajectory(c, pr.world, empty));
}

TEST_CASE("single-word vocabulary is certain") {
  Pair pr;
  const auto c = random_critic(1, 2);
  const Instruction instr{{0, 0, 0, 0}};
  for (double lp : instruction_logprob(c, instr, pr.world, pr.trajectory)) CHECK(lp == 0.0);
  CHECK(intrinsic_reward(c, instr, pr.world, pr.trajectory).value == 1.0);
  const auto loss = critic_mle_gradients(c, instr, pr.world, pr.trajectory);
  CHECK(loss.loss == 0.0);
  for (const auto& e : loss.grads)
    for (double v : e.tensor.values()) CHECK(v == 0.0);
}

TEST_CASE("zero parameters give a uniform decoder") {
  Pair pr;
  const auto c = make_zero_critic(tiny_critic_config(8));
  for (std::size_t n : {1u, 3u, 9u}) {
    Instruction instr;
    for (std::size_t i = 0; i < n; ++i) instr.tokens.push_back(static_cast<int>(i % 8));
    for (double lp : instruction_logprob(c, instr, pr.world, pr.trajectory))
      CHECK(lp == doctest::Approx(-std::log(8.0)).epsilon(1e-14));
    CHECK(intrinsic_reward(c, instr, pr.world, pr.trajectory).value == doctest::Approx(0.125).epsilon(1e-14));
    CHECK(critic_mle_gradients(c, instr, pr.world, pr.trajectory).loss == doctest::Approx(std::log(8.0)));
  }
}

TEST_CASE("log-probabilities match a step-by-step decoder") {
  Pair pr;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = random_critic(8, seed);
    const Instruction instr{{1, 5, 0, 7, 4, 6}};
    const auto enc = encode_trajectory(c, pr.world, pr.trajectory);
    // the decoder starts from the encoder's final (h, c); recover c by replaying the cell
    const auto& p = c.params;
    LstmState state{Vec(4, 0.0), Vec(4, 0.0)};
    for (const auto& step : pr.trajectory.steps) {
      const auto obs = observe(pr.world, step.state, pr.trajectory.observation_seed);
      const auto& cand = obs.candidates[static_cast<std::size_t>(step.action)];
      const Vec u = cand.is_stop() ? concat(p.at("critic.stop.appearance").values(), p.at("critic.stop.orientation").values())
                                   : concat(cand.appearance, cand.orientation);
      const auto a = affine(u, p.at("critic.action_proj.weight"), p.at("critic.action_proj.bias").values());
      auto [ctx, w] = dot_product_attention(state.h, obs.patches,
                                            AttentionParams{p.at("critic.pano_attn.query"), p.at("critic.pano_attn.key")});
      state = lstm_forward(concat(ctx, a), state, p.at("critic.traj_lstm.weight"), p.at("critic.traj_lstm.bias")).next;
    }
    CHECK(state.h == enc.back());
    const auto oracle = decoder_oracle(c, enc, state, instr);
    const auto got = instruction_logprob(c, instr, pr.world, pr.trajectory);
    REQUIRE(got.size() == oracle.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
      CHECK(got[i] < 0.0);
      mean += oracle[i] / static_cast<double>(got.size());
    }
    const auto r = intrinsic_reward(c, instr, pr.world, pr.trajectory);
    CHECK(r.value == doctest::Approx(std::exp(mean)).epsilon(1e-12));
    CHECK(r.value > 0.0);
    CHECK(r.value <= 1.0);
    CHECK(intrinsic_reward(c, instr, pr.world, pr.trajectory, IntrinsicForm::MeanLogProb).value ==
          doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("reward reduction is monotone and length-normalized") {
  const Vec lp{-0.5, -1.2, -0.1};
  const double base = reduce_intrinsic(lp, IntrinsicForm::GeometricMean);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    Vec up = lp;
    up[i] += 0.05;
    CHECK(reduce_intrinsic(up, IntrinsicForm::GeometricMean) > base);
    CHECK(reduce_intrinsic(up, IntrinsicForm::MeanLogProb) > reduce_intrinsic(lp, IntrinsicForm::MeanLogProb));
  }
  CHECK(reduce_intrinsic(Vec(2, std::log(0.3)), IntrinsicForm::GeometricMean) ==
        doctest::Approx(reduce_intrinsic(Vec(11, std::log(0.3)), IntrinsicForm::GeometricMean)));
  CHECK(reduce_intrinsic(Vec(5, 0.0), IntrinsicForm::GeometricMean) == 1.0);
}

TEST_CASE("critic loss gradient on two-step, three-token pairs") {
  Pair pr;
  Trajectory two = pr.trajectory;
  REQUIRE(two.length() == 3);
  two.steps.resize(2);
  const Instruction instr{{3, 6, 4}};
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    const auto c = random_critic(8, seed);
    const LossAndGradFn fn = [&](const ParamSet& p) {
      auto r = critic_mle_gradients(Critic{c.config, p}, instr, pr.world, two);
      return std::make_pair(r.loss, std::move(r.grads));
    };
    INFO("seed ", seed);
    CHECK(testing::max_error_above_floor(fn, c.params, 1e-5) < 1e-4);
    CHECK(testing::max_abs_error(fn, c.params, 1e-5) < 1e-9);
  }
}

TEST_CASE("critic outputs are reproducible") {
  Pair pr;
  const auto c = random_critic(8, 12);
  const Instruction instr{{3, 6, 4, 5}};
  CHECK(instruction_logprob(c, instr, pr.world, pr.trajectory) == instruction_logprob(c, instr, pr.world, pr.trajectory));
  CHECK_THROWS(instruction_logprob(c, Instruction{{8}}, pr.world, pr.trajectory));
}
