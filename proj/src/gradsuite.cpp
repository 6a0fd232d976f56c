#include "crossnav/gradsuite.hpp"

#include "crossnav/critic.hpp"
#include "crossnav/navigator.hpp"
#include "crossnav/rng.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

namespace {

constexpr int kLandmarks = 3;

void randomize(ParamSet& params, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& e : params)
    for (auto& v : e.tensor.values()) v = u(rng);
}

WorldConfig tiny_world(int n, double degree) {
  WorldConfig c;
  c.n_viewpoints = n;
  c.mean_degree = degree;
  c.feature_dim = 4;
  c.landmark_vocab = kLandmarks;
  c.tile_factor = 1;
  c.patch_count = 4;
  return c;
}

NavigatorConfig tiny_navigator() {
  NavigatorConfig c;
  c.vocab_size = Vocabulary::size(kLandmarks);
  c.feature_dim = 4;
  c.orientation_dim = 4;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  c.action_embed_dim = 3;
  c.attn_panoramic = 3;
  c.attn_textual = 3;
  c.attn_visual = 3;
  c.predictor_dim = 3;
  return c;
}

CriticConfig tiny_critic() {
  CriticConfig c;
  c.vocab_size = Vocabulary::size(kLandmarks);
  c.feature_dim = 4;
  c.orientation_dim = 4;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  c.action_embed_dim = 3;
  c.attn_panoramic = 3;
  c.attn_decoder = 3;
  c.head_dim = 3;
  return c;
}

GradCheckResult check_navigator(const std::string& label, const NavigatorConfig& nc, ParamSet params,
                                const WorldGraph& world, const EpisodeSpec& episode, const Trajectory& traj,
                                double epsilon) {
  const Vec weights(traj.steps.size(), 1.0);
  const auto report = grad_check(
      [&](const ParamSet& p) {
        auto g = trajectory_logprob_backward(Navigator{nc, p}, world, episode, traj, weights);
        return std::make_pair(g.objective, std::move(g.grads));
      },
      params, epsilon);
  return {label, report.max_relative_error, report.worst_param, report.coordinates};
}

}  // namespace

std::vector<GradCheckResult> standard_grad_checks(std::uint64_t seed, double epsilon) {
  std::vector<GradCheckResult> out;
  auto rng = make_rng(seed, 0x4743);
  const auto nc = tiny_navigator();

  // one step on a two-viewpoint world
  const auto pair_world = generate_world(tiny_world(2, 1.0), seed);
  const EpisodeSpec pair_episode(0, 0, Instruction{{0, Vocabulary::landmark_token(0), Vocabulary::kStopAt,
                                                    Vocabulary::landmark_token(1)}},
                                 AgentState{0, 0.3, 0.0}, 1, {0, 1}, seed + 1);
  auto one_step = demonstration_trajectory(pair_world, pair_episode);
  one_step.steps.resize(1);
  one_step.stopped = false;
  one_step.end_state = AgentState{1, pair_world.bearing(0, 1), 0.0};
  {
    auto nav = make_navigator(nc, seed);
    randomize(nav.params, rng);
    out.push_back(check_navigator("navigator-step", nc, nav.params, pair_world, pair_episode, one_step, epsilon));
  }

  // teacher-forced three-step rollout (two moves then STOP)
  const auto world = generate_world(tiny_world(8, 2.0), seed);
  int start = -1, target = -1;
  for (int a = 0; a < world.size() && start < 0; ++a)
    for (int b = 0; b < world.size(); ++b)
      if (shortest_path(world, a, b).size() == 3) {
        start = a;
        target = b;
        break;
      }
  if (start < 0) throw GenerationError("no two-hop path in the gradient-check world");
  const EpisodeSpec episode(1, 0, Instruction{{1, Vocabulary::landmark_token(0), 2, Vocabulary::landmark_token(1),
                                               Vocabulary::kStopAt, Vocabulary::landmark_token(2)}},
                            AgentState{start, 0.0, 0.0}, target, shortest_path(world, start, target), seed + 2);
  const auto demo = demonstration_trajectory(world, episode);
  {
    auto nav = make_navigator(nc, seed + 1);
    randomize(nav.params, rng);
    out.push_back(check_navigator("rollout-3step", nc, nav.params, world, episode, demo, epsilon));
  }

  // critic loss on a two-step trajectory and a three-token instruction
  {
    const auto cc = tiny_critic();
    auto critic = make_critic(cc, seed);
    randomize(critic.params, rng);
    const auto traj = demonstration_trajectory(pair_world, pair_episode);
    const Instruction instruction{{0, Vocabulary::landmark_token(1), Vocabulary::kStopAt}};
    const auto report = grad_check(
        [&](const ParamSet& p) {
          auto g = critic_mle_gradients(Critic{cc, p}, instruction, pair_world, traj);
          return std::make_pair(g.loss, std::move(g.grads));
        },
        critic.params, epsilon);
    out.push_back({"critic-mle", report.max_relative_error, report.worst_param, report.coordinates});
  }
  return out;
}

}  // namespace crossnav
