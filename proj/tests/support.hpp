#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "crossnav/config.hpp"
#include "crossnav/critic.hpp"
#include "crossnav/navigator.hpp"
#include "crossnav/rng.hpp"
#include "crossnav/worldsim.hpp"

namespace testing {

using namespace crossnav;

inline constexpr int kLandmarks = 3;

inline WorldConfig tiny_world_config(int n = 8, double degree = 3.0) {
  WorldConfig c;
  c.n_viewpoints = n;
  c.mean_degree = degree;
  c.feature_dim = 4;
  c.landmark_vocab = kLandmarks;
  c.tile_factor = 1;
  c.patch_count = 4;
  return c;
}

inline NavigatorConfig tiny_navigator_config() {
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

inline CriticConfig tiny_critic_config(int vocab = Vocabulary::size(kLandmarks)) {
  CriticConfig c;
  c.vocab_size = vocab;
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

inline void randomize(ParamSet& params, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, 77);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& e : params)
    for (auto& v : e.tensor.values()) v = u(rng);
}

/// Largest relative error over coordinates whose analytic gradient exceeds
/// floor. Central differences at eps 1e-5 carry ~1e-11 absolute roundoff, so
/// coordinates far below that scale cannot meet a relative bound.
inline double max_error_above_floor(const LossAndGradFn& fn, const ParamSet& params, double eps,
                                    double floor = 1e-6) {
  const auto analytic = fn(params).second;
  const auto numeric = numeric_gradient([&](const ParamSet& p) { return fn(p).first; }, params, eps);
  double worst = 0.0;
  for (const auto& e : analytic) {
    const auto& n = numeric.at(e.name);
    for (std::size_t i = 0; i < e.tensor.size(); ++i)
      if (std::abs(e.tensor[i]) > floor) worst = std::max(worst, relative_error(e.tensor[i], n[i]));
  }
  return worst;
}

inline double max_abs_error(const LossAndGradFn& fn, const ParamSet& params, double eps) {
  const auto analytic = fn(params).second;
  const auto numeric = numeric_gradient([&](const ParamSet& p) { return fn(p).first; }, params, eps);
  double worst = 0.0;
  for (const auto& e : analytic)
    for (std::size_t i = 0; i < e.tensor.size(); ++i)
      worst = std::max(worst, std::abs(e.tensor[i] - numeric.at(e.name)[i]));
  return worst;
}

/// Hand-built world on the plane; edge lengths are Euclidean.
inline WorldGraph hand_world(const std::vector<std::array<double, 2>>& xy, const std::vector<std::pair<int, int>>& links,
                             WorldConfig config, std::vector<int> landmark_ids = {}) {
  config.n_viewpoints = static_cast<int>(xy.size());
  auto table = std::make_shared<const LandmarkTable>(LandmarkTable::generate(config));
  std::vector<Viewpoint> vps;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const int lm = landmark_ids.empty() ? static_cast<int>(i) % config.landmark_vocab : landmark_ids[i];
    vps.push_back({static_cast<int>(i), {xy[i][0], xy[i][1], 0.0}, lm});
  }
  std::vector<Edge> edges;
  for (auto [a, b] : links) {
    const double dx = xy[static_cast<std::size_t>(a)][0] - xy[static_cast<std::size_t>(b)][0];
    const double dy = xy[static_cast<std::size_t>(a)][1] - xy[static_cast<std::size_t>(b)][1];
    edges.push_back({a, b, std::hypot(dx, dy)});
  }
  Tensor style(table->embeddings.shape());
  return WorldGraph(0, 5, std::move(vps), std::move(edges), table, std::move(style), config);
}

/// Small split that trains in well under a second per epoch.
inline RunConfig small_run_config() {
  RunConfig rc;
  rc.split.world = tiny_world_config(12, 3.0);
  rc.split.world.feature_dim = 6;
  rc.split.world.landmark_vocab = 4;
  rc.split.episode.min_hops = 1;
  rc.split.episode.max_hops = 3;
  rc.split.train_worlds = 2;
  rc.split.unseen_worlds = 1;
  rc.split.train_episodes = 8;
  rc.split.seen_val_episodes = 4;
  rc.split.unseen_val_episodes = 4;
  rc.navigator.embed_dim = 4;
  rc.navigator.hidden_dim = 6;
  rc.navigator.action_embed_dim = 4;
  rc.navigator.attn_panoramic = 4;
  rc.navigator.attn_textual = 4;
  rc.navigator.attn_visual = 4;
  rc.navigator.predictor_dim = 4;
  rc.critic.embed_dim = 4;
  rc.critic.hidden_dim = 6;
  rc.critic.action_embed_dim = 4;
  rc.critic.attn_panoramic = 4;
  rc.critic.attn_decoder = 4;
  rc.critic.head_dim = 4;
  rc.train.epochs_critic = 2;
  rc.train.epochs_sl = 2;
  rc.train.epochs_rl = 2;
  rc.train.epochs_sil = 2;
  rc.train.sil_rollouts = 3;
  return rc;
}

}  // namespace testing
