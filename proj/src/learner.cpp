#include "crossnav/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <exception>
#include <stdexcept>
#include <thread>

namespace crossnav {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void check_finite(const ParamSet& params, const char* what) {
  for (const auto& e : params)
    if (!e.tensor.all_finite()) throw NumericError(std::string(what) + ": non-finite value in " + e.name);
}

DropoutPlan draw_dropout(double rate, Rng& rng) {
  if (rate <= 0) return {};
  return {rate, rng()};
}

std::vector<const EpisodeSpec*> shuffled(std::span<const EpisodeSpec> episodes, Rng& rng) {
  std::vector<const EpisodeSpec*> order;
  order.reserve(episodes.size());
  for (const auto& e : episodes) order.push_back(&e);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Averages accumulated gradients over the batch and applies Adam.
void apply_batch(ParamSet& params, ParamSet& accum, int count, AdamState& opt, const AdamHyper& hyper) {
  if (count == 0) return;
  accum.scale(1.0 / count);
  check_finite(accum, "gradient");
  adam_update(params, accum, opt, hyper);
  check_finite(params, "parameters");
  accum.scale(0.0);
}

EpochRecord make_record(const std::string& phase, int epoch, const std::string& split, const MetricsReport* m,
                        double loss) {
  EpochRecord r;
  r.phase = phase;
  r.epoch = epoch;
  r.split = split;
  if (m) {
    r.pl = m->pl;
    r.ne = m->ne;
    r.osr = m->osr;
    r.sr = m->sr;
    r.spl = m->spl;
  }
  r.loss = loss;
  return r;
}

bool supervised(std::span<const EpisodeSpec> episodes) {
  return !episodes.empty() &&
         std::all_of(episodes.begin(), episodes.end(), [](const EpisodeSpec& e) { return e.has_supervision(); });
}

struct EpochEval {
  double seen_sr = -1.0;
};

// Greedy evaluation on every split that carries supervision.
EpochEval record_epoch(const std::string& phase, int epoch, double loss, const Navigator& nav, const Dataset& data,
                       const RewardConfig& reward, int max_path, History& history, const EpochCallback& cb) {
  EpochEval out;
  const std::pair<const char*, const std::vector<EpisodeSpec>*> splits[] = {
      {"train", &data.train}, {"seen_val", &data.seen_val}, {"unseen_val", &data.unseen_val}};
  for (const auto& [name, eps] : splits) {
    if (!supervised(*eps)) continue;
    const auto m = evaluate_split(nav, data, *eps, reward, max_path);
    history.push_back(make_record(phase, epoch, name, &m, loss));
    if (cb) cb(history.back());
    if (std::string(name) == "seen_val") out.seen_sr = m.sr;
  }
  return out;
}

// Keeps the best parameters by a score and reports when patience ran out.
struct EarlyStop {
  explicit EarlyStop(int p) : patience(p) {}
  int patience;
  double best = -1e300;
  int stale = 0;
  ParamSet best_params;

  bool update(double score, const ParamSet& params) {
    if (score > best) {
      best = score;
      best_params = params;
      stale = 0;
      return false;
    }
    return ++stale >= patience;
  }
};

void start_phase(TrainerState& state, const std::string& phase, const TrainConfig& config) {
  state.phase = phase;
  state.navigator.config.dropout = config.dropout;
  state.nav_opt = AdamState::for_params(state.navigator.params);
}

}  // namespace

// ---- rewards --------------------------------------------------------------------------

double immediate_reward(const WorldGraph& world, int target, const AgentState& state, const AgentState& next,
                        bool is_final, double d_success, bool success_indicator) {
  const double d_next = geodesic_distance(world, next.viewpoint, target);
  if (is_final && success_indicator) return d_next <= d_success ? 1.0 : 0.0;
  return geodesic_distance(world, state.viewpoint, target) - d_next;
}

Vec discounted_returns(std::span<const double> immediate, double gamma) {
  Vec out(immediate.size(), 0.0);
  double running = 0.0;
  for (std::size_t k = immediate.size(); k-- > 0;) {
    running = immediate[k] + gamma * running;
    out[k] = running;
  }
  return out;
}

Vec advantages(std::span<const double> returns, double intrinsic, double delta) {
  Vec out(returns.begin(), returns.end());
  for (double& a : out) a += delta * intrinsic;
  return out;
}

std::vector<AgentState> next_states(const Trajectory& trajectory) {
  std::vector<AgentState> out;
  for (std::size_t t = 0; t < trajectory.steps.size(); ++t)
    out.push_back(t + 1 < trajectory.steps.size() ? trajectory.steps[t + 1].state : trajectory.end_state);
  return out;
}

RewardRecord compute_rewards(const WorldGraph& world, const EpisodeSpec& episode, const Trajectory& trajectory,
                             const Critic& critic, const RewardConfig& config) {
  if (trajectory.steps.empty()) throw std::invalid_argument("cannot score an empty trajectory");
  RewardRecord r;
  const int target = episode.target();
  const auto next = next_states(trajectory);
  const std::size_t T = trajectory.steps.size();
  for (std::size_t t = 0; t < T; ++t)
    r.immediate.push_back(immediate_reward(world, target, trajectory.steps[t].state, next[t], t + 1 == T,
                                           config.d_success, config.success_indicator));
  r.returns = discounted_returns(r.immediate, config.gamma);
  if (config.delta != 0.0)
    r.intrinsic = intrinsic_reward(critic, episode.instruction(), world, trajectory, config.intrinsic_form).value;
  r.advantages = advantages(r.returns, r.intrinsic, config.delta);
  return r;
}

// ---- gradients and updates ---------------------------------------------------------------

AdamHyper adam_hyper(double lr, double weight_decay) {
  AdamHyper h;
  h.lr = lr;
  h.weight_decay = weight_decay;
  return h;
}

LossGrad policy_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                         const Trajectory& trajectory, std::span<const double> weights) {
  auto g = trajectory_logprob_backward(nav, world, episode, trajectory, weights);
  g.grads.scale(-1.0);
  return {-g.objective, std::move(g.grads)};
}

LossGrad sl_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                     const DropoutPlan& dropout) {
  auto demo = demonstration_trajectory(world, episode);
  demo.dropout = dropout;
  const Vec ones(demo.steps.size(), 1.0);
  return policy_gradient(nav, world, episode, demo, ones);
}

double sl_step(Navigator& nav, AdamState& opt, const WorldGraph& world, const EpisodeSpec& episode,
               const TrainConfig& config, Rng& rng) {
  auto g = sl_gradient(nav, world, episode, draw_dropout(config.dropout, rng));
  check_finite(g.grads, "gradient");
  adam_update(nav.params, g.grads, opt, adam_hyper(config.lr_sl, config.weight_decay));
  check_finite(nav.params, "parameters");
  return g.loss;
}

RlSample rl_sample(const Navigator& nav, const Critic& critic, const WorldGraph& world, const EpisodeSpec& episode,
                   Rng& rng, const TrainConfig& config, const RewardConfig& reward) {
  RlSample s;
  s.trajectory = rollout(nav, world, episode, RolloutMode::Sample, rng, config.max_path,
                         config.dropout > 0 ? Mode::Train : Mode::Eval);
  s.rewards = compute_rewards(world, episode, s.trajectory, critic, reward);
  s.success = geodesic_distance(world, s.trajectory.end_state.viewpoint, episode.target()) <= reward.d_success;
  return s;
}

RlStats rl_step(Navigator& nav, AdamState& opt, const Critic& critic, const WorldGraph& world,
                const EpisodeSpec& episode, Rng& rng, const TrainConfig& config, const RewardConfig& reward) {
  auto s = rl_sample(nav, critic, world, episode, rng, config, reward);
  Vec w = s.rewards.advantages;
  if (config.advantage_baseline) {
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (double& a : w) a -= mean;
  }
  auto g = policy_gradient(nav, world, episode, s.trajectory, w);
  check_finite(g.grads, "gradient");
  adam_update(nav.params, g.grads, opt, adam_hyper(config.lr_rl, config.weight_decay));
  check_finite(nav.params, "parameters");
  return {s.rewards.returns.front(), s.rewards.intrinsic, s.success, g.loss};
}

// ---- self-supervised imitation --------------------------------------------------------------

bool ReplayBuffer::offer(int episode_id, const Trajectory& trajectory, double reward) {
  auto it = entries_.find(episode_id);
  if (it == entries_.end()) {
    entries_.emplace(episode_id, ReplayEntry{trajectory, reward});
    return true;
  }
  if (reward > it->second.reward) {
    it->second = ReplayEntry{trajectory, reward};
    return true;
  }
  return false;
}

const ReplayEntry* ReplayBuffer::find(int episode_id) const {
  auto it = entries_.find(episode_id);
  return it == entries_.end() ? nullptr : &it->second;
}

SilCollection sil_collect(const Navigator& nav, const Critic& critic, const WorldGraph& world,
                          const EpisodeSpec& episode, int rollouts, int max_steps, Rng& rng, ReplayBuffer& buffer,
                          IntrinsicForm form) {
  if (rollouts < 1) throw std::invalid_argument("sil_collect needs at least one rollout");
  SilCollection c;
  for (int k = 0; k < rollouts; ++k) {
    c.rollouts.push_back(rollout(nav, world, episode, RolloutMode::Sample, rng, max_steps, Mode::Eval));
    c.rewards.push_back(intrinsic_reward(critic, episode.instruction(), world, c.rollouts.back(), form).value);
  }
  c.best = static_cast<int>(std::max_element(c.rewards.begin(), c.rewards.end()) - c.rewards.begin());
  c.replaced = buffer.offer(episode.id(), c.rollouts[sz(c.best)], c.rewards[sz(c.best)]);
  return c;
}

LossGrad sil_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                      const ReplayEntry& entry, SilLoss form, const DropoutPlan& dropout) {
  Trajectory traj = entry.trajectory;
  traj.dropout = dropout;
  const double w = form == SilLoss::Weighted ? entry.reward : 1.0;
  const Vec weights(traj.steps.size(), w);
  return policy_gradient(nav, world, episode, traj, weights);
}

double sil_step(Navigator& nav, AdamState& opt, const WorldGraph& world, const EpisodeSpec& episode,
                const ReplayEntry& entry, const TrainConfig& config, Rng& rng) {
  auto g = sil_gradient(nav, world, episode, entry, config.sil_loss, draw_dropout(config.dropout, rng));
  check_finite(g.grads, "gradient");
  adam_update(nav.params, g.grads, opt, adam_hyper(config.lr_sil, config.weight_decay));
  check_finite(nav.params, "parameters");
  return g.loss;
}

// ---- orchestration ------------------------------------------------------------------------

TrainerState init_trainer(const NavigatorConfig& nav_config, const CriticConfig& critic_config,
                          std::uint64_t seed) {
  TrainerState s;
  s.navigator = make_navigator(nav_config, seed);
  s.critic = make_critic(critic_config, seed ^ 0x5bd1e995ULL);
  s.nav_opt = AdamState::for_params(s.navigator.params);
  s.critic_opt = AdamState::for_params(s.critic.params);
  s.rng = make_rng(seed, 0x7472u);
  return s;
}

NavigatorConfig navigator_config_for(const Dataset& data, const NavigatorConfig& base) {
  if (data.worlds.empty()) throw std::invalid_argument("dataset has no worlds");
  NavigatorConfig c = base;
  c.vocab_size = data.vocab_size();
  c.feature_dim = data.worlds.front().config().feature_dim;
  c.orientation_dim = data.worlds.front().orientation_dim();
  return c;
}

CriticConfig critic_config_for(const Dataset& data, const CriticConfig& base) {
  if (data.worlds.empty()) throw std::invalid_argument("dataset has no worlds");
  CriticConfig c = base;
  c.vocab_size = data.vocab_size();
  c.feature_dim = data.worlds.front().config().feature_dim;
  c.orientation_dim = data.worlds.front().orientation_dim();
  return c;
}

MetricsReport evaluate_split(const Navigator& nav, const Dataset& data, std::span<const EpisodeSpec> episodes,
                             const RewardConfig& reward, int max_path, int workers) {
  std::vector<EpisodeResult> results(episodes.size());
  auto run = [&](std::size_t begin, std::size_t stride) {
    Rng unused = make_rng(0);
    for (std::size_t i = begin; i < episodes.size(); i += stride) {
      const auto& ep = episodes[i];
      const auto& world = data.world(ep.world_id());
      const auto traj = rollout(nav, world, ep, RolloutMode::Greedy, unused, max_path, Mode::Eval);
      results[i] = evaluate_episode(world, ep, traj, reward.d_success);
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(sz(std::max(workers, 1)), 1, std::max<std::size_t>(episodes.size(), 1));
  if (n_workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(n_workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w)
      pool.emplace_back([&, w] {
        try {
          run(w, n_workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return aggregate(std::move(results));
}

double critic_loss(const Critic& critic, const Dataset& data, std::span<const EpisodeSpec> episodes) {
  if (episodes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ep : episodes) {
    const auto& world = data.world(ep.world_id());
    const auto demo = demonstration_trajectory(world, ep);
    const auto lp = instruction_logprob(critic, ep.instruction(), world, demo);
    total -= std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
  }
  return total / static_cast<double>(episodes.size());
}

History pretrain_critic(TrainerState& state, const Dataset& data, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
  if (!supervised(data.train)) throw std::invalid_argument("critic pretraining needs demonstrations");
  state.phase = "critic";
  state.critic_opt = AdamState::for_params(state.critic.params);
  const auto hyper = adam_hyper(config.lr_critic, config.weight_decay);
  History history;
  EarlyStop stop(config.patience);
  ParamSet accum = state.critic.params.zeros_like();
  for (int epoch = 1; epoch <= config.epochs_critic; ++epoch) {
    double total = 0.0;
    int in_batch = 0;
    for (const auto* ep : shuffled(data.train, state.rng)) {
      const auto& world = data.world(ep->world_id());
      const auto g = critic_mle_gradients(state.critic, ep->instruction(), world, demonstration_trajectory(world, *ep));
      total += g.loss;
      accum.add_scaled(g.grads, 1.0);
      if (++in_batch == config.batch_size) {
        apply_batch(state.critic.params, accum, in_batch, state.critic_opt, hyper);
        in_batch = 0;
      }
    }
    apply_batch(state.critic.params, accum, in_batch, state.critic_opt, hyper);
    const double train_loss = total / static_cast<double>(data.train.size());
    history.push_back(make_record("critic", epoch, "train", nullptr, train_loss));
    if (on_epoch) on_epoch(history.back());
    double score = -train_loss;
    if (supervised(data.seen_val)) {
      const double val = critic_loss(state.critic, data, data.seen_val);
      history.push_back(make_record("critic", epoch, "seen_val", nullptr, val));
      if (on_epoch) on_epoch(history.back());
      score = -val;
    }
    if (stop.update(score, state.critic.params)) break;
  }
  state.critic.params = stop.best_params;
  return history;
}

History train_sl(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                 const EpochCallback& on_epoch) {
  if (!supervised(data.train)) throw std::invalid_argument("supervised training needs demonstrations");
  start_phase(state, "sl", config);
  const auto hyper = adam_hyper(config.lr_sl, config.weight_decay);
  History history;
  EarlyStop stop(config.patience);
  ParamSet accum = state.navigator.params.zeros_like();
  for (int epoch = 1; epoch <= config.epochs_sl; ++epoch) {
    double total = 0.0;
    int in_batch = 0;
    for (const auto* ep : shuffled(data.train, state.rng)) {
      const auto g = sl_gradient(state.navigator, data.world(ep->world_id()), *ep,
                                 draw_dropout(config.dropout, state.rng));
      total += g.loss;
      accum.add_scaled(g.grads, 1.0);
      if (++in_batch == config.batch_size) {
        apply_batch(state.navigator.params, accum, in_batch, state.nav_opt, hyper);
        in_batch = 0;
      }
    }
    apply_batch(state.navigator.params, accum, in_batch, state.nav_opt, hyper);
    const double loss = total / static_cast<double>(data.train.size());
    const auto ev = record_epoch("sl", epoch, loss, state.navigator, data, reward, config.max_path, history, on_epoch);
    if (stop.update(ev.seen_sr, state.navigator.params)) break;
  }
  state.navigator.params = stop.best_params;
  return history;
}

History train_rl(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                 const EpochCallback& on_epoch) {
  if (!supervised(data.train)) throw std::invalid_argument("reinforcement training needs targets");
  start_phase(state, "rl", config);
  const auto hyper = adam_hyper(config.lr_rl, config.weight_decay);
  History history;
  EarlyStop stop(config.patience);
  ParamSet accum = state.navigator.params.zeros_like();

  // Record the starting point so selection can fall back on it.
  const auto ev0 = record_epoch("rl", 0, 0.0, state.navigator, data, reward, config.max_path, history, on_epoch);
  stop.update(ev0.seen_sr, state.navigator.params);

  for (int epoch = 1; epoch <= config.epochs_rl; ++epoch) {
    double total = 0.0;
    const auto order = shuffled(data.train, state.rng);
    for (std::size_t b = 0; b < order.size(); b += sz(config.batch_size)) {
      const std::size_t e = std::min(order.size(), b + sz(config.batch_size));
      std::vector<RlSample> samples;
      for (std::size_t k = b; k < e; ++k)
        samples.push_back(rl_sample(state.navigator, state.critic, data.world(order[k]->world_id()), *order[k],
                                    state.rng, config, reward));
      double baseline = 0.0;
      if (config.advantage_baseline) {
        double n = 0.0;
        for (const auto& s : samples)
          for (double a : s.rewards.advantages) baseline += a, n += 1.0;
        baseline /= n;
      }
      for (std::size_t k = b; k < e; ++k) {
        auto& s = samples[k - b];
        Vec w = s.rewards.advantages;
        for (double& a : w) a -= baseline;
        const auto g = policy_gradient(state.navigator, data.world(order[k]->world_id()), *order[k], s.trajectory, w);
        total += g.loss;
        accum.add_scaled(g.grads, 1.0);
      }
      apply_batch(state.navigator.params, accum, static_cast<int>(e - b), state.nav_opt, hyper);
    }
    const double loss = total / static_cast<double>(data.train.size());
    const auto ev = record_epoch("rl", epoch, loss, state.navigator, data, reward, config.max_path, history, on_epoch);
    if (stop.update(ev.seen_sr, state.navigator.params)) break;
  }
  state.navigator.params = stop.best_params;
  return history;
}

History train_sil(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                  SilMode mode, const EpochCallback& on_epoch) {
  const std::string phase = mode == SilMode::Train ? "sil-train" : "sil-unseen";
  const auto& source = mode == SilMode::Train ? data.train : data.unseen_val;
  if (source.empty()) throw std::invalid_argument("self-imitation split is empty");
  std::vector<EpisodeSpec> sealed;
  sealed.reserve(source.size());
  for (const auto& ep : source) sealed.push_back(ep.sealed() ? ep : ep.sealed_copy());

  start_phase(state, phase, config);
  const auto hyper = adam_hyper(config.lr_sil, config.weight_decay);
  History history;
  ReplayBuffer buffer;
  ParamSet accum = state.navigator.params.zeros_like();
  for (int epoch = 1; epoch <= config.epochs_sil; ++epoch) {
    double total = 0.0;
    int in_batch = 0;
    for (const auto* ep : shuffled(sealed, state.rng)) {
      const auto& world = data.world(ep->world_id());
      sil_collect(state.navigator, state.critic, world, *ep, config.sil_rollouts, config.max_path, state.rng, buffer,
                  reward.intrinsic_form);
      const auto g = sil_gradient(state.navigator, world, *ep, *buffer.find(ep->id()), config.sil_loss,
                                  draw_dropout(config.dropout, state.rng));
      total += g.loss;
      accum.add_scaled(g.grads, 1.0);
      if (++in_batch == config.batch_size) {
        apply_batch(state.navigator.params, accum, in_batch, state.nav_opt, hyper);
        in_batch = 0;
      }
    }
    apply_batch(state.navigator.params, accum, in_batch, state.nav_opt, hyper);
    const double loss = total / static_cast<double>(sealed.size());
    record_epoch(phase, epoch, loss, state.navigator, data, reward, config.max_path, history, on_epoch);
  }
  return history;
}

History train(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
              const SilMode* sil_mode, const EpochCallback& on_epoch) {
  History all;
  auto append = [&all](History h) { all.insert(all.end(), h.begin(), h.end()); };
  append(pretrain_critic(state, data, config, on_epoch));
  append(train_sl(state, data, config, reward, on_epoch));
  append(train_rl(state, data, config, reward, on_epoch));
  if (sil_mode) append(train_sil(state, data, config, reward, *sil_mode, on_epoch));
  return all;
}

}  // namespace crossnav
