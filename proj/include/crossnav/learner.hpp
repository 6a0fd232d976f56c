#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crossnav/critic.hpp"
#include "crossnav/evalmetrics.hpp"
#include "crossnav/mathcore.hpp"
#include "crossnav/navigator.hpp"
#include "crossnav/rng.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

struct RewardConfig {
  double gamma = 0.95;
  double delta = 2.0;      // intrinsic weight
  double d_success = 3.0;  // meters
  IntrinsicForm intrinsic_form = IntrinsicForm::GeometricMean;
  /// When false the final step is rewarded by distance reduction like the others.
  bool success_indicator = true;
  bool operator==(const RewardConfig&) const = default;
};

enum class SilLoss {
  Weighted,   // -R_intr * sum log pi(a_t | s_t)
  Imitation,  // -sum log pi(a_t | s_t)
};

enum class SilMode { Train, Unseen };

struct TrainConfig {
  double lr_sl = 1e-4;
  double lr_rl = 1e-5;
  double lr_sil = 1e-5;
  double lr_critic = 1e-4;
  double dropout = 0.5;
  double weight_decay = 0.0005;
  int sil_rollouts = 10;
  int max_path = 10;
  int max_instruction = 80;
  int epochs_critic = 20;
  int epochs_sl = 30;
  int epochs_rl = 10;
  int epochs_sil = 5;
  int batch_size = 1;
  int patience = 5;
  bool advantage_baseline = false;
  SilLoss sil_loss = SilLoss::Weighted;
  bool operator==(const TrainConfig&) const = default;
};

// ---- rewards --------------------------------------------------------------------------

/// Non-final: D(s_t) - D(s_next). Final: 1 if D(s_next) <= d else 0, where
/// s_next is where the agent rests after the last action.
double immediate_reward(const WorldGraph& world, int target, const AgentState& state, const AgentState& next,
                        bool is_final, double d_success, bool success_indicator = true);

/// R_t = r_t + gamma * R_{t+1}, R_T = r_T.
Vec discounted_returns(std::span<const double> immediate, double gamma);

/// A_t = R_t + delta * R_intr.
Vec advantages(std::span<const double> returns, double intrinsic, double delta);

struct RewardRecord {
  Vec immediate;
  Vec returns;
  double intrinsic = 0.0;
  Vec advantages;
};

/// States after each step of the trajectory (s_{t+1}); the last entry is the resting state.
std::vector<AgentState> next_states(const Trajectory& trajectory);

RewardRecord compute_rewards(const WorldGraph& world, const EpisodeSpec& episode, const Trajectory& trajectory,
                             const Critic& critic, const RewardConfig& config);

// ---- gradients and updates ---------------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  ParamSet grads;
};

AdamHyper adam_hyper(double lr, double weight_decay);

/// Teacher-forced negative log-likelihood of the demonstration actions.
LossGrad sl_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                     const DropoutPlan& dropout = {});

double sl_step(Navigator& nav, AdamState& opt, const WorldGraph& world, const EpisodeSpec& episode,
               const TrainConfig& config, Rng& rng);

struct RlSample {
  Trajectory trajectory;
  RewardRecord rewards;
  int success = 0;
};

/// Samples one rollout (training-mode dropout) and scores it.
RlSample rl_sample(const Navigator& nav, const Critic& critic, const WorldGraph& world, const EpisodeSpec& episode,
                   Rng& rng, const TrainConfig& config, const RewardConfig& reward);

/// Gradient of -sum_t weight_t log pi(a_t | s_t) for the sampled trajectory.
LossGrad policy_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                         const Trajectory& trajectory, std::span<const double> weights);

struct RlStats {
  double return0 = 0.0;
  double intrinsic = 0.0;
  int success = 0;
  double loss = 0.0;
};

RlStats rl_step(Navigator& nav, AdamState& opt, const Critic& critic, const WorldGraph& world,
                const EpisodeSpec& episode, Rng& rng, const TrainConfig& config, const RewardConfig& reward);

// ---- self-supervised imitation --------------------------------------------------------------

struct ReplayEntry {
  Trajectory trajectory;
  double reward = 0.0;
};

/// Best trajectory per episode id.
class ReplayBuffer {
 public:
  /// Stores the candidate when the episode is new or the reward is strictly higher.
  bool offer(int episode_id, const Trajectory& trajectory, double reward);
  const ReplayEntry* find(int episode_id) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<int, ReplayEntry>& entries() const { return entries_; }

 private:
  std::map<int, ReplayEntry> entries_;
};

struct SilCollection {
  std::vector<Trajectory> rollouts;
  std::vector<double> rewards;
  int best = 0;  // earliest index among maximal rewards
  bool replaced = false;
};

/// Samples K rollouts, scores each with the critic and offers the best to the buffer.
/// Reads only the instruction, start state and observations of the episode.
SilCollection sil_collect(const Navigator& nav, const Critic& critic, const WorldGraph& world,
                          const EpisodeSpec& episode, int rollouts, int max_steps, Rng& rng, ReplayBuffer& buffer,
                          IntrinsicForm form = IntrinsicForm::GeometricMean);

LossGrad sil_gradient(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                      const ReplayEntry& entry, SilLoss form, const DropoutPlan& dropout = {});

double sil_step(Navigator& nav, AdamState& opt, const WorldGraph& world, const EpisodeSpec& episode,
                const ReplayEntry& entry, const TrainConfig& config, Rng& rng);

// ---- orchestration ------------------------------------------------------------------------

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  std::string split;
  double pl = 0.0, ne = 0.0, osr = 0.0, sr = 0.0, spl = 0.0;
  double loss = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

using History = std::vector<EpochRecord>;

struct TrainerState {
  std::string phase = "init";
  Navigator navigator;
  Critic critic;
  AdamState nav_opt;
  AdamState critic_opt;
  Rng rng;
};

TrainerState init_trainer(const NavigatorConfig& nav_config, const CriticConfig& critic_config,
                          std::uint64_t seed);

/// Model configs derived from a dataset's dimensions.
NavigatorConfig navigator_config_for(const Dataset& data, const NavigatorConfig& base);
CriticConfig critic_config_for(const Dataset& data, const CriticConfig& base);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Greedy rollouts on every episode. Results are stored by episode index, so the
/// report does not depend on the worker count.
MetricsReport evaluate_split(const Navigator& nav, const Dataset& data, std::span<const EpisodeSpec> episodes,
                             const RewardConfig& reward, int max_path, int workers = 1);

double critic_loss(const Critic& critic, const Dataset& data, std::span<const EpisodeSpec> episodes);

History pretrain_critic(TrainerState& state, const Dataset& data, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});
History train_sl(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                 const EpochCallback& on_epoch = {});
History train_rl(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                 const EpochCallback& on_epoch = {});
/// SIL over the train split (efficiency) or the unseen split (exploration).
/// The learner only sees sealed copies of the chosen split.
History train_sil(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
                  SilMode mode, const EpochCallback& on_epoch = {});

/// All phases in order: critic, SL, RL, then SIL when sil_mode is set.
History train(TrainerState& state, const Dataset& data, const TrainConfig& config, const RewardConfig& reward,
              const SilMode* sil_mode = nullptr, const EpochCallback& on_epoch = {});

}  // namespace crossnav
