#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crossnav/mathcore.hpp"
#include "crossnav/rng.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

enum class Mode { Eval, Train };
enum class RolloutMode { Greedy, Sample };

/// Dimensions of the reasoning navigator. Defaults are the desk-scale sizes;
/// the reference sizes are hidden 512, word embedding 300, attention inner
/// dims 256/512/256, feature 2048, orientation 128.
struct NavigatorConfig {
  int vocab_size = 21;
  int feature_dim = 32;
  int orientation_dim = 16;
  int embed_dim = 32;
  int hidden_dim = 64;
  int action_embed_dim = 32;
  int attn_panoramic = 32;
  int attn_textual = 64;
  int attn_visual = 32;
  int predictor_dim = 32;
  double dropout = 0.5;

  int action_dim() const { return feature_dim + orientation_dim; }
  bool operator==(const NavigatorConfig&) const = default;
};

struct Navigator {
  NavigatorConfig config;
  ParamSet params;
};

/// Glorot-uniform matrices, zero biases, forget-gate bias 1.
Navigator make_navigator(const NavigatorConfig& config, std::uint64_t seed);
/// Every parameter zero.
Navigator make_zero_navigator(const NavigatorConfig& config);

struct EncodedInstruction {
  std::vector<Vec> features;
};

struct NavigatorStepOutput {
  Vec h;
  Vec c;
  Vec c_text;
  Vec c_visual;
  Vec action_probs;
  Vec panoramic_weights;
  Vec textual_weights;
  Vec visual_weights;
};

/// Dropout configuration for one forward pass; rate 0 disables it.
struct DropoutPlan {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

EncodedInstruction encode_instruction(const Navigator& nav, const Instruction& instruction,
                                      const DropoutPlan& dropout = {});

/// Candidate action vector u_k = [appearance; orientation]; STOP uses the learned embeddings.
Vec action_vector(const Navigator& nav, const ActionCandidate& candidate);
/// Vector of the initial "previous action" (the STOP embedding).
Vec initial_action_vector(const Navigator& nav);

/// One step of the policy. prev_action is the raw vector of the previously
/// chosen candidate (see action_vector); it is projected inside the step.
NavigatorStepOutput navigator_step(const Navigator& nav, const LstmState& previous,
                                   std::span<const double> prev_action,
                                   const PanoramicObservation& observation,
                                   const EncodedInstruction& encoded, const DropoutPlan& dropout = {},
                                   int step_index = 0);

struct TrajectoryStep {
  AgentState state;
  int action = 0;
  double log_prob = 0.0;
  std::vector<int> candidate_targets;  // -1 marks STOP
  bool operator==(const TrajectoryStep&) const = default;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  AgentState end_state;
  bool stopped = false;
  std::uint64_t observation_seed = 0;  // episode noise seed the steps were observed under
  DropoutPlan dropout;

  std::size_t length() const { return steps.size(); }
  /// Viewpoints in visiting order, including the final position.
  std::vector<int> visited() const;
  double total_log_prob() const;
  bool operator==(const Trajectory& other) const;
};

Trajectory rollout(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                   RolloutMode mode, Rng& rng, int max_steps, Mode dropout_mode = Mode::Eval);

/// Demonstration path as a trajectory (actions along the path, then STOP);
/// log-probabilities are left at zero.
Trajectory demonstration_trajectory(const WorldGraph& world, const EpisodeSpec& episode);

struct LogProbGradient {
  double objective = 0.0;  // sum_t weight_t * log pi(a_t | s_t)
  Vec log_probs;
  ParamSet grads;
};

/// Replays the trajectory (states and actions forced) under nav and returns
/// the gradient of sum_t weight_t * log pi(a_t | s_t).
LogProbGradient trajectory_logprob_backward(const Navigator& nav, const WorldGraph& world,
                                            const EpisodeSpec& episode, const Trajectory& trajectory,
                                            std::span<const double> per_step_weights);

/// Forward-only replay of per-step log-probabilities.
Vec replay_log_probs(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                     const Trajectory& trajectory);

struct TrajectoryIntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace crossnav
