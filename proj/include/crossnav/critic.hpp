#pragma once

#include <cstdint>
#include <vector>

#include "crossnav/mathcore.hpp"
#include "crossnav/navigator.hpp"
#include "crossnav/worldsim.hpp"

namespace crossnav {

/// Trajectory-to-instruction sequence model. Reference sizes: embedding 300,
/// hidden 512, decoder attention 512.
struct CriticConfig {
  int vocab_size = 21;
  int feature_dim = 32;
  int orientation_dim = 16;
  int embed_dim = 32;
  int hidden_dim = 64;
  int action_embed_dim = 32;
  int attn_panoramic = 32;
  int attn_decoder = 64;
  int head_dim = 64;

  int action_dim() const { return feature_dim + orientation_dim; }
  bool operator==(const CriticConfig&) const = default;
};

struct Critic {
  CriticConfig config;
  ParamSet params;
};

Critic make_critic(const CriticConfig& config, std::uint64_t seed);
Critic make_zero_critic(const CriticConfig& config);

/// How per-token log-probabilities are reduced to the trajectory reward.
enum class IntrinsicForm {
  GeometricMean,  // exp(mean log p), in (0, 1]
  MeanLogProb,    // mean log p, <= 0
};

struct IntrinsicReward {
  double value = 0.0;
  Vec per_token_logprobs;
};

/// Per-step encoder states for a trajectory observed in world.
std::vector<Vec> encode_trajectory(const Critic& critic, const WorldGraph& world, const Trajectory& trajectory);

/// Teacher-forced log p(x_i | x_<i, trajectory) for each instruction token.
Vec instruction_logprob(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                        const Trajectory& trajectory);

IntrinsicReward intrinsic_reward(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                                 const Trajectory& trajectory,
                                 IntrinsicForm form = IntrinsicForm::GeometricMean);

/// Reduction used by intrinsic_reward, exposed for tests that manipulate log-probabilities.
double reduce_intrinsic(std::span<const double> per_token_logprobs, IntrinsicForm form);

struct CriticLoss {
  double loss = 0.0;  // -(1/n) sum_i log p_i
  ParamSet grads;
};

CriticLoss critic_mle_gradients(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                                const Trajectory& trajectory);

}  // namespace crossnav
