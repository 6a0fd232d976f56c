#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossnav/mathcore.hpp"

namespace crossnav {

struct InvalidActionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct OffPathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Raised when code reads the target or demonstration of a sealed episode.
struct AccessGuardError : std::logic_error {
  using std::logic_error::logic_error;
};

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Wraps an angle into [0, 2pi).
double wrap_angle(double radians);

struct WorldConfig {
  int n_viewpoints = 40;
  double mean_degree = 4.0;
  int feature_dim = 32;
  int patch_count = 8;  // m heading sectors
  int landmark_vocab = 16;
  double noise_sigma = 0.1;
  int tile_factor = 4;
  double spacing = 5.0;        // mean distance scale between viewpoints, meters
  double style_sigma = 0.0;    // per-world perturbation of landmark appearance
  std::uint64_t landmark_seed = 20190101;

  bool operator==(const WorldConfig&) const = default;
};

/// Landmark appearance codes shared by every world of a dataset.
struct LandmarkTable {
  Tensor embeddings;  // [landmark_vocab, feature_dim]

  static LandmarkTable generate(const WorldConfig& config);
  int vocab() const { return static_cast<int>(embeddings.rows()); }
  int feature_dim() const { return static_cast<int>(embeddings.cols()); }
  bool operator==(const LandmarkTable&) const = default;
};

struct Viewpoint {
  int id = 0;
  std::array<double, 3> position{};
  int landmark_id = 0;
  bool operator==(const Viewpoint&) const = default;
};

struct Edge {
  int a = 0;
  int b = 0;
  double length = 0.0;
  bool operator==(const Edge&) const = default;
};

class WorldGraph {
 public:
  WorldGraph() = default;
  /// Validates connectivity and edge lengths, builds adjacency and distances.
  WorldGraph(int id, std::uint64_t seed, std::vector<Viewpoint> viewpoints, std::vector<Edge> edges,
             std::shared_ptr<const LandmarkTable> landmarks, Tensor style, const WorldConfig& config);

  int id() const { return id_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Viewpoint>& viewpoints() const { return viewpoints_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& neighbors(int viewpoint) const;
  int size() const { return static_cast<int>(viewpoints_.size()); }
  bool has_viewpoint(int v) const { return v >= 0 && v < size(); }
  const WorldConfig& config() const { return config_; }
  const LandmarkTable& landmarks() const { return *landmarks_; }
  std::shared_ptr<const LandmarkTable> landmarks_ptr() const { return landmarks_; }
  const Tensor& style() const { return style_; }

  double edge_length(int a, int b) const;
  /// Absolute bearing of travel a -> b, radians in [0, 2pi).
  double bearing(int from, int to) const;
  /// Landmark appearance of viewpoint v in this world (shared code + world style).
  Vec appearance(int v) const;
  double distance(int a, int b) const;
  int orientation_dim() const { return 4 * config_.tile_factor; }

 private:
  int id_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Viewpoint> viewpoints_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<double> distances_;
  std::shared_ptr<const LandmarkTable> landmarks_;
  Tensor style_;  // [landmark_vocab, feature_dim]
  WorldConfig config_;
};

struct AgentState {
  int viewpoint = 0;
  double heading = 0.0;
  double elevation = 0.0;
  bool operator==(const AgentState&) const = default;
};

struct ActionCandidate {
  enum class Kind { Move, Stop };
  Kind kind = Kind::Stop;
  int target = -1;  // MOVE target viewpoint
  Vec appearance;   // empty for STOP (learned embedding substituted by models)
  Vec orientation;  // empty for STOP
  bool is_stop() const { return kind == Kind::Stop; }
};

struct PanoramicObservation {
  std::vector<Vec> patches;
  std::vector<ActionCandidate> candidates;  // MOVE sorted by target id, STOP last
  int stop_index() const { return static_cast<int>(candidates.size()) - 1; }
};

struct Instruction {
  std::vector<int> tokens;
  bool operator==(const Instruction&) const = default;
};

/// Instruction vocabulary: four direction words, "stop-at", then one token per landmark.
struct Vocabulary {
  static constexpr int kForward = 0;
  static constexpr int kLeft = 1;
  static constexpr int kRight = 2;
  static constexpr int kBack = 3;
  static constexpr int kStopAt = 4;
  static constexpr int kFirstLandmark = 5;
  static int size(int landmark_vocab) { return kFirstLandmark + landmark_vocab; }
  static int landmark_token(int landmark_id) { return kFirstLandmark + landmark_id; }
  static std::string word(int token);
};

class EpisodeSpec {
 public:
  EpisodeSpec() = default;
  EpisodeSpec(int id, int world_id, Instruction instruction, AgentState start, int target,
              std::vector<int> demonstration, std::uint64_t noise_seed);

  int id() const { return id_; }
  int world_id() const { return world_id_; }
  const Instruction& instruction() const { return instruction_; }
  const AgentState& start() const { return start_; }
  std::uint64_t noise_seed() const { return noise_seed_; }

  /// Guarded accessors: throw AccessGuardError on sealed episodes.
  int target() const;
  const std::vector<int>& demonstration() const;

  bool sealed() const { return sealed_; }
  bool has_supervision() const { return !sealed_ && target_ >= 0; }
  /// Copy that forbids reading target and demonstration.
  EpisodeSpec sealed_copy() const;
  /// Copy with target and demonstration removed entirely.
  EpisodeSpec stripped_copy() const;

  bool operator==(const EpisodeSpec&) const = default;

 private:
  int id_ = 0;
  int world_id_ = 0;
  Instruction instruction_;
  AgentState start_;
  int target_ = -1;
  std::vector<int> demonstration_;
  std::uint64_t noise_seed_ = 0;
  bool sealed_ = false;
};

struct EpisodeConfig {
  int min_hops = 2;
  int max_hops = 5;
  double d_success = 3.0;
  int max_instruction_length = 80;
  int max_path_length = 10;
  bool operator==(const EpisodeConfig&) const = default;
};

struct SplitConfig {
  WorldConfig world;
  EpisodeConfig episode;
  int train_worlds = 20;
  int unseen_worlds = 5;
  int train_episodes = 500;
  int seen_val_episodes = 100;
  int unseen_val_episodes = 100;
  bool operator==(const SplitConfig&) const = default;
};

struct Dataset {
  std::shared_ptr<const LandmarkTable> landmarks;
  std::vector<WorldGraph> worlds;
  std::vector<EpisodeSpec> train;
  std::vector<EpisodeSpec> seen_val;
  std::vector<EpisodeSpec> unseen_val;

  const WorldGraph& world(int id) const;
  int vocab_size() const { return Vocabulary::size(landmarks->vocab()); }
};

// ---- operations ---------------------------------------------------------------------------

WorldGraph generate_world(const WorldConfig& config, std::uint64_t seed, int world_id = 0,
                          std::shared_ptr<const LandmarkTable> landmarks = nullptr);

PanoramicObservation observe(const WorldGraph& world, const AgentState& state, std::uint64_t seed);

AgentState transition(const WorldGraph& world, const AgentState& state, const ActionCandidate& action);

double geodesic_distance(const WorldGraph& world, int from, int to);

/// Shortest path from -> to with ties broken towards the smaller next viewpoint id.
std::vector<int> shortest_path(const WorldGraph& world, int from, int to);

EpisodeSpec generate_episode(const WorldGraph& world, std::uint64_t seed, const EpisodeConfig& config,
                             int episode_id = 0);

/// Candidate index leading along the demonstration, or the STOP index at the target.
int demonstration_action(const WorldGraph& world, const EpisodeSpec& episode, const AgentState& state);

Dataset generate_split(const SplitConfig& config, std::uint64_t seed);

/// Quantized relative direction word for a relative bearing.
int direction_token(double relative_bearing);

}  // namespace crossnav
