#include "crossnav/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

#include "crossnav/rng.hpp"

namespace crossnav {

namespace {

constexpr double kPi = kTwoPi / 2.0;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTieTolerance = 1e-9;

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    return true;
  }
};

double euclid(const Viewpoint& a, const Viewpoint& b) {
  const double dx = a.position[0] - b.position[0];
  const double dy = a.position[1] - b.position[1];
  const double dz = a.position[2] - b.position[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<double> dijkstra(const std::vector<std::vector<int>>& adjacency,
                             const std::vector<Viewpoint>& vps, int source) {
  std::vector<double> dist(vps.size(), kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[static_cast<std::size_t>(source)] = 0.0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[static_cast<std::size_t>(v)]) continue;
    for (int u : adjacency[static_cast<std::size_t>(v)]) {
      const double nd = d + euclid(vps[static_cast<std::size_t>(v)], vps[static_cast<std::size_t>(u)]);
      if (nd < dist[static_cast<std::size_t>(u)]) {
        dist[static_cast<std::size_t>(u)] = nd;
        queue.emplace(nd, u);
      }
    }
  }
  return dist;
}

}  // namespace

double wrap_angle(double radians) {
  double r = std::fmod(radians, kTwoPi);
  if (r < 0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

int direction_token(double relative_bearing) {
  const double r = wrap_angle(relative_bearing);
  if (r < kPi / 4 || r >= 7 * kPi / 4) return Vocabulary::kForward;
  if (r < 3 * kPi / 4) return Vocabulary::kLeft;
  if (r < 5 * kPi / 4) return Vocabulary::kBack;
  return Vocabulary::kRight;
}

std::string Vocabulary::word(int token) {
  switch (token) {
    case kForward: return "forward";
    case kLeft: return "left";
    case kRight: return "right";
    case kBack: return "back";
    case kStopAt: return "stop-at";
    default: return "landmark-" + std::to_string(token - kFirstLandmark);
  }
}

// ---- LandmarkTable -----------------------------------------------------------------

LandmarkTable LandmarkTable::generate(const WorldConfig& config) {
  if (config.landmark_vocab < 1 || config.feature_dim < 1)
    throw GenerationError("landmark vocabulary and feature dimension must be positive");
  auto rng = make_rng(config.landmark_seed, 0x4c414e44);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t({static_cast<std::size_t>(config.landmark_vocab), static_cast<std::size_t>(config.feature_dim)});
  for (auto& v : t.values()) v = normal(rng);
  return LandmarkTable{std::move(t)};
}

// ---- WorldGraph ----------------------------------------------------------------------

WorldGraph::WorldGraph(int id, std::uint64_t seed, std::vector<Viewpoint> viewpoints,
                       std::vector<Edge> edges, std::shared_ptr<const LandmarkTable> landmarks,
                       Tensor style, const WorldConfig& config)
    : id_(id),
      seed_(seed),
      viewpoints_(std::move(viewpoints)),
      edges_(std::move(edges)),
      landmarks_(std::move(landmarks)),
      style_(std::move(style)),
      config_(config) {
  const int n = size();
  if (n < 1) throw GenerationError("world has no viewpoints");
  if (!landmarks_) throw GenerationError("world has no landmark table");
  if (style_.shape() != landmarks_->embeddings.shape())
    throw ShapeError("world style does not match landmark table");
  for (int i = 0; i < n; ++i) {
    const auto& vp = viewpoints_[static_cast<std::size_t>(i)];
    if (vp.id != i) throw GenerationError("viewpoint ids must be 0..n-1 in order");
    if (vp.landmark_id < 0 || vp.landmark_id >= landmarks_->vocab())
      throw GenerationError("landmark id out of range");
  }
  adjacency_.assign(static_cast<std::size_t>(n), {});
  for (const auto& e : edges_) {
    if (!has_viewpoint(e.a) || !has_viewpoint(e.b) || e.a == e.b)
      throw GenerationError("edge references invalid viewpoints");
    if (!(e.length > 0)) throw GenerationError("edge length must be positive");
    adjacency_[static_cast<std::size_t>(e.a)].push_back(e.b);
    adjacency_[static_cast<std::size_t>(e.b)].push_back(e.a);
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end());
    if (std::adjacent_find(adj.begin(), adj.end()) != adj.end())
      throw GenerationError("duplicate edge");
  }
  distances_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), kInf);
  for (int s = 0; s < n; ++s) {
    auto d = dijkstra(adjacency_, viewpoints_, s);
    std::copy(d.begin(), d.end(), distances_.begin() + static_cast<std::ptrdiff_t>(s) * n);
  }
  for (int v = 0; v < n; ++v)
    if (!std::isfinite(distance(0, v))) throw GenerationError("world graph is not connected");
}

const std::vector<int>& WorldGraph::neighbors(int viewpoint) const {
  if (!has_viewpoint(viewpoint)) throw std::out_of_range("unknown viewpoint " + std::to_string(viewpoint));
  return adjacency_[static_cast<std::size_t>(viewpoint)];
}

double WorldGraph::edge_length(int a, int b) const {
  return euclid(viewpoints_.at(static_cast<std::size_t>(a)), viewpoints_.at(static_cast<std::size_t>(b)));
}

double WorldGraph::bearing(int from, int to) const {
  const auto& a = viewpoints_.at(static_cast<std::size_t>(from)).position;
  const auto& b = viewpoints_.at(static_cast<std::size_t>(to)).position;
  return wrap_angle(std::atan2(b[1] - a[1], b[0] - a[0]));
}

Vec WorldGraph::appearance(int v) const {
  const int lm = viewpoints_.at(static_cast<std::size_t>(v)).landmark_id;
  const auto code = landmarks_->embeddings.row(static_cast<std::size_t>(lm));
  const auto shift = style_.row(static_cast<std::size_t>(lm));
  Vec out(code.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = code[i] + shift[i];
  return out;
}

double WorldGraph::distance(int a, int b) const {
  if (!has_viewpoint(a) || !has_viewpoint(b)) throw std::out_of_range("unknown viewpoint");
  return distances_[static_cast<std::size_t>(a) * static_cast<std::size_t>(size()) + static_cast<std::size_t>(b)];
}

// ---- EpisodeSpec -------------------------------------------------------------------------

EpisodeSpec::EpisodeSpec(int id, int world_id, Instruction instruction, AgentState start, int target,
                         std::vector<int> demonstration, std::uint64_t noise_seed)
    : id_(id),
      world_id_(world_id),
      instruction_(std::move(instruction)),
      start_(start),
      target_(target),
      demonstration_(std::move(demonstration)),
      noise_seed_(noise_seed) {}

int EpisodeSpec::target() const {
  if (sealed_) throw AccessGuardError("target of sealed episode " + std::to_string(id_) + " was read");
  if (target_ < 0) throw AccessGuardError("episode " + std::to_string(id_) + " has no target");
  return target_;
}

const std::vector<int>& EpisodeSpec::demonstration() const {
  if (sealed_)
    throw AccessGuardError("demonstration of sealed episode " + std::to_string(id_) + " was read");
  if (target_ < 0) throw AccessGuardError("episode " + std::to_string(id_) + " has no demonstration");
  return demonstration_;
}

EpisodeSpec EpisodeSpec::sealed_copy() const {
  EpisodeSpec e = *this;
  e.sealed_ = true;
  return e;
}

EpisodeSpec EpisodeSpec::stripped_copy() const {
  EpisodeSpec e = *this;
  e.target_ = -1;
  e.demonstration_.clear();
  return e;
}

const WorldGraph& Dataset::world(int id) const {
  for (const auto& w : worlds)
    if (w.id() == id) return w;
  throw std::out_of_range("unknown world id " + std::to_string(id));
}

// ---- generation ----------------------------------------------------------------------------

WorldGraph generate_world(const WorldConfig& config, std::uint64_t seed, int world_id,
                          std::shared_ptr<const LandmarkTable> landmarks) {
  const int n = config.n_viewpoints;
  if (n < 2) throw GenerationError("n_viewpoints must be at least 2");
  if (config.mean_degree >= n || config.mean_degree <= 0)
    throw GenerationError("mean_degree must lie in (0, n_viewpoints)");
  if (config.patch_count < 1 || config.tile_factor < 1 || config.spacing <= 0 || config.noise_sigma < 0 ||
      config.style_sigma < 0)
    throw GenerationError("invalid world configuration");
  if (!landmarks) landmarks = std::make_shared<const LandmarkTable>(LandmarkTable::generate(config));
  if (landmarks->vocab() != config.landmark_vocab || landmarks->feature_dim() != config.feature_dim)
    throw GenerationError("landmark table does not match configuration");

  auto rng = make_rng(seed, 0x574f524c);
  const double side = config.spacing * std::sqrt(static_cast<double>(n));
  const double min_sep = 0.7 * config.spacing;
  std::uniform_real_distribution<double> coord(0.0, side);
  std::uniform_int_distribution<int> landmark(0, config.landmark_vocab - 1);

  std::vector<Viewpoint> vps;
  vps.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Viewpoint vp{i, {0.0, 0.0, 0.0}, 0};
    for (int attempt = 0; attempt < 200; ++attempt) {
      vp.position = {coord(rng), coord(rng), 0.0};
      bool ok = true;
      for (const auto& other : vps)
        if (euclid(vp, other) < min_sep) {
          ok = false;
          break;
        }
      if (ok) break;
    }
    vp.landmark_id = landmark(rng);
    vps.push_back(vp);
  }

  const double radius =
      side * std::sqrt(config.mean_degree / (static_cast<double>(n - 1) * (kTwoPi / 2.0)));
  struct Pair {
    double length;
    int a, b;
  };
  std::vector<Pair> pairs;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      const double len = euclid(vps[static_cast<std::size_t>(a)], vps[static_cast<std::size_t>(b)]);
      if (len > 0) pairs.push_back({len, a, b});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.length != y.length) return x.length < y.length;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  std::vector<Edge> edges;
  DisjointSet components(n);
  for (const auto& p : pairs) {
    if (p.length <= radius) {
      edges.push_back({p.a, p.b, p.length});
      components.unite(p.a, p.b);
    }
  }
  // Connect the remaining components with minimum-spanning edges.
  for (const auto& p : pairs) {
    if (p.length > radius && components.unite(p.a, p.b)) edges.push_back({p.a, p.b, p.length});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });

  Tensor style(landmarks->embeddings.shape());
  if (config.style_sigma > 0) {
    std::normal_distribution<double> normal(0.0, config.style_sigma);
    for (auto& v : style.values()) v = normal(rng);
  }
  return WorldGraph(world_id, seed, std::move(vps), std::move(edges), std::move(landmarks), std::move(style),
                    config);
}

PanoramicObservation observe(const WorldGraph& world, const AgentState& state, std::uint64_t seed) {
  if (!world.has_viewpoint(state.viewpoint))
    throw std::out_of_range("state references unknown viewpoint " + std::to_string(state.viewpoint));
  const auto& cfg = world.config();
  const int m = cfg.patch_count;
  const std::size_t fdim = static_cast<std::size_t>(cfg.feature_dim);
  const double sector = kTwoPi / m;

  PanoramicObservation obs;
  obs.patches.assign(static_cast<std::size_t>(m), Vec(fdim, 0.0));
  std::vector<int> owner(static_cast<std::size_t>(m), -1);
  std::vector<double> owner_dist(static_cast<std::size_t>(m), kInf);

  const auto& nbrs = world.neighbors(state.viewpoint);
  std::vector<int> covering(nbrs.size());
  std::vector<double> relative(nbrs.size());
  for (std::size_t k = 0; k < nbrs.size(); ++k) {
    relative[k] = wrap_angle(world.bearing(state.viewpoint, nbrs[k]) - state.heading);
    const int j = std::min(m - 1, static_cast<int>(std::floor(relative[k] / sector)));
    covering[k] = j;
    const double len = world.edge_length(state.viewpoint, nbrs[k]);
    // nbrs is sorted, so strict comparison keeps the lower id on ties.
    if (len < owner_dist[static_cast<std::size_t>(j)]) {
      owner_dist[static_cast<std::size_t>(j)] = len;
      owner[static_cast<std::size_t>(j)] = nbrs[k];
    }
  }
  for (int j = 0; j < m; ++j)
    if (owner[static_cast<std::size_t>(j)] >= 0)
      obs.patches[static_cast<std::size_t>(j)] = world.appearance(owner[static_cast<std::size_t>(j)]);

  if (cfg.noise_sigma > 0) {
    auto rng = make_rng(world.seed(), static_cast<std::uint64_t>(state.viewpoint), seed);
    std::normal_distribution<double> normal(0.0, cfg.noise_sigma);
    for (auto& patch : obs.patches)
      for (auto& v : patch) v += normal(rng);
  }

  for (std::size_t k = 0; k < nbrs.size(); ++k) {
    ActionCandidate c;
    c.kind = ActionCandidate::Kind::Move;
    c.target = nbrs[k];
    c.appearance = obs.patches[static_cast<std::size_t>(covering[k])];
    const double psi = relative[k];
    const double omega = 0.0;
    const std::array<double, 4> base{std::sin(psi), std::cos(psi), std::sin(omega), std::cos(omega)};
    c.orientation.reserve(static_cast<std::size_t>(4 * cfg.tile_factor));
    for (int t = 0; t < cfg.tile_factor; ++t) c.orientation.insert(c.orientation.end(), base.begin(), base.end());
    obs.candidates.push_back(std::move(c));
  }
  obs.candidates.push_back(ActionCandidate{});
  return obs;
}

AgentState transition(const WorldGraph& world, const AgentState& state, const ActionCandidate& action) {
  if (!world.has_viewpoint(state.viewpoint)) throw std::out_of_range("state references unknown viewpoint");
  if (action.is_stop()) return state;
  const auto& nbrs = world.neighbors(state.viewpoint);
  if (!std::binary_search(nbrs.begin(), nbrs.end(), action.target))
    throw InvalidActionError("viewpoint " + std::to_string(action.target) + " is not a neighbor of " +
                             std::to_string(state.viewpoint));
  return AgentState{action.target, world.bearing(state.viewpoint, action.target), state.elevation};
}

double geodesic_distance(const WorldGraph& world, int from, int to) {
  const double d = world.distance(from, to);
  if (!std::isfinite(d)) throw std::runtime_error("viewpoints are not connected");
  return d;
}

std::vector<int> shortest_path(const WorldGraph& world, int from, int to) {
  std::vector<int> path{from};
  int v = from;
  while (v != to) {
    const double remaining = world.distance(v, to);
    int next = -1;
    for (int u : world.neighbors(v)) {  // ascending ids
      if (std::abs(world.edge_length(v, u) + world.distance(u, to) - remaining) <= kTieTolerance) {
        next = u;
        break;
      }
    }
    if (next < 0) throw std::runtime_error("shortest path reconstruction failed");
    path.push_back(next);
    v = next;
  }
  return path;
}

EpisodeSpec generate_episode(const WorldGraph& world, std::uint64_t seed, const EpisodeConfig& config,
                             int episode_id) {
  if (config.min_hops < 1 || config.max_hops < config.min_hops)
    throw GenerationError("invalid hop range");
  const int n = world.size();
  std::vector<std::pair<int, int>> valid;
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < n; ++t) {
      if (s == t || world.distance(s, t) <= config.d_success) continue;
      const int hops = static_cast<int>(shortest_path(world, s, t).size()) - 1;
      if (hops >= config.min_hops && hops <= config.max_hops && hops + 1 <= config.max_path_length)
        valid.emplace_back(s, t);
    }
  if (valid.empty()) throw GenerationError("no viewpoint pair satisfies the hop range");

  auto rng = make_rng(seed, 0x45504953);
  std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
  const auto [start_vp, target] = valid[pick(rng)];
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  const double heading = wrap_angle(angle(rng));
  const std::uint64_t noise_seed = rng();

  auto path = shortest_path(world, start_vp, target);
  Instruction instr;
  double current = heading;
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const double b = world.bearing(path[k], path[k + 1]);
    instr.tokens.push_back(direction_token(b - current));
    instr.tokens.push_back(Vocabulary::landmark_token(world.viewpoints()[static_cast<std::size_t>(path[k + 1])].landmark_id));
    current = b;
  }
  instr.tokens.push_back(Vocabulary::kStopAt);
  instr.tokens.push_back(Vocabulary::landmark_token(world.viewpoints()[static_cast<std::size_t>(target)].landmark_id));
  if (static_cast<int>(instr.tokens.size()) > config.max_instruction_length)
    instr.tokens.resize(static_cast<std::size_t>(config.max_instruction_length));

  return EpisodeSpec(episode_id, world.id(), std::move(instr), AgentState{start_vp, heading, 0.0}, target,
                     std::move(path), noise_seed);
}

int demonstration_action(const WorldGraph& world, const EpisodeSpec& episode, const AgentState& state) {
  const auto& demo = episode.demonstration();
  auto it = std::find(demo.begin(), demo.end(), state.viewpoint);
  if (it == demo.end())
    throw OffPathError("viewpoint " + std::to_string(state.viewpoint) + " is off the demonstration path");
  const auto& nbrs = world.neighbors(state.viewpoint);
  if (std::next(it) == demo.end()) return static_cast<int>(nbrs.size());
  auto pos = std::lower_bound(nbrs.begin(), nbrs.end(), *std::next(it));
  return static_cast<int>(pos - nbrs.begin());
}

Dataset generate_split(const SplitConfig& config, std::uint64_t seed) {
  if (config.train_worlds < 1 || config.unseen_worlds < 1 || config.train_episodes < 1 ||
      config.seen_val_episodes < 1 || config.unseen_val_episodes < 1)
    throw GenerationError("split counts must be at least 1");
  Dataset ds;
  ds.landmarks = std::make_shared<const LandmarkTable>(LandmarkTable::generate(config.world));
  // World seeds and episode seeds are offset from a common base by their
  // (distinct) ids, so every split gets disjoint seeds.
  const std::uint64_t world_base = seed * 0x9E3779B97F4A7C15ULL;
  const std::uint64_t episode_base = world_base + 0x100000000ULL;
  const int total_worlds = config.train_worlds + config.unseen_worlds;
  for (int w = 0; w < total_worlds; ++w)
    ds.worlds.push_back(generate_world(config.world, world_base + static_cast<std::uint64_t>(w), w, ds.landmarks));

  int next_id = 0;
  auto make = [&](std::vector<EpisodeSpec>& out, int count, int first_world, int n_worlds) {
    for (int i = 0; i < count; ++i) {
      const int id = next_id++;
      const auto& world = ds.worlds[static_cast<std::size_t>(first_world + i % n_worlds)];
      out.push_back(generate_episode(world, episode_base + static_cast<std::uint64_t>(id), config.episode, id));
    }
  };
  make(ds.train, config.train_episodes, 0, config.train_worlds);
  make(ds.seen_val, config.seen_val_episodes, 0, config.train_worlds);
  make(ds.unseen_val, config.unseen_val_episodes, config.train_worlds, config.unseen_worlds);
  return ds;
}

}  // namespace crossnav
