#include "crossnav/navigator.hpp"

#include <algorithm>
#include <cmath>

namespace crossnav {

namespace {

using Shape = std::vector<std::size_t>;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// Dropout sites; combined with the step index to key the mask.
constexpr std::uint64_t kSiteEncoder = 1;
constexpr std::uint64_t kSiteHistory = 2;
constexpr std::uint64_t kSiteText = 3;
constexpr std::uint64_t kSiteVisual = 4;

template <typename PS>
auto bind(PS& p) {
  struct Bound {
    decltype(p.at("")) embedding, lang_w, lang_b, traj_w, traj_b, pano_q, pano_k, text_q, text_k, vis_q,
        vis_k, act_w, act_b, pred_ctx, pred_act, stop_app, stop_ori;
  };
  return Bound{p.at("nav.word_embedding"),    p.at("nav.lang_lstm.weight"),  p.at("nav.lang_lstm.bias"),
               p.at("nav.traj_lstm.weight"),  p.at("nav.traj_lstm.bias"),    p.at("nav.pano_attn.query"),
               p.at("nav.pano_attn.key"),     p.at("nav.text_attn.query"),   p.at("nav.text_attn.key"),
               p.at("nav.visual_attn.query"), p.at("nav.visual_attn.key"),   p.at("nav.action_proj.weight"),
               p.at("nav.action_proj.bias"),  p.at("nav.predictor.context"), p.at("nav.predictor.action"),
               p.at("nav.stop.appearance"),   p.at("nav.stop.orientation")};
}

std::vector<std::pair<std::string, Shape>> layout(const NavigatorConfig& c) {
  const auto V = sz(c.vocab_size), E = sz(c.embed_dim), H = sz(c.hidden_dim), F = sz(c.feature_dim),
             O = sz(c.orientation_dim), A = sz(c.action_embed_dim), U = sz(c.action_dim()),
             P = sz(c.predictor_dim);
  return {
      {"nav.word_embedding", {V, E}},
      {"nav.lang_lstm.weight", {E + H, 4 * H}},
      {"nav.lang_lstm.bias", {4 * H}},
      {"nav.traj_lstm.weight", {F + A + H, 4 * H}},
      {"nav.traj_lstm.bias", {4 * H}},
      {"nav.pano_attn.query", {H, sz(c.attn_panoramic)}},
      {"nav.pano_attn.key", {F, sz(c.attn_panoramic)}},
      {"nav.text_attn.query", {H, sz(c.attn_textual)}},
      {"nav.text_attn.key", {H, sz(c.attn_textual)}},
      {"nav.visual_attn.query", {H, sz(c.attn_visual)}},
      {"nav.visual_attn.key", {F, sz(c.attn_visual)}},
      {"nav.action_proj.weight", {U, A}},
      {"nav.action_proj.bias", {A}},
      {"nav.predictor.context", {2 * H + F, P}},
      {"nav.predictor.action", {U, P}},
      {"nav.stop.appearance", {F}},
      {"nav.stop.orientation", {O}},
  };
}

void check_config(const NavigatorConfig& c) {
  if (c.vocab_size < 1 || c.feature_dim < 1 || c.orientation_dim < 1 || c.embed_dim < 1 || c.hidden_dim < 1 ||
      c.action_embed_dim < 1 || c.attn_panoramic < 1 || c.attn_textual < 1 || c.attn_visual < 1 ||
      c.predictor_dim < 1)
    throw ShapeError("navigator dimensions must be positive");
  if (c.dropout < 0 || c.dropout >= 1) throw std::invalid_argument("dropout rate must lie in [0, 1)");
}

void apply_mask(Vec& v, const Vec& mask) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
}

Vec masked(const Vec& v, const Vec& mask) {
  Vec out = v;
  apply_mask(out, mask);
  return out;
}

// ---- forward traces --------------------------------------------------------------------

struct EncoderTrace {
  std::vector<int> tokens;
  std::vector<LstmCache> caches;
  std::vector<Vec> masks;
  EncodedInstruction encoded;  // masked features
};

EncoderTrace encode_trace(const Navigator& nav, const Instruction& instruction, const DropoutPlan& dropout) {
  if (instruction.tokens.empty()) throw std::invalid_argument("instruction has no tokens");
  const auto w = bind(nav.params);
  const std::size_t H = sz(nav.config.hidden_dim);
  EncoderTrace tr;
  tr.tokens = instruction.tokens;
  LstmState state{Vec(H, 0.0), Vec(H, 0.0)};
  for (std::size_t i = 0; i < instruction.tokens.size(); ++i) {
    const int tok = instruction.tokens[i];
    if (tok < 0 || tok >= nav.config.vocab_size)
      throw std::out_of_range("unknown token id " + std::to_string(tok));
    auto step = lstm_forward(w.embedding.row(sz(tok)), state, w.lang_w, w.lang_b);
    state = step.next;
    tr.caches.push_back(std::move(step.cache));
    tr.masks.push_back(dropout_mask(H, dropout.rate, dropout.seed, i, kSiteEncoder));
    tr.encoded.features.push_back(masked(state.h, tr.masks.back()));
  }
  return tr;
}

struct StepTrace {
  std::vector<Vec> patches;
  std::vector<Vec> u;  // candidate vectors
  std::vector<bool> is_stop;
  Vec prev_u;
  Vec prev_a;
  LstmState prev;
  AttentionResult pano;
  Vec x;
  LstmCache lstm;
  LstmState next;
  Vec mask_h, mask_t, mask_v;
  Vec hd;
  AttentionResult text;
  Vec ctd;
  AttentionResult vis;
  Vec cvd;
  Vec feat;
  Vec z;
  std::vector<Vec> up;
  Vec logits;
  Vec probs;
  Vec log_probs;
};

StepTrace step_trace(const Navigator& nav, const LstmState& previous, std::span<const double> prev_action,
                     const PanoramicObservation& obs, const EncodedInstruction& encoded,
                     const std::vector<Vec>* text_keys, const DropoutPlan& dropout, int step_index) {
  const auto w = bind(nav.params);
  const auto& cfg = nav.config;
  const std::size_t H = sz(cfg.hidden_dim);
  if (obs.candidates.empty()) throw std::invalid_argument("observation has no candidates");
  if (previous.h.size() != H || previous.c.size() != H) throw ShapeError("navigator hidden size mismatch");
  if (prev_action.size() != sz(cfg.action_dim())) throw ShapeError("previous action vector size mismatch");
  if (encoded.features.empty()) throw std::invalid_argument("empty encoded instruction");

  StepTrace s;
  s.patches = obs.patches;
  for (const auto& p : s.patches)
    if (p.size() != sz(cfg.feature_dim)) throw ShapeError("patch feature dimension mismatch");
  s.prev.h = previous.h;
  s.prev.c = previous.c;
  s.prev_u.assign(prev_action.begin(), prev_action.end());
  s.prev_a = affine(s.prev_u, w.act_w, w.act_b.values());

  s.pano = attend(previous.h, s.patches, w.pano_q, w.pano_k);
  s.x = concat(s.pano.context, s.prev_a);
  auto lstm = lstm_forward(s.x, previous, w.traj_w, w.traj_b);
  s.lstm = std::move(lstm.cache);
  s.next = std::move(lstm.next);

  const auto t = static_cast<std::uint64_t>(step_index);
  s.mask_h = dropout_mask(H, dropout.rate, dropout.seed, t, kSiteHistory);
  s.mask_t = dropout_mask(H, dropout.rate, dropout.seed, t, kSiteText);
  s.mask_v = dropout_mask(sz(cfg.feature_dim), dropout.rate, dropout.seed, t, kSiteVisual);

  s.hd = masked(s.next.h, s.mask_h);
  s.text = text_keys ? attend(s.hd, encoded.features, w.text_q, *text_keys)
                     : attend(s.hd, encoded.features, w.text_q, w.text_k);
  s.ctd = masked(s.text.context, s.mask_t);
  s.vis = attend(s.ctd, s.patches, w.vis_q, w.vis_k);
  s.cvd = masked(s.vis.context, s.mask_v);

  s.feat = concat(s.hd, s.ctd, s.cvd);
  s.z = matvec(s.feat, w.pred_ctx);
  s.logits.resize(obs.candidates.size());
  for (std::size_t k = 0; k < obs.candidates.size(); ++k) {
    const auto& cand = obs.candidates[k];
    s.is_stop.push_back(cand.is_stop());
    s.u.push_back(action_vector(nav, cand));
    s.up.push_back(matvec(s.u.back(), w.pred_act));
    s.logits[k] = dot(s.z, s.up.back());
  }
  s.probs = softmax(s.logits);
  s.log_probs = log_softmax(s.logits);
  return s;
}

void check_snapshot(const TrajectoryStep& step, const PanoramicObservation& obs) {
  if (step.candidate_targets.size() != obs.candidates.size())
    throw TrajectoryIntegrityError("candidate count differs from the world at viewpoint " +
                                   std::to_string(step.state.viewpoint));
  for (std::size_t k = 0; k < obs.candidates.size(); ++k) {
    const int expect = obs.candidates[k].is_stop() ? -1 : obs.candidates[k].target;
    if (step.candidate_targets[k] != expect)
      throw TrajectoryIntegrityError("candidate snapshot differs from the world at viewpoint " +
                                     std::to_string(step.state.viewpoint));
  }
  if (step.action < 0 || step.action >= static_cast<int>(obs.candidates.size()))
    throw TrajectoryIntegrityError("recorded action index out of range");
}

std::vector<int> snapshot(const PanoramicObservation& obs) {
  std::vector<int> out;
  for (const auto& c : obs.candidates) out.push_back(c.is_stop() ? -1 : c.target);
  return out;
}

struct Replay {
  EncoderTrace encoder;
  std::vector<Vec> text_keys;
  std::vector<StepTrace> steps;
};

Replay replay_forward(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                      const Trajectory& trajectory) {
  if (trajectory.steps.empty()) throw TrajectoryIntegrityError("empty trajectory");
  if (trajectory.observation_seed != episode.noise_seed())
    throw TrajectoryIntegrityError("trajectory was observed under a different episode");
  Replay r;
  r.encoder = encode_trace(nav, episode.instruction(), trajectory.dropout);
  r.text_keys = project_keys(r.encoder.encoded.features, nav.params.at("nav.text_attn.key"));
  const std::size_t H = sz(nav.config.hidden_dim);
  LstmState state{Vec(H, 0.0), Vec(H, 0.0)};
  Vec prev_u = initial_action_vector(nav);
  for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
    const auto& step = trajectory.steps[t];
    if (t > 0) {
      const auto& before = trajectory.steps[t - 1];
      const int moved_to = before.candidate_targets[sz(before.action)];
      if (moved_to < 0 || moved_to != step.state.viewpoint)
        throw TrajectoryIntegrityError("trajectory states are not connected by the recorded actions");
    }
    const auto obs = observe(world, step.state, episode.noise_seed());
    check_snapshot(step, obs);
    r.steps.push_back(step_trace(nav, state, prev_u, obs, r.encoder.encoded, &r.text_keys, trajectory.dropout,
                                 static_cast<int>(t)));
    state = r.steps.back().next;
    prev_u = r.steps.back().u[sz(step.action)];
  }
  return r;
}

}  // namespace

// ---- construction ------------------------------------------------------------------------

Navigator make_navigator(const NavigatorConfig& config, std::uint64_t seed) {
  check_config(config);
  auto rng = make_rng(seed, 0x4e4156);
  Navigator nav{config, {}};
  for (auto& [name, shape] : layout(config)) {
    const bool bias = name.ends_with(".bias");
    Tensor t = bias ? Tensor(shape) : glorot_uniform(shape, rng);
    if (name.ends_with("lstm.bias")) {
      const std::size_t H = sz(config.hidden_dim);
      for (std::size_t u = H; u < 2 * H; ++u) t[u] = 1.0;
    }
    nav.params.add(name, std::move(t));
  }
  return nav;
}

Navigator make_zero_navigator(const NavigatorConfig& config) {
  check_config(config);
  Navigator nav{config, {}};
  for (auto& [name, shape] : layout(config)) nav.params.add(name, Tensor(shape));
  return nav;
}

// ---- forward ---------------------------------------------------------------------------------

EncodedInstruction encode_instruction(const Navigator& nav, const Instruction& instruction,
                                      const DropoutPlan& dropout) {
  return encode_trace(nav, instruction, dropout).encoded;
}

Vec action_vector(const Navigator& nav, const ActionCandidate& candidate) {
  if (candidate.is_stop()) {
    return concat(nav.params.at("nav.stop.appearance").values(), nav.params.at("nav.stop.orientation").values());
  }
  if (candidate.appearance.size() != sz(nav.config.feature_dim) ||
      candidate.orientation.size() != sz(nav.config.orientation_dim))
    throw ShapeError("candidate embedding size mismatch");
  return concat(candidate.appearance, candidate.orientation);
}

Vec initial_action_vector(const Navigator& nav) { return action_vector(nav, ActionCandidate{}); }

NavigatorStepOutput navigator_step(const Navigator& nav, const LstmState& previous,
                                   std::span<const double> prev_action, const PanoramicObservation& observation,
                                   const EncodedInstruction& encoded, const DropoutPlan& dropout, int step_index) {
  auto s = step_trace(nav, previous, prev_action, observation, encoded, nullptr, dropout, step_index);
  return NavigatorStepOutput{s.next.h,     s.next.c,     s.text.context, s.vis.context, s.probs,
                             s.pano.weights, s.text.weights, s.vis.weights};
}

std::vector<int> Trajectory::visited() const {
  std::vector<int> out;
  for (const auto& s : steps) out.push_back(s.state.viewpoint);
  if (out.empty() || out.back() != end_state.viewpoint) out.push_back(end_state.viewpoint);
  return out;
}

double Trajectory::total_log_prob() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.log_prob;
  return s;
}

bool Trajectory::operator==(const Trajectory& o) const {
  return steps == o.steps && end_state == o.end_state && stopped == o.stopped &&
         observation_seed == o.observation_seed && dropout.rate == o.dropout.rate &&
         dropout.seed == o.dropout.seed;
}

Trajectory rollout(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode, RolloutMode mode,
                   Rng& rng, int max_steps, Mode dropout_mode) {
  if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  Trajectory traj;
  traj.observation_seed = episode.noise_seed();
  if (dropout_mode == Mode::Train && nav.config.dropout > 0) traj.dropout = {nav.config.dropout, rng()};
  const auto encoder = encode_trace(nav, episode.instruction(), traj.dropout);
  const auto text_keys = project_keys(encoder.encoded.features, nav.params.at("nav.text_attn.key"));
  const std::size_t H = sz(nav.config.hidden_dim);
  LstmState state{Vec(H, 0.0), Vec(H, 0.0)};
  Vec prev_u = initial_action_vector(nav);
  AgentState agent = episode.start();
  for (int t = 0; t < max_steps; ++t) {
    const auto obs = observe(world, agent, episode.noise_seed());
    auto s = step_trace(nav, state, prev_u, obs, encoder.encoded, &text_keys, traj.dropout, t);
    int action = 0;
    if (mode == RolloutMode::Greedy) {
      action = static_cast<int>(std::max_element(s.probs.begin(), s.probs.end()) - s.probs.begin());
    } else {
      std::discrete_distribution<int> dist(s.probs.begin(), s.probs.end());
      action = dist(rng);
    }
    traj.steps.push_back({agent, action, s.log_probs[sz(action)], snapshot(obs)});
    const auto& chosen = obs.candidates[sz(action)];
    agent = transition(world, agent, chosen);
    state = s.next;
    prev_u = s.u[sz(action)];
    if (chosen.is_stop()) {
      traj.stopped = true;
      break;
    }
  }
  traj.end_state = agent;
  return traj;
}

Trajectory demonstration_trajectory(const WorldGraph& world, const EpisodeSpec& episode) {
  Trajectory traj;
  traj.observation_seed = episode.noise_seed();
  AgentState agent = episode.start();
  const auto& demo = episode.demonstration();
  for (std::size_t k = 0; k < demo.size(); ++k) {
    const auto obs = observe(world, agent, episode.noise_seed());
    const int action = demonstration_action(world, episode, agent);
    traj.steps.push_back({agent, action, 0.0, snapshot(obs)});
    agent = transition(world, agent, obs.candidates[sz(action)]);
  }
  traj.stopped = true;
  traj.end_state = agent;
  return traj;
}

Vec replay_log_probs(const Navigator& nav, const WorldGraph& world, const EpisodeSpec& episode,
                     const Trajectory& trajectory) {
  const auto r = replay_forward(nav, world, episode, trajectory);
  Vec out;
  for (std::size_t t = 0; t < r.steps.size(); ++t)
    out.push_back(r.steps[t].log_probs[sz(trajectory.steps[t].action)]);
  return out;
}

// ---- backward ----------------------------------------------------------------------------------

LogProbGradient trajectory_logprob_backward(const Navigator& nav, const WorldGraph& world,
                                            const EpisodeSpec& episode, const Trajectory& trajectory,
                                            std::span<const double> per_step_weights) {
  if (per_step_weights.size() != trajectory.steps.size())
    throw std::invalid_argument("one weight per trajectory step is required");
  const auto r = replay_forward(nav, world, episode, trajectory);
  const auto w = bind(nav.params);
  const auto& cfg = nav.config;
  const std::size_t H = sz(cfg.hidden_dim), F = sz(cfg.feature_dim), A = sz(cfg.action_embed_dim);

  LogProbGradient out;
  out.grads = nav.params.zeros_like();
  auto g = bind(out.grads);

  std::vector<Vec> d_encoded(r.encoder.encoded.features.size(), Vec(H, 0.0));
  Vec dh_next(H, 0.0), dc_next(H, 0.0);

  auto add_stop_grad = [&](std::span<const double> du) {
    for (std::size_t i = 0; i < F; ++i) g.stop_app[i] += du[i];
    for (std::size_t i = F; i < du.size(); ++i) g.stop_ori[i - F] += du[i];
  };

  for (std::size_t ti = r.steps.size(); ti-- > 0;) {
    const auto& s = r.steps[ti];
    const int a = trajectory.steps[ti].action;
    const double weight = per_step_weights[ti];
    const double lp = s.log_probs[sz(a)];
    out.log_probs.insert(out.log_probs.begin(), lp);
    out.objective += weight * lp;

    Vec dlogits(s.probs.size());
    for (std::size_t k = 0; k < dlogits.size(); ++k)
      dlogits[k] = weight * ((static_cast<int>(k) == a ? 1.0 : 0.0) - s.probs[k]);

    // bilinear action predictor
    Vec dz(s.z.size(), 0.0);
    for (std::size_t k = 0; k < s.u.size(); ++k) {
      if (dlogits[k] == 0.0) continue;
      axpy(dlogits[k], s.up[k], dz);
      Vec dup(s.z.size());
      for (std::size_t c = 0; c < dup.size(); ++c) dup[c] = dlogits[k] * s.z[c];
      if (s.is_stop[k]) {
        Vec du(s.u[k].size(), 0.0);
        affine_backward(s.u[k], w.pred_act, dup, du, &g.pred_act, nullptr);
        add_stop_grad(du);
      } else {
        affine_backward(s.u[k], w.pred_act, dup, {}, &g.pred_act, nullptr);
      }
    }
    Vec dfeat(s.feat.size(), 0.0);
    affine_backward(s.feat, w.pred_ctx, dz, dfeat, &g.pred_ctx, nullptr);
    Vec dhd(dfeat.begin(), dfeat.begin() + static_cast<std::ptrdiff_t>(H));
    Vec dctd(dfeat.begin() + static_cast<std::ptrdiff_t>(H), dfeat.begin() + static_cast<std::ptrdiff_t>(2 * H));
    Vec dcvd(dfeat.begin() + static_cast<std::ptrdiff_t>(2 * H), dfeat.end());

    // textually conditioned visual context
    apply_mask(dcvd, s.mask_v);
    auto gv = attend_backward(s.ctd, s.patches, w.vis_q, w.vis_k, s.vis, dcvd, g.vis_q, g.vis_k, false);
    axpy(1.0, gv.dquery, dctd);

    // visually conditioned textual context
    apply_mask(dctd, s.mask_t);
    auto gt = attend_backward(s.hd, r.encoder.encoded.features, w.text_q, w.text_k, s.text, dctd, g.text_q,
                              g.text_k, true);
    axpy(1.0, gt.dquery, dhd);
    for (std::size_t i = 0; i < d_encoded.size(); ++i) axpy(1.0, gt.dfeatures[i], d_encoded[i]);

    // history context
    apply_mask(dhd, s.mask_h);
    axpy(1.0, dh_next, dhd);
    auto gl = lstm_backward(s.lstm, w.traj_w, dhd, dc_next, g.traj_w, g.traj_b);
    Vec dv(gl.dinput.begin(), gl.dinput.begin() + static_cast<std::ptrdiff_t>(F));
    Vec dprev_a(gl.dinput.begin() + static_cast<std::ptrdiff_t>(F), gl.dinput.end());
    if (dprev_a.size() != A) throw ShapeError("internal: action embedding size");

    Vec dprev_u(s.prev_u.size(), 0.0);
    affine_backward(s.prev_u, w.act_w, dprev_a, dprev_u, &g.act_w, &g.act_b);
    // The previous action is a STOP embedding only at the first step.
    if (ti == 0) add_stop_grad(dprev_u);

    auto gp = attend_backward(s.prev.h, s.patches, w.pano_q, w.pano_k, s.pano, dv, g.pano_q, g.pano_k, false);
    dh_next = gl.dh_prev;
    axpy(1.0, gp.dquery, dh_next);
    dc_next = gl.dc_prev;
  }

  // language encoder
  Vec dh(H, 0.0), dc(H, 0.0);
  for (std::size_t i = r.encoder.caches.size(); i-- > 0;) {
    Vec dhi = masked(d_encoded[i], r.encoder.masks[i]);
    axpy(1.0, dh, dhi);
    auto gl = lstm_backward(r.encoder.caches[i], w.lang_w, dhi, dc, g.lang_w, g.lang_b);
    axpy(1.0, gl.dinput, g.embedding.row(sz(r.encoder.tokens[i])));
    dh = gl.dh_prev;
    dc = gl.dc_prev;
  }
  return out;
}

}  // namespace crossnav
