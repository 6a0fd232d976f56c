#include "crossnav/critic.hpp"

#include <cmath>

#include "crossnav/rng.hpp"

namespace crossnav {

namespace {

using Shape = std::vector<std::size_t>;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

template <typename PS>
auto bind(PS& p) {
  struct Bound {
    decltype(p.at("")) embedding, bos, traj_w, traj_b, pano_q, pano_k, act_w, act_b, stop_app, stop_ori, dec_w,
        dec_b, dec_q, dec_k, hid_w, hid_b, out_w, out_b;
  };
  return Bound{p.at("critic.word_embedding"),     p.at("critic.bos"),
               p.at("critic.traj_lstm.weight"),   p.at("critic.traj_lstm.bias"),
               p.at("critic.pano_attn.query"),    p.at("critic.pano_attn.key"),
               p.at("critic.action_proj.weight"), p.at("critic.action_proj.bias"),
               p.at("critic.stop.appearance"),    p.at("critic.stop.orientation"),
               p.at("critic.dec_lstm.weight"),    p.at("critic.dec_lstm.bias"),
               p.at("critic.dec_attn.query"),     p.at("critic.dec_attn.key"),
               p.at("critic.head.hidden.weight"), p.at("critic.head.hidden.bias"),
               p.at("critic.head.out.weight"),    p.at("critic.head.out.bias")};
}

std::vector<std::pair<std::string, Shape>> layout(const CriticConfig& c) {
  const auto V = sz(c.vocab_size), E = sz(c.embed_dim), H = sz(c.hidden_dim), F = sz(c.feature_dim),
             O = sz(c.orientation_dim), A = sz(c.action_embed_dim), U = sz(c.action_dim()), D = sz(c.head_dim);
  return {
      {"critic.word_embedding", {V, E}},
      {"critic.bos", {E}},
      {"critic.traj_lstm.weight", {F + A + H, 4 * H}},
      {"critic.traj_lstm.bias", {4 * H}},
      {"critic.pano_attn.query", {H, sz(c.attn_panoramic)}},
      {"critic.pano_attn.key", {F, sz(c.attn_panoramic)}},
      {"critic.action_proj.weight", {U, A}},
      {"critic.action_proj.bias", {A}},
      {"critic.stop.appearance", {F}},
      {"critic.stop.orientation", {O}},
      {"critic.dec_lstm.weight", {E + H, 4 * H}},
      {"critic.dec_lstm.bias", {4 * H}},
      {"critic.dec_attn.query", {H, sz(c.attn_decoder)}},
      {"critic.dec_attn.key", {H, sz(c.attn_decoder)}},
      {"critic.head.hidden.weight", {2 * H, D}},
      {"critic.head.hidden.bias", {D}},
      {"critic.head.out.weight", {D, V}},
      {"critic.head.out.bias", {V}},
  };
}

void check_config(const CriticConfig& c) {
  if (c.vocab_size < 1 || c.feature_dim < 1 || c.orientation_dim < 1 || c.embed_dim < 1 || c.hidden_dim < 1 ||
      c.action_embed_dim < 1 || c.attn_panoramic < 1 || c.attn_decoder < 1 || c.head_dim < 1)
    throw ShapeError("critic dimensions must be positive");
}

struct EncStep {
  std::vector<Vec> patches;
  Vec u;
  bool stop = false;
  Vec a;
  LstmState prev;
  AttentionResult pano;
  LstmCache lstm;
};

struct DecStep {
  LstmCache lstm;
  Vec s;
  AttentionResult attn;
  Vec head_in;
  Vec hid;
  Vec probs;
  Vec log_probs;
};

struct Forward {
  std::vector<EncStep> enc;
  std::vector<Vec> enc_h;
  LstmState enc_final;
  std::vector<DecStep> dec;
  Vec token_logprobs;
};

Vec candidate_vector(const Critic& critic, const ActionCandidate& cand) {
  const auto w = bind(critic.params);
  if (cand.is_stop()) return concat(w.stop_app.values(), w.stop_ori.values());
  if (cand.appearance.size() != sz(critic.config.feature_dim) ||
      cand.orientation.size() != sz(critic.config.orientation_dim))
    throw ShapeError("candidate embedding size mismatch");
  return concat(cand.appearance, cand.orientation);
}

Forward encode_forward(const Critic& critic, const WorldGraph& world, const Trajectory& trajectory) {
  if (trajectory.steps.empty()) throw std::invalid_argument("cannot encode an empty trajectory");
  const auto w = bind(critic.params);
  const std::size_t H = sz(critic.config.hidden_dim);
  Forward f;
  LstmState state{Vec(H, 0.0), Vec(H, 0.0)};
  for (const auto& step : trajectory.steps) {
    const auto obs = observe(world, step.state, trajectory.observation_seed);
    if (step.action < 0 || step.action >= static_cast<int>(obs.candidates.size()))
      throw TrajectoryIntegrityError("recorded action index out of range");
    const auto& cand = obs.candidates[sz(step.action)];
    const int expect = cand.is_stop() ? -1 : cand.target;
    if (step.candidate_targets.size() != obs.candidates.size() || step.candidate_targets[sz(step.action)] != expect)
      throw TrajectoryIntegrityError("trajectory does not match the world");
    EncStep e;
    e.patches = obs.patches;
    e.u = candidate_vector(critic, cand);
    e.stop = cand.is_stop();
    e.a = affine(e.u, w.act_w, w.act_b.values());
    e.prev = state;
    e.pano = attend(state.h, e.patches, w.pano_q, w.pano_k);
    auto r = lstm_forward(concat(e.pano.context, e.a), state, w.traj_w, w.traj_b);
    e.lstm = std::move(r.cache);
    state = std::move(r.next);
    f.enc_h.push_back(state.h);
    f.enc.push_back(std::move(e));
  }
  f.enc_final = state;
  return f;
}

void decode_forward(const Critic& critic, const Instruction& instruction, Forward& f) {
  if (instruction.tokens.empty()) throw std::invalid_argument("instruction has no tokens");
  const auto w = bind(critic.params);
  const auto keys = project_keys(f.enc_h, w.dec_k);
  LstmState state = f.enc_final;
  for (std::size_t i = 0; i < instruction.tokens.size(); ++i) {
    const int tok = instruction.tokens[i];
    if (tok < 0 || tok >= critic.config.vocab_size)
      throw std::out_of_range("token outside the critic vocabulary: " + std::to_string(tok));
    const std::span<const double> input =
        i == 0 ? w.bos.values() : w.embedding.row(sz(instruction.tokens[i - 1]));
    DecStep d;
    auto r = lstm_forward(input, state, w.dec_w, w.dec_b);
    d.lstm = std::move(r.cache);
    state = std::move(r.next);
    d.s = state.h;
    d.attn = attend(d.s, f.enc_h, w.dec_q, keys);
    d.head_in = concat(d.s, d.attn.context);
    d.hid = affine(d.head_in, w.hid_w, w.hid_b.values());
    for (auto& v : d.hid) v = std::tanh(v);
    const Vec logits = affine(d.hid, w.out_w, w.out_b.values());
    d.probs = softmax(logits);
    d.log_probs = log_softmax(logits);
    f.token_logprobs.push_back(d.log_probs[sz(tok)]);
    f.dec.push_back(std::move(d));
  }
}

}  // namespace

Critic make_critic(const CriticConfig& config, std::uint64_t seed) {
  check_config(config);
  auto rng = make_rng(seed, 0x435249);
  Critic c{config, {}};
  for (auto& [name, shape] : layout(config)) {
    const bool bias = name.ends_with(".bias");
    Tensor t = bias ? Tensor(shape) : glorot_uniform(shape, rng);
    if (name.ends_with("lstm.bias")) {
      const std::size_t H = sz(config.hidden_dim);
      for (std::size_t u = H; u < 2 * H; ++u) t[u] = 1.0;
    }
    c.params.add(name, std::move(t));
  }
  return c;
}

Critic make_zero_critic(const CriticConfig& config) {
  check_config(config);
  Critic c{config, {}};
  for (auto& [name, shape] : layout(config)) c.params.add(name, Tensor(shape));
  return c;
}

std::vector<Vec> encode_trajectory(const Critic& critic, const WorldGraph& world, const Trajectory& trajectory) {
  return encode_forward(critic, world, trajectory).enc_h;
}

Vec instruction_logprob(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                        const Trajectory& trajectory) {
  auto f = encode_forward(critic, world, trajectory);
  decode_forward(critic, instruction, f);
  return f.token_logprobs;
}

double reduce_intrinsic(std::span<const double> per_token_logprobs, IntrinsicForm form) {
  if (per_token_logprobs.empty()) throw std::invalid_argument("no token log-probabilities");
  double sum = 0.0;
  for (double lp : per_token_logprobs) sum += lp;
  const double mean = sum / static_cast<double>(per_token_logprobs.size());
  return form == IntrinsicForm::GeometricMean ? std::exp(mean) : mean;
}

IntrinsicReward intrinsic_reward(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                                 const Trajectory& trajectory, IntrinsicForm form) {
  IntrinsicReward r;
  r.per_token_logprobs = instruction_logprob(critic, instruction, world, trajectory);
  r.value = reduce_intrinsic(r.per_token_logprobs, form);
  return r;
}

CriticLoss critic_mle_gradients(const Critic& critic, const Instruction& instruction, const WorldGraph& world,
                                const Trajectory& trajectory) {
  auto f = encode_forward(critic, world, trajectory);
  decode_forward(critic, instruction, f);
  const auto w = bind(critic.params);
  const std::size_t H = sz(critic.config.hidden_dim), F = sz(critic.config.feature_dim);
  const std::size_t n = instruction.tokens.size();
  const double scale = -1.0 / static_cast<double>(n);

  CriticLoss out;
  for (double lp : f.token_logprobs) out.loss -= lp;
  out.loss /= static_cast<double>(n);
  out.grads = critic.params.zeros_like();
  auto g = bind(out.grads);

  // decoder, reverse time
  std::vector<Vec> d_enc(f.enc_h.size(), Vec(H, 0.0));
  Vec dh(H, 0.0), dc(H, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    const auto& d = f.dec[i];
    const int tok = instruction.tokens[i];
    Vec dlogits(d.probs.size());
    for (std::size_t k = 0; k < dlogits.size(); ++k)
      dlogits[k] = scale * ((static_cast<int>(k) == tok ? 1.0 : 0.0) - d.probs[k]);
    Vec dhid(d.hid.size(), 0.0);
    affine_backward(d.hid, w.out_w, dlogits, dhid, &g.out_w, &g.out_b);
    for (std::size_t k = 0; k < dhid.size(); ++k) dhid[k] *= 1.0 - d.hid[k] * d.hid[k];
    Vec dhead(d.head_in.size(), 0.0);
    affine_backward(d.head_in, w.hid_w, dhid, dhead, &g.hid_w, &g.hid_b);
    Vec ds(dhead.begin(), dhead.begin() + static_cast<std::ptrdiff_t>(H));
    Vec dctx(dhead.begin() + static_cast<std::ptrdiff_t>(H), dhead.end());
    auto ga = attend_backward(d.s, f.enc_h, w.dec_q, w.dec_k, d.attn, dctx, g.dec_q, g.dec_k, true);
    axpy(1.0, ga.dquery, ds);
    for (std::size_t t = 0; t < d_enc.size(); ++t) axpy(1.0, ga.dfeatures[t], d_enc[t]);
    axpy(1.0, dh, ds);
    auto gl = lstm_backward(d.lstm, w.dec_w, ds, dc, g.dec_w, g.dec_b);
    if (i == 0) {
      axpy(1.0, gl.dinput, g.bos.values());
    } else {
      axpy(1.0, gl.dinput, g.embedding.row(sz(instruction.tokens[i - 1])));
    }
    dh = gl.dh_prev;
    dc = gl.dc_prev;
  }

  // trajectory encoder; the decoder started from its final state
  for (std::size_t t = f.enc.size(); t-- > 0;) {
    const auto& e = f.enc[t];
    axpy(1.0, d_enc[t], dh);
    auto gl = lstm_backward(e.lstm, w.traj_w, dh, dc, g.traj_w, g.traj_b);
    Vec dv(gl.dinput.begin(), gl.dinput.begin() + static_cast<std::ptrdiff_t>(F));
    Vec da(gl.dinput.begin() + static_cast<std::ptrdiff_t>(F), gl.dinput.end());
    Vec du(e.u.size(), 0.0);
    affine_backward(e.u, w.act_w, da, e.stop ? std::span<double>(du) : std::span<double>(), &g.act_w, &g.act_b);
    if (e.stop) {
      for (std::size_t k = 0; k < F; ++k) g.stop_app[k] += du[k];
      for (std::size_t k = F; k < du.size(); ++k) g.stop_ori[k - F] += du[k];
    }
    auto gp = attend_backward(e.prev.h, e.patches, w.pano_q, w.pano_k, e.pano, dv, g.pano_q, g.pano_k, false);
    dh = gl.dh_prev;
    axpy(1.0, gp.dquery, dh);
    dc = gl.dc_prev;
  }
  return out;
}

}  // namespace crossnav
