#include "crossnav/mathcore.hpp"

#include "crossnav/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace crossnav {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace

// ---- Tensor -------------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {
  if (!std::isfinite(fill)) throw NumericError("non-finite tensor fill value");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (product(shape_) != values_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
  if (!all_finite()) throw NumericError("non-finite tensor value");
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return 1;
  return shape_.size() >= 2 ? shape_[1] : 0;
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(values_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(values_).subspan(r * c, c);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---- ParamSet -----------------------------------------------------------------

Tensor& ParamSet::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ParamSet::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].tensor;
}

Tensor& ParamSet::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].tensor;
}

std::size_t ParamSet::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.tensor.shape()));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) return false;
  }
  return true;
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_layout(other)) throw ShapeError("parameter set layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    axpy(scale, other.entries_[i].tensor.values(), entries_[i].tensor.values());
  }
}

void ParamSet::scale(double factor) {
  for (auto& e : entries_)
    for (auto& v : e.tensor.values()) v *= factor;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!(entries_[i].tensor == other.entries_[i].tensor)) return false;
  }
  return true;
}

AdamState AdamState::for_params(const ParamSet& params) {
  return AdamState{0, params.zeros_like(), params.zeros_like()};
}

// ---- helpers --------------------------------------------------------------------

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Vec concat(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  Vec out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// ---- softmax ----------------------------------------------------------------------

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NumericError("softmax: non-finite logit");
  Vec out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

Vec log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NumericError("log_softmax: non-finite logit");
  double total = 0.0;
  for (double l : logits) total += std::exp(l - mx);
  const double lse = mx + std::log(total);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Vec softmax_backward(std::span<const double> probs, std::span<const double> dprobs) {
  const double inner = dot(probs, dprobs);
  Vec out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (dprobs[i] - inner);
  return out;
}

// ---- affine -------------------------------------------------------------------------

Vec matvec(std::span<const double> x, const Tensor& weight) {
  if (weight.rank() != 2 || weight.rows() != x.size()) {
    throw ShapeError("matvec: input length " + std::to_string(x.size()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t out_dim = weight.cols();
  Vec y(out_dim, 0.0);
  const double* w = weight.data();
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* wr = w + r * out_dim;
    for (std::size_t c = 0; c < out_dim; ++c) y[c] += xr * wr[c];
  }
  return y;
}

Vec affine(std::span<const double> x, const Tensor& weight, std::span<const double> bias) {
  Vec y = matvec(x, weight);
  if (bias.size() != y.size()) throw ShapeError("affine: bias length mismatch");
  for (std::size_t c = 0; c < y.size(); ++c) y[c] += bias[c];
  return y;
}

void affine_backward(std::span<const double> x, const Tensor& weight, std::span<const double> dy,
                     std::span<double> dx, Tensor* dweight, Tensor* dbias) {
  const std::size_t in_dim = weight.rows();
  const std::size_t out_dim = weight.cols();
  if (x.size() != in_dim || dy.size() != out_dim) throw ShapeError("affine_backward: shape mismatch");
  const double* w = weight.data();
  if (!dx.empty()) {
    if (dx.size() != in_dim) throw ShapeError("affine_backward: dx length mismatch");
    for (std::size_t r = 0; r < in_dim; ++r) {
      const double* wr = w + r * out_dim;
      double s = 0.0;
      for (std::size_t c = 0; c < out_dim; ++c) s += wr[c] * dy[c];
      dx[r] += s;
    }
  }
  if (dweight) {
    double* dw = dweight->data();
    for (std::size_t r = 0; r < in_dim; ++r) {
      const double xr = x[r];
      if (xr == 0.0) continue;
      double* dwr = dw + r * out_dim;
      for (std::size_t c = 0; c < out_dim; ++c) dwr[c] += xr * dy[c];
    }
  }
  if (dbias) {
    for (std::size_t c = 0; c < out_dim; ++c) (*dbias)[c] += dy[c];
  }
}

// ---- attention ----------------------------------------------------------------------

std::vector<Vec> project_keys(std::span<const Vec> features, const Tensor& proj_key) {
  std::vector<Vec> keys;
  keys.reserve(features.size());
  for (const auto& f : features) keys.push_back(matvec(f, proj_key));
  return keys;
}

AttentionResult attend(std::span<const double> query, std::span<const Vec> features,
                       const Tensor& proj_query, const Tensor& proj_key) {
  if (features.empty()) throw std::invalid_argument("attention over empty feature set");
  if (proj_query.rank() != 2 || proj_key.rank() != 2 || proj_query.cols() != proj_key.cols()) {
    throw ShapeError("attention: projected query and key dimensions differ");
  }
  return attend(query, features, proj_query, project_keys(features, proj_key));
}

AttentionResult attend(std::span<const double> query, std::span<const Vec> features,
                       const Tensor& proj_query, std::vector<Vec> key_proj) {
  if (features.empty()) throw std::invalid_argument("attention over empty feature set");
  const std::size_t dim = features[0].size();
  for (const auto& f : features)
    if (f.size() != dim) throw ShapeError("attention: non-uniform feature dimension");
  AttentionResult r;
  r.query_proj = matvec(query, proj_query);
  r.key_proj = std::move(key_proj);
  Vec scores(features.size());
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (r.key_proj[j].size() != r.query_proj.size())
      throw ShapeError("attention: projected query and key dimensions differ");
    scores[j] = dot(r.query_proj, r.key_proj[j]);
  }
  r.weights = softmax(scores);
  r.context.assign(dim, 0.0);
  for (std::size_t j = 0; j < features.size(); ++j) axpy(r.weights[j], features[j], r.context);
  return r;
}

std::pair<Vec, Vec> dot_product_attention(std::span<const double> query,
                                          std::span<const Vec> features,
                                          const AttentionParams& params) {
  auto r = attend(query, features, params.proj_query, params.proj_key);
  return {std::move(r.context), std::move(r.weights)};
}

AttentionGrads attend_backward(std::span<const double> query, std::span<const Vec> features,
                               const Tensor& proj_query, const Tensor& proj_key,
                               const AttentionResult& fwd, std::span<const double> dcontext,
                               Tensor& dproj_query, Tensor& dproj_key, bool want_features) {
  const std::size_t n = features.size();
  AttentionGrads g;
  if (want_features) {
    g.dfeatures.assign(n, Vec(features[0].size(), 0.0));
    for (std::size_t j = 0; j < n; ++j) axpy(fwd.weights[j], dcontext, g.dfeatures[j]);
  }
  Vec dweights(n);
  for (std::size_t j = 0; j < n; ++j) dweights[j] = dot(dcontext, features[j]);
  const Vec dscores = softmax_backward(fwd.weights, dweights);

  Vec dqp(fwd.query_proj.size(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (dscores[j] == 0.0) continue;
    axpy(dscores[j], fwd.key_proj[j], dqp);
    Vec dkp(fwd.query_proj.size());
    for (std::size_t c = 0; c < dkp.size(); ++c) dkp[c] = dscores[j] * fwd.query_proj[c];
    affine_backward(features[j], proj_key, dkp,
                    want_features ? std::span<double>(g.dfeatures[j]) : std::span<double>(),
                    &dproj_key, nullptr);
  }
  g.dquery.assign(query.size(), 0.0);
  affine_backward(query, proj_query, dqp, g.dquery, &dproj_query, nullptr);
  return g;
}

// ---- LSTM -------------------------------------------------------------------------------

LstmStepResult lstm_forward(std::span<const double> input, const LstmState& hidden,
                            const Tensor& weight, const Tensor& bias) {
  const std::size_t h = hidden.h.size();
  if (hidden.c.size() != h) throw ShapeError("lstm: h and c lengths differ");
  if (weight.rank() != 2 || weight.cols() != 4 * h || weight.rows() != input.size() + h ||
      bias.size() != 4 * h) {
    throw ShapeError("lstm: input/hidden dims do not match weight " + shape_string(weight.shape()));
  }
  LstmStepResult r;
  auto& k = r.cache;
  k.xh = concat(input, hidden.h);
  const Vec z = affine(k.xh, weight, bias.values());
  k.i.resize(h);
  k.f.resize(h);
  k.g.resize(h);
  k.o.resize(h);
  k.tanh_c.resize(h);
  k.c_prev = hidden.c;
  r.next.h.resize(h);
  r.next.c.resize(h);
  for (std::size_t u = 0; u < h; ++u) {
    k.i[u] = sigmoid(z[u]);
    k.f[u] = sigmoid(z[h + u]);
    k.g[u] = std::tanh(z[2 * h + u]);
    k.o[u] = sigmoid(z[3 * h + u]);
    r.next.c[u] = k.f[u] * hidden.c[u] + k.i[u] * k.g[u];
    k.tanh_c[u] = std::tanh(r.next.c[u]);
    r.next.h[u] = k.o[u] * k.tanh_c[u];
  }
  return r;
}

LstmState lstm_step(std::span<const double> input, const LstmState& hidden, const ParamSet& params) {
  return lstm_forward(input, hidden, params.at("weight"), params.at("bias")).next;
}

LstmGrads lstm_backward(const LstmCache& k, const Tensor& weight, std::span<const double> dh,
                        std::span<const double> dc, Tensor& dweight, Tensor& dbias) {
  const std::size_t h = k.i.size();
  Vec dz(4 * h);
  LstmGrads g;
  g.dc_prev.resize(h);
  for (std::size_t u = 0; u < h; ++u) {
    const double dtc = dh[u] * k.o[u];
    const double dct = dc[u] + dtc * (1.0 - k.tanh_c[u] * k.tanh_c[u]);
    const double d_o = dh[u] * k.tanh_c[u];
    const double d_i = dct * k.g[u];
    const double d_f = dct * k.c_prev[u];
    const double d_g = dct * k.i[u];
    g.dc_prev[u] = dct * k.f[u];
    dz[u] = d_i * k.i[u] * (1.0 - k.i[u]);
    dz[h + u] = d_f * k.f[u] * (1.0 - k.f[u]);
    dz[2 * h + u] = d_g * (1.0 - k.g[u] * k.g[u]);
    dz[3 * h + u] = d_o * k.o[u] * (1.0 - k.o[u]);
  }
  Vec dxh(k.xh.size(), 0.0);
  affine_backward(k.xh, weight, dz, dxh, &dweight, &dbias);
  const std::size_t in = k.xh.size() - h;
  g.dinput.assign(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(in));
  g.dh_prev.assign(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end());
  return g;
}

// ---- Adam -----------------------------------------------------------------------------------

void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamHyper& hyper) {
  if (!params.same_layout(grads)) throw ShapeError("adam: gradient layout does not match parameters");
  if (!params.same_layout(state.m) || !params.same_layout(state.v))
    throw ShapeError("adam: optimizer state layout does not match parameters");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  auto p_it = params.begin();
  auto g_it = grads.begin();
  auto m_it = state.m.begin();
  auto v_it = state.v.begin();
  for (; p_it != params.end(); ++p_it, ++g_it, ++m_it, ++v_it) {
    auto p = p_it->tensor.values();
    auto g = g_it->tensor.values();
    auto m = m_it->tensor.values();
    auto v = v_it->tensor.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + hyper.weight_decay * p[i];
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

std::pair<ParamSet, AdamState> adam_step(const ParamSet& params, const ParamSet& grads,
                                         const AdamState& state, const AdamHyper& hyper) {
  ParamSet p = params;
  AdamState s = state;
  adam_update(p, grads, s, hyper);
  return {std::move(p), std::move(s)};
}

// ---- gradient check ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

ParamSet numeric_gradient(const LossFn& loss, const ParamSet& params, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("grad_check epsilon must be positive");
  ParamSet work = params;
  ParamSet out = params.zeros_like();
  auto o_it = out.begin();
  for (auto w_it = work.begin(); w_it != work.end(); ++w_it, ++o_it) {
    auto values = w_it->tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + epsilon;
      const double up = loss(work);
      values[i] = orig - epsilon;
      const double down = loss(work);
      values[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
      o_it->tensor[i] = (up - down) / (2.0 * epsilon);
    }
  }
  return out;
}

GradCheckReport grad_check(const LossAndGradFn& fn, const ParamSet& params, double epsilon) {
  auto [loss0, analytic] = fn(params);
  if (!std::isfinite(loss0)) throw NumericError("grad_check: non-finite loss");
  if (!analytic.same_layout(params)) throw ShapeError("grad_check: gradient layout mismatch");
  const ParamSet numeric =
      numeric_gradient([&](const ParamSet& p) { return fn(p).first; }, params, epsilon);
  GradCheckReport report;
  auto a_it = analytic.begin();
  for (auto n_it = numeric.begin(); n_it != numeric.end(); ++n_it, ++a_it) {
    for (std::size_t i = 0; i < n_it->tensor.size(); ++i) {
      const double err = relative_error(a_it->tensor[i], n_it->tensor[i]);
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = n_it->name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

// ---- initialization -----------------------------------------------------------------------------

Tensor glorot_uniform(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(shape.at(0));
  const double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1]) : 1.0;
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Vec dropout_mask(std::size_t size, double rate, std::uint64_t seed, std::uint64_t step,
                 std::uint64_t site) {
  Vec mask(size, 1.0);
  if (rate <= 0.0) return mask;
  auto rng = make_rng(seed, step, site);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace crossnav
