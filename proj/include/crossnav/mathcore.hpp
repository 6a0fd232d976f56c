#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crossnav {

using Vec = std::vector<double>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals. Rank-2 tensors are used as
/// matrices acting on row vectors (x * W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// Named tensors in insertion order.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  std::size_t num_values() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Same names and shapes, all values zero.
  ParamSet zeros_like() const;
  /// True when names (in order) and shapes match.
  bool same_layout(const ParamSet& other) const;
  /// this += scale * other. Layouts must match.
  void add_scaled(const ParamSet& other, double scale);
  void scale(double factor);

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::uint64_t step = 0;
  ParamSet m;
  ParamSet v;

  static AdamState for_params(const ParamSet& params);
  bool operator==(const AdamState&) const = default;
};

struct AttentionParams {
  Tensor proj_query;
  Tensor proj_key;
};

struct LstmState {
  Vec h;
  Vec c;
};

// ---- elementwise helpers ----------------------------------------------------

double sigmoid(double x);
Vec concat(std::span<const double> a, std::span<const double> b);
Vec concat(std::span<const double> a, std::span<const double> b, std::span<const double> c);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// ---- softmax ------------------------------------------------------------------

Vec softmax(std::span<const double> logits);
Vec log_softmax(std::span<const double> logits);
/// Gradient w.r.t. logits given probabilities p and upstream grad dp.
Vec softmax_backward(std::span<const double> probs, std::span<const double> dprobs);

// ---- affine -------------------------------------------------------------------

/// x * weight, weight shaped [in, out].
Vec matvec(std::span<const double> x, const Tensor& weight);
Vec affine(std::span<const double> x, const Tensor& weight, std::span<const double> bias);
/// Accumulates dx (if non-empty), dweight and dbias (if non-null).
void affine_backward(std::span<const double> x, const Tensor& weight, std::span<const double> dy,
                     std::span<double> dx, Tensor* dweight, Tensor* dbias);

// ---- attention ------------------------------------------------------------------

struct AttentionResult {
  Vec context;
  Vec weights;
  Vec query_proj;
  std::vector<Vec> key_proj;
};

/// Precomputed key projections; reused when the same feature set is attended
/// from several queries.
std::vector<Vec> project_keys(std::span<const Vec> features, const Tensor& proj_key);

AttentionResult attend(std::span<const double> query, std::span<const Vec> features,
                       const Tensor& proj_query, const Tensor& proj_key);
AttentionResult attend(std::span<const double> query, std::span<const Vec> features,
                       const Tensor& proj_query, std::vector<Vec> key_proj);

std::pair<Vec, Vec> dot_product_attention(std::span<const double> query,
                                          std::span<const Vec> features,
                                          const AttentionParams& params);

struct AttentionGrads {
  Vec dquery;
  std::vector<Vec> dfeatures;  // empty when not requested
};

/// Backward of attend() for upstream dcontext. Accumulates into the projection
/// gradients; feature gradients are produced only when want_features is set.
AttentionGrads attend_backward(std::span<const double> query, std::span<const Vec> features,
                               const Tensor& proj_query, const Tensor& proj_key,
                               const AttentionResult& fwd, std::span<const double> dcontext,
                               Tensor& dproj_query, Tensor& dproj_key, bool want_features);

// ---- LSTM -----------------------------------------------------------------------

/// Standard 4-gate cell. weight is [(in + hidden), 4 * hidden] with gate blocks
/// ordered input, forget, candidate, output.
struct LstmCache {
  Vec xh;
  Vec i, f, g, o;
  Vec c_prev;
  Vec tanh_c;
};

struct LstmStepResult {
  LstmState next;
  LstmCache cache;
};

LstmStepResult lstm_forward(std::span<const double> input, const LstmState& hidden,
                            const Tensor& weight, const Tensor& bias);

/// Convenience form reading "weight" and "bias" entries.
LstmState lstm_step(std::span<const double> input, const LstmState& hidden, const ParamSet& params);

struct LstmGrads {
  Vec dinput;
  Vec dh_prev;
  Vec dc_prev;
};

LstmGrads lstm_backward(const LstmCache& cache, const Tensor& weight, std::span<const double> dh,
                        std::span<const double> dc, Tensor& dweight, Tensor& dbias);

// ---- Adam -------------------------------------------------------------------------

/// In-place update; the pure form below wraps it.
void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamHyper& hyper);

std::pair<ParamSet, AdamState> adam_step(const ParamSet& params, const ParamSet& grads,
                                         const AdamState& state, const AdamHyper& hyper);

// ---- gradient check -----------------------------------------------------------------

using LossFn = std::function<double(const ParamSet&)>;
using LossAndGradFn = std::function<std::pair<double, ParamSet>(const ParamSet&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Central differences on every coordinate against the analytic gradient.
GradCheckReport grad_check(const LossAndGradFn& fn, const ParamSet& params, double epsilon);

/// Finite-difference gradient alone (test oracle helper).
ParamSet numeric_gradient(const LossFn& loss, const ParamSet& params, double epsilon);

double relative_error(double analytic, double numeric);

// ---- initialization -------------------------------------------------------------------

/// Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); rank-1 shapes use fan_out = 1.
Tensor glorot_uniform(std::vector<std::size_t> shape, std::mt19937_64& rng);

/// Inverted-dropout mask (entries 0 or 1/(1-rate)) seeded from (seed, step, site).
Vec dropout_mask(std::size_t size, double rate, std::uint64_t seed, std::uint64_t step,
                 std::uint64_t site);

}  // namespace crossnav
