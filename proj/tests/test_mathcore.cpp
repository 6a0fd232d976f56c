#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"

using namespace crossnav;

namespace {

Vec random_vec(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : t.values()) x = u(rng);
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

ParamSet wrap_vec(const std::string& name, const Vec& v) {
  ParamSet p;
  p.add(name, Tensor({v.size()}, v));
  return p;
}

Vec as_vec(const Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes and non-finite values") {
  CHECK_THROWS_AS(Tensor({2, 2}, Vec{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({1}, Vec{NAN}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, INFINITY), NumericError);
  Tensor t({2, 3}, Vec{1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6);
}

TEST_CASE("param set keeps insertion order and unique names") {
  ParamSet p;
  p.add("zeta", Tensor({1}));
  p.add("alpha", Tensor({2}));
  p.add("mid", Tensor({3}));
  std::vector<std::string> names;
  for (const auto& e : p) names.push_back(e.name);
  CHECK(names == std::vector<std::string>{"zeta", "alpha", "mid"});
  CHECK_THROWS(p.add("alpha", Tensor({2})));
  CHECK(p.num_values() == 6);
  CHECK_THROWS(p.at("missing"));

  auto q = p.zeros_like();
  CHECK(q.same_layout(p));
  q.at("alpha")[1] = 2.0;
  p.add_scaled(q, 0.5);
  CHECK(p.at("alpha")[1] == 1.0);
}

TEST_CASE("softmax examples") {
  auto a = softmax(Vec{0, 0, 0});
  for (double x : a) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
  auto b = softmax(Vec{std::log(2.0), 0});
  CHECK(b[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  auto c = softmax(Vec{1000, 0});
  CHECK(std::isfinite(c[0]));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] < 1e-300);
  CHECK_THROWS_AS(softmax(Vec{}), std::invalid_argument);
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
  auto rng = make_rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto logits = random_vec(1 + static_cast<std::size_t>(trial % 9), rng);
    const auto p = softmax(logits);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
    Vec shifted = logits;
    for (auto& x : shifted) x += 3.7;
    const auto q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i] > 0);
      CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    }
  }
}

TEST_CASE("dot-product attention examples") {
  const AttentionParams id{identity(1), identity(1)};
  const std::vector<Vec> feats{{1}, {3}};

  auto [ctx0, w0] = dot_product_attention(Vec{0}, feats, id);
  CHECK(ctx0[0] == doctest::Approx(2.0));
  CHECK(w0[0] == doctest::Approx(0.5));
  CHECK(w0[1] == doctest::Approx(0.5));

  auto [ctx1, w1] = dot_product_attention(Vec{10}, feats, id);
  const double lo = 1.0 / (1.0 + std::exp(20.0));
  CHECK(w1[0] == doctest::Approx(lo).epsilon(1e-12));
  CHECK(w1[0] == doctest::Approx(2.06e-9).epsilon(0.01));
  CHECK(w1[1] == doctest::Approx(1.0 - lo).epsilon(1e-15));
  CHECK(ctx1[0] == doctest::Approx(3.0).epsilon(1e-8));

  auto [ctx2, w2] = dot_product_attention(Vec{0.3}, std::vector<Vec>{{7}}, id);
  CHECK(ctx2 == Vec{7});
  CHECK(w2 == Vec{1});

  const AttentionParams bad{Tensor({1, 2}), Tensor({1, 3})};
  CHECK_THROWS_AS(dot_product_attention(Vec{1}, feats, bad), ShapeError);
  CHECK_THROWS(dot_product_attention(Vec{1}, std::vector<Vec>{}, id));
}

TEST_CASE("attention weights are the softmax of bilinear scores; context stays in the hull") {
  auto rng = make_rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionParams ap{random_tensor({3, 2}, rng), random_tensor({4, 2}, rng)};
    const auto q = random_vec(3, rng);
    std::vector<Vec> feats;
    for (int j = 0; j < 5; ++j) feats.push_back(random_vec(4, rng));
    auto [ctx, w] = dot_product_attention(q, feats, ap);
    const auto qp = matvec(q, ap.proj_query);
    Vec scores;
    for (const auto& f : feats) scores.push_back(dot(qp, matvec(f, ap.proj_key)));
    CHECK(w == softmax(scores));
    for (std::size_t d = 0; d < 4; ++d) {
      double lo = 1e9, hi = -1e9;
      for (const auto& f : feats) lo = std::min(lo, f[d]), hi = std::max(hi, f[d]);
      CHECK(ctx[d] >= lo - 1e-12);
      CHECK(ctx[d] <= hi + 1e-12);
    }
  }
}

TEST_CASE("lstm zero cases") {
  ParamSet p;
  p.add("weight", Tensor({3 + 2, 8}));
  p.add("bias", Tensor({8}));
  auto s = lstm_step(Vec{0.4, -2, 9}, {Vec(2, 0.0), Vec(2, 0.0)}, p);
  CHECK(s.h == Vec{0, 0});
  CHECK(s.c == Vec{0, 0});

  ParamSet q;
  q.add("weight", Tensor({1 + 1, 4}));
  q.add("bias", Tensor({4}));
  auto t = lstm_step(Vec{5}, {Vec{0}, Vec{1}}, q);
  CHECK(t.c[0] == doctest::Approx(0.5));
  CHECK(t.h[0] == doctest::Approx(0.5 * std::tanh(0.5)));

  CHECK_THROWS_AS(lstm_step(Vec{1, 2}, {Vec{0}, Vec{1}}, q), ShapeError);
}

TEST_CASE("lstm matches a hand-written cell") {
  auto rng = make_rng(13);
  const std::size_t in = 3, hid = 2;
  const Tensor w = random_tensor({in + hid, 4 * hid}, rng);
  const Tensor b = random_tensor({4 * hid}, rng);
  const Vec x = random_vec(in, rng), h = random_vec(hid, rng), c = random_vec(hid, rng);
  auto r = lstm_forward(x, {h, c}, w, b);
  Vec xh = x;
  xh.insert(xh.end(), h.begin(), h.end());
  auto pre = [&](std::size_t gate, std::size_t k) {
    double s = b[gate * hid + k];
    for (std::size_t r2 = 0; r2 < xh.size(); ++r2) s += xh[r2] * w(r2, gate * hid + k);
    return s;
  };
  for (std::size_t k = 0; k < hid; ++k) {
    const double ig = 1 / (1 + std::exp(-pre(0, k)));
    const double fg = 1 / (1 + std::exp(-pre(1, k)));
    const double gg = std::tanh(pre(2, k));
    const double og = 1 / (1 + std::exp(-pre(3, k)));
    const double c2 = fg * c[k] + ig * gg;
    CHECK(r.next.c[k] == doctest::Approx(c2).epsilon(1e-14));
    CHECK(r.next.h[k] == doctest::Approx(og * std::tanh(c2)).epsilon(1e-14));
  }
}

TEST_CASE("affine examples and loop oracle") {
  CHECK(affine(Vec{1, 2}, identity(2), Vec{0, 0}) == Vec{1, 2});
  CHECK(affine(Vec{1}, Tensor({1, 1}, Vec{3}), Vec{4}) == Vec{7});
  CHECK_THROWS_AS(affine(Vec{1, 2}, Tensor({3, 1}), Vec{0}), ShapeError);

  auto rng = make_rng(14);
  const Tensor w = random_tensor({4, 3}, rng);
  const Vec x = random_vec(4, rng), b = random_vec(3, rng);
  const auto y = affine(x, w, b);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = b[j];
    for (std::size_t i = 0; i < 4; ++i) s += x[i] * w.data()[i * 3 + j];
    CHECK(y[j] == doctest::Approx(s).epsilon(1e-14));
  }
}

TEST_CASE("adam behaviour") {
  ParamSet p;
  p.add("w", Tensor({3}, Vec{0.5, -1, 2}));
  auto zero = p.zeros_like();
  AdamHyper hyper;
  hyper.lr = 1e-2;
  auto [p1, s1] = adam_step(p, zero, AdamState::for_params(p), hyper);
  CHECK(p1 == p);
  CHECK(s1.step == 1);

  ParamSet g;
  g.add("w", Tensor({3}, Vec{0.3, -4e-3, 20}));
  auto [p2, s2] = adam_step(p, g, AdamState::for_params(p), hyper);
  for (std::size_t i = 0; i < 3; ++i) {
    const double gi = g.at("w")[i];
    const double expected = -hyper.lr * gi / (std::abs(gi) + hyper.eps);
    CHECK(p2.at("w")[i] - p.at("w")[i] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(p2.at("w")[i] - p.at("w")[i]) == doctest::Approx(hyper.lr).epsilon(1e-5));
  }
  for (double v : s2.v.at("w").values()) CHECK(v >= 0);

  auto [p3, s3] = adam_step(p, g, AdamState::for_params(p), hyper);
  CHECK(p3 == p2);
  CHECK(s3 == s2);

  // weight decay enters as an additive gradient term
  AdamHyper wd = hyper;
  wd.weight_decay = 0.1;
  ParamSet g_equiv = g;
  g_equiv.add_scaled(p, 0.1);
  auto [p4, s4] = adam_step(p, g, AdamState::for_params(p), wd);
  auto [p5, s5] = adam_step(p, g_equiv, AdamState::for_params(p), hyper);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p4.at("w")[i] == doctest::Approx(p5.at("w")[i]).epsilon(1e-14));

  ParamSet other;
  other.add("v", Tensor({3}));
  CHECK_THROWS(adam_step(p, other, AdamState::for_params(p), hyper));
}

TEST_CASE("grad_check on a quadratic") {
  ParamSet p;
  p.add("x", Tensor({1}, Vec{3}));
  const auto report = grad_check(
      [](const ParamSet& q) {
        const double x = q.at("x")[0];
        ParamSet g;
        g.add("x", Tensor({1}, Vec{2 * x}));
        return std::make_pair(x * x, g);
      },
      p, 1e-5);
  CHECK(report.max_relative_error < 1e-8);
  CHECK(report.coordinates == 1);

  CHECK_THROWS_AS(grad_check(
                      [](const ParamSet& q) {
                        return std::make_pair(std::log(-1.0 - q.at("x")[0] * 0), q.zeros_like());
                      },
                      p, 1e-5),
                  NumericError);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 2.0) == doctest::Approx(0.5));
}

// Scalar probes: each backward is checked through a random linear functional of its outputs.

TEST_CASE("softmax backward matches finite differences") {
  auto rng = make_rng(21);
  const Vec weights = random_vec(5, rng);
  const auto report = grad_check(
      [&](const ParamSet& q) {
        const auto z = as_vec(q.at("z"));
        const auto p = softmax(z);
        const auto dz = softmax_backward(p, weights);
        return std::make_pair(dot(p, weights), wrap_vec("z", dz));
      },
      wrap_vec("z", random_vec(5, rng)), 1e-5);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("affine backward matches finite differences") {
  auto rng = make_rng(22);
  const Vec probe = random_vec(3, rng);
  ParamSet p;
  p.add("x", Tensor({4}, random_vec(4, rng)));
  p.add("w", random_tensor({4, 3}, rng));
  p.add("b", Tensor({3}, random_vec(3, rng)));
  const auto report = grad_check(
      [&](const ParamSet& q) {
        const auto x = as_vec(q.at("x"));
        const auto y = affine(x, q.at("w"), q.at("b").values());
        auto g = q.zeros_like();
        Vec dx(4, 0.0);
        affine_backward(x, q.at("w"), probe, dx, &g.at("w"), &g.at("b"));
        std::copy(dx.begin(), dx.end(), g.at("x").data());
        return std::make_pair(dot(y, probe), g);
      },
      p, 1e-5);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("attention backward matches finite differences") {
  auto rng = make_rng(23);
  const Vec probe = random_vec(4, rng);
  ParamSet p;
  p.add("q", Tensor({3}, random_vec(3, rng)));
  p.add("f", random_tensor({5, 4}, rng));
  p.add("wq", random_tensor({3, 2}, rng));
  p.add("wk", random_tensor({4, 2}, rng));
  const auto report = grad_check(
      [&](const ParamSet& q) {
        const auto query = as_vec(q.at("q"));
        std::vector<Vec> feats;
        for (std::size_t j = 0; j < 5; ++j) {
          auto r = q.at("f").row(j);
          feats.emplace_back(r.begin(), r.end());
        }
        const auto fwd = attend(query, feats, q.at("wq"), q.at("wk"));
        auto g = q.zeros_like();
        auto back = attend_backward(query, feats, q.at("wq"), q.at("wk"), fwd, probe, g.at("wq"), g.at("wk"), true);
        std::copy(back.dquery.begin(), back.dquery.end(), g.at("q").data());
        for (std::size_t j = 0; j < 5; ++j)
          std::copy(back.dfeatures[j].begin(), back.dfeatures[j].end(), g.at("f").row(j).begin());
        return std::make_pair(dot(fwd.context, probe), g);
      },
      p, 1e-5);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("lstm backward matches finite differences") {
  auto rng = make_rng(24);
  const Vec probe_h = random_vec(3, rng), probe_c = random_vec(3, rng);
  ParamSet p;
  p.add("x", Tensor({2}, random_vec(2, rng)));
  p.add("h", Tensor({3}, random_vec(3, rng)));
  p.add("c", Tensor({3}, random_vec(3, rng)));
  p.add("w", random_tensor({5, 12}, rng));
  p.add("b", Tensor({12}, random_vec(12, rng)));
  const auto report = grad_check(
      [&](const ParamSet& q) {
        auto r = lstm_forward(q.at("x").values(), {as_vec(q.at("h")), as_vec(q.at("c"))}, q.at("w"), q.at("b"));
        auto g = q.zeros_like();
        auto back = lstm_backward(r.cache, q.at("w"), probe_h, probe_c, g.at("w"), g.at("b"));
        std::copy(back.dinput.begin(), back.dinput.end(), g.at("x").data());
        std::copy(back.dh_prev.begin(), back.dh_prev.end(), g.at("h").data());
        std::copy(back.dc_prev.begin(), back.dc_prev.end(), g.at("c").data());
        return std::make_pair(dot(r.next.h, probe_h) + dot(r.next.c, probe_c), g);
      },
      p, 1e-5);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("operations are bit-reproducible") {
  auto rng = make_rng(25);
  const Tensor w = random_tensor({5, 12}, rng), b = random_tensor({12}, rng);
  const Vec x = random_vec(2, rng), h = random_vec(3, rng), c = random_vec(3, rng);
  const auto a = lstm_forward(x, {h, c}, w, b);
  const auto a2 = lstm_forward(x, {h, c}, w, b);
  CHECK(a.next.h == a2.next.h);
  CHECK(a.next.c == a2.next.c);
}

TEST_CASE("dropout masks") {
  const auto none = dropout_mask(10, 0.0, 1, 2, 3);
  for (double v : none) CHECK(v == 1.0);
  const auto m = dropout_mask(1000, 0.5, 1, 2, 3);
  CHECK(m == dropout_mask(1000, 0.5, 1, 2, 3));
  CHECK(m != dropout_mask(1000, 0.5, 1, 2, 4));
  int kept = 0;
  for (double v : m) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v > 0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("glorot bounds") {
  auto rng = make_rng(26);
  const auto t = glorot_uniform({10, 20}, rng);
  const double a = std::sqrt(6.0 / 30.0);
  for (double v : t.values()) CHECK(std::abs(v) <= a);
}
