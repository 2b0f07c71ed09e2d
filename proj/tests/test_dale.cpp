#include <catch_amalgamated.hpp>

#include "support/finite_diff.hpp"
#include "tide/dale.hpp"
#include "tide/rng.hpp"

using namespace tide;

TEST_CASE("projection clamps negatives elementwise") {
  Tensor w({2, 2});
  w.at(0, 0) = 1.0;
  w.at(0, 1) = -2.0;
  w.at(1, 0) = 0.5;
  w.at(1, 1) = 0.0;
  Tensor p = project_dale(w);
  REQUIRE(p.at(0, 0) == 1.0);
  REQUIRE(p.at(0, 1) == 0.0);
  REQUIRE(p.at(1, 0) == 0.5);
  REQUIRE(p.at(1, 1) == 0.0);
}

TEST_CASE("projection is idempotent and non-expansive") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = rng.normal_tensor({6, 5});
    Tensor b = rng.normal_tensor({6, 5});
    Tensor pa = project_dale(a);
    Tensor ppa = project_dale(pa);
    for (int64_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i] == ppa[i]);
    Tensor pb = project_dale(b);
    double d_proj = 0.0, d_orig = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
      d_proj += (pa[i] - pb[i]) * (pa[i] - pb[i]);
      d_orig += (a[i] - b[i]) * (a[i] - b[i]);
    }
    REQUIRE(d_proj <= d_orig + 1e-15);
  }
}

TEST_CASE("projection is the Euclidean projection onto the orthant") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor w = rng.normal_tensor({4, 4});
    Tensor p = project_dale(w);
    double best = 0.0;
    for (int64_t i = 0; i < w.size(); ++i) best += (w[i] - p[i]) * (w[i] - p[i]);
    for (int probe = 0; probe < 20; ++probe) {
      Tensor q = p;
      for (int64_t i = 0; i < q.size(); ++i) q[i] = std::max(0.0, q[i] + 0.3 * rng.normal());
      double dist = 0.0;
      for (int64_t i = 0; i < w.size(); ++i) dist += (w[i] - q[i]) * (w[i] - q[i]);
      REQUIRE(best <= dist + 1e-12);
    }
  }
}

TEST_CASE("effective matrix has the fixed block sign structure") {
  DaleWeightSet w;
  w.w_ee = Tensor::scalar(2.0).reshaped({1, 1});
  w.w_ei = Tensor::scalar(3.0).reshaped({1, 1});
  w.w_ie = Tensor::scalar(1.0).reshaped({1, 1});
  w.w_ii = Tensor::scalar(4.0).reshaped({1, 1});
  EffectiveMatrix e = compose_effective(w);
  REQUIRE(e.w_eff.at(0, 0) == 2.0);
  REQUIRE(e.w_eff.at(0, 1) == -3.0);
  REQUIRE(e.w_eff.at(1, 0) == 1.0);
  REQUIRE(e.w_eff.at(1, 1) == -4.0);

  DaleWeightSet z;
  z.w_ee = Tensor({2, 2});
  z.w_ei = Tensor({2, 1});
  z.w_ie = Tensor({1, 2});
  z.w_ii = Tensor({1, 1});
  REQUIRE(compose_effective(z).w_eff.norm_inf() == 0.0);
}

TEST_CASE("effective matrix signs match the sign mask and blocks round-trip") {
  Rng rng(23);
  DaleWeightSet w = make_dale_weights(rng, 4, 1, 3);
  EffectiveMatrix e = compose_effective(w);
  SignMask mask(4, 1);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      if (e.w_eff.at(r, c) != 0.0)
        REQUIRE(e.w_eff.at(r, c) * mask.mask.at(r, c) > 0.0);
    }
  DaleWeightSet back = split_effective(e);
  for (int64_t i = 0; i < w.w_ee.size(); ++i) REQUIRE(back.w_ee[i] == w.w_ee[i]);
  for (int64_t i = 0; i < w.w_ei.size(); ++i) REQUIRE(back.w_ei[i] == w.w_ei[i]);
  for (int64_t i = 0; i < w.w_ie.size(); ++i) REQUIRE(back.w_ie[i] == w.w_ie[i]);
  for (int64_t i = 0; i < w.w_ii.size(); ++i) REQUIRE(back.w_ii[i] == w.w_ii[i]);
}

TEST_CASE("dimension mismatch between blocks is rejected") {
  DaleWeightSet w;
  w.w_ee = Tensor({2, 2});
  w.w_ei = Tensor({1, 1});  // wrong
  w.w_ie = Tensor({1, 2});
  w.w_ii = Tensor({1, 1});
  REQUIRE_THROWS_AS(compose_effective(w), std::invalid_argument);
}

TEST_CASE("projected gradient step clamps and preserves fixed points") {
  Tensor w({1, 1}, 1.0);
  Tensor g({1, 1}, 2.0);
  REQUIRE(projected_gradient_step(w, g, 1.0)[0] == 0.0);
  Tensor zero({1, 1}, 0.0);
  REQUIRE(projected_gradient_step(w, zero, 0.5)[0] == 1.0);
}

TEST_CASE("projected gradient contracts at exactly (1 - mu/L) on a quadratic") {
  // Quadratic over vec(W): H = L I + (mu - L) v v^T with positive unit v, so
  // an error along v contracts by exactly (1 - mu/L) per step at lr = 1/L.
  const int n = 10;
  const double mu = 1.0, L = 4.0;
  Tensor v({n * n}, 1.0 / n);
  Tensor w_star({n, n}, 0.0);  // the origin lies in the orthant
  Tensor w({n, n});
  const double c0 = 5.0;
  for (int64_t i = 0; i < w.size(); ++i) w[i] = w_star[i] + c0 * v[i];

  auto grad = [&](const Tensor& wk) {
    Tensor e({n * n});
    for (int64_t i = 0; i < e.size(); ++i) e[i] = wk[i] - w_star[i];
    double ve = 0.0;
    for (int64_t i = 0; i < e.size(); ++i) ve += v[i] * e[i];
    Tensor g({n, n});
    for (int64_t i = 0; i < e.size(); ++i) g[i] = L * e[i] + (mu - L) * ve * v[i];
    return g;
  };

  double prev_err = c0;  // |e_0| = c0 along unit v
  for (int k = 0; k < 50; ++k) {
    w = projected_gradient_step(w, grad(w), 1.0 / L);
    double err = 0.0;
    for (int64_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - w_star[i];
      err += d * d;
    }
    err = std::sqrt(err);
    REQUIRE(std::abs(err / prev_err - (1.0 - mu / L)) < 1e-10);
    REQUIRE(w.min() >= 0.0);
    // closed-form iterate
    const double ck = c0 * std::pow(1.0 - mu / L, k + 1);
    for (int64_t i = 0; i < w.size(); ++i)
      REQUIRE(w[i] == Catch::Approx(w_star[i] + ck * v[i]).margin(1e-12));
    prev_err = err;
  }
}
