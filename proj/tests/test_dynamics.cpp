#include <catch_amalgamated.hpp>

#include "support/eigen_oracle.hpp"
#include "tide/dynamics.hpp"
#include "tide/rng.hpp"
#include "tide/spectral.hpp"

using namespace tide;

namespace {
EIState state_from(const Tensor& re, const Tensor& ri) {
  EIState s;
  s.r_e = re;
  s.r_i = ri;
  s.r_e_pre = re;
  return s;
}
}  // namespace

TEST_CASE("euler coefficients derive from the time constants") {
  EulerConfig cfg(20.0, 5.0, 1.0);
  REQUIRE(cfg.alpha_e() == Catch::Approx(0.05).margin(1e-15));
  REQUIRE(cfg.alpha_i() == Catch::Approx(0.20).margin(1e-15));
  REQUIRE(cfg.tau_i < cfg.tau_e);
  REQUIRE_THROWS_AS(EulerConfig(0.0, 5.0, 1.0), std::invalid_argument);
}

TEST_CASE("raw pre-activations match a naive triple-loop oracle") {
  Rng rng(41);
  DaleWeightSet w = make_dale_weights(rng, 6, 2, 4);
  EIState s = state_from(rng.uniform_tensor({6}, 0.0, 1.0), rng.uniform_tensor({2}, 0.0, 1.0));
  Tensor drive = rng.normal_tensor({4});
  auto [he, hi] = compute_preactivations_raw(s, drive, w);

  // independent oracle: plain nested loops over the definition
  for (int i = 0; i < 6; ++i) {
    double v = 0.0;
    for (int j = 0; j < 6; ++j) v += w.w_ee.at(i, j) * s.r_e[j];
    for (int j = 0; j < 2; ++j) v -= w.w_ei.at(i, j) * s.r_i[j];
    for (int j = 0; j < 4; ++j) v += w.w_e_in.at(i, j) * drive[j];
    REQUIRE(he[i] == Catch::Approx(v).margin(1e-12));
  }
  for (int i = 0; i < 2; ++i) {
    double v = 0.0;
    for (int j = 0; j < 6; ++j) v += w.w_ie.at(i, j) * s.r_e[j];
    for (int j = 0; j < 2; ++j) v -= w.w_ii.at(i, j) * s.r_i[j];
    for (int j = 0; j < 4; ++j) v += w.w_i_in.at(i, j) * drive[j];
    REQUIRE(hi[i] == Catch::Approx(v).margin(1e-12));
  }

  SECTION("zero weights and drive give zero pre-activations") {
    DaleWeightSet z;
    z.w_ee = Tensor({6, 6});
    z.w_ei = Tensor({6, 2});
    z.w_ie = Tensor({2, 6});
    z.w_ii = Tensor({2, 2});
    z.w_e_in = Tensor({6, 4});
    z.w_i_in = Tensor({2, 4});
    auto [he0, hi0] = compute_preactivations_raw(s, Tensor({4}), z);
    REQUIRE(he0.norm_inf() == 0.0);
    REQUIRE(hi0.norm_inf() == 0.0);
  }

  SECTION("h_E is independent of r_I when W_EI = 0") {
    DaleWeightSet w2 = w;
    w2.w_ei.fill(0.0);
    EIState s2 = s;
    s2.r_i = rng.uniform_tensor({2}, 0.0, 5.0);
    auto [he1, _a] = compute_preactivations_raw(s, drive, w2);
    auto [he2, _b] = compute_preactivations_raw(s2, drive, w2);
    for (int i = 0; i < 6; ++i) REQUIRE(he1[i] == Catch::Approx(he2[i]).margin(1e-14));
  }
}

TEST_CASE("euler step limits and decay") {
  Rng rng(42);
  EIState s = state_from(rng.uniform_tensor({5}, 0.0, 1.0), rng.uniform_tensor({3}, 0.0, 1.0));
  Tensor he = rng.normal_tensor({5}), hi = rng.normal_tensor({3});
  Tensor ce({5}), ci({3});

  // dt -> 0: state unchanged
  EIState out = euler_step(s, he, hi, ce, ci, EulerConfig(20.0, 5.0, 1e-12));
  for (int i = 0; i < 5; ++i) REQUIRE(out.r_e[i] == Catch::Approx(s.r_e[i]).margin(1e-10));

  // non-positive drive: geometric decay by (1 - alpha)
  Tensor hneg_e({5}, -3.0), hneg_i({3}, -3.0);
  EulerConfig cfg(20.0, 5.0, 1.0);
  EIState d = euler_step(s, hneg_e, hneg_i, ce, ci, cfg);
  for (int i = 0; i < 5; ++i) REQUIRE(d.r_e[i] == Catch::Approx(0.95 * s.r_e[i]).margin(1e-14));
  for (int i = 0; i < 3; ++i) REQUIRE(d.r_i[i] == Catch::Approx(0.80 * s.r_i[i]).margin(1e-14));

  // non-negativity is preserved under arbitrary drive
  for (int trial = 0; trial < 20; ++trial) {
    EIState cur = state_from(rng.uniform_tensor({5}, 0.0, 2.0), rng.uniform_tensor({3}, 0.0, 2.0));
    for (int step = 0; step < 50; ++step) {
      cur = euler_step(cur, rng.normal_tensor({5}), rng.normal_tensor({3}), ce, ci, cfg);
      REQUIRE(cur.r_e.min() >= 0.0);
      REQUIRE(cur.r_i.min() >= 0.0);
    }
  }
}

TEST_CASE("linear simulation: decay, scalar fixed point, convergence") {
  EffectiveMatrix zero;
  zero.n_e = 1;
  zero.n_i = 1;
  zero.w_eff = Tensor({2, 2});
  Tensor b0({2});
  Tensor x0({2});
  x0[0] = 1.0;
  x0[1] = -2.0;
  auto traj = simulate_linear(zero, b0, x0, 0.1, 10);
  for (int k = 0; k <= 10; ++k)
    for (int i = 0; i < 2; ++i)
      REQUIRE(traj[static_cast<size_t>(k)][i] ==
              Catch::Approx(std::pow(0.9, k) * x0[i]).margin(1e-12));

  EffectiveMatrix half;
  half.n_e = 1;
  half.n_i = 0;
  half.w_eff = Tensor({1, 1});
  half.w_eff.at(0, 0) = 0.5;
  Tensor b1({1}, 1.0);
  Tensor s0({1}, 0.0);
  auto t2 = simulate_linear(half, b1, s0, 0.1, 2000);
  REQUIRE(t2.back()[0] == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("fixed point solver") {
  Rng rng(43);
  SECTION("zero effective matrix gives ReLU(b) in one iteration") {
    DaleWeightSet w;
    w.w_ee = Tensor({3, 3});
    w.w_ei = Tensor({3, 2});
    w.w_ie = Tensor({2, 3});
    w.w_ii = Tensor({2, 2});
    w.w_e_in = rng.normal_tensor({3, 4});
    w.w_i_in = rng.normal_tensor({2, 4});
    Tensor drive = rng.normal_tensor({4});
    FixedPointResult res = find_fixed_point(w, drive);
    REQUIRE(res.converged);
    for (int i = 0; i < 3; ++i) {
      double b = 0.0;
      for (int j = 0; j < 4; ++j) b += w.w_e_in.at(i, j) * drive[j];
      REQUIRE(res.x_star[i] == Catch::Approx(relu_scalar(b)).margin(1e-12));
    }
  }

  SECTION("zero drive and zero weights give the origin") {
    DaleWeightSet w;
    w.w_ee = Tensor({2, 2});
    w.w_ei = Tensor({2, 1});
    w.w_ie = Tensor({1, 2});
    w.w_ii = Tensor({1, 1});
    w.w_e_in = Tensor({2, 2});
    w.w_i_in = Tensor({1, 2});
    FixedPointResult res = find_fixed_point(w, Tensor({2}));
    REQUIRE(res.converged);
    REQUIRE(res.x_star.norm_inf() == 0.0);
  }

  SECTION("contraction case matches a long-horizon iteration oracle") {
    DaleWeightSet w = make_dale_weights(rng, 4, 2, 3);
    // scale down until the operator norm certifies contraction
    EffectiveMatrix e = compose_effective(w);
    const double norm = test::dense_operator_norm(e.w_eff);
    const double scalefac = 0.7 / std::max(1.0, norm);
    for (auto* block : {&w.w_ee, &w.w_ei, &w.w_ie, &w.w_ii})
      for (int64_t i = 0; i < block->size(); ++i) (*block)[i] *= scalefac;
    Tensor drive = rng.normal_tensor({3});
    FixedPointResult res = find_fixed_point(w, drive, 1e-12, 10000);
    REQUIRE(res.converged);

    // oracle: iterate the map far beyond the solver's tolerance
    EffectiveMatrix e2 = compose_effective(w);
    Tensor b({6});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) b[i] += w.w_e_in.at(i, j) * drive[j];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) b[4 + i] += w.w_i_in.at(i, j) * drive[j];
    Tensor x({6});
    for (int it = 0; it < 200000; ++it) {
      Tensor nx({6});
      for (int i = 0; i < 6; ++i) {
        double h = b[i];
        for (int j = 0; j < 6; ++j) h += e2.w_eff.at(i, j) * x[j];
        nx[i] = relu_scalar(h);
      }
      x = nx;
    }
    for (int i = 0; i < 6; ++i) REQUIRE(res.x_star[i] == Catch::Approx(x[i]).margin(1e-9));
  }

  SECTION("non-convergence is reported, not thrown") {
    DaleWeightSet w;
    w.w_ee = Tensor({2, 2}, 3.0);  // expansive E-E
    w.w_ei = Tensor({2, 1});
    w.w_ie = Tensor({1, 2});
    w.w_ii = Tensor({1, 1});
    w.w_e_in = Tensor({2, 1}, 1.0);
    w.w_i_in = Tensor({1, 1});
    Tensor drive({1}, 1.0);
    FixedPointResult res = find_fixed_point(w, drive, 1e-10, 50);
    REQUIRE_FALSE(res.converged);
  }
}

TEST_CASE("E-I activity ratio") {
  Tensor re({4}, 1.0), ri({1}, 1.0);
  REQUIRE(rho_ei(re, ri) == Catch::Approx(1.0).margin(1e-7));
  Tensor re2({3}, 1.0), ri2({5}, 1.0);
  REQUIRE(rho_ei(re2, ri2) == Catch::Approx(1.0).margin(1e-7));
  Tensor zero_i({5});
  REQUIRE(rho_ei(re, zero_i) == Catch::Approx(1.0 / 1e-8).epsilon(1e-6));
  REQUIRE(std::isfinite(rho_ei(re, zero_i)));
}

TEST_CASE("forward Euler is first-order accurate on the softplus dynamics") {
  // smooth-activation variant of the recurrence, unnormalized
  Rng rng(44);
  DaleWeightSet w = make_dale_weights(rng, 4, 2, 2);
  EffectiveMatrix e = compose_effective(w);
  const double norm = test::dense_operator_norm(e.w_eff);
  for (int64_t i = 0; i < e.w_eff.size(); ++i) e.w_eff[i] *= 0.8 / std::max(1.0, norm);
  e.n_e = 4;
  e.n_i = 2;
  Tensor b = rng.uniform_tensor({6}, -0.5, 0.5);
  Tensor x0 = rng.uniform_tensor({6}, 0.0, 1.0);
  const double horizon = 32.0;

  auto terminal = [&](double dt) {
    EulerConfig cfg(20.0, 5.0, dt);
    auto traj = simulate_wilson_cowan(e, b, x0, cfg, static_cast<int>(horizon / dt),
                                      softplus_scalar);
    return traj.back();
  };
  Tensor ref = terminal(1.0 / 64.0);
  double prev_err = -1.0;
  for (double dt : {1.0, 0.5, 0.25}) {
    Tensor xt = terminal(dt);
    double err = 0.0;
    for (int i = 0; i < 6; ++i) err += (xt[i] - ref[i]) * (xt[i] - ref[i]);
    err = std::sqrt(err);
    if (prev_err > 0.0) {
      const double ratio = prev_err / err;
      REQUIRE(ratio > 1.7);
      REQUIRE(ratio < 2.3);
    }
    prev_err = err;
  }
}

TEST_CASE("isolated-population Schur bounds") {
  // rank-one positive matrices pin the Perron eigenvalue exactly
  const int n = 12;
  Rng rng(45);
  Tensor v = rng.uniform_tensor({n}, 0.2, 1.0);
  double vn = v.norm_fro();
  for (int i = 0; i < n; ++i) v[i] /= vn;

  auto iterate_e = [&](double lam, double alpha, int steps) {
    Tensor x = rng.uniform_tensor({n}, 0.1, 1.0);
    const double x0n = x.norm_fro();
    for (int s = 0; s < steps; ++s) {
      Tensor nx({n});
      double vx = 0.0;
      for (int i = 0; i < n; ++i) vx += v[i] * x[i];
      for (int i = 0; i < n; ++i) nx[i] = (1.0 - alpha) * x[i] + alpha * lam * v[i] * vx;
      x = nx;
      if (!x.all_finite()) return 1e300;
    }
    return x.norm_fro() / x0n;
  };
  auto iterate_i = [&](double lam, double alpha, int steps) {
    Tensor x = rng.uniform_tensor({n}, 0.1, 1.0);
    const double x0n = x.norm_fro();
    for (int s = 0; s < steps; ++s) {
      Tensor nx({n});
      double vx = 0.0;
      for (int i = 0; i < n; ++i) vx += v[i] * x[i];
      for (int i = 0; i < n; ++i) nx[i] = (1.0 - alpha) * x[i] - alpha * lam * v[i] * vx;
      x = nx;
      if (!x.all_finite()) return 1e300;
    }
    return x.norm_fro() / x0n;
  };

  // E-only: contracts below the unit Perron bound, diverges above it
  REQUIRE(iterate_e(0.9, 0.05, 6000) < 1e-3);
  REQUIRE(iterate_e(1.1, 0.05, 6000) > 1e3);
  // I-only at alpha_I = 0.2: the binding condition is lambda_P < 9
  REQUIRE(iterate_i(8.0, 0.20, 600) < 1e-3);
  REQUIRE(iterate_i(10.0, 0.20, 600) > 1e3);
}
