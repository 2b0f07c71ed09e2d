#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "tide/dale.hpp"
#include "tide/ops.hpp"
#include "tide/tensor.hpp"

namespace tide {

struct SpectralReport {
  double perron_ee = 0.0;
  double perron_ii = 0.0;
  double lds_lambda_max = 0.0;
  bool is_lds = false;
  double sigma_max_ei = 0.0;
  double sigma_max_ie = 0.0;
  long long step = 0;
};

namespace detail {

inline Tensor matvec_plain(const Tensor& w, const Tensor& v) {
  const int m = w.dim(0), n = w.dim(1);
  Tensor y({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += w.at(i, j) * v[j];
    y[i] = s;
  }
  return y;
}

}  // namespace detail

// Sum-ratio power iteration for the Perron eigenvalue of a non-negative
// square matrix: v0 = 1/n, K normalized iterations, then 1^T W v / 1^T v.
// An all-zero (or nilpotent-collapse) iterate returns 0.
inline double perron_sum_ratio(const Tensor& w, int k_iters = 10) {
  if (w.ndim() != 2 || w.dim(0) != w.dim(1))
    throw std::invalid_argument("perron_sum_ratio: matrix not square");
  const int n = w.dim(0);
  Tensor v({n}, 1.0 / n);
  for (int k = 0; k < k_iters; ++k) {
    Tensor wv = detail::matvec_plain(w, v);
    const double norm = wv.norm_fro();
    if (norm == 0.0) return 0.0;
    for (int i = 0; i < n; ++i) v[i] = wv[i] / norm;
  }
  Tensor wv = detail::matvec_plain(w, v);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    num += wv[i];
    den += v[i];
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

// Differentiable version of the estimator, recorded on the tape; same
// arithmetic as the plain path.
inline Var perron_sum_ratio(Tape& t, Var w, int k_iters = 10) {
  const Tensor& wv = t.val(w);
  if (wv.ndim() != 2 || wv.dim(0) != wv.dim(1))
    throw std::invalid_argument("perron_sum_ratio: matrix not square");
  const int n = wv.dim(0);
  Var v = t.constant(Tensor({n}, 1.0 / n));
  for (int k = 0; k < k_iters; ++k) {
    Var wvk = ops::matvec(t, w, v);
    const double norm = t.val(wvk).norm_fro();
    if (norm == 0.0) return t.constant(Tensor::scalar(0.0));
    Var nv = ops::sqrt(t, ops::dot(t, wvk, wvk));
    v = ops::div_scalar(t, wvk, nv);
  }
  Var ones = t.constant(Tensor({n}, 1.0));
  Var wvk = ops::matvec(t, w, v);
  Var num = ops::dot(t, ones, wvk);
  Var den = ops::dot(t, ones, v);
  if (t.val(den).item() == 0.0) return t.constant(Tensor::scalar(0.0));
  return ops::div(t, num, den);
}

// Largest eigenvalue of a symmetric matrix by shifted power iteration.
// Monitor-path primitive; the dense oracle lives in the test suite.
inline double symmetric_lambda_max(const Tensor& s, int max_iters = 200, double tol = 1e-10) {
  const int n = s.dim(0);
  // Gershgorin shift makes S + cI positive semi-definite.
  double shift = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) row += std::abs(s.at(i, j));
    shift = std::max(shift, row - s.at(i, i));
  }
  Tensor v({n});
  for (int i = 0; i < n; ++i) v[i] = 1.0 / std::sqrt(static_cast<double>(n)) + 1e-3 * (i % 7);
  double vnorm = v.norm_fro();
  for (int i = 0; i < n; ++i) v[i] /= vnorm;
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Tensor sv = detail::matvec_plain(s, v);
    for (int i = 0; i < n; ++i) sv[i] += shift * v[i];
    const double norm = sv.norm_fro();
    if (norm == 0.0) return -shift;
    double rayleigh = 0.0;
    for (int i = 0; i < n; ++i) rayleigh += v[i] * sv[i];
    const double next = rayleigh - shift;
    for (int i = 0; i < n; ++i) v[i] = sv[i] / norm;
    if (it > 0 && std::abs(next - lambda) < tol) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

inline double symmetric_lambda_min(const Tensor& s, int max_iters = 200, double tol = 1e-10) {
  Tensor neg = s;
  for (int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  return -symmetric_lambda_max(neg, max_iters, tol);
}

// Practical LDS test with D = I: lambda_max(0.5 (W + W^T) - I) < 0.
// No gradients flow; this is a monitor.
struct LdsResult {
  bool is_lds = false;
  double lambda_max = 0.0;
};

inline LdsResult lds_test(const EffectiveMatrix& e) {
  const Tensor& w = e.w_eff;
  const int n = w.dim(0);
  Tensor s({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s.at(i, j) = 0.5 * (w.at(i, j) + w.at(j, i)) - (i == j ? 1.0 : 0.0);
  LdsResult r;
  r.lambda_max = symmetric_lambda_max(s);
  r.is_lds = r.lambda_max < 0.0;
  return r;
}

// Step-size bound for Schur stability of explicit Euler: all continuous
// eigenvalues must satisfy Re < 0; the bound is min_i 2 Re(-mu_i)/|mu_i|^2.
inline double schur_dt_bound(const std::vector<std::complex<double>>& eigenvalues) {
  if (eigenvalues.empty()) throw std::invalid_argument("schur_dt_bound: empty spectrum");
  double bound = std::numeric_limits<double>::infinity();
  for (const auto& mu : eigenvalues) {
    if (mu.real() >= 0.0)
      throw std::domain_error("schur_dt_bound: spectrum not continuous-time stable");
    bound = std::min(bound, 2.0 * (-mu.real()) / std::norm(mu));
  }
  return bound;
}

// V(x) = 0.5 (x - x*)^T D (x - x*) with positive diagonal D.
inline double lyapunov_value(const Tensor& x, const Tensor& x_star, const Tensor& d_diag) {
  check_same_shape(x, x_star, "lyapunov_value");
  if (d_diag.size() != x.size()) throw std::invalid_argument("lyapunov_value: diagonal size");
  double v = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    if (d_diag[i] <= 0.0) throw std::invalid_argument("lyapunov_value: diagonal must be positive");
    const double e = x[i] - x_star[i];
    v += 0.5 * d_diag[i] * e * e;
  }
  return v;
}

// 20-step power iteration on W^T W; monitor for the off-diagonal blocks.
inline double sigma_max_estimate(const Tensor& w, int iters = 20) {
  const int m = w.dim(0), n = w.dim(1);
  Tensor v({n}, 1.0 / std::sqrt(static_cast<double>(n)));
  double sigma2 = 0.0;
  for (int it = 0; it < iters; ++it) {
    Tensor wv({m});
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += w.at(i, j) * v[j];
      wv[i] = s;
    }
    Tensor wtwv({n});
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += w.at(i, j) * wv[i];
      wtwv[j] = s;
    }
    const double norm = wtwv.norm_fro();
    if (norm == 0.0) return 0.0;
    sigma2 = 0.0;
    for (int j = 0; j < n; ++j) sigma2 += v[j] * wtwv[j];
    for (int j = 0; j < n; ++j) v[j] = wtwv[j] / norm;
  }
  return std::sqrt(std::max(0.0, sigma2));
}

inline SpectralReport spectral_report(const DaleWeightSet& w, long long step) {
  SpectralReport r;
  r.step = step;
  r.perron_ee = perron_sum_ratio(w.w_ee);
  r.perron_ii = perron_sum_ratio(w.w_ii);
  const LdsResult lds = lds_test(compose_effective(w));
  r.lds_lambda_max = lds.lambda_max;
  r.is_lds = lds.is_lds;
  r.sigma_max_ei = sigma_max_estimate(w.w_ei);
  r.sigma_max_ie = sigma_max_estimate(w.w_ie);
  return r;
}

}  // namespace tide
