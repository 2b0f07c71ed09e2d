#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "tide/dale.hpp"
#include "tide/tensor.hpp"

namespace tide {

// Euler coefficients for the two-population recurrence. Defaults follow the
// biological regime tau_I < tau_E with a 1 ms step.
struct EulerConfig {
  double tau_e = 20.0;
  double tau_i = 5.0;
  double dt = 1.0;

  EulerConfig() = default;
  EulerConfig(double te, double ti, double step) : tau_e(te), tau_i(ti), dt(step) {
    if (te <= 0 || ti <= 0 || step <= 0) throw std::invalid_argument("EulerConfig: non-positive");
  }
  double alpha_e() const { return dt / tau_e; }
  double alpha_i() const { return dt / tau_i; }
};

// Excitatory/inhibitory rates for one stream; r_e_pre holds the pre-WTA copy.
struct EIState {
  Tensor r_e;      // [n_E]
  Tensor r_i;      // [n_I]
  Tensor r_e_pre;  // [n_E]
};

inline double relu_scalar(double v) { return v > 0 ? v : 0.0; }
inline double softplus_scalar(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

// Raw (pre-normalization) Wilson-Cowan pre-activations:
// h_E = W_EE r_E - W_EI r_I + W_E^in a, and analogously for I.
// Inhibition enters through the explicit minus sign, never negative weights.
inline std::pair<Tensor, Tensor> compute_preactivations_raw(const EIState& s, const Tensor& drive,
                                                            const DaleWeightSet& w) {
  const int ne = w.n_e(), ni = w.n_i();
  if (s.r_e.size() != ne || s.r_i.size() != ni)
    throw std::invalid_argument("compute_preactivations: state/weight dimension mismatch");
  if (drive.size() != w.w_e_in.dim(1))
    throw std::invalid_argument("compute_preactivations: drive width mismatch");
  Tensor h_e({ne}), h_i({ni});
  for (int i = 0; i < ne; ++i) {
    double v = 0.0;
    for (int j = 0; j < ne; ++j) v += w.w_ee.at(i, j) * s.r_e[j];
    for (int j = 0; j < ni; ++j) v -= w.w_ei.at(i, j) * s.r_i[j];
    for (int j = 0; j < drive.size(); ++j) v += w.w_e_in.at(i, static_cast<int>(j)) * drive[j];
    h_e[i] = v;
  }
  for (int i = 0; i < ni; ++i) {
    double v = 0.0;
    for (int j = 0; j < ne; ++j) v += w.w_ie.at(i, j) * s.r_e[j];
    for (int j = 0; j < ni; ++j) v -= w.w_ii.at(i, j) * s.r_i[j];
    for (int j = 0; j < drive.size(); ++j) v += w.w_i_in.at(i, static_cast<int>(j)) * drive[j];
    h_i[i] = v;
  }
  return {h_e, h_i};
}

// Per-population RMS normalization with a learnable gain vector.
inline Tensor rmsnorm(const Tensor& h, const Tensor& gain, double eps = 1e-6) {
  if (gain.size() != h.size()) throw std::invalid_argument("rmsnorm: gain size mismatch");
  double ms = 0.0;
  for (int64_t i = 0; i < h.size(); ++i) ms += h[i] * h[i];
  ms /= static_cast<double>(h.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  Tensor out(h.shape());
  for (int64_t i = 0; i < h.size(); ++i) out[i] = h[i] * inv * gain[i];
  return out;
}

inline std::pair<Tensor, Tensor> compute_preactivations(const EIState& s, const Tensor& drive,
                                                        const DaleWeightSet& w,
                                                        const Tensor& gain_e, const Tensor& gain_i,
                                                        double eps = 1e-6) {
  auto [he, hi] = compute_preactivations_raw(s, drive, w);
  return {rmsnorm(he, gain_e, eps), rmsnorm(hi, gain_i, eps)};
}

// r^(t) = (1 - alpha) r^(t-1) + alpha ReLU(h + nlm_corr), per population.
inline EIState euler_step(const EIState& s, const Tensor& h_e, const Tensor& h_i,
                          const Tensor& corr_e, const Tensor& corr_i, const EulerConfig& cfg) {
  const double ae = cfg.alpha_e(), ai = cfg.alpha_i();
  EIState out;
  out.r_e = Tensor(s.r_e.shape());
  out.r_i = Tensor(s.r_i.shape());
  for (int64_t i = 0; i < s.r_e.size(); ++i)
    out.r_e[i] = (1.0 - ae) * s.r_e[i] + ae * relu_scalar(h_e[i] + corr_e[i]);
  for (int64_t i = 0; i < s.r_i.size(); ++i)
    out.r_i[i] = (1.0 - ai) * s.r_i[i] + ai * relu_scalar(h_i[i] + corr_i[i]);
  out.r_e_pre = out.r_e;
  return out;
}

// Explicit-Euler trajectory of the linearized game dynamics
// xdot = (W_eff - I) x + b. No activation is applied. Returns steps+1 states
// including x0.
inline std::vector<Tensor> simulate_linear(const EffectiveMatrix& e, const Tensor& b,
                                           const Tensor& x0, double dt, int steps) {
  const int n = e.w_eff.dim(0);
  if (b.size() != n || x0.size() != n) throw std::invalid_argument("simulate_linear: size mismatch");
  std::vector<Tensor> traj;
  traj.reserve(static_cast<size_t>(steps) + 1);
  Tensor x = x0;
  traj.push_back(x);
  for (int k = 0; k < steps; ++k) {
    Tensor nx({n});
    for (int i = 0; i < n; ++i) {
      double dx = -x[i] + b[i];
      for (int j = 0; j < n; ++j) dx += e.w_eff.at(i, j) * x[j];
      nx[i] = x[i] + dt * dx;
    }
    x = nx;
    traj.push_back(x);
  }
  return traj;
}

// Full nonlinear Wilson-Cowan Euler recurrence on the stacked state:
// x <- x + dt * tau^-1 (-x + phi(W_eff x + b)). Used by the discretization
// order tests and the diagnostics CLI.
inline std::vector<Tensor> simulate_wilson_cowan(const EffectiveMatrix& e, const Tensor& b,
                                                 const Tensor& x0, const EulerConfig& cfg,
                                                 int steps,
                                                 const std::function<double(double)>& phi) {
  const int n = e.w_eff.dim(0);
  const int ne = e.n_e;
  std::vector<Tensor> traj;
  traj.reserve(static_cast<size_t>(steps) + 1);
  Tensor x = x0;
  traj.push_back(x);
  for (int k = 0; k < steps; ++k) {
    Tensor nx({n});
    for (int i = 0; i < n; ++i) {
      double h = b[i];
      for (int j = 0; j < n; ++j) h += e.w_eff.at(i, j) * x[j];
      const double tau = i < ne ? cfg.tau_e : cfg.tau_i;
      nx[i] = x[i] + cfg.dt / tau * (-x[i] + phi(h));
    }
    x = nx;
    traj.push_back(x);
  }
  return traj;
}

struct FixedPointResult {
  Tensor x_star;
  bool converged = false;
  int iterations = 0;
};

// Picard iteration of the fixed-point equation x = ReLU(W_eff x + b) with
// b = [W_E^in a; W_I^in a]. Non-convergence is reported, not thrown.
inline FixedPointResult find_fixed_point(const DaleWeightSet& w, const Tensor& drive,
                                         double tol = 1e-8, int max_iter = 10000) {
  const EffectiveMatrix e = compose_effective(w);
  const int n = e.w_eff.dim(0);
  Tensor b({n});
  for (int i = 0; i < w.n_e(); ++i) {
    double v = 0.0;
    for (int64_t j = 0; j < drive.size(); ++j) v += w.w_e_in.at(i, static_cast<int>(j)) * drive[j];
    b[i] = v;
  }
  for (int i = 0; i < w.n_i(); ++i) {
    double v = 0.0;
    for (int64_t j = 0; j < drive.size(); ++j) v += w.w_i_in.at(i, static_cast<int>(j)) * drive[j];
    b[w.n_e() + i] = v;
  }
  FixedPointResult res;
  Tensor x({n});
  for (int it = 1; it <= max_iter; ++it) {
    Tensor nx({n});
    double delta = 0.0;
    for (int i = 0; i < n; ++i) {
      double h = b[i];
      for (int j = 0; j < n; ++j) h += e.w_eff.at(i, j) * x[j];
      nx[i] = relu_scalar(h);
      delta = std::max(delta, std::abs(nx[i] - x[i]));
    }
    x = nx;
    res.iterations = it;
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }
  res.x_star = x;
  return res;
}

// Population-normalized E-I activity ratio, evaluated on the pre-WTA
// excitatory state: (|r_E^pre|_1 / n_E) / (|r_I|_1 / n_I + eps).
inline double rho_ei(const Tensor& r_e_pre, const Tensor& r_i, double eps = 1e-8) {
  double se = 0.0, si = 0.0;
  for (int64_t i = 0; i < r_e_pre.size(); ++i) se += std::abs(r_e_pre[i]);
  for (int64_t i = 0; i < r_i.size(); ++i) si += std::abs(r_i[i]);
  const double ne = static_cast<double>(r_e_pre.size());
  const double ni = static_cast<double>(r_i.size());
  return (se / ne) / (si / ni + eps);
}

inline double rho_ei(const EIState& s, double eps = 1e-8) { return rho_ei(s.r_e_pre, s.r_i, eps); }

}  // namespace tide
