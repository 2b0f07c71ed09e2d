#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tide/ops.hpp"
#include "tide/readout.hpp"

namespace tide {

// Loss weights and curriculum schedule; defaults follow the MNIST-class
// configuration with the spectral weight enabled at its published value.
struct LossWeights {
  double lambda_ei = 1e-2;
  double lambda_game = 1e-3;
  double lambda_sync = 1e-4;
  double lambda_spec = 1e-1;
  double tau_ee = 15.0;
  double tau_ii = 7.0;
  double rho_star = 4.0;
  long long t_s = 1000;
  long long t_w = 5000;
};

// Cosine warm-up coefficient: 0 before t_s, half-cosine ramp of length t_w,
// then 1.
inline double curriculum(long long step, long long t_s, long long t_w) {
  if (t_w <= 0) throw std::invalid_argument("curriculum: t_w must be positive");
  if (step < t_s) return 0.0;
  if (step > t_s + t_w) return 1.0;
  const double u = static_cast<double>(step - t_s) / static_cast<double>(t_w);
  return 0.5 * (1.0 - std::cos(3.14159265358979323846 * u));
}

// Index selection for the dual task loss; ties resolve to the smallest t.
struct TaskSelection {
  std::vector<int> t_min;   // per sample
  std::vector<int> t_cert;  // per sample
};

inline TaskSelection select_task_steps(const std::vector<std::vector<double>>& ce_values,
                                       const std::vector<std::vector<double>>& cert_values) {
  const int T = static_cast<int>(ce_values.size());
  const int B = static_cast<int>(ce_values.at(0).size());
  TaskSelection sel;
  sel.t_min.assign(static_cast<size_t>(B), 0);
  sel.t_cert.assign(static_cast<size_t>(B), 0);
  for (int b = 0; b < B; ++b) {
    for (int t = 1; t < T; ++t) {
      if (ce_values[static_cast<size_t>(t)][static_cast<size_t>(b)] <
          ce_values[static_cast<size_t>(sel.t_min[static_cast<size_t>(b)])][static_cast<size_t>(b)])
        sel.t_min[static_cast<size_t>(b)] = t;
      if (cert_values[static_cast<size_t>(t)][static_cast<size_t>(b)] >
          cert_values[static_cast<size_t>(sel.t_cert[static_cast<size_t>(b)])]
                     [static_cast<size_t>(b)])
        sel.t_cert[static_cast<size_t>(b)] = t;
    }
  }
  return sel;
}

// L_task = 1/2 CE(o^(t_min), y) + 1/2 CE(o^(t_cert), y), batch-mean.
// The selected indices are constants during differentiation.
inline Var task_loss(Tape& t, const std::vector<Var>& ce_steps, const TaskSelection& sel) {
  const int T = static_cast<int>(ce_steps.size());
  const int B = static_cast<int>(t.val(ce_steps.at(0)).size());
  Var total = t.constant(Tensor::scalar(0.0));
  for (int step = 0; step < T; ++step) {
    Tensor w({B});
    bool any = false;
    for (int b = 0; b < B; ++b) {
      double v = 0.0;
      if (sel.t_min[static_cast<size_t>(b)] == step) v += 0.5;
      if (sel.t_cert[static_cast<size_t>(b)] == step) v += 0.5;
      if (v != 0.0) any = true;
      w[b] = v / B;
    }
    if (!any) continue;
    total = ops::add(t, total, ops::dot(t, ce_steps[static_cast<size_t>(step)], t.constant(w)));
  }
  return total;
}

// L_EI = clip(rho - rho*, -50, 50)^2, batch-mean.
inline Var ei_loss(Tape& t, Var rho, double rho_star) {
  Var d = ops::clamp(t, ops::add_const(t, rho, -rho_star), -50.0, 50.0);
  return ops::mean(t, ops::square(t, d));
}

namespace detail {
// Denominator guard: magnitude floor at 0.1 keeps the quadratic energies
// bounded and non-negative at the regime boundary.
inline Var guarded_denominator(Tape& t, Var x, double floor_mag = 0.1) {
  return ops::clamp(t, ops::abs(t, x), floor_mag, std::numeric_limits<double>::infinity());
}
}  // namespace detail

// Population-energy game loss: per-neuron quadratic energies in the
// consensual regime, population means reduced to scalars, size-normalized
// and clipped at 100.
inline Var game_loss_energy(Tape& t, Var r_e, Var r_i, Var u_e, Var u_i, Var w_ee, Var w_ei,
                            Var w_ie, Var w_ii, double d_e, double d_i, int d_model) {
  Var wbar_ee = ops::diag_mean(t, w_ee);
  Var wbar_ii = ops::diag_mean(t, w_ii);
  Var wbar_ei = ops::mean(t, w_ei);
  Var wbar_ie = ops::mean(t, w_ie);
  Var rbar_e = ops::mean_rows(t, r_e);  // [B]
  Var rbar_i = ops::mean_rows(t, r_i);  // [B]

  // E: [(wbar_ee - d_e) r_E - wbar_ei rbar_I + u_E]^2 / (2 |d_e - wbar_ee|)
  Var coef_e = ops::add_const(t, wbar_ee, -d_e);                  // scalar
  Var num_e = ops::add(t, ops::mul_scalar(t, r_e, coef_e), u_e);  // [B,nE]
  num_e = ops::sub_colvec(t, num_e, ops::mul_scalar(t, rbar_i, wbar_ei));
  Var den_e = ops::scale(
      t, detail::guarded_denominator(t, ops::add_const(t, ops::neg(t, wbar_ee), d_e)), 2.0);
  Var energy_e = ops::div_scalar(t, ops::mean_rows(t, ops::square(t, num_e)), den_e);  // [B]

  // I: [wbar_ie rbar_E - (wbar_ii + d_i) r_I + u_I]^2 / (2 (d_i + wbar_ii))
  Var coef_i = ops::add_const(t, wbar_ii, d_i);
  Var num_i = ops::sub(t, u_i, ops::mul_scalar(t, r_i, coef_i));  // [B,nI]
  num_i = ops::add(t, num_i,
                   ops::broadcast_row_from_col(t, ops::mul_scalar(t, rbar_e, wbar_ie),
                                               t.val(r_i).dim(1)));
  Var den_i =
      ops::scale(t, detail::guarded_denominator(t, ops::add_const(t, wbar_ii, d_i)), 2.0);
  Var energy_i = ops::div_scalar(t, ops::mean_rows(t, ops::square(t, num_i)), den_i);  // [B]

  Var bracket = ops::mean(t, ops::add(t, energy_e, energy_i));
  return ops::clamp(t, ops::scale(t, bracket, 1.0 / d_model), -1e300, 100.0);
}

// Residual variant: batch-mean of (|r_E - ReLU(h_E)|^2 + |r_I - ReLU(h_I)|^2)
// / d_model, clipped at 100.
inline Var game_loss_residual(Tape& t, Var r_e, Var r_i, Var h_e, Var h_i, int d_model) {
  Var res_e = ops::sum_rows(t, ops::square(t, ops::sub(t, r_e, ops::relu(t, h_e))));
  Var res_i = ops::sum_rows(t, ops::square(t, ops::sub(t, r_i, ops::relu(t, h_i))));
  Var per_sample = ops::scale(t, ops::add(t, res_e, res_i), 1.0 / d_model);
  return ops::clamp(t, ops::mean(t, per_sample), -1e300, 100.0);
}

// L_sync = |z^(T)|^2 / d_sync, batch-mean.
inline Var sync_loss(Tape& t, Var z_final) {
  const int d_sync = t.val(z_final).dim(1);
  return ops::mean(t, ops::scale(t, ops::sum_rows(t, ops::square(t, z_final)), 1.0 / d_sync));
}

// L_spec = ReLU(lp_EE - tau_EE)^2 + ReLU(lp_II - tau_II)^2.
inline Var spec_loss(Tape& t, Var lp_ee, Var lp_ii, const LossWeights& w) {
  Var a = ops::square(t, ops::relu(t, ops::add_const(t, lp_ee, -w.tau_ee)));
  Var b = ops::square(t, ops::relu(t, ops::add_const(t, lp_ii, -w.tau_ii)));
  return ops::add(t, a, b);
}

// L = L_task + w(step) (lam_EI L_EI + lam_game L_game + lam_sync L_sync)
//     + lam_spec L_spec.  The spectral term is not curriculum-gated.
inline Var total_loss(Tape& t, Var l_task, Var l_ei, Var l_game, Var l_sync, Var l_spec,
                      const LossWeights& w, long long step) {
  const double warm = curriculum(step, w.t_s, w.t_w);
  Var aux = ops::add(
      t, ops::scale(t, l_ei, w.lambda_ei),
      ops::add(t, ops::scale(t, l_game, w.lambda_game), ops::scale(t, l_sync, w.lambda_sync)));
  Var total = ops::add(t, l_task, ops::scale(t, aux, warm));
  if (w.lambda_spec != 0.0 && l_spec.valid())
    total = ops::add(t, total, ops::scale(t, l_spec, w.lambda_spec));
  return total;
}

}  // namespace tide
