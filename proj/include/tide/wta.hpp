#pragma once

#include <cmath>
#include <string>

#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

// Winner-take-all sparsification via a nested E-I feedback loop. The lateral
// weights obey Dale's principle; gamma is clamped at 0.01 from below.
struct WtaParams {
  Parameter w_ei_lat;  // [n_I_lat, n_E]
  Parameter w_ie_lat;  // [n_E, n_I_lat]
  Parameter gamma;     // [1]
  int k_max = 5;
  double tol = 1e-4;

  void init(Rng& rng, int n_e, int n_i_lat, double gamma0, const std::string& prefix) {
    const double hi = 1.0 / std::sqrt(static_cast<double>(n_e));
    w_ei_lat = Parameter{prefix + ".w_ei_lat", ParamGroup::recurrent,
                         rng.uniform_tensor({n_i_lat, n_e}, 0.0, hi)};
    w_ei_lat.dale_constrained = true;
    const double hi2 = 1.0 / std::sqrt(static_cast<double>(n_i_lat));
    w_ie_lat = Parameter{prefix + ".w_ie_lat", ParamGroup::recurrent,
                         rng.uniform_tensor({n_e, n_i_lat}, 0.0, hi2)};
    w_ie_lat.dale_constrained = true;
    gamma = Parameter{prefix + ".gamma", ParamGroup::recurrent, Tensor::scalar(gamma0)};
    gamma.clamp_lo = 0.01;
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&w_ei_lat);
    reg.add(&w_ie_lat);
    reg.add(&gamma);
  }
};

struct WtaVars {
  Var w_ei_lat, w_ie_lat, gamma;
};

inline WtaVars wta_vars(Tape& t, WtaParams& p) {
  return WtaVars{t.param(p.w_ei_lat), t.param(p.w_ie_lat), t.param(p.gamma)};
}

// Iterates x_I = ReLU(W_EI r_E), r_E = ReLU(r_E^(0) - gamma W_IE x_I),
// anchored at the initial state, with early termination below tol.
// Gradients flow through the unrolled loop.
inline Var lateral_inhibition(Tape& t, Var r_e0, const WtaVars& w, int k_max, double tol) {
  Var r = r_e0;
  for (int k = 0; k < k_max; ++k) {
    Var x_i = ops::relu(t, ops::linear(t, r, w.w_ei_lat));
    Var inhib = ops::mul_scalar(t, ops::linear(t, x_i, w.w_ie_lat), w.gamma);
    Var next = ops::relu(t, ops::sub(t, r_e0, inhib));
    const Tensor& nv = t.val(next);
    const Tensor& rv = t.val(r);
    double delta = 0.0;
    for (int64_t i = 0; i < nv.size(); ++i) delta = std::max(delta, std::abs(nv[i] - rv[i]));
    r = next;
    if (tol > 0.0 && delta < tol) break;
  }
  return r;
}

}  // namespace tide
