#pragma once

#include <stdexcept>

#include "tide/param.hpp"
#include "tide/rng.hpp"
#include "tide/tensor.hpp"

namespace tide {

// The four non-negative recurrent blocks plus the unconstrained input
// projections. Block shapes: w_ee [nE,nE], w_ei [nE,nI], w_ie [nI,nE],
// w_ii [nI,nI], w_e_in [nE,d_sync], w_i_in [nI,d_sync].
struct DaleWeightSet {
  Tensor w_ee, w_ei, w_ie, w_ii;
  Tensor w_e_in, w_i_in;

  int n_e() const { return w_ee.ndim() == 2 ? w_ee.dim(0) : 0; }
  int n_i() const { return w_ii.ndim() == 2 ? w_ii.dim(0) : 0; }
};

inline int excitatory_count(int d_model, double rho = 0.8) {
  return static_cast<int>(std::floor(rho * d_model));
}

// Element-wise clamp onto the non-negative orthant. Total, idempotent,
// non-expansive in Frobenius norm; ties at 0 stay at 0.
inline Tensor project_dale(const Tensor& w) {
  Tensor out = w;
  for (int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return out;
}

inline void project_dale_inplace(Tensor& w) {
  for (int64_t i = 0; i < w.size(); ++i)
    if (w[i] < 0.0) w[i] = 0.0;
}

// Fixed +/- block mask over d_model x d_model: excitatory source columns
// carry +1, inhibitory columns -1.
struct SignMask {
  int n_e = 0, n_i = 0;
  Tensor mask;

  SignMask() = default;
  SignMask(int ne, int ni) : n_e(ne), n_i(ni), mask({ne + ni, ne + ni}) {
    const int d = ne + ni;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) mask.at(r, c) = c < ne ? 1.0 : -1.0;
  }
};

struct EffectiveMatrix {
  Tensor w_eff;  // [d_model, d_model], sign-indefinite
  int n_e = 0, n_i = 0;
};

// [[W_EE, -W_EI], [W_IE, -W_II]]
inline EffectiveMatrix compose_effective(const DaleWeightSet& w) {
  const int ne = w.n_e(), ni = w.n_i();
  if (w.w_ei.dim(0) != ne || w.w_ei.dim(1) != ni || w.w_ie.dim(0) != ni ||
      w.w_ie.dim(1) != ne || w.w_ii.dim(0) != ni)
    throw std::invalid_argument("compose_effective: inconsistent block dimensions");
  const int d = ne + ni;
  EffectiveMatrix e;
  e.n_e = ne;
  e.n_i = ni;
  e.w_eff = Tensor({d, d});
  for (int r = 0; r < ne; ++r) {
    for (int c = 0; c < ne; ++c) e.w_eff.at(r, c) = w.w_ee.at(r, c);
    for (int c = 0; c < ni; ++c) e.w_eff.at(r, ne + c) = -w.w_ei.at(r, c);
  }
  for (int r = 0; r < ni; ++r) {
    for (int c = 0; c < ne; ++c) e.w_eff.at(ne + r, c) = w.w_ie.at(r, c);
    for (int c = 0; c < ni; ++c) e.w_eff.at(ne + r, ne + c) = -w.w_ii.at(r, c);
  }
  return e;
}

// Recovers the four non-negative blocks from |w_eff|.
inline DaleWeightSet split_effective(const EffectiveMatrix& e) {
  DaleWeightSet w;
  const int ne = e.n_e, ni = e.n_i;
  w.w_ee = Tensor({ne, ne});
  w.w_ei = Tensor({ne, ni});
  w.w_ie = Tensor({ni, ne});
  w.w_ii = Tensor({ni, ni});
  for (int r = 0; r < ne; ++r) {
    for (int c = 0; c < ne; ++c) w.w_ee.at(r, c) = std::abs(e.w_eff.at(r, c));
    for (int c = 0; c < ni; ++c) w.w_ei.at(r, c) = std::abs(e.w_eff.at(r, ne + c));
  }
  for (int r = 0; r < ni; ++r) {
    for (int c = 0; c < ne; ++c) w.w_ie.at(r, c) = std::abs(e.w_eff.at(ne + r, c));
    for (int c = 0; c < ni; ++c) w.w_ii.at(r, c) = std::abs(e.w_eff.at(ne + r, ne + c));
  }
  return w;
}

// One projected-gradient update: project(w - lr * grad).
inline Tensor projected_gradient_step(const Tensor& w, const Tensor& grad, double lr) {
  check_same_shape(w, grad, "projected_gradient_step");
  if (lr <= 0.0) throw std::invalid_argument("projected_gradient_step: lr must be positive");
  Tensor out = w;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] -= lr * grad[i];
    if (out[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

// Uniform on [0, 1/sqrt(fan_in)], then projected (a no-op for this range);
// keeps initial Perron radii below the spectral targets.
inline Tensor dale_init(Rng& rng, int rows, int cols) {
  const double hi = 1.0 / std::sqrt(static_cast<double>(cols));
  Tensor w = rng.uniform_tensor({rows, cols}, 0.0, hi);
  project_dale_inplace(w);
  return w;
}

inline DaleWeightSet make_dale_weights(Rng& rng, int n_e, int n_i, int d_sync) {
  DaleWeightSet w;
  w.w_ee = dale_init(rng, n_e, n_e);
  w.w_ei = dale_init(rng, n_e, n_i);
  w.w_ie = dale_init(rng, n_i, n_e);
  w.w_ii = dale_init(rng, n_i, n_i);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d_sync));
  w.w_e_in = rng.uniform_tensor({n_e, d_sync}, -s_in, s_in);
  w.w_i_in = rng.uniform_tensor({n_i, d_sync}, -s_in, s_in);
  return w;
}

}  // namespace tide
