#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

// Seeded sampling of neuron pairs without replacement over the full
// n_a x n_b pair space; fixed for the life of the model.
inline std::pair<std::vector<int>, std::vector<int>> sample_pairs(int n_a, int n_b, int p,
                                                                  uint64_t seed) {
  const int64_t space = static_cast<int64_t>(n_a) * n_b;
  if (p > space) throw std::invalid_argument("sample_pairs: p exceeds pair space");
  Rng rng(seed);
  std::vector<int> ia, ib;
  ia.reserve(static_cast<size_t>(p));
  ib.reserve(static_cast<size_t>(p));
  std::unordered_set<int64_t> seen;
  while (static_cast<int>(ia.size()) < p) {
    const int64_t k = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(space)));
    if (!seen.insert(k).second) continue;
    ia.push_back(static_cast<int>(k / n_b));
    ib.push_back(static_cast<int>(k % n_b));
  }
  return {ia, ib};
}

// One pairwise-product accumulator stream with learnable decays and a
// linear -> GLU -> LN projection to its sub-latent.
struct SyncStream {
  std::vector<int> idx_a, idx_b;
  Parameter delta;          // [p], clipped to [0,15] after each optimizer step
  Parameter proj_w, proj_b; // [2d, p], [2d]
  Parameter ln_gain, ln_bias;
  int p = 0, d = 0;
  double clamp_c = 0.0;  // 0 disables the accumulator clamp

  void init(Rng& rng, int n_a, int n_b, int pairs, int width, uint64_t pair_seed,
            const std::string& prefix) {
    p = pairs;
    d = width;
    auto [ia, ib] = sample_pairs(n_a, n_b, pairs, pair_seed);
    idx_a = std::move(ia);
    idx_b = std::move(ib);
    const double s = 1.0 / std::sqrt(static_cast<double>(pairs));
    delta = Parameter{prefix + ".delta", ParamGroup::sync, Tensor({pairs}, 0.5)};
    delta.clamp_lo = 0.0;
    delta.clamp_hi = 15.0;
    proj_w = Parameter{prefix + ".proj_w", ParamGroup::sync,
                       rng.uniform_tensor({2 * width, pairs}, -s, s)};
    // non-zero bias keeps the stream LN away from its degenerate
    // zero-variance point while the accumulators are still empty
    proj_b = Parameter{prefix + ".proj_b", ParamGroup::sync,
                       rng.uniform_tensor({2 * width}, -0.3, 0.3)};
    ln_gain = Parameter{prefix + ".ln_gain", ParamGroup::sync, Tensor({width}, 1.0)};
    ln_bias = Parameter{prefix + ".ln_bias", ParamGroup::sync, Tensor({width})};
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&delta);
    reg.add(&proj_w);
    reg.add(&proj_b);
    reg.add(&ln_gain);
    reg.add(&ln_bias);
  }
};

struct SyncStreamVars {
  Var delta, proj_w, proj_b, ln_gain, ln_bias;
};

inline SyncStreamVars stream_vars(Tape& t, SyncStream& s) {
  return SyncStreamVars{t.param(s.delta), t.param(s.proj_w), t.param(s.proj_b),
                        t.param(s.ln_gain), t.param(s.ln_bias)};
}

struct SyncUpdateOut {
  Var z;   // [B, d]
  Var nu;  // [B, p]
  Var xi;  // [B, p]
};

// nu <- r.nu + pi, xi <- r.xi + 1 with r = clamp(exp(-delta), e^-15, 1);
// s = nu / sqrt(xi + eps); z = LN(GLU(W s + b)).
inline SyncUpdateOut sync_update(Tape& t, const SyncStream& stream, const SyncStreamVars& sv,
                                 Var nu, Var xi, Var x_a, Var x_b, double eps = 1e-8) {
  const int B = t.val(x_a).dim(0);
  Var decay = ops::clamp(t, ops::exp(t, ops::neg(t, sv.delta)), std::exp(-15.0), 1.0);  // [p]
  Var pi = ops::pair_product(t, x_a, x_b, stream.idx_a, stream.idx_b);                  // [B,p]
  Var nu2 = ops::add(t, ops::mul_rowvec(t, nu, decay), pi);
  Var xi2 = ops::add(t, ops::mul_rowvec(t, xi, decay), t.constant(Tensor({B, stream.p}, 1.0)));
  if (stream.clamp_c > 0.0) nu2 = ops::clamp(t, nu2, -stream.clamp_c, stream.clamp_c);
  Var s = ops::div(t, nu2, ops::sqrt(t, ops::add_const(t, xi2, eps)));
  Var proj = ops::linear(t, s, sv.proj_w, sv.proj_b);  // [B,2d]
  Var z = ops::layernorm_rows(t, ops::glu_rows(t, proj), sv.ln_gain, sv.ln_bias);
  return SyncUpdateOut{z, nu2, xi2};
}

// Layer-normalized concatenation in fixed (EE, EI, II) order.
inline Var assemble_latent(Tape& t, Var z_ee, Var z_ei, Var z_ii, Var ln_gain, Var ln_bias) {
  Var cat = ops::concat_cols(t, {z_ee, z_ei, z_ii});
  return ops::layernorm_rows(t, cat, ln_gain, ln_bias);
}

}  // namespace tide
