#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

// Surprise-gated persistent memory. The buffers m and v never receive task
// gradients: writes happen on plain tensors outside the tape and the readout
// sees m as a constant. Heads and kappa are registered as trainable.
struct MemoryState {
  Buffer m;  // [d_mem]
  Buffer v;  // [d_mem]
  Parameter kappa;                    // [1], > 0
  Parameter rec_w, rec_b;             // f_rec: d_mem -> d_sync
  Parameter proj_w, proj_b;           // f_proj: d_sync -> d_mem
  Parameter read_w, read_b;           // f_read: (d_mem + d_sync) -> d_mem
  double theta_s = 0.5;
  double mu = 0.9;
  double rho_star = 4.0;
  int d_mem = 0, d_sync = 0;

  void init(Rng& rng, int dm, int ds, const std::string& prefix) {
    d_mem = dm;
    d_sync = ds;
    m = Buffer{prefix + ".m", Tensor({dm})};
    v = Buffer{prefix + ".v", Tensor({dm})};
    kappa = Parameter{prefix + ".kappa", ParamGroup::memory_heads, Tensor::scalar(1.0)};
    kappa.clamp_lo = 1e-3;
    const double sm = 1.0 / std::sqrt(static_cast<double>(dm));
    const double ss = 1.0 / std::sqrt(static_cast<double>(ds));
    const double sr = 1.0 / std::sqrt(static_cast<double>(dm + ds));
    rec_w = Parameter{prefix + ".rec_w", ParamGroup::memory_heads,
                      rng.uniform_tensor({ds, dm}, -sm, sm)};
    rec_b = Parameter{prefix + ".rec_b", ParamGroup::memory_heads, Tensor({ds})};
    // The write head starts small: the gate is effectively open whenever the
    // latent is far from the fixed reconstruction, so the buffer integrates
    // batch-mean writes for the whole run and a unit-scale head would let it
    // drift far faster than the readout can track.
    proj_w = Parameter{prefix + ".proj_w", ParamGroup::memory_heads,
                       rng.uniform_tensor({dm, ds}, -0.01 * ss, 0.01 * ss)};
    proj_b = Parameter{prefix + ".proj_b", ParamGroup::memory_heads, Tensor({dm})};
    read_w = Parameter{prefix + ".read_w", ParamGroup::memory_heads,
                       rng.uniform_tensor({dm, dm + ds}, -sr, sr)};
    read_b = Parameter{prefix + ".read_b", ParamGroup::memory_heads, Tensor({dm})};
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&kappa);
    reg.add(&rec_w);
    reg.add(&rec_b);
    reg.add(&proj_w);
    reg.add(&proj_b);
    reg.add(&read_w);
    reg.add(&read_b);
    reg.add(&m);
    reg.add(&v);
  }
};

namespace memory_detail {
inline Tensor affine(const Tensor& w, const Tensor& b, const Tensor& x) {
  const int out = w.dim(0), in = w.dim(1);
  Tensor y({out});
  for (int i = 0; i < out; ++i) {
    double s = b[i];
    for (int j = 0; j < in; ++j) s += w.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}
}  // namespace memory_detail

// s = |f_rec(m) - z|_2^2 for one sample.
inline double surprise(const MemoryState& state, const Tensor& z) {
  Tensor rec = memory_detail::affine(state.rec_w.value, state.rec_b.value, state.m.value);
  double s = 0.0;
  for (int64_t i = 0; i < z.size(); ++i) {
    const double d = rec[i] - z[i];
    s += d * d;
  }
  return s;
}

// iota = sigmoid(-kappa |rho - rho*|), in (0, 0.5].
inline double retention_gate(double rho, double kappa, double rho_star) {
  if (kappa <= 0) throw std::invalid_argument("retention_gate: kappa must be positive");
  return 1.0 / (1.0 + std::exp(kappa * std::abs(rho - rho_star)));
}

struct MemoryWriteInfo {
  std::vector<double> surprise;  // per sample
  std::vector<double> gate;      // per sample g in [0,1]
  Tensor m_after;                // buffer after the write
};

// Applies the gated write for a batch: per-sample surprise and gate, write
// vector averaged over the batch into the shared buffers. Returns the
// updated buffer value for the readout. Operates entirely on plain tensors.
inline MemoryWriteInfo memory_write(MemoryState& state, const Tensor& z_batch,
                                    const std::vector<double>& rho_batch) {
  const int B = z_batch.dim(0);
  const int ds = z_batch.dim(1);
  if (ds != state.d_sync) throw std::invalid_argument("memory_write: latent width");
  MemoryWriteInfo info;
  info.surprise.resize(static_cast<size_t>(B));
  info.gate.resize(static_cast<size_t>(B));
  const double kappa = state.kappa.value.item();
  Tensor rec = memory_detail::affine(state.rec_w.value, state.rec_b.value, state.m.value);
  Tensor write_mean({state.d_mem});
  for (int b = 0; b < B; ++b) {
    double s = 0.0;
    for (int i = 0; i < ds; ++i) {
      const double d = rec[i] - z_batch.at(b, i);
      s += d * d;
    }
    const double iota = retention_gate(rho_batch[static_cast<size_t>(b)], kappa, state.rho_star);
    const double g = (s > state.theta_s ? 1.0 : 0.0) * (1.0 - iota);
    info.surprise[static_cast<size_t>(b)] = s;
    info.gate[static_cast<size_t>(b)] = g;
    if (g != 0.0) {
      Tensor zrow({ds});
      for (int i = 0; i < ds; ++i) zrow[i] = z_batch.at(b, i);
      Tensor w = memory_detail::affine(state.proj_w.value, state.proj_b.value, zrow);
      for (int i = 0; i < state.d_mem; ++i) write_mean[i] += g * w[i] / B;
    }
  }
  for (int i = 0; i < state.d_mem; ++i) {
    state.v.value[i] = state.mu * state.v.value[i] + write_mean[i];
    state.m.value[i] += state.v.value[i];
  }
  info.m_after = state.m.value;
  return info;
}

// Readout f_read([m; z]) on the tape; m enters as a constant so the write
// path stays outside gradient flow.
inline Var memory_readout(Tape& t, const Tensor& m_value, Var z, Var read_w, Var read_b) {
  const int B = t.val(z).dim(0);
  Var m_rows = ops::broadcast_row(t, t.constant(m_value), B);
  Var cat = ops::concat_cols(t, {m_rows, z});
  return ops::linear(t, cat, read_w, read_b);
}

}  // namespace tide
