#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

// Exponential temporal weights over a history window: softmax over m of
// -(M-m)/tau. Sums to 1 and increases toward the newest slot.
inline Tensor temporal_kernel(int m_len, double tau) {
  if (tau <= 0) throw std::invalid_argument("temporal_kernel: tau must be positive");
  Tensor w({m_len});
  double z = 0.0;
  for (int m = 1; m <= m_len; ++m) z += std::exp(-(m_len - m) / tau);
  for (int m = 1; m <= m_len; ++m) w[m - 1] = std::exp(-(m_len - m) / tau) / z;
  return w;
}

// Rolling window of the last M post-activations, oldest first.
struct FifoBuffer {
  Tensor data;  // [B, n, M]

  FifoBuffer() = default;
  FifoBuffer(int batch, int n, int m) : data({batch, n, m}) {}

  int window() const { return data.dim(2); }

  void push(const Tensor& r) {
    const int B = data.dim(0), n = data.dim(1), M = data.dim(2);
    if (r.dim(0) != B || r.dim(1) != n) throw std::invalid_argument("fifo_push: shape mismatch");
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) {
        double* row = data.data() + (static_cast<int64_t>(b) * n + i) * M;
        for (int m = 0; m + 1 < M; ++m) row[m] = row[m + 1];
        row[M - 1] = r.at(b, i);
      }
  }
};

inline FifoBuffer fifo_push(const FifoBuffer& buf, const Tensor& r) {
  FifoBuffer out = buf;
  out.push(r);
  return out;
}

// Per-neuron two-layer gated map. Weight layout is neuron-major:
// w1[n, M, 2H], b1[n, 2H], w2[n, H, 2], b2[n, 2]; temperature[n] > 0.
struct NlmBank {
  Parameter w1, b1, w2, b2, temperature;
  int n = 0, m_len = 0, hidden = 0;
  double tau = 20.0;

  void init(Rng& rng, int n_neurons, int window, int h, double tau_ms, const std::string& prefix) {
    n = n_neurons;
    m_len = window;
    hidden = h;
    tau = tau_ms;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(window));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    w1 = Parameter{prefix + ".w1", ParamGroup::nlm,
                   rng.uniform_tensor({n, window, 2 * h}, -s1, s1)};
    b1 = Parameter{prefix + ".b1", ParamGroup::nlm, Tensor({n, 2 * h})};
    w2 = Parameter{prefix + ".w2", ParamGroup::nlm, rng.uniform_tensor({n, h, 2}, -s2, s2)};
    b2 = Parameter{prefix + ".b2", ParamGroup::nlm, Tensor({n, 2})};
    temperature = Parameter{prefix + ".temperature", ParamGroup::nlm, Tensor({n}, 1.0)};
    temperature.clamp_lo = 1e-2;
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&w1);
    reg.add(&b1);
    reg.add(&w2);
    reg.add(&b2);
    reg.add(&temperature);
  }
};

namespace ops_nlm {

// y[b,n,k] = sum_m u[b,n,m] * w[n,m,k] + b[n,k]
inline Var per_neuron_linear(Tape& t, Var u, Var w, Var bias) {
  const Tensor& uv = t.val(u);
  const Tensor& wv = t.val(w);
  if (uv.ndim() != 3 || wv.ndim() != 3) throw std::invalid_argument("per_neuron_linear: rank");
  const int B = uv.dim(0), N = uv.dim(1), M = uv.dim(2), K = wv.dim(2);
  if (wv.dim(0) != N || wv.dim(1) != M)
    throw std::invalid_argument("per_neuron_linear: buffer/bank dimension mismatch");
  const Tensor& bv = t.val(bias);
  Tensor y({B, N, K});
  for (int b = 0; b < B; ++b)
    for (int n = 0; n < N; ++n) {
      const double* urow = uv.data() + (static_cast<int64_t>(b) * N + n) * M;
      double* yrow = y.data() + (static_cast<int64_t>(b) * N + n) * K;
      const double* wn = wv.data() + static_cast<int64_t>(n) * M * K;
      for (int k = 0; k < K; ++k) yrow[k] = bv[static_cast<int64_t>(n) * K + k];
      for (int m = 0; m < M; ++m) {
        const double um = urow[m];
        for (int k = 0; k < K; ++k) yrow[k] += um * wn[static_cast<int64_t>(m) * K + k];
      }
    }
  return t.op(std::move(y), {u, w, bias}, [u, w, bias, B, N, M, K](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& uv = tp.val(u);
    const Tensor& wv = tp.val(w);
    if (tp.requires_grad(u)) {
      Tensor gu({B, N, M});
      for (int b = 0; b < B; ++b)
        for (int n = 0; n < N; ++n) {
          const double* grow = g.data() + (static_cast<int64_t>(b) * N + n) * K;
          double* gurow = gu.data() + (static_cast<int64_t>(b) * N + n) * M;
          const double* wn = wv.data() + static_cast<int64_t>(n) * M * K;
          for (int m = 0; m < M; ++m) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += grow[k] * wn[static_cast<int64_t>(m) * K + k];
            gurow[m] = s;
          }
        }
      tp.accum(u, gu);
    }
    if (tp.requires_grad(w)) {
      Tensor gw({N, M, K});
      for (int b = 0; b < B; ++b)
        for (int n = 0; n < N; ++n) {
          const double* grow = g.data() + (static_cast<int64_t>(b) * N + n) * K;
          const double* urow = uv.data() + (static_cast<int64_t>(b) * N + n) * M;
          double* gwn = gw.data() + static_cast<int64_t>(n) * M * K;
          for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) gwn[static_cast<int64_t>(m) * K + k] += urow[m] * grow[k];
        }
      tp.accum(w, gw);
    }
    if (tp.requires_grad(bias)) {
      Tensor gb({N, K});
      for (int b = 0; b < B; ++b)
        for (int n = 0; n < N; ++n)
          for (int k = 0; k < K; ++k)
            gb[static_cast<int64_t>(n) * K + k] += g[(static_cast<int64_t>(b) * N + n) * K + k];
      tp.accum(bias, gb);
    }
  });
}

// y[b,n,k] = x[b,n,k] / temp[n]
inline Var div_per_neuron(Tape& t, Var x, Var temp) {
  const Tensor& xv = t.val(x);
  const Tensor& tv = t.val(temp);
  const int B = xv.dim(0), N = xv.dim(1), K = xv.dim(2);
  if (tv.size() != N) throw std::invalid_argument("div_per_neuron: temperature size");
  Tensor y({B, N, K});
  for (int b = 0; b < B; ++b)
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) {
        const int64_t i = (static_cast<int64_t>(b) * N + n) * K + k;
        y[i] = xv[i] / tv[n];
      }
  return t.op(std::move(y), {x, temp}, [x, temp, B, N, K](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& tv = tp.val(temp);
    Tensor gx({B, N, K}), gt({N});
    for (int b = 0; b < B; ++b)
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          const int64_t i = (static_cast<int64_t>(b) * N + n) * K + k;
          gx[i] = g[i] / tv[n];
          gt[n] -= g[i] * xv[i] / (tv[n] * tv[n]);
        }
    tp.accum(x, gx);
    tp.accum(temp, gt);
  });
}

// [B,N,M] * kernel[M] broadcast along the memory axis.
inline Var weight_history(Tape& t, Var u, const Tensor& kernel) {
  const Tensor& uv = t.val(u);
  const int B = uv.dim(0), N = uv.dim(1), M = uv.dim(2);
  Var flat = ops::reshape(t, u, {B * N, M});
  Var weighted = ops::mul_rowvec(t, flat, t.constant(kernel));
  return ops::reshape(t, weighted, {B, N, M});
}

}  // namespace ops_nlm

struct NlmBankVars {
  Var w1, b1, w2, b2, temperature;
};

inline NlmBankVars bank_vars(Tape& t, NlmBank& bank) {
  return NlmBankVars{t.param(bank.w1), t.param(bank.b1), t.param(bank.w2), t.param(bank.b2),
                     t.param(bank.temperature)};
}

// Full NLM pipeline: temporal weighting, layer-normalize over the window,
// per-neuron M->2H map, temperature scaling, GLU, per-neuron H->2 map, GLU,
// squeeze. History is [B, n, M], oldest slot first; output [B, n].
inline Var nlm_forward(Tape& t, Var history, const NlmBankVars& bank, int hidden, double tau,
                       double ln_eps = 1e-5) {
  const Tensor& hv = t.val(history);
  if (hv.ndim() != 3) throw std::invalid_argument("nlm_forward: history rank");
  const int B = hv.dim(0), N = hv.dim(1), M = hv.dim(2);
  if (t.val(bank.w1).dim(0) != N || t.val(bank.w1).dim(1) != M)
    throw std::invalid_argument("nlm_forward: buffer/bank dimension mismatch");
  const Tensor kernel = temporal_kernel(M, tau);
  Var u = ops_nlm::weight_history(t, history, kernel);
  Var flat = ops::reshape(t, u, {B * N, M});
  Var normed = ops::layernorm_rows(t, flat, ln_eps);
  u = ops::reshape(t, normed, {B, N, M});
  Var y0 = ops_nlm::per_neuron_linear(t, u, bank.w1, bank.b1);  // [B,N,2H]
  y0 = ops_nlm::div_per_neuron(t, y0, bank.temperature);
  Var y0f = ops::reshape(t, y0, {B * N, 2 * hidden});
  Var gated = ops::glu_rows(t, y0f);  // [B*N, H]
  Var y1 = ops_nlm::per_neuron_linear(t, ops::reshape(t, gated, {B, N, hidden}), bank.w2,
                                      bank.b2);  // [B,N,2]
  Var y1f = ops::glu_rows(t, ops::reshape(t, y1, {B * N, 2}));  // [B*N,1]
  return ops::reshape(t, y1f, {B, N});
}

}  // namespace tide
