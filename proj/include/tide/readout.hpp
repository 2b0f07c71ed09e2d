#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

struct AttentionParams {
  Parameter w_q;              // [d_attn, d_sync]
  Parameter w_o;              // [d_sync, d_attn]
  Parameter ln_gain, ln_bias; // [d_sync]
  int n_heads = 8;
  double dropout_p = 0.1;

  void init(Rng& rng, int d_sync, int d_attn, int heads, double dropout,
            const std::string& prefix) {
    if (d_attn % heads != 0) throw std::invalid_argument("attention: d_attn % n_heads != 0");
    n_heads = heads;
    dropout_p = dropout;
    const double sq = 1.0 / std::sqrt(static_cast<double>(d_sync));
    const double so = 1.0 / std::sqrt(static_cast<double>(d_attn));
    w_q = Parameter{prefix + ".w_q", ParamGroup::head, rng.uniform_tensor({d_attn, d_sync}, -sq, sq)};
    w_o = Parameter{prefix + ".w_o", ParamGroup::head, rng.uniform_tensor({d_sync, d_attn}, -so, so)};
    ln_gain = Parameter{prefix + ".ln_gain", ParamGroup::head, Tensor({d_sync}, 1.0)};
    ln_bias = Parameter{prefix + ".ln_bias", ParamGroup::head, Tensor({d_sync})};
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&w_q);
    reg.add(&w_o);
    reg.add(&ln_gain);
    reg.add(&ln_bias);
  }
};

struct HeadParams {
  Parameter w_h1, b_h1;       // [(d_sync+d_mem) -> 2H]
  Parameter w_h2, b_h2;       // [H -> C]
  Parameter ln_gain, ln_bias; // [H]
  int hidden = 256;
  double dropout_p = 0.1;

  void init(Rng& rng, int d_in, int h, int classes, double dropout, const std::string& prefix) {
    hidden = h;
    dropout_p = dropout;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d_in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    w_h1 = Parameter{prefix + ".w_h1", ParamGroup::head, rng.uniform_tensor({2 * h, d_in}, -s1, s1)};
    b_h1 = Parameter{prefix + ".b_h1", ParamGroup::head, Tensor({2 * h})};
    w_h2 = Parameter{prefix + ".w_h2", ParamGroup::head, rng.uniform_tensor({classes, h}, -s2, s2)};
    b_h2 = Parameter{prefix + ".b_h2", ParamGroup::head, Tensor({classes})};
    ln_gain = Parameter{prefix + ".ln_gain", ParamGroup::head, Tensor({h}, 1.0)};
    ln_bias = Parameter{prefix + ".ln_bias", ParamGroup::head, Tensor({h})};
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&w_h1);
    reg.add(&b_h1);
    reg.add(&w_h2);
    reg.add(&b_h2);
    reg.add(&ln_gain);
    reg.add(&ln_bias);
  }
};

namespace ops_attn {

// scores[b,h,p] = sum_d q[b,h*dh+d] K[b,p,h*dh+d] / sqrt(dh)
inline Var scores(Tape& t, Var q, Var keys, int heads) {
  const Tensor& qv = t.val(q);
  const Tensor& kv = t.val(keys);
  const int B = qv.dim(0), dattn = qv.dim(1);
  const int P = kv.dim(1);
  if (kv.dim(0) != B || kv.dim(2) != dattn) throw std::invalid_argument("attn scores: shapes");
  const int dh = dattn / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor y({B, heads, P});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < P; ++p) {
        double s = 0.0;
        for (int d = 0; d < dh; ++d)
          s += qv.at(b, h * dh + d) * kv[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d];
        y[(static_cast<int64_t>(b) * heads + h) * P + p] = s * scale;
      }
  return t.op(std::move(y), {q, keys}, [q, keys, B, heads, P, dattn, dh, scale](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& qv = tp.val(q);
    const Tensor& kv = tp.val(keys);
    if (tp.requires_grad(q)) {
      Tensor gq({B, dattn});
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
          for (int p = 0; p < P; ++p) {
            const double gs = g[(static_cast<int64_t>(b) * heads + h) * P + p] * scale;
            for (int d = 0; d < dh; ++d)
              gq.at(b, h * dh + d) += gs * kv[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d];
          }
      tp.accum(q, gq);
    }
    if (tp.requires_grad(keys)) {
      Tensor gk({B, P, dattn});
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
          for (int p = 0; p < P; ++p) {
            const double gs = g[(static_cast<int64_t>(b) * heads + h) * P + p] * scale;
            for (int d = 0; d < dh; ++d)
              gk[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d] += gs * qv.at(b, h * dh + d);
          }
      tp.accum(keys, gk);
    }
  });
}

// out[b,h*dh+d] = sum_p A[b,h,p] V[b,p,h*dh+d]
inline Var mix(Tape& t, Var probs, Var values, int heads) {
  const Tensor& av = t.val(probs);
  const Tensor& vv = t.val(values);
  const int B = av.dim(0), P = av.dim(2);
  const int dattn = vv.dim(2);
  const int dh = dattn / heads;
  Tensor y({B, dattn});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < P; ++p) {
        const double a = av[(static_cast<int64_t>(b) * heads + h) * P + p];
        for (int d = 0; d < dh; ++d)
          y.at(b, h * dh + d) += a * vv[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d];
      }
  return t.op(std::move(y), {probs, values}, [probs, values, B, heads, P, dattn, dh](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(probs);
    const Tensor& vv = tp.val(values);
    if (tp.requires_grad(probs)) {
      Tensor ga({B, heads, P});
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
          for (int p = 0; p < P; ++p) {
            double s = 0.0;
            for (int d = 0; d < dh; ++d)
              s += g.at(b, h * dh + d) * vv[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d];
            ga[(static_cast<int64_t>(b) * heads + h) * P + p] = s;
          }
      tp.accum(probs, ga);
    }
    if (tp.requires_grad(values)) {
      Tensor gv({B, P, dattn});
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
          for (int p = 0; p < P; ++p) {
            const double a = av[(static_cast<int64_t>(b) * heads + h) * P + p];
            for (int d = 0; d < dh; ++d)
              gv[(static_cast<int64_t>(b) * P + p) * dattn + h * dh + d] += a * g.at(b, h * dh + d);
          }
      tp.accum(values, gv);
    }
  });
}

}  // namespace ops_attn

struct AttentionVars {
  Var w_q, w_o, ln_gain, ln_bias;
};

inline AttentionVars attention_vars(Tape& t, AttentionParams& p) {
  return AttentionVars{t.param(p.w_q), t.param(p.w_o), t.param(p.ln_gain), t.param(p.ln_bias)};
}

// Multi-head scaled dot-product attention over P backbone tokens; the output
// projection is followed by LN with an additive residual from the query.
// `dropout_mask` is an optional pre-scaled constant mask over [B,heads,P].
inline Var cross_attention(Tape& t, Var z, Var keys, Var values, const AttentionVars& av,
                           int heads, Var dropout_mask = {}) {
  const Tensor& kv = t.val(keys);
  if (kv.dim(1) < 1) throw std::invalid_argument("cross_attention: need P > 0 tokens");
  const int B = t.val(z).dim(0);
  const int P = kv.dim(1);
  Var q = ops::linear(t, z, av.w_q);
  Var s = ops_attn::scores(t, q, keys, heads);
  Var flat = ops::reshape(t, s, {B * heads, P});
  Var probs = ops::reshape(t, ops::softmax_rows(t, flat), {B, heads, P});
  if (dropout_mask.valid()) probs = ops::mul(t, probs, dropout_mask);
  Var mixed = ops_attn::mix(t, probs, values, heads);
  Var out = ops::linear(t, mixed, av.w_o);
  return ops::layernorm_rows(t, ops::add(t, out, z), av.ln_gain, av.ln_bias);
}

struct HeadVars {
  Var w_h1, b_h1, w_h2, b_h2, ln_gain, ln_bias;
};

inline HeadVars head_vars(Tape& t, HeadParams& p) {
  return HeadVars{t.param(p.w_h1), t.param(p.b_h1), t.param(p.w_h2),
                  t.param(p.b_h2), t.param(p.ln_gain), t.param(p.ln_bias)};
}

// o = W_out LN(GLU(W_hidden [z; m])) with dropout active in training only.
// `dropout_mask` is a pre-scaled constant mask over [B,H] or invalid.
inline Var output_head(Tape& t, Var z, Var mem, const HeadVars& hv, Var dropout_mask = {}) {
  Var cat = ops::concat_cols(t, {z, mem});
  Var hiddenv = ops::glu_rows(t, ops::linear(t, cat, hv.w_h1, hv.b_h1));
  Var normed = ops::layernorm_rows(t, hiddenv, hv.ln_gain, hv.ln_bias);
  if (dropout_mask.valid()) normed = ops::mul(t, normed, dropout_mask);
  return ops::linear(t, normed, hv.w_h2, hv.b_h2);
}

// c = 1 - H(softmax(logits)) / log(C), in [0,1]; invariant to constant
// shifts of the logits.
inline double certainty(const double* logits, int c) {
  if (c < 2) throw std::invalid_argument("certainty: need at least 2 classes");
  double mx = logits[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < c; ++i) z += std::exp(logits[i] - mx);
  double h = 0.0;
  for (int i = 0; i < c; ++i) {
    const double p = std::exp(logits[i] - mx) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return 1.0 - h / std::log(static_cast<double>(c));
}

inline double certainty(const Tensor& logits_row) {
  return certainty(logits_row.data(), static_cast<int>(logits_row.size()));
}

}  // namespace tide
