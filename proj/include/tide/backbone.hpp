#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tide/conv.hpp"
#include "tide/ops.hpp"
#include "tide/param.hpp"
#include "tide/rng.hpp"

namespace tide {

// Batch-norm parameter/buffer bundle for one stage.
struct BnLayer {
  Parameter gamma, beta;
  Buffer running_mean, running_var;

  void init(int channels, const std::string& prefix) {
    gamma = Parameter{prefix + ".bn_gamma", ParamGroup::backbone, Tensor({channels}, 1.0)};
    beta = Parameter{prefix + ".bn_beta", ParamGroup::backbone, Tensor({channels})};
    running_mean = Buffer{prefix + ".bn_mean", Tensor({channels})};
    running_var = Buffer{prefix + ".bn_var", Tensor({channels}, 1.0)};
  }
  void register_params(ParamRegistry& reg) {
    reg.add(&gamma);
    reg.add(&beta);
    reg.add(&running_mean);
    reg.add(&running_var);
  }
  Var apply(Tape& t, Var x, bool training) {
    return ops::batchnorm2d(t, x, t.param(gamma), t.param(beta), running_mean.value,
                            running_var.value, training);
  }
};

// One learnable center-surround filter: per-channel spatial convolutions
// with scalar gains, batch-normalized and rectified. Surround kernel is
// k_s = 2s+1 for scale s; center kernel is 3x3 for every scale.
struct CenterSurroundFilter {
  Parameter center;   // [C, 3, 3]
  Parameter surround; // [C, k_s, k_s]
  Parameter w_c, w_s; // scalar gains, init (1.0, 0.5)
  BnLayer bn;
  int scale = 1;

  void init(Rng& rng, int channels, int s, const std::string& prefix) {
    scale = s;
    const int ks = 2 * s + 1;
    const double hc = 1.0 / 3.0;
    const double hs = 1.0 / ks;
    center = Parameter{prefix + ".center", ParamGroup::backbone,
                       rng.uniform_tensor({channels, 3, 3}, -hc, hc)};
    surround = Parameter{prefix + ".surround", ParamGroup::backbone,
                         rng.uniform_tensor({channels, ks, ks}, -hs, hs)};
    w_c = Parameter{prefix + ".w_c", ParamGroup::backbone, Tensor::scalar(1.0)};
    w_s = Parameter{prefix + ".w_s", ParamGroup::backbone, Tensor::scalar(0.5)};
    bn.init(channels, prefix);
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&center);
    reg.add(&surround);
    reg.add(&w_c);
    reg.add(&w_s);
    bn.register_params(reg);
  }
};

inline Tensor gaussian_kernel(int k, double sigma) {
  Tensor g({k, k});
  const double c = (k - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double di = i - c, dj = j - c;
      g.at(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      sum += g.at(i, j);
    }
  for (int64_t i = 0; i < g.size(); ++i) g[i] /= sum;  // discretization renormalization
  return g;
}

// Freezes the filter to the difference-of-Gaussians special case:
// center = G_sigma, surround = G_{kappa sigma}, gains (1, kappa).
inline void dog_init(CenterSurroundFilter& f, double sigma, double kappa) {
  const int C = f.center.value.dim(0);
  const int kc = f.center.value.dim(1);
  const int ks = f.surround.value.dim(1);
  const Tensor gc = gaussian_kernel(kc, sigma);
  const Tensor gs = gaussian_kernel(ks, kappa * sigma);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kc; ++i)
      for (int j = 0; j < kc; ++j)
        f.center.value[(static_cast<int64_t>(c) * kc + i) * kc + j] = gc.at(i, j);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < ks; ++i)
      for (int j = 0; j < ks; ++j)
        f.surround.value[(static_cast<int64_t>(c) * ks + i) * ks + j] = gs.at(i, j);
  f.w_c.value = Tensor::scalar(1.0);
  f.w_s.value = Tensor::scalar(kappa);
  f.center.trainable = false;
  f.surround.trainable = false;
  f.w_c.trainable = false;
  f.w_s.trainable = false;
}

// Raw center-surround response before normalization:
// w_c C(x) - w_s S(x), depthwise.
inline Var center_surround_raw(Tape& t, Var x, CenterSurroundFilter& f) {
  Var c = ops::conv2d_depthwise(t, x, t.param(f.center));
  Var s = ops::conv2d_depthwise(t, x, t.param(f.surround));
  return ops::sub(t, ops::mul_scalar(t, c, t.param(f.w_c)), ops::mul_scalar(t, s, t.param(f.w_s)));
}

// phi(x) = ReLU(BN(w_c C(x) - w_s S(x)))
inline Var center_surround(Tape& t, Var x, CenterSurroundFilter& f, bool training) {
  return ops::relu(t, f.bn.apply(t, center_surround_raw(t, x, f), training));
}

// Fixed 2-D sinusoidal positional encoding over a grid, one row per token.
inline Tensor positional_encoding_2d(int grid, int channels) {
  Tensor pe({grid * grid, channels});
  const int quarter = channels / 4;
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      const int p = r * grid + c;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        pe.at(p, i) = std::sin(r * omega);
        pe.at(p, quarter + i) = std::cos(r * omega);
        pe.at(p, 2 * quarter + i) = std::sin(c * omega);
        pe.at(p, 3 * quarter + i) = std::cos(c * omega);
      }
    }
  return pe;
}

struct BackboneOutput {
  Var keys;    // [B, P, d_attn]
  Var values;  // [B, P, d_attn]
  int p = 0;
};

// Shallow hierarchical-receptive-field backbone:
// stem (two 3x3 conv-BN-ReLU) -> four center-surround branches at scales
// {1,2,4,8} -> pool to 8x8 -> channel concat -> aggregation -> pool 8x8 ->
// flatten + positional encoding -> key/value projections.
struct ShallowBackbone {
  Parameter stem1_k, stem2_k;
  BnLayer stem1_bn, stem2_bn;
  std::vector<CenterSurroundFilter> branches;
  Parameter agg3_k, agg1_k;
  BnLayer agg3_bn, agg1_bn;
  Parameter w_k, w_v;  // [d_attn, d_feat]
  Tensor pe;           // [P, d_feat]
  int width = 32;
  int d_feat = 128;
  int d_attn = 512;
  int grid = 8;
  int in_channels = 1;

  static constexpr int kScales[4] = {1, 2, 4, 8};

  void init(Rng& rng, int c_in, int stem_width, int attn_width, const std::string& prefix) {
    in_channels = c_in;
    width = stem_width;
    d_feat = 4 * stem_width;
    d_attn = attn_width;
    auto conv_init = [&](int o, int c, int k) {
      const double hi = 1.0 / std::sqrt(static_cast<double>(c * k * k));
      return rng.uniform_tensor({o, c, k, k}, -hi, hi);
    };
    stem1_k = Parameter{prefix + ".stem1", ParamGroup::backbone, conv_init(width, c_in, 3)};
    stem2_k = Parameter{prefix + ".stem2", ParamGroup::backbone, conv_init(width, width, 3)};
    stem1_bn.init(width, prefix + ".stem1");
    stem2_bn.init(width, prefix + ".stem2");
    branches.resize(4);
    for (int i = 0; i < 4; ++i)
      branches[static_cast<size_t>(i)].init(rng, width, kScales[i],
                                            prefix + ".cs" + std::to_string(kScales[i]));
    agg3_k = Parameter{prefix + ".agg3", ParamGroup::backbone, conv_init(d_feat, d_feat, 3)};
    agg1_k = Parameter{prefix + ".agg1", ParamGroup::backbone, conv_init(d_feat, d_feat, 1)};
    agg3_bn.init(d_feat, prefix + ".agg3");
    agg1_bn.init(d_feat, prefix + ".agg1");
    const double hp = 1.0 / std::sqrt(static_cast<double>(d_feat));
    w_k = Parameter{prefix + ".w_k", ParamGroup::backbone,
                    rng.uniform_tensor({d_attn, d_feat}, -hp, hp)};
    w_v = Parameter{prefix + ".w_v", ParamGroup::backbone,
                    rng.uniform_tensor({d_attn, d_feat}, -hp, hp)};
    pe = positional_encoding_2d(grid, d_feat);
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&stem1_k);
    reg.add(&stem2_k);
    stem1_bn.register_params(reg);
    stem2_bn.register_params(reg);
    for (auto& b : branches) b.register_params(reg);
    reg.add(&agg3_k);
    reg.add(&agg1_k);
    agg3_bn.register_params(reg);
    agg1_bn.register_params(reg);
    reg.add(&w_k);
    reg.add(&w_v);
  }

  BackboneOutput forward(Tape& t, Var image, bool training) {
    const Tensor& xv = t.val(image);
    if (xv.ndim() != 4 || xv.dim(1) != in_channels)
      throw std::invalid_argument("shallow_backbone: unsupported input shape " + xv.shape_str());
    const int B = xv.dim(0);
    Var y = ops::relu(t, stem1_bn.apply(t, ops::conv2d(t, image, t.param(stem1_k)), training));
    y = ops::relu(t, stem2_bn.apply(t, ops::conv2d(t, y, t.param(stem2_k)), training));
    std::vector<Var> pooled;
    for (auto& b : branches)
      pooled.push_back(ops::adaptive_avg_pool2d(t, center_surround(t, y, b, training), grid, grid));
    Var cat = concat_channels(t, pooled);
    Var agg = ops::relu(t, agg3_bn.apply(t, ops::conv2d(t, cat, t.param(agg3_k)), training));
    agg = ops::relu(t, agg1_bn.apply(t, ops::conv2d(t, agg, t.param(agg1_k)), training));
    Var tokens = ops::flatten_tokens(t, ops::adaptive_avg_pool2d(t, agg, grid, grid));
    const int P = grid * grid;
    Var flat = ops::reshape(t, tokens, {B, P * d_feat});
    flat = ops::add_rowvec(t, flat, t.constant(pe.reshaped({P * d_feat})));
    Var rows = ops::reshape(t, flat, {B * P, d_feat});
    BackboneOutput out;
    out.p = P;
    out.keys = ops::reshape(t, ops::linear(t, rows, t.param(w_k)), {B, P, d_attn});
    out.values = ops::reshape(t, ops::linear(t, rows, t.param(w_v)), {B, P, d_attn});
    return out;
  }

 private:
  static Var concat_channels(Tape& t, const std::vector<Var>& parts) {
    const Tensor& first = t.val(parts.at(0));
    const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
    int ctotal = 0;
    for (Var p : parts) ctotal += t.val(p).dim(1);
    Tensor y({B, ctotal, H, W});
    int coff = 0;
    for (Var p : parts) {
      const Tensor& pv = t.val(p);
      const int C = pv.dim(1);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              y[ops::img::at(b, coff + c, h, w, ctotal, H, W)] =
                  pv[ops::img::at(b, c, h, w, C, H, W)];
      coff += C;
    }
    std::vector<int> widths;
    for (Var p : parts) widths.push_back(t.val(p).dim(1));
    return t.op(std::move(y), parts, [parts, widths, B, H, W, ctotal](Tape& tp, Var self) {
      const Tensor& g = tp.grad(self);
      int coff = 0;
      for (size_t k = 0; k < parts.size(); ++k) {
        const int C = widths[k];
        Tensor gp({B, C, H, W});
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w)
                gp[ops::img::at(b, c, h, w, C, H, W)] =
                    g[ops::img::at(b, coff + c, h, w, ctotal, H, W)];
        tp.accum(parts[k], gp);
        coff += C;
      }
    });
  }
};

}  // namespace tide
