#pragma once

#include <cmath>
#include <vector>

#include "tide/blas.hpp"
#include "tide/tape.hpp"

// 2-D image ops over [B,C,H,W] tensors. Stride is 1 and zero padding
// preserves spatial dimensions everywhere in the shallow backbone.
namespace tide::ops {

namespace img {
inline int64_t at(int b, int c, int h, int w, int C, int H, int W) {
  return ((static_cast<int64_t>(b) * C + c) * H + h) * W + w;
}
}  // namespace img

namespace img {

// Patch matrix for one image: cols[(c*K+kh)*K+kw][h*W+w] = x[c, h+kh-P, w+kw-P]
// with zero padding.
inline void im2col(const double* x, int C, int H, int W, int K, double* cols) {
  const int P = K / 2;
  const int HW = H * W;
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < K; ++kh)
      for (int kw = 0; kw < K; ++kw) {
        double* row = cols + (static_cast<int64_t>((c * K + kh) * K + kw)) * HW;
        for (int h = 0; h < H; ++h) {
          const int ih = h + kh - P;
          if (ih < 0 || ih >= H) {
            for (int w = 0; w < W; ++w) row[h * W + w] = 0.0;
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * H + ih) * W;
          for (int w = 0; w < W; ++w) {
            const int iw = w + kw - P;
            row[h * W + w] = (iw < 0 || iw >= W) ? 0.0 : src[iw];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds the patch matrix back into the image.
inline void col2im(const double* cols, int C, int H, int W, int K, double* x) {
  const int P = K / 2;
  const int HW = H * W;
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < K; ++kh)
      for (int kw = 0; kw < K; ++kw) {
        const double* row = cols + (static_cast<int64_t>((c * K + kh) * K + kw)) * HW;
        for (int h = 0; h < H; ++h) {
          const int ih = h + kh - P;
          if (ih < 0 || ih >= H) continue;
          double* dst = x + (static_cast<int64_t>(c) * H + ih) * W;
          for (int w = 0; w < W; ++w) {
            const int iw = w + kw - P;
            if (iw >= 0 && iw < W) dst[iw] += row[h * W + w];
          }
        }
      }
}

}  // namespace img

// Full cross-channel convolution, kernel [O,C,k,k], odd k, same padding.
// GEMM-backed via im2col; gradients accumulate in a fixed image order.
inline Var conv2d(Tape& t, Var x, Var kernel) {
  const Tensor& xv = t.val(x);
  const Tensor& kv = t.val(kernel);
  if (xv.ndim() != 4 || kv.ndim() != 4) throw std::invalid_argument("conv2d: rank mismatch");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int O = kv.dim(0), KC = kv.dim(1), K = kv.dim(2);
  if (KC != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (kv.dim(3) != K || K % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd square");
  const int HW = H * W;
  const int CKK = C * K * K;
  Tensor y({B, O, H, W});
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<size_t>(CKK) * HW);
#pragma omp for schedule(static)
    for (int b = 0; b < B; ++b) {
      img::im2col(xv.data() + static_cast<int64_t>(b) * C * HW, C, H, W, K, cols.data());
      tide::gemm(false, false, O, HW, CKK, 1.0, kv.data(), CKK, cols.data(), HW, 0.0,
           y.data() + static_cast<int64_t>(b) * O * HW, HW);
    }
  }
  return t.op(std::move(y), {x, kernel}, [x, kernel, B, C, H, W, O, K, HW, CKK](Tape& tp,
                                                                                Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& kv = tp.val(kernel);
    if (tp.requires_grad(x)) {
      Tensor gx({B, C, H, W});
#pragma omp parallel
      {
        std::vector<double> cols(static_cast<size_t>(CKK) * HW);
#pragma omp for schedule(static)
        for (int b = 0; b < B; ++b) {
          tide::gemm(true, false, CKK, HW, O, 1.0, kv.data(), CKK,
               g.data() + static_cast<int64_t>(b) * O * HW, HW, 0.0, cols.data(), HW);
          img::col2im(cols.data(), C, H, W, K, gx.data() + static_cast<int64_t>(b) * C * HW);
        }
      }
      tp.accum(x, gx);
    }
    if (tp.requires_grad(kernel)) {
      Tensor gk({O, C, K, K});
      std::vector<double> cols(static_cast<size_t>(CKK) * HW);
      for (int b = 0; b < B; ++b) {
        img::im2col(xv.data() + static_cast<int64_t>(b) * C * HW, C, H, W, K, cols.data());
        tide::gemm(false, true, O, CKK, HW, 1.0, g.data() + static_cast<int64_t>(b) * O * HW, HW,
             cols.data(), HW, 1.0, gk.data(), CKK);
      }
      tp.accum(kernel, gk);
    }
  });
}

// Per-channel spatial convolution, kernel [C,k,k], odd k, same padding.
// Tap-sliding loops: one contiguous row pass per kernel tap.
inline Var conv2d_depthwise(Tape& t, Var x, Var kernel) {
  const Tensor& xv = t.val(x);
  const Tensor& kv = t.val(kernel);
  if (xv.ndim() != 4 || kv.ndim() != 3) throw std::invalid_argument("conv2d_depthwise: rank");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int K = kv.dim(1);
  if (kv.dim(0) != C || kv.dim(2) != K || K % 2 == 0)
    throw std::invalid_argument("conv2d_depthwise: kernel shape");
  const int P = K / 2;
  const int64_t HW = static_cast<int64_t>(H) * W;
  Tensor y({B, C, H, W});
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* xc = xv.data() + (static_cast<int64_t>(b) * C + c) * HW;
      double* yc = y.data() + (static_cast<int64_t>(b) * C + c) * HW;
      const double* kc = kv.data() + static_cast<int64_t>(c) * K * K;
      for (int kh = 0; kh < K; ++kh)
        for (int kw = 0; kw < K; ++kw) {
          const double kval = kc[kh * K + kw];
          const int dh = kh - P, dw = kw - P;
          const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
          const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
          for (int h = h0; h < h1; ++h) {
            const double* src = xc + static_cast<int64_t>(h + dh) * W + dw;
            double* dst = yc + static_cast<int64_t>(h) * W;
            for (int w = w0; w < w1; ++w) dst[w] += kval * src[w];
          }
        }
    }
  return t.op(std::move(y), {x, kernel}, [x, kernel, B, C, H, W, K, P, HW](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& kv = tp.val(kernel);
    if (tp.requires_grad(x)) {
      Tensor gx({B, C, H, W});
#pragma omp parallel for schedule(static) collapse(2)
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const double* gc = g.data() + (static_cast<int64_t>(b) * C + c) * HW;
          double* gxc = gx.data() + (static_cast<int64_t>(b) * C + c) * HW;
          const double* kc = kv.data() + static_cast<int64_t>(c) * K * K;
          // adjoint taps: gx[i] += k[tap] * g[i - offset]
          for (int kh = 0; kh < K; ++kh)
            for (int kw = 0; kw < K; ++kw) {
              const double kval = kc[kh * K + kw];
              const int dh = kh - P, dw = kw - P;
              const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
              const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
              for (int h = h0; h < h1; ++h) {
                double* dst = gxc + static_cast<int64_t>(h + dh) * W + dw;
                const double* src = gc + static_cast<int64_t>(h) * W;
                for (int w = w0; w < w1; ++w) dst[w] += kval * src[w];
              }
            }
        }
      tp.accum(x, gx);
    }
    if (tp.requires_grad(kernel)) {
      Tensor gk({C, K, K});
#pragma omp parallel for schedule(static)
      for (int c = 0; c < C; ++c) {
        double* gkc = gk.data() + static_cast<int64_t>(c) * K * K;
        for (int b = 0; b < B; ++b) {
          const double* gc = g.data() + (static_cast<int64_t>(b) * C + c) * HW;
          const double* xc = xv.data() + (static_cast<int64_t>(b) * C + c) * HW;
          for (int kh = 0; kh < K; ++kh)
            for (int kw = 0; kw < K; ++kw) {
              const int dh = kh - P, dw = kw - P;
              const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
              const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
              double s = 0.0;
              for (int h = h0; h < h1; ++h) {
                const double* grow = gc + static_cast<int64_t>(h) * W;
                const double* xrow = xc + static_cast<int64_t>(h + dh) * W + dw;
                for (int w = w0; w < w1; ++w) s += grow[w] * xrow[w];
              }
              gkc[kh * K + kw] += s;
            }
        }
      }
      tp.accum(kernel, gk);
    }
  });
}

// BatchNorm over [B,C,H,W]. Training mode normalizes with batch statistics
// and updates the running buffers in place; eval mode uses the buffers.
inline Var batchnorm2d(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean,
                       Tensor& running_var, bool training, double momentum = 0.1,
                       double eps = 1e-5) {
  const Tensor& xv = t.val(x);
  if (xv.ndim() != 4) throw std::invalid_argument("batchnorm2d: rank");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t N = static_cast<int64_t>(B) * H * W;
  Tensor mean_c({C}), var_c({C});
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) s += xv[img::at(b, c, h, w, C, H, W)];
      mean_c[c] = s / static_cast<double>(N);
      double v = 0.0;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double d = xv[img::at(b, c, h, w, C, H, W)] - mean_c[c];
            v += d * d;
          }
      var_c[c] = v / static_cast<double>(N);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean_c[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var_c[c];
    }
  } else {
    mean_c = running_mean;
    var_c = running_var;
  }
  const Tensor& gv = t.val(gamma);
  const Tensor& bv = t.val(beta);
  Tensor y({B, C, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double inv = 1.0 / std::sqrt(var_c[c] + eps);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const int64_t i = img::at(b, c, h, w, C, H, W);
          y[i] = gv[c] * (xv[i] - mean_c[c]) * inv + bv[c];
        }
    }
  return t.op(std::move(y), {x, gamma, beta},
              [x, gamma, beta, mean_c, var_c, training, eps, B, C, H, W, N](Tape& tp, Var self) {
                const Tensor& g = tp.grad(self);
                const Tensor& xv = tp.val(x);
                const Tensor& gv = tp.val(gamma);
                Tensor ggamma({C}), gbeta({C});
                Tensor gx({B, C, H, W});
                for (int c = 0; c < C; ++c) {
                  const double inv = 1.0 / std::sqrt(var_c[c] + eps);
                  double sum_g = 0.0, sum_gxhat = 0.0;
                  for (int b = 0; b < B; ++b)
                    for (int h = 0; h < H; ++h)
                      for (int w = 0; w < W; ++w) {
                        const int64_t i = img::at(b, c, h, w, C, H, W);
                        const double xhat = (xv[i] - mean_c[c]) * inv;
                        sum_g += g[i];
                        sum_gxhat += g[i] * xhat;
                      }
                  ggamma[c] = sum_gxhat;
                  gbeta[c] = sum_g;
                  for (int b = 0; b < B; ++b)
                    for (int h = 0; h < H; ++h)
                      for (int w = 0; w < W; ++w) {
                        const int64_t i = img::at(b, c, h, w, C, H, W);
                        if (training) {
                          const double xhat = (xv[i] - mean_c[c]) * inv;
                          gx[i] = gv[c] * inv *
                                  (g[i] - sum_g / static_cast<double>(N) -
                                   xhat * sum_gxhat / static_cast<double>(N));
                        } else {
                          gx[i] = gv[c] * inv * g[i];
                        }
                      }
                }
                tp.accum(x, gx);
                tp.accum(gamma, ggamma);
                tp.accum(beta, gbeta);
              });
}

// Adaptive average pooling to (oh, ow); PyTorch-style region boundaries.
inline Var adaptive_avg_pool2d(Tape& t, Var x, int oh, int ow) {
  const Tensor& xv = t.val(x);
  if (xv.ndim() != 4) throw std::invalid_argument("adaptive_avg_pool2d: rank");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  auto lo = [](int i, int in, int out) { return (i * in) / out; };
  auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
  Tensor y({B, C, oh, ow});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const int h0 = lo(i, H, oh), h1 = hi(i, H, oh);
          const int w0 = lo(j, W, ow), w1 = hi(j, W, ow);
          double s = 0.0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) s += xv[img::at(b, c, h, w, C, H, W)];
          y[img::at(b, c, i, j, C, oh, ow)] = s / ((h1 - h0) * (w1 - w0));
        }
  return t.op(std::move(y), {x}, [x, oh, ow, B, C, H, W](Tape& tp, Var self) {
    auto lo = [](int i, int in, int out) { return (i * in) / out; };
    auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
    const Tensor& g = tp.grad(self);
    Tensor gx({B, C, H, W});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const int h0 = lo(i, H, oh), h1 = hi(i, H, oh);
            const int w0 = lo(j, W, ow), w1 = hi(j, W, ow);
            const double share = g[img::at(b, c, i, j, C, oh, ow)] / ((h1 - h0) * (w1 - w0));
            for (int h = h0; h < h1; ++h)
              for (int w = w0; w < w1; ++w) gx[img::at(b, c, h, w, C, H, W)] += share;
          }
    tp.accum(x, gx);
  });
}

// Flattens [B,C,oh,ow] into tokens [B, oh*ow, C] (position-major).
inline Var flatten_tokens(Tape& t, Var x) {
  const Tensor& xv = t.val(x);
  if (xv.ndim() != 4) throw std::invalid_argument("flatten_tokens: rank");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int P = H * W;
  Tensor y({B, P, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < P; ++p)
        y[(static_cast<int64_t>(b) * P + p) * C + c] =
            xv[img::at(b, c, p / W, p % W, C, H, W)];
  return t.op(std::move(y), {x}, [x, B, C, H, W, P](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gx({B, C, H, W});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p)
          gx[img::at(b, c, p / W, p % W, C, H, W)] =
              g[(static_cast<int64_t>(b) * P + p) * C + c];
    tp.accum(x, gx);
  });
}

}  // namespace tide::ops
