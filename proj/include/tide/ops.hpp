#pragma once

#include <cmath>
#include <vector>

#include "tide/blas.hpp"
#include "tide/tape.hpp"

// Tape operations. Each returns a new Var whose pull function routes the
// output gradient to the parents. Limited, explicit broadcasting only:
// row-vector and column-vector helpers instead of a generic broadcast.
namespace tide::ops {

namespace detail {
inline void check2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}
}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class Fwd, class Bwd>
inline Var unary(Tape& t, Var x, Fwd f, Bwd dfdx) {
  const Tensor& xv = t.val(x);
  Tensor y(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return t.op(std::move(y), {x}, [x, dfdx](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    Tensor gx(xv.shape());
    for (int64_t i = 0; i < xv.size(); ++i) gx[i] = g[i] * dfdx(xv[i]);
    tp.accum(x, gx);
  });
}

inline Var relu(Tape& t, Var x) {
  // Subgradient at 0 is 0.
  return unary(
      t, x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

inline Var softplus(Tape& t, Var x) {
  auto f = [](double v) { return v > 30 ? v : std::log1p(std::exp(v)); };
  auto d = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  return unary(t, x, f, d);
}

inline Var sigmoid(Tape& t, Var x) {
  auto f = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto d = [f](double v) {
    double s = f(v);
    return s * (1.0 - s);
  };
  return unary(t, x, f, d);
}

inline Var exp(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

inline Var log(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

inline Var sqrt(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return std::sqrt(v); },
      [](double v) { return 0.5 / std::sqrt(v); });
}

inline Var square(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

inline Var abs(Tape& t, Var x) {
  // Subgradient at 0 is 0.
  return unary(
      t, x, [](double v) { return std::abs(v); },
      [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Var neg(Tape& t, Var x) {
  return unary(
      t, x, [](double v) { return -v; }, [](double) { return -1.0; });
}

// Gradient passes through on [lo, hi] inclusive, zero outside.
inline Var clamp(Tape& t, Var x, double lo, double hi) {
  return unary(
      t, x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

inline Var scale(Tape& t, Var x, double c) {
  return unary(
      t, x, [c](double v) { return c * v; }, [c](double) { return c; });
}

inline Var add_const(Tape& t, Var x, double c) {
  return unary(
      t, x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

inline Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor y(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
  return t.op(std::move(y), {a, b}, [a, b](Tape& tp, Var self) {
    tp.accum(a, tp.grad(self));
    tp.accum(b, tp.grad(self));
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor y(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) y[i] = av[i] - bv[i];
  return t.op(std::move(y), {a, b}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    tp.accum(a, g);
    Tensor gb(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
    tp.accum(b, gb);
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor y(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) y[i] = av[i] * bv[i];
  return t.op(std::move(y), {a, b}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    Tensor ga(av.shape()), gb(bv.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    tp.accum(a, ga);
    tp.accum(b, gb);
  });
}

inline Var div(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "div");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor y(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) y[i] = av[i] / bv[i];
  return t.op(std::move(y), {a, b}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    Tensor ga(av.shape()), gb(bv.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] / bv[i];
      gb[i] = -g[i] * av[i] / (bv[i] * bv[i]);
    }
    tp.accum(a, ga);
    tp.accum(b, gb);
  });
}

// Identity forward; gradient does not propagate past this node.
inline Var stop_gradient(Tape& t, Var x) { return t.leaf(t.val(x), false); }

inline Var reshape(Tape& t, Var x, std::vector<int> shape) {
  Tensor y = t.val(x).reshaped(shape);
  return t.op(std::move(y), {x}, [x](Tape& tp, Var self) {
    tp.accum(x, tp.grad(self).reshaped(tp.val(x).shape()));
  });
}

// ------------------------------------------------------- scalar interactions

// y = x * s, s a scalar Var ([1]).
inline Var mul_scalar(Tape& t, Var x, Var s) {
  const Tensor& xv = t.val(x);
  const double sv = t.val(s).item();
  Tensor y(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) y[i] = xv[i] * sv;
  return t.op(std::move(y), {x, s}, [x, s](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const double sv = tp.val(s).item();
    Tensor gx(xv.shape());
    double gs = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) {
      gx[i] = g[i] * sv;
      gs += g[i] * xv[i];
    }
    tp.accum(x, gx);
    tp.accum(s, Tensor::scalar(gs));
  });
}

// y = x / s, s a scalar Var ([1]).
inline Var div_scalar(Tape& t, Var x, Var s) {
  const Tensor& xv = t.val(x);
  const double sv = t.val(s).item();
  Tensor y(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) y[i] = xv[i] / sv;
  return t.op(std::move(y), {x, s}, [x, s](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const double sv = tp.val(s).item();
    Tensor gx(xv.shape());
    double gs = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) {
      gx[i] = g[i] / sv;
      gs -= g[i] * xv[i] / (sv * sv);
    }
    tp.accum(x, gx);
    tp.accum(s, Tensor::scalar(gs));
  });
}

// ----------------------------------------------------------------- reductions

inline Var sum(Tape& t, Var x) {
  double s = t.val(x).sum();
  return t.op(Tensor::scalar(s), {x}, [x](Tape& tp, Var self) {
    const double g = tp.grad(self).item();
    Tensor gx(tp.val(x).shape(), g);
    tp.accum(x, gx);
  });
}

inline Var mean(Tape& t, Var x) {
  const int64_t n = t.val(x).size();
  double s = t.val(x).sum() / static_cast<double>(n);
  return t.op(Tensor::scalar(s), {x}, [x, n](Tape& tp, Var self) {
    const double g = tp.grad(self).item() / static_cast<double>(n);
    Tensor gx(tp.val(x).shape(), g);
    tp.accum(x, gx);
  });
}

inline Var dot(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "dot");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  double s = 0.0;
  for (int64_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return t.op(Tensor::scalar(s), {a, b}, [a, b](Tape& tp, Var self) {
    const double g = tp.grad(self).item();
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    Tensor ga(av.shape()), gb(bv.shape());
    for (int64_t i = 0; i < av.size(); ++i) {
      ga[i] = g * bv[i];
      gb[i] = g * av[i];
    }
    tp.accum(a, ga);
    tp.accum(b, gb);
  });
}

// [B,n] -> [B], per-row sum.
inline Var sum_rows(Tape& t, Var x) {
  detail::check2d(t.val(x), "sum_rows");
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  Tensor y({B});
  for (int b = 0; b < B; ++b) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += xv.at(b, i);
    y[b] = s;
  }
  return t.op(std::move(y), {x}, [x, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gx({B, n});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) gx.at(b, i) = g[b];
    tp.accum(x, gx);
  });
}

inline Var mean_rows(Tape& t, Var x) {
  const int n = t.val(x).dim(1);
  return scale(t, sum_rows(t, x), 1.0 / n);
}

// Mean of the main diagonal of a square matrix.
inline Var diag_mean(Tape& t, Var w) {
  detail::check2d(t.val(w), "diag_mean");
  const Tensor& wv = t.val(w);
  if (wv.dim(0) != wv.dim(1)) throw std::invalid_argument("diag_mean: matrix not square");
  const int n = wv.dim(0);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += wv.at(i, i);
  return t.op(Tensor::scalar(s / n), {w}, [w, n](Tape& tp, Var self) {
    const double g = tp.grad(self).item() / n;
    Tensor gw({n, n});
    for (int i = 0; i < n; ++i) gw.at(i, i) = g;
    tp.accum(w, gw);
  });
}

// -------------------------------------------------------- broadcast helpers

// [B,n] + [n]
inline Var add_rowvec(Tape& t, Var x, Var r) {
  const Tensor& xv = t.val(x);
  const Tensor& rv = t.val(r);
  const int B = xv.dim(0), n = xv.dim(1);
  if (rv.size() != n) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = xv.at(b, i) + rv[i];
  return t.op(std::move(y), {x, r}, [x, r, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    tp.accum(x, g);
    Tensor gr({n});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) gr[i] += g.at(b, i);
    tp.accum(r, gr);
  });
}

// [B,n] * [n]
inline Var mul_rowvec(Tape& t, Var x, Var r) {
  const Tensor& xv = t.val(x);
  const Tensor& rv = t.val(r);
  const int B = xv.dim(0), n = xv.dim(1);
  if (rv.size() != n) throw std::invalid_argument("mul_rowvec: width mismatch");
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = xv.at(b, i) * rv[i];
  return t.op(std::move(y), {x, r}, [x, r, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& rv = tp.val(r);
    Tensor gx({B, n}), gr({n});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) {
        gx.at(b, i) = g.at(b, i) * rv[i];
        gr[i] += g.at(b, i) * xv.at(b, i);
      }
    tp.accum(x, gx);
    tp.accum(r, gr);
  });
}

// [B,n] op [B] (per-row scalar)
inline Var sub_colvec(Tape& t, Var x, Var c) {
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  if (t.val(c).size() != B) throw std::invalid_argument("sub_colvec: height mismatch");
  const Tensor& cv = t.val(c);
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = xv.at(b, i) - cv[b];
  return t.op(std::move(y), {x, c}, [x, c, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    tp.accum(x, g);
    Tensor gc({B});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) gc[b] -= g.at(b, i);
    tp.accum(c, gc);
  });
}

inline Var mul_colvec(Tape& t, Var x, Var c) {
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  if (t.val(c).size() != B) throw std::invalid_argument("mul_colvec: height mismatch");
  const Tensor& cv = t.val(c);
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = xv.at(b, i) * cv[b];
  return t.op(std::move(y), {x, c}, [x, c, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& cv = tp.val(c);
    Tensor gx({B, n}), gc({B});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) {
        gx.at(b, i) = g.at(b, i) * cv[b];
        gc[b] += g.at(b, i) * xv.at(b, i);
      }
    tp.accum(x, gx);
    tp.accum(c, gc);
  });
}

// [B] replicated across n columns to [B,n].
inline Var broadcast_row_from_col(Tape& t, Var c, int n) {
  const Tensor& cv = t.val(c);
  const int B = static_cast<int>(cv.size());
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = cv[b];
  return t.op(std::move(y), {c}, [c, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gc({B});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) gc[b] += g.at(b, i);
    tp.accum(c, gc);
  });
}

// [n] replicated to [B,n].
inline Var broadcast_row(Tape& t, Var v, int B) {
  const Tensor& vv = t.val(v);
  const int n = static_cast<int>(vv.size());
  Tensor y({B, n});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) y.at(b, i) = vv[i];
  return t.op(std::move(y), {v}, [v, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gv({n});
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) gv[i] += g.at(b, i);
    tp.accum(v, gv);
  });
}

// ------------------------------------------------------------- linear algebra

// y[B,m] = x[B,n] * W[m,n]^T  (weights stored out-major)
inline Var linear(Tape& t, Var x, Var w) {
  detail::check2d(t.val(x), "linear");
  detail::check2d(t.val(w), "linear");
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const int B = xv.dim(0), n = xv.dim(1), m = wv.dim(0);
  if (wv.dim(1) != n)
    throw std::invalid_argument("linear: weight/input width mismatch " + wv.shape_str() + " vs " +
                                xv.shape_str());
  Tensor y({B, m});
  gemm(false, true, B, m, n, 1.0, xv.data(), n, wv.data(), n, 0.0, y.data(), m);
  return t.op(std::move(y), {x, w}, [x, w, B, n, m](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& wv = tp.val(w);
    if (tp.requires_grad(x)) {
      Tensor gx({B, n});
      gemm(false, false, B, n, m, 1.0, g.data(), m, wv.data(), n, 0.0, gx.data(), n);
      tp.accum(x, gx);
    }
    if (tp.requires_grad(w)) {
      Tensor gw({m, n});
      gemm(true, false, m, n, B, 1.0, g.data(), m, xv.data(), n, 0.0, gw.data(), n);
      tp.accum(w, gw);
    }
  });
}

inline Var linear(Tape& t, Var x, Var w, Var bias) { return add_rowvec(t, linear(t, x, w), bias); }

// y[m] = W[m,n] * v[n]
inline Var matvec(Tape& t, Var w, Var v) {
  detail::check2d(t.val(w), "matvec");
  const Tensor& wv = t.val(w);
  const Tensor& vv = t.val(v);
  const int m = wv.dim(0), n = wv.dim(1);
  if (vv.size() != n) throw std::invalid_argument("matvec: size mismatch");
  Tensor y({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += wv.at(i, j) * vv[j];
    y[i] = s;
  }
  return t.op(std::move(y), {w, v}, [w, v, m, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& wv = tp.val(w);
    const Tensor& vv = tp.val(v);
    if (tp.requires_grad(w)) {
      Tensor gw({m, n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gw.at(i, j) = g[i] * vv[j];
      tp.accum(w, gw);
    }
    if (tp.requires_grad(v)) {
      Tensor gv({n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gv[j] += g[i] * wv.at(i, j);
      tp.accum(v, gv);
    }
  });
}

// ------------------------------------------------------------ softmax family

inline Var softmax_rows(Tape& t, Var x) {
  detail::check2d(t.val(x), "softmax_rows");
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  Tensor y({B, n});
  for (int b = 0; b < B; ++b) {
    double mx = -1e300;
    for (int i = 0; i < n; ++i) mx = std::max(mx, xv.at(b, i));
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(xv.at(b, i) - mx);
    for (int i = 0; i < n; ++i) y.at(b, i) = std::exp(xv.at(b, i) - mx) / z;
  }
  return t.op(std::move(y), {x}, [x, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& p = tp.val(self);
    Tensor gx({B, n});
    for (int b = 0; b < B; ++b) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += g.at(b, i) * p.at(b, i);
      for (int i = 0; i < n; ++i) gx.at(b, i) = p.at(b, i) * (g.at(b, i) - s);
    }
    tp.accum(x, gx);
  });
}

// Per-sample cross entropy from logits; labels are fixed class indices.
inline Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  detail::check2d(t.val(logits), "cross_entropy");
  const Tensor& lv = t.val(logits);
  const int B = lv.dim(0), n = lv.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  Tensor y({B});
  for (int b = 0; b < B; ++b) {
    double mx = -1e300;
    for (int i = 0; i < n; ++i) mx = std::max(mx, lv.at(b, i));
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(lv.at(b, i) - mx);
    y[b] = std::log(z) - (lv.at(b, labels[static_cast<size_t>(b)]) - mx);
  }
  return t.op(std::move(y), {logits}, [logits, labels, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& lv = tp.val(logits);
    Tensor gx({B, n});
    for (int b = 0; b < B; ++b) {
      double mx = -1e300;
      for (int i = 0; i < n; ++i) mx = std::max(mx, lv.at(b, i));
      double z = 0.0;
      for (int i = 0; i < n; ++i) z += std::exp(lv.at(b, i) - mx);
      for (int i = 0; i < n; ++i) {
        double p = std::exp(lv.at(b, i) - mx) / z;
        gx.at(b, i) = g[b] * (p - (i == labels[static_cast<size_t>(b)] ? 1.0 : 0.0));
      }
    }
    tp.accum(logits, gx);
  });
}

// ----------------------------------------------------------- shape shuffling

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int B = t.val(parts[0]).dim(0);
  int total = 0;
  for (Var p : parts) {
    detail::check2d(t.val(p), "concat_cols");
    if (t.val(p).dim(0) != B) throw std::invalid_argument("concat_cols: batch mismatch");
    total += t.val(p).dim(1);
  }
  Tensor y({B, total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& pv = t.val(p);
    const int n = pv.dim(1);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) y.at(b, off + i) = pv.at(b, i);
    off += n;
  }
  std::vector<int> widths;
  for (Var p : parts) widths.push_back(t.val(p).dim(1));
  return t.op(std::move(y), parts, [parts, widths, B](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    int off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
      const int n = widths[k];
      Tensor gp({B, n});
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < n; ++i) gp.at(b, i) = g.at(b, off + i);
      tp.accum(parts[k], gp);
      off += n;
    }
  });
}

inline Var slice_cols(Tape& t, Var x, int c0, int c1) {
  detail::check2d(t.val(x), "slice_cols");
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  Tensor y({B, c1 - c0});
  for (int b = 0; b < B; ++b)
    for (int i = c0; i < c1; ++i) y.at(b, i - c0) = xv.at(b, i);
  return t.op(std::move(y), {x}, [x, c0, c1, B, n](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gx({B, n});
    for (int b = 0; b < B; ++b)
      for (int i = c0; i < c1; ++i) gx.at(b, i) = g.at(b, i - c0);
    tp.accum(x, gx);
  });
}

inline Var gather_cols(Tape& t, Var x, const std::vector<int>& idx) {
  detail::check2d(t.val(x), "gather_cols");
  const Tensor& xv = t.val(x);
  const int B = xv.dim(0), n = xv.dim(1);
  const int p = static_cast<int>(idx.size());
  Tensor y({B, p});
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < p; ++k) y.at(b, k) = xv.at(b, idx[static_cast<size_t>(k)]);
  return t.op(std::move(y), {x}, [x, idx, B, n, p](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor gx({B, n});
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < p; ++k) gx.at(b, idx[static_cast<size_t>(k)]) += g.at(b, k);
    tp.accum(x, gx);
  });
}

// Stacks M step tensors [B,n] into a history block [B,n,M]; index m runs from
// oldest (0) to newest (M-1).
inline Var stack_history(Tape& t, const std::vector<Var>& steps) {
  if (steps.empty()) throw std::invalid_argument("stack_history: empty");
  const int B = t.val(steps[0]).dim(0);
  const int n = t.val(steps[0]).dim(1);
  const int M = static_cast<int>(steps.size());
  Tensor y({B, n, M});
  for (int m = 0; m < M; ++m) {
    const Tensor& sv = t.val(steps[static_cast<size_t>(m)]);
    check_same_shape(sv, t.val(steps[0]), "stack_history");
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) y[(static_cast<int64_t>(b) * n + i) * M + m] = sv.at(b, i);
  }
  return t.op(std::move(y), steps, [steps, B, n, M](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    for (int m = 0; m < M; ++m) {
      if (!tp.requires_grad(steps[static_cast<size_t>(m)])) continue;
      Tensor gs({B, n});
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < n; ++i) gs.at(b, i) = g[(static_cast<int64_t>(b) * n + i) * M + m];
      tp.accum(steps[static_cast<size_t>(m)], gs);
    }
  });
}

// ------------------------------------------------------------- normalization

// LayerNorm over the last axis of a [B,n] tensor (rows).
inline Var layernorm_rows(Tape& t, Var x, double eps = 1e-5) {
  Var m = mean_rows(t, x);
  Var xc = sub_colvec(t, x, m);
  Var var = mean_rows(t, square(t, xc));
  Var inv = unary(
      t, add_const(t, var, eps), [](double v) { return 1.0 / std::sqrt(v); },
      [](double v) { return -0.5 / (v * std::sqrt(v)); });
  return mul_colvec(t, xc, inv);
}

inline Var layernorm_rows(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  return add_rowvec(t, mul_rowvec(t, layernorm_rows(t, x, eps), gain), bias);
}

// RMSNorm over rows with learnable per-dimension gain.
inline Var rmsnorm_rows(Tape& t, Var x, Var gain, double eps = 1e-6) {
  Var ms = mean_rows(t, square(t, x));
  Var inv = unary(
      t, add_const(t, ms, eps), [](double v) { return 1.0 / std::sqrt(v); },
      [](double v) { return -0.5 / (v * std::sqrt(v)); });
  return mul_rowvec(t, mul_colvec(t, x, inv), gain);
}

// GLU over rows: [B,2k] -> [B,k], first half gated by sigmoid of second half.
inline Var glu_rows(Tape& t, Var x) {
  const int n = t.val(x).dim(1);
  if (n % 2 != 0) throw std::invalid_argument("glu_rows: odd width");
  Var a = slice_cols(t, x, 0, n / 2);
  Var b = slice_cols(t, x, n / 2, n);
  return mul(t, a, sigmoid(t, b));
}

// Pairwise products for the sync accumulators:
// pi[b,k] = xa[b, ia[k]] * xb[b, ib[k]].
inline Var pair_product(Tape& t, Var xa, Var xb, const std::vector<int>& ia,
                        const std::vector<int>& ib) {
  if (ia.size() != ib.size()) throw std::invalid_argument("pair_product: index length mismatch");
  const Tensor& av = t.val(xa);
  const Tensor& bv = t.val(xb);
  const int B = av.dim(0);
  const int p = static_cast<int>(ia.size());
  Tensor y({B, p});
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < p; ++k)
      y.at(b, k) = av.at(b, ia[static_cast<size_t>(k)]) * bv.at(b, ib[static_cast<size_t>(k)]);
  return t.op(std::move(y), {xa, xb}, [xa, xb, ia, ib, B, p](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(xa);
    const Tensor& bv = tp.val(xb);
    Tensor ga(av.shape()), gb(bv.shape());
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < p; ++k) {
        const int i = ia[static_cast<size_t>(k)], j = ib[static_cast<size_t>(k)];
        ga.at(b, i) += g.at(b, k) * bv.at(b, j);
        gb.at(b, j) += g.at(b, k) * av.at(b, i);
      }
    tp.accum(xa, ga);
    tp.accum(xb, gb);
  });
}

}  // namespace tide::ops
