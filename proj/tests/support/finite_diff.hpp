#pragma once

#include <cmath>
#include <functional>

#include "tide/tensor.hpp"

namespace tide::test {

// Central-difference gradient of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                          double eps = 1e-6) {
  Tensor g(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + eps;
    const double fp = f(x);
    x[i] = v - eps;
    const double fm = f(x);
    x[i] = v;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace tide::test
