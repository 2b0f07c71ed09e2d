#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tide/param.hpp"

namespace tide {

// Linear warmup to the base rate, then cosine decay to zero at `total`.
inline double lr_schedule(long long step, long long warmup, long long total, double base) {
  if (total <= warmup) throw std::invalid_argument("lr_schedule: total must exceed warmup");
  if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all trainable gradients so the global norm does not exceed max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(ParamRegistry& reg, double max_norm) {
  double total = 0.0;
  for (Parameter* p : reg.params) {
    if (!p->trainable || p->grad.empty()) continue;
    for (int64_t i = 0; i < p->grad.size(); ++i) total += p->grad[i] * p->grad[i];
  }
  total = std::sqrt(total);
  if (max_norm > 0.0 && total > max_norm) {
    const double scale = max_norm / total;
    for (Parameter* p : reg.params) {
      if (!p->trainable || p->grad.empty()) continue;
      for (int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
    }
  }
  return total;
}

// AdamW with decoupled weight decay. Moment buffers align with the registry
// order, so checkpoints restore bit-exactly.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  long long step_count = 0;
  std::vector<Tensor> m, v;

  void attach(const ParamRegistry& reg) {
    m.clear();
    v.clear();
    for (const Parameter* p : reg.params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }

  void update(ParamRegistry& reg, double lr) {
    if (m.size() != reg.params.size()) throw std::logic_error("AdamW: not attached");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t k = 0; k < reg.params.size(); ++k) {
      Parameter* p = reg.params[k];
      if (!p->trainable || p->grad.empty()) continue;
      Tensor& mk = m[k];
      Tensor& vk = v[k];
      for (int64_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i];
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g;
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g * g;
        const double mhat = mk[i] / bc1;
        const double vhat = vk[i] / bc2;
        p->value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value[i]);
      }
    }
  }
};

}  // namespace tide
