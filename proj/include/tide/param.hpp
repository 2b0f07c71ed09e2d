#pragma once

#include <limits>
#include <string>
#include <vector>

#include "tide/tensor.hpp"

namespace tide {

enum class ParamGroup { backbone, recurrent, nlm, sync, head, memory_heads };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::recurrent: return "recurrent";
    case ParamGroup::nlm: return "nlm";
    case ParamGroup::sync: return "sync";
    case ParamGroup::head: return "head";
    case ParamGroup::memory_heads: return "memory-heads";
  }
  return "?";
}

// One trainable tensor. `dale_constrained` marks weights projected onto the
// non-negative orthant after every optimizer step; clamp_lo/hi are post-step
// box constraints (sync decays, WTA gain, NLM temperatures).
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::recurrent;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool dale_constrained = false;
  double clamp_lo = -std::numeric_limits<double>::infinity();
  double clamp_hi = std::numeric_limits<double>::infinity();

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

// Non-trainable state that still serializes (BN running stats, memory m/v).
struct Buffer {
  std::string name;
  Tensor value;
};

struct ParamRegistry {
  std::vector<Parameter*> params;
  std::vector<Buffer*> buffers;

  Parameter* add(Parameter* p) {
    params.push_back(p);
    return p;
  }
  Buffer* add(Buffer* b) {
    buffers.push_back(b);
    return b;
  }

  void zero_grads() {
    for (auto* p : params) p->zero_grad();
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (auto* p : params) n += p->value.size();
    return n;
  }
};

}  // namespace tide
