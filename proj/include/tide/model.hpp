#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tide/backbone.hpp"
#include "tide/dale.hpp"
#include "tide/dynamics.hpp"
#include "tide/memory.hpp"
#include "tide/neuron_models.hpp"
#include "tide/objective.hpp"
#include "tide/readout.hpp"
#include "tide/spectral.hpp"
#include "tide/sync.hpp"
#include "tide/wta.hpp"

namespace tide {

enum class GameLossVariant { energy, residual };

struct ModelConfig {
  int d_model = 256;
  double rho = 0.8;  // excitatory fraction
  int steps = 50;    // internal computation steps T
  double tau_e = 20.0, tau_i = 5.0, dt = 1.0;
  int k_wta = 5;
  double wta_tol = 1e-4;
  double gamma0 = 0.1;
  int n_i_lat = -1;  // -1: defaults to n_I
  int d_mem = 256;
  int d_ee = 256, d_ei = 128, d_ii = 64;
  int p_ee = -1, p_ei = -1, p_ii = -1;  // -1: same as the stream width
  int n_heads = 8;
  int d_attn = 512;
  int backbone_width = 32;
  int head_hidden = 256;
  int nlm_window = 25;
  int nlm_hidden = 4;
  double dropout = 0.1;
  double sync_clamp = 0.0;  // 0 disables
  int classes = 10;
  int in_channels = 1;
  std::string backbone = "shallow";  // "deep" is an unimplemented config stub
  GameLossVariant game_variant = GameLossVariant::energy;
  double dissipation_e = 1.0, dissipation_i = 1.0;
  int tbptt_k = 0;
  uint64_t seed = 42;

  int n_e() const { return excitatory_count(d_model, rho); }
  int n_i() const { return d_model - n_e(); }
  int d_sync() const { return d_ee + d_ei + d_ii; }
  int pairs_ee() const { return p_ee > 0 ? p_ee : d_ee; }
  int pairs_ei() const { return p_ei > 0 ? p_ei : d_ei; }
  int pairs_ii() const { return p_ii > 0 ? p_ii : d_ii; }
  EulerConfig euler() const { return EulerConfig(tau_e, tau_i, dt); }
};

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  // Frozen memory trajectory: when set, the gated write is skipped and the
  // recorded buffer values are used instead (finite-difference harness).
  const std::vector<Tensor>* memory_replay = nullptr;
};

struct ForwardResult {
  std::vector<Var> logits;  // per internal step, [B,C]
  std::vector<Var> rho;     // per internal step, [B]
  Var z_final;
  Var h_e_final, h_i_final;          // normalized pre-activations at T
  Var u_e_final, u_i_final;          // input-projection drive at T
  Var r_e_pre_final, r_i_final, r_e_final;
  Var dale_ee, dale_ei, dale_ie, dale_ii;
  std::vector<Tensor> memory_trace;              // m after write, per step
  std::vector<std::vector<double>> certainty;    // [T][B]
  std::vector<double> rho_final_values;          // per sample at T
  int batch = 0;
};

// The TIDE engine: Dale-constrained Wilson-Cowan recurrence with per-neuron
// temporal models, synchronization readout, lateral inhibition, surprise-
// gated memory, cross-attention over backbone tokens and a gated output head.
class TideModel {
 public:
  ModelConfig cfg;
  ParamRegistry registry;

  Parameter w_ee, w_ei, w_ie, w_ii, w_e_in, w_i_in;
  Parameter gain_e, gain_i;      // RMSNorm gains
  Parameter r_init_e, r_init_i;  // learnable initial state
  SyncStream sync_ee, sync_ei, sync_ii;
  Parameter latent_ln_gain, latent_ln_bias;
  AttentionParams attention;
  NlmBank nlm_e, nlm_i;
  WtaParams wta;
  MemoryState memory;
  HeadParams head;
  ShallowBackbone backbone;

  explicit TideModel(const ModelConfig& config) : cfg(config) {
    if (cfg.backbone == "deep")
      throw std::invalid_argument(
          "deep HRF backbone is not implemented in this build; use backbone = shallow");
    if (cfg.backbone != "shallow")
      throw std::invalid_argument("unknown backbone: " + cfg.backbone);
    Rng rng(cfg.seed);
    const int ne = cfg.n_e(), ni = cfg.n_i(), ds = cfg.d_sync();

    w_ee = Parameter{"dale.w_ee", ParamGroup::recurrent, dale_init(rng, ne, ne)};
    w_ei = Parameter{"dale.w_ei", ParamGroup::recurrent, dale_init(rng, ne, ni)};
    w_ie = Parameter{"dale.w_ie", ParamGroup::recurrent, dale_init(rng, ni, ne)};
    w_ii = Parameter{"dale.w_ii", ParamGroup::recurrent, dale_init(rng, ni, ni)};
    w_ee.dale_constrained = w_ei.dale_constrained = true;
    w_ie.dale_constrained = w_ii.dale_constrained = true;
    const double s_in = 1.0 / std::sqrt(static_cast<double>(ds));
    w_e_in = Parameter{"dale.w_e_in", ParamGroup::recurrent,
                       rng.uniform_tensor({ne, ds}, -s_in, s_in)};
    w_i_in = Parameter{"dale.w_i_in", ParamGroup::recurrent,
                       rng.uniform_tensor({ni, ds}, -s_in, s_in)};
    gain_e = Parameter{"dyn.gain_e", ParamGroup::recurrent, Tensor({ne}, 1.0)};
    gain_i = Parameter{"dyn.gain_i", ParamGroup::recurrent, Tensor({ni}, 1.0)};
    // Zero start keeps the early latent free of a state-driven baseline, so
    // the input signal dominates from the first step; rates grow from the
    // attention drive alone. Still learnable and non-negative at init.
    r_init_e = Parameter{"dyn.r_init_e", ParamGroup::recurrent, project_dale(Tensor({ne}))};
    r_init_i = Parameter{"dyn.r_init_i", ParamGroup::recurrent, project_dale(Tensor({ni}))};

    sync_ee.init(rng, ne, ne, cfg.pairs_ee(), cfg.d_ee, cfg.seed * 3 + 1, "sync.ee");
    sync_ei.init(rng, ne, ni, cfg.pairs_ei(), cfg.d_ei, cfg.seed * 3 + 2, "sync.ei");
    sync_ii.init(rng, ni, ni, cfg.pairs_ii(), cfg.d_ii, cfg.seed * 3 + 3, "sync.ii");
    sync_ee.clamp_c = sync_ei.clamp_c = sync_ii.clamp_c = cfg.sync_clamp;
    latent_ln_gain = Parameter{"sync.latent_ln_gain", ParamGroup::sync, Tensor({ds}, 1.0)};
    latent_ln_bias = Parameter{"sync.latent_ln_bias", ParamGroup::sync, Tensor({ds})};

    attention.init(rng, ds, cfg.d_attn, cfg.n_heads, cfg.dropout, "attn");
    nlm_e.init(rng, ne, cfg.nlm_window, cfg.nlm_hidden, cfg.tau_e, "nlm.e");
    nlm_i.init(rng, ni, cfg.nlm_window, cfg.nlm_hidden, cfg.tau_i, "nlm.i");
    wta.init(rng, ne, cfg.n_i_lat > 0 ? cfg.n_i_lat : ni, cfg.gamma0, "wta");
    wta.k_max = cfg.k_wta;
    wta.tol = cfg.wta_tol;
    memory.init(rng, cfg.d_mem, ds, "memory");
    head.init(rng, ds + cfg.d_mem, cfg.head_hidden, cfg.classes, cfg.dropout, "head");
    backbone.init(rng, cfg.in_channels, cfg.backbone_width, cfg.d_attn, "backbone");

    register_all();
  }

  DaleWeightSet weights() const {
    DaleWeightSet w;
    w.w_ee = w_ee.value;
    w.w_ei = w_ei.value;
    w.w_ie = w_ie.value;
    w.w_ii = w_ii.value;
    w.w_e_in = w_e_in.value;
    w.w_i_in = w_i_in.value;
    return w;
  }

  // Post-optimizer constraint pass: Dale projection and box clamps.
  void apply_constraints() {
    for (Parameter* p : registry.params) {
      if (p->dale_constrained) project_dale_inplace(p->value);
      if (std::isfinite(p->clamp_lo) || std::isfinite(p->clamp_hi))
        for (int64_t i = 0; i < p->value.size(); ++i) {
          if (p->value[i] < p->clamp_lo) p->value[i] = p->clamp_lo;
          if (p->value[i] > p->clamp_hi) p->value[i] = p->clamp_hi;
        }
    }
  }

  ForwardResult forward(Tape& t, const Tensor& images, const ForwardOptions& opt) {
    const int B = images.dim(0);
    const int ne = cfg.n_e(), ni = cfg.n_i();
    const EulerConfig euler = cfg.euler();
    const double ae = euler.alpha_e(), ai = euler.alpha_i();

    ForwardResult out;
    out.batch = B;

    Var image_var = t.constant(images);
    BackboneOutput kv = backbone.forward(t, image_var, opt.training);

    out.dale_ee = t.param(w_ee);
    out.dale_ei = t.param(w_ei);
    out.dale_ie = t.param(w_ie);
    out.dale_ii = t.param(w_ii);
    Var w_e_in_v = t.param(w_e_in);
    Var w_i_in_v = t.param(w_i_in);
    Var gain_e_v = t.param(gain_e);
    Var gain_i_v = t.param(gain_i);

    Var r_e = ops::broadcast_row(t, t.param(r_init_e), B);
    Var r_i = ops::broadcast_row(t, t.param(r_init_i), B);

    SyncStreamVars sv_ee = stream_vars(t, sync_ee);
    SyncStreamVars sv_ei = stream_vars(t, sync_ei);
    SyncStreamVars sv_ii = stream_vars(t, sync_ii);
    Var nu_ee = t.constant(Tensor({B, sync_ee.p}));
    Var xi_ee = t.constant(Tensor({B, sync_ee.p}));
    Var nu_ei = t.constant(Tensor({B, sync_ei.p}));
    Var xi_ei = t.constant(Tensor({B, sync_ei.p}));
    Var nu_ii = t.constant(Tensor({B, sync_ii.p}));
    Var xi_ii = t.constant(Tensor({B, sync_ii.p}));
    Var latent_gain = t.param(latent_ln_gain);
    Var latent_bias = t.param(latent_ln_bias);

    AttentionVars attn = attention_vars(t, attention);
    NlmBankVars bank_e = bank_vars(t, nlm_e);
    NlmBankVars bank_i = bank_vars(t, nlm_i);
    WtaVars wta_v = wta_vars(t, wta);
    HeadVars head_v = head_vars(t, head);
    Var read_w = t.param(memory.read_w);
    Var read_b = t.param(memory.read_b);

    // FIFO history of post-activations, oldest first; the learnable initial
    // state is the newest entry, earlier slots are zero-padded.
    std::vector<Var> hist_e, hist_i;
    for (int m = 0; m + 1 < cfg.nlm_window; ++m) {
      hist_e.push_back(t.constant(Tensor({B, ne})));
      hist_i.push_back(t.constant(Tensor({B, ni})));
    }
    hist_e.push_back(r_e);
    hist_i.push_back(r_i);

    Var u_e, u_i, h_e, h_i, z, r_e_pre;
    for (int step = 1; step <= cfg.steps; ++step) {
      if (cfg.tbptt_k > 0 && step > 1 && (step - 1) % cfg.tbptt_k == 0) {
        r_e = ops::stop_gradient(t, r_e);
        r_i = ops::stop_gradient(t, r_i);
        nu_ee = ops::stop_gradient(t, nu_ee);
        xi_ee = ops::stop_gradient(t, xi_ee);
        nu_ei = ops::stop_gradient(t, nu_ei);
        xi_ei = ops::stop_gradient(t, xi_ei);
        nu_ii = ops::stop_gradient(t, nu_ii);
        xi_ii = ops::stop_gradient(t, xi_ii);
        for (auto& h : hist_e) h = ops::stop_gradient(t, h);
        for (auto& h : hist_i) h = ops::stop_gradient(t, h);
      }

      // Three-type synchronization readout.
      SyncUpdateOut s_ee = sync_update(t, sync_ee, sv_ee, nu_ee, xi_ee, r_e, r_e);
      SyncUpdateOut s_ei = sync_update(t, sync_ei, sv_ei, nu_ei, xi_ei, r_e, r_i);
      SyncUpdateOut s_ii = sync_update(t, sync_ii, sv_ii, nu_ii, xi_ii, r_i, r_i);
      nu_ee = s_ee.nu;
      xi_ee = s_ee.xi;
      nu_ei = s_ei.nu;
      xi_ei = s_ei.xi;
      nu_ii = s_ii.nu;
      xi_ii = s_ii.xi;
      z = assemble_latent(t, s_ee.z, s_ei.z, s_ii.z, latent_gain, latent_bias);

      Var attn_mask = make_dropout_mask(t, {B, cfg.n_heads, kv.p}, attention.dropout_p, opt);
      Var a = cross_attention(t, z, kv.keys, kv.values, attn, cfg.n_heads, attn_mask);

      // Dale-constrained pre-activations with per-population RMS scale.
      u_e = ops::linear(t, a, w_e_in_v);
      u_i = ops::linear(t, a, w_i_in_v);
      Var h_e_raw =
          ops::add(t, ops::sub(t, ops::linear(t, r_e, out.dale_ee), ops::linear(t, r_i, out.dale_ei)),
                   u_e);
      Var h_i_raw =
          ops::add(t, ops::sub(t, ops::linear(t, r_e, out.dale_ie), ops::linear(t, r_i, out.dale_ii)),
                   u_i);
      h_e = ops::rmsnorm_rows(t, h_e_raw, gain_e_v);
      h_i = ops::rmsnorm_rows(t, h_i_raw, gain_i_v);

      // Per-neuron temporal corrections from the FIFO history.
      Var corr_e = nlm_forward(t, ops::stack_history(t, hist_e), bank_e, cfg.nlm_hidden, cfg.tau_e);
      Var corr_i = nlm_forward(t, ops::stack_history(t, hist_i), bank_i, cfg.nlm_hidden, cfg.tau_i);

      // Forward-Euler update; rates stay non-negative.
      Var phi_e = ops::relu(t, ops::add(t, h_e, corr_e));
      Var phi_i = ops::relu(t, ops::add(t, h_i, corr_i));
      r_e_pre = ops::add(t, ops::scale(t, r_e, 1.0 - ae), ops::scale(t, phi_e, ae));
      r_i = ops::add(t, ops::scale(t, r_i, 1.0 - ai), ops::scale(t, phi_i, ai));

      // Winner-take-all sparsification of the excitatory population.
      r_e = lateral_inhibition(t, r_e_pre, wta_v, wta.k_max, wta.tol);

      hist_e.push_back(r_e);
      hist_i.push_back(r_i);
      if (static_cast<int>(hist_e.size()) > cfg.nlm_window) {
        hist_e.erase(hist_e.begin());
        hist_i.erase(hist_i.begin());
      }

      // E-I activity ratio on the pre-WTA state.
      Var rho_num = ops::scale(t, ops::sum_rows(t, r_e_pre), 1.0 / ne);
      Var rho_den = ops::add_const(t, ops::scale(t, ops::sum_rows(t, r_i), 1.0 / ni), 1e-8);
      Var rho_v = ops::div(t, rho_num, rho_den);
      out.rho.push_back(rho_v);

      // Surprise-gated memory write (outside the tape) and readout.
      Tensor m_now;
      if (opt.memory_replay) {
        m_now = opt.memory_replay->at(static_cast<size_t>(step - 1));
      } else {
        std::vector<double> rho_vals(t.val(rho_v).data(), t.val(rho_v).data() + B);
        MemoryWriteInfo info = memory_write(memory, t.val(z), rho_vals);
        m_now = info.m_after;
      }
      out.memory_trace.push_back(m_now);
      Var mem_read = memory_readout(t, m_now, z, read_w, read_b);

      Var head_mask = make_dropout_mask(t, {B, head.hidden}, head.dropout_p, opt);
      Var logits = output_head(t, z, mem_read, head_v, head_mask);
      out.logits.push_back(logits);

      std::vector<double> cert(static_cast<size_t>(B));
      const Tensor& lv = t.val(logits);
      for (int b = 0; b < B; ++b)
        cert[static_cast<size_t>(b)] = certainty(lv.data() + static_cast<int64_t>(b) * cfg.classes,
                                                 cfg.classes);
      out.certainty.push_back(std::move(cert));
    }

    out.z_final = z;
    out.h_e_final = h_e;
    out.h_i_final = h_i;
    out.u_e_final = u_e;
    out.u_i_final = u_i;
    out.r_e_pre_final = r_e_pre;
    out.r_i_final = r_i;
    out.r_e_final = r_e;
    const Tensor& rho_last = t.val(out.rho.back());
    out.rho_final_values.assign(rho_last.data(), rho_last.data() + B);
    return out;
  }

  // Assembles the FD-friendly loss: CE per step plus the auxiliary terms,
  // with fixed task-step selection when provided.
  struct LossBundle {
    Var total, task, ei, game, sync, spec;
    TaskSelection selection;
  };

  LossBundle build_loss(Tape& t, const ForwardResult& fwd, const std::vector<int>& labels,
                        const LossWeights& weights, long long step,
                        const TaskSelection* fixed_selection = nullptr) {
    std::vector<Var> ce_steps;
    std::vector<std::vector<double>> ce_values;
    for (const Var& logits : fwd.logits) {
      Var ce = ops::cross_entropy(t, logits, labels);
      ce_steps.push_back(ce);
      const Tensor& cv = t.val(ce);
      ce_values.emplace_back(cv.data(), cv.data() + cv.size());
    }
    LossBundle out;
    out.selection =
        fixed_selection ? *fixed_selection : select_task_steps(ce_values, fwd.certainty);
    out.task = task_loss(t, ce_steps, out.selection);
    out.ei = ei_loss(t, fwd.rho.back(), weights.rho_star);
    if (cfg.game_variant == GameLossVariant::energy) {
      out.game = game_loss_energy(t, fwd.r_e_final, fwd.r_i_final, fwd.u_e_final, fwd.u_i_final,
                                  fwd.dale_ee, fwd.dale_ei, fwd.dale_ie, fwd.dale_ii,
                                  cfg.dissipation_e, cfg.dissipation_i, cfg.d_model);
    } else {
      out.game = game_loss_residual(t, fwd.r_e_final, fwd.r_i_final, fwd.h_e_final, fwd.h_i_final,
                                    cfg.d_model);
    }
    out.sync = sync_loss(t, fwd.z_final);
    if (weights.lambda_spec != 0.0) {
      Var lp_ee = perron_sum_ratio(t, fwd.dale_ee, 10);
      Var lp_ii = perron_sum_ratio(t, fwd.dale_ii, 10);
      out.spec = spec_loss(t, lp_ee, lp_ii, weights);
    } else {
      out.spec = t.constant(Tensor::scalar(0.0));
    }
    out.total = total_loss(t, out.task, out.ei, out.game, out.sync, out.spec, weights, step);
    return out;
  }

 private:
  void register_all() {
    registry.add(&w_ee);
    registry.add(&w_ei);
    registry.add(&w_ie);
    registry.add(&w_ii);
    registry.add(&w_e_in);
    registry.add(&w_i_in);
    registry.add(&gain_e);
    registry.add(&gain_i);
    registry.add(&r_init_e);
    registry.add(&r_init_i);
    sync_ee.register_params(registry);
    sync_ei.register_params(registry);
    sync_ii.register_params(registry);
    registry.add(&latent_ln_gain);
    registry.add(&latent_ln_bias);
    attention.register_params(registry);
    nlm_e.register_params(registry);
    nlm_i.register_params(registry);
    wta.register_params(registry);
    memory.register_params(registry);
    head.register_params(registry);
    backbone.register_params(registry);
  }

  Var make_dropout_mask(Tape& t, std::vector<int> shape, double p, const ForwardOptions& opt) {
    if (!opt.training || p <= 0.0) return Var{};
    if (!opt.dropout_rng)
      throw std::invalid_argument("training forward with dropout requires a dropout rng");
    Tensor mask(std::move(shape));
    const double keep = 1.0 - p;
    for (int64_t i = 0; i < mask.size(); ++i)
      mask[i] = opt.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    return t.constant(mask);
  }
};

}  // namespace tide
