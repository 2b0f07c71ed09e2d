#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tide/config.hpp"
#include "tide/data.hpp"
#include "tide/model.hpp"
#include "tide/optimizer.hpp"

namespace tide {

struct StepMetrics {
  long long step = 0;
  double loss_total = 0.0;
  double loss_task = 0.0;
  double loss_ei = 0.0;
  double loss_game = 0.0;
  double loss_sync = 0.0;
  double loss_spec = 0.0;
  double rho_ei = 0.0;
  double lr = 0.0;
  long long skipped = 0;  // cumulative skip counter
  bool this_step_skipped = false;
  double accuracy = 0.0;  // train-batch accuracy at the most-certain step
  double grad_norm = 0.0;
};

// Predicted class per sample: argmax of the logits at that sample's
// most-certain internal step. Shared by the trainer metric and evaluation.
inline std::vector<int> predict_labels(Tape& t, const ForwardResult& fwd, int classes) {
  const int T = static_cast<int>(fwd.logits.size());
  const int B = fwd.batch;
  std::vector<int> out(static_cast<size_t>(B), 0);
  for (int b = 0; b < B; ++b) {
    int best_t = 0;
    for (int step = 1; step < T; ++step)
      if (fwd.certainty[static_cast<size_t>(step)][static_cast<size_t>(b)] >
          fwd.certainty[static_cast<size_t>(best_t)][static_cast<size_t>(b)])
        best_t = step;
    const Tensor& logits = t.val(fwd.logits[static_cast<size_t>(best_t)]);
    int arg = 0;
    for (int c = 1; c < classes; ++c)
      if (logits.at(b, c) > logits.at(b, arg)) arg = c;
    out[static_cast<size_t>(b)] = arg;
  }
  return out;
}

// The outer training loop driver: one optimizer step per call, with the
// NaN guard, gradient clipping, the constraint pass and metric capture.
class Trainer {
 public:
  TideModel& model;
  AdamW optimizer;
  LossWeights loss_weights;
  TrainConfig cfg;
  long long skip_count = 0;
  Rng dropout_rng;

  // Test hook: makes the loss non-finite at the listed steps by poisoning
  // one logit, exercising the guard path.
  std::function<bool(long long)> fault_injector;

  Trainer(TideModel& m, const LossWeights& lw, const TrainConfig& tc)
      : model(m), loss_weights(lw), cfg(tc), dropout_rng(tc.seed ^ 0x5bf03635ULL) {
    optimizer.weight_decay = tc.weight_decay;
    optimizer.attach(model.registry);
  }

  StepMetrics train_step(const Tensor& images, const std::vector<int>& labels, long long step) {
    StepMetrics metrics;
    metrics.step = step;
    metrics.lr = lr_schedule(step, cfg.warmup, cfg.total_steps, cfg.lr);

    model.registry.zero_grads();
    Tape tape;
    ForwardOptions opt;
    opt.training = true;
    opt.dropout_rng = &dropout_rng;
    ForwardResult fwd = model.forward(tape, images, opt);

    if (fault_injector && fault_injector(step)) {
      // poison one logit at the final step
      Tensor bad(tape.val(fwd.logits.back()).shape());
      bad[0] = std::numeric_limits<double>::quiet_NaN();
      fwd.logits.back() = ops::add(tape, fwd.logits.back(), tape.constant(bad));
      const Tensor& lv = tape.val(fwd.logits.back());
      for (int b = 0; b < fwd.batch; ++b)
        fwd.certainty.back()[static_cast<size_t>(b)] =
            certainty(lv.data() + static_cast<int64_t>(b) * model.cfg.classes,
                      model.cfg.classes);
    }

    TideModel::LossBundle loss = model.build_loss(tape, fwd, labels, loss_weights, step);
    metrics.loss_total = tape.val(loss.total).item();
    metrics.loss_task = tape.val(loss.task).item();
    metrics.loss_ei = tape.val(loss.ei).item();
    metrics.loss_game = tape.val(loss.game).item();
    metrics.loss_sync = tape.val(loss.sync).item();
    metrics.loss_spec = tape.val(loss.spec).item();
    double rho_mean = 0.0;
    for (double r : fwd.rho_final_values) rho_mean += r;
    metrics.rho_ei = rho_mean / fwd.batch;

    const std::vector<int> pred = predict_labels(tape, fwd, model.cfg.classes);
    int correct = 0;
    for (size_t b = 0; b < pred.size(); ++b)
      if (pred[b] == labels[b]) ++correct;
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());

    if (!std::isfinite(metrics.loss_total)) {
      // NaN guard: skip the update, drop the poisoned gradients, count and
      // continue; parameters stay bit-identical.
      ++skip_count;
      metrics.this_step_skipped = true;
      metrics.skipped = skip_count;
      model.registry.zero_grads();
      model.apply_constraints();
      return metrics;
    }

    tape.backward(loss.total);
    metrics.grad_norm = clip_global_norm(model.registry, cfg.clip);
    optimizer.update(model.registry, metrics.lr);
    model.apply_constraints();
    metrics.skipped = skip_count;
    return metrics;
  }

  // Every `interval` steps, spectral diagnostics on the recurrent blocks.
  std::optional<SpectralReport> stability_monitor(long long step, long long interval = 100) {
    if (interval <= 0 || step % interval != 0) return std::nullopt;
    return spectral_report(model.weights(), step);
  }
};

struct EvalSummary {
  double accuracy = 0.0;            // prediction at the most-certain step
  double accuracy_last_step = 0.0;  // prediction at t = T
  double mean_certainty = 0.0;
  std::vector<double> certainty_curve;  // per internal step, set-average
  double mean_certainty_correct = 0.0;
  double mean_certainty_incorrect = 0.0;
};

// Top-1 accuracy and certainty statistics over a dataset, evaluated in
// chunks with dropout disabled. The persistent memory buffers are restored
// afterwards so evaluation never leaks test statistics into training state.
inline EvalSummary evaluate(TideModel& model, const Dataset& ds, int batch, int limit = 0) {
  const Tensor mem_m = model.memory.m.value;
  const Tensor mem_v = model.memory.v.value;
  EvalSummary summary;
  const int n = limit > 0 ? std::min(limit, ds.size()) : ds.size();
  summary.certainty_curve.assign(static_cast<size_t>(model.cfg.steps), 0.0);
  int correct = 0;
  double cert_acc = 0.0, cert_correct = 0.0, cert_incorrect = 0.0;
  int n_correct = 0, n_incorrect = 0;
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    std::vector<int> idx(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
    Tensor images = gather_batch(ds, idx);
    std::vector<int> labels = gather_labels(ds, idx);
    Tape tape;
    ForwardOptions opt;
    ForwardResult fwd = model.forward(tape, images, opt);
    std::vector<int> pred = predict_labels(tape, fwd, model.cfg.classes);
    const Tensor& last_logits = tape.val(fwd.logits.back());
    for (int b = 0; b < count; ++b) {
      int arg_last = 0;
      for (int c = 1; c < model.cfg.classes; ++c)
        if (last_logits.at(b, c) > last_logits.at(b, arg_last)) arg_last = c;
      if (arg_last == labels[static_cast<size_t>(b)])
        summary.accuracy_last_step += 1.0 / n;
    }
    for (int b = 0; b < count; ++b) {
      double best_cert = 0.0;
      for (int t = 0; t < model.cfg.steps; ++t) {
        const double c = fwd.certainty[static_cast<size_t>(t)][static_cast<size_t>(b)];
        summary.certainty_curve[static_cast<size_t>(t)] += c / n;
        best_cert = std::max(best_cert, c);
      }
      cert_acc += best_cert;
      if (pred[static_cast<size_t>(b)] == labels[static_cast<size_t>(b)]) {
        ++correct;
        cert_correct += best_cert;
        ++n_correct;
      } else {
        cert_incorrect += best_cert;
        ++n_incorrect;
      }
    }
  }
  summary.accuracy = static_cast<double>(correct) / n;
  summary.mean_certainty = cert_acc / n;
  summary.mean_certainty_correct = n_correct ? cert_correct / n_correct : 0.0;
  summary.mean_certainty_incorrect = n_incorrect ? cert_incorrect / n_incorrect : 0.0;
  model.memory.m.value = mem_m;
  model.memory.v.value = mem_v;
  return summary;
}

}  // namespace tide
