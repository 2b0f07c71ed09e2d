#include <catch_amalgamated.hpp>

#include <sstream>

#include "support/model_check.hpp"
#include "tide/checkpoint.hpp"
#include "tide/metrics.hpp"
#include "tide/trainer.hpp"

using namespace tide;

namespace {

Tensor micro_images(int b, int hw, uint64_t seed) {
  Rng rng(seed);
  return rng.uniform_tensor({b, 1, hw, hw}, 0.0, 1.0);
}

}  // namespace

TEST_CASE("full-objective gradients match finite differences on a micro-model") {
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  lw.lambda_spec = 0.1;  // exercise the spectral term as well
  lw.t_s = 0;
  lw.t_w = 1;  // curriculum fully on
  Tensor images = micro_images(2, 4, 7);
  std::vector<int> labels = {0, 1};

  test::GradCheckReport report = test::model_grad_check(model, images, labels, lw, 10);
  INFO("worst: " << report.worst_param << " analytic=" << report.worst_analytic
                 << " fd=" << report.worst_fd);
  REQUIRE(report.max_rel_err < 1e-3);
  // every group was visited
  REQUIRE(report.per_group.size() == 6);
}

TEST_CASE("memory write path is gradient-isolated at the model level") {
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  lw.t_s = 0;
  lw.t_w = 1;
  // force surprise above threshold so the gate is active during the run
  model.memory.theta_s = -1.0;
  Tensor images = micro_images(2, 4, 8);
  std::vector<int> labels = {1, 0};

  model.registry.zero_grads();
  Tape tape;
  ForwardOptions opt;
  opt.training = true;
  ForwardResult fwd = model.forward(tape, images, opt);
  REQUIRE(fwd.memory_trace.size() == 3);
  // the gate actually wrote
  REQUIRE(model.memory.m.value.norm_inf() > 0.0);
  TideModel::LossBundle loss = model.build_loss(tape, fwd, labels, lw, 10);
  tape.backward(loss.total);

  REQUIRE(model.memory.read_w.grad.norm_inf() > 0.0);
  REQUIRE(model.memory.rec_w.grad.norm_inf() == 0.0);
  REQUIRE(model.memory.proj_w.grad.norm_inf() == 0.0);
  REQUIRE(model.memory.kappa.grad.norm_inf() == 0.0);
}

TEST_CASE("rates remain non-negative and Dale blocks stay in the orthant while training") {
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  lw.t_s = 0;
  lw.t_w = 1;
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.warmup = 5;
  tc.total_steps = 40;
  tc.batch = 4;
  Trainer trainer(model, lw, tc);

  Dataset ds = synthetic_task(SyntheticKind::bars, 32, 5, 4);
  Batcher batcher(ds.size(), tc.batch, tc.seed);
  for (long long step = 1; step <= 30; ++step) {
    auto idx = batcher.next();
    StepMetrics m = trainer.train_step(gather_batch(ds, idx), gather_labels(ds, idx), step);
    REQUIRE(std::isfinite(m.loss_total));
    REQUIRE(model.w_ee.value.min() >= 0.0);
    REQUIRE(model.w_ei.value.min() >= 0.0);
    REQUIRE(model.w_ie.value.min() >= 0.0);
    REQUIRE(model.w_ii.value.min() >= 0.0);
    REQUIRE(model.wta.gamma.value.item() >= 0.01);
    REQUIRE(model.sync_ee.delta.value.min() >= 0.0);
    REQUIRE(model.sync_ee.delta.value.max() <= 15.0);
  }
}

TEST_CASE("micro-model reaches full training accuracy on a separable task") {
  ModelConfig mc;
  mc.d_model = 24;  // n_E = 19, n_I = 5
  mc.steps = 6;
  mc.d_mem = 12;
  mc.d_ee = 12;
  mc.d_ei = 6;
  mc.d_ii = 4;
  mc.n_heads = 4;
  mc.d_attn = 24;
  mc.backbone_width = 8;
  mc.head_hidden = 16;
  mc.nlm_window = 6;
  mc.nlm_hidden = 2;
  mc.dropout = 0.0;
  mc.classes = 2;
  mc.in_channels = 1;
  mc.seed = 42;
  TideModel model(mc);
  LossWeights lw;
  lw.t_s = 20;
  lw.t_w = 50;
  TrainConfig tc;
  tc.lr = 5e-3;
  tc.warmup = 20;
  tc.total_steps = 300;
  tc.batch = 16;
  Trainer trainer(model, lw, tc);

  Dataset ds = synthetic_task(SyntheticKind::bars, 64, 3, 8);
  Batcher batcher(ds.size(), tc.batch, tc.seed);
  for (long long step = 1; step <= 200; ++step) {
    auto idx = batcher.next();
    trainer.train_step(gather_batch(ds, idx), gather_labels(ds, idx), step);
  }
  EvalSummary summary = evaluate(model, ds, 16);
  REQUIRE(summary.accuracy == 1.0);
}

TEST_CASE("nan guard skips the update and leaves parameters bit-identical") {
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.warmup = 2;
  tc.total_steps = 50;
  Trainer trainer(model, lw, tc);
  trainer.fault_injector = [](long long step) { return step == 3 || step == 5 || step == 6; };

  Dataset ds = synthetic_task(SyntheticKind::bars, 16, 4, 4);
  Batcher batcher(ds.size(), 4, 1);

  std::vector<Tensor> before;
  for (long long step = 1; step <= 8; ++step) {
    auto idx = batcher.next();
    Tensor images = gather_batch(ds, idx);
    std::vector<int> labels = gather_labels(ds, idx);
    if (step == 3) {
      before.clear();
      for (Parameter* p : model.registry.params) before.push_back(p->value);
    }
    StepMetrics m = trainer.train_step(images, labels, step);
    const bool injected = step == 3 || step == 5 || step == 6;
    REQUIRE(m.this_step_skipped == injected);
    REQUIRE(std::isfinite(m.loss_total) == !injected);
    if (step == 3) {
      size_t k = 0;
      for (Parameter* p : model.registry.params) {
        const Tensor& b = before[k++];
        for (int64_t i = 0; i < b.size(); ++i) REQUIRE(p->value[i] == b[i]);
      }
    }
    if (step == 8) REQUIRE(m.skipped == 3);
  }
}

TEST_CASE("stability monitor fires on the interval and matches direct calls") {
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  TrainConfig tc;
  Trainer trainer(model, lw, tc);

  REQUIRE_FALSE(trainer.stability_monitor(50, 100).has_value());
  auto report = trainer.stability_monitor(100, 100);
  REQUIRE(report.has_value());
  REQUIRE(report->perron_ee ==
          Catch::Approx(perron_sum_ratio(model.w_ee.value, 10)).margin(1e-15));
  REQUIRE(report->perron_ii ==
          Catch::Approx(perron_sum_ratio(model.w_ii.value, 10)).margin(1e-15));
  const LdsResult lds = lds_test(compose_effective(model.weights()));
  REQUIRE(report->lds_lambda_max == Catch::Approx(lds.lambda_max).margin(1e-12));
}

TEST_CASE("learning-rate schedule endpoints") {
  REQUIRE(lr_schedule(0, 100, 1000, 1e-3) == 0.0);
  REQUIRE(lr_schedule(100, 100, 1000, 1e-3) == Catch::Approx(1e-3).margin(1e-18));
  REQUIRE(lr_schedule(1000, 100, 1000, 1e-3) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(lr_schedule(550, 100, 1000, 1e-3) == Catch::Approx(5e-4).margin(1e-12));
  REQUIRE_THROWS_AS(lr_schedule(0, 100, 100, 1e-3), std::invalid_argument);
}

TEST_CASE("same seed and config give a bit-identical metrics stream") {
  auto run = [](int steps) {
    ModelConfig mc = test::micro_model_config();
    mc.dropout = 0.1;  // exercise the seeded dropout path
    TideModel model(mc);
    LossWeights lw;
    lw.t_s = 2;
    lw.t_w = 10;
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.warmup = 5;
    tc.total_steps = 100;
    Trainer trainer(model, lw, tc);
    Dataset ds = synthetic_task(SyntheticKind::bars, 32, 3, 4);
    Batcher batcher(ds.size(), 8, tc.seed);
    std::ostringstream stream;
    stream.precision(17);
    for (long long step = 1; step <= steps; ++step) {
      auto idx = batcher.next();
      StepMetrics m = trainer.train_step(gather_batch(ds, idx), gather_labels(ds, idx), step);
      stream << m.loss_total << "," << m.loss_task << "," << m.rho_ei << "," << m.accuracy
             << "\n";
    }
    return stream.str();
  };
  REQUIRE(run(25) == run(25));
}

TEST_CASE("truncated BPTT severs old recurrent edges") {
  ModelConfig mc = test::micro_model_config();
  Tensor images = micro_images(2, 4, 11);
  std::vector<int> labels = {0, 1};
  LossWeights lw;
  lw.t_s = 0;
  lw.t_w = 1;

  auto grads_with_k = [&](int k) {
    ModelConfig m2 = mc;
    m2.tbptt_k = k;
    TideModel model(m2);
    model.registry.zero_grads();
    Tape tape;
    ForwardOptions opt;
    opt.training = true;
    ForwardResult fwd = model.forward(tape, images, opt);
    TideModel::LossBundle loss = model.build_loss(tape, fwd, labels, lw, 10);
    tape.backward(loss.total);
    return model.w_ee.grad;
  };

  Tensor full = grads_with_k(0);
  Tensor k1 = grads_with_k(1);
  Tensor k_big = grads_with_k(10);  // k >= T behaves like full backprop

  double diff1 = 0.0, diff_big = 0.0;
  for (int64_t i = 0; i < full.size(); ++i) {
    diff1 = std::max(diff1, std::abs(full[i] - k1[i]));
    diff_big = std::max(diff_big, std::abs(full[i] - k_big[i]));
  }
  REQUIRE(diff1 > 1e-9);
  REQUIRE(diff_big == 0.0);
}

TEST_CASE("checkpoint save/load restores the training state of a model") {
  namespace fs = std::filesystem;
  ModelConfig mc = test::micro_model_config();
  TideModel model(mc);
  LossWeights lw;
  TrainConfig tc;
  tc.total_steps = 100;
  tc.warmup = 5;
  Trainer trainer(model, lw, tc);
  Dataset ds = synthetic_task(SyntheticKind::bars, 16, 3, 4);
  Batcher batcher(ds.size(), 4, tc.seed);
  for (long long step = 1; step <= 5; ++step) {
    auto idx = batcher.next();
    trainer.train_step(gather_batch(ds, idx), gather_labels(ds, idx), step);
  }

  const fs::path dir = fs::temp_directory_path() / "tide_trainer_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "state.tide").string();
  CheckpointMeta meta;
  meta.config_text = "test";
  meta.seed = tc.seed;
  meta.step = 5;
  save_checkpoint(path, meta, model.registry, &trainer.optimizer);

  TideModel model2(mc);
  Trainer trainer2(model2, lw, tc);
  CheckpointMeta back = load_checkpoint(path, model2.registry, &trainer2.optimizer);
  REQUIRE(back.step == 5);
  for (size_t k = 0; k < model.registry.params.size(); ++k) {
    const Tensor& a = model.registry.params[k]->value;
    const Tensor& b = model2.registry.params[k]->value;
    for (int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }
  REQUIRE(trainer2.optimizer.step_count == trainer.optimizer.step_count);
  fs::remove_all(dir);
}
