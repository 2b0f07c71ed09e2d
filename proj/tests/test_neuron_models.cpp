#include <catch_amalgamated.hpp>

#include "support/finite_diff.hpp"
#include "tide/neuron_models.hpp"

using namespace tide;

TEST_CASE("temporal kernel is a normalized, recency-weighted softmax") {
  Tensor flat = temporal_kernel(8, 1e9);
  for (int m = 0; m < 8; ++m) REQUIRE(flat[m] == Catch::Approx(1.0 / 8).margin(1e-9));

  Tensor k2 = temporal_kernel(2, 1.0);
  REQUIRE(k2[0] == Catch::Approx(0.26894142137).margin(1e-9));
  REQUIRE(k2[1] == Catch::Approx(0.73105857863).margin(1e-9));

  for (int m_len : {2, 5, 25, 60}) {
    for (double tau : {0.5, 5.0, 20.0, 300.0}) {
      Tensor k = temporal_kernel(m_len, tau);
      double s = 0.0;
      for (int m = 0; m < m_len; ++m) s += k[m];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
      for (int m = 1; m < m_len; ++m) REQUIRE(k[m] > k[m - 1]);
    }
  }
  REQUIRE_THROWS_AS(temporal_kernel(4, 0.0), std::invalid_argument);
}

TEST_CASE("fifo keeps exactly the last M values in order") {
  FifoBuffer buf(1, 2, 3);
  REQUIRE(buf.data.norm_inf() == 0.0);

  Tensor r({1, 2});
  r.at(0, 0) = 1.0;
  r.at(0, 1) = -1.0;
  FifoBuffer pushed = fifo_push(buf, r);
  REQUIRE(pushed.data[2] == 1.0);   // newest slot of neuron 0
  REQUIRE(pushed.data[0] == 0.0);
  REQUIRE(pushed.data[1] == 0.0);

  for (int step = 0; step < 6; ++step) {
    Tensor v({1, 2});
    v.at(0, 0) = step;
    v.at(0, 1) = 10 + step;
    buf.push(v);
  }
  // after 2M pushes only the last M remain, oldest first
  REQUIRE(buf.data[0] == 3.0);
  REQUIRE(buf.data[1] == 4.0);
  REQUIRE(buf.data[2] == 5.0);
  REQUIRE(buf.data[3] == 13.0);
  REQUIRE(buf.data[5] == 15.0);
}

namespace {

// Scalar reimplementation of the NLM pipeline for one neuron, following the
// published algorithm step by step.
double nlm_scalar_oracle(const std::vector<double>& history, double tau,
                         const std::vector<double>& w1, const std::vector<double>& b1,
                         const std::vector<double>& w2, const std::vector<double>& b2,
                         double temp) {
  const int M = static_cast<int>(history.size());
  Tensor kernel = temporal_kernel(M, tau);
  std::vector<double> u(history);
  for (int m = 0; m < M; ++m) u[static_cast<size_t>(m)] *= kernel[m];
  double mean = 0.0;
  for (double v : u) mean += v;
  mean /= M;
  double var = 0.0;
  for (double v : u) var += (v - mean) * (v - mean);
  var /= M;
  for (double& v : u) v = (v - mean) / std::sqrt(var + 1e-5);
  // M -> 2H with H = 1
  double y0 = b1[0], y1 = b1[1];
  for (int m = 0; m < M; ++m) {
    y0 += u[static_cast<size_t>(m)] * w1[static_cast<size_t>(2 * m)];
    y1 += u[static_cast<size_t>(m)] * w1[static_cast<size_t>(2 * m + 1)];
  }
  y0 /= temp;
  y1 /= temp;
  const double gated = y0 / (1.0 + std::exp(-y1));
  // H -> 2
  const double z0 = b2[0] + gated * w2[0];
  const double z1 = b2[1] + gated * w2[1];
  return z0 / (1.0 + std::exp(-z1));
}

}  // namespace

TEST_CASE("nlm forward, zero buffer and per-neuron structure") {
  Rng rng(51);
  NlmBank bank;
  bank.init(rng, 3, 4, 2, 20.0, "t");

  Tape t;
  NlmBankVars bv = bank_vars(t, bank);

  SECTION("zero buffer with zero biases gives zero corrections") {
    bank.b1.value.fill(0.0);
    bank.b2.value.fill(0.0);
    Tape t2;
    NlmBankVars bv2 = bank_vars(t2, bank);
    Var hist = t2.constant(Tensor({2, 3, 4}));
    Var out = nlm_forward(t2, hist, bv2, 2, 20.0);
    REQUIRE(t2.val(out).norm_inf() == 0.0);
  }

  SECTION("identical weights and histories give identical corrections") {
    // copy neuron 0's weights into neuron 1
    for (int m = 0; m < 4; ++m)
      for (int k = 0; k < 4; ++k)
        bank.w1.value[(1 * 4 + m) * 4 + k] = bank.w1.value[(0 * 4 + m) * 4 + k];
    for (int k = 0; k < 4; ++k) bank.b1.value[4 + k] = bank.b1.value[k];
    for (int h = 0; h < 2; ++h)
      for (int k = 0; k < 2; ++k) bank.w2.value[(1 * 2 + h) * 2 + k] = bank.w2.value[(0 * 2 + h) * 2 + k];
    for (int k = 0; k < 2; ++k) bank.b2.value[2 + k] = bank.b2.value[k];
    Tensor hist({1, 3, 4});
    for (int m = 0; m < 4; ++m) {
      hist[0 * 4 + m] = 0.3 * m;
      hist[1 * 4 + m] = 0.3 * m;  // same history for neuron 1
      hist[2 * 4 + m] = -0.1 * m;
    }
    Tape t2;
    NlmBankVars bv2 = bank_vars(t2, bank);
    Var out = nlm_forward(t2, t2.constant(hist), bv2, 2, 20.0);
    REQUIRE(t2.val(out).at(0, 0) == Catch::Approx(t2.val(out).at(0, 1)).margin(1e-14));
  }

  SECTION("perturbing one neuron's history leaves the others unchanged") {
    Tensor hist = rng.normal_tensor({2, 3, 4});
    Tape ta;
    Var outa = nlm_forward(ta, ta.constant(hist), bank_vars(ta, bank), 2, 20.0);
    Tensor hist2 = hist;
    for (int m = 0; m < 4; ++m) hist2[(0 * 3 + 1) * 4 + m] += 0.7;  // neuron 1, batch 0
    Tape tb;
    Var outb = nlm_forward(tb, tb.constant(hist2), bank_vars(tb, bank), 2, 20.0);
    REQUIRE(ta.val(outa).at(0, 0) == tb.val(outb).at(0, 0));
    REQUIRE(ta.val(outa).at(0, 2) == tb.val(outb).at(0, 2));
    REQUIRE(ta.val(outa).at(0, 1) != tb.val(outb).at(0, 1));
  }
}

TEST_CASE("single-neuron nlm matches the scalar pipeline oracle") {
  NlmBank bank;
  Rng rng(52);
  bank.init(rng, 1, 2, 1, 3.0, "t");
  // hand-set weights
  std::vector<double> w1 = {0.4, -0.2, 0.9, 0.5};  // [M=2][2H=2]
  std::vector<double> b1 = {0.1, -0.3};
  std::vector<double> w2 = {1.2, -0.7};  // [H=1][2]
  std::vector<double> b2 = {0.05, 0.6};
  for (int i = 0; i < 4; ++i) bank.w1.value[i] = w1[static_cast<size_t>(i)];
  for (int i = 0; i < 2; ++i) bank.b1.value[i] = b1[static_cast<size_t>(i)];
  for (int i = 0; i < 2; ++i) bank.w2.value[i] = w2[static_cast<size_t>(i)];
  for (int i = 0; i < 2; ++i) bank.b2.value[i] = b2[static_cast<size_t>(i)];
  bank.temperature.value[0] = 1.7;

  Tensor hist({1, 1, 2});
  hist[0] = 0.8;
  hist[1] = -0.5;
  Tape t;
  Var out = nlm_forward(t, t.constant(hist), bank_vars(t, bank), 1, 3.0);
  const double expect = nlm_scalar_oracle({0.8, -0.5}, 3.0, w1, b1, w2, b2, 1.7);
  REQUIRE(t.val(out)[0] == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("nlm gradients match finite differences") {
  Rng rng(53);
  NlmBank bank;
  bank.init(rng, 2, 3, 2, 5.0, "t");
  Tensor hist = rng.normal_tensor({2, 2, 3});

  auto loss_with = [&](NlmBank& b) {
    Tape t;
    Var out = nlm_forward(t, t.constant(hist), bank_vars(t, bank), 2, 5.0);
    return t.val(ops::mean(t, ops::square(t, out))).item();
  };

  Tape t;
  NlmBankVars bv = bank_vars(t, bank);
  Var out = nlm_forward(t, t.constant(hist), bv, 2, 5.0);
  t.backward(ops::mean(t, ops::square(t, out)));

  for (Parameter* p : {&bank.w1, &bank.b1, &bank.w2, &bank.b2, &bank.temperature}) {
    auto f = [&](const Tensor& v) {
      Tensor saved = p->value;
      p->value = v;
      const double out_v = loss_with(bank);
      p->value = saved;
      return out_v;
    };
    Tensor fd = test::fd_gradient(f, p->value, 1e-5);
    REQUIRE(test::max_rel_err(p->grad, fd, 1e-5) < 1e-4);
    p->zero_grad();
  }
}
