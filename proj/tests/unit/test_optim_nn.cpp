#include <gtest/gtest.h>

#include <cmath>

#include "lyra/nn.hpp"
#include "lyra/optim.hpp"

using namespace lyra;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(1);
  std::vector<Tensor> params{Tensor::randn({3, 2}, 1.0, rng, true)};
  const auto before = params[0].values();
  OptimizerState state;
  adam_step(params, {std::vector<double>(6, 0.0)}, state);
  EXPECT_EQ(params[0].values(), before);
  adam_step(params, {{}}, state);
  EXPECT_EQ(params[0].values(), before);
}

TEST(Adam, FirstStepMovesEachCoordinateByLr) {
  std::vector<Tensor> params{Tensor::from({4}, {0, 1, -1, 2}, true)};
  const std::vector<double> g{0.5, -3.0, 1e-3, 7.0};
  OptimizerState state;
  state.options.lr = 1e-3;
  adam_step(params, {g}, state);
  const std::vector<double> start{0, 1, -1, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    // m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε)
    const double expected = -1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(params[0].data()[i] - start[i], expected, 1e-12);
    EXPECT_NEAR(std::abs(params[0].data()[i] - start[i]), 1e-3, 1e-7);
  }
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(9);
    Tensor w = Tensor::randn({3, 3}, 1.0, rng, true);
    Tensor x = Tensor::randn({5, 3}, 1.0, rng);
    Adam adam({w});
    std::vector<int> labels{0, 1, 2, 1, 0};
    for (int s = 0; s < 20; ++s) {
      backward(softmax_cross_entropy(matmul(x, w), labels));
      adam.step();
    }
    return w.values();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ReducesASimpleLoss) {
  Rng rng(4);
  Tensor w = Tensor::randn({2, 2}, 1.0, rng, true);
  Tensor x = Tensor::from({2, 2}, {1, 0, 0, 1});
  std::vector<int> labels{1, 0};
  Adam adam({w}, AdamOptions{.lr = 0.05});
  const double initial = softmax_cross_entropy(matmul(x, w), labels).item();
  for (int s = 0; s < 100; ++s) {
    backward(softmax_cross_entropy(matmul(x, w), labels));
    adam.step();
  }
  EXPECT_LT(softmax_cross_entropy(matmul(x, w), labels).item(), 0.1 * initial);
}

TEST(Linear, ShapesAndBias) {
  Rng rng(2);
  Linear lin(4, 3, rng);
  EXPECT_EQ(lin.weight.shape(), (Shape{4, 3}));
  EXPECT_EQ(lin.bias.shape(), (Shape{1, 3}));
  Tensor y = lin(Tensor::zeros({2, 4}));
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, ForgetGateBiasStartsAtOne) {
  Rng rng(3);
  LstmCell cell(3, 4, rng);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(cell.bias.data()[j], (j >= 4 && j < 8) ? 1.0 : 0.0);
}

TEST(LstmCell, ZeroWeightsKeepZeroState) {
  Rng rng(3);
  LstmCell cell(3, 4, rng);
  std::fill(cell.weight.data().begin(), cell.weight.data().end(), 0.0);
  std::fill(cell.bias.data().begin(), cell.bias.data().end(), 0.0);
  LstmState s = cell.step(Tensor::randn({2, 3}, 1.0, rng), cell.zero_state(2));
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, MatchesHandWrittenGateEquations) {
  Rng rng(5);
  LstmCell cell(2, 3, rng);
  Tensor x = Tensor::randn({1, 2}, 1.0, rng);
  LstmState s0{Tensor::randn({1, 3}, 0.5, rng), Tensor::randn({1, 3}, 0.5, rng)};
  LstmState s1 = cell.step(x, s0);

  std::vector<double> in{x.data()[0], x.data()[1], s0.h.data()[0], s0.h.data()[1], s0.h.data()[2]};
  auto pre = [&](std::size_t col) {
    double v = cell.bias.data()[col];
    for (std::size_t r = 0; r < 5; ++r) v += in[r] * cell.weight.data()[r * 12 + col];
    return v;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t j = 0; j < 3; ++j) {
    const double i = sig(pre(j)), f = sig(pre(3 + j)), g = std::tanh(pre(6 + j)), o = sig(pre(9 + j));
    const double c = f * s0.c.data()[j] + i * g;
    EXPECT_NEAR(s1.c.data()[j], c, 1e-12);
    EXPECT_NEAR(s1.h.data()[j], o * std::tanh(c), 1e-12);
  }
}

TEST(LstmCell, UnrolledGradientMatchesFiniteDifferences) {
  Rng rng(6);
  LstmCell cell(3, 4, rng);
  std::vector<Tensor> xs;
  for (int t = 0; t < 3; ++t) xs.push_back(Tensor::randn({2, 3}, 1.0, rng, true));
  Tensor readout = Tensor::randn({4, 2}, 1.0, rng);
  std::vector<int> labels{1, 0};
  auto f = [&] {
    LstmState s = cell.zero_state(2);
    for (const auto& x : xs) s = cell.step(x, s);
    return softmax_cross_entropy(matmul(s.h, readout), labels);
  };
  std::vector<Tensor> params{cell.weight, cell.bias};
  params.insert(params.end(), xs.begin(), xs.end());
  EXPECT_LT(grad_check(f, params), 1e-4);
}
