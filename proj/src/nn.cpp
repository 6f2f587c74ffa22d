#include "lyra/nn.hpp"

#include <cmath>

namespace lyra {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::uniform({in, out}, std::sqrt(6.0 / double(in + out)), rng,
                             true)),
      bias(Tensor::zeros({1, out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const {
  return add_row(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LstmCell::LstmCell(std::size_t input, std::size_t hidden, Rng& rng)
    : weight(Tensor::uniform({input + hidden, 4 * hidden},
                             1.0 / std::sqrt(double(hidden)), rng, true)),
      bias(Tensor::zeros({1, 4 * hidden}, true)),
      input_size(input),
      hidden_size(hidden) {
  // forget gate starts open
  auto b = bias.data();
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
}

LstmState LstmCell::zero_state(std::size_t batch) const {
  return {Tensor::zeros({batch, hidden_size}), Tensor::zeros({batch, hidden_size})};
}

LstmState LstmCell::step(const Tensor& x, const LstmState& state) const {
  const auto hs = hidden_size;
  Tensor gates = add_row(matmul(concat({x, state.h}), weight), bias);
  Tensor in = sigmoid(slice_cols(gates, 0, hs));
  Tensor forget = sigmoid(slice_cols(gates, hs, 2 * hs));
  Tensor cell = tanh(slice_cols(gates, 2 * hs, 3 * hs));
  Tensor out = sigmoid(slice_cols(gates, 3 * hs, 4 * hs));
  Tensor c = add(mul(forget, state.c), mul(in, cell));
  return {mul(out, tanh(c)), c};
}

void LstmCell::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

}  // namespace lyra
