#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lyra/tensor.hpp"

namespace lyra {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// y = x·W + b with W[in×out], b[1×out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// Single LSTM cell over a batch. Gates are packed as [input|forget|cell|output]
// in one [(in+hidden)×4·hidden] matrix.
struct LstmCell {
  Tensor weight;
  Tensor bias;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, Rng& rng);

  LstmState zero_state(std::size_t batch) const;
  LstmState step(const Tensor& x, const LstmState& state) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

}  // namespace lyra
