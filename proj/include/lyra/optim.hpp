#pragma once

#include <cstdint>
#include <vector>

#include "lyra/tensor.hpp"

namespace lyra {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
};

// One bias-corrected Adam update. `grads[i]` may be empty, meaning zero.
void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads,
               OptimizerState& state);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Applies the accumulated gradients of every parameter, then clears them.
  void step();
  void zero_grad();

  const OptimizerState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimizerState state_;
};

}  // namespace lyra
