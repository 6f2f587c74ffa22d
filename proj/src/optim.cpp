#include "lyra/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lyra {

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads,
               OptimizerState& state) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) +
                                " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " parameters, got " +
                                std::to_string(params.size()));
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(o.beta1, t);
  const double correct2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].data();
    const auto& g = grads[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size() || (!g.empty() && g.size() != values.size())) {
      throw std::invalid_argument("adam_step: shape mismatch for parameter " +
                                  std::to_string(k));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      values[i] -= o.lr * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + o.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)) {
  state_.options = options;
}

void Adam::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    grads.emplace_back(p.grad().begin(), p.grad().end());
  }
  adam_step(params_, grads, state_);
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace lyra
