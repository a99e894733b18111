#include "ambiseg/optim.hpp"

#include <cmath>
#include <numbers>

namespace ambiseg {

void init_adamw_state(AdamWState& state, const std::vector<NamedParam>& params) {
  state.m.clear();
  state.v.clear();
  for (const auto& p : params) {
    state.m.emplace_back(p.tensor.numel(), 0.0f);
    state.v.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void adamw_step(std::vector<NamedParam>& params, AdamWState& state) {
  if (state.m.empty() && !params.empty()) init_adamw_state(state, params);
  if (state.m.size() != params.size()) {
    throw ShapeError("adamw: optimizer state has " + std::to_string(state.m.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - state.lr * state.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& tensor = params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != tensor.numel() || v.size() != tensor.numel()) {
      throw ShapeError("adamw: moment buffers do not match parameter " + params[k].name);
    }
    auto w = tensor.data();
    const auto g = tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      w[i] = static_cast<float>(static_cast<double>(w[i]) * decay - state.lr * update);
    }
  }
}

double clip_grad_norm(std::vector<NamedParam>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (auto& p : params) {
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm overflowed");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      for (float& g : p.tensor.grad()) g = static_cast<float>(static_cast<double>(g) * scale);
  }
  return norm;
}

double cosine_decay_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                       double decay_fraction) {
  if (total_steps <= 0 || decay_fraction <= 0.0) return base_lr;
  const auto decay_steps = static_cast<std::int64_t>(
      std::llround(decay_fraction * static_cast<double>(total_steps)));
  const std::int64_t start = total_steps - decay_steps;
  if (step < start || decay_steps <= 0) return base_lr;
  const double progress =
      static_cast<double>(step - start) / static_cast<double>(decay_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace ambiseg
