#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ambiseg/tensor.hpp"

namespace ambiseg {

/// A trainable tensor together with its stable name.
template <typename T>
struct BasicNamedParam {
  std::string name;
  BasicTensor<T> tensor;
};

using NamedParam = BasicNamedParam<float>;

struct AdamWState {
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// Sizes zeroed moment buffers to match `params`.
void init_adamw_state(AdamWState& state, const std::vector<NamedParam>& params);

/// One decoupled-weight-decay Adam update using the current `state.lr`.
/// Moment buffers are created on first use.
void adamw_step(std::vector<NamedParam>& params, AdamWState& state);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. Throws NumericError naming the first
/// parameter with a non-finite gradient.
double clip_grad_norm(std::vector<NamedParam>& params, double max_norm);

/// Constant learning rate followed by cosine decay to zero over the final
/// `decay_fraction` of `total_steps`.
double cosine_decay_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                       double decay_fraction);

}  // namespace ambiseg
