#pragma once

#include <span>

#include "ambiseg/tensor.hpp"

namespace ambiseg {

/// Cross-correlation of NCHW input with an [O,C,k,k] kernel, k odd, zero
/// padding k/2. Stride 1 preserves H and W; stride 2 halves them (rounding up).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, int stride = 1);

/// Group count used by the denoiser: min(32, C).
int default_groups(std::size_t channels);

/// Normalizes each (sample, group) slice to zero mean and unit variance,
/// then applies the per-channel affine map.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& scale,
                          const BasicTensor<T>& shift, double eps = 1e-5);

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& input);

/// input [..., I] x weight [O, I] + bias [O] -> [..., O].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input);

/// x [N,C,H,W] + v [N,C] broadcast over the spatial dims.
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& v);

/// Concatenates two NCHW tensors along C.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input);

/// out[n] = a[n] * x[n] + c[n] * y[n] with one coefficient pair per leading
/// index. x and y share a shape.
template <typename T>
BasicTensor<T> combine_per_sample(const BasicTensor<T>& x, std::span<const double> a,
                                  const BasicTensor<T>& y, std::span<const double> c);

/// mean_n weights[n] * mean_i (pred[n,i] - target[n,i])^2, a scalar.
template <typename T>
BasicTensor<T> weighted_mse(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                            std::span<const double> weights);

}  // namespace ambiseg
