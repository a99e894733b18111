#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ambiseg/diffusion.hpp"
#include "ambiseg/optim.hpp"
#include "ambiseg/rng.hpp"
#include "ambiseg/tensor.hpp"

namespace ambiseg {

/// Shape of the conditional UNet denoiser.
struct DenoiserConfig {
  std::vector<int> channels{16, 32, 64};
  std::vector<int> num_res_blocks{1, 2, 2};
  int middle_blocks = 2;
  PredictionKind prediction_kind = PredictionKind::kX0;
  int time_embed_dim = 32;
  bool use_attention = false;

  /// Throws ConfigError for mismatched lists, non-positive sizes, odd
  /// embedding widths, attention, or channel counts that group norm cannot
  /// split (including the concatenated decoder inputs).
  void validate() const;
  /// Spatial dims must be divisible by this.
  int spatial_multiple() const { return 1 << (channels.size() - 1); }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Sinusoidal features of t at geometrically spaced frequencies:
/// [sin(1000 t f_k), cos(1000 t f_k)], f_k = 10000^(-k / (dim/2)).
/// Returns [N, dim]. Throws ConfigError for odd dim.
template <typename T>
BasicTensor<T> sinusoidal_embedding(std::span<const double> t, int dim);

/// Conditional UNet. The noisy mask and the image are concatenated along
/// channels; each resolution runs `num_res_blocks[l]` ResBlocks
/// (GN, SiLU, conv3x3, GN, +time, SiLU, conv3x3, residual) with a skip to
/// the mirrored decoder block. Down: stride-2 conv. Up: nearest 2x + conv.
///
/// Parameters are shared handles; the model is move-only. Use clone() or
/// cast<U>() for an independent copy.
template <typename T>
class BasicDenoiserModel {
 public:
  using Param = BasicNamedParam<T>;

  /// Fan-in uniform init (bound 1/sqrt(fan_in)); group norm scale 1 and
  /// shift 0; final output conv zero.
  static BasicDenoiserModel init(const DenoiserConfig& config, Rng& rng);

  /// Rebuilds a model from parameters in canonical order. Names and shapes
  /// must match what init would create for `config`.
  static BasicDenoiserModel from_params(const DenoiserConfig& config, std::vector<Param> params);

  BasicDenoiserModel(BasicDenoiserModel&&) noexcept = default;
  BasicDenoiserModel& operator=(BasicDenoiserModel&&) noexcept = default;
  BasicDenoiserModel(const BasicDenoiserModel&) = delete;
  BasicDenoiserModel& operator=(const BasicDenoiserModel&) = delete;

  const DenoiserConfig& config() const { return config_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t param_count() const;

  /// Sinusoidal features followed by the two-layer SiLU MLP. [N, D].
  BasicTensor<T> time_embedding(std::span<const double> t) const;

  /// x_t, image: [N,1,H,W]; t: N times. Returns a [N,1,H,W] prediction of
  /// config().prediction_kind.
  BasicPrediction<T> forward(const BasicTensor<T>& x_t, const BasicTensor<T>& image,
                             std::span<const double> t) const;

  void zero_grad();

  BasicDenoiserModel clone() const;

  template <typename U>
  BasicDenoiserModel<U> cast() const {
    std::vector<BasicNamedParam<U>> ps;
    for (const auto& p : params_) ps.push_back({p.name, p.tensor.template cast<U>()});
    return BasicDenoiserModel<U>::from_params(config_, std::move(ps));
  }

 private:
  struct Conv {
    BasicTensor<T> weight, bias;
    int stride = 1;
  };
  struct Norm {
    BasicTensor<T> scale, shift;
    int groups = 1;
  };
  struct Dense {
    BasicTensor<T> weight, bias;
  };
  struct ResBlock {
    Norm norm1;
    Conv conv1;
    Dense time_proj;
    Norm norm2;
    Conv conv2;
    std::optional<Conv> skip;
  };
  struct Level {
    std::vector<ResBlock> blocks;
    std::optional<Conv> resample;
  };

  class Builder;

  BasicDenoiserModel() = default;
  BasicTensor<T> run_block(const ResBlock& block, const BasicTensor<T>& x,
                           const BasicTensor<T>& time_act) const;

  DenoiserConfig config_;
  std::vector<Param> params_;
  Dense time1_, time2_;
  Conv conv_in_;
  std::vector<Level> encoder_;
  std::vector<ResBlock> middle_;
  std::vector<Level> decoder_;  // ordered from the deepest level up
  Norm norm_out_;
  Conv conv_out_;
};

using DenoiserModel = BasicDenoiserModel<float>;

extern template class BasicDenoiserModel<float>;
extern template class BasicDenoiserModel<double>;

/// Adapts a float model to the sampler's Denoiser interface.
class ModelDenoiser final : public Denoiser {
 public:
  explicit ModelDenoiser(const DenoiserModel& model) : model_(model) {}
  PredictionKind prediction_kind() const override { return model_.config().prediction_kind; }
  Tensor predict(const Tensor& x_t, const Tensor& image, std::span<const double> t) const override;

 private:
  const DenoiserModel& model_;
};

}  // namespace ambiseg
