#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ambiseg/mask.hpp"
#include "ambiseg/rng.hpp"
#include "ambiseg/schedule.hpp"
#include "ambiseg/tensor.hpp"

namespace ambiseg {

enum class PredictionKind { kX0, kEpsilon, kV };

std::string_view to_string(PredictionKind kind);
PredictionKind parse_prediction_kind(std::string_view name);

/// Network output tagged with what it estimates.
template <typename T>
struct BasicPrediction {
  PredictionKind kind = PredictionKind::kX0;
  BasicTensor<T> value;
};

using Prediction = BasicPrediction<float>;

/// Every conversion between prediction kinds is linear in the prediction and
/// the noisy sample: target = pred_factor * pred + xt_factor * x_t.
struct ConversionFactors {
  double pred_factor = 1.0;
  double xt_factor = 0.0;
};

/// Throws DomainError when the conversion divides by an alpha or sigma that is
/// exactly zero.
ConversionFactors conversion_factors(PredictionKind from, PredictionKind to,
                                     const Coefficients& coeffs);

/// x_t = alpha(t) x0 + sigma(t) eps.
Tensor forward_sample(const Tensor& x0, double t, const Tensor& eps, const NoiseSchedule& sched);

/// Converts a prediction made at a single time. Differentiable in pred.value.
template <typename T>
BasicPrediction<T> convert(const BasicPrediction<T>& pred, PredictionKind target,
                           const BasicTensor<T>& x_t, const Coefficients& coeffs);

/// Batched conversion with one set of coefficients per leading index.
template <typename T>
BasicTensor<T> convert_batch(const BasicTensor<T>& pred, PredictionKind from, PredictionKind to,
                             const BasicTensor<T>& x_t, std::span<const Coefficients> coeffs);

/// Which sign the x0 term of the ancestral posterior mean carries. The
/// as-printed variant exists only so tests can pin that it is wrong.
enum class PosteriorSign { kCorrected, kAsPrinted };

/// Ancestral step from t to s <= t:
///   x_s = sqrt(a_s^2/a_t^2) ((1-c) x_t + c a_t x0_hat) + sqrt(c sigma_s^2) eps,
///   c = 1 - SNR(t)/SNR(s).
/// The x_t coefficient is evaluated as a_t sigma_s^2 / (a_s sigma_t^2) so the
/// step stays finite at t = 1 where a_t = 0.
Tensor ddpm_step(const Tensor& x_t, const Tensor& x0_hat, double t, double s, const Tensor& eps,
                 const NoiseSchedule& sched, PosteriorSign sign = PosteriorSign::kCorrected);

/// Deterministic (eta = 0) implicit step: x_s = a_s x0_hat + sigma_s eps_hat,
/// eps_hat = (x_t - a_t x0_hat) / sigma_t.
Tensor ddim_step(const Tensor& x_t, const Tensor& x0_hat, double t, double s,
                 const NoiseSchedule& sched);

enum class SamplerKind { kDdpm, kDdim };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDdim;
  int steps = 10;
  double t_min = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  /// t_i = t_min + (1 - t_min) i / steps for i = steps..0, strictly decreasing.
  std::vector<double> timesteps() const;
};

/// Anything that maps (x_t, image, t) to a prediction of a fixed kind.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual PredictionKind prediction_kind() const = 0;
  /// x_t and image are [N,1,H,W]; t holds one time per batch element.
  virtual Tensor predict(const Tensor& x_t, const Tensor& image,
                         std::span<const double> t) const = 0;
};

/// Maps masks {0,1} to the diffusion domain {-1,+1}.
template <typename T = float>
BasicTensor<T> encode_masks(std::span<const Mask> masks);

/// Binarizes x0-space values: v >= 0 -> 1.
Mask binarize(std::span<const float> x0, int height, int width);

/// Runs the reverse process for every image in the batch. Element n draws
/// all of its noise from Rng(seeds[n]), so results do not depend on how
/// elements are batched. At each step the denoiser output is converted to
/// x0-form and clamped to [-1, 1]; the returned masks binarize the x0
/// estimate of the final step. The denoiser is queried at
/// min(t, 1 - t_min) so that eps-prediction never divides by alpha(1) = 0.
std::vector<Mask> sample(const Denoiser& model, const Tensor& images, const SamplerConfig& cfg,
                         const NoiseSchedule& sched, std::span<const std::uint64_t> seeds);

/// Single image [1,1,H,W] (or [1,H,W]) using cfg.seed.
Mask sample(const Denoiser& model, const Tensor& image, const SamplerConfig& cfg,
            const NoiseSchedule& sched);

/// Images and target masks ({-1,+1}) for one optimization step.
template <typename T>
struct BasicTrainingBatch {
  BasicTensor<T> images;
  BasicTensor<T> masks;
};

template <typename T>
using PredictFn = std::function<BasicTensor<T>(const BasicTensor<T>& x_t,
                                               const BasicTensor<T>& image,
                                               std::span<const double> t)>;

/// mean_n w(t_n) * mean_pixels (x0 - x0_hat)^2 at explicit times and noise.
template <typename T>
BasicTensor<T> training_loss_at(const PredictFn<T>& model, PredictionKind kind,
                                const BasicTrainingBatch<T>& batch, const NoiseSchedule& sched,
                                const LossWeighting& lw, std::span<const double> times,
                                const BasicTensor<T>& eps);

/// Draws t ~ U(t_min, 1) per element and eps ~ N(0, I), then evaluates
/// training_loss_at.
template <typename T>
BasicTensor<T> training_loss(const PredictFn<T>& model, PredictionKind kind,
                             const BasicTrainingBatch<T>& batch, const NoiseSchedule& sched,
                             const LossWeighting& lw, Rng& rng, double t_min);

}  // namespace ambiseg
