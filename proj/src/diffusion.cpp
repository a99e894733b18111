#include "ambiseg/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ambiseg/ops.hpp"

namespace ambiseg {
namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " differ");
  }
}

double nonzero(double v, const char* name) {
  if (v == 0.0) throw DomainError(std::string("conversion divides by ") + name + " = 0");
  return v;
}

}  // namespace

std::string_view to_string(PredictionKind kind) {
  switch (kind) {
    case PredictionKind::kX0: return "x0";
    case PredictionKind::kEpsilon: return "epsilon";
    case PredictionKind::kV: return "v";
  }
  return "unknown";
}

PredictionKind parse_prediction_kind(std::string_view name) {
  if (name == "x0" || name == "x") return PredictionKind::kX0;
  if (name == "epsilon" || name == "eps") return PredictionKind::kEpsilon;
  if (name == "v") return PredictionKind::kV;
  throw ConfigError("unknown prediction kind '" + std::string(name) + "'");
}

std::string_view to_string(SamplerKind kind) {
  return kind == SamplerKind::kDdpm ? "ddpm" : "ddim";
}

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "ddpm") return SamplerKind::kDdpm;
  if (name == "ddim") return SamplerKind::kDdim;
  throw ConfigError("unknown sampler '" + std::string(name) + "'");
}

ConversionFactors conversion_factors(PredictionKind from, PredictionKind to,
                                     const Coefficients& k) {
  using P = PredictionKind;
  const double a = k.alpha, s = k.sigma;
  if (from == to) return {1.0, 0.0};
  if (from == P::kEpsilon && to == P::kX0) return {-s / nonzero(a, "alpha"), 1.0 / a};
  if (from == P::kV && to == P::kX0) return {-s, a};
  if (from == P::kX0 && to == P::kEpsilon) return {-a / nonzero(s, "sigma"), 1.0 / s};
  if (from == P::kV && to == P::kEpsilon) return {a, s};
  if (from == P::kX0 && to == P::kV) return {-1.0 / nonzero(s, "sigma"), a / s};
  // epsilon -> v
  return {1.0 / nonzero(a, "alpha"), -s / a};
}

Tensor forward_sample(const Tensor& x0, double t, const Tensor& eps, const NoiseSchedule& sched) {
  same_shape(x0, eps, "forward_sample");
  const auto k = coefficients(sched, t);
  std::vector<float> out(x0.numel());
  const auto a = x0.data();
  const auto e = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(k.alpha * a[i] + k.sigma * e[i]);
  }
  return Tensor(x0.shape(), std::move(out));
}

template <typename T>
BasicPrediction<T> convert(const BasicPrediction<T>& pred, PredictionKind target,
                           const BasicTensor<T>& x_t, const Coefficients& coeffs) {
  if (pred.kind == target) return pred;
  const std::size_t batch = pred.value.rank() ? pred.value.dim(0) : 1;
  std::vector<Coefficients> per(batch, coeffs);
  if (pred.value.rank() == 0) {
    const auto f = conversion_factors(pred.kind, target, coeffs);
    const double v = f.pred_factor * pred.value.item() + f.xt_factor * x_t.item();
    return {target, BasicTensor<T>::scalar(static_cast<T>(v))};
  }
  return {target, convert_batch(pred.value, pred.kind, target, x_t, per)};
}

template <typename T>
BasicTensor<T> convert_batch(const BasicTensor<T>& pred, PredictionKind from, PredictionKind to,
                             const BasicTensor<T>& x_t, std::span<const Coefficients> coeffs) {
  std::vector<double> a(coeffs.size()), c(coeffs.size());
  for (std::size_t n = 0; n < coeffs.size(); ++n) {
    const auto f = conversion_factors(from, to, coeffs[n]);
    a[n] = f.pred_factor;
    c[n] = f.xt_factor;
  }
  return combine_per_sample(pred, std::span<const double>(a), x_t, std::span<const double>(c));
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& x0_hat, double t, double s, const Tensor& eps,
                 const NoiseSchedule& sched, PosteriorSign sign) {
  same_shape(x_t, x0_hat, "ddpm_step");
  same_shape(x_t, eps, "ddpm_step");
  if (s > t) throw UsageError("ddpm_step: s must not exceed t");
  if (s == t) return x_t.detach();
  const auto kt = coefficients(sched, t);
  const auto ks = coefficients(sched, s);
  const double at2 = kt.alpha * kt.alpha, st2 = kt.sigma * kt.sigma;
  const double as2 = ks.alpha * ks.alpha, ss2 = ks.sigma * ks.sigma;
  const double c = 1.0 - (at2 * ss2) / (st2 * as2);
  const double k_xt = kt.alpha * ss2 / (ks.alpha * st2);
  const double k_x0 = (sign == PosteriorSign::kCorrected ? 1.0 : -1.0) * c * ks.alpha;
  const double k_eps = std::sqrt(std::max(c, 0.0)) * ks.sigma;
  std::vector<float> out(x_t.numel());
  const auto xt = x_t.data();
  const auto x0 = x0_hat.data();
  const auto e = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(k_xt * xt[i] + k_x0 * x0[i] + k_eps * e[i]);
  }
  return Tensor(x_t.shape(), std::move(out));
}

Tensor ddim_step(const Tensor& x_t, const Tensor& x0_hat, double t, double s,
                 const NoiseSchedule& sched) {
  same_shape(x_t, x0_hat, "ddim_step");
  if (s > t) throw UsageError("ddim_step: s must not exceed t");
  const auto kt = coefficients(sched, t);
  const auto ks = coefficients(sched, s);
  if (kt.sigma == 0.0) throw DomainError("ddim_step: sigma(t) = 0");
  std::vector<float> out(x_t.numel());
  const auto xt = x_t.data();
  const auto x0 = x0_hat.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps_hat = (xt[i] - kt.alpha * x0[i]) / kt.sigma;
    out[i] = static_cast<float>(ks.alpha * x0[i] + ks.sigma * eps_hat);
  }
  return Tensor(x_t.shape(), std::move(out));
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (!(t_min >= 0.0 && t_min < 1.0)) throw ConfigError("sampler t_min must lie in [0, 1)");
}

std::vector<double> SamplerConfig::timesteps() const {
  validate();
  std::vector<double> ts;
  for (int i = steps; i >= 0; --i) {
    ts.push_back(i == steps ? 1.0 : t_min + (1.0 - t_min) * i / steps);
  }
  return ts;
}

template <typename T>
BasicTensor<T> encode_masks(std::span<const Mask> masks) {
  if (masks.empty()) throw UsageError("encode_masks: no masks");
  const int h = masks[0].height, w = masks[0].width;
  std::vector<T> out;
  out.reserve(masks.size() * static_cast<std::size_t>(h) * w);
  for (const auto& m : masks) {
    if (m.height != h || m.width != w) throw ShapeError("encode_masks: masks differ in size");
    for (auto p : m.pixels) out.push_back(p ? T{1} : T{-1});
  }
  return BasicTensor<T>({masks.size(), 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                        std::move(out));
}

Mask binarize(std::span<const float> x0, int height, int width) {
  Mask m(height, width);
  for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = x0[i] >= 0.0f ? 1 : 0;
  return m;
}

std::vector<Mask> sample(const Denoiser& model, const Tensor& images, const SamplerConfig& cfg,
                         const NoiseSchedule& sched, std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ShapeError("sample: images must be [N,1,H,W], got " + shape_to_string(images.shape()));
  }
  const std::size_t batch = images.dim(0);
  if (seeds.size() != batch) throw UsageError("sample: need one seed per image");
  const std::size_t plane = images.dim(2) * images.dim(3);
  NoGradGuard no_grad;

  std::vector<Rng> rngs;
  rngs.reserve(batch);
  for (auto s : seeds) rngs.emplace_back(s);
  auto draw_noise = [&] {
    std::vector<float> v(batch * plane);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < plane; ++i) v[n * plane + i] = static_cast<float>(rngs[n].normal());
    return Tensor(images.shape(), std::move(v));
  };

  const auto ts = cfg.timesteps();
  const double t_query_max = 1.0 - cfg.t_min;
  Tensor x = draw_noise();
  Tensor x0_hat;
  for (int i = cfg.steps; i >= 1; --i) {
    const double t = ts[static_cast<std::size_t>(cfg.steps - i)];
    const double s = ts[static_cast<std::size_t>(cfg.steps - i + 1)];
    const double t_query = std::min(t, t_query_max);
    const std::vector<double> t_batch(batch, t_query);
    Tensor out = model.predict(x, images, t_batch);
    const auto k = coefficients(sched, t_query);
    const auto f = conversion_factors(model.prediction_kind(), PredictionKind::kX0, k);
    std::vector<float> x0(out.numel());
    const auto o = out.data();
    const auto xv = x.data();
    for (std::size_t j = 0; j < x0.size(); ++j) {
      const double v = f.pred_factor * o[j] + f.xt_factor * xv[j];
      if (!std::isfinite(v)) {
        throw NumericError("sampling produced a non-finite value at step " + std::to_string(cfg.steps - i),
                           cfg.steps - i);
      }
      x0[j] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
    x0_hat = Tensor(x.shape(), std::move(x0));
    if (i == 1) break;
    if (cfg.kind == SamplerKind::kDdpm) {
      x = ddpm_step(x, x0_hat, t, s, draw_noise(), sched);
    } else {
      x = ddim_step(x, x0_hat, t, s, sched);
    }
  }

  std::vector<Mask> masks;
  const int h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
  for (std::size_t n = 0; n < batch; ++n) {
    masks.push_back(binarize(x0_hat.data().subspan(n * plane, plane), h, w));
  }
  return masks;
}

Mask sample(const Denoiser& model, const Tensor& image, const SamplerConfig& cfg,
            const NoiseSchedule& sched) {
  Tensor batch = image;
  if (image.rank() == 3) batch = image.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  if (batch.rank() != 4 || batch.dim(0) != 1) {
    throw ShapeError("sample: expected a single image, got " + shape_to_string(image.shape()));
  }
  const std::uint64_t seed = cfg.seed;
  return sample(model, batch, cfg, sched, std::span<const std::uint64_t>(&seed, 1)).front();
}

template <typename T>
BasicTensor<T> training_loss_at(const PredictFn<T>& model, PredictionKind kind,
                                const BasicTrainingBatch<T>& batch, const NoiseSchedule& sched,
                                const LossWeighting& lw, std::span<const double> times,
                                const BasicTensor<T>& eps) {
  const auto& x0 = batch.masks;
  if (x0.rank() != 4 || x0.shape() != batch.images.shape() || x0.shape() != eps.shape()) {
    throw ShapeError("training_loss: images, masks and noise must share an [N,1,H,W] shape");
  }
  const std::size_t n = x0.dim(0);
  if (times.size() != n) throw UsageError("training_loss: need one time per batch element");
  const std::size_t chunk = x0.numel() / n;

  std::vector<Coefficients> coeffs(n);
  std::vector<double> weights(n);
  std::vector<T> xt(x0.numel());
  const auto xd = x0.data();
  const auto ed = eps.data();
  for (std::size_t b = 0; b < n; ++b) {
    coeffs[b] = coefficients(sched, times[b]);
    weights[b] = weight(lw, sched, times[b]);
    for (std::size_t i = b * chunk; i < (b + 1) * chunk; ++i) {
      xt[i] = static_cast<T>(coeffs[b].alpha * static_cast<double>(xd[i]) +
                             coeffs[b].sigma * static_cast<double>(ed[i]));
    }
  }
  BasicTensor<T> x_t(x0.shape(), std::move(xt));
  BasicTensor<T> out = model(x_t, batch.images, times);
  BasicTensor<T> x0_hat = convert_batch(out, kind, PredictionKind::kX0, x_t, coeffs);
  return weighted_mse(x0_hat, x0.detach(), weights);
}

template <typename T>
BasicTensor<T> training_loss(const PredictFn<T>& model, PredictionKind kind,
                             const BasicTrainingBatch<T>& batch, const NoiseSchedule& sched,
                             const LossWeighting& lw, Rng& rng, double t_min) {
  const std::size_t n = batch.masks.dim(0);
  std::vector<double> times(n);
  for (auto& t : times) t = rng.uniform(t_min, 1.0);
  std::vector<T> eps(batch.masks.numel());
  for (auto& e : eps) e = static_cast<T>(rng.normal());
  return training_loss_at(model, kind, batch, sched, lw, times,
                          BasicTensor<T>(batch.masks.shape(), std::move(eps)));
}

#define AMBISEG_INSTANTIATE_DIFFUSION(T)                                                        \
  template BasicPrediction<T> convert(const BasicPrediction<T>&, PredictionKind,                \
                                      const BasicTensor<T>&, const Coefficients&);              \
  template BasicTensor<T> convert_batch(const BasicTensor<T>&, PredictionKind, PredictionKind,  \
                                        const BasicTensor<T>&, std::span<const Coefficients>);  \
  template BasicTensor<T> encode_masks<T>(std::span<const Mask>);                               \
  template BasicTensor<T> training_loss_at(const PredictFn<T>&, PredictionKind,                 \
                                           const BasicTrainingBatch<T>&, const NoiseSchedule&,  \
                                           const LossWeighting&, std::span<const double>,       \
                                           const BasicTensor<T>&);                              \
  template BasicTensor<T> training_loss(const PredictFn<T>&, PredictionKind,                    \
                                        const BasicTrainingBatch<T>&, const NoiseSchedule&,     \
                                        const LossWeighting&, Rng&, double);

AMBISEG_INSTANTIATE_DIFFUSION(float)
AMBISEG_INSTANTIATE_DIFFUSION(double)

#undef AMBISEG_INSTANTIATE_DIFFUSION

}  // namespace ambiseg
