#include "ambiseg/train.hpp"

#include <cmath>

namespace ambiseg {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
  if (!(decay_fraction >= 0.0 && decay_fraction <= 1.0)) {
    throw ConfigError("decay_fraction must lie in [0, 1]");
  }
  if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("t_min must lie in (0, 1)");
  if (crop != CropMode::kNone && crop_size < 1) throw ConfigError("crop_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

BasicTrainingBatch<float> make_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng) {
  if (dataset.samples.empty()) throw UsageError("train: dataset is empty");
  const auto n = static_cast<std::size_t>(cfg.batch_size);
  std::vector<float> images;
  std::vector<Mask> masks;
  masks.reserve(n);
  std::size_t h = 0, w = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto& src = dataset.samples[rng.uniform_int(dataset.samples.size())];
    const auto annotator = rng.uniform_int(kAnnotators);
    AnnotatedSample cropped;
    const AnnotatedSample* s = &src;
    if (cfg.crop == CropMode::kCentral) {
      cropped = central_crop(src, cfg.crop_size);
      s = &cropped;
    } else if (cfg.crop == CropMode::kRandom) {
      cropped = random_crop(src, cfg.crop_size, rng);
      s = &cropped;
    }
    if (b == 0) {
      h = static_cast<std::size_t>(s->height());
      w = static_cast<std::size_t>(s->width());
      images.reserve(n * h * w);
    } else if (static_cast<std::size_t>(s->height()) != h ||
               static_cast<std::size_t>(s->width()) != w) {
      throw ShapeError("train: dataset images differ in size; use a crop mode");
    }
    images.insert(images.end(), s->image.data().begin(), s->image.data().end());
    masks.push_back(s->masks[annotator]);
  }
  return {Tensor({n, 1, h, w}, std::move(images)), encode_masks<float>(masks)};
}

std::vector<TrainLogRow> train(DenoiserModel& model, const Dataset& dataset,
                               const NoiseSchedule& sched, const LossWeighting& lw,
                               AdamWState& state, const TrainConfig& cfg,
                               const CheckpointFn& on_checkpoint) {
  cfg.validate();
  sched.validate();
  if (dataset.samples.empty()) throw UsageError("train: dataset is empty");
  if (state.step > cfg.steps) {
    throw UsageError("train: optimizer is at step " + std::to_string(state.step) +
                     ", beyond the requested " + std::to_string(cfg.steps));
  }
  if (state.m.empty()) init_adamw_state(state, model.params());

  const PredictionKind kind = model.config().prediction_kind;
  const PredictFn<float> fn = [&model](const Tensor& x_t, const Tensor& image,
                                       std::span<const double> t) {
    return model.forward(x_t, image, t).value;
  };

  std::vector<TrainLogRow> log;
  while (state.step < cfg.steps) {
    const std::int64_t step = state.step;
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(step)));
    const auto batch = make_batch(dataset, cfg, rng);
    model.zero_grad();
    const Tensor loss = training_loss(fn, kind, batch, sched, lw, rng, cfg.t_min);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step), step);
    loss.backward();
    try {
      clip_grad_norm(model.params(), cfg.clip);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step), step);
    }
    state.lr = cosine_decay_lr(cfg.lr, step, cfg.steps, cfg.decay_fraction);
    adamw_step(model.params(), state);
    log.push_back({step, value, state.lr});
    const bool last = state.step == cfg.steps;
    if (on_checkpoint && (last || (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0))) {
      on_checkpoint(model, state);
    }
  }
  return log;
}

}  // namespace ambiseg
