#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ambiseg/data.hpp"
#include "ambiseg/model.hpp"
#include "ambiseg/optim.hpp"
#include "ambiseg/schedule.hpp"

namespace ambiseg {

struct TrainConfig {
  std::int64_t steps = 5000;
  int batch_size = 8;
  double lr = 1e-4;
  double clip = 1.0;
  double decay_fraction = 0.2;
  double t_min = 1e-4;
  std::uint64_t seed = 0;
  CropMode crop = CropMode::kNone;
  int crop_size = 0;
  std::int64_t checkpoint_every = 0;

  void validate() const;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Called after every `checkpoint_every` steps and after the final step.
using CheckpointFn = std::function<void(const DenoiserModel&, const AdamWState&)>;

/// Assembles the batch for optimizer step `step`: batch_size samples drawn
/// with replacement, one uniformly chosen annotator each, cropped per cfg.
BasicTrainingBatch<float> make_batch(const Dataset& dataset, const TrainConfig& cfg, Rng& rng);

/// Runs steps state.step .. cfg.steps-1 of
/// batch -> training_loss -> backward -> clip -> adamw_step.
/// Step k draws everything from Rng(Rng::derive(cfg.seed, k)), so resuming
/// from a checkpoint reproduces the unbroken run. Throws NumericError with
/// the step index on a non-finite loss or gradient.
std::vector<TrainLogRow> train(DenoiserModel& model, const Dataset& dataset,
                               const NoiseSchedule& sched, const LossWeighting& lw,
                               AdamWState& state, const TrainConfig& cfg,
                               const CheckpointFn& on_checkpoint = {});

}  // namespace ambiseg
