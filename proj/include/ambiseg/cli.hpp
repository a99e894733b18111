#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ambiseg/data.hpp"
#include "ambiseg/diffusion.hpp"
#include "ambiseg/model.hpp"
#include "ambiseg/schedule.hpp"
#include "ambiseg/train.hpp"

namespace ambiseg {

/// Every setting of every subcommand. Defaults: x-prediction, truncated-SNR
/// weighting, b = 0.1, 10-step DDIM.
struct ExperimentConfig {
  NoiseSchedule schedule{ScheduleFamily::kCosine, 0.1};
  double t_min = 1e-4;
  DenoiserConfig model;
  LossWeighting loss;
  SamplerConfig sampler;
  TrainConfig train;
  std::uint64_t init_seed = 0;

  SynthConfig synth;
  int num_samples = 500;

  std::string data = "dataset";
  std::string eval_data = "dataset_eval";
  std::string checkpoint = "model.ckpt";
  std::string resume;
  std::string out;

  std::vector<int> n_preds{4, 16};
  std::vector<double> pp_ratios{0.0, 0.5};
  int workers = 1;

  int sample_index = 0;
  int num_masks = 4;

  int inspect_points = 99;

  std::string sweep_param = "b";
  std::string sweep_values = "0.1,0.3,1.0";
};

/// Flat JSON object keyed by the long flag names. It is accepted back by
/// --config, which reproduces the run that wrote it.
std::string config_to_json(const ExperimentConfig& cfg);

/// Parses a comma-separated list of finite numbers. Returns the trimmed
/// tokens and their values; throws UsageError on an empty or malformed
/// entry.
struct SweepList {
  std::vector<std::string> tokens;
  std::vector<double> values;
};
SweepList parse_sweep_list(const std::string& text);

/// Entry point of the command-line tool. Returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ambiseg
