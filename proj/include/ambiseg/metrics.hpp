#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ambiseg/data.hpp"
#include "ambiseg/diffusion.hpp"
#include "ambiseg/mask.hpp"

namespace ambiseg {

/// 2TP / (2TP + FP + FN); 1 when both masks are empty.
double dice(const Mask& a, const Mask& b);
/// TP / (TP + FP + FN); 1 when both masks are empty.
double iou(const Mask& a, const Mask& b);

/// Squared generalized energy distance with d = 1 - IoU:
///   2 E[d(s,y)] - E[d(s,s')] - E[d(y,y')].
/// The cross term averages all |S||Y| pairs. Each diversity term averages the
/// ordered pairs of distinct indices and is 0 for a single-element set.
double ged(std::span<const Mask> preds, std::span<const Mask> gts);

/// Empties every mask whose area is below r times the largest area in the
/// set. Order is preserved; r = 0 leaves the set unchanged.
std::vector<Mask> postprocess(std::span<const Mask> masks, double r);

/// Draws `n` masks for dataset image `index`.
using MaskSampler =
    std::function<std::vector<Mask>(std::size_t index, const AnnotatedSample& sample, int n)>;

struct ImageRecord {
  std::size_t index = 0;
  double ged = 0.0;
  double ged_pp = 0.0;
  double dice = 0.0;
  double dice_pp = 0.0;
  double iou = 0.0;
  std::size_t empty_predictions = 0;
};

struct EvalReport {
  double ged = 0.0;
  double ged_pp = 0.0;
  double dice = 0.0;
  double dice_pp = 0.0;
  double iou = 0.0;
  int n_predictions = 0;
  double pp_ratio = 0.0;
  std::string sampler;  // human-readable sampler settings
  std::uint64_t seed = 0;
  std::vector<ImageRecord> images;
};

struct EvalOptions {
  int workers = 1;
};

/// Per image: draw n_preds masks, compute GED against the four annotations,
/// dice/IoU as the mean over all prediction x annotation pairs, then repeat
/// on postprocessed predictions for the _pp fields. Aggregates are means over
/// images in index order, so the result does not depend on `workers`.
EvalReport evaluate(const MaskSampler& sampler, const Dataset& dataset, int n_preds, double r,
                    const EvalOptions& options = {});

/// Draws max(n_preds_list) masks once per image and reports each prefix size
/// and each ratio: result[i * ratios.size() + j] is (n_preds_list[i], ratios[j]).
std::vector<EvalReport> evaluate_grid(const MaskSampler& sampler, const Dataset& dataset,
                                      std::span<const int> n_preds_list,
                                      std::span<const double> ratios,
                                      const EvalOptions& options = {});

/// Sampler backed by the diffusion reverse process. Image i, prediction j
/// uses the stream Rng::derive(cfg.seed, i, j).
MaskSampler diffusion_sampler(const Denoiser& model, const SamplerConfig& cfg,
                              const NoiseSchedule& sched);

/// Mean of oracle_ged over the dataset.
double dataset_oracle_ged(const Dataset& dataset, int n_preds);

/// Report as JSON text: a header block, one record per image and the
/// aggregate block.
std::string report_to_json(const EvalReport& report, const std::string& config_echo);

std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);

}  // namespace ambiseg
