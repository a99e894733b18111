#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ambiseg/mask.hpp"
#include "ambiseg/rng.hpp"
#include "ambiseg/tensor.hpp"

namespace ambiseg {

inline constexpr int kAnnotators = 4;

/// Parameters of the synthetic ambiguous-lesion generator.
///
/// Each image holds one soft-edged disk over a noisy background. Each of the
/// four annotators independently reports nothing with probability
/// p(contrast) (linear from the low-contrast to the high-contrast value) and
/// otherwise the disk with its own radius offset. Outcome sets with no
/// positive annotation are redrawn.
struct SynthConfig {
  int image_size = 32;
  double radius_min = 5.0;
  double radius_max = 9.0;
  double contrast_min = 0.2;
  double contrast_max = 1.2;
  double empty_prob_at_min_contrast = 0.8;
  double empty_prob_at_max_contrast = 0.05;
  std::array<int, kAnnotators> boundary_jitter{-2, -1, 1, 2};
  double background = -0.5;
  double noise_std = 0.25;
  double edge_width = 1.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError for empty ranges, probabilities outside [0, 1) or a
  /// lesion that cannot fit inside the image.
  void validate() const;
  double empty_prob(double contrast) const;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Generator draws needed to rebuild every mask of a sample.
struct SampleMeta {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
  double contrast = 0.0;
  double empty_prob = 0.0;
  std::array<bool, kAnnotators> annotator_empty{};
  std::array<int, kAnnotators> jitter{};
  // Top-left corner of this sample inside the generated image; moves with crops.
  int origin_x = 0;
  int origin_y = 0;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct AnnotatedSample {
  Tensor image;  // [1,H,W], values in [-1,1]
  std::array<Mask, kAnnotators> masks;
  std::optional<SampleMeta> meta;

  int height() const { return static_cast<int>(image.dim(1)); }
  int width() const { return static_cast<int>(image.dim(2)); }
};

struct Dataset {
  std::optional<SynthConfig> generator;
  std::vector<AnnotatedSample> samples;
  // Free-form record of the command and config that produced the dataset.
  std::string provenance;
};

/// Pixels whose centre lies within `radius` of (cx, cy).
Mask rasterize_disk(int height, int width, double cx, double cy, double radius);

/// Rebuilds the annotator masks of a sample (in its current crop window).
std::array<Mask, kAnnotators> reconstruct_masks(const SampleMeta& meta, int height, int width);

/// n samples; sample i draws from Rng(Rng::derive(cfg.seed, i)).
Dataset generate(const SynthConfig& cfg, int n);

/// Exact expected GED between the sample's four masks and n_preds i.i.d.
/// draws from the generator's per-annotator marginal (a perfect model),
/// computed by enumerating every outcome pair. Throws DataError(kMissingMeta)
/// when the sample carries no generator metadata.
double oracle_ged(const AnnotatedSample& sample, int n_preds = 4);

/// Outcome masks of one annotator draw and their marginal probabilities.
struct OutcomeDistribution {
  std::vector<Mask> masks;
  std::vector<double> probs;
};
OutcomeDistribution annotator_marginal(const SampleMeta& meta, int height, int width);

AnnotatedSample crop(const AnnotatedSample& sample, int top, int left, int size);
AnnotatedSample central_crop(const AnnotatedSample& sample, int size);
/// Top-left corner uniform over all valid positions.
AnnotatedSample random_crop(const AnnotatedSample& sample, int size, Rng& rng);

enum class CropMode { kNone, kCentral, kRandom };
std::string to_string(CropMode mode);
CropMode parse_crop_mode(const std::string& name);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes `dir/manifest.json` and `dir/data.bin`. The blob stores, per
/// sample, the image as little-endian float32 then the four masks as uint8,
/// all row-major.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace ambiseg
