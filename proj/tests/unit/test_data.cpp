#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

#include "ambiseg/data.hpp"
#include "ambiseg/errors.hpp"
#include "ambiseg/metrics.hpp"
#include "ambiseg/rng.hpp"

namespace ambiseg {
namespace {

namespace fs = std::filesystem;

SynthConfig fixed_prob(double p, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.contrast_min = cfg.contrast_max = 0.7;
  cfg.empty_prob_at_min_contrast = p;
  cfg.seed = seed;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ambiseg_test_data_" + name);
  fs::remove_all(dir);
  return dir;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

void expect_same_dataset(const Dataset& a, const Dataset& b) {
  ASSERT_EQ(a.samples.size(), b.samples.size());
  EXPECT_EQ(a.generator, b.generator);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_TRUE(same_bits(a.samples[i].image, b.samples[i].image)) << i;
    EXPECT_EQ(a.samples[i].masks, b.samples[i].masks) << i;
    EXPECT_EQ(a.samples[i].meta, b.samples[i].meta) << i;
  }
}

TEST(Generate, SamplesAreWellFormed) {
  SynthConfig cfg;
  cfg.seed = 3;
  const auto ds = generate(cfg, 200);
  ASSERT_EQ(ds.samples.size(), 200u);
  for (const auto& s : ds.samples) {
    ASSERT_EQ(s.image.shape(), (Shape{1, 32, 32}));
    for (float v : s.image.data()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, -1.0f);
      ASSERT_LE(v, 1.0f);
    }
    int positive = 0;
    for (const auto& m : s.masks) {
      ASSERT_TRUE(std::all_of(m.pixels.begin(), m.pixels.end(), [](auto v) { return v <= 1; }));
      positive += !m.empty();
    }
    EXPECT_GE(positive, 1);
    ASSERT_TRUE(s.meta.has_value());
    EXPECT_GE(s.meta->empty_prob, 0.05);
    EXPECT_LE(s.meta->empty_prob, 0.8);
  }
}

TEST(Generate, ZeroEmptyProbabilityGivesFourPositiveMasks) {
  SynthConfig cfg;
  cfg.empty_prob_at_max_contrast = 0.0;
  cfg.contrast_min = cfg.contrast_max = 1.2;
  cfg.empty_prob_at_min_contrast = 0.0;
  for (const auto& s : generate(cfg, 100).samples) {
    for (const auto& m : s.masks) EXPECT_FALSE(m.empty());
  }
}

TEST(Generate, EmptyProbabilityIsLinearInContrast) {
  SynthConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.empty_prob(cfg.contrast_min), 0.8);
  EXPECT_NEAR(cfg.empty_prob(cfg.contrast_max), 0.05, 1e-15);
  EXPECT_NEAR(cfg.empty_prob(0.7), 0.425, 1e-12);
  EXPECT_DOUBLE_EQ(cfg.empty_prob(-5.0), 0.8);
}

TEST(Generate, FixedSeedIsBitIdentical) {
  SynthConfig cfg;
  cfg.seed = 11;
  expect_same_dataset(generate(cfg, 50), generate(cfg, 50));
  cfg.seed = 12;
  const auto other = generate(cfg, 50);
  cfg.seed = 11;
  EXPECT_FALSE(same_bits(generate(cfg, 50).samples[0].image, other.samples[0].image));
}

TEST(Generate, PrefixIsIndependentOfCount) {
  SynthConfig cfg;
  const auto small = generate(cfg, 5), large = generate(cfg, 20);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(same_bits(small.samples[i].image, large.samples[i].image));
}

TEST(Generate, EmptyFrequencyWithinBinomialBounds) {
  // Redrawing all-empty outcome sets makes one annotator empty with
  // probability (p - p^4) / (1 - p^4).
  for (double p : {0.2, 0.5, 0.8}) {
    const auto ds = generate(fixed_prob(p, 21), 10000);
    std::size_t empties = 0;
    for (const auto& s : ds.samples)
      for (bool e : s.meta->annotator_empty) empties += e;
    const double trials = 4.0 * ds.samples.size();
    const double q = (p - std::pow(p, 4)) / (1.0 - std::pow(p, 4));
    const double sd = std::sqrt(q * (1.0 - q) / trials);
    EXPECT_LT(std::abs(empties / trials - q), 3.0 * sd) << "p " << p;
  }
}

TEST(Generate, ConfigErrors) {
  SynthConfig cfg;
  cfg.radius_max = 20.0;
  EXPECT_THROW(generate(cfg, 1), ConfigError);
  cfg = {};
  cfg.empty_prob_at_min_contrast = 1.0;
  EXPECT_THROW(generate(cfg, 1), ConfigError);
  cfg = {};
  cfg.contrast_min = 2.0;
  EXPECT_THROW(generate(cfg, 1), ConfigError);
  cfg = {};
  cfg.radius_min = 1.5;
  EXPECT_THROW(generate(cfg, 1), ConfigError);
  cfg = {};
  EXPECT_THROW(generate(cfg, 0), UsageError);
}

TEST(Masks, ReconstructedFromMeta) {
  const auto ds = generate(SynthConfig{}, 50);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(reconstruct_masks(*s.meta, s.height(), s.width()), s.masks);
  }
}

TEST(Masks, PositiveMasksAreNested) {
  const auto ds = generate(fixed_prob(0.0, 4), 30);
  for (const auto& s : ds.samples) {
    // jitter {-2,-1,1,2}: each mask lies inside the next.
    for (int k = 0; k + 1 < kAnnotators; ++k) {
      const auto& a = s.masks[k];
      const auto& b = s.masks[k + 1];
      ASSERT_LT(a.area(), b.area());
      for (std::size_t i = 0; i < a.pixels.size(); ++i) ASSERT_LE(a.pixels[i], b.pixels[i]);
      EXPECT_DOUBLE_EQ(iou(a, b), static_cast<double>(a.area()) / static_cast<double>(b.area()));
    }
  }
}

TEST(Masks, RasterizedDiskArea) {
  const auto m = rasterize_disk(64, 64, 32.0, 32.0, 10.0);
  EXPECT_NEAR(static_cast<double>(m.area()), M_PI * 100.0, 0.03 * M_PI * 100.0);
  EXPECT_EQ(m.at(32, 32), 1);
  EXPECT_EQ(m.at(0, 0), 0);
}

// Exact expectation assembled from the outcome pairs of the sample.
struct OutcomeTable {
  std::vector<Mask> outcomes;           // 0 empty, 1..4 annotator disks
  std::vector<std::vector<double>> dd;  // outcome x outcome distance
  std::vector<std::vector<double>> dy;  // outcome x annotation distance
  double gt_div = 0.0;
};

OutcomeTable outcome_table(const AnnotatedSample& s) {
  OutcomeTable t;
  auto meta = *s.meta;
  meta.annotator_empty = {};
  const auto disks = reconstruct_masks(meta, s.height(), s.width());
  t.outcomes.emplace_back(s.height(), s.width());
  t.outcomes.insert(t.outcomes.end(), disks.begin(), disks.end());
  for (const auto& a : t.outcomes) {
    std::vector<double> row, rowy;
    for (const auto& b : t.outcomes) row.push_back(1.0 - iou(a, b));
    for (const auto& y : s.masks) rowy.push_back(1.0 - iou(a, y));
    t.dd.push_back(row);
    t.dy.push_back(rowy);
  }
  for (int a = 0; a < kAnnotators; ++a)
    for (int b = 0; b < kAnnotators; ++b)
      if (a != b) t.gt_div += 1.0 - iou(s.masks[a], s.masks[b]);
  t.gt_div /= 12.0;
  return t;
}

// One annotator read off a freshly simulated outcome set.
int draw_outcome(double p, Rng& rng) {
  std::array<bool, kAnnotators> empty{};
  bool any = false;
  while (!any) {
    for (auto& e : empty) {
      e = rng.uniform() < p;
      any = any || !e;
    }
  }
  const int k = static_cast<int>(rng.uniform_int(kAnnotators));
  return empty[k] ? 0 : k + 1;
}

TEST(OracleGed, MatchesMonteCarlo) {
  const auto ds = generate(SynthConfig{}, 40);
  std::vector<const AnnotatedSample*> picks;
  for (const auto& s : ds.samples) {
    const auto empties = std::count(s.meta->annotator_empty.begin(), s.meta->annotator_empty.end(), true);
    if (s.meta->empty_prob > 0.3 && s.meta->empty_prob < 0.7 && empties > 0) picks.push_back(&s);
  }
  ASSERT_GE(picks.size(), 2u);
  picks.resize(2);

  Rng rng(99);
  for (const auto* s : picks) {
    const auto table = outcome_table(*s);
    for (int n : {1, 4, 16}) {
      constexpr int kDraws = 100000;
      double sum = 0.0, sum2 = 0.0;
      std::vector<int> preds(static_cast<std::size_t>(n));
      for (int d = 0; d < kDraws; ++d) {
        for (auto& o : preds) o = draw_outcome(s->meta->empty_prob, rng);
        double cross = 0.0, self = 0.0;
        for (int a = 0; a < n; ++a) {
          for (int y = 0; y < kAnnotators; ++y) cross += table.dy[preds[a]][y];
          for (int b = 0; b < n; ++b)
            if (a != b) self += table.dd[preds[a]][preds[b]];
        }
        cross /= n * kAnnotators;
        if (n > 1) self /= n * (n - 1);
        const double g = 2.0 * cross - self - table.gt_div;
        sum += g;
        sum2 += g * g;
      }
      const double mean = sum / kDraws;
      const double se = std::sqrt((sum2 / kDraws - mean * mean) / kDraws);
      EXPECT_LT(std::abs(oracle_ged(*s, n) - mean), 3.0 * se) << "n " << n << " mc " << mean;
    }
  }
}

TEST(OracleGed, NoEmptyOutcomesClosedForm) {
  // With p = 0 the perfect model draws the four disks uniformly, so the
  // cross term and the prediction diversity both equal 3/4 of gt diversity.
  const auto ds = generate(fixed_prob(0.0, 8), 5);
  for (const auto& s : ds.samples) {
    const double div = outcome_table(s).gt_div;
    EXPECT_NEAR(oracle_ged(s, 1), 0.5 * div, 1e-12);
    EXPECT_NEAR(oracle_ged(s, 4), -0.25 * div, 1e-12);
  }
}

TEST(OracleGed, EmpiricalSetAsModelGivesZero) {
  // Without jitter or empty outcomes the annotation set and the model
  // distribution are the same single mask.
  auto cfg = fixed_prob(0.0, 6);
  cfg.boundary_jitter = {0, 0, 0, 0};
  for (const auto& s : generate(cfg, 10).samples) {
    EXPECT_EQ(ged(s.masks, s.masks), 0.0);
    EXPECT_NEAR(oracle_ged(s, 4), 0.0, 1e-15);
    EXPECT_NEAR(oracle_ged(s, 16), 0.0, 1e-15);
  }
}

TEST(OracleGed, ReplayedAnnotationsUnderDistinctPairs) {
  // Replaying four distinct annotations: the cross term averages all 16
  // pairs, 4 of them self pairs at distance 0, so it is 3/4 of the
  // distinct-pair diversity and the total is -diversity / 2.
  for (const auto& s : generate(fixed_prob(0.0, 7), 10).samples) {
    EXPECT_NEAR(ged(s.masks, s.masks), -0.5 * outcome_table(s).gt_div, 1e-15);
  }
}

TEST(OracleGed, AllEmptyModelClosedForm) {
  // Hand enumeration with d(empty, empty) = 0 and d(empty, positive) = 1.
  const auto ds = generate(SynthConfig{}, 200);
  int one = 0, two = 0;
  for (const auto& s : ds.samples) {
    std::vector<int> pos;
    for (int k = 0; k < kAnnotators; ++k)
      if (!s.masks[k].empty()) pos.push_back(k);
    const std::vector<Mask> preds(4, Mask(s.height(), s.width()));
    if (pos.size() == 1) {
      // cross 4/16, gt diversity 6/12.
      EXPECT_NEAR(ged(preds, s.masks), 0.0, 1e-15);
      ++one;
    } else if (pos.size() == 2) {
      const double d12 = 1.0 - iou(s.masks[pos[0]], s.masks[pos[1]]);
      // cross 8/16, gt diversity (8 + 2 d12) / 12.
      EXPECT_NEAR(ged(preds, s.masks), 1.0 - (8.0 + 2.0 * d12) / 12.0, 1e-15);
      ++two;
    }
  }
  EXPECT_GT(one, 0);
  EXPECT_GT(two, 0);
}

TEST(OracleGed, Errors) {
  auto s = generate(SynthConfig{}, 1).samples[0];
  EXPECT_THROW(oracle_ged(s, 0), UsageError);
  s.meta.reset();
  try {
    oracle_ged(s, 4);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::kMissingMeta);
  }
}

TEST(OracleGed, MarginalSumsToOne) {
  for (const auto& s : generate(SynthConfig{}, 20).samples) {
    const auto dist = annotator_marginal(*s.meta, s.height(), s.width());
    double total = 0.0;
    for (double p : dist.probs) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Crop, FullSizeIsIdentity) {
  const auto s = generate(SynthConfig{}, 1).samples[0];
  const auto c = central_crop(s, 32);
  EXPECT_TRUE(same_bits(c.image, s.image));
  EXPECT_EQ(c.masks, s.masks);
  EXPECT_EQ(c.meta, s.meta);
  Rng rng(1);
  EXPECT_TRUE(same_bits(random_crop(s, 32, rng).image, s.image));
}

TEST(Crop, CentralCropKeepsCenterPixel) {
  AnnotatedSample s;
  std::vector<float> pixels(128 * 128);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(i);
  s.image = Tensor({1, 128, 128}, pixels);
  for (auto& m : s.masks) m = Mask(128, 128);
  s.masks[0].at(64, 64) = 1;
  const auto c = central_crop(s, 64);
  ASSERT_EQ(c.height(), 64);
  // Pixel (64,64) of the original becomes (32,32) of the crop.
  EXPECT_EQ(c.image.data()[32 * 64 + 32], pixels[64 * 128 + 64]);
  EXPECT_EQ(c.masks[0].at(32, 32), 1);
  EXPECT_EQ(c.masks[0].area(), 1u);
}

TEST(Crop, MasksFollowTheWindowAndMeta) {
  const auto s = generate(SynthConfig{}, 3).samples[2];
  const auto c = crop(s, 3, 5, 24);
  EXPECT_EQ(c.meta->origin_y, 3);
  EXPECT_EQ(c.meta->origin_x, 5);
  EXPECT_EQ(reconstruct_masks(*c.meta, 24, 24), c.masks);
  for (int k = 0; k < kAnnotators; ++k)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) ASSERT_EQ(c.masks[k].at(y, x), s.masks[k].at(y + 3, x + 5));
  EXPECT_EQ(c.image.data()[0], s.image.data()[3 * 32 + 5]);
}

TEST(Crop, RandomCornerIsUniform) {
  const auto s = generate(SynthConfig{}, 1).samples[0];
  Rng rng(5);
  constexpr int kSide = 5, kDraws = 10000;
  std::vector<int> counts(kSide * kSide, 0);
  for (int i = 0; i < kDraws; ++i) {
    const auto c = random_crop(s, 32 - kSide + 1, rng);
    ASSERT_GE(c.meta->origin_y, 0);
    ASSERT_LT(c.meta->origin_y, kSide);
    ASSERT_LT(c.meta->origin_x, kSide);
    ++counts[c.meta->origin_y * kSide + c.meta->origin_x];
  }
  const double expected = static_cast<double>(kDraws) / counts.size();
  double chi2 = 0.0;
  for (int n : counts) chi2 += (n - expected) * (n - expected) / expected;
  // 99th percentile of chi-squared with 24 degrees of freedom.
  EXPECT_LT(chi2, 42.980);
}

TEST(Crop, Errors) {
  const auto s = generate(SynthConfig{}, 1).samples[0];
  Rng rng(1);
  EXPECT_THROW(central_crop(s, 33), ConfigError);
  EXPECT_THROW(random_crop(s, 33, rng), ConfigError);
  EXPECT_THROW(crop(s, 0, 0, 0), ConfigError);
  EXPECT_THROW(crop(s, 10, 0, 24), ConfigError);
  EXPECT_THROW(crop(s, -1, 0, 8), ConfigError);
}

TEST(Crop, ModeNames) {
  for (auto m : {CropMode::kNone, CropMode::kCentral, CropMode::kRandom}) {
    EXPECT_EQ(parse_crop_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_crop_mode("diagonal"), ConfigError);
}

TEST(DatasetIo, RoundtripIsBitExact) {
  SynthConfig cfg;
  cfg.seed = 17;
  auto ds = generate(cfg, 25);
  ds.provenance = "unit test";
  const auto dir = scratch_dir("roundtrip");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  expect_same_dataset(ds, back);
  EXPECT_EQ(back.provenance, "unit test");
  for (const auto& s : back.samples) {
    EXPECT_EQ(reconstruct_masks(*s.meta, s.height(), s.width()), s.masks);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, RoundtripWithoutMeta) {
  auto ds = generate(SynthConfig{}, 3);
  ds.generator.reset();
  for (auto& s : ds.samples) s.meta.reset();
  ds.samples[1] = central_crop(ds.samples[1], 32);
  const auto dir = scratch_dir("nometa");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  expect_same_dataset(ds, back);
  EXPECT_THROW(oracle_ged(back.samples[0]), DataError);
  fs::remove_all(dir);
}

TEST(DatasetIo, BlobSizeMatchesHeader) {
  const auto ds = generate(SynthConfig{}, 7);
  const auto dir = scratch_dir("size");
  write_dataset(ds, dir);
  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  const std::size_t h = manifest["height"], w = manifest["width"], n = manifest["num_samples"];
  EXPECT_EQ(n, 7u);
  EXPECT_EQ(manifest["bytes_per_sample"].get<std::size_t>(), h * w * 4 + h * w * 4);
  EXPECT_EQ(fs::file_size(dir / "data.bin"), n * (h * w * sizeof(float) + kAnnotators * h * w));
  EXPECT_EQ(manifest["format_version"], kDatasetFormatVersion);
  EXPECT_EQ(manifest["endianness"], "little");
  fs::remove_all(dir);
}

DataError::Kind read_error_kind(const fs::path& dir) {
  try {
    read_dataset(dir);
  } catch (const DataError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "read_dataset accepted a damaged dataset";
  return DataError::Kind::kIo;
}

TEST(DatasetIo, DamageIsReportedByKind) {
  using Kind = DataError::Kind;
  const auto ds = generate(SynthConfig{}, 4);
  const auto dir = scratch_dir("damage");
  const auto blob = dir / "data.bin";
  const auto manifest = dir / "manifest.json";

  write_dataset(ds, dir);
  fs::resize_file(blob, fs::file_size(blob) - 1);
  EXPECT_EQ(read_error_kind(dir), Kind::kTruncated);

  write_dataset(ds, dir);
  { std::ofstream(blob, std::ios::app | std::ios::binary) << 'x'; }
  EXPECT_EQ(read_error_kind(dir), Kind::kCorruptHeader);

  write_dataset(ds, dir);
  {
    std::ifstream in(manifest);
    auto j = nlohmann::ordered_json::parse(in);
    j["format_version"] = kDatasetFormatVersion + 1;
    std::ofstream(manifest) << j.dump();
  }
  EXPECT_EQ(read_error_kind(dir), Kind::kVersionMismatch);

  write_dataset(ds, dir);
  { std::ofstream(manifest) << "{\"format_version\": "; }
  EXPECT_EQ(read_error_kind(dir), Kind::kCorruptHeader);

  write_dataset(ds, dir);
  {
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(32 * 32 * 4);  // first mask byte of sample 0
    f.put(static_cast<char>(7));
  }
  EXPECT_EQ(read_error_kind(dir), Kind::kCorruptBlob);

  write_dataset(ds, dir);
  fs::remove(blob);
  EXPECT_EQ(read_error_kind(dir), Kind::kIo);
  EXPECT_EQ(read_error_kind(dir / "missing"), Kind::kIo);
  fs::remove_all(dir);

  EXPECT_THROW(write_dataset(Dataset{}, dir), UsageError);
}

}  // namespace
}  // namespace ambiseg
