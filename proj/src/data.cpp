#include "ambiseg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "ambiseg/metrics.hpp"

namespace ambiseg {
namespace {

using nlohmann::ordered_json;

int max_abs_jitter(const std::array<int, kAnnotators>& jitter) {
  int m = 0;
  for (int j : jitter) m = std::max(m, std::abs(j));
  return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ordered_json config_to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},
          {"radius_min", c.radius_min},
          {"radius_max", c.radius_max},
          {"contrast_min", c.contrast_min},
          {"contrast_max", c.contrast_max},
          {"empty_prob_at_min_contrast", c.empty_prob_at_min_contrast},
          {"empty_prob_at_max_contrast", c.empty_prob_at_max_contrast},
          {"boundary_jitter", c.boundary_jitter},
          {"background", c.background},
          {"noise_std", c.noise_std},
          {"edge_width", c.edge_width},
          {"seed", c.seed}};
}

SynthConfig config_from_json(const ordered_json& j) {
  SynthConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.radius_min = j.at("radius_min").get<double>();
  c.radius_max = j.at("radius_max").get<double>();
  c.contrast_min = j.at("contrast_min").get<double>();
  c.contrast_max = j.at("contrast_max").get<double>();
  c.empty_prob_at_min_contrast = j.at("empty_prob_at_min_contrast").get<double>();
  c.empty_prob_at_max_contrast = j.at("empty_prob_at_max_contrast").get<double>();
  c.boundary_jitter = j.at("boundary_jitter").get<std::array<int, kAnnotators>>();
  c.background = j.at("background").get<double>();
  c.noise_std = j.at("noise_std").get<double>();
  c.edge_width = j.at("edge_width").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

ordered_json meta_to_json(const SampleMeta& m) {
  return {{"center_x", m.center_x},       {"center_y", m.center_y},
          {"radius", m.radius},           {"contrast", m.contrast},
          {"empty_prob", m.empty_prob},   {"annotator_empty", m.annotator_empty},
          {"jitter", m.jitter},           {"origin_x", m.origin_x},
          {"origin_y", m.origin_y}};
}

SampleMeta meta_from_json(const ordered_json& j) {
  SampleMeta m;
  m.center_x = j.at("center_x").get<double>();
  m.center_y = j.at("center_y").get<double>();
  m.radius = j.at("radius").get<double>();
  m.contrast = j.at("contrast").get<double>();
  m.empty_prob = j.at("empty_prob").get<double>();
  m.annotator_empty = j.at("annotator_empty").get<std::array<bool, kAnnotators>>();
  m.jitter = j.at("jitter").get<std::array<int, kAnnotators>>();
  m.origin_x = j.at("origin_x").get<int>();
  m.origin_y = j.at("origin_y").get<int>();
  return m;
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xffu));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return std::bit_cast<float>(bits);
}

std::size_t bytes_per_sample(int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  return plane * 4 + plane * kAnnotators;
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (!(radius_min > 0.0) || !(radius_max >= radius_min)) {
    throw ConfigError("radius range must satisfy 0 < min <= max");
  }
  if (!(contrast_max >= contrast_min)) throw ConfigError("contrast range must satisfy min <= max");
  for (double p : {empty_prob_at_min_contrast, empty_prob_at_max_contrast}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("annotator empty probability must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(edge_width > 0.0)) throw ConfigError("edge_width must be positive");
  const int jitter = max_abs_jitter(boundary_jitter);
  for (int j : boundary_jitter) {
    if (radius_min + j <= 0.0) throw ConfigError("boundary jitter erodes the lesion away");
  }
  if (2.0 * (radius_max + jitter + 1.0) > image_size) {
    throw ConfigError("lesion of radius " + std::to_string(radius_max) + " (+" +
                      std::to_string(jitter) + " jitter) does not fit a " +
                      std::to_string(image_size) + " pixel image");
  }
}

double SynthConfig::empty_prob(double contrast) const {
  if (contrast_max == contrast_min) return empty_prob_at_min_contrast;
  const double u = std::clamp((contrast - contrast_min) / (contrast_max - contrast_min), 0.0, 1.0);
  return empty_prob_at_min_contrast + u * (empty_prob_at_max_contrast - empty_prob_at_min_contrast);
}

Mask rasterize_disk(int height, int width, double cx, double cy, double radius) {
  Mask m(height, width);
  const double r2 = radius * radius;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      m.at(y, x) = dx * dx + dy * dy <= r2 ? 1 : 0;
    }
  }
  return m;
}

std::array<Mask, kAnnotators> reconstruct_masks(const SampleMeta& meta, int height, int width) {
  std::array<Mask, kAnnotators> out;
  const double cx = meta.center_x - meta.origin_x, cy = meta.center_y - meta.origin_y;
  for (int k = 0; k < kAnnotators; ++k) {
    out[k] = meta.annotator_empty[k] ? Mask(height, width)
                                     : rasterize_disk(height, width, cx, cy,
                                                      meta.radius + meta.jitter[k]);
  }
  return out;
}

Dataset generate(const SynthConfig& cfg, int n) {
  cfg.validate();
  if (n < 1) throw UsageError("generate: n must be >= 1");
  const int size = cfg.image_size;
  const double margin = cfg.radius_max + max_abs_jitter(cfg.boundary_jitter) + 1.0;
  Dataset ds;
  ds.generator = cfg;
  ds.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(i)));
    SampleMeta meta;
    meta.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    meta.contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
    meta.center_x = rng.uniform(margin, size - margin);
    meta.center_y = rng.uniform(margin, size - margin);
    meta.empty_prob = cfg.empty_prob(meta.contrast);
    meta.jitter = cfg.boundary_jitter;
    bool any_positive = false;
    while (!any_positive) {
      for (int k = 0; k < kAnnotators; ++k) {
        meta.annotator_empty[k] = rng.uniform() < meta.empty_prob;
        any_positive = any_positive || !meta.annotator_empty[k];
      }
    }

    std::vector<float> pixels(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d = std::hypot(x + 0.5 - meta.center_x, y + 0.5 - meta.center_y);
        double v = cfg.background + meta.contrast * sigmoid((meta.radius - d) / cfg.edge_width) +
                   cfg.noise_std * rng.normal();
        pixels[static_cast<std::size_t>(y) * size + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }

    AnnotatedSample s;
    s.image = Tensor({1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                     std::move(pixels));
    s.masks = reconstruct_masks(meta, size, size);
    s.meta = meta;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

OutcomeDistribution annotator_marginal(const SampleMeta& meta, int height, int width) {
  // Outcome sets with every annotator empty are redrawn, so one annotator is
  // empty with probability P(empty and not all empty) / P(not all empty).
  const double p = meta.empty_prob;
  const double p4 = p * p * p * p;
  const double q = (p - p4) / (1.0 - p4);
  OutcomeDistribution dist;
  const double cx = meta.center_x - meta.origin_x, cy = meta.center_y - meta.origin_y;
  if (q > 0.0) {
    dist.masks.emplace_back(height, width);
    dist.probs.push_back(q);
  }
  for (int k = 0; k < kAnnotators; ++k) {
    dist.masks.push_back(rasterize_disk(height, width, cx, cy, meta.radius + meta.jitter[k]));
    dist.probs.push_back((1.0 - q) / kAnnotators);
  }
  return dist;
}

double oracle_ged(const AnnotatedSample& sample, int n_preds) {
  if (!sample.meta) throw DataError(DataError::Kind::kMissingMeta, "sample has no generator metadata");
  if (n_preds < 1) throw UsageError("oracle_ged: n_preds must be >= 1");
  const auto dist = annotator_marginal(*sample.meta, sample.height(), sample.width());
  const std::size_t m = dist.masks.size();

  double cross = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    double d = 0.0;
    for (const auto& y : sample.masks) d += 1.0 - iou(dist.masks[a], y);
    cross += dist.probs[a] * d / kAnnotators;
  }
  double self = 0.0;
  if (n_preds > 1) {
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        self += dist.probs[a] * dist.probs[b] * (1.0 - iou(dist.masks[a], dist.masks[b]));
  }
  double gt_div = 0.0;
  for (int a = 0; a < kAnnotators; ++a)
    for (int b = 0; b < kAnnotators; ++b)
      if (a != b) gt_div += 1.0 - iou(sample.masks[a], sample.masks[b]);
  gt_div /= kAnnotators * (kAnnotators - 1);
  return 2.0 * cross - self - gt_div;
}

AnnotatedSample crop(const AnnotatedSample& sample, int top, int left, int size) {
  const int h = sample.height(), w = sample.width();
  if (size < 1 || size > h || size > w) {
    throw ConfigError("crop size " + std::to_string(size) + " does not fit a " + std::to_string(h) +
                      "x" + std::to_string(w) + " image");
  }
  if (top < 0 || left < 0 || top + size > h || left + size > w) {
    throw ConfigError("crop window lies outside the image");
  }
  AnnotatedSample out;
  const auto src = sample.image.data();
  std::vector<float> pixels(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const auto row = src.begin() + static_cast<std::ptrdiff_t>(top + y) * w + left;
    std::copy(row, row + size, pixels.begin() + static_cast<std::ptrdiff_t>(y) * size);
  }
  out.image = Tensor({1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                     std::move(pixels));
  for (int k = 0; k < kAnnotators; ++k) {
    Mask m(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) m.at(y, x) = sample.masks[k].at(top + y, left + x);
    out.masks[k] = std::move(m);
  }
  if (sample.meta) {
    out.meta = sample.meta;
    out.meta->origin_x += left;
    out.meta->origin_y += top;
  }
  return out;
}

AnnotatedSample central_crop(const AnnotatedSample& sample, int size) {
  return crop(sample, (sample.height() - size) / 2, (sample.width() - size) / 2, size);
}

AnnotatedSample random_crop(const AnnotatedSample& sample, int size, Rng& rng) {
  const int h = sample.height(), w = sample.width();
  if (size < 1 || size > h || size > w) return crop(sample, 0, 0, size);  // throws
  const int top = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - size + 1)));
  const int left = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - size + 1)));
  return crop(sample, top, left, size);
}

std::string to_string(CropMode mode) {
  switch (mode) {
    case CropMode::kNone: return "none";
    case CropMode::kCentral: return "central";
    case CropMode::kRandom: return "random";
  }
  return "none";
}

CropMode parse_crop_mode(const std::string& name) {
  if (name == "none") return CropMode::kNone;
  if (name == "central") return CropMode::kCentral;
  if (name == "random") return CropMode::kRandom;
  throw ConfigError("unknown crop mode '" + name + "' (expected none, central or random)");
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  if (dataset.samples.empty()) throw UsageError("write_dataset: dataset is empty");
  const int h = dataset.samples.front().height(), w = dataset.samples.front().width();

  ordered_json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["dtype"] = "float32";
  manifest["mask_dtype"] = "uint8";
  manifest["endianness"] = "little";
  manifest["layout"] = "per sample: image[H*W] float32, then masks[4][H*W] uint8, row-major";
  manifest["num_samples"] = dataset.samples.size();
  manifest["height"] = h;
  manifest["width"] = w;
  manifest["num_annotators"] = kAnnotators;
  manifest["bytes_per_sample"] = bytes_per_sample(h, w);
  manifest["generator"] = dataset.generator ? config_to_json(*dataset.generator) : ordered_json();
  manifest["provenance"] = dataset.provenance;

  std::string blob;
  blob.reserve(bytes_per_sample(h, w) * dataset.samples.size());
  ordered_json metas = ordered_json::array();
  for (const auto& s : dataset.samples) {
    if (s.height() != h || s.width() != w) throw ShapeError("write_dataset: samples differ in size");
    for (float v : s.image.data()) put_f32(blob, v);
    for (const auto& m : s.masks) blob.append(m.pixels.begin(), m.pixels.end());
    metas.push_back(s.meta ? meta_to_json(*s.meta) : ordered_json());
  }
  manifest["samples"] = std::move(metas);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(DataError::Kind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "data.bin", std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + (dir / "data.bin").string());
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  using Kind = DataError::Kind;
  const auto manifest_path = dir / "manifest.json";
  const auto blob_path = dir / "data.bin";
  std::ifstream in(manifest_path);
  if (!in) throw DataError(Kind::kIo, "cannot open " + manifest_path.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(Kind::kCorruptHeader, manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  std::size_t n = 0;
  int h = 0, w = 0;
  ordered_json metas;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw DataError(Kind::kVersionMismatch, "dataset format version " + std::to_string(version) +
                                                  ", expected " +
                                                  std::to_string(kDatasetFormatVersion));
    }
    if (manifest.at("dtype") != "float32" || manifest.at("mask_dtype") != "uint8" ||
        manifest.at("endianness") != "little" || manifest.at("num_annotators") != kAnnotators) {
      throw DataError(Kind::kCorruptHeader, "unsupported dtype, endianness or annotator count");
    }
    n = manifest.at("num_samples").get<std::size_t>();
    h = manifest.at("height").get<int>();
    w = manifest.at("width").get<int>();
    if (n == 0 || h < 1 || w < 1) throw DataError(Kind::kCorruptHeader, "empty dataset header");
    if (manifest.at("bytes_per_sample").get<std::size_t>() != bytes_per_sample(h, w)) {
      throw DataError(Kind::kCorruptHeader, "bytes_per_sample disagrees with height and width");
    }
    if (!manifest.at("generator").is_null()) ds.generator = config_from_json(manifest.at("generator"));
    ds.provenance = manifest.at("provenance").get<std::string>();
    metas = manifest.at("samples");
    if (!metas.is_array() || metas.size() != n) {
      throw DataError(Kind::kCorruptHeader, "sample list length differs from num_samples");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(Kind::kCorruptHeader, manifest_path.string() + ": " + e.what());
  }

  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw DataError(Kind::kIo, "cannot open " + blob_path.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)),
                                        std::istreambuf_iterator<char>());
  const std::size_t per = bytes_per_sample(h, w);
  const std::size_t expected = per * n;
  if (blob.size() < expected) {
    throw DataError(Kind::kTruncated, blob_path.string() + " holds " + std::to_string(blob.size()) +
                                          " bytes, header requires " + std::to_string(expected));
  }
  if (blob.size() > expected) {
    throw DataError(Kind::kCorruptHeader, blob_path.string() + " holds " +
                                              std::to_string(blob.size()) + " bytes, header requires " +
                                              std::to_string(expected));
  }

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = blob.data() + i * per;
    std::vector<float> pixels(plane);
    for (std::size_t k = 0; k < plane; ++k) {
      pixels[k] = get_f32(p + 4 * k);
      if (!std::isfinite(pixels[k])) {
        throw DataError(Kind::kCorruptBlob, "sample " + std::to_string(i) + " has a non-finite pixel");
      }
    }
    p += 4 * plane;
    AnnotatedSample s;
    s.image = Tensor({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(pixels));
    for (int k = 0; k < kAnnotators; ++k) {
      Mask m(h, w);
      std::memcpy(m.pixels.data(), p + k * plane, plane);
      if (std::any_of(m.pixels.begin(), m.pixels.end(), [](std::uint8_t v) { return v > 1; })) {
        throw DataError(Kind::kCorruptBlob, "sample " + std::to_string(i) + " has a non-binary mask");
      }
      s.masks[k] = std::move(m);
    }
    try {
      if (!metas[i].is_null()) s.meta = meta_from_json(metas[i]);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(Kind::kCorruptHeader, "sample " + std::to_string(i) + " meta: " + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ambiseg
