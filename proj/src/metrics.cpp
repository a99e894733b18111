#include "ambiseg/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <json.hpp>
#include <thread>

#include "ambiseg/format.hpp"

namespace ambiseg {
namespace {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0;
};

Confusion confusion(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("masks differ in size: " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
  Confusion c;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const auto pa = a.pixels[i], pb = b.pixels[i];
    if (pa > 1 || pb > 1) throw DomainError("mask is not binary");
    c.tp += pa & pb;
    c.fp += pa & (1 - pb);
    c.fn += (1 - pa) & pb;
  }
  return c;
}

double mean_distance_distinct(std::span<const Mask> set) {
  const std::size_t n = set.size();
  if (n < 2) return 0.0;
  double acc = 0.0;
  // d is symmetric, so each unordered pair stands for both orderings.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) acc += 2.0 * (1.0 - iou(set[i], set[j]));
  return acc / static_cast<double>(n * (n - 1));
}

ImageRecord score_image(std::size_t index, std::span<const Mask> preds, std::span<const Mask> gts,
                        double r) {
  ImageRecord rec;
  rec.index = index;
  rec.ged = ged(preds, gts);
  double d = 0.0, j = 0.0;
  for (const auto& p : preds) {
    for (const auto& g : gts) {
      d += dice(p, g);
      j += iou(p, g);
    }
    rec.empty_predictions += p.empty();
  }
  const double pairs = static_cast<double>(preds.size() * gts.size());
  rec.dice = d / pairs;
  rec.iou = j / pairs;
  const auto pp = postprocess(preds, r);
  rec.ged_pp = ged(pp, gts);
  double dpp = 0.0;
  for (const auto& p : pp)
    for (const auto& g : gts) dpp += dice(p, g);
  rec.dice_pp = dpp / pairs;
  return rec;
}

EvalReport aggregate(std::vector<ImageRecord> records, int n_preds, double r) {
  EvalReport rep;
  rep.n_predictions = n_preds;
  rep.pp_ratio = r;
  for (const auto& rec : records) {
    rep.ged += rec.ged;
    rep.ged_pp += rec.ged_pp;
    rep.dice += rec.dice;
    rep.dice_pp += rec.dice_pp;
    rep.iou += rec.iou;
  }
  const double n = static_cast<double>(std::max<std::size_t>(records.size(), 1));
  rep.ged /= n;
  rep.ged_pp /= n;
  rep.dice /= n;
  rep.dice_pp /= n;
  rep.iou /= n;
  rep.images = std::move(records);
  return rep;
}

// Runs fn(i) for i in [0, count) on `workers` threads. Rethrows the failure
// of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const std::size_t threads =
      std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = count;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!failure) return;
  try {
    std::rethrow_exception(failure);
  } catch (const NumericError& e) {
    throw NumericError("image " + std::to_string(failed_index) + ": " + e.what(), e.step());
  }
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
  const auto c = confusion(a, b);
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const Mask& a, const Mask& b) {
  const auto c = confusion(a, b);
  const std::size_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double ged(std::span<const Mask> preds, std::span<const Mask> gts) {
  if (preds.empty() || gts.empty()) throw UsageError("ged: both mask sets must be non-empty");
  double cross = 0.0;
  for (const auto& s : preds)
    for (const auto& y : gts) cross += 1.0 - iou(s, y);
  cross /= static_cast<double>(preds.size() * gts.size());
  return 2.0 * cross - mean_distance_distinct(preds) - mean_distance_distinct(gts);
}

std::vector<Mask> postprocess(std::span<const Mask> masks, double r) {
  std::vector<Mask> out(masks.begin(), masks.end());
  if (r <= 0.0) return out;
  std::size_t max_area = 0;
  for (const auto& m : masks) max_area = std::max(max_area, m.area());
  const double threshold = r * static_cast<double>(max_area);
  for (auto& m : out) {
    if (static_cast<double>(m.area()) < threshold) std::fill(m.pixels.begin(), m.pixels.end(), 0);
  }
  return out;
}

std::vector<EvalReport> evaluate_grid(const MaskSampler& sampler, const Dataset& dataset,
                                      std::span<const int> n_preds_list,
                                      std::span<const double> ratios, const EvalOptions& options) {
  if (n_preds_list.empty() || ratios.empty()) throw UsageError("evaluate: empty settings grid");
  int max_n = 0;
  for (int n : n_preds_list) {
    if (n < 1) throw UsageError("evaluate: n_preds must be >= 1");
    max_n = std::max(max_n, n);
  }
  const std::size_t count = dataset.samples.size();
  const std::size_t cells = n_preds_list.size() * ratios.size();
  std::vector<std::vector<ImageRecord>> records(cells, std::vector<ImageRecord>(count));

  parallel_for(count, options.workers, [&](std::size_t i) {
    const auto& sample = dataset.samples[i];
    const auto preds = sampler(i, sample, max_n);
    if (preds.size() != static_cast<std::size_t>(max_n)) {
      throw UsageError("evaluate: sampler returned the wrong number of masks");
    }
    for (std::size_t a = 0; a < n_preds_list.size(); ++a) {
      const std::span<const Mask> subset(preds.data(), static_cast<std::size_t>(n_preds_list[a]));
      for (std::size_t b = 0; b < ratios.size(); ++b) {
        records[a * ratios.size() + b][i] = score_image(i, subset, sample.masks, ratios[b]);
      }
    }
  });

  std::vector<EvalReport> out;
  for (std::size_t a = 0; a < n_preds_list.size(); ++a)
    for (std::size_t b = 0; b < ratios.size(); ++b)
      out.push_back(aggregate(std::move(records[a * ratios.size() + b]), n_preds_list[a], ratios[b]));
  return out;
}

EvalReport evaluate(const MaskSampler& sampler, const Dataset& dataset, int n_preds, double r,
                    const EvalOptions& options) {
  const int ns[] = {n_preds};
  const double rs[] = {r};
  return evaluate_grid(sampler, dataset, ns, rs, options).front();
}

MaskSampler diffusion_sampler(const Denoiser& model, const SamplerConfig& cfg,
                              const NoiseSchedule& sched) {
  cfg.validate();
  return [&model, cfg, sched](std::size_t index, const AnnotatedSample& item, int n) {
    const auto plane = item.image.numel();
    std::vector<float> batch(plane * static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      std::copy(item.image.data().begin(), item.image.data().end(),
                batch.begin() + static_cast<std::ptrdiff_t>(plane * j));
    }
    Tensor images({static_cast<std::size_t>(n), 1, item.image.dim(1), item.image.dim(2)},
                  std::move(batch));
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) seeds[j] = Rng::derive(cfg.seed, index, static_cast<std::uint64_t>(j));
    return sample(model, images, cfg, sched, seeds);
  };
}

double dataset_oracle_ged(const Dataset& dataset, int n_preds) {
  if (dataset.samples.empty()) throw UsageError("dataset_oracle_ged: empty dataset");
  double acc = 0.0;
  for (const auto& s : dataset.samples) acc += oracle_ged(s, n_preds);
  return acc / static_cast<double>(dataset.samples.size());
}

std::string report_to_json(const EvalReport& report, const std::string& config_echo) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["header"] = {
      {"n_predictions", report.n_predictions},
      {"pp_ratio", report.pp_ratio},
      {"sampler", report.sampler},
      {"seed", report.seed},
      {"ged_distance", "1 - IoU"},
      {"ged_diversity_pairs", "ordered distinct indices (self-pairs excluded)"},
      {"dice_aggregation", "mean over prediction x annotation pairs, then over images"},
      {"config", config_echo},
  };
  ordered_json images = ordered_json::array();
  for (const auto& r : report.images) {
    images.push_back({{"index", r.index},
                      {"ged", r.ged},
                      {"ged_pp", r.ged_pp},
                      {"dice", r.dice},
                      {"dice_pp", r.dice_pp},
                      {"iou", r.iou},
                      {"empty_predictions", r.empty_predictions}});
  }
  j["images"] = std::move(images);
  j["aggregate"] = {{"ged", report.ged},
                    {"ged_pp", report.ged_pp},
                    {"dice", report.dice},
                    {"dice_pp", report.dice_pp},
                    {"iou", report.iou}};
  return j.dump(2) + "\n";
}

std::string report_csv_header() { return "n_preds,pp_ratio,ged,ged_pp,dice,dice_pp,iou,sampler,seed"; }

std::string report_csv_row(const EvalReport& r) {
  return std::to_string(r.n_predictions) + "," + format_double(r.pp_ratio) + "," +
         format_double(r.ged) + "," + format_double(r.ged_pp) + "," + format_double(r.dice) + "," +
         format_double(r.dice_pp) + "," + format_double(r.iou) + "," + r.sampler + "," +
         std::to_string(r.seed);
}

}  // namespace ambiseg
