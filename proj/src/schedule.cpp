#include "ambiseg/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ambiseg/errors.hpp"

namespace ambiseg {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("schedule time must lie in [0, 1], got " + std::to_string(t));
  }
}

// Base cosine schedule and its complement, each evaluated directly so that
// neither suffers cancellation at its end of the interval.
struct GammaPair {
  double value;
  double complement;
};

GammaPair base_gamma(double t) {
  const double c = std::cos(t * kHalfPi);
  const double s = std::sin(t * kHalfPi);
  // cos(pi/2) is not exactly zero in floating point.
  return {t == 1.0 ? 0.0 : c * c, t == 0.0 ? 0.0 : s * s};
}

GammaPair scaled_gamma(const NoiseSchedule& sched, double t) {
  check_time(t);
  const auto base = base_gamma(t);
  const double b2 = sched.input_scale * sched.input_scale;
  // (b^2 - 1) g + 1 == b^2 g + (1 - g); both terms are non-negative.
  const double denom = b2 * base.value + base.complement;
  return {b2 * base.value / denom, base.complement / denom};
}

}  // namespace

void NoiseSchedule::validate() const {
  if (!(input_scale > 0.0 && input_scale <= 1.0)) {
    throw ConfigError("input scale must lie in (0, 1], got " + std::to_string(input_scale));
  }
}

double gamma(const NoiseSchedule& sched, double t) { return scaled_gamma(sched, t).value; }

double gamma_complement(const NoiseSchedule& sched, double t) {
  return scaled_gamma(sched, t).complement;
}

Coefficients coefficients(const NoiseSchedule& sched, double t) {
  const auto g = scaled_gamma(sched, t);
  return {std::sqrt(g.value), std::sqrt(g.complement), t};
}

double snr(const NoiseSchedule& sched, double t) {
  const auto g = scaled_gamma(sched, t);
  if (g.complement == 0.0) return std::numeric_limits<double>::infinity();
  return g.value / g.complement;
}

double log_snr(const NoiseSchedule& sched, double t) { return std::log(snr(sched, t)); }

double dlog_snr_dt(const NoiseSchedule& sched, double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw DomainError("dlog_snr_dt needs t in the open interval (0, 1), got " + std::to_string(t));
  }
  switch (sched.family) {
    case ScheduleFamily::kCosine: {
      const double x = t * kHalfPi;
      return -std::numbers::pi * (std::tan(x) + 1.0 / std::tan(x));
    }
  }
  return dlog_snr_dt_numeric(sched, t);
}

double dlog_snr_dt_numeric(const NoiseSchedule& sched, double t, double h) {
  if (!(t - h > 0.0 && t + h < 1.0)) {
    throw DomainError("dlog_snr_dt_numeric: stencil leaves (0, 1) at t = " + std::to_string(t));
  }
  return (log_snr(sched, t + h) - log_snr(sched, t - h)) / (2.0 * h);
}

double weight(const LossWeighting& lw, const NoiseSchedule& sched, double t) {
  switch (lw.kind) {
    case WeightingKind::kSnr:
      return snr(sched, t);
    case WeightingKind::kTruncSnr:
      return std::max(snr(sched, t), 1.0);
    case WeightingKind::kSnrPlusOne:
      return snr(sched, t) + 1.0;
    case WeightingKind::kUniform:
      check_time(t);
      return 1.0;
    case WeightingKind::kSigmoid: {
      const double z = log_snr(sched, t) + lw.sigmoid_bias;
      // Stable logistic for both signs of z.
      const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      return -dlog_snr_dt(sched, t) * sig;
    }
  }
  throw ConfigError("unknown loss weighting kind");
}

std::string_view to_string(WeightingKind kind) {
  switch (kind) {
    case WeightingKind::kSnr: return "snr";
    case WeightingKind::kTruncSnr: return "trunc_snr";
    case WeightingKind::kSnrPlusOne: return "snr_plus_one";
    case WeightingKind::kUniform: return "uniform";
    case WeightingKind::kSigmoid: return "sigmoid";
  }
  return "unknown";
}

WeightingKind parse_weighting_kind(std::string_view name) {
  for (auto k : {WeightingKind::kSnr, WeightingKind::kTruncSnr, WeightingKind::kSnrPlusOne,
                 WeightingKind::kUniform, WeightingKind::kSigmoid}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown loss weighting '" + std::string(name) + "'");
}

}  // namespace ambiseg
