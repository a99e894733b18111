#pragma once

#include <string>
#include <string_view>

namespace ambiseg {

enum class ScheduleFamily { kCosine };

/// Variance-preserving noise schedule with input scaling.
///
/// The base cosine schedule gamma(t) = cos(t*pi/2)^2 is perturbed to
///   gamma_b(t) = b^2 gamma(t) / ((b^2 - 1) gamma(t) + 1),
/// which keeps unit variance while multiplying the SNR by b^2 at every t.
struct NoiseSchedule {
  ScheduleFamily family = ScheduleFamily::kCosine;
  double input_scale = 1.0;

  /// Throws ConfigError unless input_scale is in (0, 1].
  void validate() const;
};

struct Coefficients {
  double alpha = 1.0;
  double sigma = 0.0;
  double t = 0.0;
};

/// gamma_b(t). Throws DomainError for t outside [0, 1].
double gamma(const NoiseSchedule& sched, double t);

/// 1 - gamma_b(t), evaluated without cancellation near t = 0.
double gamma_complement(const NoiseSchedule& sched, double t);

/// alpha = sqrt(gamma_b), sigma = sqrt(1 - gamma_b).
Coefficients coefficients(const NoiseSchedule& sched, double t);

/// gamma_b / (1 - gamma_b). Returns +inf where gamma_b is exactly 1.
double snr(const NoiseSchedule& sched, double t);

/// log SNR(t); +inf at t = 0 for the cosine family.
double log_snr(const NoiseSchedule& sched, double t);

/// d log SNR / dt on the open interval (0, 1). Analytic for cosine:
///   -pi (tan(pi t / 2) + cot(pi t / 2)), independent of the input scale.
double dlog_snr_dt(const NoiseSchedule& sched, double t);

/// Central finite difference of log SNR. Fallback for families without a
/// closed-form derivative.
double dlog_snr_dt_numeric(const NoiseSchedule& sched, double t, double h = 1e-5);

enum class WeightingKind { kSnr, kTruncSnr, kSnrPlusOne, kUniform, kSigmoid };

struct LossWeighting {
  WeightingKind kind = WeightingKind::kTruncSnr;
  double sigmoid_bias = 0.0;
};

/// w(t):
///   snr          SNR(t)
///   trunc_snr    max(SNR(t), 1)
///   snr_plus_one SNR(t) + 1
///   uniform      1
///   sigmoid      -dlogSNR/dt * sigmoid(log SNR(t) + bias)
double weight(const LossWeighting& lw, const NoiseSchedule& sched, double t);

std::string_view to_string(WeightingKind kind);
/// Accepts the names printed by to_string. Throws ConfigError otherwise.
WeightingKind parse_weighting_kind(std::string_view name);

}  // namespace ambiseg
