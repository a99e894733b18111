#pragma once

#include <cstdint>
#include <random>

namespace ambiseg {

/// Seeded random stream with platform-independent output.
///
/// The standard library distributions are implementation-defined, so the
/// uniform and normal transforms are done here on top of mt19937_64 (whose
/// raw output sequence is fixed by the standard). Every artifact in the
/// project is reproducible bit-for-bit from its seed through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Mixes a master seed with stream indices into an independent seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ambiseg
