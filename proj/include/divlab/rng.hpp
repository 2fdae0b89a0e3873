#pragma once

// Counter-based random substreams. Every draw site derives its own 64-bit
// stream key from (seed, round, arm, stage, unit), so realized draws do not
// depend on evaluation order or thread count. The per-stream generator is
// SplitMix64; normals use Leva's ratio-of-uniforms, gammas Marsaglia-Tsang.

#include <cmath>
#include <cstdint>

namespace divlab {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 output function (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Fold one stream coordinate into a key (hash_combine style).
constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t coord) noexcept {
  return mix64(key ^ (coord + kGolden + (key << 6) + (key >> 2)));
}

enum class Stage : std::uint64_t {
  Gender = 1,
  ClickRate = 2,
  Bids = 3,
  SignalNoise = 4,
  Clicks = 5,
  Bootstrap = 6,
  Synthetic = 7,
};

// Addressing context for substreams. arm_salt = 0 means common random
// numbers across arms; nonzero salts give each arm independent draws.
struct SeedCtx {
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
  std::uint64_t arm_salt = 0;

  constexpr std::uint64_t base() const noexcept {
    return derive(derive(mix64(seed ^ kGolden), round), arm_salt);
  }
  constexpr std::uint64_t stage(Stage s) const noexcept {
    return derive(base(), static_cast<std::uint64_t>(s));
  }
  constexpr std::uint64_t stream(Stage s, std::uint64_t unit) const noexcept {
    return derive(stage(s), unit);
  }
};

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t stream_key) noexcept : state_(stream_key) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); safe as a log() argument.
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Standard normal via Leva (1992) ratio-of-uniforms; ~1.37 uniforms/draw.
  double normal() noexcept {
    for (;;) {
      const double u = 1.0 - uniform();  // (0, 1]
      const double v = 1.7156 * (uniform() - 0.5);
      const double x = u - 0.449871;
      const double y = std::fabs(v) + 0.386595;
      const double q = x * x + y * (0.19600 * y - 0.25472 * x);
      if (q < 0.27597) return v / u;
      if (q > 0.27846) continue;
      if (v * v <= -4.0 * u * u * std::log(u)) return v / u;
    }
  }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  // Marsaglia-Tsang (2000) squeeze method; shapes < 1 are boosted.
  double gamma(double shape) noexcept {
    if (shape < 1.0) {
      const double boost = std::pow(uniform_open(), 1.0 / shape);
      return gamma(shape + 1.0) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double z = normal();
      double v = 1.0 + c * z;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_open();
      const double z2 = z * z;
      if (u < 1.0 - 0.0331 * z2 * z2) return d * v;
      if (std::log(u) < 0.5 * z2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Beta draw. Unit shapes use the closed-form inverse CDF (one uniform);
  // otherwise a gamma ratio. Results are pinned inside the open unit
  // interval so downstream probability invariants hold even in extreme tails.
  double beta(double a, double b) noexcept {
    double r;
    if (std::fabs(a - 1.0) < 1e-9) {
      r = -std::expm1(std::log(uniform_open()) / b);  // 1 - U^(1/b)
    } else if (std::fabs(b - 1.0) < 1e-9) {
      r = std::exp(std::log(uniform_open()) / a);  // U^(1/a)
    } else {
      const double ga = gamma(a);
      const double gb = gamma(b);
      r = ga / (ga + gb);
    }
    if (!(r > 0.0)) r = 1e-15;
    if (!(r < 1.0)) r = 1.0 - 1e-15;
    return r;
  }

  double lognormal(double log_mu, double log_sigma) noexcept {
    return std::exp(log_mu + log_sigma * normal());
  }

 private:
  std::uint64_t state_;
};

}  // namespace divlab
