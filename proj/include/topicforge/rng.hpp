#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "topicforge/error.hpp"

namespace topicforge {

// Counter-based generator: a Weyl sequence passed through the splitmix64
// finalizer. Bit-identical output for a given seed on every platform, which
// is what the reproducibility contract of the sampler rests on. All
// distributions below are hand-rolled on top of it; std::* distributions are
// not portable across standard libraries.
class SplitMix64 {
 public:
  SplitMix64() = default;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t state() const noexcept { return state_; }

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; safe as a log() argument.
  double next_double_open() noexcept {
    return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Unbiased integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound) {
    require(bound > 0, Errc::ConfigError, "next_below: bound must be positive");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  double next_normal() noexcept {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Marsaglia-Tsang; unit scale.
  double next_gamma(double shape) {
    require(shape > 0.0, Errc::ConfigError, "next_gamma: shape must be positive");
    if (shape < 1.0) {
      const double boost = std::pow(next_double_open(), 1.0 / shape);
      return next_gamma(shape + 1.0) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = next_normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = next_double_open();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  void next_dirichlet(std::span<const double> alpha, std::span<double> out) {
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = next_gamma(alpha[i]);
      total += out[i];
    }
    require(total > 0.0, Errc::ConfigError, "next_dirichlet: degenerate draw");
    for (std::size_t i = 0; i < alpha.size(); ++i) out[i] /= total;
  }

  /// Index drawn proportionally to the (unnormalized, nonnegative) weights.
  std::size_t next_discrete(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    require(total > 0.0, Errc::DegenerateVector, "next_discrete: weights sum to zero");
    const double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

 private:
  std::uint64_t state_ = 0;
};

/// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  SplitMix64 g(base ^ (stream * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL));
  return g.next();
}

}  // namespace topicforge
