#pragma once

#include <cstddef>
#include <cstdint>

namespace noise {

/// Three-phase noise response: flat at t0 up to k1, linear with slope_transient
/// up to k2, then linear with slope_saturated.
struct IdealModelParams {
  double t0 = 1.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double slope_transient = 0.0;
  double slope_saturated = 0.0;
  double sigma = 0.0;  // relative standard deviation of the multiplicative noise
  std::uint64_t seed = 0;

  /// Throws Error(InvalidArgument) unless 0 <= k1 <= k2, t0 > 0, sigma >= 0, slopes >= 0.
  void validate() const;
};

/// Noise-free model value at k.
double ideal_duration(const IdealModelParams& p, double k);

/// ideal_duration x (1 + sigma x N(0,1)), the normal draw seeded from
/// (seed, k, rep) so any call can be replayed independently. Never negative.
double simulate(const IdealModelParams& p, std::size_t k, std::size_t rep);

}  // namespace noise
