#include "noise/sim.hpp"

#include <algorithm>
#include <random>

#include "noise/error.hpp"

namespace noise {

void IdealModelParams::validate() const {
  if (!(t0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "t0 must be positive");
  if (!(k1 >= 0.0 && k1 <= k2)) throw Error(ErrorCode::InvalidArgument, "need 0 <= k1 <= k2");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be >= 0");
  if (!(slope_transient >= 0.0 && slope_saturated >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "slopes must be >= 0");
  }
}

double ideal_duration(const IdealModelParams& p, double k) {
  if (k <= p.k1) return p.t0;
  if (k <= p.k2) return p.t0 + p.slope_transient * (k - p.k1);
  return p.t0 + p.slope_transient * (p.k2 - p.k1) + p.slope_saturated * (k - p.k2);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double simulate(const IdealModelParams& p, std::size_t k, std::size_t rep) {
  const double base = ideal_duration(p, static_cast<double>(k));
  if (p.sigma == 0.0) return base;
  std::mt19937_64 rng(mix(mix(mix(p.seed) ^ k) ^ rep));
  std::normal_distribution<double> normal(0.0, 1.0);
  return std::max(0.0, base * (1.0 + p.sigma * normal(rng)));
}

}  // namespace noise
