// Random three-phase model instances whose breakpoints sit on a schedule grid,
// shared by the fit tests and the acceptance binary.
#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "noise/experiment.hpp"
#include "noise/sim.hpp"
#include "noise/stats.hpp"

namespace fixtures {

struct ModelInstance {
  noise::IdealModelParams params;
  std::vector<std::size_t> schedule;
  std::size_t k1_index = 0;
  std::size_t k2_index = 0;
};

// k1 < k2 < last schedule point, transient slope 1-5 % of t0 per pattern and a
// saturated slope 1.5-4x steeper or 2-4x shallower, so both breakpoints are
// identifiable.
inline ModelInstance random_instance(std::mt19937_64& rng, const std::vector<std::size_t>& schedule,
                                     double sigma) {
  ModelInstance m;
  m.schedule = schedule;
  const std::size_t last = schedule.size() - 1;
  std::uniform_int_distribution<std::size_t> pick1(0, last - 2);
  m.k1_index = pick1(rng);
  std::uniform_int_distribution<std::size_t> pick2(m.k1_index + 1, last - 1);
  m.k2_index = pick2(rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto& p = m.params;
  p.t0 = 50.0 + 450.0 * unit(rng);
  p.k1 = static_cast<double>(schedule[m.k1_index]);
  p.k2 = static_cast<double>(schedule[m.k2_index]);
  p.slope_transient = p.t0 * (0.01 + 0.04 * unit(rng));
  const double ratio = unit(rng) < 0.5 ? 1.5 + 2.5 * unit(rng) : 0.25 + 0.25 * unit(rng);
  p.slope_saturated = p.slope_transient * ratio;
  p.sigma = sigma;
  p.seed = rng();
  return m;
}

// One point per schedule entry: median and IQR over `reps` simulated runs.
inline noise::TimingSeries simulate_series(const ModelInstance& m, std::size_t reps) {
  noise::TimingSeries s;
  s.target = "sim";
  s.region_id = "sim";
  s.mode = "fp_add64";
  for (std::size_t k : m.schedule) {
    std::vector<double> runs;
    for (std::size_t r = 0; r < reps; ++r) runs.push_back(noise::simulate(m.params, k, r));
    const auto sum = noise::summarize(runs);
    s.points.push_back({k, sum.median, sum.iqr(), reps});
  }
  return s;
}

}  // namespace fixtures
