#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "noise/experiment.hpp"

namespace noise {

struct FitOptions {
  /// Points of the flat segment within +-(band_iqr_fraction x baseline IQR)
  /// of t0 count as exact.
  double band_iqr_fraction = 0.5;
};

struct AbsorptionFit {
  double t0 = 0.0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  double slope_transient = 0.0;
  double slope_saturated = 0.0;
  double sse = 0.0;
  double absorption_raw = 0.0;
  /// absorption_raw / loop_body_size, when the series carries a loop size.
  std::optional<double> absorption_rel;
  bool saturation_observed = true;
};

/// Exhaustive breakpoint search over the sampled k values; throws TooFewPoints
/// for fewer than 3 points and InvalidArgument if the first point is not k=0
/// or k is not strictly increasing.
AbsorptionFit fit_three_phase(const TimingSeries& series, const FitOptions& options = {});

/// SSE of one candidate (k1 index i, k2 index j) and its slopes; exposed for
/// brute-force checks. nullopt when the candidate violates the model constraints
/// (negative transient slope, non-positive saturated slope before max k).
struct CandidateFit {
  double sse;
  double slope_transient;
  double slope_saturated;
};
std::optional<CandidateFit> evaluate_breakpoints(const TimingSeries& series, std::size_t i,
                                                 std::size_t j, const FitOptions& options = {});

/// k / loop_body_size; throws ZeroLoopSize.
double relative_payload(double k, std::size_t loop_body_size);
double relative_absorption(const AbsorptionFit& fit, std::size_t loop_body_size);

enum class Bottleneck {
  core_bound,
  compute_bound,
  data_access_core_bound,
  bandwidth_bound,
  latency_bound,
  ambiguous,
};

std::string_view to_string(Bottleneck b);

struct Thresholds {
  double lat = 5.0;
  double data = 20.0;
  double mid = 5.0;
  double core = 2.0;
};

struct Classification {
  Bottleneck label = Bottleneck::ambiguous;
  double abs_fp = 0.0;
  double abs_l1 = 0.0;
  double abs_mem = 0.0;
  Thresholds thresholds;
  /// Number (1-5) of the rule that fired, 0 for ambiguous.
  int rule = 0;
};

Classification classify(double abs_fp, double abs_l1, double abs_mem,
                        const Thresholds& thresholds = {});

/// t_variant / t_reference; throws ZeroReference.
double decan_saturation(double t_variant, double t_reference);

enum class Scenario {
  compute_bound,
  data_bound,
  full_overlap,
  full_overlap_or_frontend,
  frontend_suspect,
  limited_overlap,
};

std::string_view to_string(Scenario s);

struct ScenarioThresholds {
  /// Absorptions at or below this are "near zero".
  double abs_low = 2.0;
  /// Absorptions at or above this are "high".
  double abs_high = 5.0;
  /// Saturations at or above this are "high" (variant close to the reference).
  double sat_high = 0.75;
};

Scenario scenario_interpret(std::optional<double> sat_fp, std::optional<double> sat_ls,
                            double abs_fp, double abs_ls, const ScenarioThresholds& t = {});

/// Fits every series, classifies every (target, region, class) and writes
/// `<region>.json` plus `<region>_<mode>.csv` per mode into `out_dir`.
/// Returns the written paths. Output bytes depend only on the inputs.
std::vector<std::filesystem::path> emit_report(const ExperimentData& data,
                                               const std::filesystem::path& out_dir,
                                               const Thresholds& thresholds = {},
                                               const FitOptions& options = {});

}  // namespace noise
