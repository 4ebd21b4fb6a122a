#pragma once

#include <span>
#include <vector>

namespace noise {

struct Summary {
  double median = 0.0;
  double mean = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;

  double iqr() const { return q3 - q1; }
};

/// Linear-interpolation quantile of sorted data, p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

/// Throws Error(InvalidArgument) on empty input.
Summary summarize(std::span<const double> values);

}  // namespace noise
