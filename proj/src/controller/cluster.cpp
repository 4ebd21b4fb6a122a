#include <algorithm>
#include <numeric>

#include "noise/controller.hpp"
#include "noise/stats.hpp"

namespace noise {

std::vector<PerformanceClass> cluster_samples(std::span<const double> samples, double gap_threshold,
                                              Statistic statistic) {
  std::vector<PerformanceClass> classes;
  if (samples.empty()) return classes;
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());

  auto close = [&](std::size_t from, std::size_t to) {
    PerformanceClass c;
    c.class_id = static_cast<int>(classes.size());
    c.members.assign(v.begin() + static_cast<std::ptrdiff_t>(from),
                     v.begin() + static_cast<std::ptrdiff_t>(to));
    const Summary s = summarize(c.members);
    c.representative = statistic == Statistic::mean ? s.mean : s.median;
    c.iqr = s.iqr();
    classes.push_back(std::move(c));
  };

  std::size_t start = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    // relative to the smaller neighbour; a zero duration splits from anything positive
    const double prev = v[i - 1];
    const bool split = prev > 0.0 ? (v[i] - prev) / prev > gap_threshold : v[i] > 0.0;
    if (split) {
      close(start, i);
      start = i;
    }
  }
  close(start, v.size());
  return classes;
}

bool online_stop(const TimingSeries& series, double delta, std::size_t m) {
  const auto& pts = series.points;
  if (pts.empty() || pts.front().k != 0 || m == 0) return false;
  const double limit = (1.0 + delta) * pts.front().duration;
  // points after the baseline only
  const std::size_t n = pts.size() - 1;
  if (n < m) return false;

  for (std::size_t i = 0; i < m; ++i) {
    if (!(pts[pts.size() - 1 - i].duration > limit)) return false;
  }
  return true;
}

}  // namespace noise
