#include "noise/analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "noise/error.hpp"
#include "noise/patterns.hpp"

namespace noise {

using json = nlohmann::ordered_json;

namespace {

void check_series(const TimingSeries& s) {
  if (s.points.size() < 3) {
    throw Error(ErrorCode::TooFewPoints,
                "need at least 3 points, got " + std::to_string(s.points.size()));
  }
  s.validate();
}

double kd(const SeriesPoint& p) { return static_cast<double>(p.k); }

}  // namespace

std::optional<CandidateFit> evaluate_breakpoints(const TimingSeries& series, std::size_t i,
                                                 std::size_t j, const FitOptions& options) {
  const auto& pts = series.points;
  if (i > j || j >= pts.size()) return std::nullopt;
  const std::size_t last = pts.size() - 1;
  const double t0 = pts.front().duration;
  const double band = options.band_iqr_fraction * pts.front().spread;
  const double k1 = kd(pts[i]);
  const double k2 = kd(pts[j]);

  CandidateFit c{0.0, 0.0, 0.0};
  for (std::size_t n = 0; n <= i; ++n) {
    const double over = std::max(0.0, std::abs(pts[n].duration - t0) - band);
    c.sse += over * over;
  }
  if (i == last) return c;

  // y - t0 = s2 * a + s3 * b over the points past k1
  double aa = 0, ab = 0, bb = 0, ay = 0, by = 0;
  for (std::size_t n = i + 1; n <= last; ++n) {
    const double k = kd(pts[n]);
    const double a = std::min(k, k2) - k1;
    const double b = std::max(0.0, k - k2);
    const double y = pts[n].duration - t0;
    aa += a * a;
    ab += a * b;
    bb += b * b;
    ay += a * y;
    by += b * y;
  }
  double s2 = 0.0, s3 = 0.0;
  if (i == j) {
    s3 = bb > 0 ? by / bb : 0.0;
  } else if (j == last) {
    s2 = aa > 0 ? ay / aa : 0.0;
  } else {
    const double det = aa * bb - ab * ab;
    if (std::abs(det) <= 1e-12 * std::max(1.0, aa * bb)) return std::nullopt;
    s2 = (ay * bb - by * ab) / det;
    s3 = (aa * by - ab * ay) / det;
  }
  if (j < last && !(s3 > 0.0)) return std::nullopt;
  if (i < j && s2 < 0.0) return std::nullopt;  // the transient phase degrades, never speeds up

  for (std::size_t n = i + 1; n <= last; ++n) {
    const double k = kd(pts[n]);
    const double pred = s2 * (std::min(k, k2) - k1) + s3 * std::max(0.0, k - k2);
    const double r = pts[n].duration - t0 - pred;
    c.sse += r * r;
  }
  c.slope_transient = s2;
  c.slope_saturated = s3;
  return c;
}

AbsorptionFit fit_three_phase(const TimingSeries& series, const FitOptions& options) {
  check_series(series);
  const auto& pts = series.points;
  const std::size_t last = pts.size() - 1;

  double scale = 0.0;
  for (const auto& p : pts) scale = std::max(scale, p.duration * p.duration);
  const double eps = 1e-12 * std::max(scale, 1e-300) * static_cast<double>(pts.size());

  // Walk k1 from the top so that on (near) ties the larger absorption and the
  // earlier saturation win.
  std::optional<CandidateFit> best;
  std::size_t bi = last, bj = last;
  for (std::size_t ii = pts.size(); ii-- > 0;) {
    for (std::size_t j = ii; j <= last; ++j) {
      auto c = evaluate_breakpoints(series, ii, j, options);
      if (!c) continue;
      if (!best || c->sse < best->sse - eps) {
        best = c;
        bi = ii;
        bj = j;
      }
    }
  }

  AbsorptionFit fit;
  fit.t0 = pts.front().duration;
  fit.k1 = pts[bi].k;
  fit.k2 = pts[bj].k;
  fit.sse = best->sse;
  fit.slope_transient = best->slope_transient;
  fit.slope_saturated = best->slope_saturated;
  if (bi == last) {
    fit.saturation_observed = false;
    fit.slope_saturated = 0.0;
  }
  fit.absorption_raw = static_cast<double>(fit.k1);
  if (series.loop_body_size > 0) fit.absorption_rel = relative_absorption(fit, series.loop_body_size);
  return fit;
}

double relative_payload(double k, std::size_t loop_body_size) {
  if (loop_body_size == 0) throw Error(ErrorCode::ZeroLoopSize, "loop body has no instructions");
  return k / static_cast<double>(loop_body_size);
}

double relative_absorption(const AbsorptionFit& fit, std::size_t loop_body_size) {
  return relative_payload(fit.absorption_raw, loop_body_size);
}

std::string_view to_string(Bottleneck b) {
  switch (b) {
    case Bottleneck::core_bound: return "core-bound";
    case Bottleneck::compute_bound: return "compute-bound";
    case Bottleneck::data_access_core_bound: return "data-access-core-bound";
    case Bottleneck::bandwidth_bound: return "bandwidth-bound";
    case Bottleneck::latency_bound: return "latency-bound";
    case Bottleneck::ambiguous: return "ambiguous";
  }
  return "ambiguous";
}

Classification classify(double abs_fp, double abs_l1, double abs_mem, const Thresholds& t) {
  if (abs_fp < 0 || abs_l1 < 0 || abs_mem < 0) {
    throw Error(ErrorCode::InvalidArgument, "absorptions must be non-negative");
  }
  Classification c{Bottleneck::ambiguous, abs_fp, abs_l1, abs_mem, t, 0};
  if (abs_mem >= t.lat) {
    c.label = Bottleneck::latency_bound;
    c.rule = 1;
  } else if (std::max(abs_fp, abs_l1) >= t.data) {
    c.label = Bottleneck::bandwidth_bound;
    c.rule = 2;
  } else if (abs_fp <= t.core && abs_l1 >= t.mid) {
    c.label = Bottleneck::compute_bound;
    c.rule = 3;
  } else if (abs_l1 <= t.core && abs_fp >= t.mid) {
    c.label = Bottleneck::data_access_core_bound;
    c.rule = 4;
  } else if (abs_fp <= t.core && abs_l1 <= t.core) {
    c.label = Bottleneck::core_bound;
    c.rule = 5;
  }
  return c;
}

double decan_saturation(double t_variant, double t_reference) {
  if (!(t_reference > 0.0)) throw Error(ErrorCode::ZeroReference, "reference duration must be positive");
  return t_variant / t_reference;
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::compute_bound: return "compute-bound";
    case Scenario::data_bound: return "data-bound";
    case Scenario::full_overlap: return "full-overlap";
    case Scenario::full_overlap_or_frontend: return "full-overlap-or-frontend";
    case Scenario::frontend_suspect: return "frontend-suspect";
    case Scenario::limited_overlap: return "limited-overlap";
  }
  return "limited-overlap";
}

Scenario scenario_interpret(std::optional<double> sat_fp, std::optional<double> sat_ls,
                            double abs_fp, double abs_ls, const ScenarioThresholds& t) {
  const bool fp_low = abs_fp <= t.abs_low;
  const bool ls_low = abs_ls <= t.abs_low;
  if (fp_low && ls_low) {
    if (!sat_fp || !sat_ls) return Scenario::full_overlap_or_frontend;
    if (*sat_fp >= t.sat_high && *sat_ls >= t.sat_high) return Scenario::full_overlap;
    return Scenario::frontend_suspect;
  }
  if (fp_low && abs_ls >= t.abs_high) return Scenario::compute_bound;
  if (ls_low && abs_fp >= t.abs_high) return Scenario::data_bound;
  return Scenario::limited_overlap;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  }
  return s;
}

json thresholds_json(const Thresholds& t) {
  return {{"lat", t.lat}, {"data", t.data}, {"mid", t.mid}, {"core", t.core}};
}

std::optional<Resource> resource_of(const std::string& mode) {
  if (mode == modes::fp_add64) return Resource::fp_unit;
  if (mode == modes::l1_ld64) return Resource::l1_load;
  if (mode == modes::memory_ld64) return Resource::memory_load;
  if (mode == modes::int64_add) return Resource::integer_unit;
  return std::nullopt;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const ExperimentData& data,
                                               const std::filesystem::path& out_dir,
                                               const Thresholds& thresholds,
                                               const FitOptions& options) {
  std::vector<std::filesystem::path> written;
  // region -> modes, in first-seen order
  std::vector<std::string> regions;
  std::map<std::string, std::vector<const ModeRecord*>> by_region;
  for (const auto& m : data.modes) {
    if (!by_region.count(m.region_id)) regions.push_back(m.region_id);
    by_region[m.region_id].push_back(&m);
  }
  if (regions.empty()) return written;

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  for (const auto& region : regions) {
    const auto& recs = by_region[region];
    json fits = json::array();
    json audits = json::array();
    // class -> resource -> raw absorption
    std::map<int, std::map<Resource, double>> absorption;

    for (const ModeRecord* m : recs) {
      std::ostringstream csv;
      csv << "class,k,relative_payload,duration_ns,iqr_ns\n";
      for (const auto& s : m->series) {
        json f = {{"region", region}, {"mode", m->mode}, {"class", s.class_id}};
        try {
          const AbsorptionFit fit = fit_three_phase(s, options);
          f["t0"] = fit.t0;
          f["k1"] = fit.k1;
          f["k2"] = fit.k2;
          f["slope_transient"] = fit.slope_transient;
          f["slope_saturated"] = fit.slope_saturated;
          f["sse"] = fit.sse;
          f["absorption_raw"] = fit.absorption_raw;
          f["absorption_rel"] = fit.absorption_rel ? json(*fit.absorption_rel) : json(nullptr);
          f["saturation_observed"] = fit.saturation_observed;
          if (auto r = resource_of(m->mode)) absorption[s.class_id][*r] = fit.absorption_raw;
        } catch (const Error& e) {
          f["error"] = std::string(to_string(e.code()));
        }
        f["loop_body_size"] = s.loop_body_size;
        f["stopped_online"] = m->stopped_online;
        f["stop_k"] = m->stop_k ? json(*m->stop_k) : json(nullptr);
        fits.push_back(std::move(f));

        for (const auto& p : s.points) {
          csv << s.class_id << ',' << p.k << ',';
          if (s.loop_body_size > 0) csv << num(relative_payload(static_cast<double>(p.k), s.loop_body_size));
          csv << ',' << num(p.duration) << ',' << num(p.spread) << '\n';
        }
      }
      for (const auto& a : m->audits) {
        audits.push_back(json::parse(to_json_text(a)));
      }
      const auto csv_path = out_dir / (safe_name(region) + "_" + safe_name(m->mode) + ".csv");
      write_file(csv_path, csv.str());
      written.push_back(csv_path);
    }

    json classes = json::array();
    std::optional<std::string> region_label;
    for (const auto& [cls, abs] : absorption) {
      json c = {{"class", cls}};
      const bool complete = abs.count(Resource::fp_unit) && abs.count(Resource::l1_load) &&
                            abs.count(Resource::memory_load);
      if (complete) {
        const auto r = classify(abs.at(Resource::fp_unit), abs.at(Resource::l1_load),
                                abs.at(Resource::memory_load), thresholds);
        c["label"] = std::string(to_string(r.label));
        c["rule"] = r.rule;
        c["evidence"] = {{"abs_fp", r.abs_fp}, {"abs_l1", r.abs_l1}, {"abs_mem", r.abs_mem}};
        c["scenario"] = std::string(
            to_string(scenario_interpret(std::nullopt, std::nullopt, r.abs_fp, r.abs_l1)));
        if (!region_label) region_label = c["label"].get<std::string>();
      } else {
        c["label"] = nullptr;
        json missing = json::array();
        if (!abs.count(Resource::fp_unit)) missing.push_back(std::string(modes::fp_add64));
        if (!abs.count(Resource::l1_load)) missing.push_back(std::string(modes::l1_ld64));
        if (!abs.count(Resource::memory_load)) missing.push_back(std::string(modes::memory_ld64));
        c["missing_modes"] = missing;
      }
      classes.push_back(std::move(c));
    }

    json failures = json::array();
    std::set<std::string> targets;
    for (const ModeRecord* m : recs) targets.insert(m->target);
    for (const auto& f : data.failures) {
      if (!targets.count(f.target)) continue;
      failures.push_back({{"target", f.target}, {"mode", f.mode}, {"k", f.k}, {"code", f.code},
                          {"message", f.message}});
    }

    json report;
    report["region"] = region;
    report["target"] = recs.front()->target;
    report["label"] = region_label ? json(*region_label) : json(nullptr);
    report["thresholds"] = thresholds_json(thresholds);
    report["fit"] = {{"band_iqr_fraction", options.band_iqr_fraction}};
    report["classifications"] = classes;
    report["fits"] = fits;
    report["audits"] = audits;
    report["failures"] = failures;

    const auto json_path = out_dir / (safe_name(region) + ".json");
    write_file(json_path, report.dump(2) + "\n");
    written.push_back(json_path);
  }
  return written;
}

}  // namespace noise
