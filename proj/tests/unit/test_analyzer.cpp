#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "model_fixtures.hpp"
#include "doctest.h"
#include "json.hpp"
#include "noise/analyzer.hpp"
#include "noise/sim.hpp"
#include "support.hpp"

using namespace noise;
using testing::error_code_of;

namespace {

TimingSeries series_of(std::initializer_list<std::pair<std::size_t, double>> pts, double spread = 0.0) {
  TimingSeries s;
  s.region_id = "r";
  s.mode = "fp_add64";
  for (auto [k, t] : pts) s.points.push_back({k, t, spread, 1});
  return s;
}

const std::vector<std::size_t> grid{0, 1, 2, 3, 4, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 90, 100};

// Least squares of the rising part written out by hand (Cramer's rule, long
// double): y - t0 = s2 * a + s3 * b for each point past k1.
struct Oracle {
  bool valid = false;
  long double sse = 0;
};

Oracle oracle_sse(const TimingSeries& s, std::size_t i, std::size_t j, double band) {
  const auto& p = s.points;
  const std::size_t last = p.size() - 1;
  const long double t0 = p[0].duration;
  const long double k1 = p[i].k, k2 = p[j].k;
  long double saa = 0, sab = 0, sbb = 0, say = 0, sby = 0, flat = 0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const long double k = p[n].k, y = p[n].duration - t0;
    if (n <= i) {
      const long double d = std::max<long double>(0, std::fabs(y) - band);
      flat += d * d;
      continue;
    }
    const long double a = std::min(k, k2) - k1, b = std::max<long double>(0, k - k2);
    saa += a * a;
    sab += a * b;
    sbb += b * b;
    say += a * y;
    sby += b * y;
  }
  long double s2 = 0, s3 = 0;
  if (i == j) {
    if (sbb > 0) s3 = sby / sbb;
  } else if (j == last) {
    if (saa > 0) s2 = say / saa;
  } else {
    const long double det = saa * sbb - sab * sab;
    if (det == 0) return {};
    s2 = (say * sbb - sby * sab) / det;
    s3 = (saa * sby - sab * say) / det;
    if (!(s3 > 0)) return {};
  }
  if (i == j && j < last && !(s3 > 0)) return {};
  if (i < j && s2 < 0) return {};
  long double sse = flat;
  for (std::size_t n = i + 1; n < p.size(); ++n) {
    const long double k = p[n].k;
    const long double model = s2 * (std::min(k, k2) - k1) + s3 * std::max<long double>(0, k - k2);
    const long double r = (p[n].duration - t0) - model;
    sse += r * r;
  }
  return {true, sse};
}

}  // namespace

TEST_CASE("fit on the ideal model") {
  IdealModelParams p;
  p.t0 = 5;
  p.k1 = 5;
  p.k2 = 10;
  p.slope_transient = 0.5;
  p.slope_saturated = 1.0;
  TimingSeries s;
  for (std::size_t k : {0, 1, 2, 3, 4, 5, 10, 15, 20}) s.points.push_back({k, simulate(p, k, 0), 0.0, 1});
  CHECK(s.points[7].duration == 12.5);
  const auto fit = fit_three_phase(s);
  CHECK(fit.k1 == 5);
  CHECK(fit.k2 == 10);
  CHECK(fit.t0 == 5.0);
  CHECK(fit.slope_transient == doctest::Approx(0.5));
  CHECK(fit.slope_saturated == doctest::Approx(1.0));
  CHECK(fit.sse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.absorption_raw == 5.0);
  CHECK(fit.saturation_observed);
}

TEST_CASE("fit degenerate series") {
  SUBCASE("constant") {
    const auto fit = fit_three_phase(series_of({{0, 100}, {5, 100}, {10, 100}}));
    CHECK(fit.k1 == 10);
    CHECK(fit.k2 == 10);
    CHECK_FALSE(fit.saturation_observed);
    CHECK(fit.slope_saturated == 0.0);
  }
  SUBCASE("rising from k=1") {
    const auto fit = fit_three_phase(series_of({{0, 100}, {1, 110}, {2, 120}, {3, 130}, {5, 150}}));
    CHECK(fit.k1 == 0);
    CHECK(fit.absorption_raw == 0.0);
  }
  SUBCASE("flat run with a late dip, cut off by the online stop") {
    // A falling transient segment must not explain the dip before the real rise.
    const auto fit = fit_three_phase(series_of({{0, 1005.8}, {1, 998.7}, {2, 1003.9}, {3, 1000.0}, {4, 994.7},
                                                {5, 995.7}, {10, 1001.5}, {15, 1008.1}, {20, 1000.4},
                                                {25, 1008.8}, {30, 1009.3}, {35, 1011.4}, {40, 1000.2},
                                                {45, 998.5}, {50, 997.5}, {60, 989.2}, {70, 1121.0},
                                                {80, 1241.2}, {90, 1360.3}},
                                               9.0));
    CHECK(fit.k1 == 60);
    CHECK(fit.slope_transient >= 0.0);
  }
  SUBCASE("errors") {
    CHECK(error_code_of([] { fit_three_phase(series_of({{0, 1}, {1, 2}})); }) == ErrorCode::TooFewPoints);
    CHECK(error_code_of([] { fit_three_phase(series_of({{1, 1}, {2, 2}, {3, 3}})); }) ==
          ErrorCode::InvalidArgument);
    CHECK(error_code_of([] { fit_three_phase(series_of({{0, 1}, {2, 2}, {2, 3}})); }) ==
          ErrorCode::InvalidArgument);
  }
}

TEST_CASE("fit SSE is the minimum over the breakpoint grid") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    TimingSeries s;
    const std::size_t n = 3 + rng() % 7;
    double t = 100;
    const double spread = trial % 3 == 0 ? 4.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s.points.push_back({grid[i], t, spread, 5});
      t += (u(rng) < 0.3 ? -5.0 : 20.0) * u(rng);
    }
    const double band = 0.5 * spread;
    long double best = std::numeric_limits<long double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        const auto o = oracle_sse(s, i, j, band);
        const auto c = evaluate_breakpoints(s, i, j);
        CAPTURE(trial);
        CAPTURE(i);
        CAPTURE(j);
        REQUIRE(o.valid == c.has_value());
        if (!o.valid) continue;
        CHECK(c->sse == doctest::Approx(static_cast<double>(o.sse)).epsilon(1e-9).scale(1e3));
        best = std::min(best, o.sse);
      }
    }
    const auto fit = fit_three_phase(s);
    CHECK(fit.sse == doctest::Approx(static_cast<double>(best)).epsilon(1e-9).scale(1e3));
    CHECK(fit.k1 <= fit.k2);
    CHECK(fit.k2 <= s.points.back().k);
    if (fit.k2 < s.points.back().k) CHECK(fit.slope_saturated > 0);
  }
}

TEST_CASE("fit recovers noiseless grid breakpoints") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = fixtures::random_instance(rng, grid, 0.0);
    const auto fit = fit_three_phase(fixtures::simulate_series(m, 1));
    CAPTURE(m.params.k1);
    CAPTURE(m.params.k2);
    CHECK(fit.k1 == m.schedule[m.k1_index]);
    CHECK(fit.k2 == m.schedule[m.k2_index]);
  }
}

TEST_CASE("relative payload and absorption") {
  CHECK(relative_payload(0, 20) == 0.0);
  CHECK(relative_payload(10, 20) == 0.5);
  CHECK(relative_payload(11, 22) == 0.5);
  CHECK(error_code_of([] { relative_payload(3, 0); }) == ErrorCode::ZeroLoopSize);

  // Equal rationals give identical doubles: IEEE division is correctly
  // rounded, so k/n and (k/g)/(n/g) must agree bit for bit.
  for (std::size_t n = 1; n <= 120; ++n) {
    for (std::size_t k = 0; k <= 240; ++k) {
      const std::size_t g = std::gcd(k, n);
      REQUIRE(relative_payload(static_cast<double>(k), n) ==
              relative_payload(static_cast<double>(k / g), n / g));
      // and unrolling by any factor changes nothing
      REQUIRE(relative_payload(static_cast<double>(3 * k), 3 * n) == relative_payload(static_cast<double>(k), n));
    }
  }

  AbsorptionFit fit;
  CHECK(relative_absorption(fit, 12) == 0.0);
  fit.absorption_raw = 11;
  CHECK(relative_absorption(fit, 22) == 0.5);
  AbsorptionFit unrolled = fit;
  unrolled.absorption_raw = 22;
  CHECK(relative_absorption(unrolled, 44) == relative_absorption(fit, 22));
  CHECK(error_code_of([&] { relative_absorption(fit, 0); }) == ErrorCode::ZeroLoopSize);

  // the fit fills absorption_rel from the series' loop size
  IdealModelParams p{5, 5, 10, 0.5, 1.0, 0, 0};
  TimingSeries s;
  s.loop_body_size = 20;
  for (std::size_t k : {0, 5, 10, 15}) s.points.push_back({k, simulate(p, k, 0), 0, 1});
  REQUIRE(fit_three_phase(s).absorption_rel.has_value());
  CHECK(*fit_three_phase(s).absorption_rel == 0.25);
}

TEST_CASE("classify reproduces the published labels") {
  struct Row {
    double fp, l1, mem;
    Bottleneck want;
    int rule;
  };
  const Row rows[] = {
      {65, 26, 0, Bottleneck::bandwidth_bound, 2},
      {250, 240, 15, Bottleneck::latency_bound, 1},
      {0, 13, 0, Bottleneck::compute_bound, 3},
      {0, 1, 0, Bottleneck::core_bound, 5},
      {11, 1, 0, Bottleneck::data_access_core_bound, 4},
  };
  for (const auto& r : rows) {
    const auto c = classify(r.fp, r.l1, r.mem);
    CHECK(c.label == r.want);
    CHECK(c.rule == r.rule);
    CHECK(c.abs_fp == r.fp);
  }
  CHECK(to_string(Bottleneck::data_access_core_bound) == "data-access-core-bound");
  CHECK(classify(3, 3, 0).label == Bottleneck::ambiguous);
  CHECK(classify(3, 3, 0).rule == 0);
  CHECK(error_code_of([] { classify(-1, 0, 0); }) == ErrorCode::InvalidArgument);

  Thresholds strict;
  strict.lat = 20;
  CHECK(classify(250, 240, 15, strict).label == Bottleneck::bandwidth_bound);
  CHECK(classify(250, 240, 15, strict).thresholds.lat == 20);
}

TEST_CASE("classify is monotone in abs_mem") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double fp = u(rng), l1 = u(rng);
    double mem = u(rng) / 4;
    bool reached = false;
    for (int step = 0; step < 20; ++step, mem += u(rng) / 10) {
      const bool lat = classify(fp, l1, mem).label == Bottleneck::latency_bound;
      if (reached) REQUIRE(lat);
      reached = reached || lat;
    }
  }
}

TEST_CASE("decan saturation") {
  CHECK(decan_saturation(81, 100) == 0.81);
  CHECK(decan_saturation(12, 100) == 0.12);
  CHECK(decan_saturation(7.25, 7.25) == 1.0);
  CHECK(error_code_of([] { decan_saturation(1, 0); }) == ErrorCode::ZeroReference);
  // c*a and c*b are exact integers, so both quotients round the same rational
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double a = static_cast<double>(rng() % 1000000);
    const double b = static_cast<double>(1 + rng() % 1000000);
    const double c = static_cast<double>(1 + rng() % 1000000);
    REQUIRE(decan_saturation(c * a, c * b) == decan_saturation(a, b));
  }
  CHECK(decan_saturation(0.81 * 3.5, 3.5) == doctest::Approx(0.81));
}

TEST_CASE("scenario interpretation") {
  CHECK(scenario_interpret(std::nullopt, std::nullopt, 0, 13) == Scenario::compute_bound);
  CHECK(scenario_interpret(std::nullopt, std::nullopt, 30, 0) == Scenario::data_bound);
  CHECK(scenario_interpret(0.81, 0.12, 0, 0) == Scenario::frontend_suspect);
  CHECK(scenario_interpret(0.98, 1.0, 0, 0) == Scenario::full_overlap);
  CHECK(scenario_interpret(std::nullopt, std::nullopt, 0, 1) == Scenario::full_overlap_or_frontend);
  CHECK(scenario_interpret(std::nullopt, std::nullopt, 30, 30) == Scenario::limited_overlap);
  CHECK(to_string(Scenario::frontend_suspect) == "frontend-suspect");
}

namespace {

ExperimentData two_mode_data() {
  ExperimentData d;
  d.plan_name = "unit";
  TimingSeries base;
  base.target = "t";
  base.region_id = "loop/a";
  base.mode = "baseline";
  base.loop_body_size = 12;
  base.points = {{0, 100, 2, 5}};
  d.baselines.push_back(base);
  const std::pair<const char*, IdealModelParams> modes[] = {
      {"fp_add64", {100, 5, 20, 2, 4, 0, 0}},
      {"memory_ld64", {100, 0, 10, 10, 20, 0, 0}},
  };
  for (const auto& [mode, p] : modes) {
    ModeRecord m;
    m.target = "t";
    m.region_id = "loop/a";
    m.mode = mode;
    TimingSeries s = base;
    s.mode = mode;
    s.points.clear();
    for (std::size_t k : {0, 1, 2, 3, 4, 5, 10, 15, 20, 25, 30}) s.points.push_back({k, simulate(p, k, 0), 2, 5});
    m.series.push_back(s);
    m.stopped_online = true;
    m.stop_k = 30;
    d.modes.push_back(m);
  }
  d.failures.push_back({"t", "l1_ld64", 4, "BuildFailure", "assembler exited with 1"});
  return d;
}

}  // namespace

TEST_CASE("emit_report") {
  SUBCASE("empty data") {
    const auto dir = testing::scratch("report_empty");
    CHECK(emit_report({}, dir).empty());
    CHECK(std::filesystem::is_empty(dir));
  }
  SUBCASE("one region, two modes") {
    const auto dir = testing::scratch("report_two");
    const auto paths = emit_report(two_mode_data(), dir);
    REQUIRE(paths.size() == 3);
    std::vector<std::string> names;
    for (const auto& p : paths) names.push_back(p.filename().string());
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"loop_a.json", "loop_a_fp_add64.csv", "loop_a_memory_ld64.csv"});

    const auto csv = testing::slurp(dir / "loop_a_fp_add64.csv");
    CHECK(csv.rfind("class,k,relative_payload,duration_ns,iqr_ns\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);

    const auto j = nlohmann::json::parse(testing::slurp(dir / "loop_a.json"));
    for (const char* key : {"region", "target", "label", "thresholds", "classifications", "fits", "audits", "failures"}) {
      CHECK_MESSAGE(j.contains(key), key);
    }
    CHECK(j["region"] == "loop/a");
    REQUIRE(j["fits"].size() == 2);
    for (const auto& f : j["fits"]) {
      for (const char* key : {"region", "mode", "class", "t0", "k1", "k2", "absorption_raw", "absorption_rel"}) {
        CHECK_MESSAGE(f.contains(key), key);
      }
    }
    CHECK(j["fits"][0]["k1"] == 5);
    CHECK(j["fits"][0]["absorption_rel"].get<double>() == doctest::Approx(5.0 / 12));
    CHECK(j["fits"][1]["k1"] == 0);
    // l1_ld64 failed, so no label can be assigned
    REQUIRE(j["classifications"].size() == 1);
    CHECK(j["classifications"][0]["label"].is_null());
    CHECK(j["classifications"][0]["missing_modes"] == nlohmann::json::array({"l1_ld64"}));
    CHECK(j["failures"].size() == 1);

    const auto golden = testing::data_dir() / "golden" / "report";
    for (const auto& n : names) {
      CAPTURE(n);
      CHECK(testing::slurp(dir / n) == testing::slurp(golden / n));
    }
  }
  SUBCASE("re-emission is byte-identical") {
    const auto a = testing::scratch("report_a");
    const auto b = testing::scratch("report_b");
    const auto pa = emit_report(two_mode_data(), a);
    const auto pb = emit_report(two_mode_data(), b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].filename() == pb[i].filename());
      CHECK(testing::slurp(pa[i]) == testing::slurp(pb[i]));
    }
  }
}

TEST_CASE("experiment json round trip") {
  const auto d = two_mode_data();
  const auto text = to_json_text(d);
  CHECK(to_json_text(experiment_from_json_text(text)) == text);
  CHECK(error_code_of([] { experiment_from_json_text("{not json"); }) == ErrorCode::InvalidArgument);
  const auto dir = testing::scratch("experiment_json");
  save_experiment(d, dir / "e.json");
  CHECK(to_json_text(load_experiment(dir / "e.json")) == text);
  CHECK(error_code_of([&] { load_experiment(dir / "missing.json"); }) == ErrorCode::IoFailure);
}
