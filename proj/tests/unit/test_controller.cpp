#include <algorithm>
#include <random>

#include "doctest.h"
#include "noise/analyzer.hpp"
#include "noise/build_config.hpp"
#include "noise/controller.hpp"
#include "noise/process.hpp"
#include "support.hpp"

using namespace noise;
using testing::error_code_of;
namespace fs = std::filesystem;

namespace {

TimingSeries series_from(std::vector<double> durations) {
  TimingSeries s;
  std::size_t k = 0;
  for (double d : durations) s.points.push_back({k++, d, 0.0, 1});
  return s;
}

// Brute force: class boundaries are exactly the sorted neighbours whose
// relative gap exceeds the threshold.
std::vector<std::vector<double>> oracle_partition(std::vector<double> v, double gap) {
  std::sort(v.begin(), v.end());
  std::vector<std::vector<double>> out{{v[0]}};
  for (std::size_t i = 1; i < v.size(); ++i) {
    if ((v[i] - v[i - 1]) / v[i - 1] > gap) out.emplace_back();
    out.back().push_back(v[i]);
  }
  return out;
}

std::vector<std::size_t> class_sizes(const std::vector<PerformanceClass>& cs) {
  std::vector<std::size_t> out;
  for (const auto& c : cs) out.push_back(c.members.size());
  return out;
}

const char* sim_plan = R"(
name = "sim"
[run]
kind = "simulated"
[run.model]
t0 = 100.0
k1 = 5
k2 = 20
slope_transient = 3.0
slope_saturated = 5.0
sigma = 0.0
[[target]]
name = "t"
region = "loop"
loop_body_size = 10
[noise]
modes = ["fp_add64"]
repetitions = 3
[stop]
k_max = 60
)";

}  // namespace

TEST_CASE("default k schedule") {
  CHECK(default_k_schedule(100) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 10, 15, 20, 25, 30, 35, 40, 45,
                                                            50, 60, 70, 80, 90, 100});
  CHECK(default_k_schedule(12) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 10});
}

TEST_CASE("plan parsing") {
  SUBCASE("defaults") {
    const auto p = parse_plan("name = \"x\"\n[[target]]\nname = \"a\"\nregion = \"r\"\nsources = [\"a.c\"]\n", "/base");
    CHECK(p.name == "x");
    CHECK(p.repetitions == 5);
    CHECK(p.stop.delta == 0.2);
    CHECK(p.stop.m == 2);
    CHECK(p.gap_threshold == 0.2);
    CHECK(p.statistic == Statistic::median);
    CHECK(p.k_schedule == default_k_schedule(p.stop.k_max));
    CHECK(p.modes.empty());
    REQUIRE(p.targets.size() == 1);
    CHECK(p.targets[0].sources[0] == fs::path("/base/a.c"));
    CHECK(p.build.workdir == fs::path("/base/work"));
  }
  SUBCASE("simulated plan with per-mode models") {
    const auto p = parse_plan(std::string(sim_plan) + "[target.models.fp_add64]\nk1 = 15\n");
    CHECK(p.run.kind == RunSpec::Kind::simulated);
    CHECK(p.run.model.k2 == 20);
    // per-mode tables start from the plan's model
    CHECK(p.targets[0].mode_models.at("fp_add64").k1 == 15);
    CHECK(p.targets[0].mode_models.at("fp_add64").k2 == 20);
  }
  SUBCASE("errors") {
    const std::vector<std::string> bad = {
        "nmae = \"typo\"",
        "[run]\nkind = \"remote\"",
        "[noise]\nk_schedule = [1, 2, 3]",
        "[noise]\nk_schedule = [0, 5, 5]",
        "[noise]\nrepetitions = 0",
        "[noise]\nmodes = [\"vector_fma\"]",
        "[noise]\nstatistic = \"mode\"",
        "[stop]\ndelta = 0.0",
        "[stop]\nm = 0",
        "[[target]]\nname = \"a\"\nsources = [\"a.c\"]",
        "this is not toml",
    };
    for (const auto& text : bad) {
      CAPTURE(text);
      CHECK(error_code_of([&] { parse_plan(text).validate(); }) == ErrorCode::PlanError);
    }
    CHECK(error_code_of([] { load_plan("/nonexistent/plan.toml"); }) == ErrorCode::PlanError);
  }
}

TEST_CASE("cluster_samples") {
  SUBCASE("examples") {
    auto one = cluster_samples(std::vector<double>{100, 101, 99});
    REQUIRE(one.size() == 1);
    CHECK(one[0].representative == 100);

    auto two = cluster_samples(std::vector<double>{100, 101, 99, 500, 505}, 0.2);
    REQUIRE(two.size() == 2);
    CHECK(two[0].representative == 100);
    CHECK(two[1].representative == 502.5);
    CHECK(two[0].class_id == 0);
    CHECK(two[1].class_id == 1);

    auto single = cluster_samples(std::vector<double>{42});
    REQUIRE(single.size() == 1);
    CHECK(single[0].members == std::vector<double>{42});

    auto mean = cluster_samples(std::vector<double>{1, 2, 6}, 10.0, Statistic::mean);
    CHECK(mean[0].representative == 3);
  }
  SUBCASE("matches the brute-force partition, permutation and scale invariant") {
    std::mt19937_64 rng(17);
    std::lognormal_distribution<double> dist(4.0, 0.6);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> v(1 + rng() % 30);
      for (auto& x : v) x = std::round(dist(rng));
      for (auto& x : v) x = std::max(1.0, x);
      const auto want = oracle_partition(v, 0.2);
      const auto got = cluster_samples(v, 0.2);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].members == want[i]);

      auto shuffled = v;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      CHECK(class_sizes(cluster_samples(shuffled, 0.2)) == class_sizes(got));

      // powers of two scale exactly, so every relative gap is unchanged
      const double c = std::ldexp(1.0, static_cast<int>(rng() % 20) - 10);
      auto scaled = v;
      for (auto& x : scaled) x *= c;
      CHECK(class_sizes(cluster_samples(scaled, 0.2)) == class_sizes(got));
    }
  }
}

TEST_CASE("online_stop") {
  CHECK_FALSE(online_stop(series_from({100, 100, 100, 100, 100, 100}), 0.2, 2));
  CHECK(online_stop(series_from({100, 130, 140}), 0.2, 2));
  CHECK_FALSE(online_stop(series_from({100, 130, 100}), 0.2, 2));
  CHECK_FALSE(online_stop(series_from({100, 130}), 0.2, 2));
  CHECK(online_stop(series_from({100, 140, 130}), 0.2, 2));  // a plateau above the limit
  CHECK_FALSE(online_stop(series_from({100, 140, 120}), 0.2, 2));  // 120 is not above 1.2 x
  CHECK(online_stop(series_from({100, 130}), 0.2, 1));

  // Fires within m points of the series crossing for good, never before.
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng() % 3;
    const std::size_t cross = 1 + rng() % 10;
    std::vector<double> d{100};
    for (std::size_t i = 1; i < cross; ++i) d.push_back(100 + 19 * u(rng));
    // above the limit for good, but not necessarily rising
    for (std::size_t i = 0; i < 10; ++i) d.push_back(121 + 60 * u(rng));
    std::optional<std::size_t> fired;
    for (std::size_t n = 1; n <= d.size(); ++n) {
      if (online_stop(series_from({d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n)}), 0.2, m)) {
        fired = n - 1;
        break;
      }
    }
    REQUIRE(fired.has_value());
    CHECK(*fired >= cross);
    CHECK(*fired <= cross + m - 1);
  }
}

TEST_CASE("probe sample files") {
  const auto dir = testing::scratch("probe_csv");
  testing::spit(dir / "a.csv", "region_id,thread_id,sample_index,duration_ns\nr,0,0,10\nq,0,0,99\nr,1,0,12.5\n");
  CHECK(read_probe_samples(dir / "a.csv", "r") == std::vector<double>{10, 12.5});
  testing::spit(dir / "b.csv", "region,thread\n");
  CHECK(error_code_of([&] { read_probe_samples(dir / "b.csv", "r"); }) == ErrorCode::IoFailure);
  CHECK(error_code_of([&] { read_probe_samples(dir / "none.csv", "r"); }) == ErrorCode::IoFailure);
}

TEST_CASE("process helpers") {
  CHECK(expand_template("{a}-{b}", {{"a", "1"}, {"b", "x y"}}) == "1-x y");
  CHECK(error_code_of([] { expand_template("{missing}", {}); }) == ErrorCode::PlanError);
  const auto r = run_shell("echo \"$NOISE_X\" && echo err >&2 && exit 3", {{"NOISE_X", "it's"}});
  CHECK(r.exit_code == 3);
  CHECK(r.output == "it's\nerr\n");
  CHECK(run_shell("echo " + shell_quote("a'b c")).output == "a'b c\n");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

namespace {

struct RebuildFixture {
  fs::path dir;
  TargetSpec target;
  BuildRecipe recipe;

  explicit RebuildFixture(const std::string& name) : dir(testing::scratch(name)) {
    testing::spit(dir / "main.c",
                  "#include \"noise/marker.h\"\n"
                  "#include <stdio.h>\n"
                  "long sum(const long* v, long n);\n"
                  "long scale(long x);\n"
                  "int main(void) {\n"
                  "  long v[64];\n"
                  "  for (long i = 0; i < 64; ++i) v[i] = scale(i);\n"
                  "  NOISE_REGION_BEGIN(\"sum\");\n"
                  "  long s = sum(v, 64);\n"
                  "  NOISE_REGION_END(\"sum\");\n"
                  "  printf(\"%ld\\n\", s);\n"
                  "  return 0;\n"
                  "}\n");
    testing::spit(dir / "sum.c",
                  "#include \"noise/marker.h\"\n"
                  "long sum(const long* v, long n) {\n"
                  "  long s = 0;\n"
                  "  for (long i = 0; i < n; ++i) {\n"
                  "    NOISE_ANCHOR(sum);\n"
                  "    s += v[i];\n"
                  "  }\n"
                  "  return s;\n"
                  "}\n");
    write_scale(3);
    target.name = "prog";
    target.region_id = "sum";
    target.sources = {dir / "main.c", dir / "sum.c", dir / "scale.c"};
    const std::string cc = build_config::c_compiler;
    recipe.emit_asm = cc + " -O2 -fno-unroll-loops -S {in} -o {out} -I{include}";
    recipe.assemble = cc + " -c {in} -o {out}";
    recipe.link = std::string(build_config::cxx_compiler) + " {in} {runtime} -o {out} -pthread";
    recipe.workdir = dir / "work";
    recipe.include_dir = build_config::include_dir;
    recipe.runtime = build_config::probe_runtime;
  }

  void write_scale(int factor) {
    testing::spit(dir / "scale.c", "long scale(long x) { return x * " + std::to_string(factor) + "; }\n");
  }
};

std::vector<std::string> summary(const Builder::Output& out) {
  std::vector<std::string> s;
  for (const auto& a : out.actions) s.push_back(std::string(to_string(a.kind)) + " " + a.file);
  return s;
}

std::string run_exe(const fs::path& exe) {
  const auto r = run_shell(shell_quote(exe.string()), {{"NOISE_PROBE_NO_AUTODUMP", "1"}});
  REQUIRE_MESSAGE(r.ok(), r.output);
  return r.output;
}

}  // namespace

TEST_CASE("selective rebuild") {
  RebuildFixture f("rebuild");
  Builder b(f.recipe);
  const auto exe = f.dir / "bin" / "prog";

  const auto full = b.build(f.target, std::nullopt, exe);
  CHECK(summary(full) == std::vector<std::string>{"emit main.c", "emit sum.c", "emit scale.c",
                                                  "assemble main.c", "assemble sum.c",
                                                  "assemble scale.c", "link prog"});
  CHECK(run_exe(exe) == "6048\n");
  CHECK_FALSE(full.report.has_value());
  REQUIRE(full.site.has_value());
  CHECK(full.site->region_id == "sum");

  // nothing changed: relink only
  CHECK(summary(b.build(f.target, std::nullopt, exe)) == std::vector<std::string>{"link prog"});

  // one of three files changed
  f.write_scale(5);
  CHECK(summary(b.build(f.target, std::nullopt, exe)) ==
        std::vector<std::string>{"emit scale.c", "assemble scale.c", "link prog"});
  CHECK(run_exe(exe) == "10080\n");

  // a new (mode, k) only reassembles the anchored file
  const auto noised = b.build(f.target, Injection{"int64_add", 8}, exe);
  CHECK(summary(noised) == std::vector<std::string>{"assemble sum.c", "link prog"});
  REQUIRE(noised.report.has_value());
  CHECK(noised.report->payload_count == 8);
  CHECK(run_exe(exe) == "10080\n");
  CHECK(summary(b.build(f.target, Injection{"int64_add", 8}, exe)) == std::vector<std::string>{"link prog"});
}

TEST_CASE("cache loss and corruption fall back to a full rebuild") {
  RebuildFixture f("cache");
  Builder b(f.recipe);
  const auto exe = f.dir / "bin" / "prog";
  b.build(f.target, Injection{"fp_add64", 4}, exe);
  const auto first_hash = sha256_hex(testing::slurp(exe));

  SUBCASE("deleted") {
    fs::remove_all(b.cache_dir());
    const auto again = b.build(f.target, Injection{"fp_add64", 4}, exe);
    CHECK(again.actions.size() == 7);
    CHECK(sha256_hex(testing::slurp(exe)) == first_hash);
  }
  SUBCASE("corrupted object") {
    for (const auto& e : fs::directory_iterator(b.cache_dir())) {
      if (e.path().extension() == ".o") {
        testing::spit(e.path(), "garbage");
        break;
      }
    }
    const auto again = b.build(f.target, Injection{"fp_add64", 4}, exe);
    CHECK(again.actions.size() == 7);
    CHECK(sha256_hex(testing::slurp(exe)) == first_hash);
  }
  SUBCASE("missing checksum sidecar") {
    for (const auto& e : fs::directory_iterator(b.cache_dir())) {
      if (e.path().extension() == ".sha256") {
        fs::remove(e.path());
        break;
      }
    }
    CHECK(b.build(f.target, Injection{"fp_add64", 4}, exe).actions.size() == 7);
  }
}

TEST_CASE("build errors") {
  RebuildFixture f("build_errors");
  SUBCASE("missing anchor") {
    f.target.region_id = "nowhere";
    Builder b(f.recipe);
    CHECK(error_code_of([&] { b.build(f.target, std::nullopt, f.dir / "x"); }) == ErrorCode::AnchorMissing);
  }
  SUBCASE("failing compiler") {
    testing::spit(f.dir / "scale.c", "this is not C\n");
    Builder b(f.recipe);
    CHECK(error_code_of([&] { b.build(f.target, std::nullopt, f.dir / "x"); }) == ErrorCode::BuildFailure);
  }
  SUBCASE("same region in two files") {
    testing::spit(f.dir / "scale.c",
                  "#include \"noise/marker.h\"\nlong scale(long x) { for (long i = 0; i < x; ++i) "
                  "{ NOISE_ANCHOR(sum); __asm__ volatile(\"\"); } return x * 3; }\n");
    Builder b(f.recipe);
    CHECK(error_code_of([&] { b.build(f.target, std::nullopt, f.dir / "x"); }) ==
          ErrorCode::DuplicateRegionId);
  }
}

TEST_CASE("simulated experiments") {
  SUBCASE("no modes gives baselines only") {
    auto plan = parse_plan(std::string(sim_plan) + "");
    plan.modes.clear();
    const auto data = run_experiment(plan, testing::scratch("sim_empty"));
    CHECK(data.modes.empty());
    REQUIRE(data.baselines.size() == 1);
    CHECK(data.baselines[0].points.size() == 1);
    CHECK(data.baselines[0].points[0].k == 0);
    CHECK(data.baselines[0].points[0].duration == 100);
  }
  SUBCASE("noiseless series is flat through k1 then rises and stops") {
    const auto plan = parse_plan(sim_plan);
    const auto out = testing::scratch("sim_flat");
    const auto data = run_experiment(plan, out);
    REQUIRE(data.modes.size() == 1);
    const auto& rec = data.modes[0];
    REQUIRE(rec.series.size() == 1);
    const auto& pts = rec.series[0].points;
    CHECK(pts.front().k == 0);
    for (const auto& p : pts) {
      if (p.k <= 5) CHECK(p.duration == 100);
      else CHECK(p.duration > 100);
      CHECK(p.samples == 3);
    }
    // 1.2 x 100 is first exceeded at k=15 (130), confirmed at k=20 (145)
    CHECK(rec.stopped_online);
    CHECK(rec.stop_k == 20);
    CHECK(pts.back().k == 20);
    CHECK(fit_three_phase(rec.series[0]).k1 == 5);
    CHECK(fs::exists(out / "raw" / "t" / "fp_add64" / "k15" / "rep2.csv"));
    CHECK(fs::exists(out / "raw" / "t" / "baseline" / "k0" / "rep0.csv"));
    CHECK(fs::exists(out / "experiment.json"));
    CHECK(fs::exists(out / "reports" / "loop.json"));
  }
  SUBCASE("byte-identical reruns") {
    auto text = std::string(sim_plan);
    text.replace(text.find("sigma = 0.0"), 11, "sigma = 0.02\nseed = 99");
    const auto plan = parse_plan(text);
    const auto a = testing::scratch("sim_det_a");
    const auto b = testing::scratch("sim_det_b");
    run_experiment(plan, a);
    run_experiment(plan, b);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    }
    CHECK(files.size() > 10);
    for (const auto& f : files) {
      CAPTURE(f.string());
      CHECK(testing::slurp(a / f) == testing::slurp(b / f));
    }
  }
  SUBCASE("bimodal runs produce two classes") {
    auto text = std::string(sim_plan);
    text.replace(text.find("[run.model]"), 11, "samples_per_run = 4\nclass_scales = [1.0, 2.0]\n[run.model]");
    const auto data = run_experiment(parse_plan(text), testing::scratch("sim_bimodal"));
    REQUIRE(data.baselines.size() == 2);
    CHECK(data.baselines[1].points[0].duration == 200);
    REQUIRE(data.modes[0].series.size() == 2);
    CHECK(data.modes[0].series[1].class_id == 1);
  }
}

TEST_CASE("crashing baseline stops before any injection") {
  RebuildFixture f("crash");
  testing::spit(f.dir / "scale.c", "#include <stdlib.h>\nlong scale(long x) { if (x == 7) abort(); return x; }\n");
  std::string plan_text = "name = \"crash\"\n[build]\nworkdir = \"work\"\nemit_asm = \"" + f.recipe.emit_asm +
                          "\"\nassemble = \"" + f.recipe.assemble + "\"\nlink = \"" + f.recipe.link +
                          "\"\n[[target]]\nname = \"prog\"\nregion = \"sum\"\n"
                          "sources = [\"main.c\", \"sum.c\", \"scale.c\"]\n"
                          "[noise]\nmodes = [\"fp_add64\", \"int64_add\"]\nrepetitions = 2\n";
  const auto plan = parse_plan(plan_text, f.dir);
  std::vector<std::string> log;
  RunOptions opts;
  opts.log = [&](const std::string& line) { log.push_back(line); };
  const auto out = f.dir / "out";
  CHECK(error_code_of([&] { run_experiment(plan, out, opts); }) == ErrorCode::RunFailure);
  CHECK_FALSE(fs::exists(out / "raw" / "prog" / "fp_add64"));
  CHECK_FALSE(fs::exists(out / "raw" / "prog" / "int64_add"));
  for (const auto& line : log) CHECK(line.find("k=") == std::string::npos);
}

TEST_CASE("command experiment on a real program") {
  RebuildFixture f("command");
  std::string plan_text = "name = \"cmd\"\n[build]\nemit_asm = \"" + f.recipe.emit_asm + "\"\nassemble = \"" +
                          f.recipe.assemble + "\"\nlink = \"" + f.recipe.link +
                          "\"\n[[target]]\nname = \"prog\"\nregion = \"sum\"\n"
                          "sources = [\"main.c\", \"sum.c\", \"scale.c\"]\n"
                          "[noise]\nmodes = [\"int64_add\", \"l1_ld64\"]\nk_schedule = [0, 1, 4]\n"
                          "repetitions = 2\n[stop]\ndelta = 1000.0\n";
  const auto plan = parse_plan(plan_text, f.dir);
  const auto out = f.dir / "out";
  const auto data = run_experiment(plan, out);
  CHECK(data.failures.empty());
  REQUIRE(data.modes.size() == 2);
  for (const auto& m : data.modes) {
    REQUIRE(m.series.size() >= 1);
    CHECK(m.series[0].points.size() == 3);
    CHECK(m.audits.size() == 3);
    CHECK(m.audits.back().payload_count == 4);
    CHECK(m.series[0].loop_body_size > 0);
  }
  CHECK(fs::exists(out / "raw" / "prog" / "l1_ld64" / "k4" / "rep1.csv"));
  CHECK(fs::exists(out / "raw" / "prog" / "l1_ld64" / "k4" / "audit.json"));
}
