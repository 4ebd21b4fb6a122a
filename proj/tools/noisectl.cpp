// noisectl: command-line front end for injection, experiments and analysis.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "noise/analyzer.hpp"
#include "noise/asm_text.hpp"
#include "noise/bench.hpp"
#include "noise/build_config.hpp"
#include "noise/controller.hpp"
#include "noise/error.hpp"
#include "noise/injector.hpp"
#include "noise/patterns.hpp"
#include "noise/process.hpp"
#include "noise/stats.hpp"
#include "toml.hpp"

#include "bench_recipe.hpp"

namespace fs = std::filesystem;
using noise::Error;
using noise::ErrorCode;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::PlanError: return 2;
    case ErrorCode::BuildFailure:
    case ErrorCode::AnchorMissing:
    case ErrorCode::AnchorOutsideLoop:
    case ErrorCode::DuplicateRegionId:
    case ErrorCode::MalformedAssembly:
    case ErrorCode::RegisterPressureTooHigh:
    case ErrorCode::InsufficientRegisterPool:
    case ErrorCode::UnsupportedIsa:
    case ErrorCode::AuditMismatch:
    case ErrorCode::CacheCorrupt: return 3;
    case ErrorCode::RunFailure:
    case ErrorCode::ChecksumMismatch: return 4;
    default: return 1;
  }
}

noise::Thresholds load_thresholds(const std::string& path) {
  noise::Thresholds t;
  if (path.empty()) return t;
  toml::table root;
  try {
    root = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::PlanError, path + ": " + std::string(e.description()));
  }
  const toml::table* tt = root.get("thresholds") ? root.get("thresholds")->as_table() : &root;
  if (tt == nullptr) throw Error(ErrorCode::PlanError, "[thresholds] must be a table");
  for (const auto& [key, node] : *tt) {
    auto v = node.value<double>();
    if (!v) throw Error(ErrorCode::PlanError, "threshold '" + std::string(key.str()) + "' must be a number");
    if (key == "lat") {
      t.lat = *v;
    } else if (key == "data") {
      t.data = *v;
    } else if (key == "mid") {
      t.mid = *v;
    } else if (key == "core") {
      t.core = *v;
    } else {
      throw Error(ErrorCode::PlanError, "unknown threshold '" + std::string(key.str()) + "'");
    }
  }
  return t;
}

// --- inject ---------------------------------------------------------------

struct InjectArgs {
  std::string asm_path, region, mode, isa, out, report;
  std::size_t k = 0;
};

int cmd_inject(const InjectArgs& a) {
  const std::string text = read_file(a.asm_path);
  std::optional<noise::Isa> isa;
  if (!a.isa.empty()) isa = noise::parse_isa(a.isa);
  const auto sites = noise::locate_anchors(text, fs::path(a.asm_path).filename().string(), isa);
  const noise::InjectionSite* site = nullptr;
  for (const auto& s : sites) {
    if (s.region_id == a.region) site = &s;
  }
  if (site == nullptr) throw Error(ErrorCode::AnchorMissing, "no anchor '" + a.region + "' in " + a.asm_path);
  const noise::Isa use = isa.value_or(noise::detect_isa(text));
  const auto pattern = noise::make_pattern(a.mode, use);
  const auto result = noise::inject(text, *site, pattern, a.k);
  const auto report = noise::audit(text, result.text, *site, a.k, pattern);
  write_file(a.out, result.text);
  if (!a.report.empty()) write_file(a.report, noise::to_json_text(report));
  std::printf("%s: %zu payload, %zu overhead instructions (%s)\n", a.region.c_str(),
              report.payload_count, report.overhead_count,
              report.spill_inserted ? "spill inserted" : "no spill");
  return 0;
}

// --- run ------------------------------------------------------------------

int cmd_run(const std::string& plan_path, const std::string& out, bool reports, bool quiet) {
  const auto plan = noise::load_plan(plan_path);
  noise::RunOptions opts;
  opts.emit_reports = reports;
  if (!quiet) opts.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
  const auto data = noise::run_experiment(plan, out, opts);
  for (const auto& f : data.failures) {
    std::fprintf(stderr, "failure: %s/%s at k=%zu: %s\n", f.target.c_str(), f.mode.c_str(), f.k,
                 f.message.c_str());
  }
  std::printf("%zu baseline series, %zu mode records, %zu failures -> %s\n", data.baselines.size(),
              data.modes.size(), data.failures.size(), out.c_str());
  return 0;
}

// --- analyze / report -----------------------------------------------------

fs::path experiment_file(const fs::path& in) {
  return fs::is_directory(in) ? in / "experiment.json" : in;
}

int cmd_analyze(const std::string& in, const std::string& out, const std::string& thresholds,
                double band) {
  const auto data = noise::load_experiment(experiment_file(in));
  noise::FitOptions fo;
  fo.band_iqr_fraction = band;
  const auto paths = noise::emit_report(data, out, load_thresholds(thresholds), fo);
  for (const auto& p : paths) std::printf("%s\n", p.string().c_str());
  return 0;
}

int cmd_report(const std::string& in, const std::string& format, const std::string& thresholds,
               double band) {
  const auto data = noise::load_experiment(experiment_file(in));
  const auto t = load_thresholds(thresholds);
  noise::FitOptions fo;
  fo.band_iqr_fraction = band;
  struct Row {
    std::string region, mode;
    int cls;
    noise::AbsorptionFit fit;
  };
  std::vector<Row> rows;
  std::map<std::pair<std::string, int>, std::map<std::string, double>> abs;
  for (const auto& m : data.modes) {
    for (const auto& s : m.series) {
      try {
        rows.push_back({m.region_id, m.mode, s.class_id, noise::fit_three_phase(s, fo)});
        abs[{m.region_id, s.class_id}][m.mode] = rows.back().fit.absorption_raw;
      } catch (const Error& e) {
        std::fprintf(stderr, "%s/%s class %d: %s\n", m.region_id.c_str(), m.mode.c_str(), s.class_id, e.what());
      }
    }
  }
  auto label_of = [&](const std::string& region, int cls) -> std::string {
    const auto& a = abs[{region, cls}];
    if (!a.count("fp_add64") || !a.count("l1_ld64") || !a.count("memory_ld64")) return "";
    return std::string(noise::to_string(
        noise::classify(a.at("fp_add64"), a.at("l1_ld64"), a.at("memory_ld64"), t).label));
  };
  if (format == "csv") {
    std::printf("region,mode,class,t0,k1,k2,absorption_raw,absorption_rel,label\n");
    for (const auto& r : rows) {
      std::printf("%s,%s,%d,%.17g,%zu,%zu,%.17g,", r.region.c_str(), r.mode.c_str(), r.cls, r.fit.t0,
                  r.fit.k1, r.fit.k2, r.fit.absorption_raw);
      if (r.fit.absorption_rel) std::printf("%.17g", *r.fit.absorption_rel);
      std::printf(",%s\n", label_of(r.region, r.cls).c_str());
    }
  } else {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      const std::string label = label_of(r.region, r.cls);
      arr.push_back({{"region", r.region},
                     {"mode", r.mode},
                     {"class", r.cls},
                     {"t0", r.fit.t0},
                     {"k1", r.fit.k1},
                     {"k2", r.fit.k2},
                     {"absorption_raw", r.fit.absorption_raw},
                     {"absorption_rel", r.fit.absorption_rel ? nlohmann::ordered_json(*r.fit.absorption_rel)
                                                             : nlohmann::ordered_json(nullptr)},
                     {"label", label.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(label)}});
    }
    std::printf("%s\n", arr.dump(2).c_str());
  }
  return 0;
}

// --- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string kernel, plan, out = "bench-out", mode, config = "small", extra;
  std::size_t k = 0, size = 0, iters = 5, nnz = 16;
  double q = 0.0;
  unsigned threads = 1;
};

std::string bench_run_args(const BenchArgs& a) {
  std::ostringstream s;
  s << " --iters " << a.iters << " --threads " << a.threads;
  if (a.size) s << " --size " << a.size;
  if (a.kernel == "spmxv") s << " --q " << a.q << " --nnz " << a.nnz << " --config " << a.config;
  if (!a.extra.empty()) s << " " << a.extra;
  return s.str();
}

int cmd_bench(const BenchArgs& a) {
  using noise::tools::bench_recipe;
  using noise::tools::bench_target;
  bool known = false;
  for (auto n : noise::bench::kernel_names) known |= (n == a.kernel);
  if (!known) throw Error(ErrorCode::PlanError, "unknown kernel '" + a.kernel + "'");
  const fs::path out = fs::absolute(a.out);

  if (!a.plan.empty()) {
    noise::ExperimentPlan plan = noise::load_plan(a.plan);
    plan.build = bench_recipe(out / "work");
    plan.run.kind = noise::RunSpec::Kind::command;
    plan.run.command = "{exe}" + bench_run_args(a);
    plan.targets = {bench_target(a.kernel)};
    plan.validate();
    noise::RunOptions opts;
    opts.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
    const auto data = noise::run_experiment(plan, out, opts);
    std::printf("%zu mode records, %zu failures -> %s\n", data.modes.size(), data.failures.size(),
                out.string().c_str());
    return 0;
  }

  noise::Builder builder(bench_recipe(out / "work"));
  std::optional<noise::Injection> inj;
  if (!a.mode.empty()) inj = noise::Injection{a.mode, a.k};
  const auto built = builder.build(bench_target(a.kernel), inj, out / "work" / "bin" / a.kernel);
  const fs::path csv = out / "samples.csv";
  const auto r = noise::run_shell(noise::shell_quote(built.exe.string()) + bench_run_args(a),
                                  {{"NOISE_PROBE_OUT", csv.string()}});
  std::fwrite(r.output.data(), 1, r.output.size(), stdout);
  if (!r.ok()) throw Error(ErrorCode::RunFailure, "kernel exited with " + std::to_string(r.exit_code));
  const auto samples = noise::read_probe_samples(csv, a.kernel);
  if (!samples.empty()) {
    const auto s = noise::summarize(samples);
    std::printf("median_ns %.0f\niqr_ns %.0f\nsamples %zu\n", s.median, s.iqr(), samples.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-injection bottleneck analysis"};
  app.require_subcommand(1);

  InjectArgs ia;
  auto* inject = app.add_subcommand("inject", "Inject a noise payload at one anchor");
  inject->add_option("--asm", ia.asm_path, "Input assembly")->required();
  inject->add_option("--region", ia.region, "Anchor id")->required();
  inject->add_option("--mode", ia.mode, "Noise mode")->required();
  inject->add_option("--k", ia.k, "Noise quantity")->required();
  inject->add_option("--isa", ia.isa, "x86_64 or aarch64 (default: detect)");
  inject->add_option("--out", ia.out, "Output assembly")->required();
  inject->add_option("--report", ia.report, "Injection report (JSON)");

  std::string plan, out, in, thresholds, format = "json";
  bool no_report = false, quiet = false;
  double band = noise::FitOptions{}.band_iqr_fraction;
  auto* run = app.add_subcommand("run", "Run an experiment plan");
  run->add_option("--plan", plan, "Plan file (TOML)")->required();
  run->add_option("--out", out, "Results directory")->required();
  run->add_flag("--no-report", no_report, "Skip writing reports/");
  run->add_flag("--quiet", quiet, "No progress output");

  auto* analyze = app.add_subcommand("analyze", "Fit, classify and write reports");
  analyze->add_option("--in", in, "Results directory or experiment.json")->required();
  analyze->add_option("--out", out, "Report directory")->required();
  analyze->add_option("--thresholds", thresholds, "Classification thresholds (TOML)");
  analyze->add_option("--band", band, "Flat-phase band as a fraction of the baseline IQR");

  auto* report = app.add_subcommand("report", "Print fitted absorptions");
  report->add_option("--in", in, "Results directory or experiment.json")->required();
  report->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  report->add_option("--thresholds", thresholds, "Classification thresholds (TOML)");
  report->add_option("--band", band, "Flat-phase band as a fraction of the baseline IQR");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Build and run a bundled kernel");
  bench->add_option("--kernel", ba.kernel, "triad, dependent_load_chain, fp_chain, dense_matmul or spmxv")
      ->required();
  bench->add_option("--plan", ba.plan, "Run a full experiment with this plan's noise settings");
  bench->add_option("--out", ba.out, "Output directory");
  bench->add_option("--mode", ba.mode, "Inject this mode (single run)");
  bench->add_option("--k", ba.k, "Noise quantity (single run)");
  bench->add_option("--q", ba.q, "Swap probability (spmxv)");
  bench->add_option("--nnz", ba.nnz, "Non-zeros per row (spmxv)");
  bench->add_option("--config", ba.config, "spmxv footprint: small or large");
  bench->add_option("--threads", ba.threads, "Worker threads");
  bench->add_option("--size", ba.size, "Problem size");
  bench->add_option("--iters", ba.iters, "Timed iterations per run");
  bench->add_option("--args", ba.extra, "Extra arguments for the kernel program");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inject) return cmd_inject(ia);
    if (*run) return cmd_run(plan, out, !no_report, quiet);
    if (*analyze) return cmd_analyze(in, out, thresholds, band);
    if (*report) return cmd_report(in, format, thresholds, band);
    if (*bench) return cmd_bench(ba);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
