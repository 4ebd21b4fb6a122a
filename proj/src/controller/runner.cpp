#include <charconv>
#include <fstream>
#include <sstream>

#include "noise/analyzer.hpp"
#include "noise/controller.hpp"
#include "noise/error.hpp"
#include "noise/process.hpp"

namespace noise {

namespace fs = std::filesystem;

std::vector<double> read_probe_samples(const fs::path& csv, std::string_view region_id) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "region_id,thread_id,sample_index,duration_ns") {
    throw Error(ErrorCode::IoFailure, csv.string() + " is not a probe sample file");
  }
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c3 = line.rfind(',');
    const auto c2 = c3 == std::string::npos ? c3 : line.rfind(',', c3 - 1);
    const auto c1 = c2 == std::string::npos ? c2 : line.rfind(',', c2 - 1);
    if (c1 == std::string::npos) throw Error(ErrorCode::IoFailure, "malformed row in " + csv.string());
    if (std::string_view(line).substr(0, c1) != region_id) continue;
    double d = 0;
    const char* b = line.data() + c3 + 1;
    const char* e = line.data() + line.size();
    auto [p, ec] = std::from_chars(b, e, d);
    if (ec != std::errc() || p != e) throw Error(ErrorCode::IoFailure, "malformed duration in " + csv.string());
    out.push_back(d);
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string tail(const std::string& s, std::size_t n = 2000) {
  return s.size() <= n ? s : "..." + s.substr(s.size() - n);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
}

struct Measurement {
  std::vector<double> samples;
  std::optional<InjectionReport> report;
  std::size_t loop_body_size = 0;
};

class Runner {
public:
  Runner(const ExperimentPlan& plan, const fs::path& out_dir, const RunOptions& options)
      : plan_(plan), out_(out_dir), options_(options), builder_(plan.build, plan.buffers, plan.isa) {}

  void log(const std::string& msg) const {
    if (options_.log) options_.log(msg);
  }

  Measurement measure(const TargetSpec& target, const std::string& label, std::size_t k,
                      const std::optional<Injection>& injection) {
    const fs::path dir = out_ / "raw" / target.name / label / ("k" + std::to_string(k));
    fs::create_directories(dir);
    Measurement m;
    if (plan_.run.kind == RunSpec::Kind::simulated) {
      simulate_runs(target, injection ? injection->mode : std::string(), k, dir, m);
    } else {
      command_runs(target, injection, dir, m);
    }
    if (m.report) write_text(dir / "audit.json", to_json_text(*m.report));
    return m;
  }

private:
  const IdealModelParams& model_for(const TargetSpec& t, const std::string& mode) const {
    if (auto it = t.mode_models.find(mode); it != t.mode_models.end()) return it->second;
    if (t.model) return *t.model;
    return plan_.run.model;
  }

  void simulate_runs(const TargetSpec& target, const std::string& mode, std::size_t k,
                     const fs::path& dir, Measurement& m) const {
    const IdealModelParams& model = model_for(target, mode);
    const auto& scales = plan_.run.class_scales;
    const std::size_t spr = plan_.run.samples_per_run;
    for (std::size_t rep = 0; rep < plan_.repetitions; ++rep) {
      std::string csv = "region_id,thread_id,sample_index,duration_ns\n";
      for (std::size_t s = 0; s < spr; ++s) {
        const double d = simulate(model, k, rep * spr + s) * scales[s % scales.size()];
        csv += target.region_id + ",0," + std::to_string(s) + "," + num(d) + "\n";
      }
      const fs::path file = dir / ("rep" + std::to_string(rep) + ".csv");
      write_text(file, csv);
      auto got = read_probe_samples(file, target.region_id);
      m.samples.insert(m.samples.end(), got.begin(), got.end());
    }
    m.loop_body_size = target.loop_body_size;
  }

  void command_runs(const TargetSpec& target, const std::optional<Injection>& injection,
                    const fs::path& dir, Measurement& m) {
    const fs::path exe = plan_.build.workdir / "bin" / target.name;
    auto built = builder_.build(target, injection, exe);
    for (const auto& a : built.actions) log("  " + std::string(to_string(a.kind)) + " " + a.file);
    m.report = built.report;
    m.loop_body_size = target.loop_body_size ? target.loop_body_size
                                             : (built.site ? built.site->loop_body_size : 0);

    for (std::size_t rep = 0; rep < plan_.repetitions; ++rep) {
      const fs::path csv = fs::absolute(dir / ("rep" + std::to_string(rep) + ".csv"));
      fs::remove(csv);
      auto env = plan_.run.env;
      env["NOISE_PROBE_OUT"] = csv.string();
      env["NOISE_PROBE_NO_AUTODUMP"] = "";
      if (plan_.buffers.memory_buffer_bytes != 0 && !env.count("NOISE_MEM_BUFFER_BYTES")) {
        env["NOISE_MEM_BUFFER_BYTES"] = std::to_string(plan_.buffers.memory_buffer_bytes);
      }
      const std::string cmd = expand_template(plan_.run.command, {{"exe", shell_quote(fs::absolute(exe).string())}});
      const ProcessResult r = run_shell(cmd, env, plan_.base_dir);
      write_text(dir / ("rep" + std::to_string(rep) + ".log"), r.output);
      if (!r.ok()) {
        throw Error(ErrorCode::RunFailure,
                    "'" + cmd + "' " +
                        (r.signal ? "killed by signal " + std::to_string(r.signal)
                                  : "exited with " + std::to_string(r.exit_code)) +
                        "\n" + tail(r.output));
      }
      if (!fs::exists(csv)) throw Error(ErrorCode::RunFailure, "no probe samples written by '" + cmd + "'");
      auto got = read_probe_samples(csv, target.region_id);
      if (got.empty()) {
        throw Error(ErrorCode::RunFailure, "region '" + target.region_id + "' recorded no samples");
      }
      m.samples.insert(m.samples.end(), got.begin(), got.end());
    }
  }

  const ExperimentPlan& plan_;
  fs::path out_;
  const RunOptions& options_;
  Builder builder_;
};

TimingSeries new_series(const TargetSpec& t, const std::string& mode, int cls, std::size_t size) {
  TimingSeries s;
  s.target = t.name;
  s.region_id = t.region_id;
  s.mode = mode;
  s.class_id = cls;
  s.loop_body_size = size;
  return s;
}

SeriesPoint point_of(std::size_t k, const PerformanceClass& c) {
  return SeriesPoint{k, c.representative, c.iqr, c.members.size()};
}

}  // namespace

ExperimentData run_experiment(const ExperimentPlan& plan, const fs::path& out_dir,
                              const RunOptions& options) {
  plan.validate();
  fs::create_directories(out_dir);
  Runner runner(plan, out_dir, options);
  ExperimentData data;
  data.plan_name = plan.name;

  // Pristine builds of every target first; nothing is injected until all of
  // them build and run.
  for (const auto& target : plan.targets) {
    runner.log("baseline " + target.name);
    const Measurement m = runner.measure(target, "baseline", 0, std::nullopt);
    for (const auto& c : cluster_samples(m.samples, plan.gap_threshold, plan.statistic)) {
      TimingSeries s = new_series(target, "baseline", c.class_id, m.loop_body_size);
      s.points.push_back(point_of(0, c));
      data.baselines.push_back(std::move(s));
    }
  }

  for (const auto& target : plan.targets) {
    for (const auto& mode : plan.modes) {
      ModeRecord rec;
      rec.target = target.name;
      rec.region_id = target.region_id;
      rec.mode = mode;
      std::size_t k_now = 0;
      try {
        for (std::size_t k : plan.k_schedule) {
          k_now = k;
          runner.log(target.name + " " + mode + " k=" + std::to_string(k));
          Measurement m = runner.measure(target, mode, k, Injection{mode, k});
          if (m.report) rec.audits.push_back(*m.report);
          const auto classes = cluster_samples(m.samples, plan.gap_threshold, plan.statistic);
          if (k == 0) {
            for (const auto& c : classes) {
              rec.series.push_back(new_series(target, mode, c.class_id, m.loop_body_size));
            }
          }
          for (auto& s : rec.series) {
            const auto idx = static_cast<std::size_t>(s.class_id);
            if (idx < classes.size()) s.points.push_back(point_of(k, classes[idx]));
          }
          if (!rec.series.empty() && online_stop(rec.series.front(), plan.stop.delta, plan.stop.m)) {
            rec.stopped_online = true;
            rec.stop_k = k;
            runner.log(target.name + " " + mode + " stopped at k=" + std::to_string(k));
            break;
          }
        }
      } catch (const Error& e) {
        runner.log(target.name + " " + mode + " failed at k=" + std::to_string(k_now) + ": " + e.what());
        data.failures.push_back(
            FailureRecord{target.name, mode, k_now, std::string(to_string(e.code())), e.what()});
      }
      if (!rec.series.empty() || !rec.audits.empty()) data.modes.push_back(std::move(rec));
    }
  }

  save_experiment(data, out_dir / "experiment.json");
  if (options.emit_reports) emit_report(data, out_dir / "reports");
  return data;
}

}  // namespace noise
