#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "noise/experiment.hpp"
#include "noise/injector.hpp"
#include "noise/isa.hpp"
#include "noise/patterns.hpp"
#include "noise/sim.hpp"

namespace noise {

enum class Statistic { median, mean };

struct StopRule {
  double delta = 0.2;
  std::size_t m = 2;
  std::size_t k_max = 100;
};

/// Command templates. Placeholders: `{in}`, `{out}`, `{include}` (probe
/// headers) and, for link, `{runtime}` (probe libraries).
struct BuildRecipe {
  std::string emit_asm = "cc -O2 -fno-unroll-loops -S {in} -o {out} -I{include}";
  std::string assemble = "cc -c {in} -o {out}";
  std::string link = "c++ {in} {runtime} -o {out} -pthread";
  std::filesystem::path workdir;
  std::string include_dir;
  std::string runtime;
};

struct TargetSpec {
  std::string name;
  std::vector<std::filesystem::path> sources;  // .c/.cc compiled to asm, .s used as is
  std::string region_id;
  /// Simulated runs only.
  std::optional<IdealModelParams> model;
  std::map<std::string, IdealModelParams> mode_models;
  std::size_t loop_body_size = 0;
};

struct RunSpec {
  enum class Kind { command, simulated };
  Kind kind = Kind::command;
  std::string command = "{exe}";
  std::map<std::string, std::string> env;
  // simulated
  IdealModelParams model;
  std::vector<double> class_scales{1.0};
  std::size_t samples_per_run = 1;
};

struct ExperimentPlan {
  std::string name;
  std::filesystem::path base_dir;
  std::vector<TargetSpec> targets;
  std::vector<std::string> modes;
  std::vector<std::size_t> k_schedule;
  std::size_t repetitions = 5;
  StopRule stop;
  double gap_threshold = 0.2;
  Statistic statistic = Statistic::median;
  BuildRecipe build;
  RunSpec run;
  NoiseBufferSpec buffers;
  std::optional<Isa> isa;

  /// Throws PlanError.
  void validate() const;
};

/// 0..5, then every 5 up to 50, then every 10, capped at k_max.
std::vector<std::size_t> default_k_schedule(std::size_t k_max);

/// Throws PlanError. Relative paths are resolved against `base_dir`.
ExperimentPlan parse_plan(std::string_view toml_text, const std::filesystem::path& base_dir = {});
ExperimentPlan load_plan(const std::filesystem::path& path);

struct PerformanceClass {
  int class_id = 0;
  std::vector<double> members;  // sorted
  double representative = 0.0;
  double iqr = 0.0;
};

/// Sorts the samples and starts a new class wherever the next sample exceeds
/// the previous one by more than `gap_threshold` (relative). Classes are
/// numbered from the fastest.
std::vector<PerformanceClass> cluster_samples(std::span<const double> samples,
                                              double gap_threshold = 0.2,
                                              Statistic statistic = Statistic::median);

/// True iff the last m points all exceed (1 + delta) x the k=0 duration.
bool online_stop(const TimingSeries& series, double delta, std::size_t m);

std::string sha256_hex(std::string_view data);

struct BuildAction {
  enum class Kind { emit, assemble, link };
  Kind kind;
  std::string file;
  std::string command;
};

std::string_view to_string(BuildAction::Kind k);

struct Injection {
  std::string mode;
  std::size_t k = 0;
};

/// Content-addressed build of one target variant. Emitted assembly is keyed on
/// (source bytes, emit command), objects on (assembly text, assemble command),
/// so only files whose inputs changed are rebuilt. Linking always runs.
class Builder {
public:
  Builder(BuildRecipe recipe, NoiseBufferSpec buffers = {}, std::optional<Isa> isa = std::nullopt);

  struct Output {
    std::filesystem::path exe;
    std::vector<BuildAction> actions;
    std::optional<InjectionReport> report;
    std::optional<InjectionSite> site;
  };

  /// Throws BuildFailure, AnchorMissing and the injector's errors. A corrupt
  /// cache entry is dropped together with the rest of the cache and the build
  /// is redone from scratch.
  Output build(const TargetSpec& target, const std::optional<Injection>& injection,
               const std::filesystem::path& exe);

  std::filesystem::path cache_dir() const;
  void clear_cache() const;

private:
  Output build_once(const TargetSpec& target, const std::optional<Injection>& injection,
                    const std::filesystem::path& exe);

  BuildRecipe recipe_;
  NoiseBufferSpec buffers_;
  std::optional<Isa> isa_;
};

struct RunOptions {
  /// Progress lines; may be empty.
  std::function<void(const std::string&)> log;
  bool emit_reports = true;
};

/// Baseline first (build/run failures there are fatal), then every target x
/// mode over the k schedule. Layout under `out_dir`:
/// raw/<target>/<mode>/k<k>/rep<i>.csv, experiment.json, reports/.
ExperimentData run_experiment(const ExperimentPlan& plan, const std::filesystem::path& out_dir,
                              const RunOptions& options = {});

/// Durations (ns) of `region_id` in a probe CSV file. Throws IoFailure.
std::vector<double> read_probe_samples(const std::filesystem::path& csv, std::string_view region_id);

}  // namespace noise
