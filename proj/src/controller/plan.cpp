#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "noise/controller.hpp"
#include "noise/error.hpp"
#include "toml.hpp"

#ifndef NOISE_DEFAULT_INCLUDE_DIR
#define NOISE_DEFAULT_INCLUDE_DIR ""
#endif
#ifndef NOISE_DEFAULT_RUNTIME
#define NOISE_DEFAULT_RUNTIME ""
#endif

namespace noise {

namespace {

[[noreturn]] void plan_error(const std::string& msg) { throw Error(ErrorCode::PlanError, msg); }

void check_keys(const toml::table& t, std::string_view where, std::set<std::string_view> allowed) {
  for (const auto& [key, node] : t) {
    if (!allowed.count(key.str())) {
      plan_error("unknown key '" + std::string(key.str()) + "' in " + std::string(where));
    }
  }
}

const toml::table* table_at(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) plan_error("'" + std::string(key) + "' must be a table");
  return n->as_table();
}

template <typename T>
std::optional<T> get(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  auto v = n->value<T>();
  if (!v) plan_error("'" + std::string(key) + "' has the wrong type");
  return v;
}

std::size_t get_count(const toml::table& t, std::string_view key, std::size_t fallback) {
  auto v = get<std::int64_t>(t, key);
  if (!v) return fallback;
  if (*v < 0) plan_error("'" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(*v);
}

std::vector<std::string> string_list(const toml::table& t, std::string_view key) {
  std::vector<std::string> out;
  const toml::node* n = t.get(key);
  if (n == nullptr) return out;
  const toml::array* arr = n->as_array();
  if (arr == nullptr) plan_error("'" + std::string(key) + "' must be an array of strings");
  for (const auto& e : *arr) {
    auto s = e.value<std::string>();
    if (!s) plan_error("'" + std::string(key) + "' must be an array of strings");
    out.push_back(*s);
  }
  return out;
}

IdealModelParams model_from(const toml::table& t, std::string_view where, IdealModelParams p = {}) {
  check_keys(t, where, {"t0", "k1", "k2", "slope_transient", "slope_saturated", "sigma", "seed"});
  p.t0 = get<double>(t, "t0").value_or(p.t0);
  p.k1 = get<double>(t, "k1").value_or(p.k1);
  p.k2 = get<double>(t, "k2").value_or(p.k2);
  p.slope_transient = get<double>(t, "slope_transient").value_or(p.slope_transient);
  p.slope_saturated = get<double>(t, "slope_saturated").value_or(p.slope_saturated);
  p.sigma = get<double>(t, "sigma").value_or(p.sigma);
  if (auto s = get<std::int64_t>(t, "seed")) p.seed = static_cast<std::uint64_t>(*s);
  try {
    p.validate();
  } catch (const Error& e) {
    plan_error(std::string(where) + ": " + e.what());
  }
  return p;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return base / path;
}

}  // namespace

std::vector<std::size_t> default_k_schedule(std::size_t k_max) {
  std::vector<std::size_t> ks;
  for (std::size_t k = 0; k <= k_max; k += (k < 5 ? 1 : k < 50 ? 5 : 10)) ks.push_back(k);
  return ks;
}

void ExperimentPlan::validate() const {
  if (k_schedule.empty() || k_schedule.front() != 0) plan_error("k schedule must start at 0");
  for (std::size_t i = 1; i < k_schedule.size(); ++i) {
    if (k_schedule[i] <= k_schedule[i - 1]) plan_error("k schedule must be strictly increasing");
  }
  if (repetitions < 1) plan_error("repetitions must be >= 1");
  if (!(stop.delta > 0.0)) plan_error("stop.delta must be > 0");
  if (stop.m < 1) plan_error("stop.m must be >= 1");
  if (!(gap_threshold > 0.0)) plan_error("gap_threshold must be > 0");
  std::set<std::string> names;
  for (const auto& t : targets) {
    if (t.name.empty()) plan_error("target without a name");
    if (!names.insert(t.name).second) plan_error("duplicate target '" + t.name + "'");
    if (t.region_id.empty()) plan_error("target '" + t.name + "' has no region");
    if (run.kind == RunSpec::Kind::command && t.sources.empty()) {
      plan_error("target '" + t.name + "' has no sources");
    }
  }
  for (const auto& m : modes) {
    if (!ModeRegistry::builtin().contains(m)) plan_error("unknown noise mode '" + m + "'");
  }
  if (run.kind == RunSpec::Kind::simulated) {
    if (run.class_scales.empty()) plan_error("run.class_scales must not be empty");
    for (double s : run.class_scales) {
      if (!(s > 0.0)) plan_error("run.class_scales entries must be > 0");
    }
    if (run.samples_per_run < 1) plan_error("run.samples_per_run must be >= 1");
  }
}

ExperimentPlan parse_plan(std::string_view toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "plan is not valid TOML: " << e.description() << " at line " << e.source().begin.line;
    plan_error(msg.str());
  }
  check_keys(root, "plan", {"name", "build", "run", "target", "noise", "stop"});

  ExperimentPlan plan;
  plan.base_dir = base_dir;
  plan.name = get<std::string>(root, "name").value_or("experiment");
  plan.build.include_dir = NOISE_DEFAULT_INCLUDE_DIR;
  plan.build.runtime = NOISE_DEFAULT_RUNTIME;
  plan.build.workdir = resolve(base_dir, "work");

  if (const auto* b = table_at(root, "build")) {
    check_keys(*b, "[build]", {"emit_asm", "assemble", "link", "workdir", "include", "runtime"});
    plan.build.emit_asm = get<std::string>(*b, "emit_asm").value_or(plan.build.emit_asm);
    plan.build.assemble = get<std::string>(*b, "assemble").value_or(plan.build.assemble);
    plan.build.link = get<std::string>(*b, "link").value_or(plan.build.link);
    if (auto w = get<std::string>(*b, "workdir")) plan.build.workdir = resolve(base_dir, *w);
    plan.build.include_dir = get<std::string>(*b, "include").value_or(plan.build.include_dir);
    plan.build.runtime = get<std::string>(*b, "runtime").value_or(plan.build.runtime);
  }

  if (const auto* r = table_at(root, "run")) {
    check_keys(*r, "[run]", {"kind", "command", "env", "model", "class_scales", "samples_per_run"});
    const std::string kind = get<std::string>(*r, "kind").value_or("command");
    if (kind == "command") {
      plan.run.kind = RunSpec::Kind::command;
    } else if (kind == "simulated") {
      plan.run.kind = RunSpec::Kind::simulated;
    } else {
      plan_error("run.kind must be \"command\" or \"simulated\"");
    }
    plan.run.command = get<std::string>(*r, "command").value_or(plan.run.command);
    if (const auto* env = table_at(*r, "env")) {
      for (const auto& [k, v] : *env) {
        auto s = v.value<std::string>();
        if (!s) plan_error("run.env values must be strings");
        plan.run.env[std::string(k.str())] = *s;
      }
    }
    if (const auto* m = table_at(*r, "model")) plan.run.model = model_from(*m, "[run.model]");
    if (const toml::node* cs = r->get("class_scales")) {
      const toml::array* arr = cs->as_array();
      if (arr == nullptr) plan_error("run.class_scales must be an array");
      plan.run.class_scales.clear();
      for (const auto& e : *arr) {
        auto v = e.value<double>();
        if (!v) plan_error("run.class_scales must hold numbers");
        plan.run.class_scales.push_back(*v);
      }
    }
    plan.run.samples_per_run = get_count(*r, "samples_per_run", plan.run.samples_per_run);
  }

  if (const toml::node* tn = root.get("target")) {
    const toml::array* arr = tn->as_array();
    if (arr == nullptr) plan_error("'target' must be an array of tables ([[target]])");
    for (const auto& e : *arr) {
      const toml::table* t = e.as_table();
      if (t == nullptr) plan_error("'target' entries must be tables");
      check_keys(*t, "[[target]]", {"name", "sources", "region", "model", "models", "loop_body_size"});
      TargetSpec target;
      target.region_id = get<std::string>(*t, "region").value_or("");
      target.name = get<std::string>(*t, "name").value_or(target.region_id);
      for (const auto& s : string_list(*t, "sources")) target.sources.push_back(resolve(base_dir, s));
      if (const auto* m = table_at(*t, "model")) {
        target.model = model_from(*m, "[target.model]", plan.run.model);
      }
      if (const auto* ms = table_at(*t, "models")) {
        for (const auto& [mode, node] : *ms) {
          const toml::table* mt = node.as_table();
          if (mt == nullptr) plan_error("target.models entries must be tables");
          target.mode_models[std::string(mode.str())] =
              model_from(*mt, "[target.models]", target.model.value_or(plan.run.model));
        }
      }
      target.loop_body_size = get_count(*t, "loop_body_size", 0);
      plan.targets.push_back(std::move(target));
    }
  }

  if (const auto* s = table_at(root, "stop")) {
    check_keys(*s, "[stop]", {"delta", "m", "k_max"});
    plan.stop.delta = get<double>(*s, "delta").value_or(plan.stop.delta);
    plan.stop.m = get_count(*s, "m", plan.stop.m);
    plan.stop.k_max = get_count(*s, "k_max", plan.stop.k_max);
  }

  bool explicit_schedule = false;
  if (const auto* n = table_at(root, "noise")) {
    check_keys(*n, "[noise]", {"modes", "k_schedule", "repetitions", "gap_threshold", "statistic",
                               "isa", "l1_buffer_bytes", "memory_buffer_bytes", "per_thread"});
    plan.modes = string_list(*n, "modes");
    if (const toml::node* ks = n->get("k_schedule")) {
      const toml::array* arr = ks->as_array();
      if (arr == nullptr) plan_error("noise.k_schedule must be an array of integers");
      for (const auto& e : *arr) {
        auto v = e.value<std::int64_t>();
        if (!v || *v < 0) plan_error("noise.k_schedule must hold non-negative integers");
        plan.k_schedule.push_back(static_cast<std::size_t>(*v));
      }
      explicit_schedule = true;
    }
    plan.repetitions = get_count(*n, "repetitions", plan.repetitions);
    plan.gap_threshold = get<double>(*n, "gap_threshold").value_or(plan.gap_threshold);
    const std::string stat = get<std::string>(*n, "statistic").value_or("median");
    if (stat == "median") {
      plan.statistic = Statistic::median;
    } else if (stat == "mean") {
      plan.statistic = Statistic::mean;
    } else {
      plan_error("noise.statistic must be \"median\" or \"mean\"");
    }
    if (auto isa = get<std::string>(*n, "isa")) {
      try {
        plan.isa = parse_isa(*isa);
      } catch (const Error& e) {
        plan_error(e.what());
      }
    }
    plan.buffers.l1_buffer_bytes = get_count(*n, "l1_buffer_bytes", plan.buffers.l1_buffer_bytes);
    plan.buffers.memory_buffer_bytes =
        get_count(*n, "memory_buffer_bytes", plan.buffers.memory_buffer_bytes);
    plan.buffers.per_thread = get<bool>(*n, "per_thread").value_or(false);
  }

  if (explicit_schedule) {
    // k_max still caps a hand-written schedule
    std::erase_if(plan.k_schedule, [&](std::size_t k) { return k > plan.stop.k_max; });
  } else {
    plan.k_schedule = default_k_schedule(plan.stop.k_max);
  }
  plan.validate();
  return plan;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) plan_error("cannot read plan " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str(), path.parent_path());
}

}  // namespace noise
