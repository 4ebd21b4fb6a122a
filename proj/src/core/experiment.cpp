#include "noise/experiment.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "noise/error.hpp"

namespace noise {

using json = nlohmann::ordered_json;

void TimingSeries::validate() const {
  if (points.empty() || points.front().k != 0) {
    throw Error(ErrorCode::InvalidArgument, "series for " + region_id + "/" + mode +
                                                " must start with the k=0 baseline");
  }
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].k <= points[i - 1].k) {
      throw Error(ErrorCode::InvalidArgument, "series k values must be strictly increasing");
    }
  }
}

namespace {

json series_json(const TimingSeries& s) {
  json points = json::array();
  for (const auto& p : s.points) {
    points.push_back({{"k", p.k}, {"duration_ns", p.duration}, {"iqr_ns", p.spread},
                      {"samples", p.samples}});
  }
  return {{"target", s.target},   {"region", s.region_id},
          {"mode", s.mode},       {"class", s.class_id},
          {"loop_body_size", s.loop_body_size}, {"points", points}};
}

TimingSeries series_from(const json& j) {
  TimingSeries s;
  s.target = j.at("target").get<std::string>();
  s.region_id = j.at("region").get<std::string>();
  s.mode = j.at("mode").get<std::string>();
  s.class_id = j.at("class").get<int>();
  s.loop_body_size = j.at("loop_body_size").get<std::size_t>();
  for (const auto& p : j.at("points")) {
    s.points.push_back(SeriesPoint{p.at("k").get<std::size_t>(), p.at("duration_ns").get<double>(),
                                   p.at("iqr_ns").get<double>(), p.at("samples").get<std::size_t>()});
  }
  return s;
}

json report_json(const InjectionReport& r) {
  return {{"region", r.region_id},
          {"mode", r.mode},
          {"k", r.k},
          {"isa", std::string(to_string(r.isa))},
          {"payload_count", r.payload_count},
          {"overhead_count", r.overhead_count},
          {"overhead_in_loop", r.overhead_in_loop},
          {"spill_inserted", r.spill_inserted},
          {"registers_used", r.registers_used},
          {"saved_registers", r.saved_registers},
          {"original_preserved", r.original_preserved},
          {"loop_body_size", r.loop_body_size},
          {"probe_instructions_excluded", r.probe_instructions_excluded},
          {"forbidden", r.forbidden}};
}

InjectionReport report_from(const json& j) {
  InjectionReport r;
  r.region_id = j.at("region").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.k = j.at("k").get<std::size_t>();
  r.isa = parse_isa(j.at("isa").get<std::string>());
  r.payload_count = j.at("payload_count").get<std::size_t>();
  r.overhead_count = j.at("overhead_count").get<std::size_t>();
  r.overhead_in_loop = j.value("overhead_in_loop", std::size_t{0});
  r.spill_inserted = j.at("spill_inserted").get<bool>();
  r.registers_used = j.at("registers_used").get<std::vector<std::string>>();
  r.saved_registers = j.value("saved_registers", std::vector<std::string>{});
  r.original_preserved = j.at("original_preserved").get<bool>();
  r.loop_body_size = j.at("loop_body_size").get<std::size_t>();
  r.probe_instructions_excluded = j.value("probe_instructions_excluded", std::size_t{0});
  r.forbidden = j.value("forbidden", std::vector<std::string>{});
  return r;
}

}  // namespace

std::string to_json_text(const InjectionReport& report) { return report_json(report).dump(2) + "\n"; }

std::string to_json_text(const ExperimentData& data) {
  json j;
  j["plan"] = data.plan_name;
  j["baselines"] = json::array();
  for (const auto& s : data.baselines) j["baselines"].push_back(series_json(s));
  j["modes"] = json::array();
  for (const auto& m : data.modes) {
    json mj = {{"target", m.target}, {"region", m.region_id}, {"mode", m.mode},
               {"stopped_online", m.stopped_online}};
    mj["stop_k"] = m.stop_k ? json(*m.stop_k) : json(nullptr);
    mj["series"] = json::array();
    for (const auto& s : m.series) mj["series"].push_back(series_json(s));
    mj["audits"] = json::array();
    for (const auto& a : m.audits) mj["audits"].push_back(report_json(a));
    j["modes"].push_back(std::move(mj));
  }
  j["failures"] = json::array();
  for (const auto& f : data.failures) {
    j["failures"].push_back({{"target", f.target}, {"mode", f.mode}, {"k", f.k},
                             {"code", f.code}, {"message", f.message}});
  }
  return j.dump(2) + "\n";
}

ExperimentData experiment_from_json_text(const std::string& text) {
  ExperimentData data;
  try {
    const json j = json::parse(text);
    data.plan_name = j.value("plan", std::string{});
    for (const auto& s : j.at("baselines")) data.baselines.push_back(series_from(s));
    for (const auto& mj : j.at("modes")) {
      ModeRecord m;
      m.target = mj.at("target").get<std::string>();
      m.region_id = mj.at("region").get<std::string>();
      m.mode = mj.at("mode").get<std::string>();
      m.stopped_online = mj.value("stopped_online", false);
      if (mj.contains("stop_k") && !mj["stop_k"].is_null()) m.stop_k = mj["stop_k"].get<std::size_t>();
      for (const auto& s : mj.at("series")) m.series.push_back(series_from(s));
      for (const auto& a : mj.at("audits")) m.audits.push_back(report_from(a));
      data.modes.push_back(std::move(m));
    }
    for (const auto& f : j.value("failures", json::array())) {
      data.failures.push_back(FailureRecord{f.at("target").get<std::string>(),
                                            f.at("mode").get<std::string>(),
                                            f.at("k").get<std::size_t>(),
                                            f.at("code").get<std::string>(),
                                            f.at("message").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed experiment data: ") + e.what());
  }
  return data;
}

void save_experiment(const ExperimentData& data, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << to_json_text(data);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

ExperimentData load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_from_json_text(ss.str());
}

}  // namespace noise
