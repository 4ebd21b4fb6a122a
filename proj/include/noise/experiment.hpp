#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "noise/injector.hpp"

namespace noise {

struct SeriesPoint {
  std::size_t k = 0;
  double duration = 0.0;  // representative (median by default), ns
  double spread = 0.0;    // interquartile range, ns
  std::size_t samples = 0;
};

struct TimingSeries {
  std::string target;
  std::string region_id;
  std::string mode;
  int class_id = 0;
  std::size_t loop_body_size = 0;
  std::vector<SeriesPoint> points;

  /// Throws InvalidArgument unless k is strictly increasing from 0.
  void validate() const;
};

struct FailureRecord {
  std::string target;
  std::string mode;
  std::size_t k = 0;
  std::string code;
  std::string message;
};

struct ModeRecord {
  std::string target;
  std::string region_id;
  std::string mode;
  std::vector<TimingSeries> series;  // one per performance class
  std::vector<InjectionReport> audits;
  bool stopped_online = false;
  std::optional<std::size_t> stop_k;
};

struct ExperimentData {
  std::string plan_name;
  std::vector<TimingSeries> baselines;  // uninstrumented build, k = 0 only
  std::vector<ModeRecord> modes;
  std::vector<FailureRecord> failures;
};

std::string to_json_text(const ExperimentData& data);
ExperimentData experiment_from_json_text(const std::string& text);

/// Throws IoFailure.
void save_experiment(const ExperimentData& data, const std::filesystem::path& path);
ExperimentData load_experiment(const std::filesystem::path& path);

std::string to_json_text(const InjectionReport& report);

}  // namespace noise
