// Helpers shared by the unit test binaries.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "noise/error.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return NOISE_TEST_DATA_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot read " << p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Fresh directory under the build tree, removed on entry.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::path(NOISE_TEST_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename F>
noise::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const noise::Error& e) {
    return e.code();
  }
  FAIL("expected a noise::Error");
  return noise::ErrorCode::InvalidArgument;
}

}  // namespace testing
