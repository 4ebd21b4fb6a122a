#pragma once
// How the bundled kernels are rebuilt with noise: the C kernel goes through
// the builder, the driver and runtime come from the build tree.
#include <filesystem>
#include <string>

#include "noise/build_config.hpp"
#include "noise/controller.hpp"

namespace noise::tools {

inline BuildRecipe bench_recipe(const std::filesystem::path& workdir) {
  namespace bc = build_config;
  BuildRecipe r;
  r.emit_asm = std::string(bc::c_compiler) + " " + bc::kernel_cflags + " -I{include} -S {in} -o {out}";
  r.assemble = std::string(bc::c_compiler) + " -c {in} -o {out}";
  r.link = std::string(bc::cxx_compiler) + " {in} " + bc::bench_link_libs + " -o {out} -pthread";
  r.include_dir = bc::include_dir;
  r.runtime = bc::probe_runtime;
  r.workdir = workdir;
  return r;
}

inline TargetSpec bench_target(const std::string& kernel) {
  TargetSpec t;
  t.name = kernel;
  t.region_id = kernel;
  t.sources = {std::filesystem::path(build_config::kernel_dir) / (kernel + ".c")};
  return t;
}

}  // namespace noise::tools
