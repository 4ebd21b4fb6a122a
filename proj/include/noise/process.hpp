#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace noise {

struct ProcessResult {
  int exit_code = -1;  // -1 when killed by a signal
  int signal = 0;
  std::string output;  // stdout and stderr interleaved

  bool ok() const { return exit_code == 0 && signal == 0; }
};

/// Runs `command` through /bin/sh. `env` entries are added to (or replace
/// entries of) the current environment; an empty value removes the variable.
ProcessResult run_shell(const std::string& command,
                        const std::map<std::string, std::string>& env = {},
                        const std::filesystem::path& cwd = {});

/// Replaces `{name}` placeholders. Unknown placeholders throw PlanError.
std::string expand_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

std::string shell_quote(std::string_view s);

}  // namespace noise
