#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "noise/asm_text.hpp"
#include "noise/isa.hpp"
#include "noise/patterns.hpp"

namespace noise {

/// A `NOISE_ANCHOR:<id>` comment and the innermost loop around it.
struct InjectionSite {
  std::string region_id;
  std::string file;
  std::string function_symbol;
  std::size_t anchor_line = 0;
  LineSpan loop_body_span;
  /// Instructions in the loop span, not counting probe calls with their
  /// argument setup or previously injected noise.
  std::size_t loop_body_size = 0;
  std::size_t probe_instructions_excluded = 0;
};

struct InjectionReport {
  std::string region_id;
  std::string mode;
  std::size_t k = 0;
  Isa isa = Isa::x86_64;
  std::size_t payload_count = 0;
  std::size_t overhead_count = 0;
  /// Injected instructions found inside the loop span that are not payload.
  std::size_t overhead_in_loop = 0;
  bool spill_inserted = false;
  std::vector<std::string> registers_used;
  std::vector<std::string> saved_registers;
  bool original_preserved = false;
  std::size_t loop_body_size = 0;
  std::size_t probe_instructions_excluded = 0;
  /// Injected stores, branches or system instructions (must stay empty).
  std::vector<std::string> forbidden;
};

struct InjectionResult {
  std::string text;
  InjectionReport report;
};

/// Finds every anchor. Throws DuplicateRegionId, AnchorOutsideLoop (including
/// loops with more than one entry edge).
std::vector<InjectionSite> locate_anchors(const AsmFile& file, std::string_view file_name = {});
std::vector<InjectionSite> locate_anchors(std::string_view asm_text,
                                          std::string_view file_name = {},
                                          std::optional<Isa> isa = std::nullopt);

struct ScanOptions {
  /// Loop in which registers used elsewhere in the function, but not inside
  /// it, may be borrowed and restored afterwards.
  std::optional<LineSpan> loop;
  std::vector<Register> exclude;
  /// When false only registers that need no saving are returned.
  bool allow_saves = true;
};

struct RegisterScan {
  std::vector<Register> pool;
  /// Subset of pool whose value must be restored after the loop.
  std::vector<Register> must_save;
};

/// Free registers of `cls` in `function_symbol`, best first: never mentioned in
/// the function (caller-saved, then callee-saved), then registers mentioned
/// elsewhere in the function but not inside `options.loop` (callee-saved
/// first); everything past the first tier lands in must_save. Calls mark
/// argument registers as used, returns mark return registers.
/// Returns at most `wanted` registers; throws RegisterPressureTooHigh if fewer exist.
RegisterScan scan_free_registers(const AsmFile& file, std::string_view function_symbol,
                                 RegClass cls, std::size_t wanted,
                                 const ScanOptions& options = {});

/// All free registers (no count requirement).
RegisterScan scan_free_registers(const AsmFile& file, std::string_view function_symbol,
                                 RegClass cls, const ScanOptions& options = {});

/// Inserts k x pattern_length payload instructions right after the anchor and
/// the pattern's overhead around the loop. Throws AnchorMissing,
/// UnsupportedIsa, RegisterPressureTooHigh, MalformedAssembly.
InjectionResult inject(std::string_view asm_text, const InjectionSite& site,
                       const NoisePattern& pattern, std::size_t k);

/// Recomputes the counts of an injection from the two texts alone. Throws
/// AuditMismatch when the payload inside the loop is not k x pattern_length.
InjectionReport audit(std::string_view before, std::string_view after, const InjectionSite& site,
                      std::size_t k, const NoisePattern& pattern);

/// Marker comments that bracket injected fragments.
namespace markers {
inline constexpr std::string_view begin = "NOISE_INJECTED:begin";
inline constexpr std::string_view end = "NOISE_INJECTED:end";
inline constexpr std::string_view anchor = "NOISE_ANCHOR:";
}  // namespace markers

}  // namespace noise
