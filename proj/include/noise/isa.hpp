#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace noise {

enum class Isa { aarch64, x86_64 };

std::string_view to_string(Isa isa);
/// Throws Error(UnsupportedIsa) for anything but "aarch64" / "x86_64".
Isa parse_isa(std::string_view name);

/// Architectural register file. `fpr` is the FP/SIMD file (v0-v31, xmm0-xmm15).
enum class RegClass { gpr, fpr };

std::string_view to_string(RegClass cls);

/// An architectural register, independent of the width it is accessed with:
/// `w5`, `x5` are the same Register on aarch64, as are `%eax` / `%rax` on x86_64.
struct Register {
  RegClass cls = RegClass::gpr;
  int index = 0;

  auto operator<=>(const Register&) const = default;
};

/// Width-specific spelling used when printing an instruction operand.
enum class RegView {
  gpr64,  // x5, %rax
  gpr32,  // w5, %eax
  fp64,   // d5, %xmm5
};

std::string register_name(Isa isa, Register reg, RegView view);

/// Canonical 64-bit spelling: x5 / d5 on aarch64, %rax / %xmm5 on x86_64.
std::string register_name(Isa isa, Register reg);

/// Parses any spelling of a register (with or without the AT&T `%`).
/// Returns nullopt for names that are not allocatable registers (sp, xzr, rip, ...).
std::optional<Register> parse_register(Isa isa, std::string_view name);

/// Calling-convention facts used by the register scanner (SysV x86-64, AAPCS64).
namespace abi {

bool is_callee_saved(Isa isa, Register reg);

/// Registers the injector may ever hand out, in preference order: caller-saved
/// first (highest index first, as in `d31, d30, ...`), then callee-saved.
const std::vector<Register>& allocation_order(Isa isa, RegClass cls);

const std::vector<Register>& argument_registers(Isa isa);
const std::vector<Register>& return_registers(Isa isa);

std::size_t register_count(Isa isa, RegClass cls);

}  // namespace abi

}  // namespace noise
