#include "noise/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

#include "noise/error.hpp"

namespace noise {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnsupportedIsa: return "UnsupportedIsa";
    case ErrorCode::InsufficientRegisterPool: return "InsufficientRegisterPool";
    case ErrorCode::AnchorOutsideLoop: return "AnchorOutsideLoop";
    case ErrorCode::DuplicateRegionId: return "DuplicateRegionId";
    case ErrorCode::RegisterPressureTooHigh: return "RegisterPressureTooHigh";
    case ErrorCode::MalformedAssembly: return "MalformedAssembly";
    case ErrorCode::AuditMismatch: return "AuditMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ZeroLoopSize: return "ZeroLoopSize";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PlanError: return "PlanError";
    case ErrorCode::BuildFailure: return "BuildFailure";
    case ErrorCode::RunFailure: return "RunFailure";
    case ErrorCode::AnchorMissing: return "AnchorMissing";
    case ErrorCode::CacheCorrupt: return "CacheCorrupt";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
  }
  return "Unknown";
}

std::string_view to_string(Isa isa) {
  return isa == Isa::aarch64 ? "aarch64" : "x86_64";
}

Isa parse_isa(std::string_view name) {
  if (name == "aarch64" || name == "arm64") return Isa::aarch64;
  if (name == "x86_64" || name == "x86-64" || name == "amd64") return Isa::x86_64;
  throw Error(ErrorCode::UnsupportedIsa, "unknown ISA '" + std::string(name) + "'");
}

std::string_view to_string(RegClass cls) {
  return cls == RegClass::gpr ? "gpr" : "fpr";
}

namespace {

// x86-64 GPR numbering follows the hardware encoding.
constexpr std::array<std::string_view, 16> kX86Gpr64 = {
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15"};
constexpr std::array<std::string_view, 16> kX86Gpr32 = {
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi",
    "r8d", "r9d", "r10d", "r11d", "r12d", "r13d", "r14d", "r15d"};
constexpr std::array<std::string_view, 16> kX86Gpr16 = {
    "ax", "cx", "dx", "bx", "sp", "bp", "si", "di",
    "r8w", "r9w", "r10w", "r11w", "r12w", "r13w", "r14w", "r15w"};
constexpr std::array<std::string_view, 16> kX86Gpr8 = {
    "al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil",
    "r8b", "r9b", "r10b", "r11b", "r12b", "r13b", "r14b", "r15b"};

constexpr int kX86Rsp = 4;
constexpr int kX86Rbp = 5;

std::optional<int> parse_index(std::string_view digits, int limit) {
  if (digits.empty() || digits.size() > 2) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || value >= limit) {
    return std::nullopt;
  }
  return value;
}

std::optional<Register> parse_x86(std::string_view name) {
  if (!name.empty() && name.front() == '%') name.remove_prefix(1);
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (int i = 0; i < 16; ++i) {
    if (i == kX86Rsp) continue;
    if (lower == kX86Gpr64[i] || lower == kX86Gpr32[i] || lower == kX86Gpr16[i] ||
        lower == kX86Gpr8[i]) {
      return Register{RegClass::gpr, i};
    }
  }
  if (lower == "ah") return Register{RegClass::gpr, 0};
  if (lower == "ch") return Register{RegClass::gpr, 1};
  if (lower == "dh") return Register{RegClass::gpr, 2};
  if (lower == "bh") return Register{RegClass::gpr, 3};
  for (std::string_view prefix : {"xmm", "ymm", "zmm"}) {
    if (lower.starts_with(prefix)) {
      // xmm16+ needs EVEX encoding; they are tracked but never allocated.
      if (auto idx = parse_index(std::string_view(lower).substr(3), 32)) {
        return Register{RegClass::fpr, *idx};
      }
    }
  }
  return std::nullopt;
}

std::optional<Register> parse_aarch64(std::string_view name) {
  if (name.empty()) return std::nullopt;
  // Strip arrangement / lane suffixes: v3.4s, v3.d[1], z2.d
  auto dot = name.find('.');
  if (dot != std::string_view::npos) name = name.substr(0, dot);
  char head = static_cast<char>(std::tolower(static_cast<unsigned char>(name.front())));
  std::string_view digits = name.substr(1);
  switch (head) {
    case 'x':
    case 'w':
      // x31 does not exist as a name (sp / xzr are spelled out).
      if (auto idx = parse_index(digits, 31)) return Register{RegClass::gpr, *idx};
      return std::nullopt;
    case 'b':
    case 'h':
    case 's':
    case 'd':
    case 'q':
    case 'v':
    case 'z':
      if (auto idx = parse_index(digits, 32)) return Register{RegClass::fpr, *idx};
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

std::vector<Register> make_list(RegClass cls, std::initializer_list<int> indices) {
  std::vector<Register> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(Register{cls, i});
  return out;
}

}  // namespace

std::string register_name(Isa isa, Register reg, RegView view) {
  if (isa == Isa::x86_64) {
    if (reg.cls == RegClass::fpr) return "%xmm" + std::to_string(reg.index);
    const auto& table = view == RegView::gpr32 ? kX86Gpr32 : kX86Gpr64;
    return "%" + std::string(table.at(static_cast<std::size_t>(reg.index)));
  }
  if (reg.cls == RegClass::fpr) return "d" + std::to_string(reg.index);
  return (view == RegView::gpr32 ? "w" : "x") + std::to_string(reg.index);
}

std::string register_name(Isa isa, Register reg) {
  return register_name(isa, reg, reg.cls == RegClass::fpr ? RegView::fp64 : RegView::gpr64);
}

std::optional<Register> parse_register(Isa isa, std::string_view name) {
  return isa == Isa::x86_64 ? parse_x86(name) : parse_aarch64(name);
}

namespace abi {

bool is_callee_saved(Isa isa, Register reg) {
  if (isa == Isa::x86_64) {
    if (reg.cls == RegClass::fpr) return false;
    return reg.index == 3 || reg.index == kX86Rbp || (reg.index >= 12 && reg.index <= 15);
  }
  if (reg.cls == RegClass::fpr) return reg.index >= 8 && reg.index <= 15;
  return reg.index >= 19 && reg.index <= 29;
}

const std::vector<Register>& allocation_order(Isa isa, RegClass cls) {
  // rsp/rbp, x18 (platform), x29/x30 and sp are never handed out.
  static const std::vector<Register> x86_gpr =
      make_list(RegClass::gpr, {11, 10, 9, 8, 7, 6, 2, 1, 0, 15, 14, 13, 12, 3});
  static const std::vector<Register> x86_fpr = make_list(
      RegClass::fpr, {15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0});
  static const std::vector<Register> a64_gpr = make_list(
      RegClass::gpr, {15, 14, 13, 12, 11, 10, 9, 17, 16, 8, 7, 6, 5, 4, 3, 2, 1, 0,
                      28, 27, 26, 25, 24, 23, 22, 21, 20, 19});
  static const std::vector<Register> a64_fpr = make_list(
      RegClass::fpr, {31, 30, 29, 28, 27, 26, 25, 24, 23, 22, 21, 20, 19, 18, 17, 16,
                      7,  6,  5,  4,  3,  2,  1,  0,  15, 14, 13, 12, 11, 10, 9,  8});
  if (isa == Isa::x86_64) return cls == RegClass::gpr ? x86_gpr : x86_fpr;
  return cls == RegClass::gpr ? a64_gpr : a64_fpr;
}

const std::vector<Register>& argument_registers(Isa isa) {
  static const std::vector<Register> x86 = [] {
    auto v = make_list(RegClass::gpr, {7, 6, 2, 1, 8, 9, 0});  // rax: vararg count
    auto f = make_list(RegClass::fpr, {0, 1, 2, 3, 4, 5, 6, 7});
    v.insert(v.end(), f.begin(), f.end());
    return v;
  }();
  static const std::vector<Register> a64 = [] {
    auto v = make_list(RegClass::gpr, {0, 1, 2, 3, 4, 5, 6, 7, 8});  // x8: indirect result
    auto f = make_list(RegClass::fpr, {0, 1, 2, 3, 4, 5, 6, 7});
    v.insert(v.end(), f.begin(), f.end());
    return v;
  }();
  return isa == Isa::x86_64 ? x86 : a64;
}

const std::vector<Register>& return_registers(Isa isa) {
  static const std::vector<Register> x86 = [] {
    auto v = make_list(RegClass::gpr, {0, 2});
    auto f = make_list(RegClass::fpr, {0, 1});
    v.insert(v.end(), f.begin(), f.end());
    return v;
  }();
  static const std::vector<Register> a64 = [] {
    auto v = make_list(RegClass::gpr, {0, 1, 2, 3, 4, 5, 6, 7});
    auto f = make_list(RegClass::fpr, {0, 1, 2, 3, 4, 5, 6, 7});
    v.insert(v.end(), f.begin(), f.end());
    return v;
  }();
  return isa == Isa::x86_64 ? x86 : a64;
}

std::size_t register_count(Isa isa, RegClass cls) {
  if (isa == Isa::x86_64) return 16;
  return cls == RegClass::gpr ? 31 : 32;
}

}  // namespace abi

}  // namespace noise
