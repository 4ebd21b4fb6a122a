#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "noise/isa.hpp"

namespace noise {

enum class LineKind { blank, comment, directive, label, instruction };

/// One machine instruction as written in the source (a line may hold several
/// `;`-separated statements).
struct Instruction {
  std::string text;      // whitespace-normalized statement, comment stripped
  std::string mnemonic;  // lower case
  std::string operands;
};

struct AsmLine {
  std::string text;  // verbatim, without the trailing newline
  LineKind kind = LineKind::blank;
  std::vector<std::string> labels;  // labels defined on this line
  std::vector<Instruction> instructions;
  std::string comment;  // comment text including its leader, if any
};

struct LineSpan {
  std::size_t first = 0;
  std::size_t last = 0;

  bool contains(std::size_t line) const { return line >= first && line <= last; }
  bool operator==(const LineSpan&) const = default;
};

struct FunctionRange {
  std::string name;
  LineSpan lines;  // label line through the last line of the body
};

enum class BranchKind { none, unconditional, conditional, indirect, call, ret };

struct BranchInfo {
  BranchKind kind = BranchKind::none;
  std::optional<std::string> target;  // direct target symbol
};

/// Parsed GNU-assembler text. Line indices are zero-based and refer to the
/// original text; str() reproduces the input byte for byte.
class AsmFile {
public:
  static AsmFile parse(std::string_view text, std::optional<Isa> isa = std::nullopt);

  Isa isa() const { return isa_; }
  const std::vector<AsmLine>& lines() const { return lines_; }
  std::string str() const;

  std::optional<std::size_t> label_line(std::string_view name) const;
  const std::vector<FunctionRange>& functions() const { return functions_; }
  const FunctionRange* function_named(std::string_view name) const;
  const FunctionRange* function_containing(std::size_t line) const;

  std::size_t instruction_count(LineSpan span) const;

private:
  Isa isa_ = Isa::x86_64;
  std::vector<AsmLine> lines_;
  bool trailing_newline_ = false;
  std::map<std::string, std::size_t, std::less<>> labels_;
  std::vector<FunctionRange> functions_;
};

/// Heuristic ISA detection from register spellings and comment style.
Isa detect_isa(std::string_view text);

/// Splits one source line into labels, instructions and comment.
AsmLine parse_line(std::string_view line, Isa isa);

BranchInfo classify_branch(Isa isa, const Instruction& ins);

/// Registers named explicitly in the operands plus the implicit operands of the
/// mnemonic (cqto, div, rep movs, syscall, ...). Branch targets are skipped.
std::set<Register> registers_mentioned(Isa isa, const Instruction& ins);

bool is_memory_store(Isa isa, const Instruction& ins);

/// Privileged or serializing instructions (svc, msr, syscall, cpuid, ...).
/// `mrs <reg>, tpidr_el0` (thread-pointer read) is not counted as one.
bool is_system_instruction(Isa isa, const Instruction& ins);

/// True for labels that belong to the file-local namespace (.L*, .LBB*).
bool is_local_label(std::string_view name);

}  // namespace noise
