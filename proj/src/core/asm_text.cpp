#include "noise/asm_text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>

namespace noise {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

bool is_label_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$';
}

bool is_label_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$' ||
         c == '@';
}

// Position where the comment starts, or npos. Quoted strings are skipped.
std::size_t comment_start(std::string_view line, Isa isa) {
  bool in_string = false;
  const auto first = line.find_first_not_of(" \t");
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      continue;
    }
    if (c == '/' && i + 1 < line.size() && line[i + 1] == '/') return i;
    if (c == '#' && (isa == Isa::x86_64 || i == first)) return i;
  }
  return std::string_view::npos;
}

std::vector<std::string_view> split_statements(std::string_view code) {
  std::vector<std::string_view> out;
  bool in_string = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    char c = code[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == ';') {
      out.push_back(code.substr(start, i - start));
      start = i + 1;
    }
  }
  out.push_back(code.substr(start));
  return out;
}

// Splits an operand list on top-level commas (outside (), [] and {}).
std::vector<std::string> split_operands(std::string_view ops) {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    char c = ops[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    else if (c == ')' || c == ']' || c == '}') --depth;
    else if (c == ',' && depth == 0) {
      out.emplace_back(trim(ops.substr(start, i - start)));
      start = i + 1;
    }
  }
  auto last = trim(ops.substr(start));
  if (!last.empty() || !out.empty()) out.emplace_back(last);
  return out;
}

constexpr std::array<std::string_view, 10> kX86Prefixes = {
    "rep", "repe", "repz", "repne", "repnz", "lock", "notrack", "bnd", "data16", "addr32"};

bool is_x86_prefix(std::string_view m) {
  return std::find(kX86Prefixes.begin(), kX86Prefixes.end(), m) != kX86Prefixes.end();
}

Instruction make_instruction(std::string_view stmt, Isa isa) {
  Instruction ins;
  ins.text = collapse_spaces(stmt);
  std::string_view rest = ins.text;
  // Mnemonic is the first word after any x86 prefixes.
  while (true) {
    auto sp = rest.find(' ');
    std::string word = lower(rest.substr(0, sp));
    rest = sp == std::string_view::npos ? std::string_view{} : rest.substr(sp + 1);
    if (isa == Isa::x86_64 && is_x86_prefix(word) && !rest.empty()) continue;
    ins.mnemonic = std::move(word);
    break;
  }
  ins.operands = std::string(trim(rest));
  return ins;
}

bool has_rep_prefix(const Instruction& ins) {
  auto sp = ins.text.find(' ');
  std::string first = lower(std::string_view(ins.text).substr(0, sp));
  return first.starts_with("rep");
}

std::string strip_symbol_suffix(std::string_view s) {
  s = trim(s);
  auto at = s.find('@');
  if (at != std::string_view::npos) s = s.substr(0, at);
  return std::string(trim(s));
}

bool one_of(std::string_view m, std::initializer_list<std::string_view> set) {
  return std::find(set.begin(), set.end(), m) != set.end();
}

// Strips a trailing AT&T size suffix when the remainder is one of `bases`.
bool matches_sized(std::string_view m, std::initializer_list<std::string_view> bases) {
  if (one_of(m, bases)) return true;
  if (m.size() < 2) return false;
  char last = m.back();
  if (last != 'b' && last != 'w' && last != 'l' && last != 'q') return false;
  return one_of(m.substr(0, m.size() - 1), bases);
}

bool is_x86_string_op(const Instruction& ins) {
  const std::string& m = ins.mnemonic;
  static const std::regex string_op("^(movs|stos|lods|scas|cmps|ins|outs)[bwlq]?$");
  if (!std::regex_match(m, string_op)) return false;
  // movsd / cmpsd with register operands are SSE instructions.
  return has_rep_prefix(ins) || ins.operands.empty() ||
         ins.operands.find("%xmm") == std::string::npos;
}

void add_all(std::set<Register>& out, RegClass cls, std::initializer_list<int> idx) {
  for (int i : idx) out.insert(Register{cls, i});
}

void add_list(std::set<Register>& out, const std::vector<Register>& regs) {
  out.insert(regs.begin(), regs.end());
}

std::set<Register> x86_registers(const Instruction& ins) {
  std::set<Register> out;
  const std::string& ops = ins.operands;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] != '%') continue;
    std::size_t j = i + 1;
    while (j < ops.size() && std::isalnum(static_cast<unsigned char>(ops[j]))) ++j;
    if (auto r = parse_register(Isa::x86_64, std::string_view(ops).substr(i, j - i))) {
      out.insert(*r);
    }
    i = j - 1;
  }
  const std::string& m = ins.mnemonic;
  constexpr int rax = 0, rcx = 1, rdx = 2, rbx = 3, rsi = 6, rdi = 7;
  if (one_of(m, {"cltq", "cwtl", "cbtw", "cdqe", "cwde", "cbw"})) add_all(out, RegClass::gpr, {rax});
  if (one_of(m, {"cqto", "cltd", "cwtd", "cqo", "cdq", "cwd"})) {
    add_all(out, RegClass::gpr, {rax, rdx});
  }
  if (matches_sized(m, {"div", "idiv", "mul"})) add_all(out, RegClass::gpr, {rax, rdx});
  if (matches_sized(m, {"imul"}) && split_operands(ins.operands).size() == 1) {
    add_all(out, RegClass::gpr, {rax, rdx});
  }
  if (m.starts_with("mulx")) add_all(out, RegClass::gpr, {rdx});
  if (matches_sized(m, {"cmpxchg"})) add_all(out, RegClass::gpr, {rax});
  if (one_of(m, {"cmpxchg16b", "cmpxchg8b"})) add_all(out, RegClass::gpr, {rax, rbx, rcx, rdx});
  if (is_x86_string_op(ins)) add_all(out, RegClass::gpr, {rax, rcx, rsi, rdi});
  if (one_of(m, {"xlat", "xlatb"})) add_all(out, RegClass::gpr, {rax, rbx});
  if (m == "cpuid") add_all(out, RegClass::gpr, {rax, rbx, rcx, rdx});
  if (m == "rdtsc" || m == "rdpmc" || m == "rdmsr" || m == "wrmsr" || m == "xgetbv") {
    add_all(out, RegClass::gpr, {rax, rcx, rdx});
  }
  if (m == "rdtscp") add_all(out, RegClass::gpr, {rax, rcx, rdx});
  if (m == "syscall") add_all(out, RegClass::gpr, {rax, rdi, rsi, rdx, 10, 8, 9, rcx, 11});
  if (m.starts_with("loop") || m == "jrcxz" || m == "jecxz") add_all(out, RegClass::gpr, {rcx});
  if (m == "vzeroall") {
    for (int i = 0; i < 16; ++i) out.insert(Register{RegClass::fpr, i});
  }
  if (m == "call" || m == "callq") add_list(out, abi::argument_registers(Isa::x86_64));
  if (m == "ret" || m == "retq" || m == "retl") add_list(out, abi::return_registers(Isa::x86_64));
  return out;
}

void add_a64_token(std::set<Register>& out, std::string_view tok) {
  if (tok.empty() || tok.find(':') != std::string_view::npos) return;
  auto dash = tok.find('-');
  if (dash != std::string_view::npos) {
    // Register list range: v0.4s-v3.4s
    auto a = parse_register(Isa::aarch64, tok.substr(0, dash));
    auto b = parse_register(Isa::aarch64, tok.substr(dash + 1));
    if (a && b && a->cls == b->cls) {
      for (int i = a->index;; i = (i + 1) % 32) {
        out.insert(Register{a->cls, i});
        if (i == b->index) break;
      }
      return;
    }
    add_a64_token(out, tok.substr(0, dash));
    add_a64_token(out, tok.substr(dash + 1));
    return;
  }
  if (auto r = parse_register(Isa::aarch64, tok)) out.insert(*r);
}

std::set<Register> a64_registers(const Instruction& ins) {
  std::set<Register> out;
  const std::string& m = ins.mnemonic;
  auto ops = split_operands(ins.operands);
  std::size_t n = ops.size();
  const auto branch = classify_branch(Isa::aarch64, ins);
  // Direct branch targets and address-computation symbols are not registers.
  if (branch.target && n > 0) --n;
  if ((m == "adrp" || m == "adr") && n > 1) n = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& op = ops[i];
    if (op.starts_with("=")) continue;  // literal-pool pseudo operand
    std::size_t start = 0;
    for (std::size_t j = 0; j <= op.size(); ++j) {
      char c = j < op.size() ? op[j] : ' ';
      if (is_space(c) || c == '[' || c == ']' || c == '{' || c == '}' || c == '!' || c == '#' ||
          c == ',') {
        add_a64_token(out, std::string_view(op).substr(start, j - start));
        start = j + 1;
      }
    }
  }
  if (branch.kind == BranchKind::call) add_list(out, abi::argument_registers(Isa::aarch64));
  if (branch.kind == BranchKind::ret) add_list(out, abi::return_registers(Isa::aarch64));
  if (m == "svc") add_all(out, RegClass::gpr, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  return out;
}

}  // namespace

bool is_local_label(std::string_view name) {
  return name.starts_with(".L") || name.starts_with("L") || name.starts_with(".l");
}

AsmLine parse_line(std::string_view line, Isa isa) {
  AsmLine out;
  out.text = std::string(line);
  std::string_view code = line;
  if (auto c = comment_start(line, isa); c != std::string_view::npos) {
    out.comment = std::string(trim(line.substr(c)));
    code = line.substr(0, c);
  }
  bool has_directive = false;
  for (auto stmt : split_statements(code)) {
    stmt = trim(stmt);
    // Leading labels: name: [name: ...] rest
    while (!stmt.empty()) {
      std::size_t i = 0;
      if (std::isdigit(static_cast<unsigned char>(stmt[0]))) {
        while (i < stmt.size() && std::isdigit(static_cast<unsigned char>(stmt[i]))) ++i;
      } else if (is_label_start(stmt[0])) {
        while (i < stmt.size() && is_label_char(stmt[i])) ++i;
      } else {
        break;
      }
      if (i < stmt.size() && stmt[i] == ':' && i > 0) {
        out.labels.emplace_back(stmt.substr(0, i));
        stmt = trim(stmt.substr(i + 1));
      } else {
        break;
      }
    }
    if (stmt.empty()) continue;
    if (stmt.front() == '.') {
      has_directive = true;
      continue;
    }
    // `sym = expr` assignments are directives too.
    static const std::regex assignment(R"(^[A-Za-z_.$][A-Za-z0-9_.$]*\s*=)");
    if (std::regex_search(stmt.begin(), stmt.end(), assignment)) {
      has_directive = true;
      continue;
    }
    out.instructions.push_back(make_instruction(stmt, isa));
  }
  if (!out.instructions.empty()) out.kind = LineKind::instruction;
  else if (has_directive) out.kind = LineKind::directive;
  else if (!out.labels.empty()) out.kind = LineKind::label;
  else if (!out.comment.empty()) out.kind = LineKind::comment;
  else out.kind = LineKind::blank;
  return out;
}

Isa detect_isa(std::string_view text) {
  static const std::regex x86_hint(R"(%(r[a-z0-9]+|e[a-z]{2}|xmm\d+|ymm\d+|rip)\b)");
  static const std::regex a64_hint(R"(\b(x([0-9]|[12][0-9]|30)|adrp|ldr|str|b\.[a-z]{2}|cbn?z)\b)");
  std::string s(text.substr(0, std::min<std::size_t>(text.size(), 1 << 16)));
  const bool x86 = std::regex_search(s, x86_hint);
  const bool a64 = std::regex_search(s, a64_hint);
  if (a64 && !x86) return Isa::aarch64;
  return Isa::x86_64;
}

AsmFile AsmFile::parse(std::string_view text, std::optional<Isa> isa) {
  AsmFile f;
  f.isa_ = isa.value_or(detect_isa(text));
  f.trailing_newline_ = !text.empty() && text.back() == '\n';
  std::string_view rest = text;
  if (f.trailing_newline_) rest.remove_suffix(1);
  if (!text.empty()) {
    std::size_t start = 0;
    while (true) {
      auto nl = rest.find('\n', start);
      auto line = rest.substr(start, nl == std::string_view::npos ? std::string_view::npos
                                                                  : nl - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      f.lines_.push_back(parse_line(line, f.isa_));
      if (nl == std::string_view::npos) break;
      start = nl + 1;
    }
  }

  std::vector<std::string> typed;
  std::map<std::string, std::size_t, std::less<>> size_lines;
  static const std::regex type_re(R"(^\s*\.type\s+([^,\s]+)\s*,\s*[@%]function)");
  static const std::regex size_re(R"(^\s*\.size\s+([^,\s]+)\s*,)");
  for (std::size_t i = 0; i < f.lines_.size(); ++i) {
    const auto& line = f.lines_[i];
    for (const auto& l : line.labels) f.labels_.try_emplace(l, i);
    if (line.kind != LineKind::directive) continue;
    std::smatch m;
    if (std::regex_search(line.text, m, type_re)) typed.push_back(m[1]);
    else if (std::regex_search(line.text, m, size_re)) size_lines.try_emplace(m[1], i);
  }

  std::vector<std::pair<std::size_t, std::string>> starts;
  if (!typed.empty()) {
    for (const auto& name : typed) {
      if (auto it = f.labels_.find(name); it != f.labels_.end()) {
        starts.emplace_back(it->second, name);
      }
    }
  } else {
    for (const auto& [name, line] : f.labels_) {
      if (!is_local_label(name) && !std::isdigit(static_cast<unsigned char>(name[0]))) {
        starts.emplace_back(line, name);
      }
    }
  }
  std::sort(starts.begin(), starts.end());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const auto& [first, name] = starts[i];
    std::size_t last = i + 1 < starts.size() ? starts[i + 1].first - 1
                                             : (f.lines_.empty() ? 0 : f.lines_.size() - 1);
    if (auto it = size_lines.find(name); it != size_lines.end() && it->second >= first) {
      last = std::min(last, it->second);
    }
    f.functions_.push_back(FunctionRange{name, {first, last}});
  }
  return f;
}

std::string AsmFile::str() const {
  std::string out;
  for (std::size_t i = 0; i < lines_.size(); ++i) {
    out += lines_[i].text;
    if (i + 1 < lines_.size() || trailing_newline_) out += '\n';
  }
  return out;
}

std::optional<std::size_t> AsmFile::label_line(std::string_view name) const {
  auto it = labels_.find(name);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

const FunctionRange* AsmFile::function_named(std::string_view name) const {
  for (const auto& fn : functions_) {
    if (fn.name == name) return &fn;
  }
  return nullptr;
}

const FunctionRange* AsmFile::function_containing(std::size_t line) const {
  for (const auto& fn : functions_) {
    if (fn.lines.contains(line)) return &fn;
  }
  return nullptr;
}

std::size_t AsmFile::instruction_count(LineSpan span) const {
  std::size_t n = 0;
  for (std::size_t i = span.first; i <= span.last && i < lines_.size(); ++i) {
    n += lines_[i].instructions.size();
  }
  return n;
}

BranchInfo classify_branch(Isa isa, const Instruction& ins) {
  BranchInfo b;
  const std::string& m = ins.mnemonic;
  const auto ops = split_operands(ins.operands);
  auto direct = [&](std::string_view op) -> std::optional<std::string> {
    if (op.empty() || op.front() == '*' || op.front() == '%') return std::nullopt;
    return strip_symbol_suffix(op);
  };
  if (isa == Isa::x86_64) {
    if (m == "jmp" || m == "jmpq") {
      b.target = ops.empty() ? std::nullopt : direct(ops.front());
      b.kind = b.target ? BranchKind::unconditional : BranchKind::indirect;
    } else if (m.size() > 1 && m[0] == 'j') {
      b.kind = BranchKind::conditional;
      if (!ops.empty()) b.target = direct(ops.front());
    } else if (m.starts_with("loop")) {
      b.kind = BranchKind::conditional;
      if (!ops.empty()) b.target = direct(ops.front());
    } else if (m == "call" || m == "callq") {
      b.kind = BranchKind::call;
      if (!ops.empty()) b.target = direct(ops.front());
    } else if (m == "ret" || m == "retq" || m == "retl") {
      b.kind = BranchKind::ret;
    }
    return b;
  }
  static const std::regex cond_b(
      "^bc?\\.?(eq|ne|cs|hs|cc|lo|mi|pl|vs|vc|hi|ls|ge|lt|gt|le|al|nv)$");
  if (m == "b") {
    b.kind = BranchKind::unconditional;
    if (!ops.empty()) b.target = strip_symbol_suffix(ops.back());
  } else if (std::regex_match(m, cond_b) || m == "cbz" || m == "cbnz" || m == "tbz" ||
             m == "tbnz") {
    b.kind = BranchKind::conditional;
    if (!ops.empty()) b.target = strip_symbol_suffix(ops.back());
  } else if (m == "bl") {
    b.kind = BranchKind::call;
    if (!ops.empty()) b.target = strip_symbol_suffix(ops.back());
  } else if (m == "blr" || m.starts_with("blra")) {
    b.kind = BranchKind::call;
  } else if (m == "br" || m.starts_with("bra")) {
    b.kind = BranchKind::indirect;
  } else if (m == "ret" || m == "retaa" || m == "retab") {
    b.kind = BranchKind::ret;
  }
  return b;
}

std::set<Register> registers_mentioned(Isa isa, const Instruction& ins) {
  return isa == Isa::x86_64 ? x86_registers(ins) : a64_registers(ins);
}

bool is_memory_store(Isa isa, const Instruction& ins) {
  const std::string& m = ins.mnemonic;
  if (isa == Isa::aarch64) {
    static const std::regex store(
        "^(st[a-z0-9]*|swp[a-z]*|cas[a-z]*|ld(add|clr|eor|set|smax|smin|umax|umin)[a-z]*)$");
    if (std::regex_match(m, store)) return true;
    return m == "dc" && lower(ins.operands).starts_with("zva");
  }
  if (m.starts_with("push") || m == "call" || m == "callq") return true;
  if (is_x86_string_op(ins)) {
    return !(m.starts_with("lods") || m.starts_with("scas") || m.starts_with("cmps") ||
             m.starts_with("outs"));
  }
  const auto ops = split_operands(ins.operands);
  if (ops.empty()) return false;
  const std::string& dst = ops.back();
  const bool memory = !dst.empty() && dst.front() != '%' && dst.front() != '$' &&
                      dst.front() != '*';
  if (!memory) return false;
  if (classify_branch(isa, ins).kind != BranchKind::none) return false;
  if (ops.size() == 1) {
    static const std::regex rmw1(
        "^(inc|dec|neg|not|pop|set[a-z]+|fst[a-z]*|fist[a-z]*|fnst[a-z]*|stmxcsr|vstmxcsr|"
        "fxsave[a-z0-9]*|xsave[a-z0-9]*|clflush[a-z]*|clwb)[bwlq]?$");
    return std::regex_match(m, rmw1);
  }
  static const std::regex read_only(
      "^(cmp|test|bt|ucomis|comis|vucomis|vcomis|ptest|vptest|prefetch|lea|nop|"
      "bound)[a-z0-9]*$");
  if (std::regex_match(m, read_only)) {
    // bts/btr/btc write their memory operand.
    return m.starts_with("bts") || m.starts_with("btr") || m.starts_with("btc");
  }
  return true;
}

bool is_system_instruction(Isa isa, const Instruction& ins) {
  const std::string& m = ins.mnemonic;
  if (isa == Isa::aarch64) {
    if (m == "mrs") {
      return lower(ins.operands).find("tpidr_el0") == std::string::npos;
    }
    return one_of(m, {"svc", "hvc", "smc", "msr", "sys", "sysl", "isb", "dsb", "dmb", "eret",
                      "brk", "hlt", "wfi", "wfe", "sev", "sevl", "hint", "tlbi", "ic", "dc",
                      "at", "clrex", "udf"});
  }
  return one_of(m, {"syscall", "sysenter", "sysexit", "sysret", "int", "int3", "into",
                    "cpuid", "rdtsc", "rdtscp", "rdmsr", "wrmsr", "rdpmc", "hlt", "in", "inb",
                    "inw", "inl", "out", "outb", "outw", "outl", "cli", "sti", "lgdt", "lidt",
                    "invlpg", "wbinvd", "xgetbv", "xsetbv", "swapgs", "iret", "iretq", "ud2",
                    "lfence", "mfence", "sfence"});
}

}  // namespace noise
