#include "noise/injector.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "noise/error.hpp"

namespace noise {

namespace {

constexpr std::string_view kProbePrefix = "noise_probe_";

struct LoopShape {
  const FunctionRange* fn = nullptr;
  LineSpan span;
  std::size_t prologue_at = 0;  // insert before this line
  bool back_branch_conditional = false;
  bool has_call = false;
};

std::string anchor_id(const AsmLine& line) {
  if (line.comment.empty()) return {};
  auto pos = line.comment.find(markers::anchor);
  if (pos == std::string::npos) return {};
  std::string_view rest = std::string_view(line.comment).substr(pos + markers::anchor.size());
  std::size_t n = 0;
  while (n < rest.size() && (std::isalnum(static_cast<unsigned char>(rest[n])) ||
                             rest[n] == '_' || rest[n] == '-' || rest[n] == '.')) {
    ++n;
  }
  return std::string(rest.substr(0, n));
}

bool is_marker(const AsmLine& line, std::string_view which) {
  return line.kind == LineKind::comment && line.comment.find(which) != std::string::npos;
}

// Lines inside NOISE_INJECTED fragments.
std::vector<bool> injected_mask(const AsmFile& file) {
  std::vector<bool> mask(file.lines().size(), false);
  bool inside = false;
  for (std::size_t i = 0; i < file.lines().size(); ++i) {
    const auto& line = file.lines()[i];
    if (is_marker(line, markers::begin)) inside = true;
    mask[i] = inside;
    if (is_marker(line, markers::end)) inside = false;
  }
  return mask;
}

std::optional<std::size_t> target_line(const AsmFile& file, const BranchInfo& b) {
  if (!b.target) return std::nullopt;
  return file.label_line(*b.target);
}

bool is_probe_call(Isa isa, const Instruction& ins) {
  auto b = classify_branch(isa, ins);
  return b.kind == BranchKind::call && b.target && b.target->starts_with(kProbePrefix);
}

// Does `ins` write one of the argument registers (and nothing else of note)?
bool is_argument_setup(Isa isa, const Instruction& ins) {
  if (classify_branch(isa, ins).kind != BranchKind::none) return false;
  if (is_memory_store(isa, ins)) return false;
  std::string dst;
  if (isa == Isa::x86_64) {
    auto comma = ins.operands.rfind(',');
    if (comma == std::string::npos) return false;
    dst = ins.operands.substr(comma + 1);
  } else {
    dst = ins.operands.substr(0, ins.operands.find(','));
  }
  dst.erase(std::remove_if(dst.begin(), dst.end(), ::isspace), dst.end());
  auto reg = parse_register(isa, dst);
  if (!reg) return false;
  const auto& args = abi::argument_registers(isa);
  return std::find(args.begin(), args.end(), *reg) != args.end();
}

struct LoopSize {
  std::size_t size = 0;
  std::size_t probe_excluded = 0;
};

LoopSize measure_loop(const AsmFile& file, LineSpan span) {
  const auto mask = injected_mask(file);
  std::vector<const Instruction*> seq;
  for (std::size_t i = span.first; i <= span.last; ++i) {
    if (mask[i]) continue;
    for (const auto& ins : file.lines()[i].instructions) seq.push_back(&ins);
  }
  std::vector<bool> excluded(seq.size(), false);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!is_probe_call(file.isa(), *seq[i])) continue;
    excluded[i] = true;
    for (std::size_t j = i; j-- > 0 && !excluded[j] && is_argument_setup(file.isa(), *seq[j]);) {
      excluded[j] = true;
    }
  }
  LoopSize out;
  out.probe_excluded = static_cast<std::size_t>(std::count(excluded.begin(), excluded.end(), true));
  out.size = seq.size() - out.probe_excluded;
  return out;
}

LoopShape find_loop(const AsmFile& file, std::size_t anchor, std::string_view id) {
  const auto& lines = file.lines();
  const FunctionRange* fn = file.function_containing(anchor);
  if (!fn) {
    throw Error(ErrorCode::AnchorOutsideLoop, "anchor '" + std::string(id) + "' is not inside a function");
  }
  std::optional<LineSpan> best;
  bool conditional = false;
  for (std::size_t i = anchor + 1; i <= fn->lines.last; ++i) {
    for (const auto& ins : lines[i].instructions) {
      auto b = classify_branch(file.isa(), ins);
      if (b.kind != BranchKind::conditional && b.kind != BranchKind::unconditional) continue;
      auto t = target_line(file, b);
      if (!t || *t >= anchor || *t < fn->lines.first) continue;
      if (!best || i - *t < best->last - best->first) {
        best = LineSpan{*t, i};
        conditional = b.kind == BranchKind::conditional;
      }
    }
  }
  if (!best) {
    throw Error(ErrorCode::AnchorOutsideLoop,
                "anchor '" + std::string(id) + "' has no enclosing backward branch in " + fn->name);
  }
  LoopShape shape;
  shape.fn = fn;
  shape.span = *best;
  shape.back_branch_conditional = conditional;

  // Prologue goes before any alignment padding ahead of the header label.
  std::size_t p = best->first;
  while (p > fn->lines.first) {
    auto kind = lines[p - 1].kind;
    if (kind != LineKind::blank && kind != LineKind::comment && kind != LineKind::directive) break;
    --p;
  }
  shape.prologue_at = p;

  // A single unconditional jump into the span right before it is the loop entry
  // (compilers that test the condition at the bottom emit this).
  std::optional<std::size_t> entry_jump;
  if (p > 0) {
    std::size_t q = p - 1;
    const auto& prev = lines[q];
    if (prev.kind == LineKind::instruction) {
      auto b = classify_branch(file.isa(), prev.instructions.back());
      auto t = target_line(file, b);
      if (b.kind == BranchKind::unconditional && t && best->contains(*t)) {
        if (!prev.labels.empty()) {
          throw Error(ErrorCode::AnchorOutsideLoop,
                      "loop entry jump for '" + std::string(id) + "' is itself a branch target");
        }
        entry_jump = q;
        shape.prologue_at = q;
        while (shape.prologue_at > fn->lines.first &&
               (lines[shape.prologue_at - 1].kind == LineKind::directive ||
                lines[shape.prologue_at - 1].kind == LineKind::comment ||
                lines[shape.prologue_at - 1].kind == LineKind::blank)) {
          --shape.prologue_at;
        }
      }
    }
  }

  for (std::size_t i = fn->lines.first; i <= fn->lines.last; ++i) {
    if (best->contains(i) || (entry_jump && i == *entry_jump)) continue;
    for (const auto& ins : lines[i].instructions) {
      auto t = target_line(file, classify_branch(file.isa(), ins));
      if (t && best->contains(*t)) {
        throw Error(ErrorCode::AnchorOutsideLoop,
                    "loop around '" + std::string(id) + "' has a second entry from line " +
                        std::to_string(i + 1));
      }
    }
  }
  for (std::size_t i = best->first; i <= best->last; ++i) {
    for (const auto& ins : lines[i].instructions) {
      if (classify_branch(file.isa(), ins).kind == BranchKind::call) shape.has_call = true;
    }
  }
  return shape;
}

// Insert position for the restore code: after the labels the loop exits to.
std::size_t find_exit_point(const AsmFile& file, const LoopShape& shape, std::string_view id) {
  const auto& lines = file.lines();
  const auto span = shape.span;
  std::size_t e = span.last + 1;
  std::set<std::string, std::less<>> exit_labels;
  std::size_t after_labels = e;
  for (std::size_t i = e; i < lines.size() && i <= shape.fn->lines.last; ++i) {
    auto kind = lines[i].kind;
    if (kind == LineKind::label) {
      exit_labels.insert(lines[i].labels.begin(), lines[i].labels.end());
      after_labels = i + 1;
    } else if (kind != LineKind::blank && kind != LineKind::comment &&
               kind != LineKind::directive) {
      break;
    }
  }
  auto fail = [&](const std::string& why) -> std::size_t {
    throw Error(ErrorCode::MalformedAssembly,
                "cannot place restore code for loop around '" + std::string(id) + "': " + why);
  };
  bool exits_to_label = false;
  for (std::size_t i = span.first; i <= span.last; ++i) {
    for (const auto& ins : lines[i].instructions) {
      auto b = classify_branch(file.isa(), ins);
      if (b.kind == BranchKind::ret) fail("return inside loop");
      if (b.kind == BranchKind::indirect) fail("indirect branch inside loop");
      if (b.kind != BranchKind::conditional && b.kind != BranchKind::unconditional) continue;
      auto t = target_line(file, b);
      if (t && span.contains(*t)) continue;
      if (!b.target || !exit_labels.contains(*b.target)) {
        fail("side exit to " + b.target.value_or("?") + " at line " + std::to_string(i + 1));
      }
      exits_to_label = true;
    }
  }
  // Only the fall-through leaves the loop: restore right after the back
  // branch, so paths that skip the loop (guards) also skip the restore.
  if (!exits_to_label) return e;
  for (std::size_t i = shape.fn->lines.first; i <= shape.fn->lines.last; ++i) {
    if (span.contains(i)) continue;
    for (const auto& ins : lines[i].instructions) {
      auto b = classify_branch(file.isa(), ins);
      if (b.target && exit_labels.contains(*b.target)) {
        fail("loop exit label is also reached from line " + std::to_string(i + 1));
      }
    }
  }
  return after_labels;
}

struct FunctionLevelSaves {
  std::size_t entry_at = 0;
  std::vector<std::size_t> exits;  // insert before each of these lines
};

// Save at function entry and restore before every return. Only valid for leaf
// functions whose control leaves through plain `ret` lines.
std::optional<FunctionLevelSaves> function_level_points(const AsmFile& file,
                                                        const FunctionRange& fn) {
  const auto& lines = file.lines();
  FunctionLevelSaves out;
  std::optional<std::size_t> first_ins;
  for (std::size_t i = fn.lines.first + 1; i <= fn.lines.last; ++i) {
    if (lines[i].kind == LineKind::instruction || lines[i].kind == LineKind::label) {
      first_ins = i;
      break;
    }
  }
  if (!first_ins || lines[*first_ins].kind != LineKind::instruction ||
      !lines[*first_ins].labels.empty()) {
    return std::nullopt;
  }
  const auto& m = lines[*first_ins].instructions.front().mnemonic;
  const bool landing_pad = m == "endbr64" || m == "bti" ||
                           (m == "hint" && lines[*first_ins].instructions.front().operands != "#0");
  out.entry_at = landing_pad ? *first_ins + 1 : *first_ins;
  for (std::size_t i = fn.lines.first; i <= fn.lines.last; ++i) {
    for (const auto& ins : lines[i].instructions) {
      auto b = classify_branch(file.isa(), ins);
      if (b.kind == BranchKind::call || b.kind == BranchKind::indirect) return std::nullopt;
      if ((b.kind == BranchKind::unconditional || b.kind == BranchKind::conditional) &&
          (!b.target || !file.label_line(*b.target))) {
        return std::nullopt;  // tail call
      }
      if (b.kind == BranchKind::ret) {
        if (!lines[i].labels.empty() || lines[i].instructions.size() != 1) return std::nullopt;
        out.exits.push_back(i);
      }
    }
  }
  if (out.exits.empty()) return std::nullopt;
  return out;
}

std::set<Register> registers_in(const AsmFile& file, LineSpan span, bool* has_call,
                                bool* has_ret) {
  std::set<Register> used;
  for (std::size_t i = span.first; i <= span.last && i < file.lines().size(); ++i) {
    for (const auto& ins : file.lines()[i].instructions) {
      auto regs = registers_mentioned(file.isa(), ins);
      used.insert(regs.begin(), regs.end());
      auto b = classify_branch(file.isa(), ins);
      if (has_call && b.kind == BranchKind::call) *has_call = true;
      if (has_ret && b.kind == BranchKind::ret) *has_ret = true;
      // A jump to a symbol outside the file is a tail call.
      if (has_call && (b.kind == BranchKind::unconditional || b.kind == BranchKind::indirect) &&
          (!b.target || !file.label_line(*b.target))) {
        *has_call = true;
      }
    }
  }
  return used;
}

bool function_uses(const AsmFile& file, const FunctionRange& fn, Register r) {
  return registers_in(file, fn.lines, nullptr, nullptr).contains(r);
}

std::vector<std::string> names(Isa isa, std::span<const Register> regs) {
  std::vector<std::string> out;
  for (const auto& r : regs) out.push_back(register_name(isa, r));
  return out;
}

std::string normalize(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

struct FlatInstruction {
  std::size_t line;
  const Instruction* ins;
};

std::vector<FlatInstruction> flatten(const AsmFile& file) {
  std::vector<FlatInstruction> out;
  for (std::size_t i = 0; i < file.lines().size(); ++i) {
    for (const auto& ins : file.lines()[i].instructions) out.push_back({i, &ins});
  }
  return out;
}

// Greedy ordered-subsequence match. Returns which entries of `after` are not
// matched, or nullopt when `before` is not a subsequence of `after`.
std::optional<std::vector<bool>> unmatched(const std::vector<FlatInstruction>& before,
                                           const std::vector<FlatInstruction>& after) {
  std::vector<bool> extra(after.size(), true);
  std::size_t j = 0;
  for (const auto& b : before) {
    const std::string want = normalize(b.ins->text);
    while (j < after.size() && normalize(after[j].ins->text) != want) ++j;
    if (j == after.size()) return std::nullopt;
    extra[j++] = false;
  }
  return extra;
}

Isa check_isa(std::string_view text, Isa expected) {
  // Only reject when the text clearly belongs to the other architecture.
  const Isa seen = detect_isa(text);
  if (seen != expected) {
    static const std::regex x86_hint(R"(%(r[a-z0-9]+|e[a-z]{2}|xmm\d+|rip)\b)");
    const bool has_x86 = std::regex_search(std::string(text), x86_hint);
    if (expected == Isa::x86_64 || has_x86) {
      throw Error(ErrorCode::UnsupportedIsa, "assembly text is " + std::string(to_string(seen)) +
                                                 ", pattern targets " +
                                                 std::string(to_string(expected)));
    }
  }
  return expected;
}

std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{}/)";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

std::string view_regex(Isa isa, RegView view) {
  if (isa == Isa::aarch64) {
    switch (view) {
      case RegView::gpr64: return "x\\d+";
      case RegView::gpr32: return "w\\d+";
      case RegView::fp64: return "d\\d+";
    }
  }
  switch (view) {
    case RegView::gpr64: return "%r\\w+";
    case RegView::gpr32: return "%\\w+";
    case RegView::fp64: return "%xmm\\d+";
  }
  return ".+";
}

// Builds a recognizer for one payload template: the first {r} captures the
// register, later ones must repeat it.
std::regex payload_regex(const NoisePattern& pattern, std::string_view tmpl) {
  std::string out = "^";
  bool captured = false;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.substr(i, 3) == "{r}") {
      out += captured ? "\\1" : "(" + view_regex(pattern.isa, pattern.pool_view) + ")";
      captured = true;
      i += 3;
    } else if (tmpl.substr(i, 3) == "{b}") {
      out += view_regex(pattern.isa, RegView::gpr64);
      i += 3;
    } else if (tmpl.substr(i, 5) == "{off}") {
      out += "\\d+";
      i += 5;
    } else if (tmpl[i] == ' ') {
      out += "\\s*";
      ++i;
    } else {
      out += regex_escape(tmpl.substr(i, 1));
      ++i;
    }
  }
  out += "$";
  return std::regex(out);
}

bool is_cross_file_move(Isa isa, const Instruction& ins) {
  auto regs = registers_mentioned(isa, ins);
  bool gpr = false, fpr = false;
  for (const auto& r : regs) (r.cls == RegClass::gpr ? gpr : fpr) = true;
  if (isa == Isa::aarch64) return ins.mnemonic == "fmov" && gpr && fpr;
  return (ins.mnemonic == "movq" || ins.mnemonic == "movd") && gpr && fpr;
}

}  // namespace

std::vector<InjectionSite> locate_anchors(const AsmFile& file, std::string_view file_name) {
  std::vector<InjectionSite> out;
  std::set<std::string, std::less<>> seen;
  const auto mask = injected_mask(file);
  for (std::size_t i = 0; i < file.lines().size(); ++i) {
    if (mask[i]) continue;
    std::string id = anchor_id(file.lines()[i]);
    if (id.empty()) continue;
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::DuplicateRegionId, "region id '" + id + "' appears more than once");
    }
    LoopShape shape = find_loop(file, i, id);
    InjectionSite site;
    site.region_id = id;
    site.file = std::string(file_name);
    site.function_symbol = shape.fn->name;
    site.anchor_line = i;
    site.loop_body_span = shape.span;
    auto size = measure_loop(file, shape.span);
    site.loop_body_size = size.size;
    site.probe_instructions_excluded = size.probe_excluded;
    out.push_back(std::move(site));
  }
  return out;
}

std::vector<InjectionSite> locate_anchors(std::string_view asm_text, std::string_view file_name,
                                          std::optional<Isa> isa) {
  return locate_anchors(AsmFile::parse(asm_text, isa), file_name);
}

RegisterScan scan_free_registers(const AsmFile& file, std::string_view function_symbol,
                                 RegClass cls, const ScanOptions& options) {
  const FunctionRange* fn = file.function_named(function_symbol);
  if (!fn) {
    throw Error(ErrorCode::MalformedAssembly,
                "function '" + std::string(function_symbol) + "' not found");
  }
  const Isa isa = file.isa();
  bool has_call = false, has_ret = false;
  auto used = registers_in(file, fn->lines, &has_call, &has_ret);
  if (has_call) {
    const auto& args = abi::argument_registers(isa);
    used.insert(args.begin(), args.end());
  }
  if (has_ret) {
    const auto& rets = abi::return_registers(isa);
    used.insert(rets.begin(), rets.end());
  }
  std::set<Register> used_in_loop;
  if (options.loop) used_in_loop = registers_in(file, *options.loop, nullptr, nullptr);

  auto excluded = [&](Register r) {
    return std::find(options.exclude.begin(), options.exclude.end(), r) != options.exclude.end();
  };
  RegisterScan scan;
  const auto& order = abi::allocation_order(isa, cls);
  for (const auto& r : order) {
    if (excluded(r) || used.contains(r) || abi::is_callee_saved(isa, r)) continue;
    scan.pool.push_back(r);
  }
  if (options.allow_saves) {
    for (const auto& r : order) {
      if (excluded(r) || used.contains(r) || !abi::is_callee_saved(isa, r)) continue;
      scan.pool.push_back(r);
      scan.must_save.push_back(r);
    }
    if (options.loop) {
      for (const auto& r : order) {
        if (excluded(r) || !used.contains(r) || used_in_loop.contains(r) ||
            !abi::is_callee_saved(isa, r)) {
          continue;
        }
        scan.pool.push_back(r);
        scan.must_save.push_back(r);
      }
      // Last resort: caller-saved registers live around the loop but idle in it.
      for (const auto& r : order) {
        if (excluded(r) || !used.contains(r) || used_in_loop.contains(r) ||
            abi::is_callee_saved(isa, r)) {
          continue;
        }
        scan.pool.push_back(r);
        scan.must_save.push_back(r);
      }
    }
  }
  return scan;
}

RegisterScan scan_free_registers(const AsmFile& file, std::string_view function_symbol,
                                 RegClass cls, std::size_t wanted, const ScanOptions& options) {
  RegisterScan all = scan_free_registers(file, function_symbol, cls, options);
  if (all.pool.size() < wanted) {
    throw Error(ErrorCode::RegisterPressureTooHigh,
                "need " + std::to_string(wanted) + " free " + std::string(to_string(cls)) +
                    " registers in " + std::string(function_symbol) + ", found " +
                    std::to_string(all.pool.size()));
  }
  RegisterScan out;
  out.pool.assign(all.pool.begin(), all.pool.begin() + static_cast<std::ptrdiff_t>(wanted));
  for (const auto& r : out.pool) {
    if (std::find(all.must_save.begin(), all.must_save.end(), r) != all.must_save.end()) {
      out.must_save.push_back(r);
    }
  }
  return out;
}

InjectionResult inject(std::string_view asm_text, const InjectionSite& site,
                       const NoisePattern& pattern, std::size_t k) {
  const Isa isa = check_isa(asm_text, pattern.isa);
  const AsmFile file = AsmFile::parse(asm_text, isa);
  const auto sites = locate_anchors(file, site.file);
  auto it = std::find_if(sites.begin(), sites.end(),
                         [&](const InjectionSite& s) { return s.region_id == site.region_id; });
  if (it == sites.end()) {
    throw Error(ErrorCode::AnchorMissing, "no anchor for region '" + site.region_id + "'");
  }
  const InjectionSite& here = *it;
  const LoopShape shape = find_loop(file, here.anchor_line, here.region_id);

  const bool stateful = pattern.stateful_pool || pattern.needs_base_register;
  if (shape.has_call && stateful) {
    throw Error(ErrorCode::RegisterPressureTooHigh,
                "loop around '" + here.region_id + "' contains a call; mode " +
                    pattern.mode.name + " keeps state in registers across iterations");
  }
  ScanOptions opts;
  opts.loop = shape.span;
  opts.allow_saves = !shape.has_call;

  const std::size_t pool_n = pattern.register_pool_size;
  std::vector<Register> pool;
  std::optional<Register> base;
  std::vector<Register> must_save;
  {
    std::size_t wanted = pool_n + (pattern.needs_base_register ? 1 : 0);
    auto scan = scan_free_registers(file, here.function_symbol, pattern.pool_class, wanted, opts);
    std::size_t first = 0;
    if (pattern.needs_base_register) {
      base = scan.pool.front();
      first = 1;
    }
    pool.assign(scan.pool.begin() + static_cast<std::ptrdiff_t>(first), scan.pool.end());
    must_save = scan.must_save;
  }
  std::vector<SaveSlot> saves;
  if (!must_save.empty()) {
    const RegClass other = pattern.pool_class == RegClass::gpr ? RegClass::fpr : RegClass::gpr;
    ScanOptions slot_opts;
    slot_opts.allow_saves = false;
    auto slots = scan_free_registers(file, here.function_symbol, other, must_save.size(), slot_opts);
    for (std::size_t i = 0; i < must_save.size(); ++i) saves.push_back({must_save[i], slots.pool[i]});
  }

  const auto payload = generate_payload(pattern, k, pool, base);
  const auto overhead = generate_overhead(pattern, OverheadRequest{pool, base, saves});

  std::multimap<std::size_t, std::string> inserts;  // before line index
  std::size_t emitted_overhead = 0;
  auto add_fragment = [&](std::size_t at, std::string_view what,
                          const std::vector<std::string>& instructions) {
    if (instructions.empty()) return;
    if (what != "payload") emitted_overhead += instructions.size();
    std::string text = "# " + std::string(markers::begin) + " " + std::string(what) +
                       " region=" + here.region_id + " mode=" + pattern.mode.name +
                       " k=" + std::to_string(k) + "\n";
    for (const auto& ins : instructions) text += "\t" + ins + "\n";
    text += "# " + std::string(markers::end) + "\n";
    inserts.emplace(at, std::move(text));
  };
  std::vector<std::string> prologue = overhead.prologue;
  if (!overhead.epilogue.empty()) {
    try {
      add_fragment(find_exit_point(file, shape, here.region_id), "epilogue", overhead.epilogue);
    } catch (const Error&) {
      // Exits the restore cannot cover: park the registers for the whole
      // function instead, provided nothing else in it touches them.
      const bool untouched = std::all_of(must_save.begin(), must_save.end(), [&](Register r) {
        return !function_uses(file, *shape.fn, r);
      });
      auto points = function_level_points(file, *shape.fn);
      if (!untouched || !points) throw;
      std::vector<std::string> saves_text(prologue.begin(),
                                          prologue.begin() + static_cast<std::ptrdiff_t>(saves.size()));
      prologue.erase(prologue.begin(), prologue.begin() + static_cast<std::ptrdiff_t>(saves.size()));
      add_fragment(points->entry_at, "save", saves_text);
      for (auto at : points->exits) add_fragment(at, "restore", overhead.epilogue);
    }
  }
  add_fragment(here.anchor_line + 1, "payload", payload);
  add_fragment(shape.prologue_at, "prologue", prologue);

  std::string out;
  const auto& lines = file.lines();
  const std::string original = file.str();
  const bool trailing_nl = !original.empty() && original.back() == '\n';
  for (std::size_t i = 0; i <= lines.size(); ++i) {
    auto [lo, hi] = inserts.equal_range(i);
    for (auto ins = lo; ins != hi; ++ins) {
      if (i == lines.size() && !trailing_nl && !out.empty() && out.back() != '\n') out += '\n';
      out += ins->second;
    }
    if (i == lines.size()) break;
    out += lines[i].text;
    if (i + 1 < lines.size() || trailing_nl) out += '\n';
  }

  InjectionResult result;
  result.text = std::move(out);
  auto& r = result.report;
  r.region_id = here.region_id;
  r.mode = pattern.mode.name;
  r.k = k;
  r.isa = isa;
  r.payload_count = payload.size();
  r.overhead_count = emitted_overhead;
  r.spill_inserted = !saves.empty();
  std::vector<Register> used = pool;
  if (base) used.push_back(*base);
  for (const auto& s : saves) used.push_back(s.slot);
  r.registers_used = names(isa, used);
  r.saved_registers = names(isa, must_save);
  r.loop_body_size = here.loop_body_size;
  r.probe_instructions_excluded = here.probe_instructions_excluded;
  const AsmFile after = AsmFile::parse(result.text, isa);
  r.original_preserved = unmatched(flatten(file), flatten(after)).has_value();
  return result;
}

InjectionReport audit(std::string_view before, std::string_view after, const InjectionSite& site,
                      std::size_t k, const NoisePattern& pattern) {
  const Isa isa = pattern.isa;
  const AsmFile a = AsmFile::parse(before, isa);
  const AsmFile b = AsmFile::parse(after, isa);

  InjectionReport r;
  r.region_id = site.region_id;
  r.mode = pattern.mode.name;
  r.k = k;
  r.isa = isa;

  std::optional<LineSpan> span;
  for (const auto& s : locate_anchors(b, site.file)) {
    if (s.region_id == site.region_id) span = s.loop_body_span;
  }
  for (const auto& s : locate_anchors(a, site.file)) {
    if (s.region_id == site.region_id) {
      r.loop_body_size = s.loop_body_size;
      r.probe_instructions_excluded = s.probe_instructions_excluded;
    }
  }
  if (!span) {
    throw Error(ErrorCode::AuditMismatch, "region '" + site.region_id + "' not found after injection");
  }

  const auto flat_before = flatten(a);
  const auto flat_after = flatten(b);
  auto extra = unmatched(flat_before, flat_after);
  r.original_preserved = extra.has_value();
  if (!extra) {
    throw Error(ErrorCode::AuditMismatch,
                "original instructions of region '" + site.region_id + "' are not preserved");
  }

  std::vector<std::regex> recognizers;
  for (const auto& tmpl : pattern.payload_template) recognizers.push_back(payload_regex(pattern, tmpl));
  std::set<Register> used;
  for (std::size_t i = 0; i < flat_after.size(); ++i) {
    if (!(*extra)[i]) continue;
    const auto& [line, ins] = flat_after[i];
    const std::string text = normalize(ins->text);
    auto regs = registers_mentioned(isa, *ins);
    used.insert(regs.begin(), regs.end());
    if (is_memory_store(isa, *ins) || is_system_instruction(isa, *ins) ||
        classify_branch(isa, *ins).kind != BranchKind::none) {
      r.forbidden.push_back(text);
    }
    const bool looks_like_payload =
        std::any_of(recognizers.begin(), recognizers.end(),
                    [&](const std::regex& re) { return std::regex_match(text, re); });
    if (span->contains(line)) {
      if (looks_like_payload) {
        ++r.payload_count;
      } else {
        ++r.overhead_in_loop;
        ++r.overhead_count;
      }
    } else {
      ++r.overhead_count;
      if (is_cross_file_move(isa, *ins)) {
        r.spill_inserted = true;
        // The register being parked is the one on the source side of the move.
        const auto ops = ins->operands;
        std::string src = isa == Isa::x86_64 ? ops.substr(0, ops.find(','))
                                             : ops.substr(ops.find(',') + 1);
        src.erase(std::remove_if(src.begin(), src.end(), ::isspace), src.end());
        auto reg = parse_register(isa, src);
        if (reg && abi::is_callee_saved(isa, *reg)) {
          auto name = register_name(isa, *reg);
          if (std::find(r.saved_registers.begin(), r.saved_registers.end(), name) ==
              r.saved_registers.end()) {
            r.saved_registers.push_back(name);
          }
        }
      }
    }
  }
  r.registers_used = names(isa, std::vector<Register>(used.begin(), used.end()));

  const std::size_t expected = k * pattern.pattern_length;
  if (r.payload_count != expected) {
    throw Error(ErrorCode::AuditMismatch,
                "region '" + site.region_id + "': found " + std::to_string(r.payload_count) +
                    " payload instructions in the loop, expected " + std::to_string(expected));
  }
  return r;
}

}  // namespace noise
