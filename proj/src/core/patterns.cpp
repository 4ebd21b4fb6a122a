#include "noise/patterns.hpp"

#include <algorithm>

#include "noise/error.hpp"

namespace noise {

std::string_view to_string(Resource r) {
  switch (r) {
    case Resource::fp_unit: return "fp-unit";
    case Resource::integer_unit: return "integer-unit";
    case Resource::l1_load: return "l1-load";
    case Resource::memory_load: return "memory-load";
  }
  return "unknown";
}

void NoiseBufferSpec::validate() const {
  if (l1_buffer_bytes == 0 || l1_buffer_bytes > l1_cache_bytes / 2) {
    throw Error(ErrorCode::InvalidArgument,
                "l1 buffer of " + std::to_string(l1_buffer_bytes) +
                    " bytes does not fit in half of the configured L1 (" +
                    std::to_string(l1_cache_bytes) + " bytes)");
  }
  if (effective_memory_buffer_bytes() < 8 * llc_bytes) {
    throw Error(ErrorCode::InvalidArgument,
                "memory buffer must be at least 8 x LLC (" + std::to_string(8 * llc_bytes) +
                    " bytes)");
  }
  if (cell_bytes < sizeof(void*) || (cell_bytes & (cell_bytes - 1)) != 0) {
    throw Error(ErrorCode::InvalidArgument, "cell size must be a power of two >= 8");
  }
}

namespace {

void replace_all(std::string& text, std::string_view key, std::string_view value) {
  for (auto pos = text.find(key); pos != std::string::npos;
       pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
}

std::string instantiate(std::string_view tmpl, Isa isa, std::optional<Register> reg,
                        RegView view, std::optional<Register> base, std::size_t offset) {
  std::string out(tmpl);
  if (reg) replace_all(out, "{r}", register_name(isa, *reg, view));
  if (base) replace_all(out, "{b}", register_name(isa, *base, RegView::gpr64));
  replace_all(out, "{off}", std::to_string(offset));
  return out;
}

NoisePattern fp_add64(Isa isa, const NoiseBufferSpec&) {
  NoisePattern p;
  p.mode = {std::string(modes::fp_add64), Resource::fp_unit};
  p.isa = isa;
  p.pool_class = RegClass::fpr;
  p.pool_view = RegView::fp64;
  // Self-add: only write-after-write hazards against anything outside the pool.
  p.payload_template = {isa == Isa::aarch64 ? "fadd {r}, {r}, {r}" : "addsd {r}, {r}"};
  return p;
}

NoisePattern int64_add(Isa isa, const NoiseBufferSpec&) {
  NoisePattern p;
  p.mode = {std::string(modes::int64_add), Resource::integer_unit};
  p.isa = isa;
  p.pool_class = RegClass::gpr;
  p.pool_view = RegView::gpr64;
  p.payload_template = {isa == Isa::aarch64 ? "add {r}, {r}, {r}" : "addq {r}, {r}"};
  return p;
}

NoisePattern l1_ld64(Isa isa, const NoiseBufferSpec&) {
  NoisePattern p;
  p.mode = {std::string(modes::l1_ld64), Resource::l1_load};
  p.isa = isa;
  p.pool_class = RegClass::gpr;
  const std::string sym(runtime_symbols::l1_buffer);
  if (isa == Isa::aarch64) {
    p.pool_view = RegView::gpr32;
    p.payload_template = {"ldr {r}, [{b}]"};
    p.needs_base_register = true;
    p.base_setup = {"adrp {b}, :got:" + sym, "ldr {b}, [{b}, :got_lo12:" + sym + "]"};
  } else {
    // RIP-relative addressing needs no base register on x86-64.
    p.pool_view = RegView::gpr64;
    p.payload_template = {"movq " + sym + "(%rip), {r}"};
  }
  return p;
}

NoisePattern memory_ld64(Isa isa, const NoiseBufferSpec& buffers) {
  NoisePattern p;
  p.mode = {std::string(modes::memory_ld64), Resource::memory_load};
  p.isa = isa;
  p.pool_class = RegClass::gpr;
  p.pool_view = RegView::gpr64;
  p.stateful_pool = true;
  // Each pool register is an independent cursor walking the runtime's cyclic
  // permutation; a load replaces the cursor with the next cell's address.
  const std::string tls(runtime_symbols::mem_cursors_tls);
  const std::string shared(runtime_symbols::mem_cursors_shared);
  if (isa == Isa::aarch64) {
    p.payload_template = {"ldr {r}, [{r}]"};
    p.base_from_pool = true;
    if (buffers.per_thread) {
      p.base_setup = {"mrs {b}, tpidr_el0", "add {b}, {b}, #:tprel_hi12:" + tls + ", lsl #12",
                      "add {b}, {b}, #:tprel_lo12_nc:" + tls};
    } else {
      p.base_setup = {"adrp {b}, :got:" + shared, "ldr {b}, [{b}, :got_lo12:" + shared + "]"};
    }
    p.pool_setup = {"ldr {r}, [{b}, #{off}]"};
  } else {
    p.payload_template = {"movq ({r}), {r}"};
    if (buffers.per_thread) {
      p.pool_setup = {"movq %fs:" + tls + "@tpoff+{off}, {r}"};
    } else {
      p.pool_setup = {"movq " + shared + "+{off}(%rip), {r}"};
    }
  }
  return p;
}

void check_pool(const NoisePattern& pattern, std::size_t instructions,
                std::span<const Register> pool) {
  const std::size_t required = std::min(pattern.register_pool_size, instructions);
  if (pool.size() < required) {
    throw Error(ErrorCode::InsufficientRegisterPool,
                "mode " + pattern.mode.name + " needs " + std::to_string(required) +
                    " registers, got " + std::to_string(pool.size()));
  }
  for (const auto& reg : pool) {
    if (reg.cls != pattern.pool_class) {
      throw Error(ErrorCode::InsufficientRegisterPool,
                  "register " + register_name(pattern.isa, reg) + " is not in the " +
                      std::string(to_string(pattern.pool_class)) + " file");
    }
  }
}

std::string save_move(Isa isa, Register from, Register to) {
  if (isa == Isa::x86_64) {
    return "movq " + register_name(isa, from) + ", " + register_name(isa, to);
  }
  return "fmov " + register_name(isa, to) + ", " + register_name(isa, from);
}

}  // namespace

const ModeRegistry& ModeRegistry::builtin() {
  static const ModeRegistry registry = [] {
    ModeRegistry r;
    r.add({std::string(modes::fp_add64), Resource::fp_unit}, fp_add64);
    r.add({std::string(modes::int64_add), Resource::integer_unit}, int64_add);
    r.add({std::string(modes::l1_ld64), Resource::l1_load}, l1_ld64);
    r.add({std::string(modes::memory_ld64), Resource::memory_load}, memory_ld64);
    return r;
  }();
  return registry;
}

void ModeRegistry::add(NoiseMode mode, Factory factory) {
  if (entries_.contains(mode.name)) {
    throw Error(ErrorCode::InvalidArgument, "noise mode '" + mode.name + "' already registered");
  }
  std::string key = mode.name;
  entries_.emplace(std::move(key), Entry{std::move(mode), std::move(factory)});
}

const NoiseMode& ModeRegistry::mode(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(ErrorCode::InvalidArgument, "unknown noise mode '" + std::string(name) + "'");
  }
  return it->second.mode;
}

bool ModeRegistry::contains(std::string_view name) const { return entries_.contains(name); }

std::vector<std::string> ModeRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

NoisePattern ModeRegistry::make_pattern(std::string_view name, Isa isa,
                                        const NoiseBufferSpec& buffers,
                                        std::optional<std::size_t> pool_size) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(ErrorCode::InvalidArgument, "unknown noise mode '" + std::string(name) + "'");
  }
  NoisePattern pattern = it->second.factory(isa, buffers);
  if (pool_size) pattern.register_pool_size = *pool_size;
  if (pattern.pattern_length == 0 || pattern.register_pool_size == 0 ||
      pattern.register_pool_size > runtime_symbols::cursor_slots) {
    throw Error(ErrorCode::InvalidArgument,
                "pattern length and pool size must be in [1, " +
                    std::to_string(runtime_symbols::cursor_slots) + "]");
  }
  return pattern;
}

NoisePattern make_pattern(std::string_view mode, Isa isa, const NoiseBufferSpec& buffers,
                          std::optional<std::size_t> pool_size) {
  return ModeRegistry::builtin().make_pattern(mode, isa, buffers, pool_size);
}

std::vector<std::string> generate_payload(const NoisePattern& pattern, std::size_t k,
                                          std::span<const Register> pool,
                                          std::optional<Register> base) {
  const std::size_t count = k * pattern.pattern_length;
  std::vector<std::string> out;
  if (count == 0) return out;
  check_pool(pattern, count, pool);
  if (pattern.needs_base_register && !base) {
    throw Error(ErrorCode::InvalidArgument, "mode " + pattern.mode.name + " needs a base register");
  }
  const std::size_t cycle = std::min(pool.size(), pattern.register_pool_size);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& tmpl = pattern.payload_template[i % pattern.pattern_length];
    out.push_back(instantiate(tmpl, pattern.isa, pool[i % cycle], pattern.pool_view, base, 0));
  }
  return out;
}

std::vector<std::string> generate_payload(std::string_view mode, Isa isa, std::size_t k,
                                          std::span<const Register> pool,
                                          std::optional<Register> base) {
  return generate_payload(make_pattern(mode, isa), k, pool, base);
}

Overhead generate_overhead(const NoisePattern& pattern, const OverheadRequest& request) {
  Overhead out;
  const Isa isa = pattern.isa;
  for (const auto& s : request.saves) out.prologue.push_back(save_move(isa, s.saved, s.slot));

  std::optional<Register> base = request.base;
  if (pattern.base_from_pool && !request.pool.empty()) base = request.pool.front();
  if (!pattern.base_setup.empty()) {
    if (!base) {
      throw Error(ErrorCode::InvalidArgument,
                  "mode " + pattern.mode.name + " needs a base register for its overhead");
    }
    for (const auto& tmpl : pattern.base_setup) {
      out.prologue.push_back(instantiate(tmpl, isa, std::nullopt, pattern.pool_view, base, 0));
    }
  }
  if (!pattern.pool_setup.empty()) {
    const std::size_t n = std::min(request.pool.size(), pattern.register_pool_size);
    auto emit = [&](std::size_t i) {
      for (const auto& tmpl : pattern.pool_setup) {
        out.prologue.push_back(instantiate(tmpl, isa, request.pool[i], pattern.pool_view, base,
                                           i * sizeof(std::uint64_t)));
      }
    };
    // The register holding the base address is overwritten last.
    const bool base_is_pool0 = pattern.base_from_pool && n > 0;
    for (std::size_t i = base_is_pool0 ? 1 : 0; i < n; ++i) emit(i);
    if (base_is_pool0) emit(0);
  }
  for (auto it = request.saves.rbegin(); it != request.saves.rend(); ++it) {
    out.epilogue.push_back(save_move(isa, it->slot, it->saved));
  }
  return out;
}

Overhead generate_overhead(std::string_view mode, Isa isa, const NoiseBufferSpec& buffers,
                           const OverheadRequest& request) {
  return generate_overhead(make_pattern(mode, isa, buffers), request);
}

std::pair<std::size_t, std::size_t> count_payload_overhead(std::span<const std::string> payload,
                                                           const Overhead& overhead) {
  return {payload.size(), overhead.prologue.size() + overhead.epilogue.size()};
}

std::string render_fragment(std::span<const std::string> instructions, std::string_view comment) {
  std::string out;
  if (!comment.empty()) {
    out += "# ";
    out += comment;
    out += '\n';
  }
  for (const auto& ins : instructions) {
    out += '\t';
    out += ins;
    out += '\n';
  }
  return out;
}

}  // namespace noise
