#include <algorithm>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "noise/asm_text.hpp"
#include "noise/patterns.hpp"
#include "support.hpp"

using namespace noise;
using testing::error_code_of;

namespace {

std::vector<Register> fp_pool_31_down(int count) {
  std::vector<Register> pool;
  for (int i = 0; i < count; ++i) pool.push_back({RegClass::fpr, 31 - i});
  return pool;
}

std::vector<Register> gpr_pool(Isa isa, std::size_t n) {
  std::vector<Register> pool;
  for (const auto& r : abi::allocation_order(isa, RegClass::gpr)) {
    if (pool.size() == n) break;
    pool.push_back(r);
  }
  return pool;
}

}  // namespace

TEST_CASE("builtin registry holds exactly the four modes") {
  const auto names = ModeRegistry::builtin().names();
  CHECK(names == std::vector<std::string>{"fp_add64", "int64_add", "l1_ld64", "memory_ld64"});
  CHECK(ModeRegistry::builtin().mode("l1_ld64").target_resource == Resource::l1_load);
  CHECK(ModeRegistry::builtin().mode("memory_ld64").target_resource == Resource::memory_load);

  ModeRegistry copy = ModeRegistry::builtin();
  CHECK(error_code_of([&] {
          copy.add({"fp_add64", Resource::fp_unit},
                   [](Isa isa, const NoiseBufferSpec& b) { return make_pattern("fp_add64", isa, b); });
        }) == ErrorCode::InvalidArgument);
  copy.add({"fp_add64_copy", Resource::fp_unit},
           [](Isa isa, const NoiseBufferSpec& b) { return make_pattern("fp_add64", isa, b); });
  CHECK(copy.contains("fp_add64_copy"));
  CHECK_FALSE(ModeRegistry::builtin().contains("fp_add64_copy"));
}

TEST_CASE("fp_add64 payload on aarch64") {
  const auto pool = fp_pool_31_down(8);
  CHECK(generate_payload("fp_add64", Isa::aarch64, 0, pool).empty());

  const auto four = generate_payload("fp_add64", Isa::aarch64, 4, pool);
  CHECK(four == std::vector<std::string>{"fadd d31, d31, d31", "fadd d30, d30, d30",
                                         "fadd d29, d29, d29", "fadd d28, d28, d28"});
}

TEST_CASE("l1_ld64 payload uses distinct destinations and the overhead's base register") {
  const std::vector<Register> pool{{RegClass::gpr, 28}, {RegClass::gpr, 27}};
  const Register base{RegClass::gpr, 9};
  const auto p = generate_payload("l1_ld64", Isa::aarch64, 2, pool, base);
  CHECK(p == std::vector<std::string>{"ldr w28, [x9]", "ldr w27, [x9]"});
  CHECK(error_code_of([&] { generate_payload("l1_ld64", Isa::aarch64, 2, pool); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("payload errors") {
  const auto small = fp_pool_31_down(2);
  CHECK(error_code_of([&] { generate_payload("fp_add64", Isa::aarch64, 4, small); }) ==
        ErrorCode::InsufficientRegisterPool);
  CHECK(error_code_of([] { parse_isa("riscv64"); }) == ErrorCode::UnsupportedIsa);
  // an FP pool handed to an integer mode is rejected rather than misprinted
  CHECK(error_code_of([&] { generate_payload("int64_add", Isa::x86_64, 2, small); }) ==
        ErrorCode::InsufficientRegisterPool);
}

TEST_CASE("overhead examples") {
  const NoiseBufferSpec defaults;
  SUBCASE("fp_add64 with a free pool needs none") {
    const auto o = generate_overhead("fp_add64", Isa::aarch64, defaults, {fp_pool_31_down(8), {}, {}});
    CHECK(o.prologue.empty());
    CHECK(o.epilogue.empty());
  }
  SUBCASE("l1_ld64 materializes the buffer address") {
    const Register base{RegClass::gpr, 9};
    const auto o = generate_overhead("l1_ld64", Isa::aarch64, defaults,
                                     {gpr_pool(Isa::aarch64, 8), base, {}});
    REQUIRE(o.prologue.size() == 2);
    CHECK(o.prologue[0].rfind("adrp x9, ", 0) == 0);
    CHECK(o.prologue[1].rfind("ldr x9, [x9, ", 0) == 0);
    CHECK(o.epilogue.empty());
  }
  SUBCASE("memory_ld64 per thread saves and restores x9") {
    NoiseBufferSpec per_thread;
    per_thread.per_thread = true;
    const Register x9{RegClass::gpr, 9};
    const Register slot{RegClass::fpr, 16};
    std::vector<Register> pool{x9, {RegClass::gpr, 10}};
    const auto o = generate_overhead("memory_ld64", Isa::aarch64, per_thread,
                                     {pool, std::nullopt, {{x9, slot}}});
    REQUIRE_FALSE(o.prologue.empty());
    CHECK(o.prologue.front() == "fmov d16, x9");
    CHECK(o.prologue[1] == "mrs x9, tpidr_el0");
    REQUIRE(o.epilogue.size() == 1);
    CHECK(o.epilogue.front() == "fmov x9, d16");
    // the base register (pool[0]) is loaded with its own cursor last
    CHECK(o.prologue.back() == "ldr x9, [x9, #0]");
  }
}

TEST_CASE("count_payload_overhead") {
  SUBCASE("fp_add64 k=4") {
    const auto payload = generate_payload("fp_add64", Isa::aarch64, 4, fp_pool_31_down(8));
    CHECK(count_payload_overhead(payload, {}) == std::pair<std::size_t, std::size_t>{4, 0});
  }
  SUBCASE("l1_ld64 k=0 with a two-instruction prologue") {
    const auto o = generate_overhead("l1_ld64", Isa::aarch64, {},
                                     {gpr_pool(Isa::aarch64, 8), Register{RegClass::gpr, 9}, {}});
    const auto payload = generate_payload("l1_ld64", Isa::aarch64, 0, {});
    CHECK(count_payload_overhead(payload, o) == std::pair<std::size_t, std::size_t>{0, 2});
  }
  SUBCASE("memory_ld64 k=16, prologue 3, epilogue 1, recounted from text") {
    const auto pattern = make_pattern("memory_ld64", Isa::x86_64, {}, 2);
    const std::vector<Register> pool{{RegClass::gpr, 10}, {RegClass::gpr, 11}};
    const auto payload = generate_payload(pattern, 16, pool);
    const auto o = generate_overhead(pattern, {pool, std::nullopt, {{pool[0], {RegClass::fpr, 15}}}});
    REQUIRE(o.prologue.size() == 3);
    REQUIRE(o.epilogue.size() == 1);
    CHECK(count_payload_overhead(payload, o) == std::pair<std::size_t, std::size_t>{16, 4});

    // Independent recount: classify each emitted line by shape alone.
    std::string text = render_fragment(o.prologue, "prologue") + render_fragment(payload, "payload") +
                       render_fragment(o.epilogue, "epilogue");
    const std::regex chase(R"(^\s*movq\s+\(%r\w+\),\s*%r\w+\s*$)");
    std::size_t payload_lines = 0, other_lines = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#') continue;
      (std::regex_match(line, chase) ? payload_lines : other_lines)++;
    }
    CHECK(payload_lines == 16);
    CHECK(other_lines == 4);
  }
}

TEST_CASE("payload properties for every mode, isa and k") {
  for (const auto& mode : ModeRegistry::builtin().names()) {
    for (Isa isa : {Isa::aarch64, Isa::x86_64}) {
      const auto pattern = make_pattern(mode, isa);
      CHECK(pattern.pattern_length >= 1);
      CHECK(pattern.register_pool_size >= 1);
      std::vector<Register> pool;
      for (const auto& r : abi::allocation_order(isa, pattern.pool_class)) {
        if (pool.size() == pattern.register_pool_size) break;
        pool.push_back(r);
      }
      const Register base{RegClass::gpr, isa == Isa::aarch64 ? 17 : 11};
      for (std::size_t k = 0; k <= 40; k += 3) {
        const auto payload = generate_payload(pattern, k, pool, base);
        CAPTURE(mode);
        CAPTURE(k);
        REQUIRE(payload.size() == k * pattern.pattern_length);
        CHECK(payload == generate_payload(pattern, k, pool, base));
        for (std::size_t i = 0; i < payload.size(); ++i) {
          const auto line = parse_line("\t" + payload[i], isa);
          REQUIRE(line.instructions.size() == 1);
          const auto& ins = line.instructions.front();
          CHECK_FALSE(is_memory_store(isa, ins));
          CHECK_FALSE(is_system_instruction(isa, ins));
          CHECK(classify_branch(isa, ins).kind == BranchKind::none);
          // destination cycles through the pool
          const std::string dest = register_name(isa, pool[i % pool.size()], pattern.pool_view);
          const auto ops = ins.operands;
          const auto last_comma = ops.rfind(',');
          const std::string written =
              isa == Isa::aarch64 ? ops.substr(0, ops.find(','))
                                  : ops.substr(last_comma == std::string::npos ? 0 : last_comma + 1);
          std::string trimmed;
          for (char c : written) {
            if (c != ' ') trimmed += c;
          }
          CHECK(trimmed == dest);
          for (const auto& reg : registers_mentioned(isa, ins)) {
            const bool in_pool = std::find(pool.begin(), pool.end(), reg) != pool.end();
            CHECK((in_pool || reg == base));
          }
        }
      }

      OverheadRequest request{pool, base, {}};
      const auto o = generate_overhead(pattern, request);
      for (const auto* seq : {&o.prologue, &o.epilogue}) {
        for (const auto& s : *seq) {
          const auto line = parse_line("\t" + s, isa);
          REQUIRE(line.instructions.size() == 1);
          CHECK_FALSE(is_memory_store(isa, line.instructions.front()));
          CHECK_FALSE(is_system_instruction(isa, line.instructions.front()));
          CHECK(classify_branch(isa, line.instructions.front()).kind == BranchKind::none);
        }
      }
    }
  }
}

TEST_CASE("buffer spec limits") {
  NoiseBufferSpec b;
  CHECK_NOTHROW(b.validate());
  CHECK(b.effective_memory_buffer_bytes() == 8 * b.llc_bytes);
  b.l1_buffer_bytes = b.l1_cache_bytes;  // more than half of L1
  CHECK(error_code_of([&] { b.validate(); }) == ErrorCode::InvalidArgument);
  b = {};
  b.memory_buffer_bytes = b.llc_bytes;
  CHECK(error_code_of([&] { b.validate(); }) == ErrorCode::InvalidArgument);
}
