#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "noise/isa.hpp"

namespace noise {

enum class Resource { fp_unit, integer_unit, l1_load, memory_load };

std::string_view to_string(Resource r);

struct NoiseMode {
  std::string name;
  Resource target_resource = Resource::fp_unit;

  bool operator==(const NoiseMode&) const = default;
};

namespace modes {
inline constexpr std::string_view fp_add64 = "fp_add64";
inline constexpr std::string_view int64_add = "int64_add";
inline constexpr std::string_view l1_ld64 = "l1_ld64";
inline constexpr std::string_view memory_ld64 = "memory_ld64";
}  // namespace modes

/// Sizes and placement of the buffers the load modes read from.
struct NoiseBufferSpec {
  std::size_t l1_buffer_bytes = 4096;
  /// 0 selects 8 x llc_bytes.
  std::size_t memory_buffer_bytes = 0;
  std::size_t l1_cache_bytes = 32 * 1024;
  std::size_t llc_bytes = 32 * 1024 * 1024;
  /// Seed of the pseudo-random cyclic walk through memory_buffer cells.
  std::uint64_t permutation_seed = 0x9e3779b97f4a7c15ULL;
  std::size_t cell_bytes = 64;
  /// Thread-private cursors and buffers (required for multithreaded targets).
  bool per_thread = false;

  std::size_t effective_memory_buffer_bytes() const {
    return memory_buffer_bytes != 0 ? memory_buffer_bytes : 8 * llc_bytes;
  }

  /// Throws Error(InvalidArgument) when l1 buffer > L1/2 or memory buffer < 8 x LLC.
  void validate() const;
};

/// One noise mode's payload and overhead templates for one ISA.
///
/// Template placeholders: `{r}` is the pool register of the current instruction
/// (spelled with `pool_view`), `{b}` the base register (always 64-bit view) and
/// `{off}` the byte offset of the current pool register's cursor slot.
struct NoisePattern {
  NoiseMode mode;
  Isa isa = Isa::x86_64;
  std::size_t pattern_length = 1;
  std::size_t register_pool_size = 8;
  RegClass pool_class = RegClass::fpr;
  RegView pool_view = RegView::fp64;
  std::vector<std::string> payload_template;

  /// Needs a dedicated base register that stays live through the loop.
  bool needs_base_register = false;
  /// Pool registers carry state between payload instructions (pointer-chasing
  /// cursors), so their values must survive the whole loop.
  bool stateful_pool = false;
  /// Base address is materialized into a pool register that is loaded last.
  bool base_from_pool = false;

  std::vector<std::string> base_setup;
  std::vector<std::string> pool_setup;
};

struct Overhead {
  std::vector<std::string> prologue;
  std::vector<std::string> epilogue;
};

/// A register that must be preserved across the noised loop, and the free
/// register of the other file that holds its value meanwhile.
struct SaveSlot {
  Register saved;
  Register slot;
};

struct OverheadRequest {
  std::vector<Register> pool;
  std::optional<Register> base;
  std::vector<SaveSlot> saves;
};

/// Registry of noise modes. `builtin()` holds exactly fp_add64, int64_add,
/// l1_ld64 and memory_ld64; copies may be extended with add().
class ModeRegistry {
public:
  using Factory = std::function<NoisePattern(Isa, const NoiseBufferSpec&)>;

  static const ModeRegistry& builtin();

  /// Throws Error(InvalidArgument) if the name is already registered.
  void add(NoiseMode mode, Factory factory);

  const NoiseMode& mode(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

  /// Throws UnsupportedIsa when the factory does not support `isa`.
  NoisePattern make_pattern(std::string_view name, Isa isa,
                            const NoiseBufferSpec& buffers = {},
                            std::optional<std::size_t> pool_size = std::nullopt) const;

private:
  struct Entry {
    NoiseMode mode;
    Factory factory;
  };
  std::map<std::string, Entry, std::less<>> entries_;
};

NoisePattern make_pattern(std::string_view mode, Isa isa, const NoiseBufferSpec& buffers = {},
                          std::optional<std::size_t> pool_size = std::nullopt);

/// The word n^k: k x pattern_length instructions, destination of instruction i
/// being pool[i mod pool.size()].
std::vector<std::string> generate_payload(const NoisePattern& pattern, std::size_t k,
                                          std::span<const Register> pool,
                                          std::optional<Register> base = std::nullopt);

std::vector<std::string> generate_payload(std::string_view mode, Isa isa, std::size_t k,
                                          std::span<const Register> pool,
                                          std::optional<Register> base = std::nullopt);

Overhead generate_overhead(const NoisePattern& pattern, const OverheadRequest& request);

Overhead generate_overhead(std::string_view mode, Isa isa, const NoiseBufferSpec& buffers,
                           const OverheadRequest& request);

std::pair<std::size_t, std::size_t> count_payload_overhead(
    std::span<const std::string> payload, const Overhead& overhead);

/// Newline-separated text with an optional leading `#` comment line.
std::string render_fragment(std::span<const std::string> instructions,
                            std::string_view comment = {});

/// Symbols the injected code references; defined by the probe runtime.
namespace runtime_symbols {
inline constexpr std::string_view l1_buffer = "noise_l1_buffer";
inline constexpr std::string_view mem_cursors_tls = "noise_mem_cursors";
inline constexpr std::string_view mem_cursors_shared = "noise_mem_cursors_shared";
inline constexpr std::size_t cursor_slots = 32;
}  // namespace runtime_symbols

}  // namespace noise
