// Buffers walked by memory_ld64 noise. Every cell holds the address of the next
// cell of one pseudo-random cycle through the whole buffer, so a cursor
// register advanced with `load r, [r]` touches a new line on every step and the
// hardware prefetchers cannot follow it.

#include <sys/mman.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace {

constexpr std::size_t kSlots = 32;
constexpr std::size_t kCell = 64;

// Until a buffer exists every cursor points at this cell, which points at itself.
alignas(64) void* self_cell[8] = {self_cell};

}  // namespace

#define NOISE_C4 self_cell, self_cell, self_cell, self_cell
#define NOISE_C32 NOISE_C4, NOISE_C4, NOISE_C4, NOISE_C4, NOISE_C4, NOISE_C4, NOISE_C4, NOISE_C4

extern "C" {
alignas(64) void* noise_mem_cursors_shared[kSlots] = {NOISE_C32};
alignas(64) thread_local void* noise_mem_cursors[kSlots] = {NOISE_C32};
}

#undef NOISE_C32
#undef NOISE_C4

namespace {

std::size_t llc_bytes() {
#ifdef _SC_LEVEL3_CACHE_SIZE
  long v = sysconf(_SC_LEVEL3_CACHE_SIZE);
  if (v > 0) return static_cast<std::size_t>(v);
#endif
  if (std::FILE* f = std::fopen("/sys/devices/system/cpu/cpu0/cache/index3/size", "r")) {
    unsigned long kb = 0;
    char unit = 'K';
    const int n = std::fscanf(f, "%lu%c", &kb, &unit);
    std::fclose(f);
    if (n >= 1 && kb > 0) return unit == 'M' ? kb << 20 : kb << 10;
  }
  return std::size_t{32} << 20;
}

std::size_t buffer_bytes() {
  if (const char* env = std::getenv("NOISE_MEM_BUFFER_BYTES")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 0);
    if (end != env && v >= kCell * 2) return static_cast<std::size_t>(v);
    std::fprintf(stderr, "noise_mem: ignoring NOISE_MEM_BUFFER_BYTES=%s\n", env);
  }
  std::size_t want = 8 * llc_bytes();
  const long pages = sysconf(_SC_PHYS_PAGES);
  const long page = sysconf(_SC_PAGESIZE);
  if (pages > 0 && page > 0) {
    // Several threads may each own a buffer; keep one to a quarter of RAM.
    const std::size_t cap = static_cast<std::size_t>(pages) * static_cast<std::size_t>(page) / 4;
    want = std::min(want, cap);
  }
  return std::max(want, kCell * 2);
}

std::uint64_t seed() {
  if (const char* env = std::getenv("NOISE_MEM_SEED")) return std::strtoull(env, nullptr, 0);
  return 0x9e3779b97f4a7c15ULL;
}

struct Buffer {
  void* base = nullptr;
  std::size_t cells = 0;

  ~Buffer() { std::free(base); }
};

// Builds the cycle and points cursors[] at kSlots evenly spaced positions on it.
std::unique_ptr<Buffer> build(std::uint64_t salt, void** cursors) {
  auto buf = std::make_unique<Buffer>();
  buf->cells = buffer_bytes() / kCell;
  const std::size_t bytes = buf->cells * kCell;
  constexpr std::size_t huge = std::size_t{2} << 20;
  const std::size_t rounded = (bytes + huge - 1) / huge * huge;
  buf->base = std::aligned_alloc(huge, rounded);
  if (buf->base == nullptr) {
    std::fprintf(stderr, "noise_mem: cannot allocate %zu bytes\n", bytes);
    return nullptr;
  }
  // Noise should miss in the caches, not in the TLB. Advisory only; it fails
  // quietly where transparent huge pages are off.
  madvise(buf->base, rounded, MADV_HUGEPAGE);
  std::vector<std::uint32_t> order(buf->cells);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  // Sattolo's shuffle yields a single cycle over all cells.
  std::mt19937_64 rng(seed() ^ salt);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  auto* bytes_base = static_cast<unsigned char*>(buf->base);
  auto cell = [&](std::size_t i) { return bytes_base + static_cast<std::size_t>(order[i]) * kCell; };
  for (std::size_t i = 0; i < order.size(); ++i) {
    void* next = cell((i + 1) % order.size());
    std::memcpy(cell(i), &next, sizeof next);
  }
  for (std::size_t s = 0; s < kSlots; ++s) cursors[s] = cell(s * order.size() / kSlots);
  return buf;
}

std::mutex g_mu;
std::unique_ptr<Buffer> g_shared;
std::vector<std::unique_ptr<Buffer>> g_thread_buffers;  // freed at exit only
thread_local Buffer* t_buffer = nullptr;
std::uint64_t g_thread_salt = 0;

__attribute__((constructor)) void init_shared() {
  std::lock_guard lock(g_mu);
  g_shared = build(0, noise_mem_cursors_shared);
  if (g_shared) {
    // The constructing (main) thread shares the process buffer.
    std::memcpy(noise_mem_cursors, noise_mem_cursors_shared, sizeof noise_mem_cursors);
    t_buffer = g_shared.get();
  }
}

}  // namespace

extern "C" {

void noise_mem_thread_setup(void) {
  if (t_buffer != nullptr) return;
  void* cursors[kSlots];
  std::uint64_t salt = 0;
  {
    std::lock_guard lock(g_mu);
    salt = ++g_thread_salt;
  }
  std::unique_ptr<Buffer> buf = build(salt, cursors);
  if (!buf) return;
  std::memcpy(noise_mem_cursors, cursors, sizeof cursors);
  t_buffer = buf.get();
  std::lock_guard lock(g_mu);
  g_thread_buffers.push_back(std::move(buf));
}

void* noise_mem_thread_base(void) { return t_buffer != nullptr ? t_buffer->base : nullptr; }

}  // extern "C"
