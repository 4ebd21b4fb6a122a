#include "noise/probe.h"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

extern "C" {

alignas(64) uint64_t noise_l1_buffer[512];

// Provided by noise_mem.cpp, which the linker only pulls in when injected code
// references the memory-noise cursors.
__attribute__((weak)) void noise_mem_thread_setup(void);
__attribute__((weak)) void* noise_mem_thread_base(void);
}

namespace {

std::uint64_t now_ns() {
  timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1000000000ULL +
         static_cast<std::uint64_t>(ts.tv_nsec);
}

struct Region {
  std::string name;
  std::uint64_t start = 0;
  bool open = false;
  std::uint64_t next_index = 0;
};

struct Sample {
  std::uint32_t region;  // index into ThreadLog::regions
  std::uint64_t index;
  std::uint64_t duration_ns;
};

struct ThreadLog {
  std::uint32_t thread_id = 0;
  std::mutex mu;  // uncontended except against dump
  std::vector<Region> regions;
  std::vector<Sample> samples;
};

struct Registry {
  std::mutex mu;
  std::vector<std::shared_ptr<ThreadLog>> logs;
  std::atomic<std::uint32_t> next_thread{0};
  std::atomic<std::uint64_t> errors{0};
};

Registry& registry() {
  static Registry* r = new Registry;  // outlives every thread and the exit dump
  return *r;
}

void dump_at_exit() {
  if (std::getenv("NOISE_PROBE_NO_AUTODUMP") == nullptr) noise_probe_dump(nullptr);
}

ThreadLog& this_thread_log() {
  thread_local std::shared_ptr<ThreadLog> log = [] {
    static std::once_flag once;
    std::call_once(once, [] { std::atexit(dump_at_exit); });
    auto l = std::make_shared<ThreadLog>();
    auto& reg = registry();
    l->thread_id = reg.next_thread.fetch_add(1);
    std::lock_guard lock(reg.mu);
    reg.logs.push_back(l);
    return l;
  }();
  return *log;
}

Region* find_region(ThreadLog& log, const char* id, std::uint32_t* index) {
  for (std::size_t i = 0; i < log.regions.size(); ++i) {
    if (log.regions[i].name == id) {
      *index = static_cast<std::uint32_t>(i);
      return &log.regions[i];
    }
  }
  return nullptr;
}

void record_error(const char* kind, const char* id) {
  registry().errors.fetch_add(1, std::memory_order_relaxed);
  static std::atomic<int> reported{0};
  if (reported.fetch_add(1) < 8) {
    std::fprintf(stderr, "noise_probe: %s for region '%s'\n", kind, id ? id : "(null)");
  }
}

}  // namespace

extern "C" {

void noise_probe_begin(const char* region_id) {
  if (region_id == nullptr) region_id = "";
  ThreadLog& log = this_thread_log();
  std::uint32_t idx = 0;
  Region* r = find_region(log, region_id, &idx);
  if (r == nullptr) {
    std::lock_guard lock(log.mu);
    log.regions.push_back(Region{region_id});
    r = &log.regions.back();
  }
  if (r->open) {
    record_error("NestedRegion", region_id);
    return;
  }
  r->open = true;
  r->start = now_ns();
}

void noise_probe_end(const char* region_id) {
  const std::uint64_t end = now_ns();
  if (region_id == nullptr) region_id = "";
  ThreadLog& log = this_thread_log();
  std::uint32_t idx = 0;
  Region* r = find_region(log, region_id, &idx);
  if (r == nullptr || !r->open) {
    record_error("OrphanEnd", region_id);
    return;
  }
  r->open = false;
  std::lock_guard lock(log.mu);
  log.samples.push_back(Sample{idx, r->next_index++, end >= r->start ? end - r->start : 0});
}

int noise_probe_dump(const char* path) {
  struct Row {
    const std::string* region;
    std::uint32_t thread;
    std::uint64_t index;
    std::uint64_t duration;
  };
  std::vector<std::shared_ptr<ThreadLog>> logs;
  {
    std::lock_guard lock(registry().mu);
    logs = registry().logs;
  }
  std::vector<Row> rows;
  std::vector<std::unique_lock<std::mutex>> held;
  for (auto& log : logs) {
    held.emplace_back(log->mu);
    for (const auto& s : log->samples) {
      rows.push_back(Row{&log->regions[s.region].name, log->thread_id, s.index, s.duration_ns});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (*a.region != *b.region) return *a.region < *b.region;
    if (a.thread != b.thread) return a.thread < b.thread;
    return a.index < b.index;
  });

  if (path == nullptr) path = std::getenv("NOISE_PROBE_OUT");
  if (path == nullptr || *path == '\0') path = "./noise_samples.csv";
  std::FILE* f = std::fopen(path, "w");
  if (f == nullptr) {
    std::fprintf(stderr, "noise_probe: IoFailure: cannot open %s: %s\n", path, std::strerror(errno));
    return -1;
  }
  std::fputs("region_id,thread_id,sample_index,duration_ns\n", f);
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%u,%llu,%llu\n", r.region->c_str(), r.thread,
                 static_cast<unsigned long long>(r.index),
                 static_cast<unsigned long long>(r.duration));
  }
  const bool ok = std::ferror(f) == 0;
  if (std::fclose(f) != 0 || !ok) {
    std::fprintf(stderr, "noise_probe: IoFailure: write to %s failed\n", path);
    return -1;
  }
  return 0;
}

uint64_t noise_probe_error_count(void) { return registry().errors.load(); }

void noise_probe_reset(void) {
  std::lock_guard lock(registry().mu);
  for (auto& log : registry().logs) {
    std::lock_guard inner(log->mu);
    log->samples.clear();
    for (auto& r : log->regions) {
      r.open = false;
      r.next_index = 0;
    }
  }
  registry().errors.store(0);
}

void noise_thread_init(void) {
  if (noise_mem_thread_setup != nullptr) noise_mem_thread_setup();
}

void* noise_buffer_base(void) {
  return noise_mem_thread_base != nullptr ? noise_mem_thread_base() : nullptr;
}

}  // extern "C"
