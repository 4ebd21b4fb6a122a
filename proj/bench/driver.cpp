// Shared main() for the benchmark kernels. Each kernel executable links one
// kernel object (possibly noise-injected) with this driver; the driver finds
// the kernel through weak references, so one archive serves all five.

#include <unistd.h>

#include <algorithm>
#include <barrier>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "noise/bench.hpp"
#include "noise/probe.h"

extern "C" {
__attribute__((weak)) void triad_kernel(double*, const double*, const double*, double, size_t);
__attribute__((weak)) uint64_t chain_kernel(const uint64_t*, uint64_t, size_t);
__attribute__((weak)) void fp_chain_kernel(double*, double, size_t);
__attribute__((weak)) void dense_matmul_kernel(double*, const double*, const double*, size_t, size_t,
                                               size_t);
__attribute__((weak)) void spmxv_kernel(double*, const uint64_t*, const uint64_t*, const double*,
                                        const double*, size_t, size_t);
}

namespace {

using noise::bench::checksum;

struct Options {
  std::string kernel;
  std::size_t size = 0;  // kernel specific, 0 = default
  std::size_t steps = 0;
  std::size_t iters = 5;
  std::size_t warmup = 1;
  unsigned threads = 1;
  std::uint64_t seed = 1;
  double q = 0.0;
  std::size_t nnz = 16;
  std::string config = "small";
  std::string expect;
  bool per_thread_buffers = false;
};

std::size_t llc_bytes() {
  const long v = sysconf(_SC_LEVEL3_CACHE_SIZE);
  return v > 0 ? static_cast<std::size_t>(v) : std::size_t{32} << 20;
}

std::size_t ram_bytes() {
  const long pages = sysconf(_SC_PHYS_PAGES);
  const long page = sysconf(_SC_PAGESIZE);
  return pages > 0 && page > 0 ? static_cast<std::size_t>(pages) * static_cast<std::size_t>(page)
                               : std::size_t{4} << 30;
}

std::pair<std::size_t, std::size_t> share(std::size_t n, unsigned t, unsigned threads) {
  return {n * t / threads, n * (t + 1) / threads};
}

// Runs work(t) on `threads` persistent workers per iteration; the probe wraps
// the whole fork-join region on the calling thread.
class Team {
public:
  Team(unsigned threads, bool per_thread_buffers) : threads_(threads), sync_(threads + 1) {
    if (threads_ <= 1) return;
    for (unsigned t = 0; t < threads_; ++t) {
      workers_.emplace_back([this, t, per_thread_buffers] {
        if (per_thread_buffers) noise_thread_init();
        for (;;) {
          sync_.arrive_and_wait();
          if (stop_) break;
          work_(t);
          sync_.arrive_and_wait();
        }
      });
    }
  }

  ~Team() {
    if (threads_ <= 1) return;
    stop_ = true;
    sync_.arrive_and_wait();
    for (auto& w : workers_) w.join();
  }

  // region == nullptr runs untimed.
  void run(const char* region, const std::function<void(unsigned)>& work) {
    if (region) noise_probe_begin(region);
    if (threads_ <= 1) {
      work(0);
    } else {
      work_ = work;
      sync_.arrive_and_wait();
      sync_.arrive_and_wait();
    }
    if (region) noise_probe_end(region);
  }

private:
  unsigned threads_;
  std::barrier<> sync_;
  std::vector<std::thread> workers_;
  std::function<void(unsigned)> work_;
  bool stop_ = false;
};

void repeat(const Options& o, Team& team, const char* region, const std::function<void(unsigned)>& work) {
  for (std::size_t i = 0; i < o.warmup; ++i) team.run(nullptr, work);
  for (std::size_t i = 0; i < o.iters; ++i) team.run(region, work);
}

std::uint64_t run_triad(const Options& o, Team& team) {
  const std::size_t n = o.size ? o.size : std::size_t{1} << 22;
  std::vector<double> a(n, 0.0), b(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    b[i] = static_cast<double>(i % 7 + 1);
    c[i] = static_cast<double>(i % 5);
  }
  repeat(o, team, "triad", [&](unsigned t) {
    auto [lo, hi] = share(n, t, std::max(1u, o.threads));
    triad_kernel(a.data() + lo, b.data() + lo, c.data() + lo, 3.0, hi - lo);
  });
  return checksum<double>(a);
}

std::uint64_t run_chain(const Options& o, Team& team) {
  const std::size_t bytes = o.size ? o.size : std::size_t{64} << 20;
  const std::size_t cells = std::max<std::size_t>(bytes / 64, 2);
  const std::size_t steps = o.steps ? o.steps : std::min<std::size_t>(cells, std::size_t{1} << 20);
  const auto chain = noise::bench::make_chain(cells, o.seed);
  std::vector<std::uint64_t> ends(std::max(1u, o.threads), 0);
  repeat(o, team, "dependent_load_chain", [&](unsigned t) {
    const std::uint64_t start = cells * t / std::max(1u, o.threads);
    ends[t] = chain_kernel(chain.data(), start, steps);
  });
  return checksum<std::uint64_t>(ends);
}

std::uint64_t run_fp_chain(const Options& o, Team& team) {
  const std::size_t n = o.size ? o.size : std::size_t{1} << 24;
  const unsigned threads = std::max(1u, o.threads);
  std::vector<double> acc(8 * threads);
  repeat(o, team, "fp_chain", [&](unsigned t) {
    double* mine = acc.data() + 8 * t;
    for (int j = 0; j < 8; ++j) mine[j] = static_cast<double>(j + 1);
    fp_chain_kernel(mine, 1.0, n);
  });
  return checksum<double>(acc);
}

std::uint64_t run_matmul(const Options& o, Team& team) {
  const std::size_t n = o.size ? o.size : 256;
  std::vector<double> a(n * n), b(n * n), c(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      a[i * n + k] = static_cast<double>(static_cast<long>((i + k) % 7) - 3);
      b[i * n + k] = static_cast<double>(static_cast<long>((i * k) % 5) - 2);
    }
  }
  repeat(o, team, "dense_matmul", [&](unsigned t) {
    auto [lo, hi] = share(n, t, std::max(1u, o.threads));
    std::fill(c.begin() + static_cast<std::ptrdiff_t>(lo * n), c.begin() + static_cast<std::ptrdiff_t>(hi * n), 0.0);
    dense_matmul_kernel(c.data(), a.data(), b.data(), n, lo, hi);
  });
  return checksum<double>(c);
}

std::uint64_t run_spmxv(const Options& o, Team& team) {
  std::size_t rows = o.size;
  if (rows == 0) {
    // Matrix footprint relative to the last-level cache: half of it for
    // "small", four times it for "large", never more than an eighth of RAM.
    const std::size_t per_row = o.nnz * 16 + 8;
    std::size_t target = o.config == "large" ? 4 * llc_bytes() : llc_bytes() / 2;
    target = std::min(target, ram_bytes() / 8);
    rows = std::max<std::size_t>(target / per_row, o.nnz);
  }
  const auto m = noise::bench::generate_csr(rows, std::min(o.nnz, rows), o.q, o.seed);
  std::vector<double> x(rows), y(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) x[i] = static_cast<double>(i % 3 + 1);
  repeat(o, team, "spmxv", [&](unsigned t) {
    auto [lo, hi] = share(rows, t, std::max(1u, o.threads));
    spmxv_kernel(y.data(), m.row_offsets.data(), m.col_indices.data(), m.values.data(), x.data(), lo, hi);
  });
  return checksum<double>(y);
}

struct Kernel {
  const char* name;
  bool present;
  std::uint64_t (*run)(const Options&, Team&);
};

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Benchmark kernel driver"};
  app.add_option("--kernel", o.kernel, "Kernel to run when several are linked in");
  app.add_option("--size", o.size, "Problem size (elements, bytes or rows; kernel specific)");
  app.add_option("--steps", o.steps, "Chain steps per iteration (dependent_load_chain)");
  app.add_option("--iters", o.iters, "Timed iterations");
  app.add_option("--warmup", o.warmup, "Untimed iterations before timing");
  app.add_option("--threads", o.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--seed", o.seed, "Seed for generated inputs");
  app.add_option("--q", o.q, "Swap probability (spmxv)");
  app.add_option("--nnz", o.nnz, "Non-zeros per row (spmxv)")->check(CLI::PositiveNumber);
  app.add_option("--config", o.config, "spmxv footprint: small or large")
      ->check(CLI::IsMember({"small", "large"}));
  app.add_option("--expect", o.expect, "Expected checksum (hex); mismatch exits with status 5");
  app.add_flag("--per-thread-buffers", o.per_thread_buffers,
               "Give each worker its own memory-noise buffer");
  CLI11_PARSE(app, argc, argv);

  const Kernel kernels[] = {
      {"triad", triad_kernel != nullptr, run_triad},
      {"dependent_load_chain", chain_kernel != nullptr, run_chain},
      {"fp_chain", fp_chain_kernel != nullptr, run_fp_chain},
      {"dense_matmul", dense_matmul_kernel != nullptr, run_matmul},
      {"spmxv", spmxv_kernel != nullptr, run_spmxv},
  };
  const Kernel* chosen = nullptr;
  for (const auto& k : kernels) {
    if (!k.present) continue;
    if (!o.kernel.empty() ? o.kernel == k.name : chosen == nullptr) {
      chosen = &k;
    } else if (o.kernel.empty()) {
      std::fprintf(stderr, "several kernels linked in; pick one with --kernel\n");
      return 2;
    }
  }
  if (chosen == nullptr) {
    std::fprintf(stderr, "kernel '%s' is not linked into this program\n", o.kernel.c_str());
    return 2;
  }

  std::uint64_t sum = 0;
  try {
    Team team(o.threads, o.per_thread_buffers);
    sum = chosen->run(o, team);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
  std::printf("kernel %s\nchecksum %016" PRIx64 "\n", chosen->name, sum);
  if (!o.expect.empty()) {
    const std::uint64_t want = std::strtoull(o.expect.c_str(), nullptr, 16);
    if (want != sum) {
      std::fprintf(stderr, "ChecksumMismatch: expected %016" PRIx64 ", got %016" PRIx64 "\n", want, sum);
      return 5;
    }
  }
  return 0;
}
