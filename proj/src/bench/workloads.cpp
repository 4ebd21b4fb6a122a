#include <algorithm>
#include <random>

#include "noise/bench.hpp"
#include "noise/error.hpp"

namespace noise::bench {

void CsrMatrix::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (row_offsets.size() != n_rows + 1) fail("row_offsets must have n_rows + 1 entries");
  if (row_offsets.front() != 0) fail("row_offsets must start at 0");
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (row_offsets[r + 1] < row_offsets[r]) fail("row_offsets must be non-decreasing");
  }
  if (row_offsets.back() != col_indices.size() || col_indices.size() != values.size()) {
    fail("row_offsets, col_indices and values disagree on the number of non-zeros");
  }
  for (auto c : col_indices) {
    if (c >= n_cols) fail("column index out of range");
  }
}

CsrMatrix generate_csr(std::size_t n, std::size_t nnz_per_row, double q, std::uint64_t seed) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::InvalidProbability, "swap probability must lie in [0, 1]");
  }
  if (nnz_per_row == 0 || nnz_per_row > n) {
    throw Error(ErrorCode::InvalidArgument, "need 1 <= nnz_per_row <= n");
  }
  CsrMatrix m;
  m.n_rows = m.n_cols = n;
  m.row_offsets.reserve(n + 1);
  m.col_indices.reserve(n * nnz_per_row);
  m.values.reserve(n * nnz_per_row);
  m.row_offsets.push_back(0);
  for (std::size_t r = 0; r < n; ++r) {
    // band centred on the diagonal, shifted inwards at the edges
    const std::size_t half = nnz_per_row / 2;
    const std::size_t first = std::min(r > half ? r - half : 0, n - nnz_per_row);
    for (std::size_t c = first; c < first + nnz_per_row; ++c) {
      m.col_indices.push_back(c);
      m.values.push_back(static_cast<double>(1 + (r * 7 + c * 3) % 9));
    }
    m.row_offsets.push_back(m.col_indices.size());
  }

  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t begin = m.row_offsets[r];
    const std::size_t len = m.row_offsets[r + 1] - begin;
    for (std::size_t p = 0; p < len; ++p) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      if (!(u < q)) continue;
      const std::size_t partner = rng() % len;
      std::swap(m.col_indices[begin + p], m.col_indices[begin + partner]);
      std::swap(m.values[begin + p], m.values[begin + partner]);
    }
  }
  return m;
}

std::vector<double> csr_multiply(const CsrMatrix& a, std::span<const double> x) {
  std::vector<double> y(a.n_rows, 0.0);
  for (std::size_t r = 0; r < a.n_rows; ++r) {
    double s = 0.0;
    for (auto j = a.row_offsets[r]; j < a.row_offsets[r + 1]; ++j) s += a.values[j] * x[a.col_indices[j]];
    y[r] = s;
  }
  return y;
}

std::vector<std::uint64_t> make_chain(std::size_t cells, std::uint64_t seed) {
  if (cells == 0) throw Error(ErrorCode::InvalidArgument, "chain needs at least one cell");
  std::vector<std::uint64_t> next(cells);
  for (std::size_t i = 0; i < cells; ++i) next[i] = i;
  std::mt19937_64 rng(seed);
  // Sattolo's variant (partner strictly below i) leaves exactly one cycle.
  for (std::size_t i = cells - 1; i > 0; --i) std::swap(next[i], next[rng() % i]);
  std::vector<std::uint64_t> out(cells * 8, 0);
  for (std::size_t i = 0; i < cells; ++i) out[i * 8] = next[i];
  return out;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace noise::bench
