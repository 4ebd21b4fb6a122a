#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace noise::bench {

struct CsrMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::uint64_t> row_offsets;
  std::vector<std::uint64_t> col_indices;
  std::vector<double> values;

  /// Throws InvalidArgument when the arrays are inconsistent.
  void validate() const;
};

/// n x n band matrix with nnz_per_row sorted columns per row and small integer
/// values. Then, per element in row order, with probability q the (column,
/// value) pair is swapped with a uniformly chosen element of the same row.
///
/// Random stream: mt19937_64(seed); each element draws u = (x >> 11) * 2^-53
/// and swaps when u < q, in which case the partner is the next draw modulo the
/// row length. Throws InvalidProbability unless 0 <= q <= 1.
CsrMatrix generate_csr(std::size_t n, std::size_t nnz_per_row, double q, std::uint64_t seed);

/// y = A x in plain row order.
std::vector<double> csr_multiply(const CsrMatrix& a, std::span<const double> x);

/// Single random cycle over `cells` 64-byte cells: element 8*i holds the index
/// of the cell after i.
std::vector<std::uint64_t> make_chain(std::size_t cells, std::uint64_t seed);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

template <typename T>
std::uint64_t checksum(std::span<const T> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()}, h);
}

inline constexpr std::string_view kernel_names[] = {"triad", "dependent_load_chain", "fp_chain",
                                                    "dense_matmul", "spmxv"};

}  // namespace noise::bench
