#include <stddef.h>
#include <stdint.h>
#include "noise/marker.h"

/* y = A*x for rows [row_begin, row_end) of a CSR matrix. */
void spmxv_kernel(double* restrict y, const uint64_t* restrict row_offsets,
                  const uint64_t* restrict cols, const double* restrict vals,
                  const double* restrict x, size_t row_begin, size_t row_end) {
  for (size_t r = row_begin; r < row_end; ++r) {
    double s = 0.0;
    for (uint64_t j = row_offsets[r]; j < row_offsets[r + 1]; ++j) {
      NOISE_ANCHOR(spmxv);
      s += vals[j] * x[cols[j]];
    }
    y[r] = s;
  }
}
