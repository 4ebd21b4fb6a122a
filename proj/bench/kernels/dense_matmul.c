#include <stddef.h>
#include "noise/marker.h"

/* Rows [row_begin, row_end) of c += a*b, all n x n row-major. */
void dense_matmul_kernel(double* restrict c, const double* restrict a, const double* restrict b,
                         size_t n, size_t row_begin, size_t row_end) {
  for (size_t i = row_begin; i < row_end; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (size_t k = 0; k < n; ++k) {
        NOISE_ANCHOR(dense_matmul);
        s += a[i * n + k] * b[k * n + j];
      }
      c[i * n + j] = s;
    }
  }
}
