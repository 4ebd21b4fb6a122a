#include <stddef.h>
#include "noise/marker.h"

/* a = b + s*c, one pass. */
void triad_kernel(double* restrict a, const double* restrict b, const double* restrict c,
                  double s, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    NOISE_ANCHOR(triad);
    a[i] = b[i] + s * c[i];
  }
}
