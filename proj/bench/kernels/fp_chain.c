#include <stddef.h>
#include "noise/marker.h"

/* Seven independent add chains: enough to keep the FP adders busy while
 * leaving half of the vector registers free for injected code. */
void fp_chain_kernel(double* acc, double c, size_t n) {
  double a0 = acc[0], a1 = acc[1], a2 = acc[2], a3 = acc[3], a4 = acc[4], a5 = acc[5], a6 = acc[6];
  for (size_t i = 0; i < n; ++i) {
    NOISE_ANCHOR(fp_chain);
    a0 += c;
    a1 += c;
    a2 += c;
    a3 += c;
    a4 += c;
    a5 += c;
    a6 += c;
  }
  acc[0] = a0;
  acc[1] = a1;
  acc[2] = a2;
  acc[3] = a3;
  acc[4] = a4;
  acc[5] = a5;
  acc[6] = a6;
}
