#include "noise/marker.h"

void outside(double* a) {
  NOISE_ANCHOR(lonely);
  a[0] = 1.0;
}
