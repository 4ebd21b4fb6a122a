#include <stddef.h>
#include <stdint.h>
#include "noise/marker.h"

/* Follows the cycle stored in cells[8*i]; each cell is one 64-byte line. */
uint64_t chain_kernel(const uint64_t* cells, uint64_t start, size_t steps) {
  uint64_t p = start;
  for (size_t i = 0; i < steps; ++i) {
    NOISE_ANCHOR(dependent_load_chain);
    p = cells[p * 8];
  }
  return p;
}
