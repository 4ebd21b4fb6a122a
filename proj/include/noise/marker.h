/* Source-level markers for noise injection and timing probes. */
#ifndef NOISE_MARKER_H
#define NOISE_MARKER_H

#include "noise/probe.h"

#define NOISE_STR_(x) #x
#define NOISE_STR(x) NOISE_STR_(x)

/* Place inside the innermost loop to be noised. Emits only an assembly comment;
 * the "memory" clobber is deliberately absent so optimization is unaffected. */
#if defined(__aarch64__)
#define NOISE_ANCHOR(id) __asm__ volatile("// NOISE_ANCHOR:" NOISE_STR(id))
#else
#define NOISE_ANCHOR(id) __asm__ volatile("# NOISE_ANCHOR:" NOISE_STR(id))
#endif

#define NOISE_REGION_BEGIN(id) noise_probe_begin(id)
#define NOISE_REGION_END(id) noise_probe_end(id)

#endif
