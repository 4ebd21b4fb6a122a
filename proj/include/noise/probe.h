/* Timing probe runtime. C ABI so instrumented code in any language can link it. */
#ifndef NOISE_PROBE_H
#define NOISE_PROBE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Starts timing `region_id` on the calling thread. Beginning a region that is
 * already open on this thread records a NestedRegion error and is ignored. */
void noise_probe_begin(const char* region_id);

/* Appends one sample (now - begin) for `region_id`. Without a matching begin
 * an OrphanEnd error is recorded and nothing is appended. */
void noise_probe_end(const char* region_id);

/* Writes region_id,thread_id,sample_index,duration_ns to `path` (NULL selects
 * $NOISE_PROBE_OUT, else ./noise_samples.csv). Returns 0 on success; on I/O
 * failure prints to stderr and returns -1. Runs automatically at exit unless
 * NOISE_PROBE_NO_AUTODUMP is set. */
int noise_probe_dump(const char* path);

/* NestedRegion and OrphanEnd events recorded so far, all threads. */
uint64_t noise_probe_error_count(void);

/* Drops all samples and errors (test harnesses). */
void noise_probe_reset(void);

/* Gives the calling thread its own memory-noise buffer when the memory noise
 * support is linked in. Safe to call more than once. */
void noise_thread_init(void);

/* Start of the calling thread's memory-noise buffer, NULL when none. */
void* noise_buffer_base(void);

/* Read by injected code. */
extern uint64_t noise_l1_buffer[512];

#ifdef __cplusplus
}
#endif

#endif
