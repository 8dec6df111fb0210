#ifndef CLOCK2Q_H
#define CLOCK2Q_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum C2qStatus {
  C2Q_STATUS_OK = 0,
  C2Q_STATUS_NULL_POINTER = 1,
  C2Q_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A size or fraction in the configuration is out of range.
   */
  C2Q_STATUS_CONFIG = 3,
  /**
   * The loader callback failed.
   */
  C2Q_STATUS_LOAD = 4,
  /**
   * Another thread's load of the same block failed.
   */
  C2Q_STATUS_PEER_LOAD = 5,
  /**
   * Every eviction candidate is dirty, pinned or loading; flush and retry.
   */
  C2Q_STATUS_NO_EVICTABLE = 6,
  C2Q_STATUS_CONTENTION = 7,
  C2Q_STATUS_RESIZE_BUSY = 8,
  C2Q_STATUS_EXCEEDS_RESERVE = 9,
  /**
   * The store callback failed during a flush or shrink.
   */
  C2Q_STATUS_FLUSH = 10,
  C2Q_STATUS_BUFFER_SIZE = 11,
  C2Q_STATUS_PANIC = 12,
} C2qStatus;

typedef enum C2qFlushMode {
  /**
   * Flush every dirty block.
   */
  C2Q_FLUSH_MODE_ALL = 0,
  /**
   * Flush blocks dirty for longer than `age_sec`.
   */
  C2Q_FLUSH_MODE_AGE = 1,
  /**
   * If more than `high` of capacity is dirty, flush oldest first down to `low`.
   */
  C2Q_FLUSH_MODE_WATERMARK = 2,
} C2qFlushMode;

typedef enum C2qPolicy {
  C2Q_POLICY_LRU = 0,
  C2Q_POLICY_FIFO = 1,
  C2Q_POLICY_CLOCK = 2,
  C2Q_POLICY_TWO_Q = 3,
  C2Q_POLICY_CLOCK2Q = 4,
  C2Q_POLICY_S3FIFO1 = 5,
  C2Q_POLICY_S3FIFO2 = 6,
  C2Q_POLICY_CLOCK2Q_PLUS = 7,
} C2qPolicy;

/**
 * Opaque cache handle.
 */
typedef struct C2qCache C2qCache;

/**
 * Reads block `key` into `buf` (`len` bytes). Returns 0 on success.
 */
typedef int (*C2qLoadFn)(void *ctx, uint64_t key, uint8_t *buf, size_t len);

/**
 * Writes back dirty block `key` from `buf` (`len` bytes). Returns 0 on success.
 */
typedef int (*C2qStoreFn)(void *ctx, uint64_t key, const uint8_t *buf, size_t len);

typedef struct C2qConfig {
  size_t total_blocks;
  size_t block_size;
  /**
   * Largest capacity a later resize may ask for; 0 means `total_blocks`.
   */
  size_t reserve_blocks;
  double small_frac;
  double ghost_frac;
  double window_frac;
  /**
   * Ref-set entries the clock hand may skip per eviction; 0 is unbounded.
   */
  uint32_t reinsertion_limit;
  C2qLoadFn load;
  C2qStoreFn store;
  void *ctx;
} C2qConfig;

typedef struct C2qStats {
  uint64_t requests;
  uint64_t hits;
  uint64_t misses;
  uint64_t errors;
  uint64_t loads;
  uint64_t lost_races;
  uint64_t io_waits;
  uint64_t ghost_hits;
  uint64_t small_to_main;
  uint64_t small_to_ghost;
  uint64_t main_evictions;
  uint64_t giveups;
  uint64_t writes;
  uint64_t flushed;
  uint64_t capacity;
  uint64_t resident;
  uint64_t dirty;
} C2qStats;

typedef struct C2qRequest {
  uint64_t time_sec;
  uint64_t lbn;
  /**
   * Nonzero for a write.
   */
  uint8_t is_write;
} C2qRequest;

typedef struct C2qSimResult {
  uint64_t total_blocks;
  uint64_t requests;
  uint64_t hits;
  uint64_t misses;
  double miss_ratio;
  uint64_t small_to_main;
  uint64_t small_to_ghost;
  uint64_t ghost_to_main;
} C2qSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fill `out` with the default Clock2Q+ fractions for a cache of `total_blocks`.
 */
enum C2qStatus c2q_config_default(size_t total_blocks, size_t block_size, struct C2qConfig *out);

/**
 * Create a cache. A null `load` fills missing blocks with zeros; a null `store` discards
 * flushed data.
 */
enum C2qStatus c2q_cache_new(const struct C2qConfig *config, struct C2qCache **out);

/**
 * Destroy a cache. Dirty blocks are not flushed. Null is ignored.
 */
void c2q_cache_free(struct C2qCache *cache);

/**
 * Copy block `key` into `buf`, loading it on a miss. `len` must equal the block size.
 * `hit` may be null.
 */
enum C2qStatus c2q_cache_read(const struct C2qCache *cache,
                              uint64_t key,
                              uint8_t *buf,
                              size_t len,
                              bool *hit);

/**
 * Overwrite block `key` with `len` bytes from `data` and mark it dirty.
 */
enum C2qStatus c2q_cache_write(const struct C2qCache *cache,
                               uint64_t key,
                               const uint8_t *data,
                               size_t len);

/**
 * Write dirty blocks back through the store callback. `flushed` may be null.
 */
enum C2qStatus c2q_cache_flush(const struct C2qCache *cache,
                               enum C2qFlushMode mode,
                               uint64_t age_sec,
                               double low,
                               double high,
                               size_t *flushed);

/**
 * Change capacity while other threads keep using the cache. Shrinking writes dirty
 * blocks back through the store callback.
 */
enum C2qStatus c2q_cache_resize(const struct C2qCache *cache, size_t new_total_blocks);

enum C2qStatus c2q_cache_stats(const struct C2qCache *cache, struct C2qStats *out);

/**
 * Walk every structure and count invariant violations into `violations`.
 */
enum C2qStatus c2q_cache_check(const struct C2qCache *cache, size_t *violations);

/**
 * Replay `n` requests through `policy` at `total_blocks` with default fractions.
 */
enum C2qStatus c2q_simulate(const struct C2qRequest *requests,
                            size_t n,
                            enum C2qPolicy policy,
                            size_t total_blocks,
                            struct C2qSimResult *out);

/**
 * Message for the last failed call on this thread, or the first violation found by
 * [`c2q_cache_check`]. The pointer stays valid until the next call on this thread.
 */
const char *c2q_last_error(void);

/**
 * Static name of a status code.
 */
const char *c2q_status_str(enum C2qStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOCK2Q_H */
