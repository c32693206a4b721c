#ifndef RANDEXT_H
#define RANDEXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RxStatus {
  RX_STATUS_OK = 0,
  /**
   * Bad configuration, malformed input, or an argument out of range.
   */
  RX_STATUS_INVALID_INPUT = 1,
  /**
   * The computation could not meet its contract (stall, exceeded cap).
   */
  RX_STATUS_CONTRACT_FAILURE = 2,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  RX_STATUS_NULL_POINTER = 3,
  /**
   * The caller's output buffer is too small; the needed size was written.
   */
  RX_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * A bug: the library panicked.
   */
  RX_STATUS_INTERNAL = 5,
} RxStatus;

/**
 * Opaque n-block extractor.
 */
typedef struct RxBlockMap RxBlockMap;

/**
 * Opaque probability measure on infinite bit sequences.
 */
typedef struct RxMeasure RxMeasure;

/**
 * Opaque DDG tree.
 */
typedef struct RxTree RxTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `rx_*` call on this thread.
 */
const char *rx_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer previously returned through a `char **`
 * out-parameter of this library, not yet freed.
 */
void rx_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rx_version(void);

/**
 * Parses a measure config such as `bernoulli:1/4` or a JSON object.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum RxStatus rx_measure_new(const char *config, struct RxMeasure **out);

/**
 * # Safety
 * `m` must be null or a live handle from [`rx_measure_new`].
 */
void rx_measure_free(struct RxMeasure *m);

/**
 * Entropy rate h(μ) in bits per symbol.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum RxStatus rx_measure_entropy_rate(const struct RxMeasure *m, double *out);

/**
 * Exact μ(⟦σ⟧) as "num/den".
 *
 * # Safety
 * `bits` must hold `len` readable bytes; `out` must be writable.
 */
enum RxStatus rx_measure_cylinder_mass(const struct RxMeasure *m,
                                       const uint8_t *bits,
                                       size_t len,
                                       char **out);

/**
 * Von Neumann's 2-block extractor.
 *
 * # Safety
 * `out` must be writable.
 */
enum RxStatus rx_blockmap_von_neumann(struct RxBlockMap **out);

/**
 * Parses a block table: one `input<TAB>output` line per block, `-` for ε.
 *
 * # Safety
 * `table` must be a NUL-terminated string; `out` must be writable.
 */
enum RxStatus rx_blockmap_parse(const char *table, struct RxBlockMap **out);

/**
 * # Safety
 * `b` must be null or a live block-map handle.
 */
void rx_blockmap_free(struct RxBlockMap *b);

/**
 * Exact Rate(φ, μ) as "num/den".
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum RxStatus rx_blockmap_rate(const struct RxBlockMap *b, const struct RxMeasure *m, char **out);

/**
 * Applies the extractor to `len` input bits. Writes up to `out_cap` output
 * bits to `out` and the output length to `out_len`; returns
 * `BufferTooSmall` (with `out_len` set) when `out_cap` is short.
 *
 * # Safety
 * `bits` must hold `len` bytes, `out` must hold `out_cap` bytes.
 */
enum RxStatus rx_blockmap_apply(const struct RxBlockMap *b,
                                const uint8_t *bits,
                                size_t len,
                                uint8_t *out,
                                size_t out_cap,
                                size_t *out_len);

/**
 * Builds a DDG tree from a tree file's text, `ky: p1,p2,...`,
 * `tree: 0=a,10=b,...`, or a bundled name. `tail_tol` may be null.
 *
 * # Safety
 * Strings must be NUL-terminated (or `tail_tol` null); `out` writable.
 */
enum RxStatus rx_tree_new(const char *config, const char *tail_tol, struct RxTree **out);

/**
 * # Safety
 * `t` must be null or a live tree handle.
 */
void rx_tree_free(struct RxTree *t);

/**
 * Number of output labels.
 *
 * # Safety
 * `t` must be a live handle; `out` writable.
 */
enum RxStatus rx_tree_alphabet_size(const struct RxTree *t, size_t *out);

/**
 * AvgRT as "num/den" (exact for finite trees, a lower bound for infinite
 * ones) and its certified tail bound ("0/1" when exact). `tail_bound` may
 * be null.
 *
 * # Safety
 * `t` must be a live handle; `value` writable.
 */
enum RxStatus rx_tree_avg_rt(const struct RxTree *t, char **value, char **tail_bound);

/**
 * Extracts up to `count` labels (indices into the alphabet) from `len`
 * input bits. Returns `ContractFailure` when the input runs out first;
 * the labels produced so far are still written and counted.
 *
 * # Safety
 * `bits` must hold `len` bytes, `labels` must hold `count` entries.
 */
enum RxStatus rx_tree_extract(const struct RxTree *t,
                              const uint8_t *bits,
                              size_t len,
                              size_t count,
                              uint32_t *labels,
                              size_t *out_count,
                              size_t *consumed);

/**
 * Converts `len` μ-distributed input bits into `out_bits` ν-distributed
 * output bits. Returns `ContractFailure` if the input runs out first.
 *
 * # Safety
 * `bits` must hold `len` bytes and `out` must hold `out_bits` bytes.
 */
enum RxStatus rx_convert(const struct RxMeasure *from,
                         const struct RxMeasure *to,
                         const uint8_t *bits,
                         size_t len,
                         size_t out_bits,
                         uint8_t *out,
                         size_t *consumed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RANDEXT_H */
