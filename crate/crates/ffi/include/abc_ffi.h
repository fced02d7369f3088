#ifndef ABC_FFI_H
#define ABC_FFI_H

/* Generated from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of [`abc_store_ingest`].
 */
#define ABC_INGEST_ADMITTED 0

#define ABC_INGEST_BUFFERED 1

/**
 * Values of [`abc_store_is_confirmed`].
 */
#define ABC_TX_UNCONFIRMED 0

#define ABC_TX_CONFIRMED 1

#define ABC_TX_UNRESOLVED 2

typedef enum AbcStatus {
  ABC_STATUS_OK = 0,
  ABC_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bytes are not a canonical encoding.
   */
  ABC_STATUS_DECODE_ERROR = 2,
  /**
   * The store refused the message.
   */
  ABC_STATUS_REJECTED = 3,
  /**
   * Unknown message, or no certificate exists.
   */
  ABC_STATUS_NOT_FOUND = 4,
  /**
   * The search budget ran out before an answer.
   */
  ABC_STATUS_UNRESOLVED = 5,
  /**
   * A certificate failed verification.
   */
  ABC_STATUS_INVALID = 6,
  /**
   * Scenario text did not parse or configure.
   */
  ABC_STATUS_PARSE_ERROR = 7,
  /**
   * Internal failure; the handle should not be used further.
   */
  ABC_STATUS_PANIC = 8,
} AbcStatus;

/**
 * Opaque store handle.
 */
typedef struct AbcStore AbcStore;

/**
 * Bytes owned by the library.
 */
typedef struct AbcBuffer {
  uint8_t *data;
  size_t len;
} AbcBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a store from an encoded genesis message.
 *
 * # Safety
 * `genesis` must point to `len` readable bytes; `out` must be writable.
 */
enum AbcStatus abc_store_new(const uint8_t *genesis, size_t len, struct AbcStore **out);

/**
 * # Safety
 * `store` must come from [`abc_store_new`] and not be used afterwards.
 */
void abc_store_free(struct AbcStore *store);

/**
 * Ingests one encoded message. `outcome` receives `ABC_INGEST_ADMITTED`
 * or `ABC_INGEST_BUFFERED` (waiting for missing references).
 *
 * # Safety
 * `store` must be a live handle, `data` point to `len` readable bytes and
 * `outcome` be writable or null.
 */
enum AbcStatus abc_store_ingest(struct AbcStore *store,
                                const uint8_t *data,
                                size_t len,
                                int32_t *outcome);

/**
 * Number of admitted messages, the genesis included.
 *
 * # Safety
 * `store` must be a live handle and `out` writable.
 */
enum AbcStatus abc_store_len(struct AbcStore *store, size_t *out);

/**
 * Status of the transaction with the 32-byte id `tx`: one of the
 * `ABC_TX_*` values.
 *
 * # Safety
 * `store` must be a live handle, `tx` point to 32 bytes, `out` writable.
 */
enum AbcStatus abc_store_is_confirmed(struct AbcStore *store, const uint8_t *tx, int32_t *out);

/**
 * Number of confirmed transactions (the genesis not counted).
 *
 * # Safety
 * `store` must be a live handle and `out` writable.
 */
enum AbcStatus abc_store_confirmed_count(struct AbcStore *store, size_t *out);

/**
 * Searches a certificate for `tx` and hands back its encoding.
 *
 * # Safety
 * `store` must be a live handle, `tx` point to 32 bytes, `out` writable.
 */
enum AbcStatus abc_certificate_find(struct AbcStore *store,
                                    const uint8_t *tx,
                                    struct AbcBuffer *out);

/**
 * Checks an encoded certificate against the store: `Ok` when it holds,
 * `Invalid` when it does not.
 *
 * # Safety
 * `store` must be a live handle and `data` point to `len` readable bytes.
 */
enum AbcStatus abc_certificate_verify(struct AbcStore *store, const uint8_t *data, size_t len);

/**
 * Runs scenario text. `exit_code` receives 0 (expectations met), 1
 * (missed) or 3 (invariant violated); `report_json`, if not null, a JSON
 * report to release with [`abc_string_free`].
 *
 * # Safety
 * `text` must be a NUL-terminated string; the out pointers writable or null.
 */
enum AbcStatus abc_scenario_run(const char *text, int32_t *exit_code, char **report_json);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void abc_string_free(char *s);

/**
 * # Safety
 * `b` must come from this library (or be empty) and not be used afterwards.
 */
void abc_buffer_free(struct AbcBuffer b);

/**
 * Description of the last failure on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *abc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABC_FFI_H */
