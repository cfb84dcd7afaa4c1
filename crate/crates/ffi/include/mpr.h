#ifndef MPR_H
#define MPR_H

/* Generated from the mpr-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an interface call. Everything except `Ok` stores a
 * diagnostic for `mpr_last_error`.
 */
typedef enum MprStatus {
  MPR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MPR_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was malformed (bad UTF-8, bad geometry, wrong mode).
   */
  MPR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The configuration file could not be read or parsed.
   */
  MPR_STATUS_CONFIG = 3,
  /**
   * The dataset on disk is missing, malformed, or inconsistent.
   */
  MPR_STATUS_DATASET = 4,
  /**
   * Descriptor extraction failed.
   */
  MPR_STATUS_DESCRIPTOR = 5,
  /**
   * Matching failed.
   */
  MPR_STATUS_MATCHING = 6,
  /**
   * Coefficient tuning failed.
   */
  MPR_STATUS_TUNING = 7,
  /**
   * Evaluation against ground truth failed.
   */
  MPR_STATUS_EVALUATION = 8,
  /**
   * Writing an output file failed.
   */
  MPR_STATUS_IO = 9,
  /**
   * An internal panic was caught; the object it happened on is left in
   * an undefined state and must only be freed.
   */
  MPR_STATUS_PANIC = 10,
} MprStatus;

/**
 * An indexed database plus streaming matcher; create with
 * `mpr_engine_new`, destroy with `mpr_engine_free`.
 */
typedef struct MprEngine MprEngine;

/**
 * One query frame. Image buffers are row-major and optional (null when
 * the modality is absent); `width` and `height` apply to all of them.
 */
typedef struct MprFrame {
  /**
   * Position in the query sequence; also names the external embedding
   * file when `embedding` is null.
   */
  size_t index;
  /**
   * Interleaved 8-bit RGB, `width * height * 3` bytes, or null.
   */
  const uint8_t *color;
  /**
   * Depth in millimeters, `width * height` values, or null.
   */
  const uint16_t *depth;
  /**
   * 8-bit infrared intensities, `width * height` bytes, or null.
   */
  const uint8_t *infrared;
  uint32_t width;
  uint32_t height;
  /**
   * GNSS fix in degrees; ignored unless `gnss_valid` is true.
   */
  double lat;
  double lon;
  bool gnss_valid;
  /**
   * Embedding vector for the cnn channel, or null to read it from the
   * configured descriptor directory.
   */
  const float *embedding;
  size_t embedding_len;
} MprFrame;

/**
 * The matcher's verdict on one query frame.
 */
typedef struct MprDecision {
  size_t query_index;
  /**
   * Database frame with the best fused score.
   */
  size_t best_db_index;
  double best_score;
  /**
   * True when the best score reached the acceptance threshold.
   */
  bool accepted;
} MprDecision;

/**
 * Result summary of a batch run. The quality numbers are only meaningful
 * when `has_metrics` is true (a ground truth file was configured).
 */
typedef struct MprMetrics {
  double precision;
  double recall;
  double f1;
  /**
   * Mean localization error in database frame indices.
   */
  double mean_error;
  double extraction_seconds;
  double matching_seconds;
  double overall_seconds;
  bool has_metrics;
} MprMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mpr_version(void);

/**
 * Message of this thread's most recent failure. The pointer stays valid
 * until the next failing call on the same thread; never free it.
 */
const char *mpr_last_error(void);

/**
 * Creates an engine from a testing-mode configuration file: loads the
 * database sequence, extracts its descriptors, and prepares the matcher.
 * On success `*out` owns the engine.
 *
 * # Safety
 * `config_path` must be NUL-terminated and `out` non-null.
 */
enum MprStatus mpr_engine_new(const char *config_path, struct MprEngine **out);

/**
 * Number of database frames the engine indexed; 0 for a null engine.
 *
 * # Safety
 * `engine` must be null or a live pointer from `mpr_engine_new`.
 */
size_t mpr_engine_db_len(const struct MprEngine *engine);

/**
 * Matches the next query frame and writes the decision to `*out`.
 * Frames must be pushed in sequence order, one call per frame.
 *
 * # Safety
 * All pointers must satisfy the layout documented on [`MprFrame`];
 * `engine` must be live and not used concurrently from another thread.
 */
enum MprStatus mpr_engine_push_frame(struct MprEngine *engine,
                                     const struct MprFrame *frame,
                                     struct MprDecision *out);

/**
 * Destroys an engine. Null is a no-op; the pointer is invalid afterwards.
 *
 * # Safety
 * `engine` must be null or a live pointer from `mpr_engine_new`, and must
 * not be used again.
 */
void mpr_engine_free(struct MprEngine *engine);

/**
 * Executes a testing-mode configuration end to end and fills `*out`.
 * Output files land in the directory the configuration names.
 *
 * # Safety
 * `config_path` must be NUL-terminated and `out` non-null.
 */
enum MprStatus mpr_run_testing(const char *config_path, struct MprMetrics *out);

/**
 * Executes a tuning-mode configuration end to end and fills `*out`.
 *
 * # Safety
 * `config_path` must be NUL-terminated and `out` non-null.
 */
enum MprStatus mpr_run_tuning(const char *config_path, struct MprMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPR_H */
