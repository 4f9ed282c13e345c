#ifndef LEADER_H
#define LEADER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stdint.h>

/*
 Result of every call. Zero is success.
 */
typedef enum LeaderStatus {
  LEADER_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  LEADER_STATUS_NULL_ARG = 1,
  /*
   An argument was out of range or not valid UTF-8.
   */
  LEADER_STATUS_INVALID_ARG = 2,
  LEADER_STATUS_IO = 3,
  /*
   A file was malformed: image, minutiae, container or checksum.
   */
  LEADER_STATUS_FORMAT = 4,
  /*
   Weights or config do not describe a valid network.
   */
  LEADER_STATUS_MODEL = 5,
  /*
   A computation produced NaN or infinity.
   */
  LEADER_STATUS_NUMERIC = 6,
  /*
   Internal bug; the library caught a panic.
   */
  LEADER_STATUS_PANIC = 7,
} LeaderStatus;

typedef enum LeaderMinutiaKind {
  LEADER_MINUTIA_KIND_ENDING = 0,
  LEADER_MINUTIA_KIND_BIFURCATION = 1,
} LeaderMinutiaKind;

/*
 Opaque minutiae set handle.
 */
typedef struct LeaderMinutiae LeaderMinutiae;

/*
 Opaque network handle. Safe to share across threads for extraction.
 */
typedef struct LeaderModel LeaderModel;

/*
 One minutia. `theta` is radians in (-pi, pi], `quality` in [0, 1].
 */
typedef struct LeaderMinutia {
  uint32_t x;
  uint32_t y;
  double theta;
  enum LeaderMinutiaKind kind;
  double quality;
} LeaderMinutia;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call into the library on this
 thread.
 */
const char *leader_last_error_message(void);

/*
 Loads a weight container. `config_path` may be null for the built-in
 configuration.

 Path arguments must be null or NUL-terminated strings; `out` must be
 writable.
 */
enum LeaderStatus leader_model_load(const char *weights_path,
                                    const char *config_path,
                                    struct LeaderModel **out);

/*
 Builds the default network with seeded random weights.

 `out` must be writable.
 */
enum LeaderStatus leader_model_random(uint64_t seed, struct LeaderModel **out);

/*
 Releases a model. Null is ignored.

 `model` must come from this library and not be used afterwards.
 */
void leader_model_free(struct LeaderModel *model);

/*
 `model` must be a live handle; `out` must be writable.
 */
enum LeaderStatus leader_model_parameter_count(const struct LeaderModel *model, uint64_t *out);

/*
 Extracts minutiae from an 8-bit grayscale image stored row-major with
 `stride` bytes per row (`stride >= width`).

 `pixels` must point to `stride * height` readable bytes; `model` must be
 a live handle; `out` must be writable.
 */
enum LeaderStatus leader_extract(const struct LeaderModel *model,
                                 const uint8_t *pixels,
                                 uint32_t width,
                                 uint32_t height,
                                 uint32_t stride,
                                 double tau_q,
                                 struct LeaderMinutiae **out);

/*
 Reads a minutiae text file.

 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LeaderStatus leader_minutiae_read(const char *path, struct LeaderMinutiae **out);

/*
 Writes a minutiae text file atomically.

 `set` must be a live handle; `path` must be a NUL-terminated string.
 */
enum LeaderStatus leader_minutiae_write(const struct LeaderMinutiae *set, const char *path);

/*
 Number of minutiae in `set`; 0 for null.

 `set` must be null or a live handle.
 */
uint64_t leader_minutiae_len(const struct LeaderMinutiae *set);

/*
 `set` must be a live handle; `out` must be writable.
 */
enum LeaderStatus leader_minutiae_get(const struct LeaderMinutiae *set,
                                      uint64_t index,
                                      struct LeaderMinutia *out);

/*
 Releases a minutiae set. Null is ignored.

 `set` must come from this library and not be used afterwards.
 */
void leader_minutiae_free(struct LeaderMinutiae *set);

/*
 Ground-truth weight profile at distance `s` from a minutia.

 `out` must be writable.
 */
enum LeaderStatus leader_cmr_omega(double s,
                                   double delta,
                                   double beta,
                                   double sigma,
                                   double lambda,
                                   double *out);

/*
 Pairs two sets under one threshold level, without border filtering, and
 reports precision, recall and F1. Any output pointer may be null.

 Set handles must be live; non-null outputs must be writable.
 */
enum LeaderStatus leader_evaluate(const struct LeaderMinutiae *extracted,
                                  const struct LeaderMinutiae *ground_truth,
                                  double rho_t,
                                  double theta_t,
                                  bool type_aware,
                                  double *precision,
                                  double *recall,
                                  double *f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEADER_H */
