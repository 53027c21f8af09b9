#ifndef JSCC_H
#define JSCC_H

/* Generated by cbindgen from jscc-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum jscc_status_t {
  /**
   * Success.
   */
  JSCC_STATUS_T_OK = 0,
  /**
   * A required pointer argument was null.
   */
  JSCC_STATUS_T_NULL_ARGUMENT = 1,
  /**
   * Arguments were structurally valid but semantically wrong (bad config,
   * off-grid level, wrong buffer length, ...).
   */
  JSCC_STATUS_T_INVALID = 2,
  /**
   * A required external resource is missing on this host.
   */
  JSCC_STATUS_T_UNAVAILABLE = 3,
  /**
   * Internal failure (I/O, tensor math, caught panic).
   */
  JSCC_STATUS_T_RUNTIME = 4,
} jscc_status_t;

/**
 * Opaque handle to a trained codec loaded from a run directory.
 */
typedef struct jscc_codec_t jscc_codec_t;

/**
 * Opaque experiment-configuration handle.
 */
typedef struct jscc_config_t jscc_config_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread (empty string if none
 * yet). Valid until the next failing call on the same thread.
 */
const char *jscc_last_error(void);

/**
 * Library version as a static string.
 */
const char *jscc_version(void);

/**
 * Parse an experiment config from a TOML file.
 */
enum jscc_status_t jscc_config_load(const char *path, struct jscc_config_t **out);

/**
 * Parse an experiment config from TOML text.
 */
enum jscc_status_t jscc_config_from_toml(const char *toml, struct jscc_config_t **out);

/**
 * Release a config handle (null is a no-op).
 */
void jscc_config_free(struct jscc_config_t *cfg);

/**
 * Number of bandwidth levels on the grid.
 */
enum jscc_status_t jscc_config_levels(const struct jscc_config_t *cfg, size_t *out);

/**
 * Bandwidth ratio of a 1-based grid level.
 */
enum jscc_status_t jscc_config_rho(const struct jscc_config_t *cfg, size_t level, double *out);

/**
 * Complex channel symbols transmitted at a 1-based grid level.
 */
enum jscc_status_t jscc_config_symbols(const struct jscc_config_t *cfg, size_t level, size_t *out);

/**
 * Copy the config hash (hex) into a caller buffer of `cap` bytes
 * (NUL-terminated; 65 bytes suffice).
 */
enum jscc_status_t jscc_config_hash(const struct jscc_config_t *cfg, char *buf, size_t cap);

/**
 * Loss weight for a PSNR gap of `delta_db` under the clipped exponential
 * policy.
 */
double jscc_weight(double delta_db, double alpha, double beta, double gamma);

/**
 * Error-free bits a capacity-achieving code delivers for
 * `rho * source_dim` complex channel uses at `snr_db`.
 */
uint64_t jscc_capacity_bits(double rho, size_t source_dim, double snr_db);

/**
 * Complex noise variance for a given SNR in dB (unit signal power).
 */
double jscc_noise_variance(double snr_db);

/**
 * Scale `buf` (interleaved re/im pairs, so `len` must be even) to unit
 * average power per complex symbol.
 */
enum jscc_status_t jscc_normalize_power(float *buf, size_t len);

/**
 * Like [`jscc_normalize_power`], but each of `blocks` equal consecutive
 * blocks is normalized independently.
 */
enum jscc_status_t jscc_normalize_power_blocks(float *buf, size_t len, size_t blocks);

/**
 * Add complex white Gaussian noise at `snr_db` (assuming unit signal
 * power), seeded deterministically.
 */
enum jscc_status_t jscc_awgn(float *buf, size_t len, double snr_db, uint64_t seed);

/**
 * PSNR in dB between two equal-length buffers on the [0, 1] pixel scale.
 */
enum jscc_status_t jscc_psnr(const float *a, const float *b, size_t len, double *out);

/**
 * Load a trained codec from a run directory (`config.toml` +
 * `best.safetensors`).
 */
enum jscc_status_t jscc_codec_open(const char *run_dir, struct jscc_codec_t **out);

/**
 * Release a codec handle (null is a no-op).
 */
void jscc_codec_free(struct jscc_codec_t *codec);

/**
 * `f32` elements per image (channels x height x width).
 */
enum jscc_status_t jscc_codec_image_elems(const struct jscc_codec_t *codec, size_t *out);

/**
 * `f32` elements (interleaved re/im) per image on the channel at a level.
 */
enum jscc_status_t jscc_codec_symbol_elems(const struct jscc_codec_t *codec,
                                           size_t level,
                                           size_t *out);

/**
 * Encode a batch of images (`batch * image_elems` floats in [0, 1]) to
 * masked, power-normalized channel symbols (`batch * symbol_elems(level)`
 * floats).
 */
enum jscc_status_t jscc_codec_encode(const struct jscc_codec_t *codec,
                                     const float *pixels,
                                     size_t batch,
                                     size_t level,
                                     double snr_db,
                                     float *out,
                                     size_t out_len);

/**
 * Decode received channel symbols (`batch * symbol_elems(level)` floats)
 * back to images (`batch * image_elems` floats, clamped to [0, 1]).
 */
enum jscc_status_t jscc_codec_decode(const struct jscc_codec_t *codec,
                                     const float *symbols,
                                     size_t batch,
                                     size_t level,
                                     double snr_db,
                                     float *out,
                                     size_t out_len);

/**
 * Full chain at one grid point: encode, mask, normalize, AWGN at `snr_db`
 * (seeded by `noise_seed`), zero-pad, decode. Input and output are
 * `batch * image_elems` floats.
 */
enum jscc_status_t jscc_codec_transmit(const struct jscc_codec_t *codec,
                                       const float *pixels,
                                       size_t batch,
                                       size_t level,
                                       double snr_db,
                                       uint64_t noise_seed,
                                       float *out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JSCC_H */
