#ifndef VOICECLOAK_H
#define VOICECLOAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  VC_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  VC_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  VC_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, shape or value.
   */
  VC_STATUS_INVALID_ARGUMENT = 3,
  VC_STATUS_IO = 4,
  /**
   * Malformed WAV, weight file or JSON.
   */
  VC_STATUS_FORMAT = 5,
  /**
   * Zero-energy signal or near-zero vector norm.
   */
  VC_STATUS_NUMERIC = 6,
  /**
   * The output buffer is smaller than required; nothing was written.
   */
  VC_STATUS_BUFFER_TOO_SMALL = 7,
  VC_STATUS_PANIC = 8,
} VcStatus;

typedef enum {
  VC_METHOD_FGSM = 0,
  VC_METHOD_IFGSM = 1,
  VC_METHOD_GAUSSIAN = 2,
} VcMethod;

/**
 * Encoder weights plus the analysis front end.
 */
typedef struct VcEncoder VcEncoder;

/**
 * Mono audio buffer.
 */
typedef struct VcWaveform VcWaveform;

typedef struct {
  VcMethod method;
  /**
   * L-infinity budget on the STFT magnitude.
   */
  double epsilon;
  /**
   * I-FGSM step size.
   */
  double alpha;
  /**
   * I-FGSM iteration count.
   */
  uint32_t iterations;
  /**
   * Noise level of the Gaussian baseline, in dB.
   */
  double target_snr_db;
  uint64_t seed;
  bool clamp_nonnegative;
} VcProtectConfig;

typedef struct {
  /**
   * SNR of the output against the (resampled) input; infinite when identical.
   */
  double snr_db;
  /**
   * ΔCosD between clean and protected audio, re-analyzed.
   */
  double delta_cosd;
  /**
   * ΔCosD on the perturbed magnitude; NaN for the Gaussian baseline.
   */
  double magnitude_delta_cosd;
  /**
   * Loss after the last step; NaN for the Gaussian baseline.
   */
  double final_loss;
  size_t num_samples;
} VcProtectReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vc_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *vc_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *vc_status_name(VcStatus status);

/**
 * Copies `len` samples (nominally in [-1, 1]) into a new waveform.
 *
 * # Safety
 * `samples` must point to `len` readable doubles; `out` must be writable.
 */
VcStatus vc_waveform_from_samples(const double *samples,
                                  size_t len,
                                  uint32_t sample_rate,
                                  VcWaveform **out);

/**
 * Reads a mono WAV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
VcStatus vc_waveform_read(const char *path, VcWaveform **out);

/**
 * Writes a 16-bit PCM WAV file.
 *
 * # Safety
 * `wave` must be a live handle; `path` a NUL-terminated string.
 */
VcStatus vc_waveform_write(const VcWaveform *wave, const char *path);

/**
 * Number of samples; 0 for NULL.
 *
 * # Safety
 * `wave` must be NULL or a live handle.
 */
size_t vc_waveform_len(const VcWaveform *wave);

/**
 * Sample rate in Hz; 0 for NULL.
 *
 * # Safety
 * `wave` must be NULL or a live handle.
 */
uint32_t vc_waveform_sample_rate(const VcWaveform *wave);

/**
 * Copies the samples into `out`, which must hold `vc_waveform_len` values.
 *
 * # Safety
 * `wave` must be a live handle; `out` must point to `capacity` writable doubles.
 */
VcStatus vc_waveform_copy_samples(const VcWaveform *wave, double *out, size_t capacity);

/**
 * Releases a waveform; NULL is ignored.
 *
 * # Safety
 * `wave` must be NULL or a handle not yet freed.
 */
void vc_waveform_free(VcWaveform *wave);

/**
 * Random He-initialized encoder. `config_json` may be NULL for the default
 * architecture.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
 */
VcStatus vc_encoder_init(const char *config_json, uint64_t seed, VcEncoder **out);

/**
 * Loads a weight file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
VcStatus vc_encoder_load(const char *path, VcEncoder **out);

/**
 * Saves the weights.
 *
 * # Safety
 * `encoder` must be a live handle; `path` a NUL-terminated string.
 */
VcStatus vc_encoder_save(const VcEncoder *encoder, const char *path);

/**
 * Embedding dimension; 0 for NULL.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t vc_encoder_embed_dim(const VcEncoder *encoder);

/**
 * Releases an encoder; NULL is ignored.
 *
 * # Safety
 * `encoder` must be NULL or a handle not yet freed.
 */
void vc_encoder_free(VcEncoder *encoder);

/**
 * Speaker embedding of `wave` (resampled to 16 kHz if needed) into `out`,
 * which must hold `vc_encoder_embed_dim` values.
 *
 * # Safety
 * Handles must be live; `out` must point to `capacity` writable doubles.
 */
VcStatus vc_embed(const VcEncoder *encoder, const VcWaveform *wave, double *out, size_t capacity);

/**
 * Defaults used by the command-line tool: I-FGSM, ε = 0.02, α = 0.0004,
 * 50 iterations, 32 dB for the Gaussian baseline.
 */
VcProtectConfig vc_protect_config_default(void);

/**
 * Protects `wave` (resampled to 16 kHz if needed). The output is a new
 * 16 kHz waveform; `report` may be NULL.
 *
 * # Safety
 * Handles and `config` must be live; `out` must be writable; `report` must
 * be NULL or writable.
 */
VcStatus vc_protect(const VcEncoder *encoder,
                    const VcWaveform *wave,
                    const VcProtectConfig *config,
                    VcWaveform **out,
                    VcProtectReport *report);

/**
 * SNR of `test` against `reference` in dB; infinite when identical.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
VcStatus vc_snr_db(const VcWaveform *reference, const VcWaveform *test, double *out);

/**
 * ΔCosD (negative cosine similarity) between two embeddings of length `len`.
 *
 * # Safety
 * `e` and `e_tilde` must point to `len` readable doubles; `out` must be writable.
 */
VcStatus vc_delta_cosd(const double *e, const double *e_tilde, size_t len, double *out);

/**
 * Equal error rate (fraction in [0, 1]) and its threshold.
 *
 * # Safety
 * Score arrays must hold the given counts; `eer` must be writable;
 * `threshold` may be NULL.
 */
VcStatus vc_eer(const double *target_scores,
                size_t n_target,
                const double *nontarget_scores,
                size_t n_nontarget,
                double *eer,
                double *threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOICECLOAK_H */
