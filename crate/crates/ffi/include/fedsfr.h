#ifndef FEDSFR_H
#define FEDSFR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FsfrStatus {
  FSFR_STATUS_OK = 0,
  FSFR_STATUS_NULL_POINTER = 1,
  FSFR_STATUS_INVALID_UTF8 = 2,
  FSFR_STATUS_CONFIG = 3,
  FSFR_STATUS_SHAPE = 4,
  FSFR_STATUS_INVALID_ARGUMENT = 5,
  FSFR_STATUS_DATA = 6,
  FSFR_STATUS_IO = 7,
  FSFR_STATUS_NON_FINITE = 8,
  FSFR_STATUS_FINISHED = 9,
  FSFR_STATUS_BUFFER_TOO_SMALL = 10,
  FSFR_STATUS_PANIC = 99,
} FsfrStatus;

// JSCC model handle.
typedef struct FsfrModel FsfrModel;

// Training simulator handle.
typedef struct FsfrSimulator FsfrSimulator;

// Per-round metrics as plain values.
typedef struct FsfrRoundMetrics {
  uint64_t t;
  double eta_c;
  double eta_s;
  double train_lc;
  double test_lc_pre_fr;
  double test_lc_post_fr;
  double test_psnr_pre_fr;
  double test_psnr_post_fr;
  bool fr_improved;
  double epsilon_hat;
  double cos_ab;
  double mean_mem_sq;
  double memory_bound;
  double grad_norm_sq;
  double wall_ms;
} FsfrRoundMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL, or
// 0 if there is no error.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t fsfr_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *fsfr_version(void);

// Builds a simulator from TOML text. A null `config_toml` selects the
// bundled desk-scale config.
//
// # Safety
// `config_toml` must be null or a valid C string; `out` must be writable.
enum FsfrStatus fsfr_simulator_new(const char *config_toml, struct FsfrSimulator **out);

// Like [`fsfr_simulator_new`] but overrides the seed.
//
// # Safety
// As for [`fsfr_simulator_new`].
enum FsfrStatus fsfr_simulator_new_seeded(const char *config_toml,
                                          uint64_t seed,
                                          struct FsfrSimulator **out);

// # Safety
// `sim` must be null or a handle from `fsfr_simulator_new*` not yet freed.
void fsfr_simulator_free(struct FsfrSimulator *sim);

// Runs one round. Returns `Finished` once all configured rounds are done.
// `metrics` may be null.
//
// # Safety
// `sim` must be a live handle; `metrics` null or writable.
enum FsfrStatus fsfr_simulator_step(struct FsfrSimulator *sim, struct FsfrRoundMetrics *metrics);

// Index of the next round to run.
//
// # Safety
// `sim` must be a live handle; `out` writable.
enum FsfrStatus fsfr_simulator_round(const struct FsfrSimulator *sim, uint64_t *out);

// Total number of configured rounds.
//
// # Safety
// `sim` must be a live handle; `out` writable.
enum FsfrStatus fsfr_simulator_rounds(const struct FsfrSimulator *sim, uint64_t *out);

// Metrics of a completed round `t`.
//
// # Safety
// `sim` must be a live handle; `out` writable.
enum FsfrStatus fsfr_simulator_metrics(const struct FsfrSimulator *sim,
                                       uint64_t t,
                                       struct FsfrRoundMetrics *out);

// Writes the metrics of all completed rounds as CSV.
//
// # Safety
// `sim` must be a live handle; `path` a valid C string.
enum FsfrStatus fsfr_simulator_write_metrics(const struct FsfrSimulator *sim, const char *path);

// Copies the current global model into a new model handle.
//
// # Safety
// `sim` must be a live handle; `out` writable.
enum FsfrStatus fsfr_simulator_model(const struct FsfrSimulator *sim, struct FsfrModel **out);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a valid C string; `out` writable.
enum FsfrStatus fsfr_model_load(const char *path, struct FsfrModel **out);

// Writes a model checkpoint.
//
// # Safety
// `model` must be a live handle; `path` a valid C string.
enum FsfrStatus fsfr_model_save(const struct FsfrModel *model, const char *path);

// # Safety
// `model` must be null or a live handle not yet freed.
void fsfr_model_free(struct FsfrModel *model);

// Image element count (`C·H·W`), feature length `d` and parameter count.
// Any out pointer may be null.
//
// # Safety
// `model` must be a live handle.
enum FsfrStatus fsfr_model_dims(const struct FsfrModel *model,
                                size_t *image_len,
                                size_t *feature_dim,
                                size_t *param_count);

// Encodes one planar `C×H×W` image into its un-normalised feature.
//
// # Safety
// `image` must hold `image_len` values and `feature` `feature_len` slots.
enum FsfrStatus fsfr_model_encode(const struct FsfrModel *model,
                                  const double *image,
                                  size_t image_len,
                                  double *feature,
                                  size_t feature_len);

// Sends one image through encoder, AWGN channel at `snr_db` and decoder.
// The noise is a deterministic function of `seed`. `loss` may be null.
//
// # Safety
// `image` and `recon` must each hold `len` values.
enum FsfrStatus fsfr_model_transmit(const struct FsfrModel *model,
                                    const double *image,
                                    double *recon,
                                    size_t len,
                                    double snr_db,
                                    uint64_t seed,
                                    double *loss);

// PSNR in dB between two equally long buffers; `+inf` when identical.
//
// # Safety
// `recon` and `reference` must each hold `len` values; `out` writable.
enum FsfrStatus fsfr_psnr(const double *recon,
                          const double *reference,
                          size_t len,
                          double max_val,
                          double *out);

// Keeps the `budget` largest-magnitude non-zero entries of `values` (treated
// as one layer) and zeroes the rest in place. Writes the number kept.
//
// # Safety
// `values` must hold `len` values; `kept` writable.
enum FsfrStatus fsfr_top_s(double *values, size_t len, size_t budget, size_t *kept);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSFR_H */
