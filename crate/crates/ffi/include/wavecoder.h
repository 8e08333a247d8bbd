#ifndef WAVECODER_H
#define WAVECODER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum WcStatus {
  WC_STATUS_OK = 0,
  WC_STATUS_NULL_POINTER = 1,
  WC_STATUS_INVALID_ARGUMENT = 2,
  WC_STATUS_SHAPE_MISMATCH = 3,
  WC_STATUS_SIZE_LIMIT = 4,
  WC_STATUS_FORMAT = 5,
  WC_STATUS_IO = 6,
  WC_STATUS_CONFIG = 7,
  WC_STATUS_NON_FINITE = 8,
  WC_STATUS_PANIC = 9,
  WC_STATUS_OTHER = 10,
} WcStatus;

/*
 Complex field on a grid.
 */
typedef struct WcField WcField;

/*
 Sampling grid.
 */
typedef struct WcGrid WcGrid;

/*
 Optical stack built from an experiment configuration.
 */
typedef struct WcModel WcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *wc_version(void);

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length, 0 if none.

 # Safety
 `buf` must be valid for `len` bytes or null.
 */
size_t wc_last_error_message(char *buf, size_t len);

/*
 # Safety
 `out` must be a valid pointer to receive the handle.
 */
enum WcStatus wc_grid_new(size_t n, double dx, double wavelength, struct WcGrid **out);

/*
 # Safety
 `grid` must come from [`wc_grid_new`] and not be used afterwards.
 */
void wc_grid_free(struct WcGrid *grid);

/*
 # Safety
 `grid` must be a live handle or null.
 */
size_t wc_grid_size(const struct WcGrid *grid);

/*
 Field from `2·n²` interleaved doubles.

 # Safety
 `values` must hold `len` doubles; `out` must be valid.
 */
enum WcStatus wc_field_new(const struct WcGrid *grid,
                           const double *values,
                           size_t len,
                           struct WcField **out);

/*
 Reads a field in the binary `WFLD` format.

 # Safety
 `path` must be a NUL-terminated string; `out` must be valid.
 */
enum WcStatus wc_field_read(const char *path, struct WcField **out);

/*
 # Safety
 `field` must be a live handle; `path` NUL-terminated.
 */
enum WcStatus wc_field_write(const struct WcField *field, const char *path);

/*
 # Safety
 `field` must come from this library and not be used afterwards.
 */
void wc_field_free(struct WcField *field);

/*
 # Safety
 `field` must be a live handle or null.
 */
size_t wc_field_size(const struct WcField *field);

/*
 `Σ|U|²·dx²`; NaN for a null handle.

 # Safety
 `field` must be a live handle or null.
 */
double wc_field_energy(const struct WcField *field);

/*
 Copies `2·n²` interleaved doubles into `out`.

 # Safety
 `out` must be valid for `len` doubles.
 */
enum WcStatus wc_field_values(const struct WcField *field, double *out, size_t len);

/*
 Copies the `n²` intensities `|U|²` into `out`.

 # Safety
 `out` must be valid for `len` doubles.
 */
enum WcStatus wc_field_intensity(const struct WcField *field, double *out, size_t len);

/*
 Angular-spectrum propagation over `distance` with zero-padding factor
 `pad_factor`.

 # Safety
 `field` must be a live handle; `out` must be valid.
 */
enum WcStatus wc_propagate_as(const struct WcField *field,
                              double distance,
                              size_t pad_factor,
                              struct WcField **out);

/*
 Direct Rayleigh-Sommerfeld summation; grids above 64 are rejected.

 # Safety
 `field` must be a live handle; `out` must be valid.
 */
enum WcStatus wc_propagate_direct(const struct WcField *field,
                                  double distance,
                                  struct WcField **out);

/*
 Builds the initial model described by a configuration file.

 # Safety
 `config_path` must be NUL-terminated; `out` must be valid.
 */
enum WcStatus wc_model_from_config(const char *config_path, struct WcModel **out);

/*
 Replaces parameters with those stored in a `params.bin` file.

 # Safety
 `model` must be a live handle; `path` NUL-terminated.
 */
enum WcStatus wc_model_load_params(struct WcModel *model, const char *path);

/*
 # Safety
 `model` must come from this library and not be used afterwards.
 */
void wc_model_free(struct WcModel *model);

/*
 Grid size `n` of the model.

 # Safety
 `model` must be a live handle or null.
 */
size_t wc_model_grid_size(const struct WcModel *model);

/*
 Number of values written by [`wc_model_forward`].

 # Safety
 `model` must be a live handle or null.
 */
size_t wc_model_output_len(const struct WcModel *model);

/*
 Encodes an `n²` image, runs the stack and writes the readout.

 # Safety
 `image` must hold `image_len` doubles and `out` `out_len` doubles.
 */
enum WcStatus wc_model_forward(const struct WcModel *model,
                               const double *image,
                               size_t image_len,
                               double *out,
                               size_t out_len);

/*
 Detector-plane field for an input field on the model's grid.

 # Safety
 Handles must be live; `out` must be valid.
 */
enum WcStatus wc_model_simulate(const struct WcModel *model,
                                const struct WcField *field,
                                struct WcField **out);

/*
 Runs the `train` command; `seed < 0` keeps the configured seed.

 # Safety
 Both paths must be NUL-terminated strings.
 */
enum WcStatus wc_train(const char *config_path, const char *out_dir, int64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVECODER_H */
