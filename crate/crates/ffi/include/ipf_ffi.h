#ifndef IPF_FFI_H
#define IPF_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IpfStatus {
  IPF_STATUS_OK = 0,
  /**
   * Null pointer, bad length or out-of-range argument.
   */
  IPF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Malformed or inconsistent input data, including I/O failures.
   */
  IPF_STATUS_DATA = 2,
  /**
   * Non-finite values or a singular fit.
   */
  IPF_STATUS_NUMERICAL = 3,
  /**
   * Mask extraction found no lung region.
   */
  IPF_STATUS_NO_LUNG_REGION = 4,
  IPF_STATUS_INTERNAL = 5,
} IpfStatus;

typedef enum IpfSex {
  IPF_SEX_MALE = 0,
  IPF_SEX_FEMALE = 1,
} IpfSex;

typedef enum IpfSmoking {
  IPF_SMOKING_NEVER = 0,
  IPF_SMOKING_EX = 1,
  IPF_SMOKING_CURRENT = 2,
} IpfSmoking;

/**
 * A dataset directory loaded into memory.
 */
typedef struct IpfDataset IpfDataset;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct IpfModel IpfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *ipf_last_error(void);

/**
 * Least-squares line through `(weeks[i], fvc[i])`.
 *
 * # Safety
 * `weeks` and `fvc` must point to `n` readable values; the out pointers
 * must be writable.
 */
enum IpfStatus ipf_slope_fit(const double *weeks,
                             const double *fvc,
                             size_t n,
                             double *out_intercept,
                             double *out_slope);

/**
 * Laplace log-likelihood of one prediction; `clip` non-zero applies the
 * 70 mL / 1000 mL thresholds.
 *
 * # Safety
 * `out` must be writable.
 */
enum IpfStatus ipf_laplace_ll(double pred, double truth, double sigma, int32_t clip, double *out);

/**
 * Root-mean-square error of `n` pairs.
 *
 * # Safety
 * `pred` and `truth` must point to `n` readable values; `out` must be
 * writable.
 */
enum IpfStatus ipf_rmse(const double *pred, const double *truth, size_t n, double *out);

/**
 * Lung mask of a row-major HU slice with default parameters; writes 0 or 1
 * per pixel into `out_mask`.
 *
 * # Safety
 * `hu` must point to `width * height` readable floats and `out_mask` to as
 * many writable bytes.
 */
enum IpfStatus ipf_extract_lung_mask(const float *hu,
                                     size_t width,
                                     size_t height,
                                     uint8_t *out_mask);

/**
 * Loads a checkpoint written by `ipf train`. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct IpfModel *ipf_model_load(const char *path);

/**
 * # Safety
 * `model` must be null or a handle from [`ipf_model_load`] not yet freed.
 */
void ipf_model_free(struct IpfModel *model);

/**
 * Side length the model resizes slices to, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ipf_model_image_size(const struct IpfModel *model);

/**
 * Slope (mL/week) predicted from one HU slice and clinical values. `mask`
 * may be null to use an all-ones gate mask; otherwise it holds
 * `width * height` bytes, non-zero inside the lung.
 *
 * # Safety
 * `model` must be a live handle, `hu` must point to `width * height`
 * floats, `mask` to as many bytes when non-null, and `out_slope` must be
 * writable.
 */
enum IpfStatus ipf_model_predict_slice(const struct IpfModel *model,
                                       const float *hu,
                                       size_t width,
                                       size_t height,
                                       const uint8_t *mask,
                                       uint32_t age,
                                       enum IpfSex sex,
                                       enum IpfSmoking smoking,
                                       double *out_slope);

/**
 * Loads a dataset directory (`clinical.csv` plus `ct/`). Returns null on
 * failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct IpfDataset *ipf_dataset_load(const char *path);

/**
 * # Safety
 * `dataset` must be null or a handle from [`ipf_dataset_load`] not yet freed.
 */
void ipf_dataset_free(struct IpfDataset *dataset);

/**
 * Number of patients, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ipf_dataset_len(const struct IpfDataset *dataset);

/**
 * Patient id at `index`, owned by the dataset; null when out of range.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
const char *ipf_dataset_patient_id(const struct IpfDataset *dataset, size_t index);

/**
 * Patient-level slope: mean over the patient's kept slices, with lung
 * masks extracted on the fly. `out_true_slope` may be null; otherwise it
 * receives the least-squares slope of the patient's FVC series.
 *
 * # Safety
 * Both handles must be live and `out_slope` writable.
 */
enum IpfStatus ipf_model_predict_patient(const struct IpfModel *model,
                                         const struct IpfDataset *dataset,
                                         size_t index,
                                         double *out_slope,
                                         double *out_true_slope);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IPF_FFI_H */
