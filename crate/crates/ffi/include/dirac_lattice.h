#ifndef DIRAC_LATTICE_H
#define DIRAC_LATTICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DL_MODEL_CONTINUOUS 0

#define DL_MODEL_FB 1

#define DL_MODEL_S 2

#define DL_MODEL_FB_MOD 3

#define DL_MODEL_S_MOD 4

/**
 * Result codes.
 */
typedef enum DlStatus {
  DL_STATUS_OK = 0,
  DL_STATUS_INVALID_ARGUMENT = 1,
  DL_STATUS_DIMENSION_MISMATCH = 2,
  DL_STATUS_SINGULAR = 3,
  DL_STATUS_UNSUPPORTED = 4,
  DL_STATUS_DEGENERATE_DATA = 5,
  DL_STATUS_PRECONDITION = 6,
  DL_STATUS_NOT_CONVERGED = 7,
  DL_STATUS_FORMAT = 8,
  DL_STATUS_IO = 9,
  DL_STATUS_NULL_POINTER = 10,
  DL_STATUS_BUFFER_TOO_SMALL = 11,
  DL_STATUS_PANIC = 12,
} DlStatus;

/**
 * Opaque spinor field on a lattice.
 */
typedef struct DlField DlField;

/**
 * Opaque periodic lattice.
 */
typedef struct DlLattice DlLattice;

/**
 * Opaque model descriptor.
 */
typedef struct DlModel DlModel;

/**
 * Complex number with the memory layout of two consecutive doubles.
 */
typedef struct DlComplex {
  double re;
  double im;
} DlComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *dl_last_error_message(void);

/**
 * Creates a model. `h` is ignored for `DL_MODEL_CONTINUOUS`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DlStatus dl_model_new(int32_t kind, uint32_t d, double mass, double h, struct DlModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from `dl_model_new` not yet freed.
 */
void dl_model_free(struct DlModel *model);

/**
 * Spinor size ν (2 for d ≤ 2, 4 for d = 3).
 *
 * # Safety
 * `model` must be a live handle; `out` valid for writes.
 */
enum DlStatus dl_model_nu(const struct DlModel *model, uint32_t *out);

/**
 * Writes the ν×ν symbol at momentum `xi` (length d) row-major into `out`
 * (capacity `out_len` ≥ ν²).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum DlStatus dl_symbol(const struct DlModel *model,
                        const double *xi,
                        size_t d,
                        struct DlComplex *out,
                        size_t out_len);

/**
 * Sup-norm symbol resolvent difference against the continuum for each mesh
 * size in `h_list` (strictly decreasing); values go to `out_values`.
 *
 * # Safety
 * Pointers must be valid for `len` elements.
 */
enum DlStatus dl_symbol_sweep(const struct DlModel *model,
                              struct DlComplex z,
                              const double *h_list,
                              size_t len,
                              size_t grid_n,
                              double *out_values);

/**
 * Least-squares slope of `log values` against `log h`.
 *
 * # Safety
 * Pointers must be valid for `len` elements; `slope` valid for writes.
 */
enum DlStatus dl_fit_loglog(const double *h, const double *values, size_t len, double *slope);

/**
 * Creates an `n^d` lattice of mesh `h`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DlStatus dl_lattice_new(uint32_t d, size_t n, double h, struct DlLattice **out);

/**
 * # Safety
 * `lattice` must be NULL or a live handle.
 */
void dl_lattice_free(struct DlLattice *lattice);

/**
 * Field with seeded random entries.
 *
 * # Safety
 * `lattice` must be a live handle; `out` valid for writes.
 */
enum DlStatus dl_field_random(const struct DlLattice *lattice, uint64_t seed, struct DlField **out);

/**
 * Field from `len = sites·ν` values, site-major with spinor components innermost.
 *
 * # Safety
 * `values` must be valid for `len` elements; `out` valid for writes.
 */
enum DlStatus dl_field_from_values(const struct DlLattice *lattice,
                                   const struct DlComplex *values,
                                   size_t len,
                                   struct DlField **out);

/**
 * Number of complex entries (`sites·ν`).
 *
 * # Safety
 * `field` must be a live handle; `out` valid for writes.
 */
enum DlStatus dl_field_len(const struct DlField *field, size_t *out);

/**
 * Copies the entries into `out` (capacity `len`).
 *
 * # Safety
 * `out` must be valid for `len` elements.
 */
enum DlStatus dl_field_values(const struct DlField *field, struct DlComplex *out, size_t len);

/**
 * Discrete L² norm `(h^d Σ |u|²)^{1/2}`.
 *
 * # Safety
 * `field` must be a live handle; `out` valid for writes.
 */
enum DlStatus dl_field_norm(const struct DlField *field, double *out);

/**
 * # Safety
 * `field` must be NULL or a live handle.
 */
void dl_field_free(struct DlField *field);

/**
 * Applies the free lattice Dirac operator.
 *
 * # Safety
 * Handles must be live; `out` valid for writes.
 */
enum DlStatus dl_apply_free_dirac(const struct DlModel *model,
                                  const struct DlField *field,
                                  struct DlField **out);

/**
 * Solves `(H_{0,h} − z) u = f`.
 *
 * # Safety
 * Handles must be live; `out` valid for writes.
 */
enum DlStatus dl_free_resolvent(const struct DlModel *model,
                                struct DlComplex z,
                                const struct DlField *field,
                                struct DlField **out);

/**
 * Writes a DLAT1 snapshot atomically.
 *
 * # Safety
 * `field` must be live; `path` NUL-terminated.
 */
enum DlStatus dl_field_save(const struct DlField *field, const char *path);

/**
 * Reads a DLAT1 snapshot.
 *
 * # Safety
 * `path` NUL-terminated; `out` valid for writes.
 */
enum DlStatus dl_field_load(const char *path, struct DlField **out);

/**
 * Runs acceptance criterion `id` (1 to 10); `passed` receives 1 or 0.
 *
 * # Safety
 * `passed` must be valid for writes.
 */
enum DlStatus dl_run_criterion(uint32_t id, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIRAC_LATTICE_H */
