#ifndef OQW_H
#define OQW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OqwStatus {
  OQW_STATUS_OK = 0,
  OQW_STATUS_NULL_POINTER = 1,
  OQW_STATUS_INVALID_ARGUMENT = 2,
  OQW_STATUS_PARSE_ERROR = 3,
  OQW_STATUS_INVALID_MODEL = 4,
  OQW_STATUS_INVALID_STATE = 5,
  OQW_STATUS_NUMERICAL_ERROR = 6,
  OQW_STATUS_BUFFER_TOO_SMALL = 7,
  OQW_STATUS_PANIC = 8,
} OqwStatus;

/*
 Opaque decomposition of the internal space, bound to its model.
 */
typedef struct OqwDecomposition OqwDecomposition;

/*
 Opaque walk model.
 */
typedef struct OqwModel OqwModel;

/*
 Opaque diagonal initial state.
 */
typedef struct OqwState OqwState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL
 terminated, truncated to `len`) and returns the full message length.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t oqw_last_error_message(char *buf, size_t len);

/*
 Parses and validates a model from JSON.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum OqwStatus oqw_model_from_json(const char *json, struct OqwModel **out);

/*
 # Safety
 `model` must be null or a handle from [`oqw_model_from_json`] not yet freed.
 */
void oqw_model_free(struct OqwModel *model);

/*
 Local dimension `h` and lattice dimension `d`.

 # Safety
 Pointers must be valid.
 */
enum OqwStatus oqw_model_dims(const struct OqwModel *model, size_t *local_dim, size_t *lattice_dim);

/*
 Parses and validates a diagonal state from JSON.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum OqwStatus oqw_state_from_json(const char *json, struct OqwState **out);

/*
 # Safety
 `state` must be null or a live handle.
 */
void oqw_state_free(struct OqwState *state);

/*
 Recurrent/transient split and blocks of the local channel.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum OqwStatus oqw_decompose(const struct OqwModel *model,
                             uint64_t seed,
                             struct OqwDecomposition **out);

/*
 # Safety
 `decomposition` must be null or a live handle.
 */
void oqw_decomposition_free(struct OqwDecomposition *decomposition);

/*
 Dimensions of the recurrent and transient spaces and the block count.

 # Safety
 Pointers must be valid.
 */
enum OqwStatus oqw_decomposition_summary(const struct OqwDecomposition *decomposition,
                                         size_t *recurrent_dim,
                                         size_t *transient_dim,
                                         size_t *block_count);

/*
 Dimension and multiplicity of block `index`.

 # Safety
 Pointers must be valid.
 */
enum OqwStatus oqw_block_info(const struct OqwDecomposition *decomposition,
                              size_t index,
                              size_t *dim,
                              size_t *multiplicity);

/*
 Absorption operator of block `index` as `h·h` row-major real and
 imaginary parts.

 # Safety
 `re` and `im` must be valid for `len` doubles.
 */
enum OqwStatus oqw_block_absorption(const struct OqwDecomposition *decomposition,
                                    size_t index,
                                    double *re,
                                    double *im,
                                    size_t len);

/*
 Drift `m` (`d` values) and covariance `D` (`d·d`, row-major) of block
 `index`.

 # Safety
 `mean` must hold `d` doubles and `covariance` `d·d`.
 */
enum OqwStatus oqw_block_clt(const struct OqwDecomposition *decomposition,
                             size_t index,
                             double *mean,
                             size_t mean_len,
                             double *covariance,
                             size_t covariance_len);

/*
 Block weights `a_α(ρ)`, one per block.

 # Safety
 `out` must hold `len` doubles.
 */
enum OqwStatus oqw_block_weights(const struct OqwDecomposition *decomposition,
                                 const struct OqwState *state,
                                 double *out,
                                 size_t len);

/*
 Rate function at `x` (`d` values). `regime` receives 1 for a full large
 deviation principle and 2 when only bounds hold.

 # Safety
 `x` must hold `len` doubles; `value` and `regime` must be writable.
 */
enum OqwStatus oqw_rate(const struct OqwDecomposition *decomposition,
                        const struct OqwState *state,
                        const double *x,
                        size_t len,
                        double *value,
                        int32_t *regime);

/*
 Simulates `trajectories` trajectories of `steps` steps and writes the
 displacements `X_n − X_0`, `d` values per trajectory.

 # Safety
 `out` must hold `len` values.
 */
enum OqwStatus oqw_simulate_displacements(const struct OqwModel *model,
                                          const struct OqwState *state,
                                          size_t steps,
                                          size_t trajectories,
                                          uint64_t seed,
                                          int64_t *out,
                                          size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *oqw_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OQW_H */
