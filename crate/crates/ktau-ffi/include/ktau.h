/* C ABI for the ktau robust clustering library.
 * Kept in sync with src/lib.rs (see cbindgen.toml). */

#ifndef KTAU_H
#define KTAU_H

#include <stdint.h>
#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define KTAU_OK 0
#define KTAU_ERR_NULL_POINTER 1
#define KTAU_ERR_INVALID_ARGUMENT 2
#define KTAU_ERR_COMPUTATION 3
#define KTAU_ERR_BUFFER_TOO_SMALL 4

/* rho families for ktau_fit_ktau */
#define KTAU_FAMILY_BISQUARE 0
#define KTAU_FAMILY_SMOOTH_HARD_REJECTION 1

/* Opaque fitted-model handle. */
typedef struct KtauResult KtauResult;

/* Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread. */
const char *ktau_last_error(void);

/* Fits K-Tau-Centers on a row-major n x p matrix of doubles.
 * family: KTAU_FAMILY_*; improve nonzero runs the Mahalanobis
 * reassignment pass. Pass 0 for n_starts/max_iter/tol/beta to use the
 * defaults (20, 100, 1e-6, 0.01). On success *out owns the result;
 * release it with ktau_result_free. Returns an error code. */
int ktau_fit_ktau(const double *data,
                  size_t n,
                  size_t p,
                  size_t k,
                  int family,
                  size_t n_starts,
                  size_t max_iter,
                  double tol,
                  uint64_t seed,
                  double beta,
                  int improve,
                  KtauResult **out);

/* Shape accessors; return 0 on a null handle. */
size_t ktau_result_k(const KtauResult *handle);
size_t ktau_result_n(const KtauResult *handle);
size_t ktau_result_dim(const KtauResult *handle);

/* Tau-scale objective of the fit; NaN on a null handle. */
double ktau_result_tau(const KtauResult *handle);

/* Copies cluster centers into buf (row-major k x p, len doubles). */
int ktau_result_centers(const KtauResult *handle, double *buf, size_t len);

/* Copies per-point cluster labels into buf (len entries). */
int ktau_result_assignment(const KtauResult *handle, size_t *buf, size_t len);

/* Copies per-point outlier flags into buf as 0/1 bytes. */
int ktau_result_outlier_flags(const KtauResult *handle, uint8_t *buf, size_t len);

/* Releases a result handle. Null is a no-op. */
void ktau_result_free(KtauResult *handle);

#ifdef __cplusplus
}
#endif

#endif /* KTAU_H */
