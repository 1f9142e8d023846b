#ifndef HC_EQTL_H
#define HC_EQTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcStatus {
  HcStatus_Ok = 0,
  HcStatus_NullPointer = 1,
  HcStatus_InvalidArgument = 2,
  HcStatus_ShapeMismatch = 3,
  HcStatus_NonFinite = 4,
  HcStatus_DegenerateDesign = 5,
  HcStatus_NotConverged = 6,
  HcStatus_BufferTooSmall = 7,
  HcStatus_Panic = 8,
} HcStatus;

typedef enum HcGridKind {
  HcGridKind_Restricted = 0,
  HcGridKind_Unrestricted = 1,
} HcGridKind;

typedef enum HcClass {
  HcClass_Cis = 0,
  HcClass_SemiCis = 1,
  HcClass_Trans = 2,
  HcClass_Unknown = 3,
} HcClass;

/**
 * Result of a joint sparse plus low-rank fit.
 */
typedef struct HcLorsFit HcLorsFit;

/**
 * Dense matrix of doubles.
 */
typedef struct HcMatrix HcMatrix;

typedef struct HcLorsSummary {
  uintptr_t iterations;
  uintptr_t rank_l;
  uintptr_t nnz_b;
  bool converged;
  double objective;
} HcLorsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, including the
 * terminating NUL, or 0 when the last call succeeded.
 */
uintptr_t hc_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * fit) and returns the number of bytes written excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t hc_last_error_message(char *buf, uintptr_t len);

/**
 * Builds a `rows × cols` matrix from a row-major buffer of `rows · cols`
 * values.
 *
 * # Safety
 * `data` must point to `rows · cols` readable doubles; `out` must be writable.
 */
enum HcStatus hc_matrix_new(uintptr_t rows,
                            uintptr_t cols,
                            const double *data,
                            struct HcMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void hc_matrix_free(struct HcMatrix *m);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
uintptr_t hc_matrix_rows(const struct HcMatrix *m);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
uintptr_t hc_matrix_cols(const struct HcMatrix *m);

/**
 * Copies the matrix into `buf` in row-major order.
 *
 * # Safety
 * `m` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum HcStatus hc_matrix_copy(const struct HcMatrix *m, double *buf, uintptr_t len);

/**
 * Singular-value soft threshold: the matrix with every singular value `d`
 * replaced by `max(d − lambda, 0)`.
 *
 * # Safety
 * `w` must be a live handle and `out` writable.
 */
enum HcStatus hc_svt(const struct HcMatrix *w, double lambda, struct HcMatrix **out);

/**
 * # Safety
 * `w` must be a live handle and `out` writable.
 */
enum HcStatus hc_nuclear_norm(const struct HcMatrix *w, double *out);

/**
 * Default screening penalty: the threshold leaving at most `rank_cap`
 * singular values of the centred expression matrix above it.
 *
 * # Safety
 * `y` must be a live handle and `out` writable.
 */
enum HcStatus hc_screen_lambda(const struct HcMatrix *y, uintptr_t rank_cap, double *out);

/**
 * Per-SNP effects with a low-rank confounder term, for expression `y`
 * (`n × q`) and genotypes `x` (`n × p`). Writes a `p × q` matrix.
 * Constant genotype columns give zero rows.
 *
 * # Safety
 * `y` and `x` must be live handles and `beta_out` writable.
 */
enum HcStatus hc_marginal_screen(const struct HcMatrix *y,
                                 const struct HcMatrix *x,
                                 double lambda,
                                 struct HcMatrix **beta_out);

/**
 * Standardised effects for `beta` (`p × q`) given `y` (`n × q`) and `x`
 * (`n × p`), with genotype columns centred.
 *
 * # Safety
 * All handles must be live and `out` writable.
 */
enum HcStatus hc_standardize(const struct HcMatrix *beta,
                             const struct HcMatrix *y,
                             const struct HcMatrix *x,
                             struct HcMatrix **out);

/**
 * Higher-Criticism statistic of one vector of `q` standardised effects.
 *
 * # Safety
 * `z` must point to `q` readable doubles and `out` be writable.
 */
enum HcStatus hc_statistic(const double *z, uintptr_t q, enum HcGridKind kind, double *out);

/**
 * Statistic for every row of `z` written to `scores`, and the row order by
 * decreasing score (ties to the lower index) written to `order`.
 *
 * # Safety
 * `z` must be a live handle; `scores` and `order` must each hold `len`
 * writable elements, with `len` at least the row count of `z`.
 */
enum HcStatus hc_rank_rows(const struct HcMatrix *z,
                           enum HcGridKind kind,
                           double *scores,
                           uintptr_t *order,
                           uintptr_t len);

/**
 * Smallest sparsity penalty giving an all-zero coefficient matrix at the
 * start point.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum HcStatus hc_rho_null(const struct HcMatrix *y, const struct HcMatrix *x, double *out);

/**
 * Smallest nuclear-norm penalty giving a zero low-rank term at the start
 * point.
 *
 * # Safety
 * `y` must be live and `out` writable.
 */
enum HcStatus hc_lambda_null(const struct HcMatrix *y, double *out);

/**
 * Joint sparse plus low-rank regression of `y` (`n × q`) on `x` (`n × r`).
 * `tol <= 0` and `max_iter == 0` select the library defaults.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum HcStatus hc_lors_fit(const struct HcMatrix *y,
                          const struct HcMatrix *x,
                          double rho,
                          double lambda,
                          double tol,
                          uintptr_t max_iter,
                          struct HcLorsFit **out);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
void hc_lors_fit_free(struct HcLorsFit *fit);

/**
 * # Safety
 * `fit` must be live and `out` writable.
 */
enum HcStatus hc_lors_fit_summary(const struct HcLorsFit *fit, struct HcLorsSummary *out);

/**
 * Copy of the `r × q` coefficient matrix.
 *
 * # Safety
 * `fit` must be live and `out` writable.
 */
enum HcStatus hc_lors_fit_coefficients(const struct HcLorsFit *fit, struct HcMatrix **out);

/**
 * Copy of the `n × q` low-rank term.
 *
 * # Safety
 * `fit` must be live and `out` writable.
 */
enum HcStatus hc_lors_fit_low_rank(const struct HcLorsFit *fit, struct HcMatrix **out);

/**
 * Per-gene intercepts, `q` values.
 *
 * # Safety
 * `fit` must be live and `buf` must hold `len` writable doubles.
 */
enum HcStatus hc_lors_fit_intercepts(const struct HcLorsFit *fit, double *buf, uintptr_t len);

/**
 * Class of a same-chromosome SNP-probe pair `distance_bp` apart.
 */
enum HcClass hc_classify_distance(uint64_t distance_bp);

/**
 * Minimum number of distinct linked probes for a hotspot SNP.
 *
 * # Safety
 * `out` must be writable.
 */
enum HcStatus hc_hotspot_threshold(uintptr_t q_total, double fraction, uintptr_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HC_EQTL_H */
