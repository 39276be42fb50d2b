/* C interface for the mftc mean-field-type control solver. */

#ifndef MFTC_H
#define MFTC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Selects a coefficient table of the closed-form solution.
 */
typedef enum MftcRiccatiMatrix {
  MftcRiccatiMatrix_P = 0,
  MftcRiccatiMatrix_Sigma = 1,
  MftcRiccatiMatrix_Gamma = 2,
  MftcRiccatiMatrix_GammaM1 = 3,
} MftcRiccatiMatrix;

/**
 * Status codes returned by every fallible call.
 */
typedef enum MftcStatus {
  MftcStatus_Ok = 0,
  MftcStatus_NullPointer = 1,
  MftcStatus_InvalidArgument = 2,
  MftcStatus_ShapeMismatch = 3,
  MftcStatus_Inadmissible = 4,
  MftcStatus_NonConvergence = 5,
  MftcStatus_IndexOutOfRange = 6,
  MftcStatus_BufferTooSmall = 7,
  MftcStatus_Internal = 8,
} MftcStatus;

/**
 * Equal-weight particle ensemble (opaque).
 */
typedef struct MftcEnsemble MftcEnsemble;

/**
 * Quadratic cost model with control penalty and horizon (opaque).
 */
typedef struct MftcQuadraticModel MftcQuadraticModel;

/**
 * Tabulated Riccati coefficients (opaque).
 */
typedef struct MftcRiccati MftcRiccati;

/**
 * Converged solve: state/adjoint/control paths plus the value (opaque).
 */
typedef struct MftcSolution MftcSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an ensemble from `n_particles * dim` doubles, one particle per
 * row.
 *
 * # Safety
 * `data` must point to `n_particles * dim` readable doubles; `out` must be
 * a valid location for the handle. Free with [`mftc_ensemble_free`].
 */
enum MftcStatus mftc_ensemble_new(const double *data,
                                  uintptr_t n_particles,
                                  uintptr_t dim,
                                  struct MftcEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from [`mftc_ensemble_new`] and not be freed twice.
 */
void mftc_ensemble_free(struct MftcEnsemble *ensemble);

/**
 * Number of particles; 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be a live handle or null.
 */
uintptr_t mftc_ensemble_particles(const struct MftcEnsemble *ensemble);

/**
 * State dimension; 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be a live handle or null.
 */
uintptr_t mftc_ensemble_dim(const struct MftcEnsemble *ensemble);

/**
 * Wasserstein-2 distance between the empirical laws of two ensembles with
 * equal particle counts. `exact` reports whether the matching was provably
 * optimal (it is, up to 64 particles; above that a flagged upper bound is
 * returned).
 *
 * # Safety
 * `a` and `b` must be live handles; `distance` and `exact` must be
 * writable.
 */
enum MftcStatus mftc_wasserstein2(const struct MftcEnsemble *a,
                                  const struct MftcEnsemble *b,
                                  double *distance,
                                  bool *exact);

/**
 * Builds a quadratic model from six `dim x dim` row-major matrices (null
 * pointers stand for zero matrices), the control penalty and the horizon.
 *
 * # Safety
 * Non-null matrix pointers must reference `dim * dim` readable doubles;
 * `out` must be writable. Free with [`mftc_quadratic_model_free`].
 */
enum MftcStatus mftc_quadratic_model_new(uintptr_t dim,
                                         const double *q,
                                         const double *q_bar,
                                         const double *s,
                                         const double *q_t,
                                         const double *q_bar_t,
                                         const double *s_t,
                                         double lambda,
                                         double horizon,
                                         struct MftcQuadraticModel **out);

/**
 * # Safety
 * `model` must come from [`mftc_quadratic_model_new`] and not be freed
 * twice.
 */
void mftc_quadratic_model_free(struct MftcQuadraticModel *model);

/**
 * Certified Lipschitz bound of the model's cost gradients; NaN for null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
double mftc_model_lipschitz_constant(const struct MftcQuadraticModel *model);

/**
 * Admissibility margin `lambda - c tau (1 + tau)` for a solve starting at
 * `t`; the fixed-point iteration is a certified contraction when the
 * margin is positive.
 *
 * # Safety
 * `model` must be a live handle; `margin` must be writable.
 */
enum MftcStatus mftc_admissibility_margin(const struct MftcQuadraticModel *model,
                                          double t,
                                          double *margin);

/**
 * Solves the boundary value problem from `(x0, t)` on a uniform grid with
 * `grid_intervals` steps. Inadmissible problems are refused unless
 * `force` is set; a forced run that fails to converge is reported as
 * `NonConvergence` with no handle written.
 *
 * # Safety
 * `model` and `x0` must be live handles; `out` must be writable. Free the
 * result with [`mftc_solution_free`].
 */
enum MftcStatus mftc_solve(const struct MftcQuadraticModel *model,
                           const struct MftcEnsemble *x0,
                           double t,
                           uintptr_t grid_intervals,
                           double tol,
                           uintptr_t max_iter,
                           bool force,
                           struct MftcSolution **out);

/**
 * # Safety
 * `solution` must come from [`mftc_solve`] and not be freed twice.
 */
void mftc_solution_free(struct MftcSolution *solution);

/**
 * Value of the control problem at the initial node.
 *
 * # Safety
 * `solution` must be a live handle; `value` must be writable.
 */
enum MftcStatus mftc_solution_value(const struct MftcSolution *solution, double *value);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
uintptr_t mftc_solution_iterations(const struct MftcSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
double mftc_solution_residual(const struct MftcSolution *solution);

/**
 * Number of grid nodes in the stored paths.
 *
 * # Safety
 * `solution` must be a live handle or null.
 */
uintptr_t mftc_solution_nodes(const struct MftcSolution *solution);

/**
 * Copies the value gradient (the adjoint at the initial node) into a
 * caller buffer of at least `n_particles * dim` doubles, row-major.
 *
 * # Safety
 * `solution` must be a live handle; `buffer` must hold `len` writable
 * doubles.
 */
enum MftcStatus mftc_solution_gradient(const struct MftcSolution *solution,
                                       double *buffer,
                                       uintptr_t len);

/**
 * Copies the state ensemble at a grid node, row-major.
 *
 * # Safety
 * `solution` must be a live handle; `buffer` must hold `len` writable
 * doubles.
 */
enum MftcStatus mftc_solution_state(const struct MftcSolution *solution,
                                    uintptr_t node,
                                    double *buffer,
                                    uintptr_t len);

/**
 * Integrates the closed-form coefficient tables on a uniform grid with
 * `grid_intervals` steps at total mass `m1` (1 for probability laws).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable. Free with
 * [`mftc_riccati_free`].
 */
enum MftcStatus mftc_riccati_solve(const struct MftcQuadraticModel *model,
                                   uintptr_t grid_intervals,
                                   double m1,
                                   struct MftcRiccati **out);

/**
 * # Safety
 * `tables` must come from [`mftc_riccati_solve`] and not be freed twice.
 */
void mftc_riccati_free(struct MftcRiccati *tables);

/**
 * # Safety
 * `tables` must be a live handle or null.
 */
uintptr_t mftc_riccati_nodes(const struct MftcRiccati *tables);

/**
 * Copies one coefficient matrix at a grid node into a caller buffer of at
 * least `dim * dim` doubles, row-major.
 *
 * # Safety
 * `tables` must be a live handle; `buffer` must hold `len` writable
 * doubles.
 */
enum MftcStatus mftc_riccati_coefficient(const struct MftcRiccati *tables,
                                         enum MftcRiccatiMatrix which,
                                         uintptr_t node,
                                         double *buffer,
                                         uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFTC_H */
