//! C ABI for the quadratic mean-field-type control solver.
//!
//! The surface follows the usual opaque-handle pattern: constructors return
//! a status code and write the handle through an out-parameter, every
//! handle has a matching `_free`, and all array I/O is caller-allocated
//! row-major `double` buffers. Kernel cost functionals are not exposed
//! here (they would need function pointers across the boundary); the
//! quadratic model, the solver, the Riccati tables and the Wasserstein
//! distance are.
//!
//! The generated header lives at `include/mftc.h`.

use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};

use mftc::ensemble::{Ensemble, TimeGrid};
use mftc::error::Error;
use mftc::functionals::{QuadraticCost, QuadraticModel};
use mftc::riccati::{solve_riccati, RiccatiTables};
use mftc::solver::{admissibility_for, solve_fixed_point, SolverConfig, TrajectoryBundle};
use mftc::wasserstein::wasserstein2;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MftcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Inadmissible = 4,
    NonConvergence = 5,
    IndexOutOfRange = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Selects a coefficient table of the closed-form solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MftcRiccatiMatrix {
    P = 0,
    Sigma = 1,
    Gamma = 2,
    GammaM1 = 3,
}

/// Equal-weight particle ensemble (opaque).
pub struct MftcEnsemble {
    inner: Ensemble,
}

/// Quadratic cost model with control penalty and horizon (opaque).
pub struct MftcQuadraticModel {
    inner: QuadraticModel,
}

/// Converged solve: state/adjoint/control paths plus the value (opaque).
pub struct MftcSolution {
    bundle: TrajectoryBundle,
    value: Option<f64>,
}

/// Tabulated Riccati coefficients (opaque).
pub struct MftcRiccati {
    inner: RiccatiTables,
}

fn status_of(err: &Error) -> MftcStatus {
    match err {
        Error::Shape(_) | Error::Permutation(_) => MftcStatus::ShapeMismatch,
        Error::Inadmissible { .. } => MftcStatus::Inadmissible,
        Error::NonConvergence { .. } => MftcStatus::NonConvergence,
        Error::IndexOutOfRange { .. } => MftcStatus::IndexOutOfRange,
        Error::InvalidArgument(_) | Error::Config { .. } => MftcStatus::InvalidArgument,
        Error::Blowup { .. } => MftcStatus::InvalidArgument,
        Error::Io(_) => MftcStatus::Internal,
    }
}

fn guarded(f: impl FnOnce() -> MftcStatus) -> MftcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => MftcStatus::Internal,
    }
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> MftcStatus {
    if out.is_null() {
        return MftcStatus::NullPointer;
    }
    *out = Box::into_raw(Box::new(value));
    MftcStatus::Ok
}

unsafe fn matrix_from(ptr: *const f64, dim: usize) -> DMatrix<f64> {
    if ptr.is_null() {
        DMatrix::zeros(dim, dim)
    } else {
        let data = std::slice::from_raw_parts(ptr, dim * dim);
        DMatrix::from_row_slice(dim, dim, data)
    }
}

/// Builds an ensemble from `n_particles * dim` doubles, one particle per
/// row.
///
/// # Safety
/// `data` must point to `n_particles * dim` readable doubles; `out` must be
/// a valid location for the handle. Free with [`mftc_ensemble_free`].
#[no_mangle]
pub unsafe extern "C" fn mftc_ensemble_new(
    data: *const f64,
    n_particles: usize,
    dim: usize,
    out: *mut *mut MftcEnsemble,
) -> MftcStatus {
    guarded(|| {
        if data.is_null() || out.is_null() {
            return MftcStatus::NullPointer;
        }
        if n_particles == 0 || dim == 0 {
            return MftcStatus::InvalidArgument;
        }
        let slice = std::slice::from_raw_parts(data, n_particles * dim);
        let points = slice
            .chunks(dim)
            .map(DVector::from_column_slice)
            .collect();
        match Ensemble::new(points) {
            Ok(inner) => write_handle(out, MftcEnsemble { inner }),
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `ensemble` must come from [`mftc_ensemble_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mftc_ensemble_free(ensemble: *mut MftcEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of particles; 0 for a null handle.
///
/// # Safety
/// `ensemble` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_ensemble_particles(ensemble: *const MftcEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.len())
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `ensemble` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_ensemble_dim(ensemble: *const MftcEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.dim())
}

/// Wasserstein-2 distance between the empirical laws of two ensembles with
/// equal particle counts. `exact` reports whether the matching was provably
/// optimal (it is, up to 64 particles; above that a flagged upper bound is
/// returned).
///
/// # Safety
/// `a` and `b` must be live handles; `distance` and `exact` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mftc_wasserstein2(
    a: *const MftcEnsemble,
    b: *const MftcEnsemble,
    distance: *mut f64,
    exact: *mut bool,
) -> MftcStatus {
    guarded(|| {
        let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
            return MftcStatus::NullPointer;
        };
        if distance.is_null() || exact.is_null() {
            return MftcStatus::NullPointer;
        }
        match wasserstein2(&a.inner, &b.inner) {
            Ok(r) => {
                *distance = r.distance;
                *exact = r.exact;
                MftcStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Builds a quadratic model from six `dim x dim` row-major matrices (null
/// pointers stand for zero matrices), the control penalty and the horizon.
///
/// # Safety
/// Non-null matrix pointers must reference `dim * dim` readable doubles;
/// `out` must be writable. Free with [`mftc_quadratic_model_free`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mftc_quadratic_model_new(
    dim: usize,
    q: *const f64,
    q_bar: *const f64,
    s: *const f64,
    q_t: *const f64,
    q_bar_t: *const f64,
    s_t: *const f64,
    lambda: f64,
    horizon: f64,
    out: *mut *mut MftcQuadraticModel,
) -> MftcStatus {
    guarded(|| {
        if out.is_null() {
            return MftcStatus::NullPointer;
        }
        if dim == 0 {
            return MftcStatus::InvalidArgument;
        }
        let running = match QuadraticCost::new(
            matrix_from(q, dim),
            matrix_from(q_bar, dim),
            matrix_from(s, dim),
        ) {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        let terminal = match QuadraticCost::new(
            matrix_from(q_t, dim),
            matrix_from(q_bar_t, dim),
            matrix_from(s_t, dim),
        ) {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        match QuadraticModel::new(running, terminal, lambda, horizon) {
            Ok(inner) => write_handle(out, MftcQuadraticModel { inner }),
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `model` must come from [`mftc_quadratic_model_new`] and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn mftc_quadratic_model_free(model: *mut MftcQuadraticModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Certified Lipschitz bound of the model's cost gradients; NaN for null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_model_lipschitz_constant(model: *const MftcQuadraticModel) -> f64 {
    model
        .as_ref()
        .map_or(f64::NAN, |m| m.inner.lipschitz_constant())
}

/// Admissibility margin `lambda - c tau (1 + tau)` for a solve starting at
/// `t`; the fixed-point iteration is a certified contraction when the
/// margin is positive.
///
/// # Safety
/// `model` must be a live handle; `margin` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mftc_admissibility_margin(
    model: *const MftcQuadraticModel,
    t: f64,
    margin: *mut f64,
) -> MftcStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return MftcStatus::NullPointer;
        };
        if margin.is_null() {
            return MftcStatus::NullPointer;
        }
        match admissibility_for(
            model.inner.running(),
            model.inner.terminal(),
            model.inner.lambda(),
            t,
            model.inner.horizon(),
        ) {
            Ok(adm) => {
                *margin = adm.margin;
                MftcStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Solves the boundary value problem from `(x0, t)` on a uniform grid with
/// `grid_intervals` steps. Inadmissible problems are refused unless
/// `force` is set; a forced run that fails to converge is reported as
/// `NonConvergence` with no handle written.
///
/// # Safety
/// `model` and `x0` must be live handles; `out` must be writable. Free the
/// result with [`mftc_solution_free`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mftc_solve(
    model: *const MftcQuadraticModel,
    x0: *const MftcEnsemble,
    t: f64,
    grid_intervals: usize,
    tol: f64,
    max_iter: usize,
    force: bool,
    out: *mut *mut MftcSolution,
) -> MftcStatus {
    guarded(|| {
        let (Some(model), Some(x0)) = (model.as_ref(), x0.as_ref()) else {
            return MftcStatus::NullPointer;
        };
        if out.is_null() {
            return MftcStatus::NullPointer;
        }
        let grid = match TimeGrid::new(t, model.inner.horizon(), grid_intervals) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        let mut cfg = SolverConfig::new(grid, model.inner.lambda())
            .with_tol(tol)
            .with_max_iter(max_iter);
        if force {
            cfg = cfg.forced();
        }
        let bundle = match solve_fixed_point(
            model.inner.running(),
            model.inner.terminal(),
            &x0.inner,
            &cfg,
        ) {
            Ok(b) => b,
            Err(e) => return status_of(&e),
        };
        if !bundle.converged() {
            return MftcStatus::NonConvergence;
        }
        let value = bundle
            .value_function(model.inner.running(), model.inner.terminal())
            .ok();
        write_handle(out, MftcSolution { bundle, value })
    })
}

/// # Safety
/// `solution` must come from [`mftc_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_free(solution: *mut MftcSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Value of the control problem at the initial node.
///
/// # Safety
/// `solution` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_value(
    solution: *const MftcSolution,
    value: *mut f64,
) -> MftcStatus {
    let Some(solution) = solution.as_ref() else {
        return MftcStatus::NullPointer;
    };
    if value.is_null() {
        return MftcStatus::NullPointer;
    }
    match solution.value {
        Some(v) => {
            *value = v;
            MftcStatus::Ok
        }
        None => MftcStatus::Internal,
    }
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_iterations(solution: *const MftcSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.bundle.iterations())
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_residual(solution: *const MftcSolution) -> f64 {
    solution
        .as_ref()
        .map_or(f64::NAN, |s| s.bundle.final_residual())
}

/// Number of grid nodes in the stored paths.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_nodes(solution: *const MftcSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.bundle.grid().n_nodes())
}

unsafe fn copy_ensemble(ens: &Ensemble, buffer: *mut f64, len: usize) -> MftcStatus {
    if buffer.is_null() {
        return MftcStatus::NullPointer;
    }
    let needed = ens.len() * ens.dim();
    if len < needed {
        return MftcStatus::BufferTooSmall;
    }
    let out = std::slice::from_raw_parts_mut(buffer, needed);
    for (i, p) in ens.points().iter().enumerate() {
        for j in 0..ens.dim() {
            out[i * ens.dim() + j] = p[j];
        }
    }
    MftcStatus::Ok
}

/// Copies the value gradient (the adjoint at the initial node) into a
/// caller buffer of at least `n_particles * dim` doubles, row-major.
///
/// # Safety
/// `solution` must be a live handle; `buffer` must hold `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_gradient(
    solution: *const MftcSolution,
    buffer: *mut f64,
    len: usize,
) -> MftcStatus {
    guarded(|| {
        let Some(solution) = solution.as_ref() else {
            return MftcStatus::NullPointer;
        };
        copy_ensemble(solution.bundle.adjoint(0), buffer, len)
    })
}

/// Copies the state ensemble at a grid node, row-major.
///
/// # Safety
/// `solution` must be a live handle; `buffer` must hold `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mftc_solution_state(
    solution: *const MftcSolution,
    node: usize,
    buffer: *mut f64,
    len: usize,
) -> MftcStatus {
    guarded(|| {
        let Some(solution) = solution.as_ref() else {
            return MftcStatus::NullPointer;
        };
        if node >= solution.bundle.grid().n_nodes() {
            return MftcStatus::IndexOutOfRange;
        }
        copy_ensemble(solution.bundle.state(node), buffer, len)
    })
}

/// Integrates the closed-form coefficient tables on a uniform grid with
/// `grid_intervals` steps at total mass `m1` (1 for probability laws).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable. Free with
/// [`mftc_riccati_free`].
#[no_mangle]
pub unsafe extern "C" fn mftc_riccati_solve(
    model: *const MftcQuadraticModel,
    grid_intervals: usize,
    m1: f64,
    out: *mut *mut MftcRiccati,
) -> MftcStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return MftcStatus::NullPointer;
        };
        if out.is_null() {
            return MftcStatus::NullPointer;
        }
        let grid = match TimeGrid::new(0.0, model.inner.horizon(), grid_intervals) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        match solve_riccati(&model.inner, &grid, m1) {
            Ok(inner) => write_handle(out, MftcRiccati { inner }),
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `tables` must come from [`mftc_riccati_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mftc_riccati_free(tables: *mut MftcRiccati) {
    if !tables.is_null() {
        drop(Box::from_raw(tables));
    }
}

/// # Safety
/// `tables` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mftc_riccati_nodes(tables: *const MftcRiccati) -> usize {
    tables.as_ref().map_or(0, |t| t.inner.grid().n_nodes())
}

/// Copies one coefficient matrix at a grid node into a caller buffer of at
/// least `dim * dim` doubles, row-major.
///
/// # Safety
/// `tables` must be a live handle; `buffer` must hold `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mftc_riccati_coefficient(
    tables: *const MftcRiccati,
    which: MftcRiccatiMatrix,
    node: usize,
    buffer: *mut f64,
    len: usize,
) -> MftcStatus {
    guarded(|| {
        let Some(tables) = tables.as_ref() else {
            return MftcStatus::NullPointer;
        };
        if buffer.is_null() {
            return MftcStatus::NullPointer;
        }
        if node >= tables.inner.grid().n_nodes() {
            return MftcStatus::IndexOutOfRange;
        }
        let m = match which {
            MftcRiccatiMatrix::P => tables.inner.p(node),
            MftcRiccatiMatrix::Sigma => tables.inner.sigma(node),
            MftcRiccatiMatrix::Gamma => tables.inner.gamma(node),
            MftcRiccatiMatrix::GammaM1 => tables.inner.gamma_m1(node),
        };
        let n = m.nrows();
        if len < n * n {
            return MftcStatus::BufferTooSmall;
        }
        let out = std::slice::from_raw_parts_mut(buffer, n * n);
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = m[(r, c)];
            }
        }
        MftcStatus::Ok
    })
}
