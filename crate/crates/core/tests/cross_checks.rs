//! Cross-oracle checks tying the generic solver to the closed forms on
//! instances small enough for tight tolerances.

use mftc::ensemble::{Ensemble, TimeGrid};
use mftc::functionals::{QuadraticCost, QuadraticModel};
use mftc::riccati::solve_riccati;
use mftc::solver::{solve_fixed_point, SolverConfig};
use nalgebra::{DMatrix, DVector};

fn interacting_model() -> QuadraticModel {
    let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.5]);
    let q_bar = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.3]);
    let s = DMatrix::from_row_slice(2, 2, &[0.6, -0.2, 0.1, 0.4]);
    let q_t = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2]);
    QuadraticModel::new(
        QuadraticCost::new(q, q_bar, s.clone()).unwrap(),
        QuadraticCost::new(q_t, DMatrix::zeros(2, 2), s).unwrap(),
        4.0,
        0.8,
    )
    .unwrap()
}

fn start_ensemble() -> Ensemble {
    Ensemble::from_rows(&[
        vec![0.9, -0.3],
        vec![-0.5, 0.7],
        vec![0.2, 0.1],
        vec![1.1, -0.8],
        vec![-0.2, -0.4],
        vec![0.4, 0.9],
    ])
    .unwrap()
}

#[test]
fn mean_flow_matches_solver_means() {
    let model = interacting_model();
    let x0 = start_ensemble();
    let m = 400;
    let grid = TimeGrid::new(0.0, model.horizon(), m).unwrap();
    let cfg = SolverConfig::new(grid.clone(), model.lambda());
    let bundle = solve_fixed_point(model.running(), model.terminal(), &x0, &cfg).unwrap();
    let tables = solve_riccati(&model, &grid, 1.0).unwrap();
    let flow = tables.mean_flow(&x0.mean()).unwrap();
    let mut worst = 0.0_f64;
    for (k, flow_k) in flow.iter().enumerate() {
        worst = worst.max((bundle.state(k).mean() - flow_k).norm());
    }
    assert!(worst <= 1e-6, "mean flow deviates by {worst}");
}

#[test]
fn propagator_matches_solver_paths_in_2d() {
    let model = interacting_model();
    let x0 = start_ensemble();
    let m = 800;
    let grid = TimeGrid::new(0.0, model.horizon(), m).unwrap();
    let cfg = SolverConfig::new(grid.clone(), model.lambda());
    let bundle = solve_fixed_point(model.running(), model.terminal(), &x0, &cfg).unwrap();
    let tables = solve_riccati(&model, &grid, 1.0).unwrap();
    let path = tables.propagator(&x0, 0).unwrap();
    let mut worst = 0.0_f64;
    for (k, path_k) in path.iter().enumerate() {
        worst = worst.max(bundle.state(k).distance(path_k).unwrap());
    }
    assert!(worst <= 1e-5, "propagator deviates by {worst}");
}

#[test]
fn adjoint_matches_vector_field_along_path() {
    let model = interacting_model();
    let x0 = start_ensemble();
    let m = 800;
    let grid = TimeGrid::new(0.0, model.horizon(), m).unwrap();
    let cfg = SolverConfig::new(grid.clone(), model.lambda());
    let bundle = solve_fixed_point(model.running(), model.terminal(), &x0, &cfg).unwrap();
    let tables = solve_riccati(&model, &grid, 1.0).unwrap();
    let mut worst = 0.0_f64;
    for k in (0..=m).step_by(40) {
        let ybar = bundle.state(k).mean();
        for (i, p) in bundle.state(k).points().iter().enumerate() {
            let cf = tables.master_vector_field(k, p, &ybar);
            worst = worst.max((bundle.adjoint(k).point(i) - cf).norm());
        }
    }
    assert!(worst <= 1e-5, "adjoint deviates by {worst}");
}

#[test]
fn linearized_value_matches_mass_direction_difference() {
    // The linearized per-particle value must agree with a central
    // difference of the scalar field along the mass perturbation
    // (m1, xbar) -> (m1 + theta m1~, xbar + theta xbar~).
    let model = interacting_model();
    let grid = TimeGrid::new(0.0, model.horizon(), 200).unwrap();
    let m1 = 1.0;
    let m1_tilde = 0.35;
    let xbar0 = DVector::from_vec(vec![0.4, -0.6]);
    let xbar_tilde0 = DVector::from_vec(vec![-0.3, 0.5]);

    let tables = solve_riccati(&model, &grid, m1).unwrap();
    let fields = tables
        .linearized_fields(&xbar0, m1_tilde, &xbar_tilde0)
        .unwrap();
    assert!(fields.max_residual <= 1e-6);

    let theta = 1e-5;
    let up = solve_riccati(&model, &grid, m1 + theta * m1_tilde).unwrap();
    let dn = solve_riccati(&model, &grid, m1 - theta * m1_tilde).unwrap();
    for probe in [
        DVector::from_vec(vec![0.8, 0.2]),
        DVector::from_vec(vec![-0.4, 1.0]),
        DVector::from_vec(vec![0.0, 0.0]),
    ] {
        let f_up = up.master_scalar_field(0, &probe, &(&xbar0 + &xbar_tilde0 * theta));
        let f_dn = dn.master_scalar_field(0, &probe, &(&xbar0 - &xbar_tilde0 * theta));
        let fd = (f_up - f_dn) / (2.0 * theta);
        let lin = fields.u_tilde(0, &probe);
        assert!(
            (fd - lin).abs() <= 1e-6,
            "probe {probe:?}: finite difference {fd} vs linearized {lin}"
        );
    }
}
