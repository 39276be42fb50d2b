//! CSV and SVG artifact writing for the batch driver.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::functionals::QuadraticModel;
use crate::plot::{line_chart, Series};
use crate::riccati::RiccatiTables;
use crate::solver::{Admissibility, TrajectoryBundle};

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Scalar run summary as `key,value` rows.
pub struct SolveSummary {
    pub value: Option<f64>,
    pub time_derivative: Option<f64>,
    pub admissibility: Admissibility,
    pub forced: bool,
}

pub fn summary_csv(bundle: &TrajectoryBundle, summary: &SolveSummary) -> String {
    let mut out = String::from("key,value\n");
    let mut push = |k: &str, v: String| out.push_str(&format!("{k},{v}\n"));
    if let Some(v) = summary.value {
        push("value", format!("{v}"));
    }
    if let Some(v) = summary.time_derivative {
        push("time_derivative", format!("{v}"));
    }
    push("converged", format!("{}", bundle.converged()));
    push("iterations", format!("{}", bundle.iterations()));
    push("final_residual", format!("{}", bundle.final_residual()));
    push("contraction_ratio", format!("{}", bundle.contraction_ratio()));
    push("contraction_bound", format!("{}", bundle.contraction_bound()));
    push("lipschitz_c", format!("{}", summary.admissibility.c));
    push("lambda", format!("{}", bundle.lambda()));
    push("margin", format!("{}", summary.admissibility.margin));
    push(
        "margin_full_horizon",
        format!("{}", summary.admissibility.margin_full),
    );
    push("admissible", format!("{}", summary.admissibility.admissible));
    push("forced", format!("{}", summary.forced));
    push("t0", format!("{}", bundle.grid().t0()));
    push("horizon", format!("{}", bundle.grid().horizon()));
    push("grid_intervals", format!("{}", bundle.grid().intervals()));
    out
}

pub fn gradient_csv(bundle: &TrajectoryBundle) -> String {
    let z0 = bundle.adjoint(0);
    let n = z0.dim();
    let mut out = String::from("particle_index");
    for j in 0..n {
        out.push_str(&format!(",g_{j}"));
    }
    out.push('\n');
    for (i, p) in z0.points().iter().enumerate() {
        out.push_str(&format!("{i}"));
        for j in 0..n {
            out.push_str(&format!(",{}", p[j]));
        }
        out.push('\n');
    }
    out
}

fn matrix_series(tables: &RiccatiTables, which: &str) -> Vec<Series> {
    let n = tables.model().dim();
    let grid = tables.grid();
    let mut series = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let points: Vec<(f64, f64)> = (0..grid.n_nodes())
                .map(|k| {
                    let m = match which {
                        "P" => tables.p(k),
                        "Sigma" => tables.sigma(k),
                        _ => tables.gamma(k),
                    };
                    (grid.node(k), m[(r, c)])
                })
                .collect();
            series.push(Series::new(format!("{which}[{r}{c}]"), points));
        }
    }
    series
}

/// Writes all artifacts of one solve into `dir`; returns the written paths.
pub fn write_solve_artifacts(
    dir: &Path,
    bundle: &TrajectoryBundle,
    summary: &SolveSummary,
    tables: Option<&RiccatiTables>,
    quad: Option<&QuadraticModel>,
    plots: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let emit = |name: &str, content: String| -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, content)?;
        Ok(path)
    };

    written.push(emit("trajectory.csv", bundle.to_csv())?);
    written.push(emit("summary.csv", summary_csv(bundle, summary))?);
    written.push(emit("gradient.csv", gradient_csv(bundle))?);
    written.push(emit("ensemble.csv", bundle.state(0).to_csv())?);
    if let Some(tables) = tables {
        written.push(emit("riccati.csv", tables.to_csv())?);
    }

    if plots {
        let grid = bundle.grid();
        if bundle.state(0).dim() == 1 {
            let shown = bundle.state(0).len().min(16);
            let series: Vec<Series> = (0..shown)
                .map(|i| {
                    Series::new(
                        format!("y[{i}]"),
                        (0..grid.n_nodes())
                            .map(|k| (grid.node(k), bundle.state(k).point(i)[0]))
                            .collect(),
                    )
                })
                .collect();
            written.push(emit(
                "trajectories.svg",
                line_chart("particle trajectories", "s", "y", &series),
            )?);
        }
        if let Some(tables) = tables {
            written.push(emit(
                "riccati_p.svg",
                line_chart("state coefficient P(t)", "t", "P", &matrix_series(tables, "P")),
            )?);
            written.push(emit(
                "riccati_sigma.svg",
                line_chart(
                    "mean coefficient Sigma(t)",
                    "t",
                    "Sigma",
                    &matrix_series(tables, "Sigma"),
                ),
            )?);
            if let Some(_model) = quad {
                let points: Vec<(f64, f64)> = (0..grid.n_nodes())
                    .map(|k| Ok((grid.node(k), tables.value_closed_form(bundle.state(k), k)?)))
                    .collect::<Result<_>>()?;
                written.push(emit(
                    "value_vs_time.svg",
                    line_chart(
                        "value along the optimal flow",
                        "t",
                        "V(Y(t), t)",
                        &[Series::new("V", points)],
                    ),
                )?);
            }
        }
    }

    Ok(written)
}
