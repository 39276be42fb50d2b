use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mftc::audit::run_suite;
use mftc::config::ExperimentConfig;
use mftc::ensemble::TimeGrid;
use mftc::error::Error;
use mftc::output::{write_solve_artifacts, write_text, SolveSummary};
use mftc::riccati::solve_riccati;
use mftc::solver::{admissibility_for, solve_fixed_point, SolverConfig};

const EXIT_PARSE: u8 = 2;
const EXIT_INADMISSIBLE: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mftc",
    version,
    about = "Mean-field-type control on particle ensembles: config-driven solves and verification audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a configured problem; writes trajectory/summary CSVs and SVG plots.
    Solve {
        /// Path to the experiment config.
        config: PathBuf,
        /// Override the number of grid intervals.
        #[arg(long)]
        grid: Option<usize>,
        /// Override the fixed-point tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Run even when the admissibility margin is nonpositive.
        #[arg(long)]
        force_inadmissible: bool,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite (hjb, oracle, estimates, monotonicity,
    /// gradients, wasserstein, all) and write its report.
    Audit {
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory for report.csv / report.txt.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Audits require admissible instances; passing this flag is refused.
        #[arg(long)]
        force_inadmissible: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_PARSE,
        Error::Inadmissible { .. } => EXIT_INADMISSIBLE,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Io(_) => EXIT_PARSE,
        _ => 1,
    }
}

fn run_solve(
    config_path: &Path,
    grid_override: Option<usize>,
    tol_override: Option<f64>,
    force: bool,
    out_override: Option<PathBuf>,
) -> Result<(), (u8, String)> {
    let config = ExperimentConfig::from_file(config_path)
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let (running, terminal, quad) = config
        .build_costs()
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let x0 = config
        .build_ensemble()
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;

    let m = grid_override.unwrap_or(config.solver.grid_m);
    let tol = tol_override.unwrap_or(config.solver.tol);
    let grid = TimeGrid::new(config.solver.t0, config.solver.horizon, m)
        .map_err(|e| (EXIT_PARSE, e.to_string()))?;

    let adm = admissibility_for(
        running.as_ref(),
        terminal.as_ref(),
        config.lambda(),
        config.solver.t0,
        config.solver.horizon,
    )
    .map_err(|e| (EXIT_PARSE, e.to_string()))?;

    let mut cfg = SolverConfig::new(grid.clone(), config.lambda())
        .with_tol(tol)
        .with_max_iter(config.solver.max_iter);
    if force {
        cfg = cfg.forced();
    }
    let bundle = solve_fixed_point(running.as_ref(), terminal.as_ref(), &x0, &cfg)
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;

    let (value, dvdt) = if bundle.converged() {
        (
            Some(
                bundle
                    .value_function(running.as_ref(), terminal.as_ref())
                    .map_err(|e| (1, e.to_string()))?,
            ),
            Some(
                bundle
                    .time_derivative_value(running.as_ref())
                    .map_err(|e| (1, e.to_string()))?,
            ),
        )
    } else {
        (None, None)
    };

    let tables = match &quad {
        Some(model) => Some(
            solve_riccati(model, &grid, 1.0).map_err(|e| (exit_code_for(&e), e.to_string()))?,
        ),
        None => None,
    };

    let dir = out_override.unwrap_or_else(|| PathBuf::from(&config.outputs.dir));
    let summary = SolveSummary {
        value,
        time_derivative: dvdt,
        admissibility: adm,
        forced: force,
    };
    let written = write_solve_artifacts(
        &dir,
        &bundle,
        &summary,
        tables.as_ref(),
        quad.as_ref(),
        config.outputs.plots,
    )
    .map_err(|e| (1, e.to_string()))?;

    if bundle.converged() {
        println!(
            "solved in {} iterations (residual {:.3e}, contraction ratio {:.4} <= bound {:.4})",
            bundle.iterations(),
            bundle.final_residual(),
            bundle.contraction_ratio(),
            bundle.contraction_bound() + 0.05
        );
        if let Some(v) = value {
            println!("value = {v:.12}");
        }
    } else {
        println!(
            "forced run did not converge: residual {:.3e} after {} iterations (contraction bound {:.4})",
            bundle.final_residual(),
            bundle.iterations(),
            bundle.contraction_bound()
        );
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_audit(suite: &str, seed: u64, out: &Path, force: bool) -> Result<(), (u8, String)> {
    if force {
        return Err((
            EXIT_INADMISSIBLE,
            "audit suites require admissible instances; refusing --force-inadmissible".into(),
        ));
    }
    let report = run_suite(suite, seed).map_err(|e| match e {
        Error::InvalidArgument(msg) => (EXIT_PARSE, msg),
        other => (exit_code_for(&other), other.to_string()),
    })?;
    write_text(&out.join("report.csv"), &report.to_csv()).map_err(|e| (1, e.to_string()))?;
    write_text(&out.join("report.txt"), &report.to_text()).map_err(|e| (1, e.to_string()))?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        Err((1, format!("audit suite `{suite}` has failing checks")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve {
            config,
            grid,
            tol,
            force_inadmissible,
            out,
        } => run_solve(config, *grid, *tol, *force_inadmissible, out.clone()),
        Command::Audit {
            suite,
            seed,
            out,
            force_inadmissible,
        } => run_audit(suite, *seed, out, *force_inadmissible),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
