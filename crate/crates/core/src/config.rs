//! Flat sectioned config files for batch runs.
//!
//! The format is plain text: `[section]` headers, `key = value` pairs, `#`
//! comments. Matrices are dense row-major literals with `;` separating rows
//! (`q = 1 0; 0 1`), ensembles likewise one particle per row. Parsing is
//! strict: unknown sections or keys, duplicates, and shape mismatches are
//! reported with the offending key.
//!
//! ```text
//! [model]
//! kind = quadratic
//! n = 1
//! q = 1
//! lambda = 1.0
//!
//! [ensemble]
//! points = 1; -1
//!
//! [solver]
//! horizon = 0.5
//! grid = 200
//!
//! [outputs]
//! dir = out
//! plots = true
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::functionals::{CostFunctional, KernelCost, QuadraticCost, QuadraticModel};

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ModelSection {
    Quadratic {
        dim: usize,
        q: DMatrix<f64>,
        q_bar: DMatrix<f64>,
        s: DMatrix<f64>,
        q_t: DMatrix<f64>,
        q_bar_t: DMatrix<f64>,
        s_t: DMatrix<f64>,
        lambda: f64,
    },
    Kernel {
        dim: usize,
        kind: String,
        width: f64,
        lambda: f64,
    },
}

#[derive(Debug, Clone)]
pub enum EnsembleSection {
    Points(Vec<Vec<f64>>),
    Gaussian {
        mean: Vec<f64>,
        cov: DMatrix<f64>,
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct SolverSection {
    pub t0: f64,
    pub horizon: f64,
    pub grid_m: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct OutputSection {
    pub dir: String,
    pub plots: bool,
}

/// Running cost, terminal cost, and the assembled quadratic model when the
/// config is quadratic.
pub type CostPair = (
    Box<dyn CostFunctional>,
    Box<dyn CostFunctional>,
    Option<QuadraticModel>,
);

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub ensemble: EnsembleSection,
    pub solver: SolverSection,
    pub outputs: OutputSection,
}

fn parse_matrix(key: &str, text: &str, n: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::config(key, format!("bad number `{t}`: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.len() == n && rows.iter().all(|r| r.len() == n) {
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    } else if rows.len() == 1 && flat.len() == n * n {
        // single-row literal taken row-major
        Ok(DMatrix::from_row_slice(n, n, &flat))
    } else {
        Err(Error::config(
            key,
            format!(
                "expected a {n}x{n} matrix literal, got {} values",
                flat.len()
            ),
        ))
    }
}

fn parse_vector(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::config(key, format!("bad number `{t}`: {e}")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, text: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.parse::<T>()
        .map_err(|e| Error::config(key, format!("bad value `{text}`: {e}")))
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn split_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("malformed section header `{line}`"),
                ));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            if sections.contains_key(&name) {
                return Err(Error::config(&name, "duplicate section"));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(
                format!("line {}", lineno + 1),
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        let section = current
            .as_ref()
            .ok_or_else(|| Error::config(key.trim(), "key appears before any [section]"))?;
        let key = key.trim().to_string();
        let map = sections.get_mut(section).unwrap();
        if map.contains_key(&key) {
            return Err(Error::config(format!("{section}.{key}"), "duplicate key"));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(sections)
}

struct SectionReader {
    name: String,
    map: BTreeMap<String, String>,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::config(format!("{}.{key}", self.name), "missing required key"))
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::config(format!("{}.{key}", self.name), "unknown key"));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut reader = |name: &str| -> Result<SectionReader> {
            let map = sections
                .remove(name)
                .ok_or_else(|| Error::config(name, "missing section"))?;
            Ok(SectionReader {
                name: name.to_string(),
                map,
            })
        };

        let mut model_sec = reader("model")?;
        let kind = model_sec.require("kind")?;
        let dim: usize = parse_scalar("model.n", &model_sec.require("n")?)?;
        if dim == 0 {
            return Err(Error::config("model.n", "dimension must be at least 1"));
        }
        let lambda: f64 = parse_scalar("model.lambda", &model_sec.require("lambda")?)?;
        let model = match kind.as_str() {
            "quadratic" => {
                let mut mat = |key: &str| -> Result<DMatrix<f64>> {
                    match model_sec.take(key) {
                        Some(text) => parse_matrix(&format!("model.{key}"), &text, dim),
                        None => Ok(DMatrix::zeros(dim, dim)),
                    }
                };
                ModelSection::Quadratic {
                    dim,
                    q: mat("q")?,
                    q_bar: mat("q_bar")?,
                    s: mat("s")?,
                    q_t: mat("q_t")?,
                    q_bar_t: mat("q_bar_t")?,
                    s_t: mat("s_t")?,
                    lambda,
                }
            }
            "kernel" => {
                let kernel_kind = model_sec.require("kernel")?;
                let width = match model_sec.take("width") {
                    Some(text) => parse_scalar("model.width", &text)?,
                    None => 1.0,
                };
                ModelSection::Kernel {
                    dim,
                    kind: kernel_kind,
                    width,
                    lambda,
                }
            }
            other => {
                return Err(Error::config(
                    "model.kind",
                    format!("unknown model kind `{other}` (expected quadratic or kernel)"),
                ))
            }
        };
        model_sec.finish()?;

        let mut ens_sec = reader("ensemble")?;
        let has_points = ens_sec.map.contains_key("points");
        let has_sampler = ens_sec.map.contains_key("sampler");
        if has_points == has_sampler {
            return Err(Error::config(
                "ensemble",
                "exactly one of `points` or `sampler` must be present",
            ));
        }
        let ensemble = if has_points {
            let text = ens_sec.require("points")?;
            let rows: Vec<Vec<f64>> = text
                .split(';')
                .map(|row| parse_vector("ensemble.points", row))
                .collect::<Result<_>>()?;
            if rows.iter().any(|r| r.len() != dim) {
                return Err(Error::config(
                    "ensemble.points",
                    format!("every particle needs {dim} coordinates"),
                ));
            }
            EnsembleSection::Points(rows)
        } else {
            let sampler = ens_sec.require("sampler")?;
            if sampler != "gaussian" {
                return Err(Error::config(
                    "ensemble.sampler",
                    format!("unknown sampler `{sampler}` (expected gaussian)"),
                ));
            }
            let mean = parse_vector("ensemble.mean", &ens_sec.require("mean")?)?;
            if mean.len() != dim {
                return Err(Error::config(
                    "ensemble.mean",
                    format!("mean needs {dim} coordinates"),
                ));
            }
            let cov = match ens_sec.take("cov") {
                Some(text) => parse_matrix("ensemble.cov", &text, dim)?,
                None => DMatrix::identity(dim, dim),
            };
            let count: usize = parse_scalar("ensemble.count", &ens_sec.require("count")?)?;
            if count == 0 {
                return Err(Error::config(
                    "ensemble.count",
                    "need at least one particle",
                ));
            }
            let seed: u64 = parse_scalar("ensemble.seed", &ens_sec.require("seed")?)?;
            EnsembleSection::Gaussian {
                mean,
                cov,
                count,
                seed,
            }
        };
        ens_sec.finish()?;

        let mut solver_sec = reader("solver")?;
        let horizon: f64 = parse_scalar("solver.horizon", &solver_sec.require("horizon")?)?;
        let t0 = match solver_sec.take("t0") {
            Some(text) => parse_scalar("solver.t0", &text)?,
            None => 0.0,
        };
        let grid_m = match solver_sec.take("grid") {
            Some(text) => parse_scalar("solver.grid", &text)?,
            None => 400,
        };
        let tol = match solver_sec.take("tol") {
            Some(text) => parse_scalar("solver.tol", &text)?,
            None => 1e-10,
        };
        let max_iter = match solver_sec.take("max_iter") {
            Some(text) => parse_scalar("solver.max_iter", &text)?,
            None => 10_000,
        };
        solver_sec.finish()?;

        let outputs = match sections.remove("outputs") {
            Some(map) => {
                let mut sec = SectionReader {
                    name: "outputs".into(),
                    map,
                };
                let dir = sec.take("dir").unwrap_or_else(|| "out".into());
                let plots = match sec.take("plots") {
                    Some(text) => parse_scalar("outputs.plots", &text)?,
                    None => true,
                };
                sec.finish()?;
                OutputSection { dir, plots }
            }
            None => OutputSection {
                dir: "out".into(),
                plots: true,
            },
        };

        if let Some(name) = sections.keys().next() {
            return Err(Error::config(name, "unknown section"));
        }

        Ok(ExperimentConfig {
            model,
            ensemble,
            solver: SolverSection {
                t0,
                horizon,
                grid_m,
                tol,
                max_iter,
            },
            outputs,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn lambda(&self) -> f64 {
        match &self.model {
            ModelSection::Quadratic { lambda, .. } => *lambda,
            ModelSection::Kernel { lambda, .. } => *lambda,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ModelSection::Quadratic { dim, .. } => *dim,
            ModelSection::Kernel { dim, .. } => *dim,
        }
    }

    /// Instantiates the (running, terminal) pair; quadratic models are also
    /// returned whole so the closed-form oracle can run beside the solver.
    pub fn build_costs(&self) -> Result<CostPair> {
        match &self.model {
            ModelSection::Quadratic {
                q,
                q_bar,
                s,
                q_t,
                q_bar_t,
                s_t,
                lambda,
                ..
            } => {
                let running = QuadraticCost::new(q.clone(), q_bar.clone(), s.clone())
                    .map_err(|e| Error::config("model.q", e.to_string()))?;
                let terminal = QuadraticCost::new(q_t.clone(), q_bar_t.clone(), s_t.clone())
                    .map_err(|e| Error::config("model.q_t", e.to_string()))?;
                let model = QuadraticModel::new(
                    running.clone(),
                    terminal.clone(),
                    *lambda,
                    self.solver.horizon,
                )?;
                Ok((Box::new(running), Box::new(terminal), Some(model)))
            }
            ModelSection::Kernel {
                dim, kind, width, ..
            } => {
                let kernel: KernelCost = match kind.as_str() {
                    "bilinear" => KernelCost::bilinear(*dim),
                    "gaussian" => KernelCost::gaussian(*dim, *width)
                        .map_err(|e| Error::config("model.width", e.to_string()))?,
                    other => {
                        return Err(Error::config(
                            "model.kernel",
                            format!("unknown kernel `{other}` (expected bilinear or gaussian)"),
                        ))
                    }
                };
                Ok((Box::new(kernel), Box::new(QuadraticCost::zero(*dim)), None))
            }
        }
    }

    pub fn build_ensemble(&self) -> Result<Ensemble> {
        match &self.ensemble {
            EnsembleSection::Points(rows) => Ensemble::from_rows(rows),
            EnsembleSection::Gaussian {
                mean,
                cov,
                count,
                seed,
            } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                Ensemble::sample_gaussian(&mut rng, *count, &DVector::from_vec(mean.clone()), cov)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR_CONFIG: &str = "
# scalar instance
[model]
kind = quadratic
n = 1
q = 1
lambda = 1.0

[ensemble]
points = 1

[solver]
horizon = 0.5
grid = 200

[outputs]
dir = out
plots = false
";

    #[test]
    fn parses_scalar_config() {
        let cfg = ExperimentConfig::parse(SCALAR_CONFIG).unwrap();
        assert_eq!(cfg.dim(), 1);
        assert_eq!(cfg.lambda(), 1.0);
        assert_eq!(cfg.solver.grid_m, 200);
        assert_eq!(cfg.solver.tol, 1e-10);
        let (_, _, quad) = cfg.build_costs().unwrap();
        assert!(quad.is_some());
        let ens = cfg.build_ensemble().unwrap();
        assert_eq!(ens.len(), 1);
    }

    #[test]
    fn parses_matrix_and_sampler() {
        let text = "
[model]
kind = quadratic
n = 2
q = 1 0; 0 2
q_bar = 0.5 0; 0 0.5
s = 1 0; 0 1
lambda = 6.0

[ensemble]
sampler = gaussian
mean = 0 1
cov = 1 0; 0 1
count = 8
seed = 42

[solver]
horizon = 0.8
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let ens = cfg.build_ensemble().unwrap();
        assert_eq!(ens.len(), 8);
        assert_eq!(ens.dim(), 2);
        // same seed, same draw
        let again = cfg.build_ensemble().unwrap();
        assert_eq!(ens, again);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let missing = ExperimentConfig::parse("[model]\nkind = quadratic\nlambda = 1\n");
        match missing {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.n"),
            other => panic!("expected config error, got {other:?}"),
        }

        let unknown = ExperimentConfig::parse(
            "[model]\nkind = quadratic\nn = 1\nlambda = 1\nwat = 3\n[ensemble]\npoints = 1\n[solver]\nhorizon = 1\n",
        );
        match unknown {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.wat"),
            other => panic!("expected config error, got {other:?}"),
        }

        let bad_number = ExperimentConfig::parse(
            "[model]\nkind = quadratic\nn = 1\nq = abc\nlambda = 1\n[ensemble]\npoints = 1\n[solver]\nhorizon = 1\n",
        );
        match bad_number {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.q"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn sampler_requires_seed() {
        let text = "
[model]
kind = quadratic
n = 1
q = 1
lambda = 1

[ensemble]
sampler = gaussian
mean = 0
count = 4

[solver]
horizon = 0.5
";
        match ExperimentConfig::parse(text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "ensemble.seed"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn exactly_one_ensemble_source() {
        let text = "
[model]
kind = quadratic
n = 1
q = 1
lambda = 1

[ensemble]
points = 1
sampler = gaussian

[solver]
horizon = 0.5
";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn kernel_model_builds() {
        let text = "
[model]
kind = kernel
n = 1
kernel = gaussian
width = 0.9
lambda = 3.0

[ensemble]
points = 0.5; -0.5; 1.0

[solver]
horizon = 0.5
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let (running, _, quad) = cfg.build_costs().unwrap();
        assert!(quad.is_none());
        assert!(running.lipschitz_constant() > 0.0);
    }
}
