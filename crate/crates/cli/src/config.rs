//! Run configuration: a single flat JSON document validated field by field so
//! failures name the offending path.

use serde::{Deserialize, Serialize};

use mfg_core::exponents::Regime;
use mfg_core::grid::{Grid, ScalarField};
use mfg_core::hjb::DiffMode;
use mfg_core::minimizer::{BallMode, MinimizerConfig};
use mfg_core::model::{Coupling, CouplingSign, Hamiltonian};
use mfg_core::pipeline::SolveConfig;

/// Validation failure with the offending config path.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// "uniform" or "cosine".
    pub kind: String,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub mode: u32,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub gamma: Option<f64>,
    /// Scale of the power Hamiltonian (default 1: `H = |p|^gamma / gamma`).
    pub coef: Option<f64>,
    pub k_h: Option<f64>,
    pub q: Option<f64>,
    pub c_f: Option<f64>,
    pub k_f: Option<f64>,
    /// "aggregative" or "repulsive".
    pub sign: Option<String>,
    /// Model dimension for the exponent formulas (defaults to the grid
    /// dimension).
    pub n: Option<u32>,
    pub a_weight: Option<WeightSpec>,
    pub b_weight: Option<WeightSpec>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: Option<u32>,
    pub cells: Option<usize>,
    pub lengths: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub epsilons: Option<Vec<f64>>,
    pub tol_duality: Option<f64>,
    pub tol_system: Option<f64>,
    pub final_unmollified: Option<bool>,
    pub refresh_max: Option<usize>,
    /// "centered" (default) or "upwind".
    pub mode: Option<String>,
    pub multistarts: Option<usize>,
    pub start_amplitude: Option<f64>,
    pub alpha: Option<f64>,
    pub m_floor: Option<f64>,
    pub step0: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    /// "reject" (default) or "penalty".
    pub ball_mode: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// "q", "c_f" or "gamma".
    pub axis: Option<String>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub count: Option<usize>,
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicityBlock {
    /// Cosine mode of the perturbation profile.
    pub mode: Option<u32>,
    pub eps_list: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UnboundedBlock {
    pub scalings: Option<Vec<f64>>,
}

/// Raw configuration document.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemBlock>,
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub solver: Option<SolverBlock>,
    pub experiment: Option<String>,
    pub sweep: Option<SweepBlock>,
    pub multiplicity: Option<MultiplicityBlock>,
    pub unbounded: Option<UnboundedBlock>,
    pub output_dir: Option<String>,
    pub seed: Option<u64>,
    pub force: Option<bool>,
}

/// Fully validated configuration.
pub struct Resolved {
    pub grid: Grid,
    pub hamiltonian: Hamiltonian,
    pub coupling: Coupling,
    pub model_dim: u32,
    pub solve: SolveConfig,
    pub minimizer: MinimizerConfig,
    pub seed: u64,
    pub force: bool,
    pub sweep: Option<SweepAxis>,
    pub multiplicity_mode: u32,
    pub multiplicity_eps: Vec<f64>,
    pub unbounded_scalings: Vec<f64>,
}

pub struct SweepAxis {
    pub axis: String,
    pub values: Vec<f64>,
}

fn weight_field(grid: &Grid, spec: &WeightSpec, path: &str) -> Result<ScalarField, ConfigError> {
    match spec.kind.as_str() {
        "uniform" => Ok(ScalarField::constant(grid, 1.0)),
        "cosine" => {
            let amp = spec.amplitude;
            if !(amp.abs() < 1.0) {
                return Err(bad(path, "cosine amplitude must satisfy |a| < 1"));
            }
            let k = spec.mode.max(1) as f64;
            let lx = grid.length(0);
            Ok(ScalarField::from_fn(grid, |x| {
                1.0 + amp * (std::f64::consts::PI * k * x[0] / lx).cos()
            }))
        }
        other => Err(bad(path, format!("unknown weight kind `{other}`"))),
    }
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad("config", format!("parse error: {e}")))
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let problem = self.problem.as_ref().ok_or_else(|| bad("problem", "missing block"))?;
        let gamma = problem.gamma.ok_or_else(|| bad("problem.gamma", "missing"))?;
        if !(gamma > 1.0) {
            return Err(bad("problem.gamma", "must be > 1"));
        }
        let q = problem.q.ok_or_else(|| bad("problem.q", "missing"))?;
        if !(q > 1.0) {
            return Err(bad("problem.q", "must be > 1"));
        }
        let c_f = problem.c_f.unwrap_or(0.0);
        if !(c_f >= 0.0) {
            return Err(bad("problem.c_f", "must be >= 0"));
        }
        let k_f = problem.k_f.unwrap_or(0.0);
        if !(k_f >= 0.0) {
            return Err(bad("problem.k_f", "must be >= 0"));
        }
        let coef = problem.coef.unwrap_or(1.0);
        if !(coef > 0.0) {
            return Err(bad("problem.coef", "must be > 0"));
        }
        let k_h = problem.k_h.unwrap_or(0.0);
        let sign = match problem.sign.as_deref().unwrap_or("repulsive") {
            "aggregative" => CouplingSign::Aggregative,
            "repulsive" => CouplingSign::Repulsive,
            other => {
                return Err(bad(
                    "problem.sign",
                    format!("expected `aggregative` or `repulsive`, got `{other}`"),
                ))
            }
        };

        let gridb = self.grid.as_ref().ok_or_else(|| bad("grid", "missing block"))?;
        let dim = gridb.dim.unwrap_or(1);
        if dim != 1 && dim != 2 {
            return Err(bad("grid.dim", "must be 1 or 2"));
        }
        let cells = gridb.cells.ok_or_else(|| bad("grid.cells", "missing"))?;
        let lengths = gridb.lengths.clone().unwrap_or_default();
        let grid = match (dim, lengths.as_slice()) {
            (1, []) => Grid::line(cells),
            (1, [l]) => Grid::line_on(cells, *l),
            (2, []) => Grid::square(cells),
            (2, [lx, ly]) => Grid::rect([cells, cells], [*lx, *ly]),
            _ => return Err(bad("grid.lengths", "must match the dimension")),
        }
        .map_err(|e| bad("grid", e.to_string()))?;

        let hamiltonian = Hamiltonian::with_coef(gamma, coef)
            .and_then(|h| h.with_offset(k_h))
            .map_err(|e| bad("problem", e.to_string()))?;
        let mut coupling = Coupling::new(sign, c_f, k_f, q)
            .map_err(|e| bad("problem", e.to_string()))?;
        let a_w = match &problem.a_weight {
            Some(spec) => Some(weight_field(&grid, spec, "problem.a_weight")?),
            None => None,
        };
        let b_w = match &problem.b_weight {
            Some(spec) => Some(weight_field(&grid, spec, "problem.b_weight")?),
            None => None,
        };
        coupling = coupling.with_weights(a_w, b_w);

        let model_dim = problem.n.unwrap_or(dim);
        if model_dim < 1 {
            return Err(bad("problem.n", "must be >= 1"));
        }

        let seed = self.seed.unwrap_or(0);
        let solver = self.solver.clone().unwrap_or_default();
        let mode = match solver.mode.as_deref().unwrap_or("centered") {
            "centered" => DiffMode::Centered,
            "upwind" => DiffMode::Upwind,
            other => {
                return Err(bad(
                    "solver.mode",
                    format!("expected `centered` or `upwind`, got `{other}`"),
                ))
            }
        };
        let ball_mode = match solver.ball_mode.as_deref().unwrap_or("reject") {
            "reject" => BallMode::Reject,
            "penalty" => BallMode::Penalty,
            other => {
                return Err(bad(
                    "solver.ball_mode",
                    format!("expected `reject` or `penalty`, got `{other}`"),
                ))
            }
        };
        let defaults = SolveConfig::default();
        let solve = SolveConfig {
            epsilons: solver.epsilons.clone().unwrap_or(defaults.epsilons),
            tol_duality: solver.tol_duality.unwrap_or(defaults.tol_duality),
            tol_system: solver.tol_system.unwrap_or(defaults.tol_system),
            model_dim: Some(model_dim),
            regime_override: None,
            final_unmollified: solver.final_unmollified.unwrap_or(true),
            refresh_max: solver.refresh_max.unwrap_or(defaults.refresh_max),
            mode,
            multistarts: solver.multistarts.unwrap_or(1),
            start_amplitude: solver.start_amplitude.unwrap_or(defaults.start_amplitude),
            seed,
        };
        solve.validate().map_err(|e| bad("solver.epsilons", e.to_string()))?;
        let mdefaults = MinimizerConfig::default();
        let minimizer = MinimizerConfig {
            alpha: solver.alpha.unwrap_or(f64::INFINITY),
            m_floor: solver.m_floor.unwrap_or(mdefaults.m_floor),
            step0: solver.step0.unwrap_or(mdefaults.step0),
            max_iters: solver.max_iters.unwrap_or(mdefaults.max_iters),
            grad_tol: solver.grad_tol.unwrap_or(mdefaults.grad_tol),
            ball_mode,
            seed,
        };
        minimizer.validate().map_err(|e| bad("solver", e.to_string()))?;

        let sweep = match &self.sweep {
            None => None,
            Some(sb) => {
                let axis = sb
                    .axis
                    .clone()
                    .ok_or_else(|| bad("sweep.axis", "missing"))?;
                if !["q", "c_f", "gamma"].contains(&axis.as_str()) {
                    return Err(bad("sweep.axis", "must be one of `q`, `c_f`, `gamma`"));
                }
                let values = if let Some(v) = &sb.values {
                    v.clone()
                } else {
                    let start = sb.start.ok_or_else(|| bad("sweep.start", "missing"))?;
                    let stop = sb.stop.ok_or_else(|| bad("sweep.stop", "missing"))?;
                    let count = sb.count.ok_or_else(|| bad("sweep.count", "missing"))?;
                    if count < 2 {
                        return Err(bad("sweep.count", "must be >= 2"));
                    }
                    (0..count)
                        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                        .collect()
                };
                if values.is_empty() {
                    return Err(bad("sweep.values", "axis is empty"));
                }
                if values.len() > 10_000 {
                    return Err(bad("sweep.values", "at most 10000 points"));
                }
                Some(SweepAxis { axis, values })
            }
        };

        let mult = self.multiplicity.clone().unwrap_or_default();
        let multiplicity_eps = mult
            .eps_list
            .unwrap_or_else(|| vec![0.0, 0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.008]);
        let unb = self.unbounded.clone().unwrap_or_default();
        let unbounded_scalings = unb.scalings.unwrap_or_else(|| {
            (0..14)
                .map(|i| 1.25 * 1.22f64.powi(i))
                .collect()
        });

        Ok(Resolved {
            grid,
            hamiltonian,
            coupling,
            model_dim,
            solve,
            minimizer,
            seed,
            force: self.force.unwrap_or(false),
            sweep,
            multiplicity_mode: mult.mode.unwrap_or(1),
            multiplicity_eps,
            unbounded_scalings,
        })
    }
}

/// Regimes that refuse to run without `--force`.
pub fn regime_refusal(regime: Regime, force: bool) -> Option<ConfigError> {
    if regime == Regime::Beyond && !force {
        Some(bad(
            "problem.q",
            "coupling growth is beyond the Sobolev-critical exponent; rerun with --force to proceed",
        ))
    } else {
        None
    }
}
