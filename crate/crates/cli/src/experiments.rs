//! Experiment drivers behind the subcommands.

use serde::Serialize;

use mfg_core::energy::{estimate_ce, estimate_cq, estimate_cs};
use mfg_core::error::Error as CoreError;
use mfg_core::exponents::{classify_regime, mass_critical, sobolev_critical, ConstantsLedger};
use mfg_core::grid::{Grid, ScalarField};
use mfg_core::model::{Coupling, CouplingSign, Hamiltonian};
use mfg_core::pipeline::{
    self, blowup_monitor, critical_gate, hopf_cole_solve, multiplicity_probe,
    unboundedness_sweep, HopfColeOptions, MfgSolution,
};

use crate::config::{regime_refusal, ConfigError, Resolved, RunConfig};
use crate::output::{fmt_f64, Csv, OutputDir};

pub enum RunError {
    Config(ConfigError),
    Solver(CoreError),
    Io(std::io::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        RunError::Solver(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Measures the discrete embedding surrogates and assembles the ledger.
pub fn build_ledger(r: &Resolved) -> Result<ConstantsLedger, CoreError> {
    let gamma = r.hamiltonian.gamma;
    let gamma_conj = r.hamiltonian.gamma_conj();
    let q = r.coupling.q_exp;
    let n = r.model_dim;
    let c_l = r.hamiltonian.conjugate()?.c_l;
    let c_q = estimate_cq(&r.grid, q, gamma_conj, 150, r.seed)?;
    let q_c = sobolev_critical(gamma, n)?;
    let (p, p_star) = if (gamma_conj as f64) < n as f64 && q_c.is_finite() {
        let p_star = 0.5 * (q_c + n as f64);
        (n as f64 * p_star / (n as f64 + p_star), p_star)
    } else {
        (2.0, 4.0)
    };
    let c_e = estimate_ce(&r.grid, p, 60, r.seed.wrapping_add(1))?;
    let c_s = estimate_cs(&r.grid, p, p_star, 60, r.seed.wrapping_add(2))?;
    ConstantsLedger::assemble(
        gamma,
        q,
        n,
        r.coupling.c_f,
        r.coupling.k_f,
        c_l,
        c_q,
        c_e,
        c_s,
    )
}

#[derive(Serialize)]
struct SolutionSummary<'a> {
    lambda: f64,
    duality_residual: f64,
    system_residual: f64,
    regime: String,
    interior_certified: bool,
    energy: &'a mfg_core::EnergyReport,
    multistart_energies: &'a [f64],
    history: &'a [pipeline::EpsRecord],
    monitor: pipeline::MonitorReport,
    min_density: f64,
    max_density: f64,
}

fn write_solution(
    out: &mut OutputDir,
    r: &Resolved,
    sol: &MfgSolution,
) -> Result<(), RunError> {
    let monitor = blowup_monitor(
        &sol.history,
        r.hamiltonian.gamma,
        r.coupling.q_exp,
        r.model_dim,
    );
    let summary = SolutionSummary {
        lambda: sol.lambda,
        duality_residual: sol.duality_residual,
        system_residual: sol.system_residual,
        regime: sol.regime.to_string(),
        interior_certified: sol.interior_certified,
        energy: &sol.energy,
        multistart_energies: &sol.multistart_energies,
        history: &sol.history,
        monitor,
        min_density: sol.m.min(),
        max_density: sol.m.max(),
    };
    out.write_json("solution.json", &summary)?;
    out.write_scalar_field("u.csv", &r.grid, &sol.u)?;
    out.write_scalar_field("m.csv", &r.grid, &sol.m)?;
    out.write_vector_field("w.csv", &r.grid, &sol.w)?;
    let text = format!(
        "lambda = {}\nenergy = {}\nregime = {}\nduality residual = {}\nsystem residual = {}\ninterior certified = {}\n",
        fmt_f64(sol.lambda),
        fmt_f64(sol.energy.total),
        sol.regime,
        fmt_f64(sol.duality_residual),
        fmt_f64(sol.system_residual),
        sol.interior_certified,
    );
    out.write_text("summary.txt", &text)?;
    Ok(())
}

pub fn run_solve(raw: &RunConfig, r: &Resolved, out: &mut OutputDir) -> Result<(), RunError> {
    let ledger = build_ledger(r)?;
    if let Some(err) = regime_refusal(ledger.regime, r.force) {
        return Err(err.into());
    }
    let sol = pipeline::solve(
        &r.grid,
        &r.hamiltonian,
        &r.coupling,
        &r.solve,
        &r.minimizer,
        Some(&ledger),
    )?;
    write_solution(out, r, &sol)?;
    out.write_json("ledger.json", &ledger)?;
    let _ = raw;
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary {
    axis: String,
    points: usize,
    converged: usize,
}

pub fn run_sweep(
    raw: &RunConfig,
    r: &Resolved,
    out: &mut OutputDir,
    jobs: usize,
) -> Result<(), RunError> {
    let sweep = r
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError {
            field: "sweep".into(),
            reason: "missing block".into(),
        })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| {
            RunError::Solver(CoreError::NonConvergence(format!("thread pool: {e}")))
        })?;

    struct PointRow {
        idx: usize,
        value: f64,
        regime: String,
        cf_threshold: f64,
        converged: bool,
        interior: bool,
        energy: f64,
        lq: f64,
        duality: f64,
        system: f64,
        monitor_max: f64,
        error: String,
    }

    let run_point = |idx: usize, value: f64| -> PointRow {
        let mut gamma = r.hamiltonian.gamma;
        let mut q = r.coupling.q_exp;
        let mut c_f = r.coupling.c_f;
        match sweep.axis.as_str() {
            "q" => q = value,
            "c_f" => c_f = value,
            _ => gamma = value,
        }
        let mut row = PointRow {
            idx,
            value,
            regime: String::new(),
            cf_threshold: f64::NAN,
            converged: false,
            interior: false,
            energy: f64::NAN,
            lq: f64::NAN,
            duality: f64::NAN,
            system: f64::NAN,
            monitor_max: f64::NAN,
            error: String::new(),
        };
        let attempt = || -> Result<(ConstantsLedger, MfgSolution), CoreError> {
            let h = Hamiltonian::with_coef(gamma, r.hamiltonian.coef)?
                .with_offset(r.hamiltonian.k_h)?;
            let coupling = Coupling::new(r.coupling.sign, c_f, r.coupling.k_f, q)?
                .with_weights(r.coupling.a_weight.clone(), r.coupling.b_weight.clone());
            let c_l = h.conjugate()?.c_l;
            let c_q = estimate_cq(&r.grid, q, h.gamma_conj(), 150, r.seed)?;
            let ledger = ConstantsLedger::assemble(
                gamma, q, r.model_dim, c_f, coupling.k_f, c_l, c_q, 1.0, 1.0,
            )?;
            let mut scfg = r.solve.clone();
            let mut mcfg = r.minimizer.clone();
            if mcfg.alpha.is_infinite() {
                let ball = ledger.ball_radius();
                if ball.is_finite() {
                    mcfg.alpha = ball.max(1.0 + 1e-9);
                }
            }
            scfg.regime_override = Some(ledger.regime);
            let sol = pipeline::solve(&r.grid, &h, &coupling, &scfg, &mcfg, Some(&ledger))?;
            Ok((ledger, sol))
        };
        match attempt() {
            Ok((ledger, sol)) => {
                row.regime = ledger.regime.to_string();
                row.cf_threshold = ledger.cf_threshold;
                row.converged = sol.system_residual <= r.solve.tol_system;
                row.interior = sol.interior_certified;
                row.energy = sol.energy.total;
                row.lq = sol.energy.lq_norm_q;
                row.duality = sol.duality_residual;
                row.system = sol.system_residual;
                let mon = blowup_monitor(&sol.history, gamma, q, r.model_dim);
                row.monitor_max = mon
                    .sequence
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            Err(e) => {
                row.regime = classify_regime(gamma, r.model_dim, q)
                    .map(|reg| reg.to_string())
                    .unwrap_or_else(|_| "invalid".into());
                row.error = error_name(&e);
            }
        }
        row
    };

    let mut rows: Vec<PointRow> = pool.install(|| {
        use rayon::prelude::*;
        sweep
            .values
            .par_iter()
            .enumerate()
            .map(|(idx, &v)| run_point(idx, v))
            .collect()
    });
    rows.sort_by_key(|row| row.idx);

    let mut csv = Csv::new(&[
        "index",
        "value",
        "regime",
        "cf_threshold",
        "converged",
        "interior_certified",
        "energy",
        "lq_norm_q",
        "duality_residual",
        "system_residual",
        "blowup_monitor_max",
        "error",
    ]);
    let mut converged = 0usize;
    for row in &rows {
        if row.converged {
            converged += 1;
        }
        csv.row(&[
            row.idx.to_string(),
            fmt_f64(row.value),
            row.regime.clone(),
            fmt_f64(row.cf_threshold),
            row.converged.to_string(),
            row.interior.to_string(),
            fmt_f64(row.energy),
            fmt_f64(row.lq),
            fmt_f64(row.duality),
            fmt_f64(row.system),
            fmt_f64(row.monitor_max),
            row.error.clone(),
        ]);
    }
    out.write_csv("sweep.csv", csv)?;
    out.write_json(
        "sweep.json",
        &SweepSummary {
            axis: sweep.axis.clone(),
            points: rows.len(),
            converged,
        },
    )?;
    let _ = raw;
    Ok(())
}

fn error_name(e: &CoreError) -> String {
    match e {
        CoreError::ShapeMismatch(_) => "ShapeMismatch",
        CoreError::BadParameter(_) => "BadParameter",
        CoreError::IncompatibleRhs { .. } => "IncompatibleRhs",
        CoreError::SingularSystem(_) => "SingularSystem",
        CoreError::NewtonDiverged { .. } => "NewtonDiverged",
        CoreError::NonPositive { .. } => "NonPositive",
        CoreError::NegativeDensity(_) => "NegativeDensity",
        CoreError::LineSearchStalled { .. } => "LineSearchStalled",
        CoreError::NoBarrier { .. } => "NoBarrier",
        CoreError::ContinuationDiverged { .. } => "ContinuationDiverged",
        CoreError::DualityFailed { .. } => "DualityFailed",
        CoreError::NonConvergence(_) => "NonConvergence",
        CoreError::InfeasibleEps { .. } => "InfeasibleEps",
        CoreError::BumpEscapesDomain { .. } => "BumpEscapesDomain",
    }
    .into()
}

pub fn run_exponents(r: &Resolved, out: &mut OutputDir) -> Result<(), RunError> {
    let gamma = r.hamiltonian.gamma;
    let mut csv = Csv::new(&["gamma", "n", "q_bar", "q_c"]);
    for n in 1..=4u32 {
        csv.row(&[
            fmt_f64(gamma),
            n.to_string(),
            fmt_f64(mass_critical(gamma, n).map_err(RunError::from)?),
            fmt_f64(sobolev_critical(gamma, n).map_err(RunError::from)?),
        ]);
    }
    out.write_csv("exponents.csv", csv)?;
    let ledger = build_ledger(r)?;
    out.write_json("ledger.json", &ledger)?;
    let gate = critical_gate(&ledger, &r.hamiltonian, &r.coupling, 1.0, 1.0);
    out.write_json("critical_gate.json", &gate)?;
    Ok(())
}

pub fn run_multiplicity(r: &Resolved, out: &mut OutputDir) -> Result<(), RunError> {
    let l = r.hamiltonian.conjugate()?;
    let k = r.multiplicity_mode.max(1) as f64;
    let lx = r.grid.length(0);
    let phi = ScalarField::from_fn(&r.grid, |x| {
        (2.0 * std::f64::consts::PI * k * x[0] / lx).cos()
    });
    let rows = multiplicity_probe(&r.grid, &l, &r.coupling, &phi, &r.multiplicity_eps)?;
    let trivial = r.coupling.trivial_energy(&r.grid);
    let mut csv = Csv::new(&["eps", "kinetic", "potential", "total", "below_trivial"]);
    let mut best: Option<&pipeline::ProbeRow> = None;
    for row in &rows {
        csv.row(&[
            fmt_f64(row.eps),
            fmt_f64(row.kinetic),
            fmt_f64(row.potential),
            fmt_f64(row.total),
            row.below_trivial.to_string(),
        ]);
        if row.below_trivial && best.is_none_or(|b| row.total < b.total) {
            best = Some(row);
        }
    }
    out.write_csv("multiplicity.csv", csv)?;
    let text = match best {
        Some(row) => format!(
            "trivial energy = {}\nbest eps = {} with energy {} (below trivial)\n",
            fmt_f64(trivial),
            fmt_f64(row.eps),
            fmt_f64(row.total)
        ),
        None => format!(
            "trivial energy = {}\nno probe point fell below the trivial level\n",
            fmt_f64(trivial)
        ),
    };
    out.write_text("summary.txt", &text)?;
    Ok(())
}

pub fn run_unbounded(r: &Resolved, out: &mut OutputDir) -> Result<(), RunError> {
    let l = r.hamiltonian.conjugate()?;
    let ledger = build_ledger(r)?;
    let alpha = ledger.ball_radius();
    let sweep = unboundedness_sweep(
        &r.grid,
        &l,
        &r.coupling,
        &r.unbounded_scalings,
        if alpha.is_finite() { Some(alpha) } else { None },
    )?;
    let mut csv = Csv::new(&[
        "scaling",
        "kinetic",
        "potential",
        "total",
        "lq_norm_q",
        "coupling_term",
        "in_ball",
    ]);
    for row in &sweep.rows {
        csv.row(&[
            fmt_f64(row.lambda),
            fmt_f64(row.kinetic),
            fmt_f64(row.potential),
            fmt_f64(row.total),
            fmt_f64(row.lq_norm_q),
            fmt_f64(row.coupling_term),
            row.in_ball.to_string(),
        ]);
    }
    out.write_csv("unbounded.csv", csv)?;
    #[derive(Serialize)]
    struct Slopes {
        kinetic_slope: f64,
        coupling_slope: f64,
        q_bar: f64,
        regime: String,
    }
    out.write_json(
        "unbounded.json",
        &Slopes {
            kinetic_slope: sweep.kinetic_slope,
            coupling_slope: sweep.coupling_slope,
            q_bar: ledger.q_bar,
            regime: ledger.regime.to_string(),
        },
    )?;
    Ok(())
}

pub fn run_hopf_cole(r: &Resolved, out: &mut OutputDir) -> Result<(), RunError> {
    if (r.hamiltonian.gamma - 2.0).abs() > 1e-12 {
        return Err(ConfigError {
            field: "problem.gamma".into(),
            reason: "the quadratic-case comparison requires gamma = 2".into(),
        }
        .into());
    }
    if (r.hamiltonian.coef - 2.0).abs() > 1e-12 {
        return Err(ConfigError {
            field: "problem.coef".into(),
            reason: "the quadratic-case comparison uses H(p) = |p|^2, set coef = 2".into(),
        }
        .into());
    }
    let ledger = build_ledger(r)?;
    let sol = pipeline::solve(
        &r.grid,
        &r.hamiltonian,
        &r.coupling,
        &r.solve,
        &r.minimizer,
        Some(&ledger),
    )?;
    let hc_opts = HopfColeOptions {
        seed: r.seed,
        ..Default::default()
    };
    let (m_hc, lambda_hc) = hopf_cole_solve(&r.grid, &r.coupling, &hc_opts)?;
    let mut l1 = 0.0;
    for c in 0..r.grid.cells() {
        l1 += (sol.m[c] - m_hc[c]).abs();
    }
    l1 *= r.grid.cell_volume();
    #[derive(Serialize)]
    struct Compare {
        lambda_variational: f64,
        lambda_eigen: f64,
        lambda_gap: f64,
        density_l1_gap: f64,
    }
    out.write_json(
        "compare.json",
        &Compare {
            lambda_variational: sol.lambda,
            lambda_eigen: lambda_hc,
            lambda_gap: (sol.lambda - lambda_hc).abs(),
            density_l1_gap: l1,
        },
    )?;
    let mut csv = Csv::new(&["x", "m_variational", "m_eigen"]);
    for c in 0..r.grid.cells() {
        csv.row(&[
            fmt_f64(r.grid.cell_center(c)[0]),
            fmt_f64(sol.m[c]),
            fmt_f64(m_hc[c]),
        ]);
    }
    out.write_csv("m_compare.csv", csv)?;
    write_solution(out, r, &sol)?;
    Ok(())
}
