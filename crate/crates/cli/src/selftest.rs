//! Built-in deterministic battery: a miniature instance of every experiment
//! plus internal consistency checks. Two runs with the same seed must produce
//! bit-identical artifacts.

use serde::Serialize;

use mfg_core::energy::fp_constraint_residual;
use mfg_core::exponents::{mass_critical, sobolev_critical};
use mfg_core::fp::{fp_flux_pair, solve_stationary_with};
use mfg_core::grid::{Grid, ScalarField, VectorField};
use mfg_core::hjb::DiffMode;
use mfg_core::minimizer::MinimizerConfig;
use mfg_core::model::{Coupling, CouplingSign, Hamiltonian};
use mfg_core::pipeline::{self, multiplicity_probe, system_residual_at, unboundedness_sweep, SolveConfig};

use crate::experiments::RunError;
use crate::output::{fmt_f64, Csv, OutputDir};

#[derive(Serialize)]
struct Check {
    name: String,
    value: f64,
    bound: f64,
    pass: bool,
}

fn check(name: &str, value: f64, bound: f64) -> Check {
    Check {
        name: name.into(),
        value,
        bound,
        pass: value <= bound,
    }
}

pub fn run(seed: u64, out: &mut OutputDir) -> Result<bool, RunError> {
    let mut checks = Vec::new();

    // mini variational solve, repulsive quadratic model
    let grid = Grid::line(32).map_err(RunError::Solver)?;
    let h = Hamiltonian::model(2.0).map_err(RunError::Solver)?;
    let coupling =
        Coupling::new(CouplingSign::Repulsive, 0.5, 0.0, 2.0).map_err(RunError::Solver)?;
    let scfg = SolveConfig {
        epsilons: vec![0.1, 0.05],
        seed,
        ..Default::default()
    };
    let mcfg = MinimizerConfig {
        seed,
        ..Default::default()
    };
    let sol = pipeline::solve(&grid, &h, &coupling, &scfg, &mcfg, None)?;
    checks.push(check("solve_system_residual", sol.system_residual, 1e-6));
    checks.push(check(
        "solve_lambda_gap",
        (sol.lambda - 0.5).abs(),
        1e-6,
    ));
    out.write_scalar_field("selftest_m.csv", &grid, &sol.m)?;
    out.write_scalar_field("selftest_u.csv", &grid, &sol.u)?;

    // the trivial triple is an exact fixed point of the discrete system
    let trivial_res = system_residual_at(
        &grid,
        &h,
        &coupling,
        &ScalarField::zeros(grid.cells()),
        coupling.value(0, 1.0).map_err(RunError::Solver)?,
        &ScalarField::constant(&grid, 1.0),
        DiffMode::Centered,
    )?;
    checks.push(check("trivial_triple_residual", trivial_res, 1e-12));

    // transpose-assembly duality at machine precision
    let b = VectorField::from_fn(&grid, |_, x| 0.7 * (3.0 * x[0]).sin());
    let fp = solve_stationary_with(&grid, &b, DiffMode::Centered, None)?;
    let pair = fp_flux_pair(&grid, &fp, &b);
    checks.push(check(
        "transpose_duality_residual",
        fp_constraint_residual(&grid, &pair)?,
        1e-9,
    ));

    // exponents table
    let mut csv = Csv::new(&["gamma", "n", "q_bar", "q_c"]);
    for n in 1..=4u32 {
        csv.row(&[
            fmt_f64(2.0),
            n.to_string(),
            fmt_f64(mass_critical(2.0, n).map_err(RunError::Solver)?),
            fmt_f64(sobolev_critical(2.0, n).map_err(RunError::Solver)?),
        ]);
    }
    out.write_csv("selftest_exponents.csv", csv)?;

    // multiplicity probe in the gamma' > 2 window
    let grid_m = Grid::line(64).map_err(RunError::Solver)?;
    let l15 = Hamiltonian::model(1.5)
        .map_err(RunError::Solver)?
        .conjugate()
        .map_err(RunError::Solver)?;
    let aggr = Coupling::new(CouplingSign::Aggregative, 1.0, 0.0, 2.0).map_err(RunError::Solver)?;
    let phi = ScalarField::from_fn(&grid_m, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
    let rows = multiplicity_probe(&grid_m, &l15, &aggr, &phi, &[0.0, 0.002, 0.004])?;
    let mut csv = Csv::new(&["eps", "total", "below_trivial"]);
    for row in &rows {
        csv.row(&[
            fmt_f64(row.eps),
            fmt_f64(row.total),
            row.below_trivial.to_string(),
        ]);
    }
    out.write_csv("selftest_multiplicity.csv", csv)?;

    // concentration scaling on a supercritical coupling
    let grid_u = Grid::line(128).map_err(RunError::Solver)?;
    let l2 = h.conjugate().map_err(RunError::Solver)?;
    let strong =
        Coupling::new(CouplingSign::Aggregative, 50.0, 0.0, 3.5).map_err(RunError::Solver)?;
    let sweep = unboundedness_sweep(&grid_u, &l2, &strong, &[1.5, 2.0, 3.0, 4.0], None)?;
    let mut csv = Csv::new(&["scaling", "total"]);
    for row in &sweep.rows {
        csv.row(&[fmt_f64(row.lambda), fmt_f64(row.total)]);
    }
    out.write_csv("selftest_unbounded.csv", csv)?;
    checks.push(check(
        "unbounded_energy_decreases",
        sweep.rows.last().unwrap().total - sweep.rows.first().unwrap().total,
        0.0,
    ));

    let pass = checks.iter().all(|c| c.pass);
    out.write_json("selftest_checks.json", &checks)?;
    for c in &checks {
        println!(
            "[{}] {}: {} (bound {})",
            if c.pass { "ok" } else { "FAIL" },
            c.name,
            fmt_f64(c.value),
            fmt_f64(c.bound)
        );
    }
    Ok(pass)
}
