//! Full solves of the coupled system and the constructive experiments.
//!
//! A regularized stage minimizes the mollified energy, freezes the mollified
//! coupling at the minimizing density, solves the ergodic Hamilton-Jacobi
//! problem with that source, then the Fokker-Planck problem with the induced
//! drift, and reports how well the optimality relation `w = -m grad H(grad u)`
//! closes. A full solve walks a decreasing mollification ladder with warm
//! starts and finishes (by default) with an exact unmollified stage, so the
//! returned triple satisfies the local-coupling system at solver tolerance
//! rather than up to a mollification bias.

use serde::Serialize;

use crate::energy::{
    energy, energy_regularized, fp_constraint_residual, EnergyReport, FlowPair, M_FLOOR,
};
use crate::error::{Error, Result};
use crate::exponents::{classify_regime, ConstantsLedger, Regime};
use crate::fp::solve_stationary_with;
use crate::grid::{Grid, ScalarField, VectorField};
use crate::hjb::{
    barrier_levels, drift_from_solution, hjb_residual, solve_ergodic_with, DiffMode,
    ErgodicSolution, HjbOptions,
};
use crate::minimizer::{
    minimize_linearized, minimize_local, reduced_density, MinimizeReport, MinimizerConfig,
};
use crate::model::{mollified_coupling, Coupling, Hamiltonian, Lagrangian, Mollifier};

/// Configuration of a full solve.
#[derive(Clone, Debug, Serialize)]
pub struct SolveConfig {
    /// Strictly decreasing, positive mollification ladder.
    pub epsilons: Vec<f64>,
    pub tol_duality: f64,
    pub tol_system: f64,
    /// Model dimension used for regime classification (defaults to the grid
    /// dimension).
    pub model_dim: Option<u32>,
    pub regime_override: Option<Regime>,
    /// Append an exact unmollified stage after the ladder.
    pub final_unmollified: bool,
    /// Cap on coupling-refresh rounds per stage.
    pub refresh_max: usize,
    /// Discretization used by the HJB/FP legs. Centered keeps the duality
    /// identity at optimizer tolerance; upwind is the robust standalone mode.
    pub mode: DiffMode,
    /// Number of descent starts (the first is always the resting flux).
    pub multistarts: usize,
    /// Amplitude of the seeded perturbation starts.
    pub start_amplitude: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            tol_duality: 1e-6,
            tol_system: 1e-6,
            model_dim: None,
            regime_override: None,
            final_unmollified: true,
            refresh_max: 20,
            mode: DiffMode::Centered,
            multistarts: 1,
            start_amplitude: 0.05,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() && !self.final_unmollified {
            return Err(Error::BadParameter("empty continuation ladder".into()));
        }
        for pair in self.epsilons.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::BadParameter(
                    "epsilons must be strictly decreasing".into(),
                ));
            }
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::BadParameter("epsilons must be positive".into()));
        }
        Ok(())
    }
}

/// Per-stage record of the continuation history.
#[derive(Clone, Debug, Serialize)]
pub struct EpsRecord {
    pub epsilon: f64,
    pub sup_m: f64,
    pub lambda: f64,
    pub energy_total: f64,
    pub lq_norm_q: f64,
    pub duality_residual: f64,
    pub density_mismatch: f64,
    pub minimize_iterations: usize,
    pub refreshes: usize,
}

/// Outcome of one regularized stage.
#[derive(Clone, Debug)]
pub struct StageSolution {
    pub u: ScalarField,
    pub lambda: f64,
    pub pair: FlowPair,
    pub energy: EnergyReport,
    pub duality_residual: f64,
    pub density_mismatch: f64,
    pub interior_certified: bool,
    pub record: EpsRecord,
}

/// Solution of the full system.
#[derive(Clone, Debug)]
pub struct MfgSolution {
    pub u: ScalarField,
    pub lambda: f64,
    pub m: ScalarField,
    pub w: VectorField,
    pub duality_residual: f64,
    pub system_residual: f64,
    pub energy: EnergyReport,
    pub regime: Regime,
    pub history: Vec<EpsRecord>,
    pub interior_certified: bool,
    /// Final energies of every descent start, best first.
    pub multistart_energies: Vec<f64>,
}

fn l1_distance(grid: &Grid, a: &ScalarField, b: &ScalarField) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * grid.cell_volume()
}

/// `||w + m grad H(grad u)||_1 / (1 + ||w||_1)`.
fn duality_residual(
    grid: &Grid,
    h: &Hamiltonian,
    u: &ScalarField,
    pair: &FlowPair,
) -> Result<f64> {
    let b = drift_from_solution(grid, h, u)?;
    let mut defect = VectorField::zeros(grid);
    for d in 0..grid.dim() {
        for c in 0..grid.cells() {
            defect.component_mut(d)[c] =
                pair.w.component(d)[c] + pair.m[c] * b.component(d)[c];
        }
    }
    Ok(grid.lp_norm_vec(&defect, 1.0) / (1.0 + grid.lp_norm_vec(&pair.w, 1.0)))
}

/// One stage at fixed mollification: minimize, freeze the coupling, solve the
/// two equations, and close the fixed point with linearized refreshes when the
/// minimizing density and the Fokker-Planck density disagree.
pub fn solve_regularized(
    grid: &Grid,
    h: &Hamiltonian,
    coupling: &Coupling,
    mol: &Mollifier,
    scfg: &SolveConfig,
    mcfg: &MinimizerConfig,
    w0: &VectorField,
) -> Result<StageSolution> {
    let l = h.conjugate()?;
    let mut report = minimize_local(grid, &l, coupling, mol, mcfg, w0)?;
    let hjb_opts = HjbOptions {
        mode: scfg.mode,
        ..Default::default()
    };

    let mut refreshes = 0;
    let mut warm: Option<ErgodicSolution> = None;
    loop {
        let f_frozen = mollified_coupling(coupling, mol, grid, &report.pair.m)?;
        let sol = solve_ergodic_with(grid, h, &f_frozen, &hjb_opts, warm.as_ref())?;
        let b = drift_from_solution(grid, h, &sol.u)?;
        let mass_row = report
            .pair
            .m
            .as_slice()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i);
        let fp = solve_stationary_with(grid, &b, scfg.mode, mass_row)?;
        let mismatch = l1_distance(grid, &fp.m, &report.pair.m);
        let dual = duality_residual(grid, h, &sol.u, &report.pair)?;
        warm = Some(sol.clone());

        if (mismatch <= scfg.tol_duality && dual <= scfg.tol_duality)
            || refreshes >= scfg.refresh_max
        {
            if dual > scfg.tol_duality {
                return Err(Error::DualityFailed {
                    residual: dual,
                    tol: scfg.tol_duality,
                });
            }
            let record = EpsRecord {
                epsilon: mol.epsilon,
                sup_m: report.pair.m.max(),
                lambda: sol.lambda,
                energy_total: report.energy.total,
                lq_norm_q: report.energy.lq_norm_q,
                duality_residual: dual,
                density_mismatch: mismatch,
                minimize_iterations: report.iterations,
                refreshes,
            };
            return Ok(StageSolution {
                u: sol.u,
                lambda: sol.lambda,
                pair: report.pair.clone(),
                energy: report.energy.clone(),
                duality_residual: dual,
                density_mismatch: mismatch,
                interior_certified: report.interior_certified,
                record,
            });
        }
        // one linearized re-minimization with the frozen coupling
        let lin = minimize_linearized(grid, &l, &f_frozen, mcfg, &report.pair.w)?;
        let energy = energy_regularized(grid, &lin.pair, &l, coupling, mol)?;
        report = MinimizeReport { energy, ..lin };
        refreshes += 1;
    }
}

fn feasible_start(
    grid: &Grid,
    mcfg: &MinimizerConfig,
    q_exp: f64,
    w0: &VectorField,
) -> Result<VectorField> {
    let mut scale = 1.0;
    for _ in 0..60 {
        let w = w0.scaled(scale);
        let m = reduced_density(grid, &w)?;
        let lq = grid.lq_power(&m, q_exp);
        if m.min() >= mcfg.m_floor && lq <= mcfg.alpha {
            return Ok(w);
        }
        scale *= 0.5;
    }
    Ok(VectorField::zeros(grid))
}

fn default_starts(
    grid: &Grid,
    scfg: &SolveConfig,
    mcfg: &MinimizerConfig,
    q_exp: f64,
) -> Result<Vec<VectorField>> {
    use rand::{Rng, SeedableRng};
    let mut starts = vec![VectorField::zeros(grid)];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scfg.seed);
    for _ in 1..scfg.multistarts.max(1) {
        let field = crate::energy::random_smooth_field(grid, &mut rng, 2);
        let amp = scfg.start_amplitude * rng.random_range(0.5..1.5);
        let w0 = grid.gradient(&field)?.scaled(amp);
        starts.push(feasible_start(grid, mcfg, q_exp, &w0)?);
    }
    Ok(starts)
}

struct LadderRun {
    stage: StageSolution,
    history: Vec<EpsRecord>,
}

fn run_ladder(
    grid: &Grid,
    h: &Hamiltonian,
    coupling: &Coupling,
    scfg: &SolveConfig,
    mcfg: &MinimizerConfig,
    w0: &VectorField,
) -> Result<LadderRun> {
    let mut history = Vec::new();
    let mut warm = w0.clone();
    let mut last: Option<StageSolution> = None;
    let mut ladder: Vec<Mollifier> = scfg
        .epsilons
        .iter()
        .map(|&e| Mollifier::new(e))
        .collect::<Result<_>>()?;
    if scfg.final_unmollified {
        ladder.push(Mollifier::identity());
    }
    for mol in &ladder {
        let stage = solve_regularized(grid, h, coupling, mol, scfg, mcfg, &warm)?;
        warm = stage.pair.w.clone();
        history.push(stage.record.clone());
        last = Some(stage);
    }
    // blow-up guard on the continuation history
    let sups: Vec<f64> = history.iter().map(|r| r.sup_m).collect();
    if sups.len() >= 2 {
        let monotone = sups.windows(2).all(|p| p[1] > p[0]);
        if monotone && sups[sups.len() - 1] > 10.0 * sups[0] {
            return Err(Error::ContinuationDiverged {
                first: sups[0],
                last: sups[sups.len() - 1],
            });
        }
    }
    Ok(LadderRun {
        stage: last.expect("ladder is nonempty"),
        history,
    })
}

/// Full solve: continuation down the mollification ladder from every start,
/// keeping the run with the lowest final energy, then a residual check of the
/// unregularized system.
pub fn solve(
    grid: &Grid,
    h: &Hamiltonian,
    coupling: &Coupling,
    scfg: &SolveConfig,
    mcfg: &MinimizerConfig,
    ledger: Option<&ConstantsLedger>,
) -> Result<MfgSolution> {
    scfg.validate()?;
    let n_model = scfg.model_dim.unwrap_or(grid.dim() as u32);
    let regime = match scfg.regime_override {
        Some(r) => r,
        None => classify_regime(h.gamma, n_model, coupling.q_exp)?,
    };
    if let Some(ledger) = ledger {
        if coupling.sign == crate::model::CouplingSign::Aggregative
            && coupling.c_f > ledger.cf_threshold
        {
            log::warn!(
                "coupling strength {} exceeds the {} threshold {}",
                coupling.c_f,
                ledger.regime,
                ledger.cf_threshold
            );
        }
    }

    let starts = default_starts(grid, scfg, mcfg, coupling.q_exp)?;
    let mut best: Option<LadderRun> = None;
    let mut energies = Vec::new();
    for w0 in &starts {
        let run = run_ladder(grid, h, coupling, scfg, mcfg, w0)?;
        energies.push(run.stage.energy.total);
        let better = match &best {
            Some(b) => run.stage.energy.total < b.stage.energy.total,
            None => true,
        };
        if better {
            best = Some(run);
        }
    }
    energies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let run = best.expect("at least one start");
    let stage = run.stage;

    // residuals of the local-coupling system at the returned triple
    let l = h.conjugate()?;
    let f_local = ScalarField::from_values(
        (0..grid.cells())
            .map(|c| coupling.value(c, stage.pair.m[c].max(0.0)))
            .collect::<Result<Vec<_>>>()?,
    );
    let r_hjb = hjb_residual(grid, h, &f_local, &stage.u, stage.lambda, scfg.mode)?;
    let r_fp = fp_constraint_residual(grid, &stage.pair)?;
    let mass_defect = (grid.integrate(&stage.pair.m) - 1.0).abs();
    let mean_defect = grid.integrate(&stage.u).abs();
    let system_residual = grid
        .linf_norm(&r_hjb)
        .max(r_fp)
        .max(mass_defect)
        .max(mean_defect);
    let final_energy = energy(grid, &stage.pair, &l, coupling)?;

    Ok(MfgSolution {
        u: stage.u,
        lambda: stage.lambda,
        m: stage.pair.m,
        w: stage.pair.w,
        duality_residual: stage.duality_residual,
        system_residual,
        energy: final_energy,
        regime,
        history: run.history,
        interior_certified: stage.interior_certified,
        multistart_energies: energies,
    })
}

/// Residual of the discrete system at an arbitrary triple `(u, lambda, m)`
/// with flux `w = -m grad H(grad u)`; the trivial triple `(0, f(1), 1)` is an
/// exact fixed point.
pub fn system_residual_at(
    grid: &Grid,
    h: &Hamiltonian,
    coupling: &Coupling,
    u: &ScalarField,
    lambda: f64,
    m: &ScalarField,
    mode: DiffMode,
) -> Result<f64> {
    let f_local = ScalarField::from_values(
        (0..grid.cells())
            .map(|c| coupling.value(c, m[c].max(0.0)))
            .collect::<Result<Vec<_>>>()?,
    );
    let r_hjb = hjb_residual(grid, h, &f_local, u, lambda, mode)?;
    let b = drift_from_solution(grid, h, u)?;
    let mut w = VectorField::zeros(grid);
    for d in 0..grid.dim() {
        for c in 0..grid.cells() {
            w.component_mut(d)[c] = -m[c] * b.component(d)[c];
        }
    }
    let r_fp = fp_constraint_residual(grid, &FlowPair::new(m.clone(), w))?;
    Ok(grid.linf_norm(&r_hjb).max(r_fp))
}

/// Options for the constrained eigen-minimization used as the quadratic-case
/// oracle.
#[derive(Clone, Debug)]
pub struct HopfColeOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for HopfColeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 50_000,
            starts: 4,
            seed: 0,
        }
    }
}

/// Quadratic-case cross-solver: minimizes `int |grad phi|^2 + F(x, phi^2)`
/// over the sphere `int phi^2 = 1` by projected gradient descent and returns
/// `(m, lambda) = (phi^2, multiplier)`.
///
/// This is the Hopf-Cole reduction of the system for `H(p) = |p|^2`
/// (`coef = gamma = 2` in the power family), entirely independent of the
/// variational flux machinery.
pub fn hopf_cole_solve(
    grid: &Grid,
    coupling: &Coupling,
    opts: &HopfColeOptions,
) -> Result<(ScalarField, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<ScalarField> = vec![ScalarField::constant(grid, 1.0)];
    for k in 1..opts.starts.max(1) {
        let mode = ScalarField::from_fn(grid, |x| {
            1.0 + 0.25
                * (std::f64::consts::PI * k as f64 * x[0] / grid.length(0)).cos()
                * if grid.dim() == 2 {
                    (std::f64::consts::PI * x[1] / grid.length(1)).cos() + 1.0
                } else {
                    1.0
                }
                + 0.05 * rng.random_range(-1.0..1.0)
        });
        starts.push(mode);
    }

    let objective = |phi: &ScalarField| -> Result<f64> {
        let grad = grid.gradient(phi)?;
        let mut acc = grid.inner_vec(&grad, &grad);
        let vol = grid.cell_volume();
        for c in 0..grid.cells() {
            acc += vol * coupling.potential(c, phi[c] * phi[c]);
        }
        Ok(acc)
    };

    let mut best: Option<(f64, ScalarField, f64, f64)> = None;
    for phi0 in starts {
        let norm = grid.inner(&phi0, &phi0).sqrt();
        let mut phi = ScalarField::from_values(
            phi0.as_slice().iter().map(|v| v / norm).collect(),
        );
        let mut value = objective(&phi)?;
        let mut step = 0.1;
        let mut prev: Option<(ScalarField, ScalarField)> = None;
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iters {
            let lap = grid.laplacian_neumann(&phi)?;
            let mut grad = ScalarField::zeros(grid.cells());
            for c in 0..grid.cells() {
                let f = coupling.value(c, (phi[c] * phi[c]).max(0.0))?;
                grad[c] = -2.0 * lap[c] + 2.0 * f * phi[c];
            }
            let lambda = 0.5 * grid.inner(&grad, &phi);
            let mut r = ScalarField::zeros(grid.cells());
            for c in 0..grid.cells() {
                r[c] = grad[c] - 2.0 * lambda * phi[c];
            }
            residual = 0.5 * grid.linf_norm(&r);
            if residual <= opts.tol {
                break;
            }
            if let Some((pphi, pr)) = &prev {
                let dphi = phi.add_scaled(-1.0, pphi);
                let dr = r.add_scaled(-1.0, pr);
                let num = grid.inner(&dphi, &dphi);
                let den = grid.inner(&dphi, &dr);
                if den > 0.0 && num > 0.0 {
                    step = (num / den).clamp(1e-6, 1e3);
                }
            }
            let mut t = step;
            let rnorm2 = grid.inner(&r, &r);
            let mut accepted = false;
            for _ in 0..60 {
                let cand = phi.add_scaled(-t, &r);
                let nrm = grid.inner(&cand, &cand).sqrt();
                let cand = ScalarField::from_values(
                    cand.as_slice().iter().map(|v| v / nrm).collect(),
                );
                let v = objective(&cand)?;
                if v <= value - 1e-4 * t * rnorm2 {
                    prev = Some((phi.clone(), r.clone()));
                    phi = cand;
                    value = v;
                    accepted = true;
                    break;
                }
                t *= 0.5;
                if t < 1e-16 {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
        if residual > opts.tol {
            continue;
        }
        let lap = grid.laplacian_neumann(&phi)?;
        let mut lambda = 0.0;
        let vol = grid.cell_volume();
        for c in 0..grid.cells() {
            let f = coupling.value(c, (phi[c] * phi[c]).max(0.0))?;
            lambda += vol * (-lap[c] * phi[c] + f * phi[c] * phi[c]);
        }
        let better = match &best {
            Some((v, _, _, _)) => value < *v,
            None => true,
        };
        if better {
            best = Some((value, phi, lambda, residual));
        }
    }
    match best {
        Some((_, phi, lambda, _)) => {
            let m = ScalarField::from_values(
                phi.as_slice().iter().map(|v| v * v).collect(),
            );
            Ok((m, lambda))
        }
        None => Err(Error::NonConvergence(
            "no projected-gradient start reached the residual tolerance".into(),
        )),
    }
}

/// One row of the multiplicity probe.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub eps: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub below_trivial: bool,
}

/// Energies of the competitor family `(1 + eps phi, grad(1 + eps phi))`
/// against the trivial level; finds the multiplicity window when the kinetic
/// growth loses to the aggregative quadratic gain.
pub fn multiplicity_probe(
    grid: &Grid,
    l: &Lagrangian,
    coupling: &Coupling,
    phi: &ScalarField,
    eps_list: &[f64],
) -> Result<Vec<ProbeRow>> {
    let mean = grid.integrate(phi);
    if mean.abs() > 1e-8 {
        return Err(Error::BadParameter(format!(
            "phi must have zero mean, integral is {mean:e}"
        )));
    }
    let trivial = coupling.trivial_energy(grid);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let m = ScalarField::from_values(
            phi.as_slice().iter().map(|v| 1.0 + eps * v).collect(),
        );
        if m.min() < M_FLOOR {
            return Err(Error::InfeasibleEps {
                eps,
                reason: format!("density floor violated, min m = {:e}", m.min()),
            });
        }
        let w = grid.gradient(&m)?;
        let report = energy(grid, &FlowPair::new(m, w), l, coupling)?;
        rows.push(ProbeRow {
            eps,
            kinetic: report.kinetic,
            potential: report.potential,
            total: report.total,
            below_trivial: report.total < trivial,
        });
    }
    Ok(rows)
}

/// One row of the concentration-scaling sweep.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub lambda: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub lq_norm_q: f64,
    /// Magnitude of the power part of the coupling term.
    pub coupling_term: f64,
    pub in_ball: bool,
}

/// Scaling sweep summary with log-log slopes of the two competing terms.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingSweep {
    pub rows: Vec<ScalingRow>,
    pub kinetic_slope: f64,
    pub coupling_slope: f64,
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Energies of the concentrating family `m_s(x) = s^N m_0(s (x - x_0))` with
/// `w = grad m_s`, over the scaling list. A uniform background of `1e-6` is
/// mixed in so the discrete pair stays off the infinite-energy sentinel at
/// the support edge.
pub fn unboundedness_sweep(
    grid: &Grid,
    l: &Lagrangian,
    coupling: &Coupling,
    scalings: &[f64],
    alpha: Option<f64>,
) -> Result<ScalingSweep> {
    let n_dim = grid.dim();
    let center: Vec<f64> = (0..2).map(|d| 0.5 * grid.length(d.min(n_dim - 1))).collect();
    let r0 = 0.3 * (0..n_dim).map(|d| grid.length(d)).fold(f64::INFINITY, f64::min);
    let wall = (0..n_dim)
        .map(|d| 0.5 * grid.length(d) - 2.0 * grid.spacing(d))
        .fold(f64::INFINITY, f64::min);
    let kappa = 1e-6;
    let alpha = alpha.unwrap_or(f64::INFINITY);

    let mut rows = Vec::with_capacity(scalings.len());
    for &s in scalings {
        if !(s > 0.0) {
            return Err(Error::BadParameter(format!("scaling must be positive, got {s}")));
        }
        if r0 / s > wall {
            return Err(Error::BumpEscapesDomain { scale: s });
        }
        let bump = ScalarField::from_fn(grid, |x| {
            let mut t2 = 0.0;
            for d in 0..n_dim {
                let z = s * (x[d] - center[d]) / r0;
                t2 += z * z;
            }
            if t2 < 1.0 {
                (1.0 - 1.0 / (1.0 - t2)).exp()
            } else {
                0.0
            }
        });
        let mass = grid.integrate(&bump);
        if mass <= 0.0 {
            return Err(Error::BumpEscapesDomain { scale: s });
        }
        let m = ScalarField::from_values(
            bump.as_slice()
                .iter()
                .map(|v| (1.0 - kappa) * v / mass + kappa)
                .collect(),
        );
        let w = grid.gradient(&m)?;
        let report = energy(grid, &FlowPair::new(m, w), l, coupling)?;
        let coupling_term = coupling.c_f / coupling.q_exp * report.lq_norm_q;
        rows.push(ScalingRow {
            lambda: s,
            kinetic: report.kinetic,
            potential: report.potential,
            total: report.total,
            lq_norm_q: report.lq_norm_q,
            coupling_term,
            in_ball: report.lq_norm_q <= alpha,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda.ln()).collect();
    let kin: Vec<f64> = rows.iter().map(|r| r.kinetic.ln()).collect();
    let cpl: Vec<f64> = rows.iter().map(|r| r.coupling_term.max(1e-300).ln()).collect();
    Ok(ScalingSweep {
        kinetic_slope: fit_slope(&xs, &kin),
        coupling_slope: fit_slope(&xs, &cpl),
        rows,
    })
}

/// Blow-up monitor over a continuation history.
#[derive(Clone, Debug, Serialize)]
pub struct MonitorReport {
    pub sup_sup_m: f64,
    /// Exponent of the rescaled mass: zero exactly at the Sobolev-critical
    /// coupling growth.
    pub exponent: f64,
    pub sequence: Vec<f64>,
    pub bounded: bool,
}

/// Rescaled-mass sequence `(sup m)^(-q + beta N) ||m||_q^q` with
/// `beta = (q-1)(gamma-1)/gamma`; boundedness of this quantity is the
/// observable form of the a-priori sup bound.
pub fn blowup_monitor(history: &[EpsRecord], gamma: f64, q: f64, n: u32) -> MonitorReport {
    let beta = (q - 1.0) * (gamma - 1.0) / gamma;
    let exponent = -q + beta * n as f64;
    let sequence: Vec<f64> = history
        .iter()
        .map(|r| r.sup_m.powf(exponent) * r.lq_norm_q)
        .collect();
    let sup_sup_m = history.iter().map(|r| r.sup_m).fold(0.0f64, f64::max);
    let first = sequence.first().copied().unwrap_or(0.0);
    let bounded = sequence
        .iter()
        .all(|v| v.is_finite() && *v <= 10.0 * first.max(1.0));
    MonitorReport {
        sup_sup_m,
        exponent,
        sequence,
        bounded,
    }
}

/// One smallness condition of the critical-case gate.
#[derive(Clone, Debug, Serialize)]
pub struct GateCondition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluation of every critical-case smallness condition.
#[derive(Clone, Debug, Serialize)]
pub struct GateReport {
    pub pass: bool,
    pub conditions: Vec<GateCondition>,
    /// Largest admissible source smallness level.
    pub delta: f64,
    /// Barrier roots at `delta` when they exist.
    pub barrier: Option<(f64, f64)>,
    /// Name of the first violated condition.
    pub binding: Option<String>,
}

/// Evaluates the conjunction of smallness conditions gating the
/// Sobolev-critical pipeline: the coupling threshold, the mollified-source
/// bound against the barrier level, and the Hamiltonian offset bound.
///
/// `barrier_c` and `barrier_c_prime` are the scalar barrier constants
/// (measured surrogates; both 1 by default).
pub fn critical_gate(
    ledger: &ConstantsLedger,
    h: &Hamiltonian,
    coupling: &Coupling,
    barrier_c: f64,
    barrier_c_prime: f64,
) -> GateReport {
    let mut conditions = Vec::new();

    let regime_ok = ledger.regime == Regime::SobolevCritical;
    conditions.push(GateCondition {
        name: "regime_is_sobolev_critical".into(),
        lhs: ledger.q,
        rhs: ledger.q_c,
        satisfied: regime_ok,
    });

    let (alpha_hat, cf_bound) = (ledger.alpha_hat, {
        let q = ledger.q;
        q * ledger.c_l / (ledger.c_q * (ledger.alpha_hat + 1.0))
    });
    conditions.push(GateCondition {
        name: "coupling_below_critical_threshold".into(),
        lhs: coupling.c_f,
        rhs: cf_bound,
        satisfied: coupling.c_f < cf_bound,
    });

    // gradient-norm target that the barrier level must not exceed
    let target = 1.0 / (4.0 * ledger.c_e * ledger.c_s * h.c_h).powf(1.0 / (h.gamma - 1.0));
    let y_star = (1.0 / (barrier_c * h.gamma)).powf(1.0 / (h.gamma - 1.0));
    let y_cap = target.min(y_star);
    let delta = ((y_cap - barrier_c * y_cap.powf(h.gamma)) / barrier_c_prime).max(0.0);
    let q_conj = ledger.q / (ledger.q - 1.0);
    let source_level = coupling.c_f * alpha_hat.powf(1.0 / q_conj) + coupling.k_f;
    conditions.push(GateCondition {
        name: "mollified_source_smallness".into(),
        lhs: source_level,
        rhs: delta,
        satisfied: source_level <= delta,
    });

    conditions.push(GateCondition {
        name: "hamiltonian_offset_bound".into(),
        lhs: h.k_h,
        rhs: ledger.kh_threshold,
        satisfied: h.k_h <= ledger.kh_threshold,
    });

    let barrier = if delta > 0.0 {
        barrier_levels(barrier_c, barrier_c_prime, h.gamma, delta).ok()
    } else {
        None
    };
    let binding = conditions.iter().find(|c| !c.satisfied).map(|c| c.name.clone());
    GateReport {
        pass: binding.is_none(),
        conditions,
        delta,
        barrier,
        binding,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CouplingSign;

    fn quick_cfg() -> (SolveConfig, MinimizerConfig) {
        (
            SolveConfig {
                epsilons: vec![0.1, 0.05],
                ..Default::default()
            },
            MinimizerConfig::default(),
        )
    }

    #[test]
    fn trivial_triple_is_exact_fixed_point() {
        let g = Grid::line(64).unwrap();
        for (gamma, q, cf, kf, sign) in [
            (2.0, 2.0, 1.0, 0.0, CouplingSign::Aggregative),
            (1.5, 3.0, 0.7, 0.4, CouplingSign::Repulsive),
            (3.0, 2.5, 0.2, 0.1, CouplingSign::Aggregative),
        ] {
            let h = Hamiltonian::model(gamma).unwrap();
            let c = Coupling::new(sign, cf, kf, q).unwrap();
            let u = ScalarField::zeros(g.cells());
            let m = ScalarField::constant(&g, 1.0);
            let lambda = c.value(0, 1.0).unwrap();
            for mode in [DiffMode::Centered, DiffMode::Upwind] {
                let r = system_residual_at(&g, &h, &c, &u, lambda, &m, mode).unwrap();
                assert!(r <= 1e-12, "gamma {gamma} q {q}: residual {r}");
            }
        }
    }

    #[test]
    fn repulsive_solve_returns_trivial_solution() {
        let g = Grid::line(48).unwrap();
        let h = Hamiltonian::model(2.0).unwrap();
        let c = Coupling::new(CouplingSign::Repulsive, 0.8, 0.0, 2.0).unwrap();
        let (scfg, mcfg) = quick_cfg();
        let sol = solve(&g, &h, &c, &scfg, &mcfg, None).unwrap();
        assert!(sol.duality_residual <= scfg.tol_duality);
        assert!(sol.system_residual <= 1e-6, "system residual {}", sol.system_residual);
        assert!((sol.lambda - c.value(0, 1.0).unwrap()).abs() < 1e-6);
        for cell in 0..g.cells() {
            assert!((sol.m[cell] - 1.0).abs() < 1e-5);
        }
        assert!((sol.energy.total - c.trivial_energy(&g)).abs() < 1e-8);
        assert_eq!(sol.regime, Regime::Subcritical);
    }

    #[test]
    fn no_coupling_gives_zero_lambda() {
        let g = Grid::line(32).unwrap();
        let h = Hamiltonian::model(2.0).unwrap();
        let c = Coupling::new(CouplingSign::Repulsive, 0.0, 0.0, 2.0).unwrap();
        let (scfg, mcfg) = quick_cfg();
        let sol = solve(&g, &h, &c, &scfg, &mcfg, None).unwrap();
        assert!(sol.lambda.abs() < 1e-10);
        assert!(sol.system_residual < 1e-9);
    }

    #[test]
    fn lambda_history_is_cauchy_down_the_ladder() {
        let g = Grid::line(48).unwrap();
        let h = Hamiltonian::model(2.0).unwrap();
        let c = Coupling::new(CouplingSign::Aggregative, 0.4, 0.0, 2.0).unwrap();
        let scfg = SolveConfig {
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            multistarts: 2,
            ..Default::default()
        };
        let sol = solve(&g, &h, &c, &scfg, &MinimizerConfig::default(), None).unwrap();
        let lambdas: Vec<f64> = sol.history.iter().map(|r| r.lambda).collect();
        let diffs: Vec<f64> = lambdas.windows(2).map(|p| (p[1] - p[0]).abs()).collect();
        for pair in diffs.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "lambda differences grew: {diffs:?}");
        }
    }

    #[test]
    fn hopf_cole_without_coupling_is_uniform() {
        let g = Grid::line(32).unwrap();
        let c = Coupling::new(CouplingSign::Repulsive, 0.0, 0.0, 2.0).unwrap();
        let (m, lambda) = hopf_cole_solve(&g, &c, &HopfColeOptions::default()).unwrap();
        assert!(lambda.abs() < 1e-8);
        for cell in 0..g.cells() {
            assert!((m[cell] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hopf_cole_repulsive_is_uniform() {
        let g = Grid::line(32).unwrap();
        let c = Coupling::new(CouplingSign::Repulsive, 2.0, 0.0, 2.0).unwrap();
        let (m, lambda) = hopf_cole_solve(&g, &c, &HopfColeOptions::default()).unwrap();
        for cell in 0..g.cells() {
            assert!((m[cell] - 1.0).abs() < 1e-6);
        }
        assert!((lambda - 2.0).abs() < 1e-6);
    }

    #[test]
    fn probe_at_zero_eps_is_trivial_energy() {
        let g = Grid::line(64).unwrap();
        let l = Hamiltonian::model(1.5).unwrap().conjugate().unwrap();
        let c = Coupling::new(CouplingSign::Aggregative, 1.0, 0.0, 2.0).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
        let rows = multiplicity_probe(&g, &l, &c, &phi, &[0.0, 0.004]).unwrap();
        assert!((rows[0].total - c.trivial_energy(&g)).abs() < 1e-12);
        assert!(!rows[0].below_trivial);
        // infeasible eps errors out
        assert!(matches!(
            multiplicity_probe(&g, &l, &c, &phi, &[1.5]),
            Err(Error::InfeasibleEps { .. })
        ));
        // nonzero-mean phi is rejected
        let bad = ScalarField::constant(&g, 1.0);
        assert!(multiplicity_probe(&g, &l, &c, &bad, &[0.1]).is_err());
    }

    #[test]
    fn monitor_of_trivial_history_is_constant_one() {
        let rec = |eps: f64| EpsRecord {
            epsilon: eps,
            sup_m: 1.0,
            lambda: 0.0,
            energy_total: 0.0,
            lq_norm_q: 1.0,
            duality_residual: 0.0,
            density_mismatch: 0.0,
            minimize_iterations: 0,
            refreshes: 0,
        };
        let hist = vec![rec(0.2), rec(0.1), rec(0.05)];
        let rep = blowup_monitor(&hist, 2.0, 2.0, 1);
        assert!(rep.bounded);
        for v in &rep.sequence {
            assert!((v - 1.0).abs() < 1e-14);
        }
        // exponent vanishes exactly at the Sobolev-critical growth
        let rep = blowup_monitor(&hist, 2.0, 2.0, 4);
        assert!(rep.exponent.abs() < 1e-14);
    }

    #[test]
    fn critical_gate_trivial_and_binding() {
        let h = Hamiltonian::model(2.0).unwrap();
        let c0 = Coupling::new(CouplingSign::Aggregative, 0.0, 0.0, 2.0).unwrap();
        let ledger = ConstantsLedger::assemble(2.0, 2.0, 4, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        let gate = critical_gate(&ledger, &h, &c0, 1.0, 1.0);
        assert!(gate.pass, "{gate:?}");

        let h_bad = Hamiltonian::model(2.0)
            .unwrap()
            .with_offset(ledger.kh_threshold * 1.01)
            .unwrap();
        let gate = critical_gate(&ledger, &h_bad, &c0, 1.0, 1.0);
        assert!(!gate.pass);
        assert_eq!(gate.binding.as_deref(), Some("hamiltonian_offset_bound"));
    }
}
