//! Constrained minimization of the (regularized) energy over the discrete
//! constraint set intersected with the `L^q` ball.
//!
//! The linear constraint is eliminated: for a flux `w` the induced density is
//! `m(w) = 1 + GreenOp(div w)`, which satisfies the constraint identity and
//! unit mass by construction. What remains is descent in `w` alone, with the
//! analytic gradient obtained by the chain rule through the Green operator
//! (one extra Poisson solve per gradient). Steps that would drop the density
//! below the floor, or leave the ball in reject mode, are refused by the
//! backtracking line search, so every iterate is feasible and the energy
//! decreases monotonically.

use serde::Serialize;

use crate::energy::{EnergyReport, FlowPair};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::model::{mollified_coupling, Coupling, Lagrangian, Mollifier};

/// How the `L^q` ball constraint is enforced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BallMode {
    /// Infeasible steps are rejected by the line search (default).
    Reject,
    /// Quadratic penalty outside the ball; exploration only.
    Penalty,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizerConfig {
    /// Ball radius (`||m||_q^q <= alpha`); `inf` disables the ball.
    #[serde(serialize_with = "crate::ser::ext_real")]
    pub alpha: f64,
    pub m_floor: f64,
    pub step0: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub ball_mode: BallMode,
    pub seed: u64,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            alpha: f64::INFINITY,
            m_floor: 1e-10,
            step0: 1.0,
            max_iters: 5000,
            grad_tol: 1e-7,
            ball_mode: BallMode::Reject,
            seed: 0,
        }
    }
}

impl MinimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0) {
            return Err(Error::BadParameter(format!(
                "ball radius must be >= 1, got {}",
                self.alpha
            )));
        }
        if !(self.m_floor > 0.0) || !(self.grad_tol > 0.0) || !(self.step0 > 0.0) {
            return Err(Error::BadParameter(
                "floors, tolerances and steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one descent run.
#[derive(Clone, Debug)]
pub struct MinimizeReport {
    pub pair: FlowPair,
    pub energy: EnergyReport,
    pub ball_margin: f64,
    pub grad_norm_final: f64,
    pub iterations: usize,
    pub interior_certified: bool,
    pub converged: bool,
}

/// Density induced by a flux through the Green operator:
/// `m = 1 + GreenOp(div w)`; unit mass and the constraint identity hold by
/// construction.
pub fn reduced_density(grid: &Grid, w: &VectorField) -> Result<ScalarField> {
    let rhs = grid.divergence(w)?;
    let dm = grid.poisson_neumann_zero_mean(&rhs)?;
    Ok(ScalarField::from_values(
        dm.as_slice().iter().map(|v| 1.0 + v).collect(),
    ))
}

/// Potential part of the reduced objective.
pub(crate) enum PotentialTerm<'a> {
    Mollified {
        coupling: &'a Coupling,
        mol: &'a Mollifier,
    },
    Frozen(&'a ScalarField),
}

impl PotentialTerm<'_> {
    fn value(&self, grid: &Grid, m: &ScalarField) -> Result<f64> {
        match self {
            PotentialTerm::Mollified { coupling, mol } => {
                let smoothed = mol.convolve(grid, m)?;
                let vol = grid.cell_volume();
                let mut acc = 0.0;
                for c in 0..grid.cells() {
                    acc += vol * coupling.potential(c, smoothed[c].max(0.0));
                }
                Ok(acc)
            }
            PotentialTerm::Frozen(f) => Ok(grid.inner(f, m)),
        }
    }

    /// Functional derivative with respect to the density.
    fn density_gradient(&self, grid: &Grid, m: &ScalarField) -> Result<ScalarField> {
        match self {
            PotentialTerm::Mollified { coupling, mol } => {
                mollified_coupling(coupling, mol, grid, m)
            }
            PotentialTerm::Frozen(f) => Ok((*f).clone()),
        }
    }

    fn q_exp(&self) -> Option<f64> {
        match self {
            PotentialTerm::Mollified { coupling, .. } => Some(coupling.q_exp),
            PotentialTerm::Frozen(_) => None,
        }
    }
}

struct Eval {
    m: ScalarField,
    objective: f64,
    kinetic: f64,
    potential: f64,
    lq: Option<f64>,
}

fn evaluate(
    grid: &Grid,
    l: &Lagrangian,
    pot: &PotentialTerm,
    cfg: &MinimizerConfig,
    w: &VectorField,
) -> Result<Eval> {
    let m = reduced_density(grid, w)?;
    let vol = grid.cell_volume();
    let mut kinetic = 0.0f64;
    let feasible = m.min() >= cfg.m_floor;
    if feasible {
        for c in 0..grid.cells() {
            let wn = (0..grid.dim())
                .map(|d| {
                    let x = w.component(d)[c];
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            kinetic += vol * m[c] * l.coef * (wn / m[c]).powf(l.gamma_conj);
        }
    } else {
        kinetic = f64::INFINITY;
    }
    let lq = pot.q_exp().map(|q| grid.lq_power(&m, q));
    let mut objective;
    let potential;
    if kinetic.is_finite() {
        potential = pot.value(grid, &m)?;
        objective = kinetic + potential;
        match (cfg.ball_mode, lq) {
            (BallMode::Reject, Some(lq)) => {
                if lq > cfg.alpha {
                    objective = f64::INFINITY;
                }
            }
            (BallMode::Penalty, Some(lq)) => {
                let excess = (lq - cfg.alpha).max(0.0);
                objective += 1e3 * excess * excess;
            }
            _ => {}
        }
    } else {
        potential = f64::NAN;
        objective = f64::INFINITY;
    }
    Ok(Eval {
        m,
        objective,
        kinetic,
        potential,
        lq,
    })
}

/// Analytic gradient of the reduced objective as a cell vector field
/// (functional derivative; multiply by the cell volume for the entrywise
/// gradient).
fn gradient(
    grid: &Grid,
    l: &Lagrangian,
    pot: &PotentialTerm,
    cfg: &MinimizerConfig,
    w: &VectorField,
    ev: &Eval,
) -> Result<VectorField> {
    let m = &ev.m;
    let mut grad_l = VectorField::zeros(grid);
    let mut xi = ScalarField::zeros(grid.cells());
    for c in 0..grid.cells() {
        let q: Vec<f64> = (0..grid.dim()).map(|d| -w.component(d)[c] / m[c]).collect();
        let lval = l.value(&q);
        let lgrad = l.grad(&q);
        for d in 0..grid.dim() {
            grad_l.component_mut(d)[c] = lgrad[d];
        }
        let qdot: f64 = q.iter().zip(&lgrad).map(|(a, b)| a * b).sum();
        xi[c] = lval - qdot;
    }
    let fgrad = pot.density_gradient(grid, m)?;
    for c in 0..grid.cells() {
        xi[c] += fgrad[c];
    }
    if cfg.ball_mode == BallMode::Penalty {
        if let (Some(lq), Some(qe)) = (ev.lq, pot.q_exp()) {
            let excess = (lq - cfg.alpha).max(0.0);
            if excess > 0.0 {
                for c in 0..grid.cells() {
                    xi[c] += 2e3 * excess * qe * m[c].powf(qe - 1.0);
                }
            }
        }
    }
    let mean = grid.mean(&xi);
    for v in xi.as_mut_slice() {
        *v -= mean;
    }
    let a = grid.poisson_neumann_zero_mean(&xi)?;
    let grad_a = grid.gradient(&a)?;
    let mut g = VectorField::zeros(grid);
    for d in 0..grid.dim() {
        for c in 0..grid.cells() {
            g.component_mut(d)[c] = -(grad_l.component(d)[c] + grad_a.component(d)[c]);
        }
    }
    Ok(g)
}

fn field_norm(grid: &Grid, g: &VectorField) -> f64 {
    grid.inner_vec(g, g).sqrt()
}

fn descend(
    grid: &Grid,
    l: &Lagrangian,
    pot: &PotentialTerm,
    cfg: &MinimizerConfig,
    w0: &VectorField,
) -> Result<(VectorField, Eval, f64, usize, bool)> {
    cfg.validate()?;
    let mut w = w0.clone();
    let mut ev = evaluate(grid, l, pot, cfg, &w)?;
    if !ev.objective.is_finite() {
        return Err(Error::BadParameter(
            "starting flux is infeasible (density below floor or outside the ball)".into(),
        ));
    }
    let mut g = gradient(grid, l, pot, cfg, &w, &ev)?;
    let mut gn = field_norm(grid, &g);
    let mut step = cfg.step0;
    let mut prev_w: Option<VectorField> = None;
    let mut prev_g: Option<VectorField> = None;
    let mut iterations = 0;
    let mut converged = gn <= cfg.grad_tol;

    while !converged && iterations < cfg.max_iters {
        // Barzilai-Borwein step with Armijo safeguard
        if let (Some(pw), Some(pg)) = (&prev_w, &prev_g) {
            let dw = w.add_scaled(-1.0, pw);
            let dg = g.add_scaled(-1.0, pg);
            let num = grid.inner_vec(&dw, &dw);
            let den = grid.inner_vec(&dw, &dg);
            if den > 0.0 && num > 0.0 {
                step = (num / den).clamp(1e-8 * cfg.step0, 1e4 * cfg.step0);
            }
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..80 {
            let w_try = w.add_scaled(-t, &g);
            let ev_try = evaluate(grid, l, pot, cfg, &w_try)?;
            if ev_try.objective.is_finite()
                && ev_try.objective <= ev.objective - 1e-4 * t * gn * gn
            {
                prev_w = Some(w.clone());
                prev_g = Some(g.clone());
                w = w_try;
                ev = ev_try;
                accepted = true;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if !accepted {
            if gn <= 10.0 * cfg.grad_tol {
                // flat to rounding; accept as converged
                converged = true;
                break;
            }
            return Err(Error::LineSearchStalled { step: t });
        }
        iterations += 1;
        g = gradient(grid, l, pot, cfg, &w, &ev)?;
        gn = field_norm(grid, &g);
        if gn <= cfg.grad_tol {
            converged = true;
        }
    }
    Ok((w, ev, gn, iterations, converged))
}

fn build_report(
    cfg: &MinimizerConfig,
    w: VectorField,
    ev: Eval,
    gn: f64,
    iterations: usize,
    converged: bool,
    energy: EnergyReport,
) -> MinimizeReport {
    let ball_margin = match ev.lq {
        Some(lq) => cfg.alpha - lq,
        None => f64::INFINITY,
    };
    let interior_certified = if cfg.alpha.is_infinite() {
        true
    } else {
        ball_margin > 1e-6 * cfg.alpha
    };
    MinimizeReport {
        pair: FlowPair::new(ev.m, w),
        energy,
        ball_margin,
        grad_norm_final: gn,
        iterations,
        interior_certified,
        converged,
    }
}

/// Local minimization of the mollified energy over the reduced feasible set,
/// starting from the flux `w0`.
pub fn minimize_local(
    grid: &Grid,
    l: &Lagrangian,
    coupling: &Coupling,
    mol: &Mollifier,
    cfg: &MinimizerConfig,
    w0: &VectorField,
) -> Result<MinimizeReport> {
    let pot = PotentialTerm::Mollified { coupling, mol };
    let (w, ev, gn, iters, converged) = descend(grid, l, &pot, cfg, w0)?;
    let pair = FlowPair::new(ev.m.clone(), w.clone());
    let energy = crate::energy::energy_regularized(grid, &pair, l, coupling, mol)?;
    Ok(build_report(cfg, w, ev, gn, iters, converged, energy))
}

/// Minimization of the linearized (frozen-coupling) functional; convex, used
/// by the duality path.
pub fn minimize_linearized(
    grid: &Grid,
    l: &Lagrangian,
    f_frozen: &ScalarField,
    cfg: &MinimizerConfig,
    w0: &VectorField,
) -> Result<MinimizeReport> {
    let pot = PotentialTerm::Frozen(f_frozen);
    let (w, ev, gn, iters, converged) = descend(grid, l, &pot, cfg, w0)?;
    let pair = FlowPair::new(ev.m.clone(), w.clone());
    let energy = EnergyReport {
        kinetic: ev.kinetic,
        potential: ev.potential,
        total: ev.kinetic + ev.potential,
        e_quantity: f64::NAN,
        lq_norm_q: f64::NAN,
        fp_residual: crate::energy::fp_constraint_residual(grid, &pair)?,
        clamped_cells: 0,
    };
    Ok(build_report(cfg, w, ev, gn, iters, converged, energy))
}

/// Maximum mismatch between analytic directional derivatives of the reduced
/// objective and central finite differences over 10 deterministic random
/// directions (error relative to `max(1, |derivative|)`).
pub fn gradient_check(
    grid: &Grid,
    l: &Lagrangian,
    coupling: &Coupling,
    mol: &Mollifier,
    w: &VectorField,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let cfg = MinimizerConfig::default();
    let pot = PotentialTerm::Mollified { coupling, mol };
    let ev = evaluate(grid, l, &pot, &cfg, w)?;
    if ev.m.min() < 2.0 * cfg.m_floor {
        return Err(Error::BadParameter(
            "density too close to the floor for finite differencing".into(),
        ));
    }
    let g = gradient(grid, l, &pot, &cfg, w, &ev)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    let step = 1e-6;
    for _ in 0..10 {
        let mut dir = VectorField::zeros(grid);
        for d in 0..grid.dim() {
            for c in 0..grid.cells() {
                dir.component_mut(d)[c] = rng.random_range(-1.0..1.0);
            }
        }
        let scale = 1.0 / field_norm(grid, &dir).max(1e-300);
        let dir = dir.scaled(scale);
        let analytic = grid.inner_vec(&g, &dir);
        let plus = evaluate(grid, l, &pot, &cfg, &w.add_scaled(step, &dir))?;
        let minus = evaluate(grid, l, &pot, &cfg, &w.add_scaled(-step, &dir))?;
        let fd = (plus.objective - minus.objective) / (2.0 * step);
        let denom = 1.0f64.max(analytic.abs()).max(fd.abs());
        worst = worst.max((fd - analytic).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::fp_constraint_residual;
    use crate::model::{CouplingSign, Hamiltonian};
    use rand::{Rng, SeedableRng};

    fn lagrangian(gamma: f64) -> Lagrangian {
        Hamiltonian::model(gamma).unwrap().conjugate().unwrap()
    }

    #[test]
    fn reduced_density_identities() {
        let g = Grid::line(64).unwrap();
        // zero flux gives the uniform density
        let m = reduced_density(&g, &VectorField::zeros(&g)).unwrap();
        for c in 0..g.cells() {
            assert!((m[c] - 1.0).abs() < 1e-13);
        }
        // w = grad(s) for mean-zero s gives m = 1 + s
        let s = ScalarField::from_fn(&g, |x| 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let w = g.gradient(&s).unwrap();
        let m = reduced_density(&g, &w).unwrap();
        for c in 0..g.cells() {
            assert!((m[c] - 1.0 - s[c]).abs() < 1e-9, "cell {c}");
        }
        // mass is exactly one and the constraint residual vanishes
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w = VectorField::from_fn(&g, |_, x| {
                (rng.random_range(1.0..5.0) * x[0]).sin() * rng.random_range(0.1..1.0)
            });
            let m = reduced_density(&g, &w).unwrap();
            assert!((g.integrate(&m) - 1.0).abs() < 1e-12);
            let r = fp_constraint_residual(&g, &FlowPair::new(m, w)).unwrap();
            assert!(r <= 1e-10, "residual {r}");
        }
    }

    #[test]
    fn trivial_start_is_stationary_without_coupling() {
        let g = Grid::line(32).unwrap();
        let l = lagrangian(2.0);
        let c = Coupling::new(CouplingSign::Repulsive, 0.0, 0.0, 2.0).unwrap();
        let mol = Mollifier::identity();
        let cfg = MinimizerConfig::default();
        let rep = minimize_local(&g, &l, &c, &mol, &cfg, &VectorField::zeros(&g)).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert!(rep.energy.total.abs() < 1e-14);
    }

    #[test]
    fn gradient_check_small_at_random_interior_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for (gamma, dim_cells) in [(2.0, 64usize), (1.5, 48)] {
            let g = Grid::line(dim_cells).unwrap();
            let l = lagrangian(gamma);
            let c = Coupling::new(CouplingSign::Aggregative, 0.8, 0.2, 2.0).unwrap();
            let mol = Mollifier::new(0.08).unwrap();
            for _ in 0..3 {
                let w = VectorField::from_fn(&g, |_, x| {
                    0.3 * (rng.random_range(1.0..4.0) * x[0]).sin()
                });
                let err = gradient_check(&g, &l, &c, &mol, &w).unwrap();
                assert!(err <= 1e-5, "gamma {gamma}: gradient mismatch {err}");
            }
        }
    }

    #[test]
    fn repulsive_descent_reaches_trivial_pair() {
        let g = Grid::line(48).unwrap();
        let l = lagrangian(2.0);
        let c = Coupling::new(CouplingSign::Repulsive, 0.5, 0.0, 2.0).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        let cfg = MinimizerConfig::default();
        let trivial_energy = c.trivial_energy(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut energies = Vec::new();
        for _ in 0..5 {
            let w0 = VectorField::from_fn(&g, |_, x| {
                0.2 * (rng.random_range(1.0..4.0) * x[0]).sin() + rng.random_range(-0.05..0.05)
            });
            let rep = minimize_local(&g, &l, &c, &mol, &cfg, &w0).unwrap();
            assert!(rep.converged, "did not converge");
            let m_err: f64 = rep
                .pair
                .m
                .as_slice()
                .iter()
                .map(|v| (v - 1.0).abs())
                .sum::<f64>()
                * g.cell_volume();
            assert!(m_err < 1e-4, "L1 distance to uniform {m_err}");
            assert!((rep.energy.total - trivial_energy).abs() < 1e-8);
            energies.push(rep.energy.total);
        }
        let spread = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - energies.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-6, "energy spread across starts {spread}");
    }

    #[test]
    fn descent_is_monotone_and_feasible() {
        let g = Grid::line(32).unwrap();
        let l = lagrangian(1.5);
        let c = Coupling::new(CouplingSign::Aggregative, 1.0, 0.0, 2.0).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        let cfg = MinimizerConfig {
            max_iters: 200,
            ..Default::default()
        };
        let s = ScalarField::from_fn(&g, |x| 0.005 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let w0 = g.gradient(&s).unwrap();
        let rep = minimize_local(&g, &l, &c, &mol, &cfg, &w0).unwrap();
        assert!(rep.pair.is_feasible(&g));
        assert!(rep.energy.fp_residual <= 1e-10);
        // started near the trivial pair, the aggregative run must not end above it
        assert!(rep.energy.total <= c.trivial_energy(&g) + 1e-12);
    }

    #[test]
    fn ball_reject_mode_respects_radius() {
        let g = Grid::line(32).unwrap();
        let l = lagrangian(2.0);
        // strongly aggregative: pushes mass together, ball must contain it
        let c = Coupling::new(CouplingSign::Aggregative, 6.0, 0.0, 4.0).unwrap();
        let mol = Mollifier::new(0.05).unwrap();
        let cfg = MinimizerConfig {
            alpha: 1.4,
            max_iters: 400,
            ..Default::default()
        };
        let s = ScalarField::from_fn(&g, |x| 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let w0 = g.gradient(&s).unwrap();
        let rep = minimize_local(&g, &l, &c, &mol, &cfg, &w0).unwrap();
        let lq = g.lq_power(&rep.pair.m, 4.0);
        assert!(lq <= cfg.alpha + 1e-12, "left the ball: {lq}");
        assert!((rep.ball_margin - (cfg.alpha - lq)).abs() < 1e-12);
    }

    #[test]
    fn interior_certification_reoptimizes_consistently() {
        let g = Grid::line(32).unwrap();
        let l = lagrangian(2.0);
        let c = Coupling::new(CouplingSign::Aggregative, 0.3, 0.0, 3.5).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        let cfg = MinimizerConfig {
            alpha: 4.0,
            ..Default::default()
        };
        let s = ScalarField::from_fn(&g, |x| 0.02 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let w0 = g.gradient(&s).unwrap();
        let rep = minimize_local(&g, &l, &c, &mol, &cfg, &w0).unwrap();
        assert!(rep.interior_certified);
        let delta = 0.5;
        let cfg2 = MinimizerConfig {
            alpha: cfg.alpha - delta,
            ..cfg.clone()
        };
        let rep2 = minimize_local(&g, &l, &c, &mol, &cfg2, &w0).unwrap();
        assert!(
            (rep.energy.total - rep2.energy.total).abs() < 1e-8,
            "{} vs {}",
            rep.energy.total,
            rep2.energy.total
        );
    }

    #[test]
    fn linearized_minimizer_matches_frozen_point() {
        // freezing the coupling at the minimizer of the full problem keeps it
        // a minimizer of the linearized one
        let g = Grid::line(32).unwrap();
        let l = lagrangian(2.0);
        let c = Coupling::new(CouplingSign::Repulsive, 0.8, 0.1, 2.0).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        let cfg = MinimizerConfig::default();
        let s = ScalarField::from_fn(&g, |x| 0.05 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let w0 = g.gradient(&s).unwrap();
        let rep = minimize_local(&g, &l, &c, &mol, &cfg, &w0).unwrap();
        let f_frozen = mollified_coupling(&c, &mol, &g, &rep.pair.m).unwrap();
        let rep2 = minimize_linearized(&g, &l, &f_frozen, &cfg, &rep.pair.w).unwrap();
        let m_moved: f64 = rep2
            .pair
            .m
            .as_slice()
            .iter()
            .zip(rep.pair.m.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * g.cell_volume();
        assert!(m_moved < 1e-5, "frozen minimizer moved by {m_moved}");
    }
}
