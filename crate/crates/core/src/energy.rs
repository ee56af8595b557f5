//! The constrained energy functional, its mollified and linearized variants,
//! the flow-pair constraint set, and measured embedding constants.
//!
//! A pair `(m, w)` belongs to the discrete constraint set when `m` has unit
//! mass, is nonnegative, and satisfies `laplacian(m) = divergence(w)`; by the
//! adjointness of the grid operators this is the discrete form of the weak
//! Fokker-Planck identity quantified over all test functions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::model::{kinetic_density, Coupling, Lagrangian, Mollifier};
use crate::ser::ext_real;

/// Density floor below which the kinetic integrand is evaluated with the
/// density clamped (full zeros with nonzero flux stay infinite).
pub const M_FLOOR: f64 = 1e-10;

/// Mass tolerance for feasible pairs.
pub const MASS_TOL: f64 = 1e-10;

/// A density-flux pair.
#[derive(Clone, Debug)]
pub struct FlowPair {
    pub m: ScalarField,
    pub w: VectorField,
}

impl FlowPair {
    pub fn new(m: ScalarField, w: VectorField) -> Self {
        Self { m, w }
    }

    /// The trivial pair `(1, 0)`.
    pub fn trivial(grid: &Grid) -> Self {
        Self {
            m: ScalarField::constant(grid, 1.0),
            w: VectorField::zeros(grid),
        }
    }

    /// Unit mass within [`MASS_TOL`] and entrywise nonnegative density.
    pub fn is_feasible(&self, grid: &Grid) -> bool {
        (grid.integrate(&self.m) - 1.0).abs() <= MASS_TOL && self.m.min() >= 0.0
    }

    fn w_at(&self, c: usize) -> Vec<f64> {
        (0..self.w.dim()).map(|d| self.w.component(d)[c]).collect()
    }
}

/// Itemized energy evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    #[serde(serialize_with = "ext_real")]
    pub kinetic: f64,
    #[serde(serialize_with = "ext_real")]
    pub potential: f64,
    #[serde(serialize_with = "ext_real")]
    pub total: f64,
    /// `int |w|^{gamma'} / m^{gamma'-1}`.
    #[serde(serialize_with = "ext_real")]
    pub e_quantity: f64,
    /// `int m^q`.
    pub lq_norm_q: f64,
    pub fp_residual: f64,
    /// Cells where the density was clamped to the floor.
    pub clamped_cells: usize,
}

/// Norm of `laplacian(m) - divergence(w)` (grid `L^2`); zero means the pair
/// satisfies the discrete Fokker-Planck constraint.
pub fn fp_constraint_residual(grid: &Grid, pair: &FlowPair) -> Result<f64> {
    let lap = grid.laplacian_neumann(&pair.m)?;
    let div = grid.divergence(&pair.w)?;
    let mut acc = 0.0;
    for c in 0..grid.cells() {
        let r = lap[c] - div[c];
        acc += r * r;
    }
    Ok((acc * grid.cell_volume()).sqrt())
}

fn kinetic_terms(
    grid: &Grid,
    pair: &FlowPair,
    l: &Lagrangian,
) -> (f64, f64, usize) {
    let vol = grid.cell_volume();
    let mut kinetic = 0.0f64;
    let mut e_quantity = 0.0f64;
    let mut clamped = 0usize;
    for c in 0..grid.cells() {
        let w = pair.w_at(c);
        let mut m = pair.m[c];
        if m > 0.0 && m < M_FLOOR {
            m = M_FLOOR;
            clamped += 1;
        }
        let kd = kinetic_density(m, &w, l);
        if kd.is_infinite() {
            return (f64::INFINITY, f64::INFINITY, clamped);
        }
        kinetic += vol * kd;
        if m > 0.0 {
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            e_quantity += vol * wn.powf(l.gamma_conj) / m.powf(l.gamma_conj - 1.0);
        }
    }
    (kinetic, e_quantity, clamped)
}

/// Energy `int m L(-w/m) + F(x, m)` with the unmollified local potential.
pub fn energy(
    grid: &Grid,
    pair: &FlowPair,
    l: &Lagrangian,
    coupling: &Coupling,
) -> Result<EnergyReport> {
    let (kinetic, e_quantity, clamped) = kinetic_terms(grid, pair, l);
    let vol = grid.cell_volume();
    let mut potential = 0.0f64;
    for c in 0..grid.cells() {
        potential += vol * coupling.potential(c, pair.m[c]);
    }
    let lq = grid.lq_power(&pair.m, coupling.q_exp);
    Ok(EnergyReport {
        kinetic,
        potential,
        total: kinetic + potential,
        e_quantity,
        lq_norm_q: lq,
        fp_residual: fp_constraint_residual(grid, pair)?,
        clamped_cells: clamped,
    })
}

/// Energy with the mollified potential `F_eps[m] = int F(x, m*chi)`.
pub fn energy_regularized(
    grid: &Grid,
    pair: &FlowPair,
    l: &Lagrangian,
    coupling: &Coupling,
    mol: &Mollifier,
) -> Result<EnergyReport> {
    let (kinetic, e_quantity, clamped) = kinetic_terms(grid, pair, l);
    let vol = grid.cell_volume();
    let smoothed = mol.convolve(grid, &pair.m)?;
    let mut potential = 0.0f64;
    for c in 0..grid.cells() {
        potential += vol * coupling.potential(c, smoothed[c]);
    }
    let lq = grid.lq_power(&pair.m, coupling.q_exp);
    Ok(EnergyReport {
        kinetic,
        potential,
        total: kinetic + potential,
        e_quantity,
        lq_norm_q: lq,
        fp_residual: fp_constraint_residual(grid, pair)?,
        clamped_cells: clamped,
    })
}

/// Linearized functional `int m L(-w/m) + f_frozen m` (convex in the pair).
pub fn linearized_energy(
    grid: &Grid,
    pair: &FlowPair,
    l: &Lagrangian,
    f_frozen: &ScalarField,
) -> Result<f64> {
    if f_frozen.len() != grid.cells() {
        return Err(Error::ShapeMismatch(
            "frozen coupling field does not match the grid".into(),
        ));
    }
    let (kinetic, _, _) = kinetic_terms(grid, pair, l);
    if kinetic.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(kinetic + grid.inner(f_frozen, &pair.m))
}

/// Ball membership `||m||_q^q <= alpha` with the signed margin.
pub fn in_ball(grid: &Grid, pair: &FlowPair, alpha: f64, q: f64) -> (bool, f64) {
    let lq = grid.lq_power(&pair.m, q);
    (lq <= alpha, alpha - lq)
}

/// Smooth Neumann-compatible random field built from low cosine modes.
pub(crate) fn random_smooth_field(grid: &Grid, rng: &mut impl Rng, modes: usize) -> ScalarField {
    let mut coefs = Vec::new();
    for kx in 0..=modes {
        for ky in 0..=(if grid.dim() == 2 { modes } else { 0 }) {
            if kx == 0 && ky == 0 {
                continue;
            }
            coefs.push((kx as f64, ky as f64, rng.random_range(-1.0..1.0)));
        }
    }
    let lx = grid.length(0);
    let ly = if grid.dim() == 2 { grid.length(1) } else { 1.0 };
    ScalarField::from_fn(grid, |x| {
        let mut acc = 0.0;
        for &(kx, ky, a) in &coefs {
            acc += a
                * (std::f64::consts::PI * kx * x[0] / lx).cos()
                * (std::f64::consts::PI * ky * x[1] / ly).cos();
        }
        acc
    })
}

/// Random member of the discrete constraint set: a smooth random flux is
/// projected to its induced density through the Green operator, rescaled so
/// the density stays safely positive.
pub(crate) fn random_constraint_pair(
    grid: &Grid,
    rng: &mut impl Rng,
    amplitude: f64,
) -> Result<FlowPair> {
    let mut w = VectorField::zeros(grid);
    for d in 0..grid.dim() {
        let field = random_smooth_field(grid, rng, 3);
        w.component_mut(d).copy_from_slice(field.as_slice());
    }
    let mut scale = amplitude;
    for _ in 0..60 {
        let scaled = w.scaled(scale);
        let rhs = grid.divergence(&scaled)?;
        let dm = grid.poisson_neumann_zero_mean(&rhs)?;
        let m = ScalarField::from_values(dm.as_slice().iter().map(|v| 1.0 + v).collect());
        if m.min() > 1e-3 {
            return Ok(FlowPair::new(m, scaled));
        }
        scale *= 0.5;
    }
    Ok(FlowPair::trivial(grid))
}

/// Empirical maximum of `||m||_q / (E + 1)` over random feasible pairs in the
/// discrete constraint set; a discrete surrogate for the embedding constant
/// tying the `L^q` norm to the kinetic quantity.
pub fn estimate_cq(
    grid: &Grid,
    q: f64,
    gamma_conj: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 100 {
        return Err(Error::BadParameter(format!(
            "need at least 100 samples, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Lagrangian::new(gamma_conj, 1.0 / gamma_conj)?;
    // the trivial pair contributes ratio exactly 1
    let mut best = 1.0f64;
    for _ in 0..samples {
        let amp = rng.random_range(0.5..4.0);
        let pair = random_constraint_pair(grid, &mut rng, amp)?;
        let (_, e_quantity, _) = kinetic_terms(grid, &pair, &l);
        let lq = grid.lp_norm(&pair.m, q);
        best = best.max(lq / (e_quantity + 1.0));
    }
    Ok(best)
}

/// Empirical maximum of `||m||_{1,p} / (||w||_p + ||m||_p)` over random
/// constraint pairs; a discrete surrogate for the divergence-form regularity
/// constant.
pub fn estimate_ce(grid: &Grid, p: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples.max(20) {
        let amp = rng.random_range(0.5..4.0);
        let pair = random_constraint_pair(grid, &mut rng, amp)?;
        let num = grid.w1r_norm(&pair.m, p)?;
        let den = grid.lp_norm_vec(&pair.w, p) + grid.lp_norm(&pair.m, p);
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Empirical maximum of `||s||_{p*} / ||s||_{1,p}` over smooth random fields;
/// a discrete surrogate for the Sobolev embedding constant.
pub fn estimate_cs(grid: &Grid, p: f64, p_star: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples.max(20) {
        let mut s = random_smooth_field(grid, &mut rng, 4);
        let shift = rng.random_range(-1.0..1.0);
        for v in s.as_mut_slice() {
            *v += shift;
        }
        let num = grid.lp_norm(&s, p_star);
        let den = grid.w1r_norm(&s, p)?;
        if den > 1e-14 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}
