//! Stationary Fokker-Planck solver: given a drift `b`, find `m >= 0` with
//! `-Lap m - div(m b) = 0`, zero total flux through the boundary and unit
//! mass.
//!
//! The advection block is assembled as the exact transpose of the HJB
//! linearization at the same drift. In centered mode this factors through the
//! adjoint-consistent grid operators, so the flux pair `w = -m b` satisfies
//! the discrete constraint identity to machine precision; the upwind mode
//! trades that exactness for an M-matrix (hence guaranteed positivity).

use crate::energy::FlowPair;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::hjb::DiffMode;
use crate::linsolve::SparseLu;

/// Solution of the stationary Fokker-Planck problem.
#[derive(Clone, Debug)]
pub struct DensitySolution {
    pub m: ScalarField,
    pub min_value: f64,
    pub residual_inf: f64,
}

/// Advection triplets of `b . grad` (rows = cells) in the requested mode;
/// this is exactly the advection block of the HJB Newton Jacobian when
/// `b = grad H(grad u)`.
pub(crate) fn advection_triplets(
    grid: &Grid,
    b: &VectorField,
    mode: DiffMode,
    out: &mut Vec<(usize, usize, f64)>,
) {
    match mode {
        DiffMode::Centered => {
            for c in 0..grid.cells() {
                for d in 0..grid.dim() {
                    let inv2h = 1.0 / (2.0 * grid.spacing(d));
                    let east = grid.neighbor(c, d, 1).unwrap_or(c);
                    let west = grid.neighbor(c, d, -1).unwrap_or(c);
                    let beta = b.component(d)[c];
                    out.push((c, east, beta * inv2h));
                    out.push((c, west, -beta * inv2h));
                }
            }
        }
        DiffMode::Upwind => {
            for c in 0..grid.cells() {
                for d in 0..grid.dim() {
                    let h = grid.spacing(d);
                    let beta = b.component(d)[c];
                    let bp = beta.max(0.0);
                    let bm = beta.min(0.0);
                    let mut diag = 0.0;
                    if let Some(w) = grid.neighbor(c, d, -1) {
                        diag += bp / h;
                        out.push((c, w, -bp / h));
                    }
                    if let Some(e) = grid.neighbor(c, d, 1) {
                        diag -= bm / h;
                        out.push((c, e, bm / h));
                    }
                    out.push((c, c, diag));
                }
            }
        }
    }
}

/// Triplets of the full Fokker-Planck operator `-Lap + (b . grad)^T`
/// (no mass row).
pub(crate) fn fp_operator_triplets(
    grid: &Grid,
    b: &VectorField,
    mode: DiffMode,
) -> Vec<(usize, usize, f64)> {
    let mut adv = Vec::new();
    advection_triplets(grid, b, mode, &mut adv);
    let mut out: Vec<(usize, usize, f64)> = grid
        .laplacian_triplets()
        .into_iter()
        .map(|(i, j, v)| (i, j, -v))
        .collect();
    out.extend(adv.into_iter().map(|(i, j, v)| (j, i, v)));
    out
}

fn apply_triplets(n: usize, triplets: &[(usize, usize, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &(i, j, v) in triplets {
        y[i] += v * x[j];
    }
    y
}

/// Solves the stationary Fokker-Planck problem with the default (upwind)
/// transpose assembly.
pub fn solve_stationary(grid: &Grid, b: &VectorField) -> Result<DensitySolution> {
    solve_stationary_with(grid, b, DiffMode::Upwind, None)
}

/// Solves the stationary Fokker-Planck problem.
///
/// The mass constraint replaces one equation: by construction the operator
/// rows sum to zero, so the replaced equation is implied by the others and
/// the reported residual covers all cells. `mass_row` picks the replaced
/// cell (defaults to cell 0; pass the argmax of a previous density when
/// iterating).
pub fn solve_stationary_with(
    grid: &Grid,
    b: &VectorField,
    mode: DiffMode,
    mass_row: Option<usize>,
) -> Result<DensitySolution> {
    for d in 0..grid.dim() {
        if b.component(d).iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParameter("drift must be finite".into()));
        }
    }
    let n = grid.cells();
    let row = mass_row.unwrap_or(0).min(n - 1);
    let operator = fp_operator_triplets(grid, b, mode);
    // the operator columns sum to zero and its kernel is the positive
    // stationary density, so pinning the chosen row isolates that density;
    // the replaced equation is implied and the mass is normalized exactly
    let mut system: Vec<(usize, usize, f64)> = operator
        .iter()
        .copied()
        .filter(|&(i, _, _)| i != row)
        .collect();
    system.push((row, row, 1.0));
    let lu = SparseLu::factor(n, &system)?;
    let mut rhs = vec![0.0; n];
    rhs[row] = 1.0;
    let z = lu.solve(&rhs);

    let min_raw = z.iter().copied().fold(f64::INFINITY, f64::min);
    if min_raw <= 0.0 {
        return Err(Error::NonPositive { min: min_raw });
    }
    let total: f64 = z.iter().sum::<f64>() * grid.cell_volume();
    let m_vals: Vec<f64> = z.iter().map(|v| v / total).collect();
    let min_value = min_raw / total;
    let op_m = apply_triplets(n, &operator, &m_vals);
    let mut residual_inf = op_m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let m = ScalarField::from_values(m_vals);
    let mass_defect = (grid.integrate(&m) - 1.0).abs();
    residual_inf = residual_inf.max(mass_defect);
    Ok(DensitySolution {
        m,
        min_value,
        residual_inf,
    })
}

/// Flux pair `(m, -m b)` induced by a converged density.
///
/// With the centered transpose assembly the pair satisfies the discrete
/// constraint identity at machine precision.
pub fn fp_flux_pair(grid: &Grid, sol: &DensitySolution, b: &VectorField) -> FlowPair {
    let mut w = VectorField::zeros(grid);
    for d in 0..grid.dim() {
        for c in 0..grid.cells() {
            w.component_mut(d)[c] = -sol.m[c] * b.component(d)[c];
        }
    }
    FlowPair::new(sol.m.clone(), w)
}

/// Whether the discrete `L^N` norm of the drift meets the smallness bound
/// `||b||_N <= 1 / (2 C_E C_S)` (inclusive) gating the critical-case
/// pipeline. `n` is the model dimension.
pub fn drift_smallness_check(grid: &Grid, b: &VectorField, ce: f64, cs: f64, n: u32) -> bool {
    let norm = grid.lp_norm_vec(b, n as f64);
    norm <= 1.0 / (2.0 * ce * cs)
}
