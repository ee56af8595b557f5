//! Ergodic Hamilton-Jacobi solver: given a source `f`, find `(u, lambda)` with
//! `-Lap u + H(grad u) + lambda = f`, homogeneous Neumann boundary, and
//! `int u = 0`.
//!
//! The nonlinearity is discretized either with a monotone Godunov-type upwind
//! scheme (default; first-order, Newton-stable) or with the centered grid
//! gradient. The centered mode is what the variational pipeline uses: there
//! the solver reproduces the exact first-order conditions of the reduced
//! minimization, so the duality identity holds at optimizer tolerance.
//!
//! `lambda` is carried as an explicit unknown and the mean-zero constraint
//! closes the square system (bordered matrix).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::linsolve::NewtonLu;
use crate::model::Hamiltonian;

/// Discretization of the Hamiltonian term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffMode {
    /// Godunov-type monotone upwind (Osher-Sethian splitting).
    Upwind,
    /// Centered grid gradient; adjoint-consistent with the energy machinery.
    Centered,
}

#[derive(Clone, Copy, Debug)]
pub struct HjbOptions {
    pub mode: DiffMode,
    pub tol: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            mode: DiffMode::Upwind,
            tol: 1e-9,
            max_iters: 200,
            max_backtracks: 30,
        }
    }
}

/// Converged solution of the ergodic problem.
#[derive(Clone, Debug)]
pub struct ErgodicSolution {
    pub u: ScalarField,
    pub lambda: f64,
    pub residual_inf: f64,
    pub newton_iters: usize,
}

/// Discrete Hamiltonian term `H_h(u)` per cell.
pub fn hamiltonian_term(
    grid: &Grid,
    h: &Hamiltonian,
    u: &ScalarField,
    mode: DiffMode,
) -> Result<ScalarField> {
    match mode {
        DiffMode::Centered => {
            let grad = grid.gradient(u)?;
            let mut out = ScalarField::zeros(grid.cells());
            for c in 0..grid.cells() {
                let p: Vec<f64> = (0..grid.dim()).map(|d| grad.component(d)[c]).collect();
                out[c] = h.value(&p);
            }
            Ok(out)
        }
        DiffMode::Upwind => {
            let mut out = ScalarField::zeros(grid.cells());
            for c in 0..grid.cells() {
                let q = upwind_q(grid, u, c);
                out[c] = h.coef / h.gamma * q.powf(h.gamma / 2.0);
            }
            Ok(out)
        }
    }
}

/// Osher-Sethian gradient magnitude squared at a cell:
/// `sum_d max(D^-, 0)^2 + min(D^+, 0)^2` with reflected ghosts.
fn upwind_q(grid: &Grid, u: &ScalarField, c: usize) -> f64 {
    let mut q = 0.0;
    for d in 0..grid.dim() {
        let h = grid.spacing(d);
        let back = grid
            .neighbor(c, d, -1)
            .map_or(0.0, |w| (u[c] - u[w]) / h);
        let fwd = grid.neighbor(c, d, 1).map_or(0.0, |e| (u[e] - u[c]) / h);
        let a = back.max(0.0);
        let b = fwd.min(0.0);
        q += a * a + b * b;
    }
    q
}

/// Residual field of the discrete equation at `(u, lambda)`.
pub fn hjb_residual(
    grid: &Grid,
    h: &Hamiltonian,
    f: &ScalarField,
    u: &ScalarField,
    lambda: f64,
    mode: DiffMode,
) -> Result<ScalarField> {
    let lap = grid.laplacian_neumann(u)?;
    let ham = hamiltonian_term(grid, h, u, mode)?;
    let mut r = ScalarField::zeros(grid.cells());
    for c in 0..grid.cells() {
        r[c] = -lap[c] + ham[c] + lambda - f[c];
    }
    Ok(r)
}

/// Jacobian triplets of the Hamiltonian term only (rows = cells). The sparsity
/// pattern depends only on the grid and mode, so the symbolic factorization
/// can be reused across Newton iterations.
pub(crate) fn hamiltonian_jacobian_triplets(
    grid: &Grid,
    h: &Hamiltonian,
    u: &ScalarField,
    mode: DiffMode,
    out: &mut Vec<(usize, usize, f64)>,
) -> Result<()> {
    match mode {
        DiffMode::Centered => {
            let grad = grid.gradient(u)?;
            for c in 0..grid.cells() {
                let p: Vec<f64> = (0..grid.dim()).map(|d| grad.component(d)[c]).collect();
                let hp = h.grad(&p);
                for d in 0..grid.dim() {
                    let inv2h = 1.0 / (2.0 * grid.spacing(d));
                    let east = grid.neighbor(c, d, 1).unwrap_or(c);
                    let west = grid.neighbor(c, d, -1).unwrap_or(c);
                    out.push((c, east, hp[d] * inv2h));
                    out.push((c, west, -hp[d] * inv2h));
                }
            }
        }
        DiffMode::Upwind => {
            for c in 0..grid.cells() {
                let q = upwind_q(grid, u, c);
                let coeff = if q > 0.0 {
                    h.coef * q.powf(h.gamma / 2.0 - 1.0)
                } else {
                    0.0
                };
                for d in 0..grid.dim() {
                    let hd = grid.spacing(d);
                    let mut diag = 0.0;
                    if let Some(w) = grid.neighbor(c, d, -1) {
                        let back = ((u[c] - u[w]) / hd).max(0.0);
                        diag += coeff * back / hd;
                        out.push((c, w, -coeff * back / hd));
                    }
                    if let Some(e) = grid.neighbor(c, d, 1) {
                        let fwd = ((u[e] - u[c]) / hd).min(0.0);
                        diag += -coeff * fwd / hd;
                        out.push((c, e, coeff * fwd / hd));
                    }
                    out.push((c, c, diag));
                }
            }
        }
    }
    Ok(())
}

/// Linear ergodic solve `-Lap u + lambda = f`: `lambda` is the domain average
/// of `f` and `u` comes from one Poisson solve. Doubles as the Newton
/// initializer.
pub fn solve_linear_shift(grid: &Grid, f: &ScalarField) -> Result<ErgodicSolution> {
    let lambda = grid.mean(f);
    let rhs = ScalarField::from_values(f.as_slice().iter().map(|v| lambda - v).collect());
    let u = grid.poisson_neumann_zero_mean(&rhs)?;
    let lap = grid.laplacian_neumann(&u)?;
    let mut res = 0.0f64;
    for c in 0..grid.cells() {
        res = res.max((-lap[c] + lambda - f[c]).abs());
    }
    Ok(ErgodicSolution {
        u,
        lambda,
        residual_inf: res,
        newton_iters: 0,
    })
}

/// Ergodic solve with default options (monotone upwind).
pub fn solve_ergodic(grid: &Grid, h: &Hamiltonian, f: &ScalarField) -> Result<ErgodicSolution> {
    solve_ergodic_with(grid, h, f, &HjbOptions::default(), None)
}

/// Ergodic solve with explicit options and optional warm start.
pub fn solve_ergodic_with(
    grid: &Grid,
    h: &Hamiltonian,
    f: &ScalarField,
    opts: &HjbOptions,
    warm: Option<&ErgodicSolution>,
) -> Result<ErgodicSolution> {
    if f.len() != grid.cells() {
        return Err(Error::ShapeMismatch(
            "source field does not match the grid".into(),
        ));
    }
    if f.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::BadParameter("source field must be finite".into()));
    }
    let n = grid.cells();

    let (mut u, mut lambda) = match warm {
        Some(sol) => (sol.u.clone(), sol.lambda),
        None => {
            let lin = solve_linear_shift(grid, f)?;
            (lin.u, lin.lambda)
        }
    };
    let mean0 = grid.mean(&u);
    for v in u.as_mut_slice() {
        *v -= mean0;
    }

    let lap_triplets = grid.laplacian_triplets();
    let assemble = |u: &ScalarField| -> Result<Vec<(usize, usize, f64)>> {
        let mut t = Vec::with_capacity(lap_triplets.len() + 6 * n);
        for &(i, j, v) in &lap_triplets {
            t.push((i, j, -v));
        }
        hamiltonian_jacobian_triplets(grid, h, u, opts.mode, &mut t)?;
        Ok(t)
    };

    let residual_norm = |u: &ScalarField, lambda: f64| -> Result<f64> {
        let r = hjb_residual(grid, h, f, u, lambda, opts.mode)?;
        Ok(grid.linf_norm(&r))
    };

    // The Jacobian annihilates constants, so the Newton step for `(u, lambda)`
    // is solved on the system pinned at cell 0: two solves give the response
    // to the residual and to the lambda column, the pinned equation fixes the
    // lambda update, and the mean-zero constraint fixes the constant shift.
    let mut lu: Option<NewtonLu> = None;
    let mut res = residual_norm(&u, lambda)?;
    for iter in 0..opts.max_iters {
        if res <= opts.tol {
            return Ok(ErgodicSolution {
                u,
                lambda,
                residual_inf: res,
                newton_iters: iter,
            });
        }
        let full = assemble(&u)?;
        let mut pinned: Vec<(usize, usize, f64)> = full
            .iter()
            .copied()
            .filter(|&(i, _, _)| i != 0)
            .collect();
        pinned.push((0, 0, 1.0));
        if lu.is_none() {
            lu = Some(NewtonLu::new(n, &pinned)?);
        }
        let r = hjb_residual(grid, h, f, &u, lambda, opts.mode)?;
        let mut rhs_r: Vec<f64> = r.as_slice().iter().map(|v| -v).collect();
        rhs_r[0] = 0.0;
        let mut rhs_e = vec![1.0; n];
        rhs_e[0] = 0.0;
        let sols = lu.as_ref().unwrap().solve_many(&pinned, &[&rhs_r, &rhs_e])?;
        let (z_r, z_e) = (&sols[0], &sols[1]);
        let row0 = |z: &[f64]| -> f64 {
            full.iter()
                .filter(|&&(i, _, _)| i == 0)
                .map(|&(_, j, v)| v * z[j])
                .sum()
        };
        let denom = 1.0 - row0(z_e);
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::SingularSystem(
                "pinned Newton system lost the lambda direction".into(),
            ));
        }
        let dlambda = (-r[0] - row0(z_r)) / denom;
        let du = ScalarField::from_values(
            z_r.iter().zip(z_e).map(|(a, b)| a - dlambda * b).collect(),
        );
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let mut u_try = u.add_scaled(step, &du);
            let mean = grid.mean(&u_try);
            for v in u_try.as_mut_slice() {
                *v -= mean;
            }
            let l_try = lambda + step * dlambda;
            let res_try = residual_norm(&u_try, l_try)?;
            if res_try <= (1.0 - 1e-4 * step) * res {
                u = u_try;
                lambda = l_try;
                res = res_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iters: iter,
                residual: res,
            });
        }
    }
    if res <= opts.tol {
        return Ok(ErgodicSolution {
            u,
            lambda,
            residual_inf: res,
            newton_iters: opts.max_iters,
        });
    }
    Err(Error::NewtonDiverged {
        iters: opts.max_iters,
        residual: res,
    })
}

/// Both positive roots of the scalar barrier equation `y = C y^gamma + C' delta`.
///
/// Returns `(y1, y2)` with `y1 < y2`; admissible gradient norms live below
/// `y1`, and `y1 -> 0` as `delta -> 0`.
pub fn barrier_levels(c: f64, c_prime: f64, gamma: f64, delta: f64) -> Result<(f64, f64)> {
    if !(c > 0.0) || !(c_prime > 0.0) || !(gamma > 1.0) || !(delta > 0.0) {
        return Err(Error::BadParameter(
            "barrier constants must be positive with gamma > 1".into(),
        ));
    }
    let g = |y: f64| c * y.powf(gamma) + c_prime * delta - y;
    // the gap function decreases to its minimum then increases
    let y_star = (1.0 / (c * gamma)).powf(1.0 / (gamma - 1.0));
    if g(y_star) > 0.0 {
        return Err(Error::NoBarrier { delta });
    }
    let bisect = |mut lo: f64, mut hi: f64| -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let y1 = bisect(0.0, y_star);
    let mut hi = y_star.max(1.0);
    while g(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoBarrier { delta });
        }
    }
    let y2 = bisect_increasing(g, y_star, hi);
    Ok((y1, y2))
}

fn bisect_increasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Discrete `L^{N(gamma-1)}` norm of the value-function gradient, for
/// comparison against the barrier levels in the critical-case pipeline.
pub fn gradient_norm_report(
    grid: &Grid,
    sol: &ErgodicSolution,
    gamma: f64,
    n: u32,
) -> Result<f64> {
    let p = n as f64 * (gamma - 1.0);
    let grad = grid.gradient(&sol.u)?;
    Ok(grid.lp_norm_vec(&grad, p))
}

/// Helper: the drift `grad H (grad u)` as a cell vector field (centered
/// gradient).
pub fn drift_from_solution(
    grid: &Grid,
    h: &Hamiltonian,
    u: &ScalarField,
) -> Result<VectorField> {
    let grad = grid.gradient(u)?;
    let mut b = VectorField::zeros(grid);
    for c in 0..grid.cells() {
        let p: Vec<f64> = (0..grid.dim()).map(|d| grad.component(d)[c]).collect();
        let hp = h.grad(&p);
        for d in 0..grid.dim() {
            b.component_mut(d)[c] = hp[d];
        }
    }
    Ok(b)
}
