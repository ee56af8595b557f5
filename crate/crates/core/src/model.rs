//! Model Hamiltonians of power type, their Legendre transforms, the joint
//! kinetic density `m L(-w/m)`, local couplings and the boundary-reflected
//! mollifier.
//!
//! Only the power family `H(p) = (c/gamma) |p|^gamma` is implemented; the
//! structural growth assumptions are verified as runtime checks on sampled
//! points rather than accepted as arbitrary user code.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// `H(p) = (coef/gamma) |p|^gamma` together with the growth constants
/// `(C_H, K_H)` under which the structural bounds are asserted.
#[derive(Clone, Debug, Serialize)]
pub struct Hamiltonian {
    pub gamma: f64,
    /// Scale of the power model; `coef = 1` is the standard normalization,
    /// `coef = gamma` gives `H(p) = |p|^gamma`.
    pub coef: f64,
    pub c_h: f64,
    pub k_h: f64,
}

impl Hamiltonian {
    /// `H(p) = (1/gamma) |p|^gamma` with the sharp growth constant.
    pub fn model(gamma: f64) -> Result<Self> {
        Self::with_coef(gamma, 1.0)
    }

    /// `H(p) = (coef/gamma) |p|^gamma`; `C_H` is set to the smallest constant
    /// for which the three growth bounds hold (with a tiny safety margin).
    pub fn with_coef(gamma: f64, coef: f64) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::BadParameter(format!("gamma must be > 1, got {gamma}")));
        }
        if !(coef >= 0.0) {
            return Err(Error::BadParameter(format!("coef must be >= 0, got {coef}")));
        }
        let gamma_conj = gamma / (gamma - 1.0);
        let c_h = if coef == 0.0 {
            // degenerate linear case, growth bounds do not apply
            1.0 + 1e-9
        } else {
            let sharp = (gamma / coef)
                .max(coef / gamma)
                .max(gamma_conj / coef)
                .max(coef);
            sharp.max(1.0) * (1.0 + 1e-12) + 1e-12
        };
        Ok(Self {
            gamma,
            coef,
            c_h,
            k_h: 0.0,
        })
    }

    /// Same model with an explicit assumption offset `K_H >= 0` (the model
    /// itself does not change; `K_H` enters the smallness thresholds).
    pub fn with_offset(mut self, k_h: f64) -> Result<Self> {
        if !(k_h >= 0.0) {
            return Err(Error::BadParameter(format!("K_H must be >= 0, got {k_h}")));
        }
        self.k_h = k_h;
        Ok(self)
    }

    /// Degenerate `H = 0` (linear ergodic problem).
    pub fn zero() -> Self {
        Self {
            gamma: 2.0,
            coef: 0.0,
            c_h: 1.0 + 1e-9,
            k_h: 0.0,
        }
    }

    pub fn gamma_conj(&self) -> f64 {
        self.gamma / (self.gamma - 1.0)
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.coef / self.gamma * norm.powf(self.gamma)
    }

    /// `grad H(p) = coef |p|^{gamma-2} p`, extended by 0 at the origin.
    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; p.len()];
        }
        let scale = self.coef * norm.powf(self.gamma - 2.0);
        p.iter().map(|x| scale * x).collect()
    }

    /// Closed-form Legendre transform: `H = (c/gamma)|p|^gamma` conjugates to
    /// `L = (c^{1-gamma'}/gamma') |q|^{gamma'}`.
    pub fn conjugate(&self) -> Result<Lagrangian> {
        if self.coef == 0.0 {
            return Err(Error::BadParameter(
                "the zero Hamiltonian has no power-model conjugate".into(),
            ));
        }
        let gc = self.gamma_conj();
        Lagrangian::new(gc, self.coef.powf(1.0 - gc) / gc)
    }

    /// Checks the three structural growth bounds on sampled points.
    pub fn check_growth_bounds(&self, rng: &mut impl Rng) -> bool {
        if self.coef == 0.0 {
            return false;
        }
        for _ in 0..200 {
            let dim = if rng.random_bool(0.5) { 1 } else { 2 };
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let pg = norm.powf(self.gamma);
            let h = self.value(&p);
            if h < pg / self.c_h - self.k_h - 1e-12 || h > self.c_h * pg + self.k_h + 1e-12 {
                return false;
            }
            let grad = self.grad(&p);
            let gdotp: f64 = grad.iter().zip(&p).map(|(a, b)| a * b).sum();
            if gdotp - h < pg / self.c_h - self.c_h - 1e-12 {
                return false;
            }
            let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm > self.c_h * norm.powf(self.gamma - 1.0) + self.k_h + 1e-12 {
                return false;
            }
        }
        true
    }
}

/// `L(q) = coef |q|^{gamma'}` with the sharp structural constant `C_L` of the
/// power model.
#[derive(Clone, Debug, Serialize)]
pub struct Lagrangian {
    pub gamma_conj: f64,
    pub coef: f64,
    pub c_l: f64,
}

impl Lagrangian {
    pub fn new(gamma_conj: f64, coef: f64) -> Result<Self> {
        if !(gamma_conj > 1.0) {
            return Err(Error::BadParameter(format!(
                "gamma' must be > 1, got {gamma_conj}"
            )));
        }
        if !(coef > 0.0) {
            return Err(Error::BadParameter(format!(
                "Lagrangian coefficient must be positive, got {coef}"
            )));
        }
        let c_l = sharp_c_l(gamma_conj, coef);
        Ok(Self {
            gamma_conj,
            coef,
            c_l,
        })
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.coef * norm.powf(self.gamma_conj)
    }

    pub fn grad(&self, q: &[f64]) -> Vec<f64> {
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; q.len()];
        }
        let scale = self.coef * self.gamma_conj * norm.powf(self.gamma_conj - 2.0);
        q.iter().map(|x| scale * x).collect()
    }
}

/// Largest `C_L` for which the four structural Lagrangian bounds hold for
/// `L = coef |q|^{gamma'}`.
fn sharp_c_l(gamma_conj: f64, coef: f64) -> f64 {
    let a = coef;
    let b = (gamma_conj - 1.0) * coef;
    let c = 1.0 / (gamma_conj * coef);
    a.min(b).min(c)
}

/// Joint kinetic energy density of a density-flux pair.
///
/// Returns `m L(-w/m)` for `m > 0`, `0` for `(0, 0)`, and `+inf` for every
/// other combination; the infinity is a plain sentinel value so infeasible
/// points can be rejected cheaply.
pub fn kinetic_density(m: f64, w: &[f64], l: &Lagrangian) -> f64 {
    let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if m > 0.0 {
        let q = wnorm / m;
        m * l.coef * q.powf(l.gamma_conj)
    } else if m == 0.0 && wnorm == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Sign of the local coupling: aggregative couplings reward crowding
/// (`f` decreasing in `m`), repulsive ones penalize it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingSign {
    Aggregative,
    Repulsive,
}

impl CouplingSign {
    pub fn factor(self) -> f64 {
        match self {
            CouplingSign::Aggregative => -1.0,
            CouplingSign::Repulsive => 1.0,
        }
    }
}

/// Local coupling `f(x, m) = sign * C_f a(x) m^{q-1} + K_f b(x)` with optional
/// spatial weights (unit weights when absent).
#[derive(Clone, Debug, Serialize)]
pub struct Coupling {
    pub c_f: f64,
    pub k_f: f64,
    pub q_exp: f64,
    pub sign: CouplingSign,
    #[serde(skip)]
    pub a_weight: Option<ScalarField>,
    #[serde(skip)]
    pub b_weight: Option<ScalarField>,
}

impl Coupling {
    pub fn new(sign: CouplingSign, c_f: f64, k_f: f64, q_exp: f64) -> Result<Self> {
        if !(c_f >= 0.0) {
            return Err(Error::BadParameter(format!("C_f must be >= 0, got {c_f}")));
        }
        if !(k_f >= 0.0) {
            return Err(Error::BadParameter(format!("K_f must be >= 0, got {k_f}")));
        }
        if !(q_exp > 1.0) {
            return Err(Error::BadParameter(format!("q must be > 1, got {q_exp}")));
        }
        Ok(Self {
            c_f,
            k_f,
            q_exp,
            sign,
            a_weight: None,
            b_weight: None,
        })
    }

    pub fn with_weights(
        mut self,
        a_weight: Option<ScalarField>,
        b_weight: Option<ScalarField>,
    ) -> Self {
        self.a_weight = a_weight;
        self.b_weight = b_weight;
        self
    }

    fn a_at(&self, cell: usize) -> f64 {
        self.a_weight.as_ref().map_or(1.0, |a| a[cell])
    }

    fn b_at(&self, cell: usize) -> f64 {
        self.b_weight.as_ref().map_or(1.0, |b| b[cell])
    }

    /// `f(x, m)` at a cell; `m` must be nonnegative.
    pub fn value(&self, cell: usize, m: f64) -> Result<f64> {
        if m < 0.0 {
            return Err(Error::NegativeDensity(m));
        }
        Ok(self.sign.factor() * self.c_f * self.a_at(cell) * m.powf(self.q_exp - 1.0)
            + self.k_f * self.b_at(cell))
    }

    /// Antiderivative `F(x, m) = int_0^m f(x, n) dn`, `+inf` for `m < 0`.
    pub fn potential(&self, cell: usize, m: f64) -> f64 {
        if m < 0.0 {
            return f64::INFINITY;
        }
        self.sign.factor() * self.c_f / self.q_exp * self.a_at(cell) * m.powf(self.q_exp)
            + self.k_f * self.b_at(cell) * m
    }

    /// `F(x, 1)` integrated over the domain: the energy of the trivial pair.
    pub fn trivial_energy(&self, grid: &Grid) -> f64 {
        let field = ScalarField::from_values(
            (0..grid.cells()).map(|c| self.potential(c, 1.0)).collect(),
        );
        grid.integrate(&field)
    }

    /// Checks the two-sided growth bound on sampled densities.
    pub fn check_growth_bounds(&self, rng: &mut impl Rng) -> bool {
        let amax = self
            .a_weight
            .as_ref()
            .map_or(1.0, |a| a.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let bmax = self
            .b_weight
            .as_ref()
            .map_or(1.0, |b| b.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let cf = self.c_f * amax;
        let kf = self.k_f * bmax;
        for _ in 0..200 {
            let m: f64 = rng.random_range(0.0..10.0);
            let f = self.value(0, m).expect("m >= 0");
            let bound = cf * m.powf(self.q_exp - 1.0) + kf;
            if f < -bound - 1e-12 || f > bound + 1e-12 {
                return false;
            }
        }
        true
    }
}

/// Truncated-Gaussian mollification kernel, applied axis by axis with even
/// reflection at the walls so constants are preserved exactly.
///
/// `epsilon` is measured in physical length; the kernel is truncated at
/// `3 epsilon` and degenerates to the identity when the truncation radius
/// falls below one cell.
#[derive(Clone, Debug, Serialize)]
pub struct Mollifier {
    pub epsilon: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::BadParameter(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    /// Exact identity (no smoothing).
    pub fn identity() -> Self {
        Self { epsilon: 0.0 }
    }

    fn radius_cells(&self, grid: &Grid, axis: usize) -> usize {
        (3.0 * self.epsilon / grid.spacing(axis)).floor() as usize
    }

    pub fn is_identity_on(&self, grid: &Grid) -> bool {
        (0..grid.dim()).all(|d| self.radius_cells(grid, d) == 0)
    }

    /// Normalized half-kernel weights `[w_0, w_1, ..., w_r]` for one axis.
    fn kernel(&self, grid: &Grid, axis: usize) -> Result<Vec<f64>> {
        let r = self.radius_cells(grid, axis);
        if r >= grid.cells_per_axis(axis) {
            return Err(Error::BadParameter(format!(
                "mollifier radius {r} cells exceeds axis extent {}",
                grid.cells_per_axis(axis)
            )));
        }
        let h = grid.spacing(axis);
        let mut weights = Vec::with_capacity(r + 1);
        for j in 0..=r {
            let t = j as f64 * h / self.epsilon;
            weights.push((-0.5 * t * t).exp());
        }
        let total: f64 = weights[0] + 2.0 * weights[1..].iter().sum::<f64>();
        for w in &mut weights {
            *w /= total;
        }
        Ok(weights)
    }

    /// Convolution `s * chi` with even boundary reflection; exact on constants.
    pub fn convolve(&self, grid: &Grid, s: &ScalarField) -> Result<ScalarField> {
        if s.len() != grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid has {} cells",
                s.len(),
                grid.cells()
            )));
        }
        let mut out = s.clone();
        for axis in 0..grid.dim() {
            let r = self.radius_cells(grid, axis);
            if r == 0 {
                continue;
            }
            let weights = self.kernel(grid, axis)?;
            let nd = grid.cells_per_axis(axis);
            let mut next = ScalarField::zeros(grid.cells());
            for c in 0..grid.cells() {
                let k = if axis == 0 {
                    c % grid.cells_per_axis(0)
                } else {
                    c / grid.cells_per_axis(0)
                };
                let base = c as isize
                    - k as isize * if axis == 0 { 1 } else { grid.cells_per_axis(0) as isize };
                let stride = if axis == 0 { 1 } else { grid.cells_per_axis(0) };
                let mut acc = weights[0] * out[c];
                for j in 1..=r {
                    for dir in [-1isize, 1isize] {
                        let mut idx = k as isize + dir * j as isize;
                        // even reflection, folded as needed
                        loop {
                            if idx < 0 {
                                idx = -idx - 1;
                            } else if idx >= nd as isize {
                                idx = 2 * nd as isize - 1 - idx;
                            } else {
                                break;
                            }
                        }
                        let cc = (base + idx * stride as isize) as usize;
                        acc += weights[j] * out[cc];
                    }
                }
                next[c] = acc;
            }
            out = next;
        }
        Ok(out)
    }

    /// Kernel mass (should be 1 up to roundoff) and symmetry check.
    pub fn kernel_mass(&self, grid: &Grid) -> Result<f64> {
        let mut mass = 1.0;
        for axis in 0..grid.dim() {
            if self.radius_cells(grid, axis) == 0 {
                continue;
            }
            let w = self.kernel(grid, axis)?;
            mass *= w[0] + 2.0 * w[1..].iter().sum::<f64>();
        }
        Ok(mass)
    }
}

/// Doubly-mollified coupling `f_eps[m](x) = (f(., m*chi) * chi)(x)`.
///
/// The double convolution makes this the exact discrete gradient of the
/// single-convolution potential, since the reflected convolution matrix is
/// symmetric.
pub fn mollified_coupling(
    coupling: &Coupling,
    mol: &Mollifier,
    grid: &Grid,
    m: &ScalarField,
) -> Result<ScalarField> {
    let min = m.min();
    if min < -1e-12 {
        return Err(Error::NegativeDensity(min));
    }
    let smoothed = mol.convolve(grid, m)?;
    let mut f = ScalarField::zeros(grid.cells());
    for c in 0..grid.cells() {
        f[c] = coupling.value(c, smoothed[c].max(0.0))?;
    }
    mol.convolve(grid, &f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn hamiltonian_hand_values() {
        // quadratic H(p) = |p|^2 / 2 at p = (3, 4)
        let h = Hamiltonian::model(2.0).unwrap();
        assert!((h.value(&[3.0, 4.0]) - 12.5).abs() < 1e-12);
        assert_eq!(h.value(&[0.0, 0.0]), 0.0);
        // quadratic gradient is the identity
        let g = h.grad(&[0.3, -0.7]);
        assert!((g[0] - 0.3).abs() < 1e-14 && (g[1] + 0.7).abs() < 1e-14);
        assert_eq!(h.grad(&[0.0]), vec![0.0]);
    }

    #[test]
    fn hamiltonian_growth_bounds_sampled() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for gamma in [1.5, 2.0, 3.0] {
            let h = Hamiltonian::model(gamma).unwrap();
            assert!(h.check_growth_bounds(&mut rng), "gamma = {gamma}");
        }
        let h = Hamiltonian::with_coef(2.0, 2.0).unwrap();
        assert!(h.check_growth_bounds(&mut rng));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for gamma in [1.5, 2.0, 3.0] {
            let h = Hamiltonian::model(gamma).unwrap();
            for _ in 0..20 {
                let p = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
                let g = h.grad(&p);
                let step = 1e-6;
                for d in 0..2 {
                    let mut pp = p;
                    pp[d] += step;
                    let mut pm = p;
                    pm[d] -= step;
                    let fd = (h.value(&pp) - h.value(&pm)) / (2.0 * step);
                    assert!((g[d] - fd).abs() < 1e-6, "gamma {gamma}, {} vs {fd}", g[d]);
                }
            }
        }
    }

    #[test]
    fn legendre_closed_forms() {
        // quadratic self-duality
        let h = Hamiltonian::model(2.0).unwrap();
        let l = h.conjugate().unwrap();
        assert!((l.value(&[1.2, -0.4]) - (1.2f64 * 1.2 + 0.16) / 2.0).abs() < 1e-12);
        // model case: H = (1/gamma)|p|^gamma conjugates to (1/gamma')|q|^gamma'
        let h = Hamiltonian::model(1.5).unwrap();
        let l = h.conjugate().unwrap();
        assert!((l.gamma_conj - 3.0).abs() < 1e-12);
        assert!((l.coef - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Brute-force sup over a fine p-grid as the Legendre oracle.
    fn legendre_numeric(h: &Hamiltonian, q: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut p = -30.0;
        while p <= 30.0 {
            best = best.max(p * q - h.value(&[p]));
            p += 1e-3;
        }
        best
    }

    #[test]
    fn legendre_matches_numeric_sup() {
        for gamma in [1.5, 2.0, 3.0] {
            let h = Hamiltonian::model(gamma).unwrap();
            let l = h.conjugate().unwrap();
            for q in [-2.0, -0.5, 0.3, 1.0, 2.5] {
                let sup = legendre_numeric(&h, q);
                assert!(
                    (sup - l.value(&[q])).abs() < 1e-4,
                    "gamma {gamma}, q {q}: {sup} vs {}",
                    l.value(&[q])
                );
            }
        }
    }

    #[test]
    fn kinetic_density_cases() {
        let l = Hamiltonian::model(2.0).unwrap().conjugate().unwrap();
        assert_eq!(kinetic_density(1.0, &[0.0], &l), 0.0);
        assert!(kinetic_density(0.0, &[0.5], &l).is_infinite());
        assert!(kinetic_density(-0.1, &[0.0], &l).is_infinite());
        assert_eq!(kinetic_density(0.0, &[0.0], &l), 0.0);
        // two-sided structural bound
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m: f64 = rng.random_range(1e-3..5.0);
            let w = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let v = kinetic_density(m, &w, &l);
            let wn = (w[0] * w[0] + w[1] * w[1]).sqrt();
            let ratio = wn.powf(l.gamma_conj) / m.powf(l.gamma_conj - 1.0);
            assert!(l.c_l * ratio <= v + 1e-12);
            assert!(v <= ratio / l.c_l + m / l.c_l + 1e-12);
        }
    }

    /// `m H(p) = sup_w [-p w - m L(-w/m)]` by brute force.
    #[test]
    fn kinetic_density_characterizes_hamiltonian() {
        let h = Hamiltonian::model(2.0).unwrap();
        let l = h.conjugate().unwrap();
        for (m, p) in [(0.5, 0.8), (2.0, -1.1), (1.0, 0.0)] {
            let mut sup = f64::NEG_INFINITY;
            let mut w = -20.0;
            while w <= 20.0 {
                sup = sup.max(-p * w - kinetic_density(m, &[w], &l));
                w += 1e-3;
            }
            assert!((sup - m * h.value(&[p])).abs() < 1e-4, "m {m} p {p}");
        }
    }

    #[test]
    fn coupling_hand_values_and_bounds() {
        let c = Coupling::new(CouplingSign::Aggregative, 1.0, 0.0, 2.0).unwrap();
        assert!((c.value(0, 1.0).unwrap() + 1.0).abs() < 1e-14);
        let c = Coupling::new(CouplingSign::Repulsive, 0.7, 0.3, 2.0).unwrap();
        assert!((c.value(0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(c.value(0, -0.5).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        assert!(c.check_growth_bounds(&mut rng));
    }

    #[test]
    fn potential_antiderivative() {
        let c = Coupling::new(CouplingSign::Aggregative, 1.3, 0.4, 2.5).unwrap();
        assert_eq!(c.potential(0, 0.0), 0.0);
        assert!(c.potential(0, -1.0).is_infinite());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m: f64 = rng.random_range(0.1..4.0);
            let step = 1e-6;
            let fd = (c.potential(0, m + step) - c.potential(0, m - step)) / (2.0 * step);
            let f = c.value(0, m).unwrap();
            assert!((fd - f).abs() < 1e-6, "m {m}: {fd} vs {f}");
        }
    }

    #[test]
    fn mollifier_preserves_constants_and_mass() {
        let g = Grid::line(64).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        assert!((mol.kernel_mass(&g).unwrap() - 1.0).abs() < 1e-12);
        let s = ScalarField::constant(&g, 2.4);
        let out = mol.convolve(&g, &s).unwrap();
        for c in 0..g.cells() {
            assert!((out[c] - 2.4).abs() < 1e-13);
        }
    }

    #[test]
    fn mollifier_symmetry() {
        let g = Grid::line(32).unwrap();
        let mol = Mollifier::new(0.08).unwrap();
        let s = ScalarField::from_fn(&g, |x| ((x[0] - 0.5) * 7.0).powi(2));
        let out = mol.convolve(&g, &s).unwrap();
        let n = g.cells();
        for c in 0..n / 2 {
            assert!(
                (out[c] - out[n - 1 - c]).abs() < 1e-12,
                "cell {c}: {} vs {}",
                out[c],
                out[n - 1 - c]
            );
        }
    }

    #[test]
    fn mollifier_refines_to_identity() {
        let g = Grid::line(128).unwrap();
        let s = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let mol = Mollifier::new(eps).unwrap();
            let out = mol.convolve(&g, &s).unwrap();
            let mut err = 0.0f64;
            for c in 0..g.cells() {
                err = err.max((out[c] - s[c]).abs());
            }
            assert!(err < last, "eps {eps}: {err} !< {last}");
            last = err;
        }
        assert!(last < 0.02);
        // below one cell the kernel is the exact identity
        let mol = Mollifier::new(1e-4).unwrap();
        assert!(mol.is_identity_on(&g));
        assert_eq!(mol.convolve(&g, &s).unwrap(), s);
    }

    #[test]
    fn mollified_coupling_constant_density() {
        let g = Grid::line(48).unwrap();
        let c = Coupling::new(CouplingSign::Aggregative, 2.0, 0.5, 2.0).unwrap();
        let mol = Mollifier::new(0.1).unwrap();
        let m = ScalarField::constant(&g, 1.0);
        let f = mollified_coupling(&c, &mol, &g, &m).unwrap();
        let expect = c.value(0, 1.0).unwrap();
        for cell in 0..g.cells() {
            assert!((f[cell] - expect).abs() < 1e-12);
        }
        let bad = ScalarField::constant(&g, -1.0);
        assert!(mollified_coupling(&c, &mol, &g, &bad).is_err());
    }

    #[test]
    fn mollified_coupling_sup_bound() {
        let g = Grid::line(40).unwrap();
        let c = Coupling::new(CouplingSign::Repulsive, 1.2, 0.3, 2.5).unwrap();
        let mol = Mollifier::new(0.07).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = ScalarField::from_values(
                (0..g.cells()).map(|_| rng.random_range(0.0..3.0)).collect(),
            );
            let f = mollified_coupling(&c, &mol, &g, &m).unwrap();
            let bound = c.c_f * g.linf_norm(&m).powf(c.q_exp - 1.0) + c.k_f;
            assert!(g.linf_norm(&f) <= bound + 1e-10);
        }
    }

    proptest! {
        /// Midpoint convexity of the kinetic density on feasible pairs.
        #[test]
        fn kinetic_density_midpoint_convexity(
            m1 in 0.05f64..4.0, m2 in 0.05f64..4.0,
            w1 in -3.0f64..3.0, w2 in -3.0f64..3.0,
            gamma in 1.2f64..3.5,
        ) {
            let l = Hamiltonian::model(gamma).unwrap().conjugate().unwrap();
            let mid = kinetic_density(0.5 * (m1 + m2), &[0.5 * (w1 + w2)], &l);
            let avg = 0.5 * kinetic_density(m1, &[w1], &l) + 0.5 * kinetic_density(m2, &[w2], &l);
            prop_assert!(mid <= avg + 1e-10);
        }

        /// Legendre-Fenchel round trip on a sampled q-grid.
        #[test]
        fn legendre_round_trip(gamma in 1.3f64..3.0, q in -2.0f64..2.0) {
            let h = Hamiltonian::model(gamma).unwrap();
            let l = h.conjugate().unwrap();
            let sup = legendre_numeric(&h, q);
            prop_assert!((sup - l.value(&[q])).abs() < 1e-4);
        }
    }
}
