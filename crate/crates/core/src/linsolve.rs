//! Thin wrapper around the sparse LU backend.
//!
//! All linear systems in the crate (zero-mean Poisson, bordered HJB Newton
//! steps, Fokker-Planck with a mass row) go through this module, so the
//! factorization backend is a single swap point. Parallelism is pinned to
//! sequential once per process to keep solves bit-reproducible.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};

use crate::error::{Error, Result};

static INIT: Once = Once::new();

fn init_backend() {
    INIT.call_once(|| {
        faer::set_global_parallelism(Par::Seq);
    });
}

/// Sparse LU factorization of a square matrix given by triplets.
/// Duplicate entries are summed.
#[derive(Debug)]
pub(crate) struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        init_backend();
        let trips: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let mat = SparseColMat::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::SingularSystem(format!("assembly failed: {e:?}")))?;
        let symbolic = SymbolicLu::try_new(mat.symbolic())
            .map_err(|e| Error::SingularSystem(format!("symbolic factorization failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref())
            .map_err(|e| Error::SingularSystem(format!("numeric factorization failed: {e:?}")))?;
        Ok(Self { lu, n })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::zeros(self.n, 1);
        for (i, &v) in rhs.iter().enumerate() {
            b[(i, 0)] = v;
        }
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Symbolic-once, refactor-many variant for Newton loops where the sparsity
/// pattern is fixed across iterations.
pub(crate) struct NewtonLu {
    symbolic: SymbolicLu<usize>,
    n: usize,
}

impl NewtonLu {
    pub fn new(n: usize, pattern: &[(usize, usize, f64)]) -> Result<Self> {
        init_backend();
        let trips: Vec<Triplet<usize, usize, f64>> = pattern
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let mat = SparseColMat::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::SingularSystem(format!("assembly failed: {e:?}")))?;
        let symbolic = SymbolicLu::try_new(mat.symbolic())
            .map_err(|e| Error::SingularSystem(format!("symbolic factorization failed: {e:?}")))?;
        Ok(Self { symbolic, n })
    }

    /// Refactors with the same pattern and solves for each right-hand side.
    pub fn solve_many(
        &self,
        triplets: &[(usize, usize, f64)],
        rhs: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>> {
        let trips: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let mat = SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::SingularSystem(format!("assembly failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat.as_ref())
            .map_err(|e| Error::SingularSystem(format!("numeric factorization failed: {e:?}")))?;
        let k = rhs.len();
        let mut b = Mat::<f64>::zeros(self.n, k);
        for (col, r) in rhs.iter().enumerate() {
            for (i, &v) in r.iter().enumerate() {
                b[(i, col)] = v;
            }
        }
        let x = lu.solve(&b);
        Ok((0..k)
            .map(|col| (0..self.n).map(|i| x[(i, col)]).collect())
            .collect())
    }
}
