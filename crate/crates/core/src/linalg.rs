//! Small dense symmetric linear algebra: Gram solves with an optional
//! Moore-Penrose fallback, and symmetric matrix square roots.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// How to treat a singular symmetric PSD system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Fail on singularity.
    #[default]
    Exact,
    /// Moore-Penrose solution; components in the null space are zero.
    Pseudo,
}

/// Relative pivot below which a Cholesky factor is declared singular.
const PIVOT_TOL: f64 = 1e-12;
/// Relative eigenvalue below which a direction is treated as null.
const EIGEN_TOL: f64 = 1e-11;

/// A factorized symmetric PSD matrix that can be applied repeatedly.
#[derive(Debug, Clone)]
pub enum GramInverse {
    Cholesky(Cholesky<f64, Dyn>),
    Pseudo(DMatrix<f64>),
}

impl GramInverse {
    pub fn new(j: &DMatrix<f64>, mode: SolveMode) -> Result<Self> {
        match mode {
            SolveMode::Exact => cholesky_checked(j).map(GramInverse::Cholesky).ok_or(Error::SingularMatrix),
            SolveMode::Pseudo => Ok(GramInverse::Pseudo(pinv_sym(j))),
        }
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            GramInverse::Cholesky(c) => c.solve(v),
            GramInverse::Pseudo(p) => p * v,
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            GramInverse::Cholesky(c) => symmetrize(c.inverse()),
            GramInverse::Pseudo(p) => p.clone(),
        }
    }
}

/// Cholesky factorization that also rejects numerically singular input.
pub fn cholesky_checked(j: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(j.clone())?;
    let l = chol.l_dirty();
    for i in 0..j.nrows() {
        let d = j[(i, i)];
        if !(d > 0.0) || l[(i, i)] * l[(i, i)] < PIVOT_TOL * d {
            return None;
        }
    }
    Some(chol)
}

/// Solves `J x = v` for symmetric PSD `J`.
pub fn solve_gram(j: &DMatrix<f64>, v: &DVector<f64>, mode: SolveMode) -> Result<DVector<f64>> {
    Ok(GramInverse::new(j, mode)?.solve(v))
}

/// Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let scale = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if scale > 0.0 && l.abs() > EIGEN_TOL * scale { 1.0 / l } else { 0.0 });
    symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Principal square root of a symmetric PSD matrix; negative roundoff
/// eigenvalues are floored at zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Inverse principal square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l <= EIGEN_TOL * scale) {
        return Err(Error::SingularMatrix);
    }
    let roots = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()))
}

/// `(M + M') / 2`.
pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m.clone())).eigenvalues.min()
}

/// Adds `w * x x'` to the upper triangle of `acc`.
#[inline]
pub(crate) fn add_outer_upper(acc: &mut DMatrix<f64>, x: &[f64], w: f64) {
    let k = x.len();
    for c in 0..k {
        let wc = w * x[c];
        if wc == 0.0 {
            continue;
        }
        for r in 0..=c {
            acc[(r, c)] += wc * x[r];
        }
    }
}

/// Copies the upper triangle into the lower one.
pub(crate) fn fill_lower(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for c in 0..k {
        for r in c + 1..k {
            m[(r, c)] = m[(c, r)];
        }
    }
}

/// Submatrix over the given row and column indices.
pub(crate) fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

pub(crate) fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_psd(k: usize, seed: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k + 2, |r, c| seed[(r * 7 + c * 3) % seed.len()] + (r as f64 - c as f64) * 0.1);
        &a * a.transpose()
    }

    #[test]
    fn identity_leaves_vector_unchanged() {
        let v = DVector::from_vec(vec![1.5, -2.0, 3.0]);
        for mode in [SolveMode::Exact, SolveMode::Pseudo] {
            let x = solve_gram(&DMatrix::identity(3, 3), &v, mode).unwrap();
            assert!((x - &v).amax() < 1e-15);
        }
    }

    #[test]
    fn pseudo_zeroes_null_space() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let v = DVector::from_vec(vec![2.0, 5.0]);
        let x = solve_gram(&j, &v, SolveMode::Pseudo).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 0.0]);
        assert_eq!(solve_gram(&j, &v, SolveMode::Exact), Err(Error::SingularMatrix));
    }

    proptest! {
        #[test]
        fn pseudo_matches_exact_on_full_rank(seed in proptest::collection::vec(-2.0f64..2.0, 11), k in 1usize..6) {
            let j = random_psd(k, &seed) + DMatrix::identity(k, k) * 0.5;
            let v = DVector::from_fn(k, |i, _| seed[i % seed.len()]);
            let a = solve_gram(&j, &v, SolveMode::Exact).unwrap();
            let b = solve_gram(&j, &v, SolveMode::Pseudo).unwrap();
            prop_assert!((a - b).amax() < 1e-10 * (1.0 + v.amax()));
        }

        #[test]
        fn square_root_squares_back(seed in proptest::collection::vec(-2.0f64..2.0, 13), k in 1usize..7) {
            let m = random_psd(k, &seed);
            let r = sym_sqrt(&m);
            prop_assert!((&r * &r - &m).amax() < 1e-10 * (1.0 + m.amax()));
            let m = m + DMatrix::identity(k, k);
            let ri = sym_inv_sqrt(&m).unwrap();
            let back = &ri * &m * &ri;
            prop_assert!((back - DMatrix::identity(k, k)).amax() < 1e-10);
        }
    }
}
