//! Symmetric-matrix helpers shared by every module.
//!
//! All covariance and precision matrices in the crate pass through here:
//! construction-time checks (`is_symmetric`, `check_psd`), solves against
//! symmetric positive definite matrices ([`SpdFactor`]), and the rank-revealing
//! square-root factor used for sampling and for factoring possibly singular
//! potentials ([`psd_root`]).

use nalgebra::{convert, Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Real, Result};

/// Relative Frobenius tolerance for symmetry checks.
pub const SYM_TOL: f64 = 1e-9;

/// Eigenvalue tolerance for positive-semidefiniteness checks, relative to
/// the largest-magnitude eigenvalue.
pub const PSD_TOL: f64 = 1e-9;

/// Relative eigenvalue cutoff below which a nominally positive definite
/// matrix is treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// `(M + Mᵀ)/2`.  Applied to every covariance/precision result so that
/// floating-point asymmetry cannot accumulate across operations.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half: T = convert(0.5);
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetry within a relative Frobenius tolerance:
/// `‖M − Mᵀ‖_F ≤ tol · max(1, ‖M‖_F)`.
pub fn is_symmetric<T: Real>(m: &DMatrix<T>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let skew = m - m.transpose();
    let scale = m.norm().max(T::one());
    skew.norm() <= convert::<f64, T>(tol) * scale
}

pub fn all_finite_mat<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks that a symmetric matrix is positive semidefinite within `tol`
/// (eigenvalues may dip below zero by at most `tol` times the largest
/// eigenvalue magnitude).
pub fn check_psd<T: Real>(m: &DMatrix<T>, tol: f64) -> Result<()> {
    if m.nrows() == 0 {
        return Err(Error::EmptyDimension);
    }
    let eigs = symmetrize(m).symmetric_eigenvalues();
    let max_mag = eigs.iter().fold(T::zero(), |acc, &e| acc.max(e.abs()));
    let floor = -convert::<f64, T>(tol) * max_mag.max(T::one());
    if eigs.iter().all(|&e| e >= floor) {
        Ok(())
    } else {
        Err(Error::NotPositiveSemidefinite)
    }
}

/// Factorization of a symmetric positive definite matrix.
///
/// Cholesky is attempted first; if it fails on a marginally conditioned
/// input, a symmetric eigendecomposition is used instead.  Matrices with an
/// eigenvalue at or below the relative cutoff are reported as singular
/// (`new` returns `None`) rather than pseudo-inverted.
pub enum SpdFactor<T: Real> {
    Chol(Cholesky<T, Dyn>),
    Eigen { vecs: DMatrix<T>, vals: DVector<T> },
}

impl<T: Real> SpdFactor<T> {
    pub fn new(m: &DMatrix<T>) -> Option<Self> {
        debug_assert_eq!(m.nrows(), m.ncols());
        if m.nrows() == 0 {
            return None;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            // Cholesky can succeed on nearly singular input; keep the factor
            // only if the implied diagonal stays above the cutoff.
            let diag = chol.l_dirty().diagonal();
            let max = diag.iter().fold(T::zero(), |a, &d| a.max(d * d));
            let cut = convert::<f64, T>(SINGULAR_TOL) * max;
            if diag.iter().all(|&d| d * d > cut) {
                return Some(SpdFactor::Chol(chol));
            }
        }
        let se = symmetrize(m).symmetric_eigen();
        let max = se.eigenvalues.iter().fold(T::zero(), |a, &e| a.max(e));
        if max <= T::zero() {
            return None;
        }
        let cut = convert::<f64, T>(SINGULAR_TOL) * max;
        if se.eigenvalues.iter().any(|&e| e <= cut) {
            return None;
        }
        Some(SpdFactor::Eigen {
            vecs: se.eigenvectors,
            vals: se.eigenvalues,
        })
    }

    /// `M⁻¹ B`.
    pub fn solve_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        match self {
            SpdFactor::Chol(c) => c.solve(b),
            SpdFactor::Eigen { vecs, vals } => {
                let mut w = vecs.transpose() * b;
                for i in 0..vals.len() {
                    let inv = T::one() / vals[i];
                    w.row_mut(i).scale_mut(inv);
                }
                vecs * w
            }
        }
    }

    /// `M⁻¹ b`.
    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        match self {
            SpdFactor::Chol(c) => c.solve(b),
            SpdFactor::Eigen { vecs, vals } => {
                let mut w = vecs.transpose() * b;
                for i in 0..vals.len() {
                    w[i] /= vals[i];
                }
                vecs * w
            }
        }
    }

    pub fn inverse(&self) -> DMatrix<T> {
        match self {
            SpdFactor::Chol(c) => c.inverse(),
            SpdFactor::Eigen { vecs, vals } => {
                let mut w = vecs.transpose();
                for i in 0..vals.len() {
                    let inv = T::one() / vals[i];
                    w.row_mut(i).scale_mut(inv);
                }
                vecs * w
            }
        }
    }

    pub fn ln_det(&self) -> T {
        match self {
            SpdFactor::Chol(c) => {
                let two: T = convert(2.0);
                c.l_dirty()
                    .diagonal()
                    .iter()
                    .fold(T::zero(), |acc, &d| acc + d.ln())
                    * two
            }
            SpdFactor::Eigen { vals, .. } => vals.iter().fold(T::zero(), |acc, &e| acc + e.ln()),
        }
    }
}

/// Convenience wrapper: `M⁻¹` of a symmetric positive definite matrix.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    SpdFactor::new(m).map(|f| symmetrize(&f.inverse()))
}

/// Rank-revealing root of a symmetric positive semidefinite matrix:
/// returns `U` (r × d, r = numerical rank) with `UᵀU = M`.
///
/// Built from the symmetric eigendecomposition, keeping eigenpairs above a
/// relative cutoff; `M = V D Vᵀ` gives `U = D₊^{1/2} V₊ᵀ`.
pub fn psd_root<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let d = m.nrows();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let se = symmetrize(m).symmetric_eigen();
    let max = se.eigenvalues.iter().fold(T::zero(), |a, &e| a.max(e));
    let cut = convert::<f64, T>(SINGULAR_TOL) * max.max(T::zero());
    let kept: Vec<usize> = (0..d).filter(|&i| se.eigenvalues[i] > cut).collect();
    let mut u = DMatrix::zeros(kept.len(), d);
    for (row, &i) in kept.iter().enumerate() {
        let scale = se.eigenvalues[i].sqrt();
        for col in 0..d {
            u[(row, col)] = se.eigenvectors[(col, i)] * scale;
        }
    }
    u
}

/// Symmetric square root `S` (d × d) with `S Sᵀ = M`, for sampling from a
/// possibly singular covariance.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let se = symmetrize(m).symmetric_eigen();
    let mut w = se.eigenvectors.clone();
    for i in 0..se.eigenvalues.len() {
        let s = se.eigenvalues[i].max(T::zero()).sqrt();
        w.column_mut(i).scale_mut(s);
    }
    w
}
