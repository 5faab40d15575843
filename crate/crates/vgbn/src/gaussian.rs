//! Moment- and information-form Gaussians and the closed-form operations on
//! them that the inference engines are built from.
//!
//! Two dual encodings appear throughout:
//!
//! * [`Gaussian`] — moment form `N(x̄, P)`: a proper density with mean `x̄`
//!   and positive semidefinite covariance `P`.  Zero covariance is legal and
//!   denotes a point mass (used for instantiated nodes and deterministic
//!   inputs).
//! * [`InfoForm`] — information form `(Λ, η)`: an unnormalized potential
//!   `exp(−½ xᵀΛx + xᵀη)`.  The precision `Λ` may be singular — a potential
//!   that constrains only some directions — and the all-zero pair encodes
//!   the unit potential `λ(x) ≡ 1`.  Singular precisions are first-class
//!   values here and are never eagerly inverted.

use std::ops::Range;

use nalgebra::{convert, DMatrix, DVector};

use crate::linalg::{self, SpdFactor, PSD_TOL, SYM_TOL};
use crate::{Error, NodeId, Real, Result};

/// Moment-form multivariate normal `N(x̄, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T = f64> {
    mean: DVector<T>,
    cov: DMatrix<T>,
}

impl<T: Real> Gaussian<T> {
    /// Validates dimensions, finiteness, symmetry (relative Frobenius
    /// `1e-9`), and positive semidefiniteness (relative eigenvalue `1e-9`).
    /// The stored covariance is explicitly symmetrized.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyDimension);
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if !linalg::all_finite_vec(&mean) || !linalg::all_finite_mat(&cov) {
            return Err(Error::NonFinite);
        }
        if !linalg::is_symmetric(&cov, SYM_TOL) {
            return Err(Error::NotSymmetric);
        }
        linalg::check_psd(&cov, PSD_TOL)?;
        Ok(Gaussian {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    /// Point mass at `value` (zero covariance).
    pub fn point(value: DVector<T>) -> Self {
        let d = value.len();
        assert!(d > 0, "point mass needs dimension >= 1");
        Gaussian {
            cov: DMatrix::zeros(d, d),
            mean: value,
        }
    }

    /// Standard normal of dimension `d`.
    pub fn standard(d: usize) -> Self {
        assert!(d > 0);
        Gaussian {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub(crate) fn new_unchecked(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        debug_assert!(linalg::is_symmetric(&cov, SYM_TOL));
        Gaussian { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Whether the covariance is exactly zero, i.e. the value is a point mass.
    pub fn is_point(&self) -> bool {
        self.cov.iter().all(|x| x.is_zero())
    }

    /// Same covariance, mean shifted by `offset`.
    pub fn translate(&self, offset: &DVector<T>) -> Self {
        assert_eq!(offset.len(), self.dim());
        Gaussian {
            mean: &self.mean + offset,
            cov: self.cov.clone(),
        }
    }

    /// Density at `x`: `|2πP|^{−1/2} exp(−½ (x−x̄)ᵀ P⁻¹ (x−x̄))`.
    ///
    /// Requires a strictly positive definite covariance.
    pub fn pdf(&self, x: &DVector<T>) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        normal_pdf(&(x - &self.mean), &self.cov)
    }

    /// Conversion to information form: `Λ = P⁻¹`, `η = P⁻¹ x̄`.
    pub fn to_info(&self) -> Result<InfoForm<T>> {
        let f = SpdFactor::new(&self.cov).ok_or(Error::SingularCovariance)?;
        Ok(InfoForm {
            info: f.solve_vec(&self.mean),
            prec: linalg::symmetrize(&f.inverse()),
        })
    }
}

/// Density of `N(0, cov)` evaluated at `diff`.
fn normal_pdf<T: Real>(diff: &DVector<T>, cov: &DMatrix<T>) -> Result<T> {
    let f = SpdFactor::new(cov).ok_or(Error::SingularCovariance)?;
    let half: T = convert(0.5);
    let d: T = convert(diff.len() as f64);
    let quad = diff.dot(&f.solve_vec(diff));
    let log_norm = f.ln_det() + d * T::two_pi().ln();
    Ok((-half * (quad + log_norm)).exp())
}

/// Information-form potential `exp(−½ xᵀΛx + xᵀη)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoForm<T = f64> {
    prec: DMatrix<T>,
    info: DVector<T>,
}

impl<T: Real> InfoForm<T> {
    /// Validates dimensions, finiteness, symmetry, and positive
    /// semidefiniteness of the precision (which may be singular or zero).
    pub fn new(prec: DMatrix<T>, info: DVector<T>) -> Result<Self> {
        let d = info.len();
        if d == 0 {
            return Err(Error::EmptyDimension);
        }
        if prec.nrows() != d || prec.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: prec.nrows().max(prec.ncols()),
            });
        }
        if !linalg::all_finite_vec(&info) || !linalg::all_finite_mat(&prec) {
            return Err(Error::NonFinite);
        }
        if !linalg::is_symmetric(&prec, SYM_TOL) {
            return Err(Error::NotSymmetric);
        }
        linalg::check_psd(&prec, PSD_TOL)?;
        Ok(InfoForm {
            prec: linalg::symmetrize(&prec),
            info,
        })
    }

    /// The unit potential `λ(x) ≡ 1` of dimension `d`: zero precision, zero
    /// information vector.
    pub fn unit(d: usize) -> Self {
        assert!(d > 0);
        InfoForm {
            prec: DMatrix::zeros(d, d),
            info: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.info.len()
    }

    pub fn prec(&self) -> &DMatrix<T> {
        &self.prec
    }

    pub fn info(&self) -> &DVector<T> {
        &self.info
    }

    /// Whether this is exactly the unit potential.
    pub fn is_unit(&self) -> bool {
        self.prec.iter().all(|x| x.is_zero()) && self.info.iter().all(|x| x.is_zero())
    }

    /// Conversion to moment form: `P = Λ⁻¹`, `x̄ = Λ⁻¹ η`.
    ///
    /// Fails with `SingularPrecision` when the potential does not determine
    /// a proper distribution (e.g. the unit potential).
    pub fn to_moment(&self) -> Result<Gaussian<T>> {
        let f = SpdFactor::new(&self.prec).ok_or(Error::SingularPrecision)?;
        Ok(Gaussian {
            mean: f.solve_vec(&self.info),
            cov: linalg::symmetrize(&f.inverse()),
        })
    }
}

/// Normalized product of two moment-form Gaussians over the same variable.
///
/// Returns the posterior `N(x̄, P)` with `P = (P₁⁻¹ + P₂⁻¹)⁻¹` and
/// `x̄ = P (P₁⁻¹x̄₁ + P₂⁻¹x̄₂)`, together with the normalization constant
/// `a = N(x̄₁; x̄₂, P₁ + P₂)` — the height of one factor's predictive density
/// at the other's mean, so that `f₁·f₂ = a · posterior`.
///
/// The precision route is used when both inputs are strictly positive
/// definite; otherwise the equivalent covariance-form route (see
/// [`product_covariance_form`]) is taken, which only needs `P₁ + P₂`
/// invertible.  If both covariances are singular along a shared direction
/// the product has no proper normalization and `SingularCovariance` is
/// returned.
pub fn product<T: Real>(g1: &Gaussian<T>, g2: &Gaussian<T>) -> Result<(Gaussian<T>, T)> {
    check_same_dim(g1, g2)?;
    if let (Some(f1), Some(f2)) = (SpdFactor::new(&g1.cov), SpdFactor::new(&g2.cov)) {
        let a = pair_constant(g1, g2)?;
        let prec = linalg::symmetrize(&(f1.inverse() + f2.inverse()));
        let fp = SpdFactor::new(&prec).ok_or(Error::SingularCombination)?;
        let cov = linalg::symmetrize(&fp.inverse());
        let b = f1.solve_vec(&g1.mean) + f2.solve_vec(&g2.mean);
        let mean = fp.solve_vec(&b);
        Ok((Gaussian::new(mean, cov)?, a))
    } else {
        product_covariance_form(g1, g2)
    }
}

/// Covariance-form route for the normalized product: with `S = P₁ + P₂`,
/// `P = P₂ − P₂ S⁻¹ P₂` and `x̄ = x̄₂ + P₂ S⁻¹ (x̄₁ − x̄₂)`.
///
/// Algebraically identical to [`product`] but never inverts an individual
/// covariance, so it tolerates singular (including point-mass) inputs as
/// long as the sum is strictly positive definite.
pub fn product_covariance_form<T: Real>(
    g1: &Gaussian<T>,
    g2: &Gaussian<T>,
) -> Result<(Gaussian<T>, T)> {
    check_same_dim(g1, g2)?;
    let a = pair_constant(g1, g2)?;
    let sum = &g1.cov + &g2.cov;
    let fs = SpdFactor::new(&sum).ok_or(Error::SingularCovariance)?;
    let s_inv_p2 = fs.solve_mat(&g2.cov);
    let cov = linalg::symmetrize(&(&g2.cov - &g2.cov * &s_inv_p2));
    let mean = &g2.mean + &g2.cov * fs.solve_vec(&(&g1.mean - &g2.mean));
    Ok((Gaussian::new(mean, cov)?, a))
}

fn check_same_dim<T: Real>(g1: &Gaussian<T>, g2: &Gaussian<T>) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    Ok(())
}

/// `N(x̄₁; x̄₂, P₁ + P₂)` — the product's normalization constant.
fn pair_constant<T: Real>(g1: &Gaussian<T>, g2: &Gaussian<T>) -> Result<T> {
    normal_pdf(&(&g1.mean - &g2.mean), &(&g1.cov + &g2.cov))
}

/// Pulls a moment-form density on `y` back through the linear map
/// `y = A x + b` into an information-form potential on `x`:
/// `Λ = Aᵀ P_y⁻¹ A`, `η = Aᵀ P_y⁻¹ (ȳ − b)`.
///
/// `A` is `dim(y) × dim(x)` and need not be square or full rank; the result
/// is singular exactly when `A` constrains only part of `x`'s space.
pub fn pullback<T: Real>(a: &DMatrix<T>, g_y: &Gaussian<T>, b: &DVector<T>) -> Result<InfoForm<T>> {
    let dy = g_y.dim();
    if a.nrows() != dy || b.len() != dy {
        return Err(Error::DimMismatch {
            expected: dy,
            got: if a.nrows() != dy { a.nrows() } else { b.len() },
        });
    }
    let f = SpdFactor::new(&g_y.cov).ok_or(Error::SingularCovariance)?;
    let pinv_a = f.solve_mat(a);
    let prec = linalg::symmetrize(&(a.transpose() * pinv_a));
    let info = a.transpose() * f.solve_vec(&(&g_y.mean - b));
    Ok(InfoForm { prec, info })
}

/// Sum of information-form potentials over a `d`-dimensional variable
/// (their pointwise product).  An empty list yields the unit potential.
pub fn info_product<T: Real>(d: usize, terms: &[InfoForm<T>]) -> Result<InfoForm<T>> {
    let mut prec = DMatrix::zeros(d, d);
    let mut info = DVector::zeros(d);
    for t in terms {
        if t.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: t.dim(),
            });
        }
        prec += &t.prec;
        info += &t.info;
    }
    Ok(InfoForm {
        prec: linalg::symmetrize(&prec),
        info,
    })
}

/// Marginal of a linear combination of independent Gaussian inputs plus
/// noise: `x = Σ Bᵢ uᵢ + v`, `v ~ N(0, Q)` gives
/// `x ~ N(Σ Bᵢ ūᵢ, Q + Σ Bᵢ Pᵢ Bᵢᵀ)`.
///
/// Point-mass inputs (zero covariance) contribute only a mean shift, which
/// is how deterministic inputs and instantiated parents enter.
pub fn marginalize_linear<T: Real>(
    coeffs: &[(&DMatrix<T>, &Gaussian<T>)],
    noise_cov: &DMatrix<T>,
) -> Result<Gaussian<T>> {
    let d = noise_cov.nrows();
    if noise_cov.ncols() != d || d == 0 {
        return Err(Error::DimMismatch {
            expected: d.max(1),
            got: noise_cov.ncols(),
        });
    }
    let mut mean = DVector::zeros(d);
    let mut cov = noise_cov.clone();
    for (b, u) in coeffs {
        if b.nrows() != d || b.ncols() != u.dim() {
            return Err(Error::DimMismatch {
                expected: d,
                got: b.nrows(),
            });
        }
        mean += *b * &u.mean;
        cov += *b * &u.cov * b.transpose();
    }
    Gaussian::new(mean, linalg::symmetrize(&cov))
}

/// Ordered partition of a stacked state vector into per-node blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    entries: Vec<(NodeId, usize)>,
}

impl BlockLayout {
    pub fn new(entries: Vec<(NodeId, usize)>) -> Result<Self> {
        for (i, (id, d)) in entries.iter().enumerate() {
            if *d == 0 {
                return Err(Error::EmptyDimension);
            }
            if entries[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::DuplicateNode(id.clone()));
            }
        }
        Ok(BlockLayout { entries })
    }

    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|(_, d)| d).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Node ids in block order.
    pub fn ids(&self) -> impl Iterator<Item = &NodeId> {
        self.entries.iter().map(|(id, _)| id)
    }

    /// Index range of `id`'s block within the stacked vector.
    pub fn range(&self, id: &NodeId) -> Option<Range<usize>> {
        let mut start = 0;
        for (node, d) in &self.entries {
            if node == id {
                return Some(start..start + d);
            }
            start += d;
        }
        None
    }

    fn without(&self, id: &NodeId) -> BlockLayout {
        BlockLayout {
            entries: self
                .entries
                .iter()
                .filter(|(node, _)| node != id)
                .cloned()
                .collect(),
        }
    }
}

/// A joint Gaussian over several named blocks: the full distribution plus
/// the layout mapping node ids to index ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian<T = f64> {
    dist: Gaussian<T>,
    layout: BlockLayout,
}

impl<T: Real> JointGaussian<T> {
    pub fn new(dist: Gaussian<T>, layout: BlockLayout) -> Result<Self> {
        if layout.total_dim() != dist.dim() {
            return Err(Error::DimMismatch {
                expected: dist.dim(),
                got: layout.total_dim(),
            });
        }
        Ok(JointGaussian { dist, layout })
    }

    pub fn dist(&self) -> &Gaussian<T> {
        &self.dist
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    /// Marginal distribution of one block.
    pub fn marginal(&self, id: &NodeId) -> Result<Gaussian<T>> {
        let r = self
            .layout
            .range(id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))?;
        let idx: Vec<usize> = r.collect();
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.dist.mean[i]));
        let cov = self.dist.cov.select_rows(&idx).select_columns(&idx);
        Ok(Gaussian::new_unchecked(mean, linalg::symmetrize(&cov)))
    }

    /// Cross-covariance `Cov(a, b)` between two blocks.
    pub fn cross_cov(&self, a: &NodeId, b: &NodeId) -> Result<DMatrix<T>> {
        let ra = self
            .layout
            .range(a)
            .ok_or_else(|| Error::UnknownNode(a.clone()))?;
        let rb = self
            .layout
            .range(b)
            .ok_or_else(|| Error::UnknownNode(b.clone()))?;
        let ia: Vec<usize> = ra.collect();
        let ib: Vec<usize> = rb.collect();
        Ok(self.dist.cov.select_rows(&ia).select_columns(&ib))
    }

    /// Conditions the joint on one block taking an exact value, returning
    /// the joint over the remaining blocks:
    /// `x̂ = x̄_x + P_xy P_yy⁻¹ (y − ȳ)`, `P = P_xx − P_xy P_yy⁻¹ P_yx`.
    pub fn condition(&self, id: &NodeId, value: &DVector<T>) -> Result<JointGaussian<T>> {
        let r = self
            .layout
            .range(id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))?;
        if value.len() != r.len() {
            return Err(Error::DimMismatch {
                expected: r.len(),
                got: value.len(),
            });
        }
        if self.layout.len() == 1 {
            return Err(Error::EmptyDimension);
        }
        let y_idx: Vec<usize> = r.clone().collect();
        let x_idx: Vec<usize> = (0..self.dim()).filter(|i| !r.contains(i)).collect();

        let pyy = self.dist.cov.select_rows(&y_idx).select_columns(&y_idx);
        let f = SpdFactor::new(&pyy).ok_or(Error::SingularCovariance)?;
        let pxy = self.dist.cov.select_rows(&x_idx).select_columns(&y_idx);
        let pyx = self.dist.cov.select_rows(&y_idx).select_columns(&x_idx);
        let pxx = self.dist.cov.select_rows(&x_idx).select_columns(&x_idx);

        let mean_y = DVector::from_iterator(y_idx.len(), y_idx.iter().map(|&i| self.dist.mean[i]));
        let mean_x = DVector::from_iterator(x_idx.len(), x_idx.iter().map(|&i| self.dist.mean[i]));

        let mean = mean_x + &pxy * f.solve_vec(&(value - mean_y));
        let cov = linalg::symmetrize(&(pxx - &pxy * f.solve_mat(&pyx)));
        JointGaussian::new(Gaussian::new(mean, cov)?, self.layout.without(id))
    }
}
