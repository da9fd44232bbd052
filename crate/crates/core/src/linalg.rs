//! Dense complex linear algebra for the small dimensions that occur here.
//!
//! Local spaces have dimension `h` up to about 16 and superoperators act on
//! `h²`-dimensional operator spaces, so everything is dense and backed by
//! `nalgebra`. Rank and support decisions use thresholds relative to the
//! norm of the matrix they are taken on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Gram-matrix tolerance for orthonormal bases.
pub const TOL_ORTHO: f64 = 1e-10;
/// Idempotence / self-adjointness tolerance for projectors.
pub const TOL_IDEM: f64 = 1e-10;
/// Default relative threshold for support and rank decisions.
pub const TOL_SUPPORT: f64 = 1e-10;

const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix has a negative eigenvalue {value:.3e}")]
    NegativeEigenvalue { value: f64 },
    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("basis is not orthonormal (Gram deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Hilbert-Schmidt inner product `Tr(a* b)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Column-major vectorization.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, rows: usize) -> CMatrix {
    let cols = if rows == 0 { 0 } else { v.len() / rows };
    CMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

pub fn basis_vector(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = c(1.0, 0.0);
    v
}

fn hermiticity_check(h: &CMatrix, tol: f64) -> Result<(), LinalgError> {
    if !h.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: h.nrows(),
            found: h.ncols(),
        });
    }
    if !is_finite(h) {
        return Err(LinalgError::NonFinite);
    }
    let deviation = frobenius(&(h - h.adjoint()));
    if deviation > tol * frobenius(h).max(1.0) {
        return Err(LinalgError::NotHermitian { deviation });
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned in
/// descending order, eigenvectors as the matching columns.
pub fn eig_hermitian(h: &CMatrix) -> Result<(Vec<f64>, CMatrix), LinalgError> {
    hermiticity_check(h, 1e-10)?;
    let n = h.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    let eig = hermitian_part(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// A linear subspace of `C^n` carried by an orthonormal basis (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: CMatrix,
}

impl Subspace {
    pub fn zero(ambient_dim: usize) -> Self {
        Subspace {
            basis: CMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Subspace {
            basis: identity(ambient_dim),
        }
    }

    /// Span of a subset of the canonical basis vectors.
    pub fn canonical(ambient_dim: usize, indices: &[usize]) -> Self {
        let mut basis = CMatrix::zeros(ambient_dim, indices.len());
        for (k, &i) in indices.iter().enumerate() {
            basis[(i, k)] = c(1.0, 0.0);
        }
        Subspace { basis }
    }

    /// Wraps a basis that is already orthonormal.
    pub fn from_orthonormal(basis: CMatrix) -> Result<Self, LinalgError> {
        if !is_finite(&basis) {
            return Err(LinalgError::NonFinite);
        }
        let gram = basis.adjoint() * &basis;
        let deviation = frobenius(&(gram - identity(basis.ncols())));
        if deviation > TOL_ORTHO {
            return Err(LinalgError::NotOrthonormal { deviation });
        }
        Ok(Subspace { basis })
    }

    /// Span of the columns of `vectors`; directions with singular value below
    /// `rel_tol · max(σ_max, 1)` are dropped.
    pub fn span(vectors: &CMatrix, rel_tol: f64) -> Self {
        let n = vectors.nrows();
        if vectors.ncols() == 0 || n == 0 {
            return Subspace::zero(n);
        }
        let svd = vectors.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let threshold = rel_tol * smax.max(1.0);
        let mut keep: Vec<(usize, f64)> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > threshold)
            .map(|(i, &s)| (i, s))
            .collect();
        keep.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut basis = CMatrix::zeros(n, keep.len());
        for (k, (i, _)) in keep.iter().enumerate() {
            basis.set_column(k, &u.column(*i));
        }
        Subspace { basis }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn projector_matrix(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    pub fn projector(&self) -> Projector {
        Projector {
            matrix: self.projector_matrix(),
            subspace: self.clone(),
        }
    }

    /// Sum `self + other`.
    pub fn join(&self, other: &Subspace) -> Subspace {
        let mut cols = CMatrix::zeros(self.ambient_dim(), self.dim() + other.dim());
        cols.columns_mut(0, self.dim()).copy_from(&self.basis);
        cols.columns_mut(self.dim(), other.dim())
            .copy_from(&other.basis);
        Subspace::span(&cols, 1e-10)
    }

    /// Image of the subspace under `op`.
    pub fn image(&self, op: &CMatrix) -> Subspace {
        Subspace::span(&(op * &self.basis), 1e-10)
    }

    /// Orthogonal complement of `inner` relative to `self` (assumes
    /// `inner ⊂ self`).
    pub fn minus(&self, inner: &Subspace) -> Subspace {
        let p = identity(self.ambient_dim()) - inner.projector_matrix();
        Subspace::span(&(p * &self.basis), 1e-8)
    }

    /// Intersection of two subspaces.
    pub fn intersect(&self, other: &Subspace) -> Subspace {
        let n = self.ambient_dim();
        if self.is_zero() || other.is_zero() {
            return Subspace::zero(n);
        }
        // v ∈ self with (1 − P_other) v = 0
        let residual = (identity(n) - other.projector_matrix()) * &self.basis;
        let gram = residual.adjoint() * &residual;
        let (vals, vecs) = eig_hermitian(&hermitian_part(&gram)).expect("Gram matrix is Hermitian");
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] < 1e-12).collect();
        let mut coeffs = CMatrix::zeros(self.dim(), keep.len());
        for (k, &i) in keep.iter().enumerate() {
            coeffs.set_column(k, &vecs.column(i));
        }
        Subspace::span(&(&self.basis * coeffs), 1e-8)
    }

    pub fn contains_vector(&self, v: &CVector, tol: f64) -> bool {
        let r = v - self.projector_matrix() * v;
        r.norm() <= tol * v.norm().max(1.0)
    }

    pub fn contains(&self, other: &Subspace, tol: f64) -> bool {
        let r = &other.basis - self.projector_matrix() * &other.basis;
        frobenius(&r) <= tol
    }

    /// Spectral norm of the difference of the two projectors; equals the sine
    /// of the largest principal angle for subspaces of equal dimension.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.dim() != other.dim() {
            return 1.0;
        }
        spectral_norm(&(self.projector_matrix() - other.projector_matrix()))
    }

    /// Compression `B* m B` of an operator on the ambient space.
    pub fn compress(&self, m: &CMatrix) -> CMatrix {
        self.basis.adjoint() * m * &self.basis
    }

    /// Embeds an operator on the subspace into the ambient space.
    pub fn embed(&self, m: &CMatrix) -> CMatrix {
        &self.basis * m * self.basis.adjoint()
    }
}

/// Orthogonal projection together with the subspace it projects onto.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: CMatrix,
    pub subspace: Subspace,
}

impl Projector {
    pub fn rank(&self) -> usize {
        self.subspace.dim()
    }
}

/// Projector onto the span of eigenvectors of a positive semidefinite `h`
/// whose eigenvalue exceeds `tol · ‖h‖`.
pub fn support_projection(h: &CMatrix, tol: f64) -> Result<Projector, LinalgError> {
    hermiticity_check(h, tol.max(1e-12))?;
    let (vals, vecs) = eig_hermitian(h)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&min) = vals.last() {
        if min < -tol * scale.max(f64::MIN_POSITIVE) && min < -1e-300 {
            return Err(LinalgError::NegativeEigenvalue { value: min });
        }
    }
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| scale > 0.0 && vals[i] > tol * scale)
        .collect();
    let mut basis = CMatrix::zeros(h.nrows(), keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &vecs.column(i));
    }
    Ok(Subspace { basis }.projector())
}

pub fn orthonormal_complement(s: &Subspace) -> Subspace {
    let n = s.ambient_dim();
    let q = identity(n) - s.projector_matrix();
    let (vals, vecs) = eig_hermitian(&hermitian_part(&q)).expect("projector is Hermitian");
    let keep: Vec<usize> = (0..n).filter(|&i| vals[i] > 0.5).collect();
    let mut basis = CMatrix::zeros(n, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &vecs.column(i));
    }
    Subspace { basis }
}

/// All eigenvalues of a general square matrix (complex Schur form).
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if !is_finite(m) {
        return Err(LinalgError::NonFinite);
    }
    // a deflation threshold at machine epsilon can stall on exactly
    // structured superoperators; loosen it step by step
    for eps in [4.0 * f64::EPSILON, 1e-15, 1e-14, 1e-13] {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), eps, SCHUR_MAX_ITER) {
            let (_, t) = schur.unpack();
            return Ok(t.diagonal().iter().cloned().collect());
        }
    }
    Err(LinalgError::NoConvergence {
        iterations: SCHUR_MAX_ITER,
    })
}

pub fn spectral_radius(m: &CMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Index of the dominant eigenvalue: maximum modulus, ties broken by largest
/// real part and then by smallest |imaginary part|.
pub fn select_dominant(values: &[C64], scale: f64) -> Option<usize> {
    let rmax = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tie = 1e-9 * scale.max(rmax).max(f64::MIN_POSITIVE);
    let mut best: Option<usize> = None;
    for (i, z) in values.iter().enumerate() {
        if rmax - z.norm() > tie {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let w = values[b];
                if z.re > w.re + tie || ((z.re - w.re).abs() <= tie && z.im.abs() < w.im.abs()) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Dominant eigenpair with right and left eigenvectors.
#[derive(Debug, Clone)]
pub struct DominantEigen {
    pub value: C64,
    /// `m · right = value · right`, unit norm.
    pub right: CVector,
    /// `left* · m = value · left*`, unit norm.
    pub left: CVector,
    /// Full spectrum the dominant value was selected from.
    pub spectrum: Vec<C64>,
}

fn default_start(n: usize) -> CVector {
    CVector::from_iterator(n, (0..n).map(|k| c(1.0 + 0.1 * ((k as f64) * 0.7).sin(), 0.0)))
}

/// Inverse iteration for the eigenvector of `m` closest to `lambda`.
pub fn inverse_iteration(
    m: &CMatrix,
    lambda: C64,
    start: &CVector,
) -> Result<CVector, LinalgError> {
    let n = m.nrows();
    let scale = frobenius(m).max(1.0);
    let dir = if lambda.norm() > 0.0 {
        lambda / lambda.norm()
    } else {
        c(1.0, 0.0)
    };
    let mut delta = 1e-10 * scale;
    for _ in 0..6 {
        let shifted = m - identity(n) * (lambda + dir * delta);
        let lu = shifted.full_piv_lu();
        let mut v = start.clone();
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let nrm = x.norm();
                    if nrm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = x / c(nrm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let residual = (m * &v - &v * lambda).norm();
            if residual <= 1e-9 * scale {
                return Ok(v);
            }
        }
        delta *= 10.0;
    }
    Err(LinalgError::NoConvergence {
        iterations: SCHUR_MAX_ITER,
    })
}

/// Dominant eigenvalue with its right and left eigenvectors.
pub fn eig_dominant(m: &CMatrix) -> Result<DominantEigen, LinalgError> {
    let start = default_start(m.nrows());
    eig_dominant_from(m, &start, &start)
}

/// As [`eig_dominant`], seeding inverse iteration with the given vectors.
pub fn eig_dominant_from(
    m: &CMatrix,
    right_start: &CVector,
    left_start: &CVector,
) -> Result<DominantEigen, LinalgError> {
    let spectrum = eigenvalues(m)?;
    if spectrum.is_empty() {
        return Err(LinalgError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let idx = select_dominant(&spectrum, 0.0).ok_or(LinalgError::NoConvergence {
        iterations: SCHUR_MAX_ITER,
    })?;
    let value = spectrum[idx];
    let right = inverse_iteration(m, value, right_start)?;
    let left = inverse_iteration(&m.adjoint(), value.conj(), left_start)?;
    Ok(DominantEigen {
        value,
        right,
        left,
        spectrum,
    })
}

/// Solves `a x = b` by fully pivoted LU.
pub fn solve_linear(a: &CMatrix, b: &CVector) -> Result<CVector, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if b.len() != a.nrows() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.nrows(),
            found: b.len(),
        });
    }
    if a.nrows() == 0 {
        return Ok(CVector::zeros(0));
    }
    if !is_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    let lu = a.clone().full_piv_lu();
    let pivots: Vec<f64> = lu.u().diagonal().iter().map(|z| z.norm()).collect();
    let pmax = pivots.iter().cloned().fold(0.0, f64::max);
    let pmin = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if pmax == 0.0 || pmin < 1e-12 * pmax {
        return Err(LinalgError::Singular);
    }
    lu.solve(b).ok_or(LinalgError::Singular)
}

/// Real-linear Gram-Schmidt over Hermitian matrices with the inner product
/// `Re Tr(a b)`. Keeps at most `limit` elements.
pub fn hermitian_basis(candidates: &[CMatrix], limit: usize, tol: f64) -> Vec<CMatrix> {
    let mut out: Vec<CMatrix> = Vec::new();
    for cand in candidates {
        if out.len() >= limit {
            break;
        }
        let scale = frobenius(cand);
        if scale <= tol {
            continue;
        }
        let mut x = cand.clone();
        for _ in 0..2 {
            for b in &out {
                let proj = hs_inner(b, &x).re;
                x -= b * c(proj, 0.0);
            }
        }
        let nrm = frobenius(&x);
        if nrm > tol * scale.max(1.0) {
            out.push(x / c(nrm, 0.0));
        }
    }
    out
}
