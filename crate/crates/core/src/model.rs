//! The walk model and its local channel.
//!
//! A [`WalkModel`] is a list of Kraus operators `L_i` on the internal space
//! together with the lattice shift `s_i` each one carries. Everything about
//! the asymptotics is determined by the local channel
//! `σ ↦ Σ_i L_i σ L_i*` and its exponential deformations, which are exposed
//! through [`ChannelView`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, frobenius, hermitian_part, identity, trace, CMatrix, CVector, LinalgError, Subspace,
};

/// Normalization tolerance for `Σ L_i* L_i = 1`.
pub const TOL_TP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkModel {
    lattice_dim: usize,
    shifts: Vec<Vec<i64>>,
    kraus: Vec<CMatrix>,
}

impl WalkModel {
    /// Builds a model and checks shapes and trace preservation.
    pub fn new(lattice_dim: usize, shifts: Vec<Vec<i64>>, kraus: Vec<CMatrix>) -> Result<Self> {
        let model = WalkModel::new_unchecked(lattice_dim, shifts, kraus)?;
        model.validate()?;
        Ok(model)
    }

    /// Shape checks only; trace preservation is left to [`WalkModel::validate`].
    pub fn new_unchecked(
        lattice_dim: usize,
        shifts: Vec<Vec<i64>>,
        kraus: Vec<CMatrix>,
    ) -> Result<Self> {
        if lattice_dim == 0 {
            return Err(Error::InvalidModel("lattice dimension must be positive".into()));
        }
        if kraus.is_empty() {
            return Err(Error::InvalidModel("at least one Kraus operator is required".into()));
        }
        if shifts.len() != kraus.len() {
            return Err(Error::InvalidModel(format!(
                "{} shifts for {} Kraus operators",
                shifts.len(),
                kraus.len()
            )));
        }
        let h = kraus[0].nrows();
        if h == 0 {
            return Err(Error::InvalidModel("local dimension must be positive".into()));
        }
        for (i, k) in kraus.iter().enumerate() {
            if k.nrows() != h || k.ncols() != h {
                return Err(Error::InvalidModel(format!(
                    "Kraus operator {i} is {}x{}, expected {h}x{h}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            if !linalg::is_finite(k) {
                return Err(Error::InvalidModel(format!("Kraus operator {i} has non-finite entries")));
            }
        }
        for (i, s) in shifts.iter().enumerate() {
            if s.len() != lattice_dim {
                return Err(Error::InvalidModel(format!(
                    "shift {i} has {} components, expected {lattice_dim}",
                    s.len()
                )));
            }
        }
        if shifts.iter().all(|s| s.iter().all(|&x| x == 0)) {
            return Err(Error::InvalidModel("all shifts are zero".into()));
        }
        Ok(WalkModel {
            lattice_dim,
            shifts,
            kraus,
        })
    }

    pub fn lattice_dim(&self) -> usize {
        self.lattice_dim
    }

    pub fn local_dim(&self) -> usize {
        self.kraus[0].nrows()
    }

    pub fn shifts(&self) -> &[Vec<i64>] {
        &self.shifts
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn branch_count(&self) -> usize {
        self.kraus.len()
    }

    /// Deviation `‖Σ L_i* L_i − 1‖_F`.
    pub fn normalization_deviation(&self) -> f64 {
        let h = self.local_dim();
        let sum = self
            .kraus
            .iter()
            .fold(CMatrix::zeros(h, h), |acc, k| acc + k.adjoint() * k);
        frobenius(&(sum - identity(h)))
    }

    pub fn validate(&self) -> Result<()> {
        let deviation = self.normalization_deviation();
        if deviation > TOL_TP {
            return Err(Error::NotTracePreserving { deviation });
        }
        Ok(())
    }

    /// `u · s_i` for every branch.
    pub fn tilt_exponents(&self, u: &[f64]) -> Vec<f64> {
        self.shifts
            .iter()
            .map(|s| s.iter().zip(u).map(|(&si, &ui)| si as f64 * ui).sum())
            .collect()
    }

    /// The undeformed channel on the whole internal space.
    pub fn channel(&self) -> ChannelView {
        ChannelView::new(self, Subspace::full(self.local_dim()), vec![0.0; self.lattice_dim])
            .expect("full view is always consistent")
    }

    /// Restriction (compression) of the channel to `subspace`.
    pub fn restricted(&self, subspace: &Subspace) -> Result<ChannelView> {
        ChannelView::new(self, subspace.clone(), vec![0.0; self.lattice_dim])
    }

    /// Compression to `subspace`, deformed by `u`.
    pub fn deformed(&self, subspace: &Subspace, u: &[f64]) -> Result<ChannelView> {
        ChannelView::new(self, subspace.clone(), u.to_vec())
    }

    /// Whether `subspace` is an enclosure: `L_i P = P L_i P` for every i.
    pub fn is_enclosure(&self, subspace: &Subspace, tol: f64) -> bool {
        self.enclosure_defect(subspace) <= tol
    }

    /// `max_i ‖L_i P − P L_i P‖_F`.
    pub fn enclosure_defect(&self, subspace: &Subspace) -> f64 {
        let p = subspace.projector_matrix();
        self.kraus
            .iter()
            .map(|k| frobenius(&(k * &p - &p * k * &p)))
            .fold(0.0, f64::max)
    }
}

/// The channel compressed to a subspace and deformed by `u ∈ R^d`; its Kraus
/// family is `{e^{u·s_i/2} B* L_i B}` where `B` is the subspace basis.
#[derive(Debug, Clone)]
pub struct ChannelView {
    subspace: Subspace,
    u: Vec<f64>,
    shifts: Vec<Vec<i64>>,
    /// Compressed, undeformed Kraus operators in subspace coordinates.
    compressed: Vec<CMatrix>,
    /// `e^{u·s_i}` per branch.
    weights: Vec<f64>,
}

impl ChannelView {
    pub fn new(model: &WalkModel, subspace: Subspace, u: Vec<f64>) -> Result<Self> {
        if subspace.ambient_dim() != model.local_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.local_dim(),
                found: subspace.ambient_dim(),
            });
        }
        if u.len() != model.lattice_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.lattice_dim(),
                found: u.len(),
            });
        }
        let compressed = model.kraus().iter().map(|k| subspace.compress(k)).collect();
        let weights = model.tilt_exponents(&u).into_iter().map(f64::exp).collect();
        Ok(ChannelView {
            subspace,
            u,
            shifts: model.shifts().to_vec(),
            compressed,
            weights,
        })
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }

    pub fn deformation(&self) -> &[f64] {
        &self.u
    }

    /// Dimension `k` of the compression domain.
    pub fn dim(&self) -> usize {
        self.subspace.dim()
    }

    pub fn shifts(&self) -> &[Vec<i64>] {
        &self.shifts
    }

    /// Undeformed compressed Kraus operators.
    pub fn compressed_kraus(&self) -> &[CMatrix] {
        &self.compressed
    }

    /// `e^{u·s_i}` per branch.
    pub fn branch_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same compression at a different deformation.
    pub fn with_deformation(&self, u: &[f64]) -> ChannelView {
        let weights = self
            .shifts
            .iter()
            .map(|s| s.iter().zip(u).map(|(&si, &ui)| si as f64 * ui).sum::<f64>().exp())
            .collect();
        ChannelView {
            subspace: self.subspace.clone(),
            u: u.to_vec(),
            shifts: self.shifts.clone(),
            compressed: self.compressed.clone(),
            weights,
        }
    }

    fn check_dim(&self, m: &CMatrix) -> Result<()> {
        let k = self.dim();
        if m.nrows() != k || m.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: m.nrows().max(m.ncols()),
            });
        }
        Ok(())
    }

    /// `σ ↦ Σ_i e^{u·s_i} K_i σ K_i*` on the compression domain.
    pub fn apply(&self, sigma: &CMatrix) -> Result<CMatrix> {
        self.check_dim(sigma)?;
        let k = self.dim();
        let mut out = CMatrix::zeros(k, k);
        for (kr, &w) in self.compressed.iter().zip(&self.weights) {
            out += kr * sigma * kr.adjoint() * c(w, 0.0);
        }
        Ok(out)
    }

    /// Dual map `x ↦ Σ_i e^{u·s_i} K_i* x K_i`.
    pub fn apply_dual(&self, x: &CMatrix) -> Result<CMatrix> {
        self.check_dim(x)?;
        let k = self.dim();
        let mut out = CMatrix::zeros(k, k);
        for (kr, &w) in self.compressed.iter().zip(&self.weights) {
            out += kr.adjoint() * x * kr * c(w, 0.0);
        }
        Ok(out)
    }

    /// `Σ_i (u·s_i) K_i σ K_i*` evaluated with undeformed Kraus operators:
    /// the first derivative of `t ↦ apply` at the current deformation along
    /// `direction`, up to the deformation weights.
    pub fn apply_derivative(&self, direction: &[f64], order: i32, sigma: &CMatrix) -> Result<CMatrix> {
        self.check_dim(sigma)?;
        let k = self.dim();
        let mut out = CMatrix::zeros(k, k);
        for ((kr, &w), s) in self.compressed.iter().zip(&self.weights).zip(&self.shifts) {
            let us: f64 = s.iter().zip(direction).map(|(&si, &ui)| si as f64 * ui).sum();
            let factor = w * us.powi(order);
            if factor != 0.0 {
                out += kr * sigma * kr.adjoint() * c(factor, 0.0);
            }
        }
        Ok(out)
    }

    /// Superoperator matrix in the column-major vectorization convention.
    pub fn to_matrix(&self) -> SuperoperatorMatrix {
        let k = self.dim();
        let mut m = CMatrix::zeros(k * k, k * k);
        for (kr, &w) in self.compressed.iter().zip(&self.weights) {
            let conj = kr.map(|z| z.conj());
            m += conj.kronecker(kr) * c(w, 0.0);
        }
        SuperoperatorMatrix { matrix: m, dim: k }
    }

    /// Spectral radius of the deformed compressed channel.
    pub fn spectral_radius(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(0.0);
        }
        Ok(linalg::spectral_radius(&self.to_matrix().matrix)?)
    }

    /// Perron eigenvalue and positive eigenvectors of the channel and its dual.
    pub fn perron(&self) -> Result<PerronData> {
        let k = self.dim();
        if k == 0 {
            return Err(Error::EmptySubspace);
        }
        let sup = self.to_matrix();
        let start = linalg::vectorize(&identity(k));
        let dom = linalg::eig_dominant_from(&sup.matrix, &start, &start)?;
        let lambda = dom.value.re;
        if lambda <= 0.0 || dom.value.im.abs() > 1e-9 * lambda.max(1.0) {
            return Err(LinalgError::NoConvergence { iterations: 0 }.into());
        }
        let tau = positive_normalized(&dom.right, k, Normalization::Trace)?;
        let w = positive_normalized(&dom.left, k, Normalization::Frobenius)?;
        let scale = lambda.max(f64::MIN_POSITIVE);
        let mut second = 0.0f64;
        let mut multiplicity = 0usize;
        for z in &dom.spectrum {
            if (z - dom.value).norm() <= 1e-8 * scale.max(1e-300) {
                multiplicity += 1;
            }
        }
        let mut skipped = false;
        for z in &dom.spectrum {
            if !skipped && (z - dom.value).norm() == 0.0 {
                skipped = true;
                continue;
            }
            second = second.max(z.norm());
        }
        Ok(PerronData {
            lambda,
            tau,
            w,
            spectral_gap: lambda - second,
            multiplicity,
        })
    }
}

enum Normalization {
    Trace,
    Frobenius,
}

/// Rotates an eigenvector (as an operator) by a global phase so that it is
/// positive semidefinite, then normalizes.
fn positive_normalized(v: &CVector, k: usize, norm: Normalization) -> Result<CMatrix> {
    let x = linalg::unvectorize(v, k);
    let tr = trace(&x);
    let phase = if tr.norm() > 1e-12 * frobenius(&x) {
        tr.conj() / tr.norm()
    } else {
        // fall back to the largest diagonal entry
        let (i, _) = (0..k)
            .map(|i| (i, x[(i, i)].norm()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let d = x[(i, i)];
        if d.norm() == 0.0 {
            return Err(LinalgError::NoConvergence { iterations: 0 }.into());
        }
        d.conj() / d.norm()
    };
    let mut x = hermitian_part(&(x * phase));
    let scale = match norm {
        Normalization::Trace => trace(&x).re,
        Normalization::Frobenius => frobenius(&x),
    };
    if scale <= 0.0 {
        return Err(LinalgError::NoConvergence { iterations: 0 }.into());
    }
    x /= c(scale, 0.0);
    let (vals, _) = linalg::eig_hermitian(&x)?;
    let min = vals.last().cloned().unwrap_or(0.0);
    let size = vals.first().cloned().unwrap_or(0.0).abs().max(1e-300);
    if min < -1e-8 * size.max(1.0) {
        return Err(LinalgError::NegativeEigenvalue { value: min }.into());
    }
    Ok(x)
}

/// Matrix of a superoperator acting on column-major vectorized `k×k`
/// operators.
#[derive(Debug, Clone)]
pub struct SuperoperatorMatrix {
    pub matrix: CMatrix,
    pub dim: usize,
}

impl SuperoperatorMatrix {
    pub fn apply(&self, sigma: &CMatrix) -> CMatrix {
        linalg::unvectorize(&(&self.matrix * linalg::vectorize(sigma)), self.dim)
    }
}

/// Perron root of a (deformed, compressed) channel with its positive
/// eigenvectors.
#[derive(Debug, Clone)]
pub struct PerronData {
    /// Spectral radius `λ_u`.
    pub lambda: f64,
    /// Right eigenvector, positive with unit trace.
    pub tau: CMatrix,
    /// Left (dual) eigenvector, positive with unit Frobenius norm.
    pub w: CMatrix,
    /// `λ_u` minus the largest modulus among the remaining eigenvalues.
    pub spectral_gap: f64,
    /// Number of eigenvalues numerically equal to `λ_u`.
    pub multiplicity: usize,
}

/// On-disk form of a model: complex entries are `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub lattice_dim: usize,
    pub shifts: Vec<Vec<i64>>,
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

pub fn matrix_to_json(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

impl WalkModel {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            lattice_dim: self.lattice_dim,
            shifts: self.shifts.clone(),
            kraus: self.kraus.iter().map(matrix_to_json).collect(),
        }
    }

    /// Parses a model without checking trace preservation.
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let kraus = file
            .kraus
            .iter()
            .map(|k| matrix_from_json(k))
            .collect::<Result<Vec<_>>>()?;
        WalkModel::new_unchecked(file.lattice_dim, file.shifts.clone(), kraus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    /// Parses JSON text; shape errors are reported, normalization is not
    /// checked.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        WalkModel::from_file(&file)
    }
}
