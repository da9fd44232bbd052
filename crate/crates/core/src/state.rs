//! Diagonal initial states `ρ = Σ_k ρ(k) ⊗ |k⟩⟨k|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, hermitian_part, trace, CMatrix};
use crate::model::{matrix_from_json, matrix_to_json};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalState {
    entries: Vec<(Vec<i64>, CMatrix)>,
}

impl DiagonalState {
    /// Validates positivity of every `ρ(k)` and total unit trace.
    pub fn new(entries: Vec<(Vec<i64>, CMatrix)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidState("no sites".into()));
        }
        let h = entries[0].1.nrows();
        let d = entries[0].0.len();
        let mut total = 0.0;
        for (site, m) in &entries {
            if site.len() != d {
                return Err(Error::InvalidState("sites have inconsistent dimension".into()));
            }
            if m.nrows() != h || m.ncols() != h {
                return Err(Error::InvalidState("local matrices have inconsistent size".into()));
            }
            if !linalg::is_finite(m) {
                return Err(Error::InvalidState("non-finite entry".into()));
            }
            let dev = linalg::frobenius(&(m - m.adjoint()));
            if dev > 1e-12 * linalg::frobenius(m).max(1.0) {
                return Err(Error::InvalidState(format!("ρ({site:?}) is not Hermitian")));
            }
            let (vals, _) = linalg::eig_hermitian(&hermitian_part(m))?;
            if let Some(&min) = vals.last() {
                if min < -1e-12 {
                    return Err(Error::InvalidState(format!(
                        "ρ({site:?}) has negative eigenvalue {min:.3e}"
                    )));
                }
            }
            total += trace(m).re;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("total trace {total} ≠ 1")));
        }
        Ok(DiagonalState { entries })
    }

    /// `ρ_0 ⊗ |0⟩⟨0|` on a `lattice_dim`-dimensional lattice.
    pub fn at_origin(lattice_dim: usize, rho0: CMatrix) -> Result<Self> {
        DiagonalState::new(vec![(vec![0; lattice_dim], rho0)])
    }

    pub fn entries(&self) -> &[(Vec<i64>, CMatrix)] {
        &self.entries
    }

    pub fn local_dim(&self) -> usize {
        self.entries[0].1.nrows()
    }

    pub fn lattice_dim(&self) -> usize {
        self.entries[0].0.len()
    }

    /// `Σ_k ρ(k)`.
    pub fn local_marginal(&self) -> CMatrix {
        let h = self.local_dim();
        self.entries
            .iter()
            .fold(CMatrix::zeros(h, h), |acc, (_, m)| acc + m)
    }

    /// `Σ_k Tr(x ρ(k))`.
    pub fn expectation(&self, x: &CMatrix) -> f64 {
        trace(&(x * self.local_marginal())).re
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub entries: Vec<StateEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEntry {
    pub site: Vec<i64>,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

impl DiagonalState {
    pub fn to_json(&self) -> String {
        let file = StateFile {
            entries: self
                .entries
                .iter()
                .map(|(site, m)| StateEntry {
                    site: site.clone(),
                    matrix: matrix_to_json(m),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let entries = file
            .entries
            .iter()
            .map(|e| Ok((e.site.clone(), matrix_from_json(&e.matrix)?)))
            .collect::<Result<Vec<_>>>()?;
        DiagonalState::new(entries)
    }
}
