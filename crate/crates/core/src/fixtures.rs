//! Reference models used by the examples, tests and shipped fixture files.

use crate::linalg::{c, CMatrix, C64};
use crate::model::WalkModel;

fn real(rows: usize, entries: &[f64]) -> CMatrix {
    CMatrix::from_row_slice(rows, rows, &entries.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>())
}

/// Two-level walk on Z with a unique invariant state `|e1⟩⟨e1|`.
/// Branch 0 moves left, branch 1 moves right.
pub fn example1() -> WalkModel {
    let s = f64::sqrt;
    let left = real(2, &[s(0.5), 0.0, -s(2.0) / 3.0, s(1.0 / 3.0)]);
    let right = real(2, &[s(1.0 / 6.0), 0.0, 1.0 / 3.0, s(2.0 / 3.0)]);
    WalkModel::new(1, vec![vec![-1], vec![1]], vec![left, right]).expect("example 1 is normalized")
}

/// Four-level family with transient vector `e0`, `p1 + p2 + p3 = 1/2`.
///
/// The `(3,3)` entries are `√(2/3)` (left) and `√(1/3)` (right); these are
/// the values for which `Σ L_i* L_i = 1`.
pub fn four_level(p1: f64, p2: f64, p3: f64) -> WalkModel {
    assert!(
        p1 >= 0.0 && p2 >= 0.0 && p3 >= 0.0 && (p1 + p2 + p3 - 0.5).abs() < 1e-12,
        "four-level family needs p_i >= 0 with sum 1/2"
    );
    let s = f64::sqrt;
    let r2 = 1.0 / s(2.0);
    #[rustfmt::skip]
    let left = real(4, &[
        1.0 / (2.0 * s(2.0)), 0.0, 0.0, 0.0,
        s(p1 / 2.0), r2, 0.0, 0.0,
        s(p2 / 2.0), 0.0, r2, 0.0,
        -s(p3 / 3.0), 0.0, 0.0, s(2.0 / 3.0),
    ]);
    #[rustfmt::skip]
    let right = real(4, &[
        s(3.0 / 8.0), 0.0, 0.0, 0.0,
        -s(p1 / 2.0), r2, 0.0, 0.0,
        -s(p2 / 2.0), 0.0, r2, 0.0,
        s(2.0 * p3 / 3.0), 0.0, 0.0, s(1.0 / 3.0),
    ]);
    WalkModel::new(1, vec![vec![-1], vec![1]], vec![left, right]).expect("four-level family is normalized")
}

/// The `p1 = p2 = 0, p3 = 1/2` member of [`four_level`].
pub fn example2() -> WalkModel {
    four_level(0.0, 0.0, 0.5)
}

/// Orthonormal (complex) basis used by the commuting-normal fixtures.
pub fn commuting_basis() -> CMatrix {
    let s = f64::sqrt;
    let a = 1.0 / s(3.0);
    let b = 1.0 / s(2.0);
    let d = 1.0 / s(6.0);
    #[rustfmt::skip]
    let cols = [
        c(a, 0.0), c(a, 0.0), c(a, 0.0),
        c(0.0, b), c(0.0, -b), c(0.0, 0.0),
        c(d, 0.0), c(d, 0.0), c(-2.0 * d, 0.0),
    ];
    CMatrix::from_column_slice(3, 3, &cols)
}

fn zeta(p: f64, phase: f64) -> C64 {
    C64::from_polar(p.sqrt(), phase)
}

/// Rows `ζ_i = (ζ_{i,right}, ζ_{i,left})`, all distinct.
pub fn commuting_distinct_zetas() -> Vec<[C64; 2]> {
    vec![
        [zeta(0.7, 0.0), zeta(0.3, 0.4)],
        [zeta(0.4, 0.3), zeta(0.6, 0.0)],
        [zeta(0.2, 0.0), zeta(0.8, -1.1)],
    ]
}

/// Rows where the first two coincide, giving a block of multiplicity two.
pub fn commuting_shared_zetas() -> Vec<[C64; 2]> {
    vec![
        [zeta(0.7, 0.0), zeta(0.3, 0.4)],
        [zeta(0.7, 0.0), zeta(0.3, 0.4)],
        [zeta(0.2, 0.0), zeta(0.8, -1.1)],
    ]
}

/// Walk on Z with commuting normal Kraus operators `Σ_i ζ_{i,j} |φ_i⟩⟨φ_i|`;
/// branch 0 moves right, branch 1 moves left.
pub fn commuting(zetas: &[[C64; 2]], basis: &CMatrix) -> WalkModel {
    let h = basis.nrows();
    let mut right = CMatrix::zeros(h, h);
    let mut left = CMatrix::zeros(h, h);
    for (i, row) in zetas.iter().enumerate() {
        let phi = basis.column(i).into_owned();
        let proj = &phi * phi.adjoint();
        right += &proj * row[0];
        left += &proj * row[1];
    }
    WalkModel::new(1, vec![vec![1], vec![-1]], vec![right, left]).expect("commuting model is normalized")
}

pub fn commuting_distinct() -> WalkModel {
    commuting(&commuting_distinct_zetas(), &commuting_basis())
}

pub fn commuting_distinct_with_basis() -> (WalkModel, CMatrix) {
    (commuting_distinct(), commuting_basis())
}

pub fn commuting_shared() -> WalkModel {
    commuting(&commuting_shared_zetas(), &commuting_basis())
}
