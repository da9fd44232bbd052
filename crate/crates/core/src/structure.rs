//! Fixed-point structure of the local channel.
//!
//! The recurrent space `R` is spanned by the supports of the invariant
//! states and `T = R^⊥` is transient. `R` splits uniquely into blocks
//! `χ_α`, each a sum of mutually orthogonal, isomorphic minimal enclosures.
//! Blocks and minimal enclosures are read off the fixed-point algebra of the
//! dual channel restricted to `R`: a generic Hermitian element of that
//! algebra has one eigenspace per minimal enclosure, and two minimal
//! enclosures lie in the same block exactly when the algebra has an element
//! connecting them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, eig_hermitian, frobenius, hermitian_part, identity, orthonormal_complement,
    support_projection, trace, CMatrix, Subspace, TOL_SUPPORT,
};
use crate::model::{ChannelView, WalkModel};
use crate::state::DiagonalState;

/// Default seed for the random elements of the fixed-point algebra.
pub const DEFAULT_SEED: u64 = 0x0051_0c4a_57ed;

const ENCLOSURE_TOL: f64 = 1e-9;
const MAX_DRAWS: u64 = 5;

/// Hermitian basis of the fixed space `{x : m·vec(x) = vec(x)}` of a
/// superoperator matrix acting on `k×k` operators.
fn fixed_hermitian_basis(m: &CMatrix, k: usize) -> Result<Vec<CMatrix>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let n = k * k;
    let spectrum = linalg::eigenvalues(m)?;
    let scale = linalg::frobenius(m).max(1.0);
    let mut count = 0;
    for z in &spectrum {
        let dist = (z - c(1.0, 0.0)).norm();
        if dist <= 1e-9 * scale {
            count += 1;
        } else if dist < 1e-7 {
            return Err(Error::NumericalDegeneracy { distance: dist });
        }
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let shifted = m - identity(n);
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut candidates = Vec::with_capacity(2 * count);
    for &i in order.iter().take(count) {
        let v = v_t.row(i).adjoint();
        let x = linalg::unvectorize(&v, k);
        candidates.push(hermitian_part(&x));
        candidates.push(hermitian_part(&(x * c(0.0, -1.0))));
    }
    let basis = linalg::hermitian_basis(&candidates, count, 1e-8);
    if basis.len() != count {
        return Err(Error::NumericalDegeneracy { distance: 0.0 });
    }
    Ok(basis)
}

/// Hermitian basis of the invariant operators `{σ : 𝔏(σ) = σ}` of an
/// undeformed view, in the view's coordinates.
pub fn invariant_operators(view: &ChannelView) -> Result<Vec<CMatrix>> {
    if view.deformation().iter().any(|&x| x != 0.0) {
        return Err(Error::Precondition("invariant operators need u = 0".into()));
    }
    fixed_hermitian_basis(&view.to_matrix().matrix, view.dim())
}

/// Hermitian basis of the harmonic operators `{x : 𝔏*(x) = x}` of a view.
pub fn harmonic_operators(view: &ChannelView) -> Result<Vec<CMatrix>> {
    fixed_hermitian_basis(&view.to_matrix().matrix.adjoint(), view.dim())
}

fn abs_operator(x: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = eig_hermitian(x)?;
    let n = x.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, v) in vals.iter().enumerate() {
        let col = vecs.column(k).into_owned();
        out += linalg::outer(&col, &col) * c(v.abs(), 0.0);
    }
    Ok(out)
}

/// Support of `Σ |x_m|` over a family of Hermitian operators, in the
/// coordinates of the family.
fn joint_support(ops: &[CMatrix], k: usize) -> Result<Subspace> {
    let mut sum = CMatrix::zeros(k, k);
    for x in ops {
        sum += abs_operator(x)?;
    }
    Ok(support_projection(&hermitian_part(&sum), TOL_SUPPORT)?.subspace)
}

/// Lifts a subspace given in the coordinates of `outer` to the ambient space.
fn lift(outer: &Subspace, inner: &Subspace) -> Subspace {
    Subspace::from_orthonormal(outer.basis() * inner.basis()).expect("composition of isometries")
}

/// Fast recurrent space: span of the supports of all invariant states.
pub fn recurrent_space(model: &WalkModel) -> Result<Subspace> {
    let fixed = invariant_operators(&model.channel())?;
    joint_support(&fixed, model.local_dim())
}

/// Absorption operator `A(V) = lim 𝔏*^n(p_V)` of an enclosure.
#[derive(Debug, Clone)]
pub struct AbsorptionOperator {
    pub enclosure: Subspace,
    pub matrix: CMatrix,
    /// True when the resolvent system was singular and the limit was
    /// obtained by iterating the dual channel instead.
    pub iterated: bool,
}

impl AbsorptionOperator {
    /// Projection onto the support of `A(V)`.
    pub fn support(&self) -> Result<Subspace> {
        Ok(support_projection(&self.matrix, TOL_SUPPORT)?.subspace)
    }
}

/// Absorption operator of an enclosure.
///
/// Writing `A = p_V + B`, harmonicity of `A` fixes `B` on the part of `V^⊥`
/// that is not itself carried by invariant states; on that part the dual
/// channel compression has spectral radius below one, so `B` solves a
/// nonsingular linear system.
pub fn absorption(model: &WalkModel, enclosure: &Subspace) -> Result<AbsorptionOperator> {
    let defect = model.enclosure_defect(enclosure);
    if defect > ENCLOSURE_TOL {
        return Err(Error::NotAnEnclosure { defect });
    }
    let h = model.local_dim();
    let p_v = enclosure.projector_matrix();
    let comp = orthonormal_complement(enclosure);
    if comp.is_zero() {
        return Ok(AbsorptionOperator {
            enclosure: enclosure.clone(),
            matrix: p_v,
            iterated: false,
        });
    }
    // invariant states living in V^⊥ never reach V
    let cview = model.restricted(&comp)?;
    let parked = fixed_hermitian_basis(&cview.to_matrix().matrix, comp.dim())?;
    let parked = joint_support(&parked, comp.dim())?;
    let open = lift(&comp, &orthonormal_complement(&parked));
    let mut a = p_v.clone();
    if !open.is_zero() {
        let oview = model.restricted(&open)?;
        let r = open.dim();
        let rhs = open.compress(&model.channel().apply_dual(&p_v)?);
        let system = identity(r * r) - oview.to_matrix().matrix.adjoint();
        match linalg::solve_linear(&system, &linalg::vectorize(&rhs)) {
            Ok(x) => a += open.embed(&linalg::unvectorize(&x, r)),
            Err(_) => {
                return Ok(AbsorptionOperator {
                    enclosure: enclosure.clone(),
                    matrix: absorption_by_iteration(model, enclosure, 100_000, 1e-14)?,
                    iterated: true,
                })
            }
        }
    }
    debug_assert_eq!(a.nrows(), h);
    Ok(AbsorptionOperator {
        enclosure: enclosure.clone(),
        matrix: hermitian_part(&a),
        iterated: false,
    })
}

/// `𝔏*^n(p_V)` iterated until successive iterates differ by less than `tol`
/// (the sequence is monotone for an enclosure).
pub fn absorption_by_iteration(
    model: &WalkModel,
    enclosure: &Subspace,
    max_iter: usize,
    tol: f64,
) -> Result<CMatrix> {
    let ch = model.channel();
    let mut x = enclosure.projector_matrix();
    for _ in 0..max_iter {
        let next = ch.apply_dual(&x)?;
        let delta = frobenius(&(&next - &x));
        x = next;
        if delta < tol {
            break;
        }
    }
    Ok(hermitian_part(&x))
}

/// Cesàro average of `𝔏*^n(p_V)` over `n ∈ [window, 2·window)`.
pub fn absorption_cesaro(model: &WalkModel, enclosure: &Subspace, window: usize) -> Result<CMatrix> {
    let ch = model.channel();
    let mut x = enclosure.projector_matrix();
    for _ in 0..window {
        x = ch.apply_dual(&x)?;
    }
    let mut acc = CMatrix::zeros(x.nrows(), x.ncols());
    for _ in 0..window {
        acc += &x;
        x = ch.apply_dual(&x)?;
    }
    Ok(hermitian_part(&(acc / c(window as f64, 0.0))))
}

/// One block `χ_α` of the recurrent space.
#[derive(Debug, Clone)]
pub struct Block {
    pub subspace: Subspace,
    /// One decomposition of the block into minimal enclosures.
    pub minimal_enclosures: Vec<Subspace>,
    /// Invariant state (unit trace, ambient coordinates) of the first
    /// minimal enclosure.
    pub invariant_state: CMatrix,
    pub absorption: AbsorptionOperator,
    /// Absorption operators of the minimal enclosures, in order.
    pub enclosure_absorption: Vec<AbsorptionOperator>,
}

impl Block {
    pub fn multiplicity(&self) -> usize {
        self.minimal_enclosures.len()
    }

    pub fn representative(&self) -> &Subspace {
        &self.minimal_enclosures[0]
    }
}

#[derive(Debug, Clone)]
pub struct SpaceDecomposition {
    pub recurrent: Subspace,
    pub transient: Subspace,
    pub blocks: Vec<Block>,
}

impl SpaceDecomposition {
    pub fn local_dim(&self) -> usize {
        self.recurrent.ambient_dim()
    }

    pub fn is_recurrent(&self) -> bool {
        self.transient.is_zero()
    }

    /// Index of the block whose subspace matches `s` within `tol`.
    pub fn find_block(&self, s: &Subspace, tol: f64) -> Option<usize> {
        self.blocks.iter().position(|b| b.subspace.distance(s) <= tol)
    }

    /// Index of the block containing `s`.
    pub fn block_containing(&self, s: &Subspace) -> Option<usize> {
        self.blocks.iter().position(|b| b.subspace.contains(s, 1e-8))
    }
}

/// Smallest index where the projector has appreciable diagonal weight; used
/// to order blocks deterministically.
fn ordering_key(s: &Subspace) -> (usize, usize) {
    let p = s.projector_matrix();
    let first = (0..p.nrows())
        .find(|&i| p[(i, i)].re > 1e-6)
        .unwrap_or(usize::MAX);
    (first, s.dim())
}

fn random_element(basis: &[CMatrix], rng: &mut ChaCha8Rng) -> CMatrix {
    let k = basis[0].nrows();
    let mut x = CMatrix::zeros(k, k);
    for b in basis {
        let w: f64 = rng.random_range(-1.0..1.0);
        x += b * c(w / frobenius(b), 0.0);
    }
    hermitian_part(&x)
}

/// Eigenspaces of a Hermitian matrix, clustering eigenvalues closer than
/// `1e-7 · ‖x‖`. Subspaces are in the coordinates of `x`.
fn eigenspaces(x: &CMatrix) -> Result<Vec<Subspace>> {
    let (vals, vecs) = eig_hermitian(x)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=vals.len() {
        if i == vals.len() || vals[i - 1] - vals[i] > 1e-7 * scale {
            let cols = vecs.columns(start, i - start).into_owned();
            out.push(Subspace::from_orthonormal(cols)?);
            start = i;
        }
    }
    Ok(out)
}

/// Splits `piece` (coordinates of `x`) by the eigenspaces of `x` compressed
/// to it.
fn refine(piece: &Subspace, x: &CMatrix) -> Result<Vec<Subspace>> {
    let local = hermitian_part(&piece.compress(x));
    Ok(eigenspaces(&local)?
        .into_iter()
        .map(|s| lift(piece, &s))
        .collect())
}

/// Unique invariant state of an irreducible restriction, embedded in the
/// ambient space.
pub fn enclosure_state(model: &WalkModel, enclosure: &Subspace) -> Result<CMatrix> {
    let view = model.restricted(enclosure)?;
    let fixed = invariant_operators(&view)?;
    if fixed.len() != 1 {
        return Err(Error::NotIrreducible {
            fixed_dim: fixed.len(),
        });
    }
    let x = &fixed[0];
    let t = trace(x).re;
    if t.abs() < 1e-12 {
        return Err(Error::NotIrreducible { fixed_dim: 1 });
    }
    Ok(enclosure.embed(&(x / c(t, 0.0))))
}

fn is_minimal(model: &WalkModel, s: &Subspace) -> Result<bool> {
    if model.enclosure_defect(s) > ENCLOSURE_TOL {
        return Ok(false);
    }
    Ok(invariant_operators(&model.restricted(s)?)?.len() == 1)
}

pub fn decompose(model: &WalkModel) -> Result<SpaceDecomposition> {
    decompose_seeded(model, DEFAULT_SEED)
}

/// Recurrent/transient split, blocks and one decomposition of each block
/// into minimal enclosures, with absorption operators.
pub fn decompose_seeded(model: &WalkModel, seed: u64) -> Result<SpaceDecomposition> {
    let recurrent = recurrent_space(model)?;
    let transient = orthonormal_complement(&recurrent);
    let k = recurrent.dim();
    let rview = model.restricted(&recurrent)?;
    let algebra = harmonic_operators(&rview)?;
    if algebra.is_empty() {
        return Err(Error::NumericalDegeneracy { distance: 0.0 });
    }

    let mut pieces: Option<Vec<Subspace>> = None;
    for draw in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw);
        let x1 = random_element(&algebra, &mut rng);
        let x2 = random_element(&algebra, &mut rng);
        let mut candidate = Vec::new();
        for s in eigenspaces(&x1)? {
            candidate.extend(refine(&s, &x2)?);
        }
        let mut ok = true;
        for s in &candidate {
            if !is_minimal(model, &lift(&recurrent, s))? {
                ok = false;
                break;
            }
        }
        if ok {
            pieces = Some(candidate);
            break;
        }
    }
    let pieces = pieces.ok_or(Error::DecompositionFailed {
        attempts: MAX_DRAWS as usize,
    })?;

    // union-find over "connected by an element of the algebra"
    let n = pieces.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let linked = algebra.iter().any(|x| {
                let off = pieces[a].basis().adjoint() * x * pieces[b].basis();
                frobenius(&off) > 1e-8 * frobenius(x)
            });
            if linked {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: Vec<Vec<Subspace>> = Vec::new();
    let mut group_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        let g = match group_of[r] {
            Some(g) => g,
            None => {
                groups.push(Vec::new());
                group_of[r] = Some(groups.len() - 1);
                groups.len() - 1
            }
        };
        groups[g].push(lift(&recurrent, &pieces[i]));
    }

    let mut blocks = Vec::with_capacity(groups.len());
    for mut mins in groups {
        mins.sort_by_key(ordering_key);
        let subspace = mins
            .iter()
            .skip(1)
            .fold(mins[0].clone(), |acc, s| acc.join(s));
        let invariant_state = enclosure_state(model, &mins[0])?;
        let absorption_op = absorption(model, &subspace)?;
        let enclosure_absorption = mins
            .iter()
            .map(|s| absorption(model, s))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(Block {
            subspace,
            minimal_enclosures: mins,
            invariant_state,
            absorption: absorption_op,
            enclosure_absorption,
        });
    }
    blocks.sort_by_key(|b| ordering_key(&b.subspace));
    debug_assert_eq!(blocks.iter().map(|b| b.subspace.dim()).sum::<usize>(), k);
    Ok(SpaceDecomposition {
        recurrent,
        transient,
        blocks,
    })
}

/// Smallest enclosure containing the supports of all `ρ(k)`.
pub fn reachable_space(model: &WalkModel, rho: &DiagonalState) -> Result<Subspace> {
    let h = model.local_dim();
    if rho.local_dim() != h {
        return Err(Error::DimensionMismatch {
            expected: h,
            found: rho.local_dim(),
        });
    }
    let mut space = support_projection(&hermitian_part(&rho.local_marginal()), TOL_SUPPORT)?.subspace;
    for _ in 0..=h {
        let mut next = space.clone();
        for k in model.kraus() {
            next = next.join(&space.image(k));
        }
        if next.dim() == space.dim() {
            return Ok(next);
        }
        space = next;
    }
    Ok(space)
}

/// Absorption weights of an initial state.
#[derive(Debug, Clone)]
pub struct Weights {
    /// `a_α` per block, in block order.
    pub blocks: Vec<f64>,
    /// `a_{α,β}` per block and minimal enclosure.
    pub enclosures: Vec<Vec<f64>>,
}

impl Weights {
    pub fn total(&self) -> f64 {
        self.blocks.iter().sum()
    }
}

/// `a_α = Σ_k Tr(A(χ_α) ρ(k))` and `a_{α,β} = Σ_k Tr(A(V_{α,β}) ρ(k))`.
pub fn weights(decomposition: &SpaceDecomposition, rho: &DiagonalState) -> Result<Weights> {
    if rho.local_dim() != decomposition.local_dim() {
        return Err(Error::DimensionMismatch {
            expected: decomposition.local_dim(),
            found: rho.local_dim(),
        });
    }
    let blocks = decomposition
        .blocks
        .iter()
        .map(|b| rho.expectation(&b.absorption.matrix))
        .collect();
    let enclosures = decomposition
        .blocks
        .iter()
        .map(|b| {
            b.enclosure_absorption
                .iter()
                .map(|a| rho.expectation(&a.matrix))
                .collect()
        })
        .collect();
    Ok(Weights { blocks, enclosures })
}
