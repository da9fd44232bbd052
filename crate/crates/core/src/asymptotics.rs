//! Central-limit and large-deviation parameters of the position process.
//!
//! On a minimal enclosure the walk has drift `m = Σ_i Tr(L_i τ_0 L_i*) s_i`
//! and covariance given by the quadratic form `⟨u, D u⟩ = λ''_u − λ'_u²`,
//! where `λ'_u, λ''_u` are the first two derivatives at `t = 0` of the
//! Perron root of the deformed channel along `u`. The second derivative
//! needs the zero-trace solution of a Poisson equation for the restricted
//! channel. Large deviations use the Legendre transform of `log λ_u`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, hs_inner, trace, CMatrix, CVector, Subspace};
use crate::model::{ChannelView, WalkModel};
use crate::state::DiagonalState;
use crate::structure::{self, reachable_space, SpaceDecomposition};

/// Weights below this are treated as absent blocks.
pub const WEIGHT_CUTOFF: f64 = 1e-12;
/// Radius of the search region for Legendre maximizers.
pub const U_MAX: f64 = 20.0;

/// Drift `Σ_i Tr(L_i τ L_i*) s_i` of an invariant state `τ` (ambient
/// coordinates).
pub fn drift_from_state(model: &WalkModel, tau: &CMatrix) -> Vec<f64> {
    let d = model.lattice_dim();
    let mut m = vec![0.0; d];
    for (k, s) in model.kraus().iter().zip(model.shifts()) {
        let p = trace(&(k * tau * k.adjoint())).re;
        for (mj, &sj) in m.iter_mut().zip(s) {
            *mj += p * sj as f64;
        }
    }
    m
}

/// Drift of the walk absorbed in a minimal enclosure.
pub fn drift(model: &WalkModel, enclosure: &Subspace) -> Result<Vec<f64>> {
    let tau = structure::enclosure_state(model, enclosure)?;
    Ok(drift_from_state(model, &tau))
}

/// Unique invariant state of an undeformed view, in view coordinates.
fn view_state(view: &ChannelView) -> Result<CMatrix> {
    let fixed = structure::invariant_operators(view)?;
    if fixed.len() != 1 {
        return Err(Error::NotIrreducible {
            fixed_dim: fixed.len(),
        });
    }
    let t = trace(&fixed[0]).re;
    if t.abs() < 1e-12 {
        return Err(Error::NotIrreducible { fixed_dim: 1 });
    }
    Ok(&fixed[0] / c(t, 0.0))
}

/// Zero-trace solution `η_u` of
/// `(Id − 𝔏)(η) = 𝔏'_u(τ_0) − Tr(𝔏'_u(τ_0)) τ_0` on an irreducible
/// restriction, where `𝔏'_u(σ) = Σ_i (u·s_i) L_i σ L_i*`.
pub fn poisson_solve(view: &ChannelView, direction: &[f64]) -> Result<CMatrix> {
    let tau = view_state(view)?;
    poisson_with_state(view, &tau, direction)
}

fn poisson_with_state(view: &ChannelView, tau: &CMatrix, direction: &[f64]) -> Result<CMatrix> {
    let k = view.dim();
    let first = view.apply_derivative(direction, 1, tau)?;
    let rhs = &first - tau * trace(&first);
    if k == 1 {
        return Ok(CMatrix::zeros(1, 1));
    }
    // coordinates: every matrix unit except the last diagonal one, with
    // diagonal units replaced by E_jj − E_{k-1,k-1} so that Tr η = 0
    let n = k * k;
    let last = n - 1;
    let sup = view.to_matrix().matrix;
    let op = linalg::identity(n) - &sup;
    let mut system = CMatrix::zeros(n - 1, n - 1);
    for a in 0..last {
        let mut col: CVector = op.column(a).into_owned();
        let (i, j) = (a % k, a / k);
        if i == j {
            col -= op.column(last);
        }
        system
            .column_mut(a)
            .copy_from(&col.rows(0, n - 1));
    }
    let b = linalg::vectorize(&rhs).rows(0, n - 1).into_owned();
    let x = linalg::solve_linear(&system, &b).map_err(|_| Error::NotIrreducible { fixed_dim: 2 })?;
    let mut full = CVector::zeros(n);
    full.rows_mut(0, n - 1).copy_from(&x);
    let diag_sum: linalg::C64 = (0..k - 1).map(|j| x[j + k * j]).sum();
    full[last] = -diag_sum;
    Ok(linalg::unvectorize(&full, k))
}

/// `(λ'_u, λ''_u)`: first and second derivative of `t ↦ λ_{t u}` at `t = 0`
/// on an irreducible restriction.
pub fn lambda_derivatives(view: &ChannelView, direction: &[f64]) -> Result<(f64, f64)> {
    let tau = view_state(view)?;
    let eta = poisson_with_state(view, &tau, direction)?;
    let first = trace(&view.apply_derivative(direction, 1, &tau)?).re;
    let second = trace(&view.apply_derivative(direction, 2, &tau)?).re
        + 2.0 * trace(&view.apply_derivative(direction, 1, &eta)?).re;
    Ok((first, second))
}

/// Covariance `D` of a minimal enclosure, recovered by polarization of
/// `u ↦ λ''_u − λ'_u²`.
pub fn diffusion(model: &WalkModel, enclosure: &Subspace) -> Result<Vec<Vec<f64>>> {
    let view = model.restricted(enclosure)?;
    let d = model.lattice_dim();
    let q = |u: &[f64]| -> Result<f64> {
        let (l1, l2) = lambda_derivatives(&view, u)?;
        Ok(l2 - l1 * l1)
    };
    let mut out = vec![vec![0.0; d]; d];
    let mut diag = vec![0.0; d];
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        diag[i] = q(&e)?;
        out[i][i] = diag[i];
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e[j] = 1.0;
            let v = 0.5 * (q(&e)? - diag[i] - diag[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean_rate: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianComponent {
    /// `axisᵀ D axis`.
    pub fn projected_variance(&self, axis: &[f64]) -> f64 {
        let d = axis.len();
        (0..d)
            .map(|i| (0..d).map(|j| axis[i] * self.covariance[i][j] * axis[j]).sum::<f64>())
            .sum()
    }

    pub fn projected_mean_rate(&self, axis: &[f64]) -> f64 {
        self.mean_rate.iter().zip(axis).map(|(m, a)| m * a).sum()
    }
}

/// `(m, D)` of a minimal enclosure.
pub fn clt_parameters(model: &WalkModel, enclosure: &Subspace) -> Result<GaussianComponent> {
    Ok(GaussianComponent {
        mean_rate: drift(model, enclosure)?,
        covariance: diffusion(model, enclosure)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub block: usize,
    pub weight: f64,
    #[serde(flatten)]
    pub gaussian: GaussianComponent,
}

/// Predicted law of `(X_n − X_0)/√n`: `Σ_α a_α 𝒩(√n m_α, D_α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub horizon: usize,
    pub components: Vec<MixtureComponent>,
}

impl MixtureModel {
    pub fn lattice_dim(&self) -> usize {
        self.components
            .first()
            .map(|c| c.gaussian.mean_rate.len())
            .unwrap_or(0)
    }

    /// Same components at another horizon.
    pub fn at_horizon(&self, n: usize) -> MixtureModel {
        MixtureModel {
            horizon: n,
            components: self.components.clone(),
        }
    }

    /// Means `√n m_α` of the components.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let sn = (self.horizon as f64).sqrt();
        self.components
            .iter()
            .map(|c| c.gaussian.mean_rate.iter().map(|m| sn * m).collect())
            .collect()
    }
}

pub fn clt_mixture(
    model: &WalkModel,
    decomposition: &SpaceDecomposition,
    rho: &DiagonalState,
    n: usize,
) -> Result<MixtureModel> {
    let w = structure::weights(decomposition, rho)?;
    let mut components = Vec::new();
    for (alpha, (block, &a)) in decomposition.blocks.iter().zip(&w.blocks).enumerate() {
        if a <= WEIGHT_CUTOFF {
            continue;
        }
        components.push(MixtureComponent {
            block: alpha,
            weight: a,
            gaussian: clt_parameters(model, block.representative())?,
        });
    }
    Ok(MixtureModel {
        horizon: n,
        components,
    })
}

/// Limit law of `(X_n − X_0)/n`: Diracs at the drifts, with the mixture
/// weights.
pub fn empirical_mean_limit(mixture: &MixtureModel) -> Vec<(f64, Vec<f64>)> {
    mixture
        .components
        .iter()
        .map(|c| (c.weight, c.gaussian.mean_rate.clone()))
        .collect()
}

/// `log r(𝔏_{|S,u})`.
pub fn log_lambda(model: &WalkModel, subspace: &Subspace, u: &[f64]) -> Result<f64> {
    Ok(model.deformed(subspace, u)?.spectral_radius()?.ln())
}

/// Which large-deviation statement a rate evaluation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LdpRegime {
    /// Single Legendre transform on one subspace.
    Single,
    /// Recurrent local channel: full large-deviation principle.
    #[serde(rename = "exact-LDP")]
    Exact,
    /// Transient part present: upper and lower bounds only.
    #[serde(rename = "bounds-only")]
    BoundsOnly,
}

impl LdpRegime {
    pub fn label(&self) -> &'static str {
        match self {
            LdpRegime::Single => "single",
            LdpRegime::Exact => "exact-LDP",
            LdpRegime::BoundsOnly => "bounds-only",
        }
    }
}

pub const BOUNDS_CAVEAT: &str = "the lower bound is only guaranteed on exposed points of each \
contributing rate; smoothness of the corresponding spectral radius is not checked";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRate {
    pub block: usize,
    pub enclosure: Option<usize>,
    pub value: f64,
    pub maximizer: Vec<f64>,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEvaluation {
    pub point: Vec<f64>,
    /// Rate value (`+∞` when the objective is unbounded on the search region).
    pub value: f64,
    pub maximizer: Vec<f64>,
    /// The maximizer reached `‖u‖ = U_MAX`; the rate may be infinite.
    pub boundary_hit: bool,
    pub regime: LdpRegime,
    pub per_block: Vec<BlockRate>,
    /// Lower-bound rate in the bounds-only regime.
    pub lower_value: Option<f64>,
    pub note: Option<String>,
}

struct Objective<'a> {
    view: ChannelView,
    x: &'a [f64],
}

impl Objective<'_> {
    fn log_lambda(&self, u: &[f64]) -> f64 {
        self.view
            .with_deformation(u)
            .spectral_radius()
            .map(f64::ln)
            .unwrap_or(f64::NAN)
    }

    fn value(&self, u: &[f64]) -> f64 {
        dot(u, self.x) - self.log_lambda(u)
    }

    fn grad_log_lambda(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        let view = self.view.with_deformation(u);
        if let Ok(p) = view.perron() {
            let norm = hs_inner(&p.w, &p.tau).re;
            if p.multiplicity == 1 && norm > 1e-12 {
                let mut g = vec![0.0; d];
                let mut ok = true;
                for (j, gj) in g.iter_mut().enumerate() {
                    let mut e = vec![0.0; d];
                    e[j] = 1.0;
                    match view.apply_derivative(&e, 1, &p.tau) {
                        Ok(dt) => *gj = hs_inner(&p.w, &dt).re / (norm * p.lambda),
                        Err(_) => ok = false,
                    }
                }
                if ok && g.iter().all(|v| v.is_finite()) {
                    return g;
                }
            }
        }
        // non-simple Perron root: central differences
        let h = 1e-6;
        (0..d)
            .map(|j| {
                let mut up = u.to_vec();
                let mut dn = u.to_vec();
                up[j] += h;
                dn[j] -= h;
                (self.log_lambda(&up) - self.log_lambda(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        self.grad_log_lambda(u)
            .iter()
            .zip(self.x)
            .map(|(g, x)| x - g)
            .collect()
    }

    fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let d = u.len();
        let h = 1e-4;
        let mut out = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[k] += h;
            dn[k] -= h;
            let gu = self.grad(&up);
            let gd = self.grad(&dn);
            for j in 0..d {
                out[(j, k)] = (gu[j] - gd[j]) / (2.0 * h);
            }
        }
        (&out + out.transpose()) * 0.5
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_ball(u: Vec<f64>) -> Vec<f64> {
    let r = norm(&u);
    if r > U_MAX {
        u.iter().map(|v| v * U_MAX / r).collect()
    } else {
        u
    }
}

fn start_grid(d: usize) -> Vec<Vec<f64>> {
    let levels = [-8.0, -2.0, 0.0, 2.0, 8.0];
    if d <= 3 {
        let mut out = vec![vec![]];
        for _ in 0..d {
            out = out
                .into_iter()
                .flat_map(|p| {
                    levels.iter().map(move |&l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        out
    } else {
        let mut out = vec![vec![0.0; d]];
        for j in 0..d {
            for &l in &levels {
                let mut q = vec![0.0; d];
                q[j] = l;
                out.push(q);
            }
        }
        out
    }
}

struct LegendreResult {
    value: f64,
    maximizer: Vec<f64>,
    boundary_hit: bool,
}

fn maximize(obj: &Objective) -> LegendreResult {
    let d = obj.x.len();
    let mut u = start_grid(d)
        .into_iter()
        .map(|p| (obj.value(&p), p))
        .filter(|(v, _)| v.is_finite())
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
        .unwrap_or_else(|| vec![0.0; d]);
    let mut f = obj.value(&u);
    for _ in 0..200 {
        let g = obj.grad(&u);
        let gn = norm(&g);
        if gn < 1e-11 {
            break;
        }
        let hess = obj.hessian(&u);
        let neg = -&hess;
        let step: Vec<f64> = match neg.clone().cholesky() {
            Some(ch) if neg.symmetric_eigenvalues().min() > 1e-12 => {
                let gv = nalgebra::DVector::from_column_slice(&g);
                ch.solve(&gv).iter().cloned().collect()
            }
            // flat direction: head for the boundary
            _ => g.iter().map(|v| v * U_MAX / gn).collect(),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand = project_ball(u.iter().zip(&step).map(|(a, b)| a + t * b).collect());
            let fc = obj.value(&cand);
            if fc.is_finite() && fc >= f - 1e-15 * f.abs().max(1.0) && fc >= f {
                let dist = norm(&cand.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
                moved = dist > 1e-14;
                u = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    // a supremum approached only as |u| grows: the last ascent direction
    // keeps improving all the way out
    let g = obj.grad(&u);
    let gn = norm(&g);
    if gn > 0.0 {
        let cand = project_ball(u.iter().zip(&g).map(|(a, b)| a + 2.0 * U_MAX * b / gn).collect());
        let fc = obj.value(&cand);
        if fc.is_finite() && fc > f {
            u = cand;
            f = fc;
        }
    }
    let r = norm(&u);
    let boundary_hit = r >= U_MAX * (1.0 - 1e-9);
    if boundary_hit {
        let g = obj.grad(&u);
        let radial = dot(&g, &u) / r;
        if radial > 1e-6 {
            return LegendreResult {
                value: f64::INFINITY,
                maximizer: u,
                boundary_hit,
            };
        }
    }
    LegendreResult {
        value: f.max(0.0),
        maximizer: u,
        boundary_hit,
    }
}

/// `sup_u {⟨u, x⟩ − log λ_u}` for the channel compressed to `subspace`,
/// searched over `‖u‖ ≤ U_MAX`.
pub fn legendre(model: &WalkModel, subspace: &Subspace, x: &[f64]) -> Result<RateEvaluation> {
    if x.len() != model.lattice_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.lattice_dim(),
            found: x.len(),
        });
    }
    if subspace.is_zero() {
        return Err(Error::EmptySubspace);
    }
    let obj = Objective {
        view: model.restricted(subspace)?,
        x,
    };
    let r = maximize(&obj);
    Ok(RateEvaluation {
        point: x.to_vec(),
        value: r.value,
        maximizer: r.maximizer,
        boundary_hit: r.boundary_hit,
        regime: LdpRegime::Single,
        per_block: Vec::new(),
        lower_value: None,
        note: None,
    })
}

/// The rate function of an initial state, prepared once for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub struct RateFunction {
    model: WalkModel,
    regime: LdpRegime,
    /// (block, enclosure, subspace carrying `λ_u`)
    terms: Vec<(usize, Option<usize>, Subspace)>,
}

impl RateFunction {
    pub fn new(model: &WalkModel, decomposition: &SpaceDecomposition, rho: &DiagonalState) -> Result<Self> {
        let w = structure::weights(decomposition, rho)?;
        let mut terms = Vec::new();
        let regime = if decomposition.is_recurrent() {
            for (alpha, block) in decomposition.blocks.iter().enumerate() {
                if w.blocks[alpha] > WEIGHT_CUTOFF {
                    terms.push((alpha, None, block.representative().clone()));
                }
            }
            LdpRegime::Exact
        } else {
            let reach = reachable_space(model, rho)?;
            for (alpha, block) in decomposition.blocks.iter().enumerate() {
                for (beta, a) in block.enclosure_absorption.iter().enumerate() {
                    if w.enclosures[alpha][beta] > WEIGHT_CUTOFF {
                        let q = reach.image(&a.support()?.projector_matrix());
                        terms.push((alpha, Some(beta), q));
                    }
                }
            }
            LdpRegime::BoundsOnly
        };
        Ok(RateFunction {
            model: model.clone(),
            regime,
            terms,
        })
    }

    pub fn regime(&self) -> LdpRegime {
        self.regime
    }

    /// Subspaces on which the contributing spectral radii are taken.
    pub fn subspaces(&self) -> impl Iterator<Item = &Subspace> {
        self.terms.iter().map(|t| &t.2)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<RateEvaluation> {
        let mut per_block = Vec::with_capacity(self.terms.len());
        for (block, enclosure, sub) in &self.terms {
            let r = legendre(&self.model, sub, x)?;
            per_block.push(BlockRate {
                block: *block,
                enclosure: *enclosure,
                value: r.value,
                maximizer: r.maximizer,
                boundary_hit: r.boundary_hit,
            });
        }
        let best = per_block
            .iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .ok_or_else(|| Error::Precondition("no contributing block".into()))?;
        let bounds = self.regime == LdpRegime::BoundsOnly;
        Ok(RateEvaluation {
            point: x.to_vec(),
            value: best.value,
            maximizer: best.maximizer.clone(),
            boundary_hit: best.boundary_hit,
            regime: self.regime,
            lower_value: bounds.then_some(best.value),
            note: bounds.then(|| BOUNDS_CAVEAT.to_string()),
            per_block,
        })
    }

    /// Zero of each contributing rate, i.e. `∇ log λ_u` at `u = 0`.
    pub fn zeros(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.model.lattice_dim();
        let h = 1e-6;
        self.terms
            .iter()
            .map(|(_, _, sub)| {
                (0..d)
                    .map(|j| {
                        let mut up = vec![0.0; d];
                        let mut dn = vec![0.0; d];
                        up[j] = h;
                        dn[j] = -h;
                        Ok((log_lambda(&self.model, sub, &up)? - log_lambda(&self.model, sub, &dn)?) / (2.0 * h))
                    })
                    .collect()
            })
            .collect()
    }

    /// `inf_{x ∈ [lo, hi]} Λ(x)` for a one-dimensional walk; each
    /// contributing rate is convex with its zero at the drift.
    pub fn infimum_on_interval(&self, lo: f64, hi: f64) -> Result<f64> {
        let zeros = self.zeros()?;
        let mut best = f64::INFINITY;
        for ((_, _, sub), z) in self.terms.iter().zip(zeros) {
            let z = z[0];
            let v = if z >= lo && z <= hi {
                0.0
            } else {
                let x = if z < lo { lo } else { hi };
                legendre(&self.model, sub, &[x])?.value
            };
            best = best.min(v);
        }
        Ok(best)
    }
}

pub fn rate_function(
    model: &WalkModel,
    decomposition: &SpaceDecomposition,
    rho: &DiagonalState,
    x: &[f64],
) -> Result<RateEvaluation> {
    RateFunction::new(model, decomposition, rho)?.evaluate(x)
}

/// Spectral radii on `Q = p̃_V ℰ(ρ)`, on `V` and on `W = Q ⊖ V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSplit {
    pub reachable: f64,
    pub enclosure: f64,
    pub transient: f64,
}

/// Checks `λ^ρ_u = max(λ^V_u, λ^W_u)` for a minimal enclosure `V`.
pub fn lambda_split_check(
    model: &WalkModel,
    enclosure: &Subspace,
    rho: &DiagonalState,
    u: &[f64],
) -> Result<LambdaSplit> {
    let a = structure::absorption(model, enclosure)?;
    if rho.expectation(&a.matrix) <= WEIGHT_CUTOFF {
        return Err(Error::Precondition("initial state is never absorbed in the enclosure".into()));
    }
    let q = reachable_space(model, rho)?.image(&a.support()?.projector_matrix());
    let w = q.minus(enclosure);
    let reachable = model.deformed(&q, u)?.spectral_radius()?;
    let on_enclosure = model.deformed(enclosure, u)?.spectral_radius()?;
    let transient = if w.is_zero() {
        0.0
    } else {
        model.deformed(&w, u)?.spectral_radius()?
    };
    let expected = on_enclosure.max(transient);
    if (reachable - expected).abs() > 1e-8 * reachable.max(1.0) {
        return Err(Error::AssertionFailure(format!(
            "λ on Q = {reachable}, max(λ_V, λ_W) = {expected}"
        )));
    }
    Ok(LambdaSplit {
        reachable,
        enclosure: on_enclosure,
        transient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::{basis_vector, identity, outer};
    use crate::structure::decompose;

    fn pure_at_origin(h: usize, i: usize) -> DiagonalState {
        let e = basis_vector(h, i);
        DiagonalState::at_origin(1, outer(&e, &e)).unwrap()
    }

    fn bernoulli_rate(x: f64, p_right: f64) -> f64 {
        // rate of the mean of ±1 steps with P(+1) = p_right
        let a = (1.0 + x) / 2.0;
        let b = (1.0 - x) / 2.0;
        let term = |q: f64, p: f64| if q > 0.0 { q * (q / p).ln() } else { 0.0 };
        term(a, p_right) + term(b, 1.0 - p_right)
    }

    #[test]
    fn example1_parameters() {
        let m = fixtures::example1();
        let v = Subspace::canonical(2, &[1]);
        let g = clt_parameters(&m, &v).unwrap();
        assert!((g.mean_rate[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g.covariance[0][0] - 8.0 / 9.0).abs() < 1e-12);
        let (l1, l2) = lambda_derivatives(&m.restricted(&v).unwrap(), &[1.0]).unwrap();
        assert!((l1 - 1.0 / 3.0).abs() < 1e-12 && (l2 - 1.0).abs() < 1e-12);
        let (l1, l2) = lambda_derivatives(&m.restricted(&v).unwrap(), &[0.0]).unwrap();
        assert_eq!((l1, l2), (0.0, 0.0));
    }

    #[test]
    fn four_level_parameters() {
        let m = fixtures::four_level(0.1, 0.15, 0.25);
        let d = decompose(&m).unwrap();
        for v in &d.blocks[0].minimal_enclosures {
            let g = clt_parameters(&m, v).unwrap();
            assert!(g.mean_rate[0].abs() < 1e-12);
            assert!((g.covariance[0][0] - 1.0).abs() < 1e-12);
            let eta = poisson_solve(&m.restricted(v).unwrap(), &[1.0]).unwrap();
            assert!(linalg::frobenius(&eta) < 1e-12);
        }
        let chi1 = Subspace::canonical(4, &[1, 2]);
        // restricted to the whole block the Poisson right side vanishes too
        let view = m.restricted(&chi1).unwrap();
        let tau = identity(2) / c(2.0, 0.0);
        let rhs = view.apply_derivative(&[1.0], 1, &tau).unwrap();
        assert!(linalg::frobenius(&rhs) < 1e-12);
        let g = clt_parameters(&m, &Subspace::canonical(4, &[3])).unwrap();
        assert!((g.mean_rate[0] + 1.0 / 3.0).abs() < 1e-12);
        assert!((g.covariance[0][0] - 8.0 / 9.0).abs() < 1e-12);
        let (l1, l2) = lambda_derivatives(&m.restricted(&Subspace::canonical(4, &[3])).unwrap(), &[1.0]).unwrap();
        assert!((l1 + 1.0 / 3.0).abs() < 1e-12 && (l2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commuting_drifts() {
        let m = fixtures::commuting_distinct();
        let d = decompose(&m).unwrap();
        let basis = fixtures::commuting_basis();
        for (i, row) in fixtures::commuting_distinct_zetas().iter().enumerate() {
            let phi = Subspace::from_orthonormal(basis.columns(i, 1).into_owned()).unwrap();
            let alpha = d.find_block(&phi, 1e-8).unwrap();
            let g = clt_parameters(&m, d.blocks[alpha].representative()).unwrap();
            let (pr, pl) = (row[0].norm_sqr(), row[1].norm_sqr());
            assert!((g.mean_rate[0] - (pr - pl)).abs() < 1e-12);
            assert!((g.covariance[0][0] - (1.0 - (pr - pl).powi(2))).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_walk_has_no_diffusion() {
        let m = WalkModel::new(2, vec![vec![1, -2]], vec![identity(1)]).unwrap();
        let g = clt_parameters(&m, &Subspace::full(1)).unwrap();
        assert_eq!(g.mean_rate, vec![1.0, -2.0]);
        assert!(g.covariance.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn poisson_residual_on_irreducible_two_level() {
        // Example 1 restricted to nothing smaller is not irreducible, so use a
        // generic irreducible qubit channel
        let s = f64::sqrt;
        let a = CMatrix::from_row_slice(2, 2, &[c(s(0.5), 0.0), c(0.3, 0.1), c(0.0, 0.0), c(s(0.4), 0.0)]);
        let gram = a.adjoint() * &a;
        let (vals, vecs) = linalg::eig_hermitian(&gram).unwrap();
        let scale = 1.0 / vals[0].sqrt() * 0.9;
        let a = a * c(scale, 0.0);
        let rest = identity(2) - a.adjoint() * &a;
        let (vals, vecs2) = linalg::eig_hermitian(&rest).unwrap();
        let mut sq = CMatrix::zeros(2, 2);
        for k in 0..2 {
            let v = vecs2.column(k).into_owned();
            sq += outer(&v, &v) * c(vals[k].max(0.0).sqrt(), 0.0);
        }
        let _ = vecs;
        let b = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]) * &sq;
        let m = WalkModel::new(1, vec![vec![1], vec![-1]], vec![a, b]).unwrap();
        let view = m.channel();
        assert_eq!(structure::invariant_operators(&view).unwrap().len(), 1);
        let eta = poisson_solve(&view, &[1.3]).unwrap();
        let tau = view_state(&view).unwrap();
        let first = view.apply_derivative(&[1.3], 1, &tau).unwrap();
        let rhs = &first - &tau * trace(&first);
        let lhs = &eta - view.apply(&eta).unwrap();
        assert!(linalg::frobenius(&(lhs - rhs)) < 1e-9);
        assert!(trace(&eta).norm() < 1e-10);
    }

    #[test]
    fn poisson_rejects_reducible_domain() {
        let m = fixtures::four_level(0.1, 0.15, 0.25);
        let r = poisson_solve(&m.restricted(&Subspace::canonical(4, &[1, 2])).unwrap(), &[1.0]);
        assert!(matches!(r, Err(Error::NotIrreducible { fixed_dim: 4 })));
    }

    #[test]
    fn mixture_weights_and_limits() {
        let m = fixtures::four_level(1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0);
        let d = decompose(&m).unwrap();
        let rho = DiagonalState::at_origin(
            1,
            CMatrix::from_fn(4, 4, |i, j| if i == j && i > 0 { c(1.0 / 3.0, 0.0) } else { c(0.0, 0.0) }),
        )
        .unwrap();
        let mix = clt_mixture(&m, &d, &rho, 600).unwrap();
        assert_eq!(mix.components.len(), 2);
        assert!((mix.components[0].weight - 2.0 / 3.0).abs() < 1e-9);
        assert!((mix.components[1].weight - 1.0 / 3.0).abs() < 1e-9);
        let means = mix.means();
        assert!((means[1][0] + 600f64.sqrt() / 3.0).abs() < 1e-9);
        let limit = empirical_mean_limit(&mix);
        assert!((limit[1].1[0] + 1.0 / 3.0).abs() < 1e-12);

        let ex2 = fixtures::example2();
        let d2 = decompose(&ex2).unwrap();
        let mix = clt_mixture(&ex2, &d2, &pure_at_origin(4, 0), 50).unwrap();
        assert_eq!(mix.components.len(), 1);
        assert_eq!(mix.components[0].block, 1);
        assert!((mix.components[0].weight - 1.0).abs() < 1e-12);
        let mix = clt_mixture(&ex2, &d2, &pure_at_origin(4, 3), 50).unwrap();
        assert_eq!(mix.components.len(), 1);
        assert!((mix.components[0].gaussian.covariance[0][0] - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn legendre_closed_forms() {
        let m = fixtures::example1();
        let v = Subspace::canonical(2, &[1]);
        let at_mean = legendre(&m, &v, &[1.0 / 3.0]).unwrap();
        assert!(at_mean.value.abs() < 1e-12 && at_mean.maximizer[0].abs() < 1e-6);
        let edge = legendre(&m, &v, &[1.0]).unwrap();
        assert!((edge.value + (2.0f64 / 3.0).ln()).abs() < 1e-9);
        assert!(edge.boundary_hit);
        for x in [-0.9, -0.5, 0.0, 0.2, 0.6, 0.95] {
            let r = legendre(&m, &v, &[x]).unwrap();
            assert!((r.value - bernoulli_rate(x, 2.0 / 3.0)).abs() < 1e-8, "x = {x}");
        }
        let outside = legendre(&m, &v, &[1.5]).unwrap();
        assert!(outside.value.is_infinite());
    }

    #[test]
    fn rate_function_regimes() {
        let m = fixtures::commuting_distinct();
        let d = decompose(&m).unwrap();
        let rho = DiagonalState::at_origin(1, identity(3) / c(3.0, 0.0)).unwrap();
        let rf = RateFunction::new(&m, &d, &rho).unwrap();
        assert_eq!(rf.regime(), LdpRegime::Exact);
        for row in fixtures::commuting_distinct_zetas() {
            let mean = row[0].norm_sqr() - row[1].norm_sqr();
            assert!(rf.evaluate(&[mean]).unwrap().value < 1e-8);
        }
        let x = 0.1;
        let r = rf.evaluate(&[x]).unwrap();
        let expected = fixtures::commuting_distinct_zetas()
            .iter()
            .map(|row| bernoulli_rate(x, row[0].norm_sqr()))
            .fold(f64::INFINITY, f64::min);
        assert!((r.value - expected).abs() < 1e-8);

        let m = fixtures::four_level(1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0);
        let d = decompose(&m).unwrap();
        let r = rate_function(&m, &d, &pure_at_origin(4, 0), &[0.0]).unwrap();
        assert_eq!(r.regime, LdpRegime::BoundsOnly);
        assert!(r.note.is_some() && r.lower_value.is_some());
        assert!(r.value < 1e-8);
    }

    #[test]
    fn lambda_split_on_four_level() {
        let m = fixtures::four_level(1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0);
        let v = Subspace::canonical(4, &[3]);
        let rho = pure_at_origin(4, 0);
        for u in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let s = lambda_split_check(&m, &v, &rho, &[u]).unwrap();
            let lv = (1.0 / 3.0) * f64::exp(u) + (2.0 / 3.0) * f64::exp(-u);
            let lw = (3.0 / 8.0) * f64::exp(u) + (1.0 / 8.0) * f64::exp(-u);
            assert!((s.enclosure - lv).abs() < 1e-10);
            assert!((s.transient - lw).abs() < 1e-10);
        }
        let s = lambda_split_check(&m, &v, &rho, &[0.0]).unwrap();
        assert!(s.transient < 1.0 && (s.reachable - 1.0).abs() < 1e-12);
        // recurrent start: W is empty
        let s = lambda_split_check(&m, &v, &pure_at_origin(4, 3), &[0.7]).unwrap();
        assert_eq!(s.transient, 0.0);
        assert!((s.reachable - s.enclosure).abs() < 1e-12);
        assert!(matches!(
            lambda_split_check(&m, &v, &pure_at_origin(4, 1), &[0.7]),
            Err(Error::Precondition(_))
        ));
    }
}
