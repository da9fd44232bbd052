//! Empirical laws of the rescaled position against predicted mixtures.
//!
//! Distances are W1 and Kolmogorov–Smirnov between a 1-D empirical law and a
//! mixture of Gaussians and point masses. W1 is integrated exactly: between
//! consecutive sample points the empirical CDF is constant and the mixture
//! CDF has the closed-form antiderivative
//! `G(x) = Σ a ((x − μ) Φ(z) + σ φ(z))`.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use serde::Serialize;

use crate::asymptotics::MixtureModel;
use crate::error::{Error, Result};
use crate::trajectory::TrajectoryEnsemble;

/// Projected variances at or below this are treated as point masses.
pub const DIRAC_VARIANCE: f64 = 1e-14;

pub const W1_NOTE: &str = "W1 upper-bounds the Fortet-Mourier distance";

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw1D {
    samples: Vec<f64>,
    horizon: usize,
}

impl EmpiricalLaw1D {
    pub fn new(mut samples: Vec<f64>, horizon: usize) -> Result<Self> {
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("non-finite sample".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalLaw1D { samples, horizon })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct sample values with the empirical CDF just after each.
    fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.samples.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.samples.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => out.push((x, f)),
            }
        }
        out
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let k = self.samples.partition_point(|&s| s <= x);
        k as f64 / self.samples.len() as f64
    }

    pub fn translated(&self, shift: f64) -> EmpiricalLaw1D {
        EmpiricalLaw1D {
            samples: self.samples.iter().map(|x| x + shift).collect(),
            horizon: self.horizon,
        }
    }
}

fn resolve_axis(d: usize, axis: Option<&[f64]>) -> Result<Vec<f64>> {
    match axis {
        Some(a) if a.len() == d => Ok(a.to_vec()),
        Some(a) => Err(Error::DimensionMismatch {
            expected: d,
            found: a.len(),
        }),
        None if d == 1 => Ok(vec![1.0]),
        None => Err(Error::MissingAxis(d)),
    }
}

/// `(X_n − X_0)·axis/√n` from raw displacements.
pub fn rescale_displacements(
    displacements: &[Vec<i64>],
    horizon: usize,
    axis: Option<&[f64]>,
) -> Result<EmpiricalLaw1D> {
    let d = displacements.first().map(Vec::len).unwrap_or(1);
    let axis = resolve_axis(d, axis)?;
    let scale = if horizon == 0 { 1.0 } else { (horizon as f64).sqrt() };
    let samples = displacements
        .iter()
        .map(|x| x.iter().zip(&axis).map(|(a, b)| *a as f64 * b).sum::<f64>() / scale)
        .collect();
    EmpiricalLaw1D::new(samples, horizon)
}

/// `(X_n − X_0)·axis/√n` over an ensemble.
pub fn rescale(ensemble: &TrajectoryEnsemble, axis: Option<&[f64]>) -> Result<EmpiricalLaw1D> {
    resolve_axis(ensemble.lattice_dim, axis)?;
    rescale_displacements(&ensemble.displacements(), ensemble.horizon(), axis)
}

/// One mixture component projected on an axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component1D {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl Component1D {
    fn is_dirac(&self) -> bool {
        self.sd * self.sd <= DIRAC_VARIANCE
    }

    fn cdf(&self, x: f64) -> f64 {
        if self.is_dirac() {
            if x >= self.mean {
                1.0
            } else {
                0.0
            }
        } else {
            std_cdf((x - self.mean) / self.sd)
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if self.is_dirac() {
            if x > self.mean {
                1.0
            } else {
                0.0
            }
        } else {
            self.cdf(x)
        }
    }

    /// `∫_{-∞}^x F`.
    fn lower_integral(&self, x: f64) -> f64 {
        if self.is_dirac() {
            return (x - self.mean).max(0.0);
        }
        let z = (x - self.mean) / self.sd;
        (x - self.mean) * std_cdf(z) + self.sd * std_pdf(z)
    }

    /// `∫_x^∞ (1 − F)`.
    fn upper_integral(&self, x: f64) -> f64 {
        if self.is_dirac() {
            return (self.mean - x).max(0.0);
        }
        let z = (x - self.mean) / self.sd;
        self.sd * std_pdf(z) - (x - self.mean) * std_cdf(-z)
    }
}

/// The mixture at its horizon projected on `axis`.
pub fn project(mixture: &MixtureModel, axis: Option<&[f64]>) -> Result<Vec<Component1D>> {
    let axis = resolve_axis(mixture.lattice_dim(), axis)?;
    let root = (mixture.horizon as f64).sqrt();
    Ok(mixture
        .components
        .iter()
        .map(|c| Component1D {
            weight: c.weight,
            mean: root * c.gaussian.projected_mean_rate(&axis),
            sd: c.gaussian.projected_variance(&axis).max(0.0).sqrt(),
        })
        .collect())
}

/// A 1-D mixture of Gaussians and point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture1D {
    pub components: Vec<Component1D>,
}

impl Mixture1D {
    pub fn new(components: Vec<Component1D>) -> Self {
        Mixture1D { components }
    }

    pub fn from_model(mixture: &MixtureModel, axis: Option<&[f64]>) -> Result<Self> {
        Ok(Mixture1D::new(project(mixture, axis)?))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.cdf(x)).sum::<f64>().clamp(0.0, 1.0)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.cdf_left(x)).sum::<f64>().clamp(0.0, 1.0)
    }

    fn lower_integral(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.lower_integral(x)).sum()
    }

    fn upper_integral(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.upper_integral(x)).sum()
    }

    pub fn translated(&self, shift: f64) -> Mixture1D {
        Mixture1D::new(
            self.components
                .iter()
                .map(|c| Component1D {
                    mean: c.mean + shift,
                    ..*c
                })
                .collect(),
        )
    }

    /// `∫_a^b |level − F|` for a constant level.
    fn band(&self, a: f64, b: f64, level: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        // F is nondecreasing, so it crosses the level at most once
        let (fa, fb) = (self.cdf(a), self.cdf_left(b));
        let g = |x: f64| self.lower_integral(x);
        let below = |lo: f64, hi: f64| level * (hi - lo) - (g(hi) - g(lo));
        if fb <= level {
            return below(a, b).max(0.0);
        }
        if fa >= level {
            return (g(b) - g(a) - level * (b - a)).max(0.0);
        }
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        below(a, x).max(0.0) + (g(b) - g(x) - level * (b - x)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub w1: f64,
    pub ks: f64,
    pub note: String,
}

/// Mixture CDF at `x` for a multi-dimensional mixture projected on `axis`.
pub fn mixture_cdf(mixture: &MixtureModel, x: f64, axis: Option<&[f64]>) -> Result<f64> {
    Ok(Mixture1D::from_model(mixture, axis)?.cdf(x))
}

/// W1 and KS between an empirical law and a 1-D mixture.
pub fn distance(emp: &EmpiricalLaw1D, mix: &Mixture1D) -> Result<DistanceReport> {
    if emp.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let steps = emp.steps();
    let mut w1 = mix.lower_integral(steps[0].0);
    let mut ks: f64 = 0.0;
    let mut prev = 0.0;
    for (k, &(x, f)) in steps.iter().enumerate() {
        ks = ks.max((prev - mix.cdf_left(x)).abs()).max((f - mix.cdf(x)).abs());
        if let Some(&(next, _)) = steps.get(k + 1) {
            w1 += mix.band(x, next, f);
        }
        prev = f;
    }
    w1 += mix.upper_integral(steps[steps.len() - 1].0);
    Ok(DistanceReport {
        w1: w1.max(0.0),
        ks: ks.min(1.0),
        note: W1_NOTE.into(),
    })
}

/// W1 and KS between an empirical law and a projected mixture.
pub fn w1_distance(emp: &EmpiricalLaw1D, mixture: &MixtureModel, axis: Option<&[f64]>) -> Result<DistanceReport> {
    distance(emp, &Mixture1D::from_model(mixture, axis)?)
}

/// W1 and KS between two empirical laws.
pub fn empirical_distance(a: &EmpiricalLaw1D, b: &EmpiricalLaw1D) -> Result<DistanceReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut points: Vec<f64> = a.samples.iter().chain(&b.samples).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut w1 = 0.0;
    let mut ks: f64 = 0.0;
    for (k, &x) in points.iter().enumerate() {
        let gap = (a.cdf(x) - b.cdf(x)).abs();
        ks = ks.max(gap);
        if let Some(&next) = points.get(k + 1) {
            w1 += gap * (next - x);
        }
    }
    Ok(DistanceReport {
        w1,
        ks,
        note: W1_NOTE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub x: f64,
    #[serde(rename = "F_emp")]
    pub f_emp: f64,
    #[serde(rename = "F_mix")]
    pub f_mix: f64,
}

/// Both CDFs on `points` equally spaced points spanning the samples.
pub fn cdf_comparison(emp: &EmpiricalLaw1D, mix: &Mixture1D, points: usize) -> Result<Vec<CdfRow>> {
    if emp.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let (lo, hi) = (emp.samples[0], emp.samples[emp.len() - 1]);
    let pad = 0.05 * (hi - lo).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let k = points.max(2);
    Ok((0..k)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (k - 1) as f64;
            CdfRow {
                x,
                f_emp: emp.cdf(x),
                f_mix: mix.cdf(x),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub w1: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpRow {
    pub n: usize,
    pub log_freq_over_n: f64,
    pub rate_bound: f64,
}

/// `(1/n) log` of the fraction of `(X_n − X_0)·axis / n` in `[lo, hi]`, per
/// horizon; an empty count gives `−∞`. `rate_bound` is echoed as the
/// comparison column (`−inf_B Λ`).
pub fn ldp_estimate(
    ensembles: &[(usize, Vec<Vec<i64>>)],
    lo: f64,
    hi: f64,
    axis: Option<&[f64]>,
    rate_bound: f64,
) -> Result<Vec<LdpRow>> {
    let mut rows = Vec::with_capacity(ensembles.len());
    for (n, disp) in ensembles {
        if disp.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let axis = resolve_axis(disp[0].len(), axis)?;
        let scale = (*n).max(1) as f64;
        let hits = disp
            .iter()
            .filter(|x| {
                let v = x.iter().zip(&axis).map(|(a, b)| *a as f64 * b).sum::<f64>() / scale;
                (lo..=hi).contains(&v)
            })
            .count();
        let value = if hits == 0 {
            f64::NEG_INFINITY
        } else {
            (hits as f64 / disp.len() as f64).ln() / scale
        };
        rows.push(LdpRow {
            n: *n,
            log_freq_over_n: value,
            rate_bound,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_left: f64,
    pub bin_right: f64,
    pub density: f64,
}

/// Equal-width histogram over the sample range with unit total mass.
pub fn histogram(emp: &EmpiricalLaw1D, bins: usize) -> Result<Vec<HistogramRow>> {
    if emp.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let (lo, hi) = (emp.samples[0], emp.samples[emp.len() - 1]);
    if bins == 0 || hi <= lo {
        return Ok(vec![HistogramRow {
            bin_left: lo - 0.5,
            bin_right: lo + 0.5,
            density: 1.0,
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &emp.samples {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = emp.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &c)| HistogramRow {
            bin_left: lo + k as f64 * width,
            bin_right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            density: c as f64 / (n * width),
        })
        .collect())
}

/// Serializes rows with a header line.
pub fn write_rows<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
