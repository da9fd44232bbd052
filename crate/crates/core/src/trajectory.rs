//! Quantum trajectories `(X_n, ρ_n)` of the walk.
//!
//! Every trajectory owns a ChaCha8 stream selected by its index, so an
//! ensemble is a pure function of `(model, rho, config)` whatever the thread
//! count or scheduling.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, hermitian_part, trace, CMatrix, C64};
use crate::model::WalkModel;
use crate::state::DiagonalState;
use crate::structure;
use crate::Subspace;

const DEGENERATE_PROB: f64 = 1e-14;
const HERMITIZE_EVERY: usize = 50;
const Y_SLACK: f64 = 1e-8;

/// An observable `0 ≤ x ≤ 1` whose expectation `Tr(x ρ_n)` is recorded
/// along every trajectory, typically an absorption operator.
#[derive(Debug, Clone)]
pub struct YTrack {
    pub label: String,
    pub operator: CMatrix,
}

impl YTrack {
    pub fn new(label: impl Into<String>, operator: CMatrix) -> Result<Self> {
        let label = label.into();
        let (vals, _) = eig_hermitian(&operator)?;
        let (hi, lo) = (vals.first().copied().unwrap_or(0.0), vals.last().copied().unwrap_or(0.0));
        if lo < -1e-9 || hi > 1.0 + 1e-9 {
            return Err(Error::Precondition(format!(
                "track {label}: operator spectrum [{lo:.3e}, {hi:.3e}] leaves [0, 1]"
            )));
        }
        Ok(YTrack {
            label,
            operator: hermitian_part(&operator),
        })
    }

    /// Track of the absorption martingale `Tr(A(V) ρ_n)`.
    pub fn absorption(model: &WalkModel, label: impl Into<String>, enclosure: &Subspace) -> Result<Self> {
        let a = structure::absorption(model, enclosure)?;
        YTrack::new(label, a.matrix)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub record_positions: bool,
    pub y_tracks: Vec<YTrack>,
    pub y_stride: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(steps: usize, trajectories: usize, seed: u64) -> Self {
        SimConfig {
            steps,
            trajectories,
            seed,
            record_positions: false,
            y_tracks: Vec::new(),
            y_stride: 1,
            threads: None,
        }
    }

    pub fn with_track(mut self, track: YTrack) -> Self {
        self.y_tracks.push(track);
        self
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            steps: self.steps,
            trajectories: self.trajectories,
            seed: self.seed,
            record_positions: self.record_positions,
            y_tracks: self.y_tracks.iter().map(|t| t.label.clone()).collect(),
            y_stride: self.y_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub record_positions: bool,
    pub y_tracks: Vec<String>,
    pub y_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub position: Vec<i64>,
    pub rho: CMatrix,
}

/// Recorded values of one track: `samples[t]` holds `Y` at steps
/// `0, stride, 2·stride, …` and `finals[t]` the value at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct YSeries {
    pub label: String,
    pub samples: Vec<Vec<f64>>,
    pub finals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub config: ConfigEcho,
    pub lattice_dim: usize,
    pub initial: Vec<Vec<i64>>,
    pub finals: Vec<Vec<i64>>,
    pub paths: Option<Vec<Vec<Vec<i64>>>>,
    pub tracks: Vec<YSeries>,
}

impl TrajectoryEnsemble {
    pub fn horizon(&self) -> usize {
        self.config.steps
    }

    pub fn len(&self) -> usize {
        self.finals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.finals.is_empty()
    }

    /// `X_n − X_0` per trajectory.
    pub fn displacements(&self) -> Vec<Vec<i64>> {
        self.finals
            .iter()
            .zip(&self.initial)
            .map(|(x, x0)| x.iter().zip(x0).map(|(a, b)| a - b).collect())
            .collect()
    }

    pub fn track(&self, label: &str) -> Result<&YSeries> {
        self.tracks
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::MissingTrack(label.to_string()))
    }
}

/// Kraus data flattened row-major for the inner loop.
struct Stepper {
    h: usize,
    kraus: Vec<Vec<C64>>,
    effects: Vec<Vec<C64>>,
    shifts: Vec<Vec<i64>>,
    probs: Vec<f64>,
    tmp: Vec<C64>,
    out: Vec<C64>,
}

fn flatten(m: &CMatrix) -> Vec<C64> {
    let h = m.nrows();
    let mut v = Vec::with_capacity(h * m.ncols());
    for i in 0..h {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn unflatten(v: &[C64], h: usize) -> CMatrix {
    CMatrix::from_row_slice(h, h, v)
}

/// `Re Tr(a b)` for flat row-major matrices.
fn trace_product(a: &[C64], b: &[C64], h: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..h {
            let (x, y) = (a[i * h + j], b[j * h + i]);
            s += x.re * y.re - x.im * y.im;
        }
    }
    s
}

impl Stepper {
    fn new(model: &WalkModel) -> Self {
        let h = model.local_dim();
        let kraus: Vec<_> = model.kraus().iter().map(flatten).collect();
        let effects = model.kraus().iter().map(|k| flatten(&(k.adjoint() * k))).collect();
        Stepper {
            h,
            kraus,
            effects,
            shifts: model.shifts().to_vec(),
            probs: vec![0.0; model.branch_count()],
            tmp: vec![c(0.0, 0.0); h * h],
            out: vec![c(0.0, 0.0); h * h],
        }
    }

    /// One branch draw; updates `rho` in place and returns the branch.
    fn step<R: Rng>(&mut self, rho: &mut [C64], rng: &mut R) -> Result<usize> {
        let h = self.h;
        let mut total = 0.0;
        for (p, e) in self.probs.iter_mut().zip(&self.effects) {
            *p = trace_product(e, rho, h).max(0.0);
            total += *p;
        }
        if self.probs.iter().all(|&p| p < DEGENERATE_PROB) {
            return Err(Error::DegenerateStep);
        }
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut j = self.probs.len() - 1;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if r < acc && p > 0.0 {
                j = i;
                break;
            }
        }
        while self.probs[j] <= 0.0 {
            j -= 1;
        }
        let k = &self.kraus[j];
        for i in 0..h {
            for l in 0..h {
                let mut s = c(0.0, 0.0);
                for m in 0..h {
                    s += k[i * h + m] * rho[m * h + l];
                }
                self.tmp[i * h + l] = s;
            }
        }
        let mut tr = 0.0;
        for i in 0..h {
            for l in 0..h {
                let mut s = c(0.0, 0.0);
                for m in 0..h {
                    s += self.tmp[i * h + m] * k[l * h + m].conj();
                }
                self.out[i * h + l] = s;
            }
            tr += self.out[i * h + i].re;
        }
        let inv = 1.0 / tr;
        for (r, o) in rho.iter_mut().zip(&self.out) {
            *r = o * inv;
        }
        Ok(j)
    }
}

fn hermitize(rho: &mut [C64], h: usize) {
    for i in 0..h {
        rho[i * h + i].im = 0.0;
        for j in i + 1..h {
            let avg = (rho[i * h + j] + rho[j * h + i].conj()) * 0.5;
            rho[i * h + j] = avg;
            rho[j * h + i] = avg.conj();
        }
    }
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `(X_0, ρ_0)`: site `k` with probability `Tr ρ(k)`.
pub fn sample_initial<R: Rng>(rho: &DiagonalState, rng: &mut R) -> TrajectoryState {
    let entries = rho.entries();
    let weights: Vec<f64> = entries.iter().map(|(_, m)| trace(m).re.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let r = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        pick = Some(i);
        if r < acc {
            break;
        }
    }
    let i = pick.expect("a valid state has positive total trace");
    let (site, m) = &entries[i];
    TrajectoryState {
        position: site.clone(),
        rho: m / c(weights[i], 0.0),
    }
}

/// One step of the trajectory.
pub fn step<R: Rng>(state: &TrajectoryState, model: &WalkModel, rng: &mut R) -> Result<TrajectoryState> {
    let h = model.local_dim();
    let mut stepper = Stepper::new(model);
    let mut rho = flatten(&state.rho);
    let j = stepper.step(&mut rho, rng)?;
    Ok(TrajectoryState {
        position: state.position.iter().zip(&model.shifts()[j]).map(|(a, b)| a + b).collect(),
        rho: unflatten(&rho, h),
    })
}

struct Single {
    initial: Vec<i64>,
    finals: Vec<i64>,
    path: Option<Vec<Vec<i64>>>,
    samples: Vec<Vec<f64>>,
    finals_y: Vec<f64>,
}

fn run_one(
    model: &WalkModel,
    rho: &DiagonalState,
    config: &SimConfig,
    tracks: &[Vec<C64>],
    index: u64,
) -> Result<Single> {
    let h = model.local_dim();
    let mut rng = rng_for(config.seed, index);
    let start = sample_initial(rho, &mut rng);
    let mut stepper = Stepper::new(model);
    let mut x = start.position.clone();
    let mut r = flatten(&start.rho);
    let mut path = config.record_positions.then(|| {
        let mut p = Vec::with_capacity(config.steps + 1);
        p.push(x.clone());
        p
    });
    let stride = config.y_stride.max(1);
    let mut samples = vec![Vec::with_capacity(config.steps / stride + 1); tracks.len()];
    let record = |r: &[C64], out: &mut Vec<Vec<f64>>| -> Result<()> {
        for (t, a) in tracks.iter().enumerate() {
            let y = trace_product(a, r, h);
            if !(-Y_SLACK..=1.0 + Y_SLACK).contains(&y) {
                return Err(Error::MartingaleOutOfRange { value: y });
            }
            out[t].push(y);
        }
        Ok(())
    };
    record(&r, &mut samples)?;
    for n in 1..=config.steps {
        let j = stepper.step(&mut r, &mut rng)?;
        for (a, b) in x.iter_mut().zip(&stepper.shifts[j]) {
            *a += b;
        }
        if n % HERMITIZE_EVERY == 0 {
            hermitize(&mut r, h);
        }
        if let Some(p) = path.as_mut() {
            p.push(x.clone());
        }
        if n % stride == 0 {
            record(&r, &mut samples)?;
        }
    }
    let mut last = vec![Vec::with_capacity(1); tracks.len()];
    record(&r, &mut last)?;
    Ok(Single {
        initial: start.position,
        finals: x,
        path,
        samples,
        finals_y: last.into_iter().map(|v| v[0]).collect(),
    })
}

/// Simulates `config.trajectories` independent trajectories of
/// `config.steps` steps.
pub fn run(model: &WalkModel, rho: &DiagonalState, config: &SimConfig) -> Result<TrajectoryEnsemble> {
    if config.trajectories == 0 {
        return Err(Error::Precondition("at least one trajectory is required".into()));
    }
    if rho.local_dim() != model.local_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.local_dim(),
            found: rho.local_dim(),
        });
    }
    if rho.lattice_dim() != model.lattice_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.lattice_dim(),
            found: rho.lattice_dim(),
        });
    }
    for t in &config.y_tracks {
        if t.operator.nrows() != model.local_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.local_dim(),
                found: t.operator.nrows(),
            });
        }
    }
    let tracks: Vec<Vec<C64>> = config.y_tracks.iter().map(|t| flatten(&t.operator)).collect();
    let work = || -> Result<Vec<Single>> {
        (0..config.trajectories as u64)
            .into_par_iter()
            .map(|i| run_one(model, rho, config, &tracks, i))
            .collect()
    };
    let singles = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Precondition(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let mut ensemble = TrajectoryEnsemble {
        config: config.echo(),
        lattice_dim: model.lattice_dim(),
        initial: Vec::with_capacity(singles.len()),
        finals: Vec::with_capacity(singles.len()),
        paths: config.record_positions.then(Vec::new),
        tracks: config
            .y_tracks
            .iter()
            .map(|t| YSeries {
                label: t.label.clone(),
                samples: Vec::with_capacity(singles.len()),
                finals: Vec::with_capacity(singles.len()),
            })
            .collect(),
    };
    for s in singles {
        ensemble.initial.push(s.initial);
        ensemble.finals.push(s.finals);
        if let (Some(paths), Some(p)) = (ensemble.paths.as_mut(), s.path) {
            paths.push(p);
        }
        for ((series, samples), y) in ensemble.tracks.iter_mut().zip(s.samples).zip(s.finals_y) {
            series.samples.push(samples);
            series.finals.push(y);
        }
    }
    Ok(ensemble)
}

/// Largest one-step defect `|E[Y_1 | ρ] − Y_0|` of `Y = Tr(a ρ)` over the
/// given states, evaluated exactly over the branches.
pub fn martingale_defect(model: &WalkModel, a: &CMatrix, states: &[CMatrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for rho in states {
        let y0 = trace(&(a * rho)).re;
        let mut expect = 0.0;
        for k in model.kraus() {
            let next = k * rho * k.adjoint();
            let p = trace(&next).re;
            if p > DEGENERATE_PROB {
                expect += p * (trace(&(a * &next)).re / p);
            }
        }
        worst = worst.max((expect - y0).abs());
    }
    worst
}

/// One-step martingale defect of the absorption martingale of `enclosure`.
pub fn martingale_check(model: &WalkModel, enclosure: &Subspace, states: &[CMatrix]) -> Result<f64> {
    let a = structure::absorption(model, enclosure)?;
    Ok(martingale_defect(model, &a.matrix, states))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorptionFractions {
    pub hi: f64,
    pub lo: f64,
    pub mid: f64,
}

/// Fractions of trajectories whose final `Y` lies above `hi`, below `lo`,
/// or in between.
pub fn classify_absorption(
    ensemble: &TrajectoryEnsemble,
    label: &str,
    hi: f64,
    lo: f64,
) -> Result<AbsorptionFractions> {
    let series = ensemble.track(label)?;
    let n = series.finals.len();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let above = series.finals.iter().filter(|&&y| y > hi).count();
    let below = series.finals.iter().filter(|&&y| y < lo).count();
    let n = n as f64;
    Ok(AbsorptionFractions {
        hi: above as f64 / n,
        lo: below as f64 / n,
        mid: 1.0 - (above + below) as f64 / n,
    })
}

/// Mean of each recorded track sample across the ensemble, per snapshot.
pub fn track_means(series: &YSeries) -> Vec<f64> {
    let len = series.samples.iter().map(Vec::len).min().unwrap_or(0);
    let n = series.samples.len().max(1) as f64;
    (0..len)
        .map(|i| series.samples.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect()
}

/// SHA-256 of the model's canonical JSON.
pub fn model_hash(model: &WalkModel) -> String {
    hex::encode(Sha256::digest(model.to_json().as_bytes()))
}

/// One CSV row per trajectory: `traj, n, x0_*, dx_*, y_*`.
pub fn write_csv<W: Write>(ensemble: &TrajectoryEnsemble, out: W) -> Result<()> {
    let d = ensemble.lattice_dim;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["traj".to_string(), "n".to_string()];
    header.extend((1..=d).map(|k| format!("x0_{k}")));
    header.extend((1..=d).map(|k| format!("dx_{k}")));
    header.extend(ensemble.tracks.iter().map(|t| format!("y_{}", t.label)));
    w.write_record(&header).map_err(io_err)?;
    let n = ensemble.horizon().to_string();
    for (i, (x0, dx)) in ensemble.initial.iter().zip(ensemble.displacements()).enumerate() {
        let mut row = vec![i.to_string(), n.clone()];
        row.extend(x0.iter().map(i64::to_string));
        row.extend(dx.iter().map(i64::to_string));
        row.extend(ensemble.tracks.iter().map(|t| format!("{:.17e}", t.finals[i])));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Horizon and displacements read back from an ensemble CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTable {
    pub horizon: usize,
    pub displacements: Vec<Vec<i64>>,
}

pub fn read_csv<R: Read>(input: R) -> Result<EnsembleTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(io_err)?.clone();
    let n_col = header
        .iter()
        .position(|h| h == "n")
        .ok_or_else(|| Error::Parse("ensemble CSV has no n column".into()))?;
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("dx_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::Parse("ensemble CSV has no dx_ columns".into()));
    }
    let mut horizon = None;
    let mut displacements = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let field = |c: usize| {
            rec[c]
                .parse::<i64>()
                .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", line + 2, &header[c])))
        };
        let n = field(n_col)? as usize;
        match horizon {
            None => horizon = Some(n),
            Some(h) if h != n => {
                return Err(Error::Parse(format!("line {}: mixed horizons {h} and {n}", line + 2)))
            }
            _ => {}
        }
        displacements.push(cols.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?);
    }
    Ok(EnsembleTable {
        horizon: horizon.ok_or(Error::EmptyEnsemble)?,
        displacements,
    })
}

fn io_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_sha256: String,
    pub horizon: usize,
    pub config: ConfigEcho,
    pub wall_time_s: f64,
}

/// Runs the ensemble and returns it with its manifest.
pub fn run_with_manifest(
    model: &WalkModel,
    rho: &DiagonalState,
    config: &SimConfig,
) -> Result<(TrajectoryEnsemble, RunManifest)> {
    let t0 = Instant::now();
    let ens = run(model, rho, config)?;
    let manifest = RunManifest {
        model_sha256: model_hash(model),
        horizon: config.steps,
        config: config.echo(),
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok((ens, manifest))
}
