//! Command line front end: JSON in, CSV/JSON out.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::asymptotics::{self, MixtureModel, RateFunction};
use crate::empirics::{self, DistanceRow, Mixture1D};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, identity, CMatrix};
use crate::model::{matrix_to_json, WalkModel};
use crate::state::DiagonalState;
use crate::structure::{self, SpaceDecomposition, DEFAULT_SEED};
use crate::trajectory::{self, SimConfig, YTrack};

#[derive(Debug, Parser)]
#[command(name = "oqw", version, about = "Homogeneous open quantum random walks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model (and optionally a state) for consistency.
    Validate(Common),
    /// Recurrent/transient split, blocks, absorption operators and weights.
    Analyze(Common),
    /// Gaussian mixture predicted for (X_n − X_0)/√n.
    Clt(CltArgs),
    /// Monte Carlo ensembles of quantum trajectories.
    Simulate(SimulateArgs),
    /// W1/KS distances between simulated ensembles and a CLT prediction.
    Compare(CompareArgs),
    /// Rate function sweep.
    Ldp(LdpArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the random elements used by the block decomposition.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub steps: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub axis: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub steps: Vec<usize>,
    #[arg(long)]
    pub traj: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Block id `α`, or `α.β` for the β-th minimal enclosure of block α.
    #[arg(long = "enclosure-track")]
    pub enclosure_track: Vec<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Ensemble CSV files written by `simulate`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ensemble: Vec<PathBuf>,
    /// `mixture.json` written by `clt`.
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub axis: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct LdpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `lo:hi:step` along the axis.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub axis: Option<Vec<f64>>,
    /// `lo:hi` window for empirical decay rates of (X_n − X_0)/n.
    #[arg(long, allow_hyphen_values = true)]
    pub interval: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_model(path: &Path) -> Result<WalkModel> {
    let model = with_path(path, WalkModel::from_json(&read(path)?))?;
    model.validate()?;
    Ok(model)
}

fn load_state(path: &Path, model: &WalkModel) -> Result<DiagonalState> {
    let rho = with_path(path, DiagonalState::from_json(&read(path)?))?;
    if rho.local_dim() != model.local_dim() || rho.lattice_dim() != model.lattice_dim() {
        return Err(Error::InvalidState(format!(
            "{}: state is {}-level on ℤ^{}, model is {}-level on ℤ^{}",
            path.display(),
            rho.local_dim(),
            rho.lattice_dim(),
            model.local_dim(),
            model.lattice_dim()
        )));
    }
    Ok(rho)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    empirics::write_rows(rows, &mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// `lo:hi:step` → points `lo, lo + step, …` up to `hi`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Parse(format!("grid {spec:?}: expected lo:hi:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (lo, hi, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || hi < lo || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

pub fn parse_interval(spec: &str) -> Result<(f64, f64)> {
    let bad = || Error::Parse(format!("interval {spec:?}: expected lo:hi"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let lo = a.trim().parse::<f64>().map_err(|_| bad())?;
    let hi = b.trim().parse::<f64>().map_err(|_| bad())?;
    if hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackId {
    Block(usize),
    Enclosure(usize, usize),
}

impl TrackId {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("enclosure track {s:?}: expected BLOCK or BLOCK.ENCLOSURE"));
        match s.split_once('.') {
            Some((a, b)) => Ok(TrackId::Enclosure(
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
            )),
            None => Ok(TrackId::Block(s.parse().map_err(|_| bad())?)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TrackId::Block(a) => format!("block{a}"),
            TrackId::Enclosure(a, b) => format!("block{a}.{b}"),
        }
    }

    fn operator(&self, decomposition: &SpaceDecomposition) -> Result<CMatrix> {
        let missing = || Error::Precondition(format!("no {}", self.label()));
        match *self {
            TrackId::Block(a) => Ok(decomposition.blocks.get(a).ok_or_else(missing)?.absorption.matrix.clone()),
            TrackId::Enclosure(a, b) => Ok(decomposition
                .blocks
                .get(a)
                .and_then(|blk| blk.enclosure_absorption.get(b))
                .ok_or_else(missing)?
                .matrix
                .clone()),
        }
    }
}

#[derive(Debug, Serialize)]
struct SubspaceReport {
    dim: usize,
    basis: Vec<Vec<[f64; 2]>>,
}

impl SubspaceReport {
    fn new(s: &crate::Subspace) -> Self {
        SubspaceReport {
            dim: s.dim(),
            basis: matrix_to_json(s.basis()),
        }
    }
}

#[derive(Debug, Serialize)]
struct BlockReport {
    id: usize,
    dim: usize,
    multiplicity: usize,
    subspace: SubspaceReport,
    minimal_enclosures: Vec<SubspaceReport>,
    absorption: Vec<Vec<[f64; 2]>>,
    mean_rate: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct WeightReport {
    blocks: Vec<f64>,
    enclosures: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct DecompositionReport {
    local_dim: usize,
    lattice_dim: usize,
    seed: u64,
    recurrent: SubspaceReport,
    transient: SubspaceReport,
    blocks: Vec<BlockReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<WeightReport>,
}

fn decomposition_report(
    model: &WalkModel,
    d: &SpaceDecomposition,
    rho: Option<&DiagonalState>,
    seed: u64,
) -> Result<DecompositionReport> {
    let mut blocks = Vec::with_capacity(d.blocks.len());
    for (id, b) in d.blocks.iter().enumerate() {
        let g = asymptotics::clt_parameters(model, b.representative())?;
        blocks.push(BlockReport {
            id,
            dim: b.subspace.dim(),
            multiplicity: b.multiplicity(),
            subspace: SubspaceReport::new(&b.subspace),
            minimal_enclosures: b.minimal_enclosures.iter().map(SubspaceReport::new).collect(),
            absorption: matrix_to_json(&b.absorption.matrix),
            mean_rate: g.mean_rate,
            covariance: g.covariance,
        });
    }
    let weights = match rho {
        Some(r) => {
            let w = structure::weights(d, r)?;
            Some(WeightReport {
                blocks: w.blocks,
                enclosures: w.enclosures,
            })
        }
        None => None,
    };
    Ok(DecompositionReport {
        local_dim: model.local_dim(),
        lattice_dim: model.lattice_dim(),
        seed,
        recurrent: SubspaceReport::new(&d.recurrent),
        transient: SubspaceReport::new(&d.transient),
        blocks,
        weights,
    })
}

fn cmd_validate(args: &Common) -> Result<String> {
    let model = load_model(&args.model)?;
    let rho = match &args.state {
        Some(p) => Some(load_state(p, &model)?),
        None => None,
    };
    let d = structure::decompose_seeded(&model, args.seed.unwrap_or(DEFAULT_SEED))?;
    let h = model.local_dim();
    let total = d
        .blocks
        .iter()
        .fold(CMatrix::zeros(h, h), |acc, b| acc + &b.absorption.matrix);
    let defect = frobenius(&(total - identity(h)));
    if defect > 1e-8 {
        return Err(Error::AssertionFailure(format!(
            "absorption operators sum to identity only within {defect:.3e}"
        )));
    }
    let mut report = format!(
        "model ok: h = {h}, d = {}, {} branches, normalization deviation {:.3e}\n\
         recurrent dim {}, transient dim {}, {} block(s), Σ A(χ) − 1 = {defect:.3e}\n",
        model.lattice_dim(),
        model.branch_count(),
        model.normalization_deviation(),
        d.recurrent.dim(),
        d.transient.dim(),
        d.blocks.len()
    );
    if let Some(r) = rho {
        let w = structure::weights(&d, &r)?;
        if (w.total() - 1.0).abs() > 1e-8 {
            return Err(Error::AssertionFailure(format!("block weights sum to {}", w.total())));
        }
        report.push_str(&format!("state ok: block weights {:?}\n", w.blocks));
    }
    Ok(report)
}

fn cmd_analyze(args: &Common) -> Result<String> {
    let model = load_model(&args.model)?;
    let rho = match &args.state {
        Some(p) => Some(load_state(p, &model)?),
        None => None,
    };
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let d = structure::decompose_seeded(&model, seed)?;
    let report = decomposition_report(&model, &d, rho.as_ref(), seed)?;
    let bytes = json_bytes(&report);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write(&out.join("decomposition.json"), &bytes)?;
    }
    let dims: Vec<usize> = d.blocks.iter().map(|b| b.subspace.dim()).collect();
    let mult: Vec<usize> = d.blocks.iter().map(|b| b.multiplicity()).collect();
    Ok(format!(
        "recurrent dim {}, transient dim {}, block dims {dims:?}, multiplicities {mult:?}\n",
        d.recurrent.dim(),
        d.transient.dim()
    ))
}

#[derive(Debug, Serialize)]
struct MixtureCdfRow {
    x: f64,
    #[serde(rename = "F_mix")]
    f_mix: f64,
}

fn cmd_clt(args: &CltArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let rho = load_state(&args.state, &model)?;
    let d = structure::decompose(&model)?;
    let base = asymptotics::clt_mixture(&model, &d, &rho, 0)?;
    let axis = args.axis.as_deref();
    ensure_dir(&args.out)?;
    let mut predictions = Vec::with_capacity(args.steps.len());
    let mut summary = String::new();
    for &n in &args.steps {
        let mix = base.at_horizon(n);
        let m1 = Mixture1D::from_model(&mix, axis)?;
        let lo = m1.components.iter().map(|c| c.mean - 5.0 * c.sd.max(0.2)).fold(f64::INFINITY, f64::min);
        let hi = m1.components.iter().map(|c| c.mean + 5.0 * c.sd.max(0.2)).fold(f64::NEG_INFINITY, f64::max);
        let rows: Vec<MixtureCdfRow> = (0..=200)
            .map(|k| {
                let x = lo + (hi - lo) * k as f64 / 200.0;
                MixtureCdfRow { x, f_mix: m1.cdf(x) }
            })
            .collect();
        write(&args.out.join(format!("cdf_n{n}.csv")), &csv_bytes(&rows)?)?;
        for c in &m1.components {
            summary.push_str(&format!(
                "n = {n}: weight {:.6} N({:.6}, {:.6})\n",
                c.weight,
                c.mean,
                c.sd * c.sd
            ));
        }
        predictions.push(mix);
    }
    write(&args.out.join("mixture.json"), &json_bytes(&predictions))?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct AbsorptionRow {
    track: String,
    n: usize,
    frac_hi: f64,
    frac_lo: f64,
    frac_mid: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let rho = load_state(&args.state, &model)?;
    let ids = args
        .enclosure_track
        .iter()
        .map(|s| TrackId::parse(s))
        .collect::<Result<Vec<_>>>()?;
    let mut tracks = Vec::with_capacity(ids.len());
    if !ids.is_empty() {
        let d = structure::decompose(&model)?;
        for id in &ids {
            tracks.push(YTrack::new(id.label(), id.operator(&d)?)?);
        }
    }
    ensure_dir(&args.out)?;
    let mut summary = String::new();
    for &n in &args.steps {
        let mut config = SimConfig::new(n, args.traj, args.seed);
        config.y_tracks = tracks.clone();
        config.y_stride = n.max(1);
        config.threads = args.threads;
        let (ens, manifest) = trajectory::run_with_manifest(&model, &rho, &config)?;
        let mut buf = Vec::new();
        trajectory::write_csv(&ens, &mut buf)?;
        write(&args.out.join(format!("ensemble_n{n}.csv")), &buf)?;
        write(&args.out.join(format!("manifest_n{n}.json")), &json_bytes(&manifest))?;
        if !tracks.is_empty() {
            let mut rows = Vec::with_capacity(tracks.len());
            for t in &tracks {
                let f = trajectory::classify_absorption(&ens, &t.label, 0.99, 0.01)?;
                summary.push_str(&format!(
                    "n = {n}, {}: Y > 0.99 {:.4}, Y < 0.01 {:.4}\n",
                    t.label, f.hi, f.lo
                ));
                rows.push(AbsorptionRow {
                    track: t.label.clone(),
                    n,
                    frac_hi: f.hi,
                    frac_lo: f.lo,
                    frac_mid: f.mid,
                });
            }
            write(&args.out.join(format!("absorption_n{n}.csv")), &csv_bytes(&rows)?)?;
        }
        summary.push_str(&format!("n = {n}: {} trajectories\n", ens.len()));
    }
    Ok(summary)
}

fn cmd_compare(args: &CompareArgs) -> Result<String> {
    let text = read(&args.prediction)?;
    let predictions: Vec<MixtureModel> =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", args.prediction.display())))?;
    let axis = args.axis.as_deref();
    ensure_dir(&args.out)?;
    let mut rows = Vec::with_capacity(args.ensemble.len());
    for path in &args.ensemble {
        let table = with_path(path, trajectory::read_csv(read(path)?.as_bytes()))?;
        let n = table.horizon;
        let mix = predictions.iter().find(|m| m.horizon == n).ok_or(Error::HorizonMismatch {
            prediction: predictions.first().map(|m| m.horizon).unwrap_or(0),
            ensemble: n,
        })?;
        let emp = empirics::rescale_displacements(&table.displacements, n, axis)?;
        let m1 = Mixture1D::from_model(mix, axis)?;
        let report = empirics::distance(&emp, &m1)?;
        write(
            &args.out.join(format!("cdf_compare_n{n}.csv")),
            &csv_bytes(&empirics::cdf_comparison(&emp, &m1, 401)?)?,
        )?;
        write(
            &args.out.join(format!("histogram_n{n}.csv")),
            &csv_bytes(&empirics::histogram(&emp, 60)?)?,
        )?;
        rows.push(DistanceRow {
            n,
            count: emp.len(),
            w1: report.w1,
            ks: report.ks,
        });
    }
    write(&args.out.join("distances.csv"), &csv_bytes(&rows)?)?;
    let mut summary = String::new();
    for r in &rows {
        summary.push_str(&format!("n = {}: W1 = {:.5}, KS = {:.5} (N = {})\n", r.n, r.w1, r.ks, r.count));
    }
    summary.push_str(&format!("note: {}\n", empirics::W1_NOTE));
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct LdpSummary {
    label: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    zeros: Vec<Vec<f64>>,
}

fn cmd_ldp(args: &LdpArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let rho = load_state(&args.state, &model)?;
    let d = structure::decompose(&model)?;
    let dim = model.lattice_dim();
    let axis = match (&args.axis, dim) {
        (Some(a), _) if a.len() == dim => a.clone(),
        (Some(a), _) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: a.len(),
            })
        }
        (None, 1) => vec![1.0],
        (None, _) => return Err(Error::MissingAxis(dim)),
    };
    let grid = parse_grid(&args.grid)?;
    let rf = RateFunction::new(&model, &d, &rho)?;
    ensure_dir(&args.out)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=dim).map(|k| format!("x_{k}")).collect();
    header.push("Lambda".into());
    header.extend((1..=dim).map(|k| format!("u*_{k}")));
    header.push("block_id".into());
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let mut note = None;
    for t in grid {
        let x: Vec<f64> = axis.iter().map(|a| a * t).collect();
        let r = rf.evaluate(&x)?;
        let block = r
            .per_block
            .iter()
            .find(|b| b.value == r.value)
            .map(|b| b.block.to_string())
            .unwrap_or_default();
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(r.value.to_string());
        row.extend(r.maximizer.iter().map(|v| v.to_string()));
        row.push(block);
        w.write_record(&row).map_err(csv_err)?;
        note = note.or(r.note);
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write(&args.out.join("rates.csv"), &bytes)?;
    let label = rf.regime().label();
    write(
        &args.out.join("ldp.json"),
        &json_bytes(&LdpSummary {
            label,
            note,
            zeros: rf.zeros()?,
        }),
    )?;

    if let Some(spec) = &args.interval {
        if dim != 1 {
            return Err(Error::Precondition("--interval needs a one-dimensional walk".into()));
        }
        let (lo, hi) = parse_interval(spec)?;
        let bound = -rf.infimum_on_interval(lo, hi)?;
        let mut ensembles = Vec::with_capacity(args.ensemble.len());
        for path in &args.ensemble {
            let table = with_path(path, trajectory::read_csv(read(path)?.as_bytes()))?;
            ensembles.push((table.horizon, table.displacements));
        }
        let rows = empirics::ldp_estimate(&ensembles, lo, hi, None, bound)?;
        write(&args.out.join("ldp_empirical.csv"), &csv_bytes(&rows)?)?;
    }
    Ok(format!("{label}\n"))
}

/// Runs a parsed command and returns the text report for stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Clt(a) => cmd_clt(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Ldp(a) => cmd_ldp(a),
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
