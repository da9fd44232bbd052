//! C ABI over `oqw`.
//!
//! Models, states and decompositions are opaque heap handles released with
//! their `*_free` function. Every call returns an [`OqwStatus`]; on failure
//! the message is kept per thread and read with [`oqw_last_error_message`].
//! Matrices cross the boundary row-major as separate real and imaginary
//! arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use oqw::asymptotics::{self, RateFunction};
use oqw::state::DiagonalState;
use oqw::structure::{self, SpaceDecomposition};
use oqw::trajectory::{self, SimConfig};
use oqw::{Error, WalkModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OqwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    InvalidModel = 4,
    InvalidState = 5,
    NumericalError = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque walk model.
pub struct OqwModel {
    inner: WalkModel,
}

/// Opaque diagonal initial state.
pub struct OqwState {
    inner: DiagonalState,
}

/// Opaque decomposition of the internal space, bound to its model.
pub struct OqwDecomposition {
    model: WalkModel,
    inner: SpaceDecomposition,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> OqwStatus {
    match e {
        Error::Parse(_) | Error::Io { .. } => OqwStatus::ParseError,
        Error::InvalidModel(_) | Error::NotTracePreserving { .. } => OqwStatus::InvalidModel,
        Error::InvalidState(_) => OqwStatus::InvalidState,
        Error::DimensionMismatch { .. }
        | Error::MissingAxis(_)
        | Error::MissingTrack(_)
        | Error::EmptySubspace
        | Error::EmptyEnsemble
        | Error::HorizonMismatch { .. }
        | Error::Precondition(_) => OqwStatus::InvalidArgument,
        _ => OqwStatus::NumericalError,
    }
}

struct Fail(OqwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OqwStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OqwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            OqwStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OqwStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(OqwStatus::ParseError, format!("{what} is not UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            OqwStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn oqw_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a model from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oqw_model_from_json(json: *const c_char, out: *mut *mut OqwModel) -> OqwStatus {
    guard(|| {
        let text = text(json, "json")?;
        let model = WalkModel::from_json(text)?;
        model.validate()?;
        put(out, Box::into_raw(Box::new(OqwModel { inner: model })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`oqw_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oqw_model_free(model: *mut OqwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Local dimension `h` and lattice dimension `d`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn oqw_model_dims(
    model: *const OqwModel,
    local_dim: *mut usize,
    lattice_dim: *mut usize,
) -> OqwStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        put(local_dim, m.local_dim(), "local_dim")?;
        put(lattice_dim, m.lattice_dim(), "lattice_dim")
    })
}

/// Parses and validates a diagonal state from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oqw_state_from_json(json: *const c_char, out: *mut *mut OqwState) -> OqwStatus {
    guard(|| {
        let rho = DiagonalState::from_json(text(json, "json")?)?;
        put(out, Box::into_raw(Box::new(OqwState { inner: rho })), "out")
    })
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oqw_state_free(state: *mut OqwState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Recurrent/transient split and blocks of the local channel.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oqw_decompose(
    model: *const OqwModel,
    seed: u64,
    out: *mut *mut OqwDecomposition,
) -> OqwStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        let d = structure::decompose_seeded(m, seed)?;
        let handle = OqwDecomposition {
            model: m.clone(),
            inner: d,
        };
        put(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `decomposition` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oqw_decomposition_free(decomposition: *mut OqwDecomposition) {
    if !decomposition.is_null() {
        drop(Box::from_raw(decomposition));
    }
}

/// Dimensions of the recurrent and transient spaces and the block count.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn oqw_decomposition_summary(
    decomposition: *const OqwDecomposition,
    recurrent_dim: *mut usize,
    transient_dim: *mut usize,
    block_count: *mut usize,
) -> OqwStatus {
    guard(|| {
        let d = &get(decomposition, "decomposition")?.inner;
        put(recurrent_dim, d.recurrent.dim(), "recurrent_dim")?;
        put(transient_dim, d.transient.dim(), "transient_dim")?;
        put(block_count, d.blocks.len(), "block_count")
    })
}

fn block(d: &OqwDecomposition, index: usize) -> Result<&structure::Block, Fail> {
    d.inner.blocks.get(index).ok_or_else(|| {
        Fail(
            OqwStatus::InvalidArgument,
            format!("block {index} out of range ({} blocks)", d.inner.blocks.len()),
        )
    })
}

/// Dimension and multiplicity of block `index`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn oqw_block_info(
    decomposition: *const OqwDecomposition,
    index: usize,
    dim: *mut usize,
    multiplicity: *mut usize,
) -> OqwStatus {
    guard(|| {
        let b = block(get(decomposition, "decomposition")?, index)?;
        put(dim, b.subspace.dim(), "dim")?;
        put(multiplicity, b.multiplicity(), "multiplicity")
    })
}

/// Absorption operator of block `index` as `h·h` row-major real and
/// imaginary parts.
///
/// # Safety
/// `re` and `im` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn oqw_block_absorption(
    decomposition: *const OqwDecomposition,
    index: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> OqwStatus {
    guard(|| {
        let d = get(decomposition, "decomposition")?;
        let a = &block(d, index)?.absorption.matrix;
        let h = a.nrows();
        let re = out_slice(re, len, h * h, "re")?;
        let im = out_slice(im, len, h * h, "im")?;
        for i in 0..h {
            for j in 0..h {
                re[i * h + j] = a[(i, j)].re;
                im[i * h + j] = a[(i, j)].im;
            }
        }
        Ok(())
    })
}

/// Drift `m` (`d` values) and covariance `D` (`d·d`, row-major) of block
/// `index`.
///
/// # Safety
/// `mean` must hold `d` doubles and `covariance` `d·d`.
#[no_mangle]
pub unsafe extern "C" fn oqw_block_clt(
    decomposition: *const OqwDecomposition,
    index: usize,
    mean: *mut f64,
    mean_len: usize,
    covariance: *mut f64,
    covariance_len: usize,
) -> OqwStatus {
    guard(|| {
        let d = get(decomposition, "decomposition")?;
        let g = asymptotics::clt_parameters(&d.model, block(d, index)?.representative())?;
        let k = g.mean_rate.len();
        out_slice(mean, mean_len, k, "mean")?[..k].copy_from_slice(&g.mean_rate);
        let cov = out_slice(covariance, covariance_len, k * k, "covariance")?;
        for i in 0..k {
            cov[i * k..(i + 1) * k].copy_from_slice(&g.covariance[i]);
        }
        Ok(())
    })
}

/// Block weights `a_α(ρ)`, one per block.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn oqw_block_weights(
    decomposition: *const OqwDecomposition,
    state: *const OqwState,
    out: *mut f64,
    len: usize,
) -> OqwStatus {
    guard(|| {
        let d = get(decomposition, "decomposition")?;
        let rho = &get(state, "state")?.inner;
        let w = structure::weights(&d.inner, rho)?;
        out_slice(out, len, w.blocks.len(), "out")?[..w.blocks.len()].copy_from_slice(&w.blocks);
        Ok(())
    })
}

/// Rate function at `x` (`d` values). `regime` receives 1 for a full large
/// deviation principle and 2 when only bounds hold.
///
/// # Safety
/// `x` must hold `len` doubles; `value` and `regime` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oqw_rate(
    decomposition: *const OqwDecomposition,
    state: *const OqwState,
    x: *const f64,
    len: usize,
    value: *mut f64,
    regime: *mut i32,
) -> OqwStatus {
    guard(|| {
        let d = get(decomposition, "decomposition")?;
        let rho = &get(state, "state")?.inner;
        if x.is_null() {
            return Err(null("x"));
        }
        let x = slice::from_raw_parts(x, len);
        let rf = RateFunction::new(&d.model, &d.inner, rho)?;
        let r = rf.evaluate(x)?;
        put(value, r.value, "value")?;
        let code = match r.regime {
            asymptotics::LdpRegime::Exact => 1,
            asymptotics::LdpRegime::BoundsOnly => 2,
            asymptotics::LdpRegime::Single => 0,
        };
        put(regime, code, "regime")
    })
}

/// Simulates `trajectories` trajectories of `steps` steps and writes the
/// displacements `X_n − X_0`, `d` values per trajectory.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn oqw_simulate_displacements(
    model: *const OqwModel,
    state: *const OqwState,
    steps: usize,
    trajectories: usize,
    seed: u64,
    out: *mut i64,
    len: usize,
) -> OqwStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        let rho = &get(state, "state")?.inner;
        let d = m.lattice_dim();
        let buf = out_slice(out, len, trajectories * d, "out")?;
        let ens = trajectory::run(m, rho, &SimConfig::new(steps, trajectories, seed))?;
        for (k, x) in ens.displacements().iter().enumerate() {
            buf[k * d..(k + 1) * d].copy_from_slice(x);
        }
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oqw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
