//! C ABI over `leader-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every function returns a
//! [`LeaderStatus`]; on failure, [`leader_last_error_message`] describes the
//! most recent error on the calling thread. Panics never unwind into C.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use leader_core::cmr::{omega, CmrParams};
use leader_core::eval::{pair_minutiae, precision_recall_f1, ThresholdLevel};
use leader_core::io::{read_minutiae, read_weights, write_minutiae};
use leader_core::model::random_model;
use leader_core::{build_model, Error, MinutiaKind, MinutiaSet, Model, ModelConfig, Tensor};

/// Result of every call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArg = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArg = 2,
    Io = 3,
    /// A file was malformed: image, minutiae, container or checksum.
    Format = 4,
    /// Weights or config do not describe a valid network.
    Model = 5,
    /// A computation produced NaN or infinity.
    Numeric = 6,
    /// Internal bug; the library caught a panic.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderMinutiaKind {
    Ending = 0,
    Bifurcation = 1,
}

/// One minutia. `theta` is radians in (-pi, pi], `quality` in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderMinutia {
    pub x: u32,
    pub y: u32,
    pub theta: f64,
    pub kind: LeaderMinutiaKind,
    pub quality: f64,
}

/// Opaque network handle. Safe to share across threads for extraction.
pub struct LeaderModel {
    inner: Model,
}

/// Opaque minutiae set handle.
pub struct LeaderMinutiae {
    inner: MinutiaSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs were replaced"));
}

fn status_of(e: &Error) -> LeaderStatus {
    match e {
        Error::Io(_) => LeaderStatus::Io,
        Error::Format(_)
        | Error::Parse { .. }
        | Error::Checksum { .. }
        | Error::Truncated(_)
        | Error::DuplicateName(_)
        | Error::Container(_) => LeaderStatus::Format,
        Error::Structural(_) | Error::MissingTensor(_) | Error::ShapeMismatch { .. } | Error::Config(_) => {
            LeaderStatus::Model
        }
        Error::NonFinite(_) => LeaderStatus::Numeric,
        Error::InvalidParameter(_) => LeaderStatus::InvalidArg,
    }
}

struct Fail(LeaderStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LeaderStatus::NullArg, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LeaderStatus::InvalidArg, msg.into())
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LeaderStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LeaderStatus::Ok
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
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LeaderStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on this
/// thread.
#[no_mangle]
pub extern "C" fn leader_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a weight container. `config_path` may be null for the built-in
/// configuration.
///
/// Path arguments must be null or NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn leader_model_load(
    weights_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut LeaderModel,
) -> LeaderStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let weights = read_weights(path_arg(weights_path, "weights_path")?)?;
        let cfg = if config_path.is_null() {
            ModelConfig::default()
        } else {
            ModelConfig::load(path_arg(config_path, "config_path")?)?
        };
        let model = build_model(&weights, &cfg)?;
        *out = Box::into_raw(Box::new(LeaderModel { inner: model }));
        Ok(())
    })
}

/// Builds the default network with seeded random weights.
///
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_model_random(seed: u64, out: *mut *mut LeaderModel) -> LeaderStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let model = random_model(&ModelConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(LeaderModel { inner: model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn leader_model_free(model: *mut LeaderModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_model_parameter_count(model: *const LeaderModel, out: *mut u64) -> LeaderStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        *out_arg(out, "out")? = m.inner.parameter_count() as u64;
        Ok(())
    })
}

/// Extracts minutiae from an 8-bit grayscale image stored row-major with
/// `stride` bytes per row (`stride >= width`).
///
/// `pixels` must point to `stride * height` readable bytes; `model` must be
/// a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_extract(
    model: *const LeaderModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    stride: u32,
    tau_q: f64,
    out: *mut *mut LeaderMinutiae,
) -> LeaderStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let m = ref_arg(model, "model")?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let (w, h, stride) = (width as usize, height as usize, stride as usize);
        if w == 0 || h == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if stride < w {
            return Err(invalid(format!("stride {stride} is smaller than width {w}")));
        }
        let raw = std::slice::from_raw_parts(pixels, stride * h);
        let mut data = Vec::with_capacity(w * h);
        for row in raw.chunks_exact(stride) {
            data.extend(row[..w].iter().map(|&b| b as f32 / 255.0));
        }
        let image = Tensor::from_vec(h, w, 1, data)?;
        let (set, _) = m.inner.extract(&image, tau_q)?;
        *out = Box::into_raw(Box::new(LeaderMinutiae { inner: set }));
        Ok(())
    })
}

/// Reads a minutiae text file.
///
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_minutiae_read(path: *const c_char, out: *mut *mut LeaderMinutiae) -> LeaderStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let set = read_minutiae(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(LeaderMinutiae { inner: set }));
        Ok(())
    })
}

/// Writes a minutiae text file atomically.
///
/// `set` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn leader_minutiae_write(set: *const LeaderMinutiae, path: *const c_char) -> LeaderStatus {
    guard(|| {
        let s = ref_arg(set, "set")?;
        write_minutiae(path_arg(path, "path")?, &s.inner)?;
        Ok(())
    })
}

/// Number of minutiae in `set`; 0 for null.
///
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn leader_minutiae_len(set: *const LeaderMinutiae) -> u64 {
    set.as_ref().map_or(0, |s| s.inner.len() as u64)
}

/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_minutiae_get(
    set: *const LeaderMinutiae,
    index: u64,
    out: *mut LeaderMinutia,
) -> LeaderStatus {
    guard(|| {
        let s = ref_arg(set, "set")?;
        let out = out_arg(out, "out")?;
        let m = usize::try_from(index)
            .ok()
            .and_then(|i| s.inner.minutiae().get(i))
            .ok_or_else(|| invalid(format!("index {index} out of range for {} minutiae", s.inner.len())))?;
        *out = LeaderMinutia {
            x: m.x as u32,
            y: m.y as u32,
            theta: m.theta,
            kind: match m.kind {
                MinutiaKind::RidgeEnding => LeaderMinutiaKind::Ending,
                MinutiaKind::Bifurcation => LeaderMinutiaKind::Bifurcation,
            },
            quality: m.quality,
        };
        Ok(())
    })
}

/// Releases a minutiae set. Null is ignored.
///
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn leader_minutiae_free(set: *mut LeaderMinutiae) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Ground-truth weight profile at distance `s` from a minutia.
///
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_cmr_omega(
    s: f64,
    delta: f64,
    beta: f64,
    sigma: f64,
    lambda: f64,
    out: *mut f64,
) -> LeaderStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if s.is_nan() || s < 0.0 {
            return Err(invalid(format!("distance must be non-negative, got {s}")));
        }
        let params = CmrParams::new(delta, beta, sigma, lambda)?;
        *out = omega(s, &params)?;
        Ok(())
    })
}

/// Pairs two sets under one threshold level, without border filtering, and
/// reports precision, recall and F1. Any output pointer may be null.
///
/// Set handles must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn leader_evaluate(
    extracted: *const LeaderMinutiae,
    ground_truth: *const LeaderMinutiae,
    rho_t: f64,
    theta_t: f64,
    type_aware: bool,
    precision: *mut f64,
    recall: *mut f64,
    f1: *mut f64,
) -> LeaderStatus {
    guard(|| {
        let e = ref_arg(extracted, "extracted")?;
        let g = ref_arg(ground_truth, "ground_truth")?;
        let level = ThresholdLevel::new(rho_t, theta_t)?;
        let op = precision_recall_f1(&pair_minutiae(&e.inner, &g.inner, &level, type_aware));
        for (p, v) in [(precision, op.precision), (recall, op.recall), (f1, op.f1)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}
