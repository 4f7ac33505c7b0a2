//! C ABI over the insole-vgrf library.
//!
//! Every fallible function returns an [`IvgStatus`]. On failure the message
//! is kept per thread and can be read with [`ivg_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.
//! Windows are channel-major: `channels * IVG_WINDOW_LEN` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use insole_vgrf::cops::{adaptive_threshold, cops_from_states, frame_states, AdaptiveThresholds};
use insole_vgrf::evaluation::{nrmse, pearson_r, postprocess, rmse, Predictor};
use insole_vgrf::models::{load_model, Regressor};
use insole_vgrf::postsignal::{detect_stance, extract_peaks, smooth_estimate};
use insole_vgrf::preprocess::{read_windows, GaitCycleWindow, WindowSet, WINDOW_LEN};
use insole_vgrf::types::{FootSide, PressureFrame, SensorArrayLayout};
use insole_vgrf::Error;

/// Samples per gait-cycle window.
pub const IVG_WINDOW_LEN: usize = 200;
const _: () = assert!(IVG_WINDOW_LEN == WINDOW_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptFile = 4,
    VersionMismatch = 5,
    /// input rejected by the pipeline (too short, constant, no stance, ...)
    InvalidData = 6,
    ManifestMismatch = 7,
    Panic = 8,
}

/// Trained regressor loaded from a model file.
pub struct IvgModel(Regressor);

/// Gait-cycle windows loaded from a window file.
pub struct IvgWindowSet(WindowSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IvgPeaks {
    /// BW
    pub wap_value: f64,
    /// fraction of the cycle
    pub wap_time: f64,
    pub pop_value: f64,
    pub pop_time: f64,
    pub stance_start: usize,
    /// inclusive
    pub stance_end: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IvgCops {
    /// mm
    pub x: f64,
    pub y: f64,
    /// 0 means swing; x and y then hold the layout centroid
    pub pressed_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IvgStatus {
    match e {
        Error::Io { .. } | Error::OutputExists(_) => IvgStatus::Io,
        Error::CorruptFile(_) => IvgStatus::CorruptFile,
        Error::VersionMismatch { .. } => IvgStatus::VersionMismatch,
        Error::InvalidManifest(_) => IvgStatus::ManifestMismatch,
        Error::Config(_) => IvgStatus::InvalidArgument,
        _ => IvgStatus::InvalidData,
    }
}

struct Fail(IvgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IvgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IvgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IvgStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            IvgStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(IvgStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn foot(code: u8) -> Result<FootSide, Fail> {
    match code {
        0 => Ok(FootSide::Left),
        1 => Ok(FootSide::Right),
        _ => Err(Fail(IvgStatus::InvalidArgument, format!("foot must be 0 or 1, got {code}"))),
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ivg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ivg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `reference` and `estimate` must point to `n` readable doubles; `result`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_rmse(reference: *const f64, estimate: *const f64, n: usize, result: *mut f64) -> IvgStatus {
    guard(|| {
        let v = rmse(slice(reference, n, "reference")?, slice(estimate, n, "estimate")?)?;
        *out(result, "result")? = v;
        Ok(())
    })
}

/// RMSE over the reference range, percent.
///
/// # Safety
/// As [`ivg_rmse`].
#[no_mangle]
pub unsafe extern "C" fn ivg_nrmse(reference: *const f64, estimate: *const f64, n: usize, result: *mut f64) -> IvgStatus {
    guard(|| {
        let v = nrmse(slice(reference, n, "reference")?, slice(estimate, n, "estimate")?)?;
        *out(result, "result")? = v;
        Ok(())
    })
}

/// # Safety
/// As [`ivg_rmse`].
#[no_mangle]
pub unsafe extern "C" fn ivg_pearson_r(reference: *const f64, estimate: *const f64, n: usize, result: *mut f64) -> IvgStatus {
    guard(|| {
        let v = pearson_r(slice(reference, n, "reference")?, slice(estimate, n, "estimate")?)?;
        *out(result, "result")? = v;
        Ok(())
    })
}

/// Swing-phase mean plus three sample standard deviations.
///
/// # Safety
/// `swing_values` must point to `n` readable doubles; `result` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_adaptive_threshold(swing_values: *const f64, n: usize, result: *mut f64) -> IvgStatus {
    guard(|| {
        let v = slice(swing_values, n, "swing_values")?;
        if n < 2 || v.iter().any(|x| !x.is_finite()) {
            return Err(Fail(IvgStatus::InvalidData, "need at least 2 finite swing values".into()));
        }
        *out(result, "result")? = adaptive_threshold(v);
        Ok(())
    })
}

/// CoPS of one pressure frame: centroid of the sensors at or above their
/// threshold.
///
/// # Safety
/// `pressures` and `thresholds` must hold `n_sensors` doubles, `coords`
/// `2 * n_sensors` doubles as (x, y) pairs; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_cops(
    pressures: *const f64,
    thresholds: *const f64,
    coords: *const f64,
    n_sensors: usize,
    result: *mut IvgCops,
) -> IvgStatus {
    guard(|| {
        let p = slice(pressures, n_sensors, "pressures")?;
        let at = slice(thresholds, n_sensors, "thresholds")?;
        let xy = slice(coords, 2 * n_sensors, "coords")?;
        let layout = SensorArrayLayout::new(xy.chunks(2).map(|c| (c[0], c[1])).collect())?;
        let at = AdaptiveThresholds::from_values(at.to_vec(), usize::MAX)?;
        let states = frame_states(&PressureFrame::new(0.0, p.to_vec()), &at)?;
        let c = cops_from_states(&states, &layout)?;
        *out(result, "result")? = IvgCops {
            x: c.x,
            y: c.y,
            pressed_count: c.pressed_count,
        };
        Ok(())
    })
}

/// 4th-order zero-phase low-pass at 6 Hz on a 100 Hz series; `output` may
/// alias `series`.
///
/// # Safety
/// `series` must hold `n` doubles and `output` must have room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ivg_smooth(series: *const f64, n: usize, output: *mut f64) -> IvgStatus {
    guard(|| {
        let s = smooth_estimate(slice(series, n, "series")?)?;
        slice_mut(output, n, "output")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Stance detection and WAP/POP extraction on one cycle of `n` samples.
///
/// # Safety
/// `vgrf` must hold `n` doubles; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_extract_peaks(vgrf: *const f64, n: usize, result: *mut IvgPeaks) -> IvgStatus {
    guard(|| {
        let v = slice(vgrf, n, "vgrf")?;
        let stance = detect_stance(v)?;
        let p = extract_peaks(v, stance, n)?;
        *out(result, "result")? = IvgPeaks {
            wap_value: p.wap_value,
            wap_time: p.wap_time,
            pop_value: p.pop_value,
            pop_time: p.pop_time,
            stance_start: p.stance.start,
            stance_end: p.stance.end,
        };
        Ok(())
    })
}

/// Loads a model file. On success `*model` owns a handle to release with
/// [`ivg_model_free`].
///
/// # Safety
/// `file` must be a NUL-terminated path; `model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_model_load(file: *const c_char, model: *mut *mut IvgModel) -> IvgStatus {
    guard(|| {
        let slot = out(model, "model")?;
        *slot = ptr::null_mut();
        let m = load_model(&path(file)?)?;
        *slot = Box::into_raw(Box::new(IvgModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ivg_model_load`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ivg_model_free(model: *mut IvgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input channels the model expects.
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ivg_model_channel_count(model: *const IvgModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.manifest.len())
}

/// Tagged channel manifest, e.g. `T1:L.ax,...`, copied into `buffer`
/// with a terminating NUL. `*needed` receives the full size including the
/// NUL; when `capacity` is too small nothing is copied and
/// `InvalidArgument` is returned.
///
/// # Safety
/// `model` must be a live handle, `buffer` writable for `capacity` bytes
/// (may be NULL when `capacity` is 0), `needed` writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_model_manifest(
    model: *const IvgModel,
    buffer: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> IvgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = m.0.manifest.to_tagged_string();
        *out(needed, "needed")? = text.len() + 1;
        if capacity < text.len() + 1 {
            return Err(Fail(IvgStatus::InvalidArgument, "buffer too small".into()));
        }
        let buf = slice_mut(buffer.cast::<u8>(), capacity, "buffer")?;
        buf[..text.len()].copy_from_slice(text.as_bytes());
        buf[text.len()] = 0;
        Ok(())
    })
}

/// Model family: 1 MLP, 2 random forest, 3 BiLSTM, 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ivg_model_kind(model: *const IvgModel) -> u8 {
    use insole_vgrf::models::ModelKind;
    model.as_ref().map_or(0, |m| match m.0.kind() {
        ModelKind::Mlp => 1,
        ModelKind::Rf => 2,
        ModelKind::Lstm => 3,
    })
}

/// vGRF estimate (BW) for one window. `x` holds `channels * IVG_WINDOW_LEN`
/// channel-major values in the order of [`ivg_model_manifest`]; samples
/// from `valid_length` on are padding. With `smooth` set, pointwise models
/// get the zero-phase low-pass over the valid part, as in evaluation.
/// `output` receives `IVG_WINDOW_LEN` values.
///
/// # Safety
/// `model` must be a live handle, `x` readable and `output` writable for
/// the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ivg_model_predict(
    model: *const IvgModel,
    x: *const f64,
    channels: usize,
    valid_length: usize,
    foot_side: u8,
    smooth: bool,
    output: *mut f64,
) -> IvgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if channels != m.manifest.len() {
            return Err(Fail(
                IvgStatus::ManifestMismatch,
                format!("model expects {} channels, got {channels}", m.manifest.len()),
            ));
        }
        if valid_length == 0 || valid_length > WINDOW_LEN {
            return Err(Fail(
                IvgStatus::InvalidArgument,
                format!("valid_length must be in 1..={WINDOW_LEN}"),
            ));
        }
        let w = GaitCycleWindow {
            subject_id: String::new(),
            speed: 0.0,
            foot: foot(foot_side)?,
            cycle_index: 0,
            x: slice(x, channels * WINDOW_LEN, "x")?.to_vec(),
            y: vec![0.0; WINDOW_LEN],
            valid_length,
        };
        let mut est = m.predict(std::slice::from_ref(&w))?.remove(0);
        if smooth {
            let s = postprocess(&Predictor::Model(Box::new(m.config.clone())), &est[..valid_length])?;
            est[..valid_length].copy_from_slice(&s);
        }
        slice_mut(output, WINDOW_LEN, "output")?.copy_from_slice(&est);
        Ok(())
    })
}

/// Loads a window file. Release with [`ivg_windows_free`].
///
/// # Safety
/// `file` must be a NUL-terminated path; `windows` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_windows_load(file: *const c_char, windows: *mut *mut IvgWindowSet) -> IvgStatus {
    guard(|| {
        let slot = out(windows, "windows")?;
        *slot = ptr::null_mut();
        let p = path(file)?;
        let f = std::fs::File::open(&p).map_err(|e| Fail(IvgStatus::Io, format!("{}: {e}", p.display())))?;
        let set = read_windows(std::io::BufReader::new(f))?;
        *slot = Box::into_raw(Box::new(IvgWindowSet(set)));
        Ok(())
    })
}

/// # Safety
/// `windows` must come from [`ivg_windows_load`] and not be used
/// afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ivg_windows_free(windows: *mut IvgWindowSet) {
    if !windows.is_null() {
        drop(Box::from_raw(windows));
    }
}

/// # Safety
/// `windows` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ivg_windows_count(windows: *const IvgWindowSet) -> usize {
    windows.as_ref().map_or(0, |w| w.0.windows.len())
}

/// # Safety
/// `windows` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn ivg_windows_channel_count(windows: *const IvgWindowSet) -> usize {
    windows.as_ref().map_or(0, |w| w.0.manifest.len())
}

/// Copies window `index`: features into `x` (channels * IVG_WINDOW_LEN),
/// reference vGRF into `y` (IVG_WINDOW_LEN). `x` or `y` may be NULL to
/// skip them.
///
/// # Safety
/// `windows` must be a live handle; non-NULL buffers must have the sizes
/// above; `valid_length` and `foot_side` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivg_windows_get(
    windows: *const IvgWindowSet,
    index: usize,
    x: *mut f64,
    y: *mut f64,
    valid_length: *mut usize,
    foot_side: *mut u8,
) -> IvgStatus {
    guard(|| {
        let set = &windows.as_ref().ok_or_else(|| null("windows"))?.0;
        let w = set.windows.get(index).ok_or_else(|| {
            Fail(
                IvgStatus::InvalidArgument,
                format!("index {index} out of range ({} windows)", set.windows.len()),
            )
        })?;
        if !x.is_null() {
            slice_mut(x, w.x.len(), "x")?.copy_from_slice(&w.x);
        }
        if !y.is_null() {
            slice_mut(y, w.y.len(), "y")?.copy_from_slice(&w.y);
        }
        *out(valid_length, "valid_length")? = w.valid_length;
        *out(foot_side, "foot_side")? = w.foot.index() as u8;
        Ok(())
    })
}
