//! C interface to `watermark-core`.
//!
//! Every function returns a [`WmStatus`]; on failure a description is available from
//! [`wm_last_error_message`] on the same thread. Matrices are passed row-major.
//! Handles are created by the `*_new` functions and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use watermark_core::detector::{decide, DetectorModel, StateResponse};
use watermark_core::learning::{LearnerConfig, LearnerState};
use watermark_core::linalg::{Mat, Vector};
use watermark_core::lti::{random_stable_system, LinearSystem};
use watermark_core::scenario::{ScenarioConfig, Study};
use watermark_core::watermark::{steady_watermark_cov_from_system, WatermarkCovariance};
use watermark_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Unstable = 4,
    Singular = 5,
    DegenerateSpectrum = 6,
    NotReady = 7,
    Sequencing = 8,
    Numerical = 9,
    Io = 10,
    Panic = 11,
}

/// Validated plant `x+ = A x + B phi + w`, `y = C x + v`.
pub struct WmSystem {
    inner: LinearSystem,
}

/// Exact-parameter replay detector.
pub struct WmDetector {
    sys: LinearSystem,
    model: DetectorModel,
    response: StateResponse,
}

/// Online learner with its own watermark noise generator.
pub struct WmLearner {
    state: LearnerState,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WmStatus {
    match e {
        Error::Unstable(_) => WmStatus::Unstable,
        Error::DimensionMismatch { .. } => WmStatus::DimensionMismatch,
        Error::Singular(_) => WmStatus::Singular,
        Error::DegenerateSpectrum { .. } => WmStatus::DegenerateSpectrum,
        Error::NotReady => WmStatus::NotReady,
        Error::Sequencing(_) => WmStatus::Sequencing,
        Error::InvalidSystem(_) | Error::InvalidConfig(_) | Error::Json(_) | Error::Empty(_) => {
            WmStatus::InvalidArgument
        }
        Error::Io(_) | Error::Csv(_) | Error::Plot(_) => WmStatus::Io,
        _ => WmStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Numerical(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> WmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => WmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            WmStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            WmStatus::InvalidArgument
        }
        Ok(Err(Failure::Numerical(msg))) => {
            set_error(msg);
            WmStatus::Numerical
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            WmStatus::Panic
        }
    }
}

unsafe fn slice<'a>(
    data: *const f64,
    len: usize,
    what: &'static str,
) -> Result<&'a [f64], Failure> {
    if data.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<Mat, Failure> {
    Ok(Mat::from_row_slice(
        rows,
        cols,
        slice(data, rows * cols, what)?,
    ))
}

unsafe fn write_matrix(dst: *mut f64, m: &Mat, what: &'static str) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(Failure::Null(what));
    }
    let out = std::slice::from_raw_parts_mut(dst, m.len());
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[i * m.ncols() + j] = *v;
        }
    }
    Ok(())
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<(), Failure> {
    if got == expected {
        Ok(())
    } else {
        Err(Failure::Arg(format!(
            "{what} has length {got}, expected {expected}"
        )))
    }
}

/// Message for the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn wm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a plant from row-major `A` (n x n), `B` (n x p), `C` (m x n), `Q` (n x n), `R` (m x m).
///
/// # Safety
/// Every matrix pointer must reference the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_system_new(
    n: usize,
    m: usize,
    p: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    q: *const f64,
    r: *const f64,
    out: *mut *mut WmSystem,
) -> WmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = LinearSystem::new(
            matrix(a, n, n, "A")?,
            matrix(b, n, p, "B")?,
            matrix(c, m, n, "C")?,
            matrix(q, n, n, "Q")?,
            matrix(r, m, m, "R")?,
        )?;
        *out = Box::into_raw(Box::new(WmSystem { inner }));
        Ok(())
    })
}

/// Seeded random stable, observable and controllable plant with `Q = R = I`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_system_random(
    n: usize,
    m: usize,
    p: usize,
    seed: u64,
    rho_max: f64,
    out: *mut *mut WmSystem,
) -> WmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = random_stable_system(n, m, p, seed, rho_max)?;
        *out = Box::into_raw(Box::new(WmSystem { inner }));
        Ok(())
    })
}

/// # Safety
/// `sys` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_system_dims(
    sys: *const WmSystem,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
) -> WmStatus {
    guard(|| {
        let sys = &handle(sys, "system")?.inner;
        *out_ptr(n, "n")? = sys.n();
        *out_ptr(m, "m")? = sys.m();
        *out_ptr(p, "p")? = sys.p();
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or a handle from `wm_system_new`/`wm_system_random` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_system_free(sys: *mut WmSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Exact optimal watermark covariance (`p x p`, written to `u_out`) for budget `delta` with
/// `X = I`, and the threshold `J / 0.9` (written to `zeta_out`).
///
/// # Safety
/// `sys` must be a live handle; `u_out` must hold `p * p` doubles; `zeta_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_design_optimal(
    sys: *const WmSystem,
    delta: f64,
    u_out: *mut f64,
    zeta_out: *mut f64,
) -> WmStatus {
    guard(|| {
        let sys = &handle(sys, "system")?.inner;
        let mut cfg = ScenarioConfig::default();
        cfg.learner.delta = delta;
        cfg.validate()?;
        let study = Study::for_system(sys.clone(), &cfg)?;
        write_matrix(u_out, study.exact_u(), "u_out")?;
        *out_ptr(zeta_out, "zeta_out")? = study.zeta;
        Ok(())
    })
}

/// Detector for a plant driven by i.i.d. watermarks of covariance `u` (`p x p`) with threshold `zeta`.
///
/// # Safety
/// `sys` must be a live handle; `u` must hold `p * p` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_detector_new(
    sys: *const WmSystem,
    u: *const f64,
    zeta: f64,
    out: *mut *mut WmDetector,
) -> WmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sys = handle(sys, "system")?.inner.clone();
        let u = WatermarkCovariance::new(matrix(u, sys.p(), sys.p(), "u")?);
        let wcal = sys.steady_output_cov()?;
        let ucal = steady_watermark_cov_from_system(&sys, &u)?;
        let model = DetectorModel::new(wcal, ucal, zeta)?;
        let response = StateResponse::new(&sys);
        *out = Box::into_raw(Box::new(WmDetector {
            sys,
            model,
            response,
        }));
        Ok(())
    })
}

/// Statistic for the output `y` (length `m`) and the alarm decision `g >= zeta`.
///
/// # Safety
/// `det` must be a live handle; `y` must hold `m` doubles; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_detector_statistic(
    det: *const WmDetector,
    y: *const f64,
    m: usize,
    g_out: *mut f64,
    alarm_out: *mut bool,
) -> WmStatus {
    guard(|| {
        let det = handle(det, "detector")?;
        check_len(m, det.sys.m(), "y")?;
        let y = Vector::from_row_slice(slice(y, m, "y")?);
        let g = det.model.statistic(&y, det.response.gamma())?;
        *out_ptr(g_out, "g_out")? = g;
        *out_ptr(alarm_out, "alarm_out")? = decide(g, det.model.zeta);
        Ok(())
    })
}

/// Records the watermark applied at this tick (after the statistic was taken).
///
/// # Safety
/// `det` must be a live handle; `phi` must hold `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_detector_push(
    det: *mut WmDetector,
    phi: *const f64,
    p: usize,
) -> WmStatus {
    guard(|| {
        let det = handle_mut(det, "detector")?;
        check_len(p, det.sys.p(), "phi")?;
        let phi = Vector::from_row_slice(slice(phi, p, "phi")?);
        det.response.update(&det.sys, &phi)?;
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a handle from `wm_detector_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_detector_free(det: *mut WmDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Learner of model order `n_model` with identity cost weights; `seed` drives its watermark noise.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_new(
    n_model: usize,
    m: usize,
    p: usize,
    delta: f64,
    beta: f64,
    redesign_interval: u64,
    seed: u64,
    out: *mut *mut WmLearner,
) -> WmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = LearnerConfig {
            delta,
            beta,
            redesign_interval,
            ..LearnerConfig::standard(n_model, m, p)
        };
        let state = LearnerState::new(config)?;
        *out = Box::into_raw(Box::new(WmLearner {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// Draws this tick's watermark into `phi_out` (length `p`).
///
/// # Safety
/// `learner` must be a live handle; `phi_out` must hold `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_generate(
    learner: *mut WmLearner,
    phi_out: *mut f64,
    p: usize,
) -> WmStatus {
    guard(|| {
        let learner = handle_mut(learner, "learner")?;
        check_len(p, learner.state.config().p, "phi_out")?;
        if phi_out.is_null() {
            return Err(Failure::Null("phi_out"));
        }
        let phi = learner.state.generate_watermark(&mut learner.rng)?;
        std::slice::from_raw_parts_mut(phi_out, p).copy_from_slice(phi.as_slice());
        Ok(())
    })
}

/// Online statistic for `y` (length `m`); `WM_STATUS_NOT_READY` before the first model exists.
///
/// # Safety
/// `learner` must be a live handle; `y` must hold `m` doubles; `g_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_statistic(
    learner: *const WmLearner,
    y: *const f64,
    m: usize,
    g_out: *mut f64,
) -> WmStatus {
    guard(|| {
        let learner = handle(learner, "learner")?;
        check_len(m, learner.state.config().m, "y")?;
        let y = Vector::from_row_slice(slice(y, m, "y")?);
        *out_ptr(g_out, "g_out")? = learner.state.online_np_statistic(&y)?;
        Ok(())
    })
}

/// Ingests this tick's output `y` (length `m`); redesigns automatically when one is due.
///
/// # Safety
/// `learner` must be a live handle; `y` must hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_ingest(
    learner: *mut WmLearner,
    y: *const f64,
    m: usize,
) -> WmStatus {
    guard(|| {
        let learner = handle_mut(learner, "learner")?;
        check_len(m, learner.state.config().m, "y")?;
        let y = Vector::from_row_slice(slice(y, m, "y")?);
        let due = learner.state.redesign_due();
        learner.state.ingest(&y)?;
        if due {
            learner.state.redesign();
        }
        Ok(())
    })
}

/// Forces an identification and redesign pass. On failure the previous design is kept
/// and `WM_STATUS_NUMERICAL` is returned.
///
/// # Safety
/// `learner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_redesign(learner: *mut WmLearner) -> WmStatus {
    guard(|| {
        let learner = handle_mut(learner, "learner")?;
        match learner.state.redesign().error {
            None => Ok(()),
            Some(msg) => Err(Failure::Numerical(format!(
                "redesign failed, previous design kept: {msg}"
            ))),
        }
    })
}

/// Current watermark covariance (`p x p`) the next generated watermark will use.
///
/// # Safety
/// `learner` must be a live handle; `u_out` must hold `p * p` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_covariance(
    learner: *const WmLearner,
    u_out: *mut f64,
) -> WmStatus {
    guard(|| {
        let learner = handle(learner, "learner")?;
        write_matrix(u_out, &learner.state.current_covariance(), "u_out")
    })
}

/// Serializes the learner (state and noise generator) as JSON; free with `wm_string_free`.
///
/// # Safety
/// `learner` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_checkpoint_json(
    learner: *const WmLearner,
    out: *mut *mut c_char,
) -> WmStatus {
    guard(|| {
        let learner = handle(learner, "learner")?;
        let out = out_ptr(out, "out")?;
        let doc = serde_json::json!({ "state": learner.state, "rng": learner.rng });
        let text = serde_json::to_string(&doc).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|e| Failure::Arg(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Restores a learner from `wm_learner_checkpoint_json` output.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_from_checkpoint_json(
    json: *const c_char,
    out: *mut *mut WmLearner,
) -> WmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::Arg(e.to_string()))?;
        #[derive(serde::Deserialize)]
        struct Doc {
            state: LearnerState,
            rng: ChaCha8Rng,
        }
        let doc: Doc = serde_json::from_str(text).map_err(Error::from)?;
        doc.state.config().validate()?;
        *out = Box::into_raw(Box::new(WmLearner {
            state: doc.state,
            rng: doc.rng,
        }));
        Ok(())
    })
}

/// # Safety
/// `learner` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_learner_free(learner: *mut WmLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
