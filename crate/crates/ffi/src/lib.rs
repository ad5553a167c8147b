//! C API over the deterministic simulator.
//!
//! Every function returns an [`HmStatus`]; on failure the message is available
//! from [`hm_last_error`] on the calling thread. Handles are opaque and must
//! be released with [`hm_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use haptic_mpc::config::ExperimentConfig;
use haptic_mpc::mpc::ControllerVariant;
use haptic_mpc::sim::{write_run, Metrics, SimError, Simulation, SolverMode};
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    RuntimeError = 4,
    BufferTooSmall = 5,
    IoError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmVariant {
    Baseline = 0,
    FeedForward = 1,
    Feedback = 2,
}

impl From<HmVariant> for ControllerVariant {
    fn from(v: HmVariant) -> Self {
        match v {
            HmVariant::Baseline => ControllerVariant::Baseline,
            HmVariant::FeedForward => ControllerVariant::FeedForward,
            HmVariant::Feedback => ControllerVariant::Feedback,
        }
    }
}

/// Opaque simulation handle.
pub struct HmSimulation {
    sim: Simulation,
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: HmStatus, message: impl AsRef<str>) -> HmStatus {
    set_error(message.as_ref());
    status
}

fn sim_status(e: SimError) -> HmStatus {
    let status = match &e {
        SimError::Config(_) => HmStatus::ConfigError,
        SimError::Io { .. } => HmStatus::IoError,
        _ => HmStatus::RuntimeError,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> HmStatus) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == HmStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(HmStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, HmStatus> {
    if p.is_null() {
        return Err(fail(HmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a>(p: *mut HmSimulation) -> Result<&'a mut HmSimulation, HmStatus> {
    p.as_mut().ok_or_else(|| fail(HmStatus::NullPointer, "simulation handle is null"))
}

unsafe fn write_vec(v: &DVector<f64>, out: *mut f64, len: usize) -> HmStatus {
    if out.is_null() {
        return fail(HmStatus::NullPointer, "output buffer is null");
    }
    if len < v.len() {
        return fail(HmStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", v.len()));
    }
    ptr::copy_nonoverlapping(v.as_slice().as_ptr(), out, v.len());
    HmStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML experiment configuration and creates a simulation of one
/// variant. With `remote_operator` set, the scripted operator is disabled and
/// the device is driven through [`hm_simulation_set_device`].
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_new(
    config_toml: *const c_char,
    variant: HmVariant,
    remote_operator: bool,
    out: *mut *mut HmSimulation,
) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return fail(HmStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = try_ffi!(str_arg(config_toml, "config_toml"));
        let config = match ExperimentConfig::from_toml_str(text) {
            Ok(c) => c,
            Err(e) => return fail(HmStatus::ConfigError, e.to_string()),
        };
        let sim = match Simulation::with_options(&config, variant.into(), SolverMode::Inline, remote_operator) {
            Ok(s) => s,
            Err(e) => return sim_status(e),
        };
        *out = Box::into_raw(Box::new(HmSimulation { sim, config }));
        HmStatus::Ok
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `sim` must come from [`hm_simulation_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_free(sim: *mut HmSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances the virtual clock by `dt` seconds (clipped at the end of the run).
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_step(sim: *mut HmSimulation, dt: f64) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        if !(dt.is_finite() && dt >= 0.0) {
            return fail(HmStatus::InvalidArgument, "dt must be finite and non-negative");
        }
        let target = h.sim.now() + dt;
        match h.sim.advance_to(target) {
            Ok(()) => HmStatus::Ok,
            Err(e) => sim_status(e),
        }
    })
}

/// Runs to the configured duration.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_run_to_end(sim: *mut HmSimulation) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        match h.sim.run_to_end() {
            Ok(()) => HmStatus::Ok,
            Err(e) => sim_status(e),
        }
    })
}

/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_time(sim: *mut HmSimulation, out: *mut f64) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        if out.is_null() {
            return fail(HmStatus::NullPointer, "out is null");
        }
        *out = h.sim.now();
        HmStatus::Ok
    })
}

/// Task-space dimension (length of position and force vectors).
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_ee_dim(sim: *mut HmSimulation, out: *mut usize) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        if out.is_null() {
            return fail(HmStatus::NullPointer, "out is null");
        }
        *out = h.config.ee_dim();
        HmStatus::Ok
    })
}

/// Copies the end-effector position into `out[0..ee_dim]`.
///
/// # Safety
/// `sim` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_ee(sim: *mut HmSimulation, out: *mut f64, len: usize) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        write_vec(&h.sim.state().ee, out, len)
    })
}

/// Copies the current target position and velocity.
///
/// # Safety
/// `sim` must be a live handle; both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_target(
    sim: *mut HmSimulation,
    position: *mut f64,
    velocity: *mut f64,
    len: usize,
) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        let s = h.sim.state();
        let st = write_vec(&s.target.position, position, len);
        if st != HmStatus::Ok {
            return st;
        }
        write_vec(&s.target.velocity, velocity, len)
    })
}

/// Copies the contact force on the end effector.
///
/// # Safety
/// `sim` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_contact_force(sim: *mut HmSimulation, out: *mut f64, len: usize) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        write_vec(&h.sim.state().contact_force, out, len)
    })
}

/// Sets the device pose (remote-operator simulations); positions are clamped
/// to the device workspace.
///
/// # Safety
/// `sim` must be a live handle; both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_set_device(
    sim: *mut HmSimulation,
    position: *const f64,
    velocity: *const f64,
    len: usize,
) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        if position.is_null() || velocity.is_null() {
            return fail(HmStatus::NullPointer, "device buffers must not be null");
        }
        let d = h.config.ee_dim();
        if len != d {
            return fail(HmStatus::InvalidArgument, format!("device pose needs {d} coordinates"));
        }
        let p = std::slice::from_raw_parts(position, len);
        let v = std::slice::from_raw_parts(velocity, len);
        if p.iter().chain(v).any(|x| !x.is_finite()) {
            return fail(HmStatus::InvalidArgument, "device pose must be finite");
        }
        h.sim
            .set_device_state(DVector::from_column_slice(p), DVector::from_column_slice(v));
        HmStatus::Ok
    })
}

/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_set_clutch(sim: *mut HmSimulation, engage: bool) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        h.sim.set_clutch(engage);
        HmStatus::Ok
    })
}

/// Selects the variant used by subsequent solves.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_set_variant(sim: *mut HmSimulation, variant: HmVariant) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        h.sim.set_variant(variant.into());
        HmStatus::Ok
    })
}

/// Evaluates a named metric over the log recorded so far. Metrics that are
/// undefined (no contact, no clutched samples) yield NaN.
///
/// # Safety
/// `sim` must be a live handle; `name` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_metric(sim: *mut HmSimulation, name: *const c_char, out: *mut f64) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        let name = try_ffi!(str_arg(name, "name"));
        if out.is_null() {
            return fail(HmStatus::NullPointer, "out is null");
        }
        let metrics = Metrics::from_log(&h.sim.log(), &h.config.metrics);
        match metrics.get(name) {
            Some(v) => {
                *out = v;
                HmStatus::Ok
            }
            None => fail(HmStatus::InvalidArgument, format!("unknown metric {name:?}")),
        }
    })
}

/// Writes log, solve records, metadata and metrics into directory `dir`.
///
/// # Safety
/// `sim` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hm_simulation_write_log(sim: *mut HmSimulation, dir: *const c_char) -> HmStatus {
    guard(|| {
        let h = try_ffi!(handle(sim));
        let dir = try_ffi!(str_arg(dir, "dir"));
        let log = h.sim.log();
        let metrics = Metrics::from_log(&log, &h.config.metrics);
        match write_run(Path::new(dir), &log, &metrics) {
            Ok(()) => HmStatus::Ok,
            Err(e) => sim_status(e),
        }
    })
}
