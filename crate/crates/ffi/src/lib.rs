//! C ABI over the pinnworks library.
//!
//! Conventions, uniform across every function here:
//! - Objects cross the boundary as opaque pointers created by `pw_*`
//!   constructors and released by the matching `pw_*_free`; freeing a null
//!   pointer is a no-op.
//! - Fallible calls return a [`PwStatus`]; on anything but `PW_STATUS_OK`
//!   the out-parameters are left untouched and a human-readable message is
//!   stored in thread-local state, retrievable with [`pw_last_error`].
//! - Panics never unwind across the boundary; they are caught and reported
//!   as `PW_STATUS_INTERNAL_ERROR`.
//!
//! The generated header lives at `include/pinnworks.h` and is refreshed by
//! the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use pinnworks::checkpoint::Checkpoint;
use pinnworks::cli::{checkpoint_from, train_run, write_train_artifacts, CliError, EXIT_NUMERIC};
use pinnworks::config::RunConfig;
use pinnworks::expr::{parse_system, OdeSystem};
use pinnworks::models::{self, SmibScenario};
use pinnworks::odeint::{integrate_adaptive, integrate_fixed, OdeError, Trajectory};

/// Result of a fallible call. Anything but `Ok` leaves a message for
/// [`pw_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A system description failed to parse.
    ParseError = 3,
    /// Arguments or file contents were structurally valid but unusable
    /// (unknown preset, mismatched shapes, out-of-range settings, ...).
    InvalidInput = 4,
    /// The computation hit non-finite values or an unresolvable step size.
    NumericError = 5,
    /// The filesystem got in the way.
    IoError = 6,
    /// A bug: an internal panic was caught at the boundary.
    InternalError = 7,
}

/// An ODE system plus, for built-in presets, its scenario metadata.
pub struct PwSystem {
    system: OdeSystem,
    scenario: Option<SmibScenario>,
}

/// A time grid with one state row per entry.
pub struct PwTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn status_from_cli(e: &CliError) -> PwStatus {
    if matches!(e, CliError::Io { .. }) {
        return PwStatus::IoError;
    }
    if e.exit_code() == EXIT_NUMERIC {
        return PwStatus::NumericError;
    }
    PwStatus::InvalidInput
}

fn status_from_ode(e: &OdeError) -> PwStatus {
    match e {
        OdeError::NonFinite { .. } | OdeError::StepUnderflow { .. } => PwStatus::NumericError,
        _ => PwStatus::InvalidInput,
    }
}

/// Runs `body` with panics converted to `InternalError` so nothing unwinds
/// into the caller's frames.
fn guarded(body: impl FnOnce() -> PwStatus) -> PwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            set_error(format_args!("internal panic: {msg}"));
            PwStatus::InternalError
        }
    }
}

/// Reads a required C string argument.
///
/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PwStatus> {
    if ptr.is_null() {
        set_error(format_args!("{what} is null"));
        return Err(PwStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format_args!("{what} is not valid UTF-8"));
            Err(PwStatus::InvalidUtf8)
        }
    }
}

/// Copies the NUL-terminated text of the calling thread's last error into
/// `buf` (truncating to `cap` bytes including the NUL) and returns the full
/// message length excluding the NUL. With a null or empty buffer it only
/// reports the length.
///
/// # Safety
///
/// `buf` must either be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pw_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// systems

/// Parses a system description (the same text format the CLI accepts) into
/// a new system object, stored in `*out` on success.
///
/// # Safety
/// `source` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pw_system_parse(
    source: *const c_char,
    out: *mut *mut PwSystem,
) -> PwStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return PwStatus::NullArgument;
        }
        let text = match read_str(source, "source") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match parse_system(text) {
            Ok(system) => {
                *out = Box::into_raw(Box::new(PwSystem { system, scenario: None }));
                PwStatus::Ok
            }
            Err(e) => {
                set_error(e);
                PwStatus::ParseError
            }
        }
    })
}

/// Builds one of the built-in scenarios by name
/// (normal, case1, case2, pole-slipping, undamped).
///
/// # Safety
/// `name` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pw_system_preset(
    name: *const c_char,
    out: *mut *mut PwSystem,
) -> PwStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return PwStatus::NullArgument;
        }
        let name = match read_str(name, "name") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match models::preset(name) {
            Ok((system, scenario)) => {
                *out = Box::into_raw(Box::new(PwSystem { system, scenario: Some(scenario) }));
                PwStatus::Ok
            }
            Err(e) => {
                set_error(e);
                PwStatus::InvalidInput
            }
        }
    })
}

/// Number of state variables, or 0 for a null system.
///
/// # Safety
/// `sys` must be null or a pointer from a `pw_system_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn pw_system_state_count(sys: *const PwSystem) -> usize {
    if sys.is_null() {
        return 0;
    }
    (*sys).system.n_states()
}

/// Copies the NUL-terminated name of state `index` into `buf` (truncating
/// to `cap` bytes including the NUL) and returns the full name length
/// excluding the NUL; returns 0 when `sys` is null or `index` is out of
/// range.
///
/// # Safety
/// `sys` as in [`pw_system_state_count`]; `buf` must be valid for `cap`
/// bytes of writes or null.
#[no_mangle]
pub unsafe extern "C" fn pw_system_state_name(
    sys: *const PwSystem,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if sys.is_null() {
        return 0;
    }
    let names = (*sys).system.state_names();
    let Some(name) = names.get(index) else {
        return 0;
    };
    let bytes = name.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}

/// Stores the stable equilibrium of a built-in scenario in
/// `(*out_delta, *out_omega)`. Fails with `PW_STATUS_INVALID_INPUT` for
/// systems that did not come from a preset or whose scenario has no stable
/// equilibrium.
///
/// # Safety
/// `sys` as in [`pw_system_state_count`]; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pw_system_equilibrium(
    sys: *const PwSystem,
    out_delta: *mut f64,
    out_omega: *mut f64,
) -> PwStatus {
    guarded(|| {
        if sys.is_null() || out_delta.is_null() || out_omega.is_null() {
            set_error("sys, out_delta, and out_omega must be non-null");
            return PwStatus::NullArgument;
        }
        let Some(s) = &(*sys).scenario else {
            set_error("system has no scenario metadata (not a preset)");
            return PwStatus::InvalidInput;
        };
        match models::equilibrium(s.k1, s.k2) {
            Some((d, w)) => {
                *out_delta = d;
                *out_omega = w;
                PwStatus::Ok
            }
            None => {
                set_error("scenario has no stable equilibrium");
                PwStatus::InvalidInput
            }
        }
    })
}

/// Releases a system object. Null is a no-op.
///
/// # Safety
/// `sys` must be null or an owned pointer from a `pw_system_*` constructor,
/// not freed before.
#[no_mangle]
pub unsafe extern "C" fn pw_system_free(sys: *mut PwSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

// ---------------------------------------------------------------------------
// integration

/// Integrates the system over its own domain with fixed-step RK4 and stores
/// a new trajectory in `*out`.
///
/// # Safety
/// `sys` from a `pw_system_*` constructor; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pw_simulate_fixed(
    sys: *const PwSystem,
    dt: f64,
    out: *mut *mut PwTrajectory,
) -> PwStatus {
    guarded(|| {
        if sys.is_null() || out.is_null() {
            set_error("sys and out must be non-null");
            return PwStatus::NullArgument;
        }
        match integrate_fixed(&(*sys).system, dt) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(PwTrajectory { inner: t }));
                PwStatus::Ok
            }
            Err(e) => {
                let status = status_from_ode(&e);
                set_error(e);
                status
            }
        }
    })
}

/// Integrates with the adaptive solver, emitting output every `output_dt`,
/// and stores a new trajectory in `*out`.
///
/// # Safety
/// `sys` from a `pw_system_*` constructor; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pw_simulate_adaptive(
    sys: *const PwSystem,
    abs_tol: f64,
    rel_tol: f64,
    output_dt: f64,
    out: *mut *mut PwTrajectory,
) -> PwStatus {
    guarded(|| {
        if sys.is_null() || out.is_null() {
            set_error("sys and out must be non-null");
            return PwStatus::NullArgument;
        }
        match integrate_adaptive(&(*sys).system, abs_tol, rel_tol, output_dt) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(PwTrajectory { inner: t }));
                PwStatus::Ok
            }
            Err(e) => {
                let status = status_from_ode(&e);
                set_error(e);
                status
            }
        }
    })
}

// ---------------------------------------------------------------------------
// trajectories

/// Number of time points, or 0 for a null trajectory.
///
/// # Safety
/// `traj` must be null or a pointer produced by a `pw_simulate_*` call.
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_len(traj: *const PwTrajectory) -> usize {
    if traj.is_null() {
        return 0;
    }
    (*traj).inner.len()
}

/// Number of state variables per row, or 0 for a null trajectory.
///
/// # Safety
/// `traj` as in [`pw_trajectory_len`].
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_state_count(traj: *const PwTrajectory) -> usize {
    if traj.is_null() {
        return 0;
    }
    (*traj).inner.n_states()
}

/// The time stamp of row `i`; NaN when out of range or null.
///
/// # Safety
/// `traj` as in [`pw_trajectory_len`].
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_time(traj: *const PwTrajectory, i: usize) -> f64 {
    if traj.is_null() {
        return f64::NAN;
    }
    let inner = &(*traj).inner;
    if i >= inner.len() {
        return f64::NAN;
    }
    inner.times()[i]
}

/// The value of state `var` at row `i`; NaN when out of range or null.
///
/// # Safety
/// `traj` as in [`pw_trajectory_len`].
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_value(
    traj: *const PwTrajectory,
    i: usize,
    var: usize,
) -> f64 {
    if traj.is_null() {
        return f64::NAN;
    }
    let inner = &(*traj).inner;
    if i >= inner.len() || var >= inner.n_states() {
        return f64::NAN;
    }
    inner.value(i, var)
}

/// Copies up to `cap` time stamps into `buf` and returns the number copied.
///
/// # Safety
/// `traj` as in [`pw_trajectory_len`]; `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_copy_times(
    traj: *const PwTrajectory,
    buf: *mut f64,
    cap: usize,
) -> usize {
    if traj.is_null() || buf.is_null() {
        return 0;
    }
    let times = (*traj).inner.times();
    let n = times.len().min(cap);
    std::ptr::copy_nonoverlapping(times.as_ptr(), buf, n);
    n
}

/// Copies up to `cap` state values into `buf` in row-major order (all
/// states of row 0, then row 1, ...) and returns the number copied.
///
/// # Safety
/// `traj` as in [`pw_trajectory_len`]; `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_copy_values(
    traj: *const PwTrajectory,
    buf: *mut f64,
    cap: usize,
) -> usize {
    if traj.is_null() || buf.is_null() {
        return 0;
    }
    let inner = &(*traj).inner;
    let n_states = inner.n_states();
    let total = inner.len() * n_states;
    let n = total.min(cap);
    let mut written = 0;
    'rows: for i in 0..inner.len() {
        for v in inner.row(i) {
            if written == n {
                break 'rows;
            }
            *buf.add(written) = *v;
            written += 1;
        }
    }
    written
}

/// Releases a trajectory. Null is a no-op.
///
/// # Safety
/// `traj` must be null or an owned pointer from a `pw_simulate_*` call, not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn pw_trajectory_free(traj: *mut PwTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

// ---------------------------------------------------------------------------
// training

/// Runs one training job described by the configuration file at
/// `config_path` (the CLI's INI format). A non-negative `seed_override`
/// replaces the configured seed. When `out_dir` is non-null the full CLI
/// artifact set (checkpoint, report, loss history) is written there. When
/// `final_loss` / `iterations` are non-null they receive the result summary.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string; `out_dir` null or
/// the same; `final_loss` and `iterations` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pw_train(
    config_path: *const c_char,
    seed_override: i64,
    out_dir: *const c_char,
    final_loss: *mut f64,
    iterations: *mut usize,
) -> PwStatus {
    guarded(|| {
        let path = match read_str(config_path, "config_path") {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        let out_dir = if out_dir.is_null() {
            None
        } else {
            match read_str(out_dir, "out_dir") {
                Ok(s) => Some(PathBuf::from(s)),
                Err(status) => return status,
            }
        };
        match train_via_config(&path, seed_override, out_dir.as_deref()) {
            Ok((loss, its)) => {
                if !final_loss.is_null() {
                    *final_loss = loss;
                }
                if !iterations.is_null() {
                    *iterations = its;
                }
                PwStatus::Ok
            }
            Err(e) => {
                let status = status_from_cli(&e);
                set_error(e);
                status
            }
        }
    })
}

fn train_via_config(
    config_path: &Path,
    seed_override: i64,
    out_dir: Option<&Path>,
) -> Result<(f64, usize), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if seed_override >= 0 {
        cfg.seed = seed_override as u64;
    }
    let warm = match &cfg.warm_start {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let model = train_run(&cfg, warm.as_ref())?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_train_artifacts(dir, &cfg, &model)?;
    }
    let ck = checkpoint_from(&cfg, &model);
    Ok((ck.final_loss, ck.iterations))
}
