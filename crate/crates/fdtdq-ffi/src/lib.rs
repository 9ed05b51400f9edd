//! C ABI for the fdtdq solver.
//!
//! Every function returns an [`FdtdqStatus`]; results go through out-pointers.
//! On failure, [`fdtdq_last_error`] describes the most recent error on the
//! calling thread. Simulations are opaque handles created from a JSON run
//! configuration and released with [`fdtdq_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fdtdq::cli::{build_graph, run_scenario, RunStatus};
use fdtdq::config::RunConfig;
use fdtdq::coupling::RegionGraph;
use fdtdq::{diagnostics, stability, Error, PhysicalConstants};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdtdqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    /// The time step exceeds a stability limit.
    Unstable = 4,
    /// The divergence guard stopped the simulation.
    Diverged = 5,
    Io = 6,
    OutOfRange = 7,
    /// Any other failure, including a caught panic.
    Internal = 8,
}

/// Opaque simulation handle.
pub struct FdtdqSimulation {
    graph: RegionGraph,
    diverged: bool,
}

/// Outcome of [`fdtdq_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FdtdqRunSummary {
    pub n_t: u64,
    pub steps_completed: u64,
    pub last_stable_step: u64,
    pub diverged: bool,
    pub dt_seconds: f64,
    pub max_residual_p: f64,
    pub max_residual_h: f64,
    pub min_p: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> FdtdqStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::NoRoot(_) => FdtdqStatus::Config,
        Error::Unstable { .. } => FdtdqStatus::Unstable,
        Error::Diverged { .. } => FdtdqStatus::Diverged,
        Error::Io(_) | Error::Csv(_) | Error::Checkpoint(_) => FdtdqStatus::Io,
        Error::Index(_) | Error::Range(_) => FdtdqStatus::OutOfRange,
        Error::InvalidInput(_) | Error::Dimension { .. } => FdtdqStatus::InvalidArgument,
        _ => FdtdqStatus::Internal,
    }
}

/// Run `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), FdtdqStatus>) -> FdtdqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdtdqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FdtdqStatus::Internal
        }
    }
}

fn fail(e: Error) -> FdtdqStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FdtdqStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(FdtdqStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        FdtdqStatus::InvalidArgument
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FdtdqStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        FdtdqStatus::NullPointer
    })
}

unsafe fn sim_arg<'a>(p: *const FdtdqSimulation) -> Result<&'a FdtdqSimulation, FdtdqStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("simulation handle is null");
        FdtdqStatus::NullPointer
    })
}

fn region_index(sim: &FdtdqSimulation, region: usize) -> Result<usize, FdtdqStatus> {
    let n = sim.graph.regions().len();
    if region < n {
        Ok(region)
    } else {
        set_error(format!("region {region} out of range (simulation has {n})"));
        Err(FdtdqStatus::OutOfRange)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdtdq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Closed-form CFL limit (seconds) for spacings `dx, dy, dz` (m), largest
/// `|U|` (J) and particle mass (kg).
///
/// # Safety
/// `out_dt` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_cfl_limit(
    dx: f64,
    dy: f64,
    dz: f64,
    max_abs_u: f64,
    mass: f64,
    out_dt: *mut f64,
) -> FdtdqStatus {
    guard(|| {
        let out = out_arg(out_dt, "out_dt")?;
        if ![dx, dy, dz].iter().all(|d| *d > 0.0 && d.is_finite()) || max_abs_u.is_nan() || max_abs_u < 0.0 {
            set_error("spacings must be positive and max_abs_u non-negative");
            return Err(FdtdqStatus::InvalidArgument);
        }
        let c = PhysicalConstants::new(fdtdq::constants::HBAR, mass).map_err(fail)?;
        *out = stability::cfl_limit_for([dx, dy, dz], max_abs_u, &c);
        Ok(())
    })
}

/// Build a simulation from a JSON run configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid for
/// writes. On success `*out` owns a handle to free with
/// [`fdtdq_simulation_free`].
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_new(
    config_json: *const c_char,
    allow_unstable: bool,
    out: *mut *mut FdtdqSimulation,
) -> FdtdqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?).map_err(fail)?;
        let graph = build_graph(&cfg, allow_unstable).map_err(fail)?;
        *out = Box::into_raw(Box::new(FdtdqSimulation { graph, diverged: false }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from [`fdtdq_simulation_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_free(sim: *mut FdtdqSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advance `n_steps` steps. Returns `Diverged` once the guard trips; the
/// handle then refuses further steps.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_step(sim: *mut FdtdqSimulation, n_steps: u64) -> FdtdqStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| {
            set_error("simulation handle is null");
            FdtdqStatus::NullPointer
        })?;
        if sim.diverged {
            set_error("simulation has diverged");
            return Err(FdtdqStatus::Diverged);
        }
        sim.graph.run(n_steps, &mut []).map_err(|e| {
            sim.diverged = matches!(e, Error::Diverged { .. });
            fail(e)
        })
    })
}

/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_region_count(sim: *const FdtdqSimulation, out: *mut usize) -> FdtdqStatus {
    guard(|| {
        *out_arg(out, "out")? = sim_arg(sim)?.graph.regions().len();
        Ok(())
    })
}

/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_dt(sim: *const FdtdqSimulation, out: *mut f64) -> FdtdqStatus {
    guard(|| {
        *out_arg(out, "out")? = sim_arg(sim)?.graph.dt();
        Ok(())
    })
}

/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_step_index(sim: *const FdtdqSimulation, out: *mut u64) -> FdtdqStatus {
    guard(|| {
        *out_arg(out, "out")? = sim_arg(sim)?.graph.step_index();
        Ok(())
    })
}

/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_node_count(
    sim: *const FdtdqSimulation,
    region: usize,
    out: *mut usize,
) -> FdtdqStatus {
    guard(|| {
        let s = sim_arg(sim)?;
        let r = region_index(s, region)?;
        *out_arg(out, "out")? = s.graph.regions()[r].psi_r().len();
        Ok(())
    })
}

/// Discrete probability `℘ⁿ` of one region at the current step.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_probability(
    sim: *const FdtdqSimulation,
    region: usize,
    out: *mut f64,
) -> FdtdqStatus {
    guard(|| {
        let s = sim_arg(sim)?;
        let r = &s.graph.regions()[region_index(s, region)?];
        *out_arg(out, "out")? = diagnostics::probability(r.operators(), r.dt(), r.psi_r(), r.psi_i()).map_err(fail)?;
        Ok(())
    })
}

/// Copy `ψ_Rⁿ` and `ψ_I^{n−½}` of one region into caller buffers of `len`
/// values each (`len` must equal the node count). Either buffer may be null.
///
/// # Safety
/// Non-null buffers must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_simulation_copy_state(
    sim: *const FdtdqSimulation,
    region: usize,
    psi_r: *mut f64,
    psi_i: *mut f64,
    len: usize,
) -> FdtdqStatus {
    guard(|| {
        let s = sim_arg(sim)?;
        let r = &s.graph.regions()[region_index(s, region)?];
        if len != r.psi_r().len() {
            set_error(format!("buffer length {len} differs from node count {}", r.psi_r().len()));
            return Err(FdtdqStatus::InvalidArgument);
        }
        for (dst, src) in [(psi_r, r.psi_r()), (psi_i, r.psi_i())] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// Run a configuration to completion, writing CSVs and `summary.json` into
/// `out_dir`, as `fdtdq run` does. A divergence returns `Diverged` with the
/// summary filled in.
///
/// # Safety
/// String arguments must be NUL-terminated; `summary` must be null or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn fdtdq_run(
    config_json: *const c_char,
    out_dir: *const c_char,
    allow_unstable: bool,
    summary: *mut FdtdqRunSummary,
) -> FdtdqStatus {
    guard(|| {
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?).map_err(fail)?;
        let dir = str_arg(out_dir, "out_dir")?;
        let s = run_scenario(&cfg, Path::new(dir), allow_unstable).map_err(fail)?;
        if let Some(out) = summary.as_mut() {
            *out = FdtdqRunSummary {
                n_t: s.n_t,
                steps_completed: s.steps_completed,
                last_stable_step: s.last_stable_step,
                diverged: s.status == RunStatus::Diverged,
                dt_seconds: s.dt_seconds,
                max_residual_p: s.max_residual_p,
                max_residual_h: s.max_residual_h,
                min_p: s.min_p,
            };
        }
        if s.status == RunStatus::Diverged {
            set_error(s.divergence.unwrap_or_default());
            return Err(FdtdqStatus::Diverged);
        }
        Ok(())
    })
}
