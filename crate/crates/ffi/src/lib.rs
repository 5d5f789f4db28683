//! C ABI over the crowd-mpc controller, QP solver and episode runner.
//!
//! Every entry point returns a [`CmStatus`]. On failure the message is kept
//! per thread and can be copied out with [`cm_last_error`]. Handles are opaque
//! and must be released with their matching `_free` function.
//!
//! Pointer arguments must be null or valid for the length the function
//! documents; handles must come from this library and not be used after free.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crowd_mpc::crowd::PedestrianState;
use crowd_mpc::harness::{generate_scenario, run_episode};
use crowd_mpc::mpc::QpProblem;
use crowd_mpc::pid::PidState;
use crowd_mpc::qp::QpStatus;
use crowd_mpc::supervisor::{ControllerKind, Supervisor};
use crowd_mpc::vehicle::VehicleState;
use crowd_mpc::{Error, RunConfig, Vec2};
use nalgebra::{Cholesky, DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    IterationLimit = 5,
    Io = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmController {
    Mpc = 0,
    Pid = 1,
}

impl From<CmController> for ControllerKind {
    fn from(c: CmController) -> Self {
        match c {
            CmController::Mpc => ControllerKind::Mpc,
            CmController::Pid => ControllerKind::Pid,
        }
    }
}

/// A pedestrian as seen by the controller. Positions in m, velocities in m/s.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CmPedestrian {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub dest_x: f64,
    pub dest_y: f64,
    pub mass: f64,
    pub radius: f64,
    pub desired_speed: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CmDecision {
    /// Applied force, N.
    pub u: f64,
    /// 1 when the MPC solution was applied, 0 for the PID fallback.
    pub from_mpc: u8,
    pub qp_iterations: u32,
    /// Center gap to the closest pedestrian ahead in the corridor, m.
    pub front_gap: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CmEpisodeSummary {
    /// Time at which the front bumper crossed the finish line, or NaN on timeout.
    pub completion_time: f64,
    pub duration: f64,
    pub longest_wait: f64,
    pub stopped: u8,
    pub collided: u8,
    pub steps: u32,
    pub mpc_steps: u32,
    pub pid_steps: u32,
}

/// Opaque run configuration.
pub struct CmConfig(RunConfig);

/// Opaque closed-loop controller (MPC with PID fallback, or PID alone).
pub struct CmControllerHandle(Supervisor);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: CmStatus, msg: impl Into<String>) -> CmStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> CmStatus {
    let status = match e {
        Error::Config { .. } | Error::InvalidParameter(_) | Error::UnstableDiscretization(_) | Error::EmptyHorizon => {
            CmStatus::Config
        }
        Error::Dimension(_) => CmStatus::InvalidArgument,
        Error::Io(_) | Error::MissingInput(_) => CmStatus::Io,
        _ => CmStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CmStatus) -> CmStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CmStatus::Internal, "panic inside crowd-mpc"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

/// Copy the last error message of this thread into `buf` as a NUL-terminated
/// string, truncating if needed. Returns the full message length in bytes,
/// excluding the terminator. `buf` may be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn cm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

fn validated(cfg: RunConfig) -> crowd_mpc::Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Default configuration. Never returns null.
#[no_mangle]
pub extern "C" fn cm_config_default() -> *mut CmConfig {
    Box::into_raw(Box::new(CmConfig(RunConfig::default())))
}

/// Parse a flat `section.key = value` configuration over the defaults.
#[no_mangle]
pub unsafe extern "C" fn cm_config_parse(text: *const c_char, out: *mut *mut CmConfig) -> CmStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return fail(CmStatus::NullPointer, "text and out must not be null");
        }
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            return fail(CmStatus::InvalidArgument, "config text is not UTF-8");
        };
        match RunConfig::from_str_flat(text, Path::new("<ffi>")).and_then(validated) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(CmConfig(cfg)));
                CmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Load a configuration file.
#[no_mangle]
pub unsafe extern "C" fn cm_config_load(path: *const c_char, out: *mut *mut CmConfig) -> CmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(CmStatus::NullPointer, "path and out must not be null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(CmStatus::InvalidArgument, "path is not UTF-8");
        };
        match RunConfig::load(Path::new(path)).and_then(validated) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(CmConfig(cfg)));
                CmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_config_free(cfg: *mut CmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solve `min U'HU + 2F'U  s.t.  G U >= h`. `quad` is n x n and `g` is m x n,
/// both row-major. H must be positive definite. On success `u_out` (length n) holds the minimizer.
/// An infeasible problem returns `Infeasible` and leaves `u_out` untouched.
#[no_mangle]
pub unsafe extern "C" fn cm_qp_solve(
    n: usize,
    m: usize,
    quad: *const f64,
    lin: *const f64,
    g: *const f64,
    h: *const f64,
    u_out: *mut f64,
    objective_out: *mut f64,
    iterations_out: *mut u32,
) -> CmStatus {
    guard(|| {
        if n == 0 {
            return fail(CmStatus::InvalidArgument, "n must be at least 1");
        }
        let (Some(quad), Some(lin), Some(g), Some(h)) =
            (slice(quad, n * n), slice(lin, n), slice(g, m * n), slice(h, m))
        else {
            return fail(CmStatus::NullPointer, "null problem array");
        };
        if u_out.is_null() {
            return fail(CmStatus::NullPointer, "u_out must not be null");
        }
        if ![quad, lin, g, h].iter().all(|a| a.iter().all(|x| x.is_finite())) {
            return fail(CmStatus::InvalidArgument, "problem data must be finite");
        }
        let quad = DMatrix::from_row_slice(n, n, quad);
        if Cholesky::new((&quad + quad.transpose()) * 0.5).is_none() {
            return fail(CmStatus::InvalidArgument, "H must be symmetric positive definite");
        }
        let qp = match QpProblem::new(
            quad,
            DVector::from_column_slice(lin),
            DMatrix::from_row_slice(m, n, g),
            DVector::from_column_slice(h),
        ) {
            Ok(qp) => qp,
            Err(e) => return from_error(e),
        };
        let sol = crowd_mpc::qp::solve(&qp);
        if !iterations_out.is_null() {
            *iterations_out = sol.iterations as u32;
        }
        match sol.status {
            QpStatus::Optimal => {
                std::slice::from_raw_parts_mut(u_out, n).copy_from_slice(sol.u.as_slice());
                if !objective_out.is_null() {
                    *objective_out = sol.objective;
                }
                CmStatus::Ok
            }
            QpStatus::Infeasible => fail(CmStatus::Infeasible, "constraints are infeasible"),
            QpStatus::IterationLimit => fail(CmStatus::IterationLimit, "iteration limit reached"),
        }
    })
}

/// Create a controller for the lane in `cfg`. The PID integral starts as if
/// the vehicle had been holding `initial_speed`.
#[no_mangle]
pub unsafe extern "C" fn cm_controller_new(
    cfg: *const CmConfig,
    kind: CmController,
    initial_speed: f64,
    out: *mut *mut CmControllerHandle,
) -> CmStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(CmStatus::NullPointer, "cfg and out must not be null");
        };
        let cfg = &cfg.0;
        let pid = PidState::cruising(cfg.pid.clone(), cfg.mpc.dt, cfg.vehicle.friction, initial_speed);
        match Supervisor::new(cfg, kind.into(), cfg.scenario.lane(), pid) {
            Ok(sup) => {
                *out = Box::into_raw(Box::new(CmControllerHandle(sup)));
                CmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// One control step for a vehicle at position `s`, speed `v`.
#[no_mangle]
pub unsafe extern "C" fn cm_controller_step(
    ctrl: *mut CmControllerHandle,
    s: f64,
    v: f64,
    peds: *const CmPedestrian,
    n_peds: usize,
    out: *mut CmDecision,
) -> CmStatus {
    guard(|| {
        let (Some(ctrl), Some(peds), false) = (ctrl.as_mut(), slice(peds, n_peds), out.is_null()) else {
            return fail(CmStatus::NullPointer, "null controller, pedestrian array or output");
        };
        if !(s.is_finite() && v.is_finite()) {
            return fail(CmStatus::InvalidArgument, "vehicle state must be finite");
        }
        let crowd: Vec<PedestrianState> = peds
            .iter()
            .enumerate()
            .map(|(i, p)| PedestrianState {
                id: i as u32,
                position: Vec2::new(p.x, p.y),
                velocity: Vec2::new(p.vx, p.vy),
                destination: Vec2::new(p.dest_x, p.dest_y),
                mass: p.mass,
                radius: p.radius,
                desired_speed: p.desired_speed,
            })
            .collect();
        if let Some(i) = crowd.iter().position(|p| p.validate().is_err()) {
            return fail(CmStatus::InvalidArgument, format!("pedestrian {i} is invalid"));
        }
        let d = ctrl.0.control_step(&VehicleState::new(s, v), &crowd);
        *out = CmDecision {
            u: d.u,
            from_mpc: u8::from(d.source == ControllerKind::Mpc),
            qp_iterations: d.qp_iterations as u32,
            front_gap: d.front_gap,
        };
        CmStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_controller_free(ctrl: *mut CmControllerHandle) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Run one closed-loop episode on the random crowd drawn from `seed`, using
/// the scenario in `cfg` with `n_pedestrians` pedestrians.
#[no_mangle]
pub unsafe extern "C" fn cm_episode_run(
    cfg: *const CmConfig,
    n_pedestrians: usize,
    seed: u64,
    kind: CmController,
    out: *mut CmEpisodeSummary,
) -> CmStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(CmStatus::NullPointer, "cfg and out must not be null");
        };
        let mut cfg = cfg.0.clone();
        cfg.scenario.n_pedestrians = n_pedestrians;
        if let Err(e) = cfg.validate() {
            return from_error(e);
        }
        let scenario = generate_scenario(&cfg.scenario, seed);
        match run_episode(&cfg, &scenario, kind.into(), None) {
            Ok(r) => {
                *out = CmEpisodeSummary {
                    completion_time: r.completion_time.unwrap_or(f64::NAN),
                    duration: r.duration,
                    longest_wait: r.longest_wait,
                    stopped: u8::from(r.stopped),
                    collided: u8::from(r.collided),
                    steps: r.rows.len() as u32,
                    mpc_steps: r.mpc_steps as u32,
                    pid_steps: r.pid_steps as u32,
                };
                CmStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
