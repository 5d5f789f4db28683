//! Per-step controller: try the MPC, fall back to the PID when its QP has
//! no solution.

use serde::Serialize;

use crate::config::RunConfig;
use crate::crowd::{CrowdParams, PedestrianState};
use crate::error::Result;
use crate::mpc::{MpcSynth, QpProblem};
use crate::pid::{reference_speed, PidState};
use crate::predictor::{current_front_position, front_gap_sequence, predict, Lane, NO_PEDESTRIAN};
use crate::qp::{QpSolution, QpSolver};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Mpc,
    Pid,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Mpc => "mpc",
            ControllerKind::Pid => "pid",
        }
    }
}

pub type ControlSource = ControllerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: f64,
    pub source: ControlSource,
    pub qp_iterations: usize,
    /// Center gap to the closest in-corridor pedestrian ahead, or `NO_PEDESTRIAN`.
    pub front_gap: f64,
    pub feasible: bool,
}

/// Optional byproducts of a step, for tracing.
#[derive(Debug, Clone, Default)]
pub struct StepDetail {
    pub qp: Option<QpProblem>,
    pub solution: Option<QpSolution>,
}

#[derive(Debug, Clone)]
pub struct Supervisor {
    kind: ControllerKind,
    synth: MpcSynth,
    solver: QpSolver,
    pid: PidState,
    crowd: CrowdParams,
    vehicle: VehicleParams,
    lane: Lane,
    horizon: usize,
    dt: f64,
    v_r: f64,
    d_safe: f64,
    corridor_margin: f64,
    u_prev: f64,
    step: usize,
}

impl Supervisor {
    /// `pid` is the initial fallback/baseline controller state.
    pub fn new(cfg: &RunConfig, kind: ControllerKind, lane: Lane, pid: PidState) -> Result<Self> {
        let m = &cfg.mpc;
        let synth = MpcSynth::new(&cfg.vehicle, m.dt, m.horizon, m.v_r, m.d_safe)?;
        Ok(Self {
            kind,
            synth,
            solver: QpSolver::new(m.qp_settings()),
            pid,
            crowd: cfg.crowd.clone(),
            vehicle: cfg.vehicle.clone(),
            lane,
            horizon: m.horizon,
            dt: m.dt,
            v_r: m.v_r,
            d_safe: m.d_safe,
            corridor_margin: m.corridor_margin,
            u_prev: 0.0,
            step: 0,
        })
    }

    pub fn with_previous_input(mut self, u_prev: f64) -> Self {
        self.u_prev = u_prev;
        self
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn previous_input(&self) -> f64 {
        self.u_prev
    }

    pub fn pid_state(&self) -> &PidState {
        &self.pid
    }

    pub fn control_step(&mut self, x: &VehicleState, crowd: &[PedestrianState]) -> ControlDecision {
        self.control_step_detailed(x, crowd, false).0
    }

    pub fn control_step_detailed(
        &mut self,
        x: &VehicleState,
        crowd: &[PedestrianState],
        keep_detail: bool,
    ) -> (ControlDecision, StepDetail) {
        let footprint = self.lane.footprint(&self.vehicle, x);
        let front = current_front_position(crowd, &footprint, x, &self.vehicle, self.corridor_margin);
        let front_gap = if front >= NO_PEDESTRIAN { NO_PEDESTRIAN } else { front - x.s };
        let v_ref = reference_speed(front_gap, self.v_r, self.d_safe, self.pid.gains.d_buffer);
        let mut detail = StepDetail::default();

        let mut mpc_choice = None;
        let mut qp_iterations = 0;
        if self.kind == ControllerKind::Mpc {
            let pred = predict(crowd, &footprint, self.horizon, self.dt, &self.crowd);
            let x_p = front_gap_sequence(&pred, x, &self.vehicle, self.corridor_margin);
            // The assembled problem has fixed, already validated dimensions.
            if let Ok(qp) = self.synth.assemble(x, self.u_prev, &x_p, self.step) {
                let sol = self.solver.solve(&qp);
                qp_iterations = sol.iterations;
                if sol.is_optimal() {
                    mpc_choice = Some(sol.u[0]);
                }
                if keep_detail {
                    detail.qp = Some(qp);
                    detail.solution = Some(sol);
                }
            }
        }

        let p = &self.vehicle;
        let decision = match mpc_choice {
            Some(u) => {
                self.pid.track(x.v, v_ref);
                // Strip solver round-off beyond the hard bounds.
                let u = u
                    .clamp(self.u_prev - p.du_max, self.u_prev + p.du_max)
                    .clamp(-p.u_max, p.u_max);
                ControlDecision { u, source: ControlSource::Mpc, qp_iterations, front_gap, feasible: true }
            }
            None => {
                let u = self.pid.step(x.v, v_ref, p.u_max);
                ControlDecision { u, source: ControlSource::Pid, qp_iterations, front_gap, feasible: false }
            }
        };
        self.u_prev = decision.u;
        self.step += 1;
        (decision, detail)
    }
}
