//! Social-force vehicle–crowd interaction model.
//!
//! Each pedestrian is a planar point mass driven by
//!
//! ```text
//! F_i = sum_{j in Q(i)} (f_r + f_c + f_n) + f_v + beta(f_v) * f_d
//! ```
//!
//! where `Q(i)` is every other pedestrian within `neighbor_radius`, `f_v` is
//! the repulsion of the vehicle and `beta` attenuates the destination drive
//! `f_d` as the vehicle threat grows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub destination: Vec2,
    pub mass: f64,
    pub radius: f64,
    pub desired_speed: f64,
}

impl PedestrianState {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.position, self.velocity, self.destination]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()));
        if !finite || !(self.mass > 0.0) || !(self.radius > 0.0) || !(self.desired_speed >= 0.0) {
            return Err(Error::InvalidParameter(format!("pedestrian {} is malformed", self.id)));
        }
        Ok(())
    }
}

/// Rectangular vehicle body moving along `heading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleFootprint {
    pub center: Vec2,
    /// Unit vector.
    pub heading: Vec2,
    pub length: f64,
    pub width: f64,
    pub longitudinal_speed: f64,
}

impl VehicleFootprint {
    fn lateral(&self) -> Vec2 {
        Vec2::new(-self.heading.y, self.heading.x)
    }

    /// Position of `p` in the vehicle frame: (longitudinal, lateral) offset
    /// from the center.
    pub fn local(&self, p: &Vec2) -> (f64, f64) {
        let rel = p - self.center;
        (rel.dot(&self.heading), rel.dot(&self.lateral()))
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        let (a, b) = self.local(p);
        a.abs() <= 0.5 * self.length && b.abs() <= 0.5 * self.width
    }

    /// Euclidean distance from `p` to the body rectangle, 0 inside.
    pub fn distance_to_body(&self, p: &Vec2) -> f64 {
        let (a, b) = self.local(p);
        let da = (a.abs() - 0.5 * self.length).max(0.0);
        let db = (b.abs() - 0.5 * self.width).max(0.0);
        da.hypot(db)
    }

    /// The same body moved `distance` along its heading.
    pub fn advanced(&self, distance: f64) -> Self {
        Self { center: self.center + self.heading * distance, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrowdParams {
    /// Relaxation time of the destination drive, s.
    pub tau: f64,
    pub a_rep: f64,
    pub b_rep: f64,
    /// Body contact stiffness, N/m.
    pub k_body: f64,
    pub a_nav: f64,
    /// Radius of the neighbourhood Q(i), m.
    pub neighbor_radius: f64,
    pub max_ped_speed: f64,
    /// Forward stretch of the vehicle field per unit speed, s.
    pub veh_lambda: f64,
    pub a_veh: f64,
    pub b_veh: f64,
    pub veh_cutoff: f64,
    /// Below this speed the vehicle is a plain rectangular obstacle, m/s.
    pub static_speed: f64,
    /// Weight of the sideways component added to the field ahead of a moving vehicle.
    pub veh_lateral_bias: f64,
    /// Vehicle force at which the destination drive is fully suppressed, N.
    pub f_sat: f64,
}

impl Default for CrowdParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            a_rep: 300.0,
            b_rep: 0.4,
            k_body: 2000.0,
            a_nav: 100.0,
            neighbor_radius: 4.0,
            max_ped_speed: 2.0,
            veh_lambda: 1.0,
            a_veh: 600.0,
            b_veh: 1.5,
            veh_cutoff: 15.0,
            static_speed: 0.2,
            veh_lateral_bias: 0.5,
            f_sat: 800.0,
        }
    }
}

impl CrowdParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("b_rep", self.b_rep),
            ("b_veh", self.b_veh),
            ("f_sat", self.f_sat),
            ("max_ped_speed", self.max_ped_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("crowd.{name} must be > 0")));
            }
        }
        let nonneg = [
            ("a_rep", self.a_rep),
            ("k_body", self.k_body),
            ("a_nav", self.a_nav),
            ("neighbor_radius", self.neighbor_radius),
            ("veh_lambda", self.veh_lambda),
            ("a_veh", self.a_veh),
            ("veh_cutoff", self.veh_cutoff),
            ("static_speed", self.static_speed),
            ("veh_lateral_bias", self.veh_lateral_bias),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("crowd.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceBreakdown {
    pub repulsive: Vec2,
    pub collision: Vec2,
    pub navigational: Vec2,
    pub vehicle: Vec2,
    pub destination: Vec2,
    pub beta: f64,
    pub total: Vec2,
    /// Whether the vehicle term used the static-obstacle form.
    pub static_vehicle: bool,
}

impl ForceBreakdown {
    pub fn recomputed_total(&self) -> Vec2 {
        self.repulsive + self.collision + self.navigational + self.vehicle + self.destination * self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInfluence {
    pub force: Vec2,
    pub static_regime: bool,
    /// Distance to the (possibly stretched) influence rectangle.
    pub distance: f64,
}

/// Repulsion exerted by the vehicle on one pedestrian.
///
/// A moving vehicle projects its rectangle forward by `veh_lambda * speed`;
/// the magnitude decays exponentially with the distance to that stretched
/// rectangle and the direction points away from its nearest point, tilted
/// sideways for pedestrians ahead of the bumper. Below `static_speed` the
/// bare body rectangle is used with no tilt.
pub fn vehicle_influence_detail(
    ped: &PedestrianState,
    veh: &VehicleFootprint,
    params: &CrowdParams,
) -> VehicleInfluence {
    let static_regime = veh.longitudinal_speed < params.static_speed;
    let stretch = if static_regime { 0.0 } else { params.veh_lambda * veh.longitudinal_speed };
    let half_len = 0.5 * veh.length;
    let half_wid = 0.5 * veh.width;

    let (a, b) = veh.local(&ped.position);
    let da = a - a.clamp(-half_len, half_len + stretch);
    let db = b - b.clamp(-half_wid, half_wid);
    let distance = da.hypot(db);

    if distance > params.veh_cutoff {
        return VehicleInfluence { force: Vec2::zeros(), static_regime, distance };
    }

    let lateral = veh.lateral();
    let side = if b != 0.0 {
        b.signum()
    } else if ped.velocity.dot(&lateral) < 0.0 {
        -1.0
    } else {
        1.0
    };

    let mut dir = if distance > 1e-12 {
        Vec2::new(da, db) / distance
    } else {
        Vec2::new(0.0, side)
    };
    if !static_regime && a > half_len {
        dir.y += params.veh_lateral_bias * side;
        dir /= dir.norm();
    }

    let magnitude = params.a_veh * (-distance / params.b_veh).exp();
    let force = (veh.heading * dir.x + lateral * dir.y) * magnitude;
    VehicleInfluence { force, static_regime, distance }
}

pub fn vehicle_influence(ped: &PedestrianState, veh: &VehicleFootprint, params: &CrowdParams) -> Vec2 {
    vehicle_influence_detail(ped, veh, params).force
}

/// Social forces (repulsive, collision, navigational) exerted by `other` on `ped`.
pub fn pair_forces(ped: &PedestrianState, other: &PedestrianState, params: &CrowdParams) -> (Vec2, Vec2, Vec2) {
    let offset = ped.position - other.position;
    let d = offset.norm();
    let normal = if d > 1e-12 {
        offset / d
    } else if ped.id < other.id {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(-1.0, 0.0)
    };
    let overlap = ped.radius + other.radius - d;
    let decay = (overlap / params.b_rep).exp();

    let repulsive = normal * (params.a_rep * decay);
    let collision = normal * (params.k_body * overlap.max(0.0));

    // Sidestep in the direction the pair is already sliding past each other.
    let tangent = Vec2::new(-normal.y, normal.x);
    let sign = if (ped.velocity - other.velocity).dot(&tangent) >= 0.0 { 1.0 } else { -1.0 };
    let navigational = tangent * (sign * params.a_nav * decay);

    (repulsive, collision, navigational)
}

pub fn destination_force(ped: &PedestrianState, params: &CrowdParams) -> Vec2 {
    let to_dest = ped.destination - ped.position;
    let dist = to_dest.norm();
    let desired = if dist > 1e-9 { to_dest * (ped.desired_speed / dist) } else { Vec2::zeros() };
    (desired - ped.velocity) * (ped.mass / params.tau)
}

/// Total force on `ped`. `neighbors` is Q(i) and must not contain `ped`.
pub fn total_force(
    ped: &PedestrianState,
    neighbors: &[&PedestrianState],
    veh: Option<&VehicleFootprint>,
    params: &CrowdParams,
) -> ForceBreakdown {
    let mut out = ForceBreakdown::default();
    for other in neighbors {
        let (r, c, n) = pair_forces(ped, other, params);
        out.repulsive += r;
        out.collision += c;
        out.navigational += n;
    }
    if let Some(veh) = veh {
        let inf = vehicle_influence_detail(ped, veh, params);
        out.vehicle = inf.force;
        out.static_vehicle = inf.static_regime;
    }
    out.destination = destination_force(ped, params);
    out.beta = (1.0 - out.vehicle.norm() / params.f_sat).max(0.0);
    out.total = out.recomputed_total();
    out
}

/// Other pedestrians within `neighbor_radius` of `crowd[index]`.
pub fn neighborhood<'a>(crowd: &'a [PedestrianState], index: usize, params: &CrowdParams) -> Vec<&'a PedestrianState> {
    let me = &crowd[index];
    let r2 = params.neighbor_radius * params.neighbor_radius;
    crowd
        .iter()
        .enumerate()
        .filter(|(j, other)| *j != index && (other.position - me.position).norm_squared() <= r2)
        .map(|(_, other)| other)
        .collect()
}

pub fn crowd_forces(crowd: &[PedestrianState], veh: Option<&VehicleFootprint>, params: &CrowdParams) -> Vec<ForceBreakdown> {
    (0..crowd.len())
        .map(|i| total_force(&crowd[i], &neighborhood(crowd, i, params), veh, params))
        .collect()
}

/// Advance the crowd by one semi-implicit Euler step: velocity first from
/// `F/m`, capped at `max_ped_speed`, then position from the new velocity.
pub fn step_crowd(
    crowd: &[PedestrianState],
    veh: Option<&VehicleFootprint>,
    dt: f64,
    params: &CrowdParams,
) -> Vec<PedestrianState> {
    step_crowd_traced(crowd, veh, dt, params).0
}

pub fn step_crowd_traced(
    crowd: &[PedestrianState],
    veh: Option<&VehicleFootprint>,
    dt: f64,
    params: &CrowdParams,
) -> (Vec<PedestrianState>, Vec<ForceBreakdown>) {
    debug_assert!(dt > 0.0);
    let forces = crowd_forces(crowd, veh, params);
    let next = crowd
        .iter()
        .zip(&forces)
        .map(|(ped, f)| {
            let mut v = ped.velocity + f.total * (dt / ped.mass);
            let speed = v.norm();
            if speed > params.max_ped_speed {
                v *= params.max_ped_speed / speed;
            }
            PedestrianState { position: ped.position + v * dt, velocity: v, ..ped.clone() }
        })
        .collect();
    (next, forces)
}

/// One row of the per-step force trace.
#[derive(Debug, Clone, Serialize)]
pub struct ForceTraceRow {
    pub t: f64,
    pub ped_id: u32,
    pub fr_x: f64,
    pub fr_y: f64,
    pub fc_x: f64,
    pub fc_y: f64,
    pub fn_x: f64,
    pub fn_y: f64,
    pub fv_x: f64,
    pub fv_y: f64,
    pub fd_x: f64,
    pub fd_y: f64,
    pub beta: f64,
    pub static_vehicle: bool,
}

impl ForceTraceRow {
    pub fn new(t: f64, ped_id: u32, f: &ForceBreakdown) -> Self {
        Self {
            t,
            ped_id,
            fr_x: f.repulsive.x,
            fr_y: f.repulsive.y,
            fc_x: f.collision.x,
            fc_y: f.collision.y,
            fn_x: f.navigational.x,
            fn_y: f.navigational.y,
            fv_x: f.vehicle.x,
            fv_y: f.vehicle.y,
            fd_x: f.destination.x,
            fd_y: f.destination.y,
            beta: f.beta,
            static_vehicle: f.static_vehicle,
        }
    }
}
