//! N-step crowd prediction under a constant-speed vehicle and extraction of
//! the closest in-corridor pedestrian ahead at each horizon step.

use crate::crowd::{step_crowd, CrowdParams, PedestrianState, VehicleFootprint};
use crate::vehicle::{VehicleParams, VehicleState};
use crate::Vec2;

/// Placeholder longitudinal position when nobody is ahead in the corridor.
pub const NO_PEDESTRIAN: f64 = 1e9;

/// Straight path followed by the vehicle center; path coordinate `s` maps to
/// `origin + s * heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lane {
    pub origin: Vec2,
    pub heading: Vec2,
}

impl Default for Lane {
    fn default() -> Self {
        Self { origin: Vec2::zeros(), heading: Vec2::new(1.0, 0.0) }
    }
}

impl Lane {
    pub fn footprint(&self, params: &VehicleParams, state: &VehicleState) -> VehicleFootprint {
        VehicleFootprint {
            center: self.origin + self.heading * state.s,
            heading: self.heading,
            length: params.length,
            width: params.width,
            longitudinal_speed: state.v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdPrediction {
    pub horizon: usize,
    /// `trajectories[p][i]` is pedestrian `p` at step `k + 1 + i`.
    pub trajectories: Vec<Vec<Vec2>>,
    pub assumed_vehicle_speed: f64,
    /// Vehicle body when the prediction was made.
    pub footprint: VehicleFootprint,
}

/// Roll the crowd model forward `horizon` steps while the vehicle keeps its
/// current speed. Pedestrian states are taken as exact.
pub fn predict(
    crowd: &[PedestrianState],
    veh: &VehicleFootprint,
    horizon: usize,
    dt: f64,
    params: &CrowdParams,
) -> CrowdPrediction {
    let mut trajectories = vec![Vec::with_capacity(horizon); crowd.len()];
    let mut state = crowd.to_vec();
    let step_len = veh.longitudinal_speed * dt;
    for i in 0..horizon {
        let body = veh.advanced(step_len * i as f64);
        state = step_crowd(&state, Some(&body), dt, params);
        for (traj, p) in trajectories.iter_mut().zip(&state) {
            traj.push(p.position);
        }
    }
    CrowdPrediction {
        horizon,
        trajectories,
        assumed_vehicle_speed: veh.longitudinal_speed,
        footprint: *veh,
    }
}

/// Closest in-corridor longitudinal pedestrian position per horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontGapSequence {
    pub x_p: Vec<f64>,
}

impl FrontGapSequence {
    pub fn is_present(&self, i: usize) -> bool {
        self.x_p[i] < NO_PEDESTRIAN
    }
}

/// Lateral half-width of the corridor swept by the vehicle.
pub fn corridor_half_width(params: &VehicleParams, margin: f64) -> f64 {
    0.5 * params.width + margin
}

/// Longitudinal coordinate of `p` along the vehicle path if it lies in the
/// corridor ahead of the vehicle center `s`.
fn ahead_in_corridor(footprint: &VehicleFootprint, s: f64, half_width: f64, p: &Vec2) -> Option<f64> {
    // The footprint center sits at path coordinate `s`.
    let (lon, lat) = footprint.local(p);
    let lon = lon + s;
    (lon > s && lat.abs() <= half_width).then_some(lon)
}

fn closest_ahead<'a>(
    footprint: &VehicleFootprint,
    s: f64,
    half_width: f64,
    points: impl Iterator<Item = &'a Vec2>,
) -> f64 {
    points
        .filter_map(|p| ahead_in_corridor(footprint, s, half_width, p))
        .fold(NO_PEDESTRIAN, f64::min)
}

pub fn front_gap_sequence(
    pred: &CrowdPrediction,
    veh_state: &VehicleState,
    veh_params: &VehicleParams,
    corridor_margin: f64,
) -> FrontGapSequence {
    let half_width = corridor_half_width(veh_params, corridor_margin);
    let x_p = (0..pred.horizon)
        .map(|i| closest_ahead(&pred.footprint, veh_state.s, half_width, pred.trajectories.iter().map(|t| &t[i])))
        .collect();
    FrontGapSequence { x_p }
}

/// Longitudinal position of the closest in-corridor pedestrian ahead right
/// now, or [`NO_PEDESTRIAN`].
pub fn current_front_position(
    crowd: &[PedestrianState],
    footprint: &VehicleFootprint,
    veh_state: &VehicleState,
    veh_params: &VehicleParams,
    corridor_margin: f64,
) -> f64 {
    let half_width = corridor_half_width(veh_params, corridor_margin);
    closest_ahead(footprint, veh_state.s, half_width, crowd.iter().map(|p| &p.position))
}
