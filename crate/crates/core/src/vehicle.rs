//! Longitudinal point-mass vehicle with linearized friction:
//! `M s'' + alpha s' = u`, discretized with forward Euler.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Mass, kg.
    pub mass: f64,
    /// Linearized friction coefficient, N/(m/s).
    pub friction: f64,
    /// Force bound, N.
    pub u_max: f64,
    /// Force change bound per control step, N.
    pub du_max: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1000.0,
            friction: 100.0,
            u_max: 8000.0,
            du_max: 1000.0,
            v_max: 20.0,
            v_min: 0.0,
            length: 5.0,
            width: 2.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("vehicle: {m}")));
        if !(self.mass > 0.0) {
            return bad("mass must be > 0");
        }
        if !(self.friction >= 0.0) {
            return bad("friction must be >= 0");
        }
        if !(self.u_max > 0.0) || !(self.du_max > 0.0) {
            return bad("u_max and du_max must be > 0");
        }
        if !(self.v_min >= 0.0) || !(self.v_max > self.v_min) {
            return bad("need v_max > v_min >= 0");
        }
        if !(self.length > 0.0) || !(self.width > 0.0) {
            return bad("length and width must be > 0");
        }
        Ok(())
    }

    /// Front bumper position for a vehicle whose center is at `s`.
    pub fn front_bumper(&self, s: f64) -> f64 {
        s + 0.5 * self.length
    }
}

/// Position of the vehicle center along its path and its speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub s: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(s: f64, v: f64) -> Self {
        Self { s, v }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.s, self.v)
    }
}

/// `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub dt: f64,
}

pub fn discretize(params: &VehicleParams, dt: f64) -> Result<DiscreteModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let decay = params.friction * dt / params.mass;
    if !(decay < 1.0) {
        return Err(Error::UnstableDiscretization(decay));
    }
    Ok(DiscreteModel {
        a: Matrix2::new(1.0, dt, 0.0, 1.0 - decay),
        b: Vector2::new(0.0, dt / params.mass),
        dt,
    })
}

impl DiscreteModel {
    /// Exact affine update; input limits are the controller's business.
    pub fn step(&self, x: VehicleState, u: f64) -> VehicleState {
        let next = self.a * x.as_vector() + self.b * u;
        VehicleState::new(next[0], next[1])
    }
}
