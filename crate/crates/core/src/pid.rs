//! Discrete PID speed controller tracking a gap-dependent reference speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Distance over which the reference speed ramps from 0 to `v_r`, m.
    pub d_buffer: f64,
    /// While the reference speed is zero, hold the integral and leave it out
    /// of the output.
    pub hold_on_stop: bool,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 300.0, ki: 10.0, kd: 100.0, d_buffer: 10.0, hold_on_stop: true }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0 && self.kd >= 0.0) {
            return Err(Error::InvalidParameter("pid gains must be >= 0".into()));
        }
        if !(self.d_buffer > 0.0) {
            return Err(Error::InvalidParameter("pid.d_buffer must be > 0".into()));
        }
        Ok(())
    }
}

/// Reference speed from the gap to the closest pedestrian ahead: zero up to
/// `d_safe`, `v_r` beyond `d_safe + d_buffer`, linear in between.
pub fn reference_speed(gap: f64, v_r: f64, d_safe: f64, d_buffer: f64) -> f64 {
    v_r * ((gap - d_safe) / d_buffer).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidState {
    /// Integral term, N.
    pub integral: f64,
    pub prev_error: f64,
    pub gains: PidGains,
    pub dt: f64,
}

impl PidState {
    pub fn new(gains: PidGains, dt: f64) -> Self {
        Self { integral: 0.0, prev_error: 0.0, gains, dt }
    }

    /// A controller already holding `v` against linear friction `alpha`.
    pub fn cruising(gains: PidGains, dt: f64, friction: f64, v: f64) -> Self {
        Self { integral: -friction * v, ..Self::new(gains, dt) }
    }

    /// One update: `e = v - v_ref`, `u = -(u_p + u_i + u_d)` clamped to
    /// `±u_max`. The integral is frozen on saturated steps.
    pub fn step(&mut self, v: f64, v_ref: f64, u_max: f64) -> f64 {
        let g = &self.gains;
        let e = v - v_ref;
        let u_p = g.kp * e;
        let u_d = g.kd * (e - self.prev_error) / self.dt;
        self.prev_error = e;
        if g.hold_on_stop && v_ref == 0.0 {
            // The held cruise integral would push toward the pedestrian.
            return (-(u_p + u_d)).clamp(-u_max, u_max);
        }
        let u_i = g.ki * e * self.dt + self.integral;
        let raw = -(u_p + u_i + u_d);
        let u = raw.clamp(-u_max, u_max);
        if u == raw {
            self.integral = u_i;
        }
        u
    }

    /// Keep the derivative memory current while another controller drives.
    pub fn track(&mut self, v: f64, v_ref: f64) {
        self.prev_error = v - v_ref;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ramp_points() {
        assert_eq!(reference_speed(8.0, 4.0, 8.0, 10.0), 0.0);
        assert_eq!(reference_speed(18.0, 4.0, 8.0, 10.0), 4.0);
        assert_abs_diff_eq!(reference_speed(13.0, 4.0, 8.0, 10.0), 2.0, epsilon = 1e-15);
        assert_eq!(reference_speed(-1.0, 4.0, 8.0, 10.0), 0.0);
        assert_eq!(reference_speed(1e9, 4.0, 8.0, 10.0), 4.0);
    }

    #[test]
    fn ramp_is_monotone_and_continuous() {
        let mut prev = reference_speed(0.0, 4.0, 8.0, 10.0);
        for k in 1..=3000 {
            let v = reference_speed(k as f64 * 0.01, 4.0, 8.0, 10.0);
            assert!(v >= prev);
            // slope 0.4 per m -> at most 0.004 per cm
            assert!(v - prev <= 0.004 + 1e-12);
            prev = v;
        }
    }

    fn fresh() -> PidState {
        PidState::new(PidGains { hold_on_stop: false, ..Default::default() }, 0.05)
    }

    #[test]
    fn on_reference_zero_output() {
        assert_eq!(fresh().step(4.0, 4.0, 8000.0), 0.0);
    }

    #[test]
    fn hand_evaluated_step() {
        // u_p = -300, u_i = -0.5, u_d = -2000
        let mut pid = fresh();
        assert_abs_diff_eq!(pid.step(3.0, 4.0, 8000.0), 2300.5, epsilon = 1e-9);
        assert_abs_diff_eq!(pid.integral, -0.5, epsilon = 1e-12);
        assert_eq!(pid.prev_error, -1.0);
    }

    #[test]
    fn saturation_clamps_and_freezes_integral() {
        // raw 1200 + 2 + 8000 = 9202 -> 8000
        let mut pid = fresh();
        assert_eq!(pid.step(0.0, 4.0, 8000.0), 8000.0);
        assert_eq!(pid.integral, 0.0);
        assert_eq!(pid.prev_error, -4.0);
    }

    #[test]
    fn cruising_controller_holds_speed() {
        let pid_gains = PidGains::default();
        let mut pid = PidState::cruising(pid_gains, 0.05, 100.0, 4.0);
        assert_abs_diff_eq!(pid.step(4.0, 4.0, 8000.0), 400.0, epsilon = 1e-12);
    }

    #[test]
    fn stop_command_holds_integral_and_never_propels() {
        let mut pid = PidState::cruising(PidGains::default(), 0.05, 100.0, 4.0);
        pid.prev_error = 1.0;
        assert_eq!(pid.step(1.0, 0.0, 8000.0), -300.0);
        assert_eq!(pid.integral, -400.0);
        // At standstill the held integral alone would push with 400 N.
        pid.prev_error = 0.0;
        assert_eq!(pid.step(0.0, 0.0, 8000.0), 0.0);
        assert_eq!(pid.integral, -400.0);
        // Back on a cruise reference the held integral is available again.
        pid.prev_error = -4.0;
        let u = pid.step(0.0, 4.0, 8000.0);
        assert!((u - (1200.0 + 2.0 + 400.0)).abs() < 1e-9, "u = {u}");
    }

    #[test]
    fn output_is_bounded() {
        let mut pid = fresh();
        for k in 0..200 {
            let v = (k as f64 * 0.37).sin() * 30.0;
            assert!(pid.step(v, 4.0, 8000.0).abs() <= 8000.0);
        }
    }
}
