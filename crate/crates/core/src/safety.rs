//! Action post-processing for safe exploration.
//!
//! Pipeline per step: policy + noise -> [`corrective_action`] ->
//! [`clamp_displacement`] -> simulator step -> [`estop_check`].

use crate::error::{Error, Result};
use crate::sim::norm3;

/// Metres of gripper travel per unit of action per step.
pub const ACTION_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafetyConfig {
    /// Action units per newton.
    pub k_ft: f64,
    /// m/s.
    pub v_max: f64,
    /// N.
    pub estop_force_threshold: f64,
    pub corrective_enabled: bool,
    pub velocity_cap_enabled: bool,
    pub estop_enabled: bool,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            k_ft: 0.002,
            v_max: 0.1,
            estop_force_threshold: 100.0,
            corrective_enabled: true,
            velocity_cap_enabled: true,
            estop_enabled: true,
        }
    }
}

impl SafetyConfig {
    /// Every mechanism switched off; thresholds kept so collisions can still
    /// be counted.
    pub fn disabled() -> Self {
        Self {
            corrective_enabled: false,
            velocity_cap_enabled: false,
            estop_enabled: false,
            ..Self::default()
        }
    }

    pub fn set_all(&mut self, on: bool) {
        self.corrective_enabled = on;
        self.velocity_cap_enabled = on;
        self.estop_enabled = on;
    }

    pub fn validate(&self, sigma_ft: f64) -> Result<()> {
        if !(self.k_ft >= 0.0) {
            return Err(Error::Config("k_ft must be non-negative".into()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config("v_max must be positive".into()));
        }
        if !(self.estop_force_threshold > sigma_ft) {
            return Err(Error::Config(format!(
                "emergency-stop threshold {} N must exceed the force trigger {sigma_ft} N",
                self.estop_force_threshold
            )));
        }
        Ok(())
    }

    /// Turns a policy action into the displacement actually commanded.
    pub fn process(&self, action: [f64; 3], ft_force: [f64; 3], dt: f64) -> [f64; 3] {
        let corrected = if self.corrective_enabled {
            corrective_action(action, ft_force, self.k_ft)
        } else {
            action
        };
        if self.velocity_cap_enabled {
            clamp_displacement(corrected, dt, self.v_max, ACTION_SCALE)
        } else {
            corrected.map(|a| a * ACTION_SCALE)
        }
    }
}

/// `a + k_ft * F`. The reaction force points away from whatever the gripper
/// is pressing into, so the correction backs off.
pub fn corrective_action(action: [f64; 3], ft_force: [f64; 3], k_ft: f64) -> [f64; 3] {
    [
        action[0] + k_ft * ft_force[0],
        action[1] + k_ft * ft_force[1],
        action[2] + k_ft * ft_force[2],
    ]
}

/// Scales an action to metres and caps the implied speed at `v_max`.
pub fn clamp_displacement(action: [f64; 3], dt: f64, v_max: f64, action_scale: f64) -> [f64; 3] {
    let delta = action.map(|a| a * action_scale);
    let limit = v_max * dt;
    let n = norm3(delta);
    if n > limit {
        let s = limit / n;
        delta.map(|d| d * s)
    } else {
        delta
    }
}

pub fn estop_check(ft_force: [f64; 3], threshold: f64) -> bool {
    norm3(ft_force) >= threshold
}
