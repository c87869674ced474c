//! Sparse goal reward plus binarized force/touch shaping terms.
//!
//! Four composite rewards are supported:
//!
//! | variant | terms                          |
//! |---------|--------------------------------|
//! | `r1`    | distance + force + touch       |
//! | `r2`    | distance + force               |
//! | `r3`    | distance + touch               |
//! | `r4`    | distance only                  |
//!
//! The shaping terms depend only on sensor readings, never on the goal, which
//! is what lets hindsight relabeling recompute rewards exactly.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardVariant {
    R1,
    R2,
    R3,
    R4,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 4] = [Self::R1, Self::R2, Self::R3, Self::R4];

    pub fn uses_force(self) -> bool {
        matches!(self, Self::R1 | Self::R2)
    }

    pub fn uses_touch(self) -> bool {
        matches!(self, Self::R1 | Self::R3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::R1 => "r1",
            Self::R2 => "r2",
            Self::R3 => "r3",
            Self::R4 => "r4",
        }
    }
}

impl fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r1" => Ok(Self::R1),
            "r2" => Ok(Self::R2),
            "r3" => Ok(Self::R3),
            "r4" => Ok(Self::R4),
            other => Err(Error::Config(format!(
                "unknown reward variant {other:?} (expected r1, r2, r3 or r4)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub c_ft: f64,
    /// Newtons.
    pub sigma_ft: f64,
    pub c_touch: f64,
    /// Newtons.
    pub sigma_touch: f64,
    /// Metres.
    pub success_radius: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            variant: RewardVariant::R1,
            c_ft: 0.2,
            sigma_ft: 50.0,
            c_touch: 0.2,
            sigma_touch: 0.1,
            success_radius: 0.04,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.c_ft >= 0.0 && self.c_touch >= 0.0) {
            return Err(Error::Config("reward gains must be non-negative".into()));
        }
        if !(self.sigma_ft > 0.0 && self.sigma_touch > 0.0 && self.success_radius > 0.0) {
            return Err(Error::Config("reward thresholds must be positive".into()));
        }
        Ok(())
    }
}

pub fn goal_distance(achieved: [f64; 2], goal: [f64; 2]) -> f64 {
    (achieved[0] - goal[0]).hypot(achieved[1] - goal[1])
}

/// 0 when the goal is reached, -1 otherwise.
pub fn r_d(achieved: [f64; 2], goal: [f64; 2], cfg: &RewardConfig) -> f64 {
    if goal_distance(achieved, goal) <= cfg.success_radius {
        0.0
    } else {
        -1.0
    }
}

/// -1 when the force amplitude (Euclidean norm) reaches `sigma_ft`, else 0.
pub fn indicator_ft(ft_force: [f64; 3], cfg: &RewardConfig) -> f64 {
    let amplitude = ft_force.iter().map(|f| f * f).sum::<f64>().sqrt();
    if amplitude >= cfg.sigma_ft {
        -1.0
    } else {
        0.0
    }
}

/// 1 when either fingertip reads at least `sigma_touch`, else 0.
pub fn indicator_touch(touch: [f64; 2], cfg: &RewardConfig) -> f64 {
    if touch[0].max(touch[1]) >= cfg.sigma_touch {
        1.0
    } else {
        0.0
    }
}

/// `(r_ft, r_touch)` as enabled by `variant`.
pub fn shaping_terms(
    variant: RewardVariant,
    ft_force: [f64; 3],
    touch: [f64; 2],
    cfg: &RewardConfig,
) -> (f64, f64) {
    let r_ft = if variant.uses_force() {
        cfg.c_ft * indicator_ft(ft_force, cfg)
    } else {
        0.0
    };
    let r_touch = if variant.uses_touch() {
        cfg.c_touch * indicator_touch(touch, cfg)
    } else {
        0.0
    };
    (r_ft, r_touch)
}

pub fn shaped_reward(
    variant: RewardVariant,
    achieved: [f64; 2],
    goal: [f64; 2],
    ft_force: [f64; 3],
    touch: [f64; 2],
    cfg: &RewardConfig,
) -> f64 {
    let (r_ft, r_touch) = shaping_terms(variant, ft_force, touch, cfg);
    r_d(achieved, goal, cfg) + r_ft + r_touch
}
