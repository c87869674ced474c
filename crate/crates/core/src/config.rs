//! Training configuration and its flat `key = value` text format.
//!
//! Every key is spelled exactly like the corresponding command-line flag
//! without the leading dashes, so a config file and a command line can be
//! layered: file first, flags after.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::agent::AgentHyper;
use crate::error::{Error, Result};
use crate::replay::HerStrategy;
use crate::reward::{RewardConfig, RewardVariant};
use crate::safety::SafetyConfig;
use crate::sim::SimConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub reward: RewardConfig,
    pub sim: SimConfig,
    pub agent: AgentHyper,
    pub safety: SafetyConfig,
    pub episodes: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub her_k: f64,
    pub her_strategy: HerStrategy,
    pub buffer_capacity: usize,
    pub output_dir: PathBuf,
    /// Record real elapsed seconds in the log. Off by default so that logs
    /// are a pure function of the configuration.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            sim: SimConfig::default(),
            agent: AgentHyper::default(),
            safety: SafetyConfig::default(),
            episodes: 300,
            seed: 0,
            eval_every: 10,
            eval_episodes: 20,
            her_k: 0.8,
            her_strategy: HerStrategy::Final,
            buffer_capacity: 100_000,
            output_dir: PathBuf::from("runs"),
            wall_clock: false,
        }
    }
}

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "reward-config",
    "episodes",
    "seed",
    "safety",
    "corrective",
    "velocity-cap",
    "estop",
    "k-ft",
    "v-max",
    "estop-threshold",
    "her-k",
    "her-strategy",
    "buffer-capacity",
    "pose-noise",
    "pose-filter",
    "eval-every",
    "eval-episodes",
    "gamma",
    "actor-lr",
    "critic-lr",
    "batch-size",
    "noise-std",
    "polyak",
    "updates-per-episode",
    "hidden",
    "target-networks",
    "estop-target",
    "c-ft",
    "c-touch",
    "sigma-ft",
    "sigma-touch",
    "success-radius",
    "dt",
    "max-steps",
    "friction",
    "k-table",
    "k-block",
    "block-mass",
    "block-half-extent",
    "gripper-radius",
    "rotation-gain",
    "min-goal-distance",
    "wall-clock",
    "out",
];

/// Keys left out of the configuration hash: they do not influence learning.
const UNHASHED: &[&str] = &["out", "wall-clock"];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected on or off, got {value:?}"
        ))),
    }
}

fn switch(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

/// Splits config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "reward-config" => self.reward.variant = v.parse::<RewardVariant>()?,
            "episodes" => self.episodes = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "safety" => self.safety.set_all(parse_switch(key, v)?),
            "corrective" => self.safety.corrective_enabled = parse_switch(key, v)?,
            "velocity-cap" => self.safety.velocity_cap_enabled = parse_switch(key, v)?,
            "estop" => self.safety.estop_enabled = parse_switch(key, v)?,
            "k-ft" => self.safety.k_ft = parse_num(key, v)?,
            "v-max" => self.safety.v_max = parse_num(key, v)?,
            "estop-threshold" => self.safety.estop_force_threshold = parse_num(key, v)?,
            "her-k" => self.her_k = parse_num(key, v)?,
            "her-strategy" => self.her_strategy = v.parse()?,
            "buffer-capacity" => self.buffer_capacity = parse_num(key, v)?,
            "pose-noise" => self.sim.pose_noise_std = parse_num(key, v)?,
            "pose-filter" => self.sim.pose_filter = parse_switch(key, v)?,
            "eval-every" => self.eval_every = parse_num(key, v)?,
            "eval-episodes" => self.eval_episodes = parse_num(key, v)?,
            "gamma" => self.agent.gamma = parse_num(key, v)?,
            "actor-lr" => self.agent.actor_lr = parse_num(key, v)?,
            "critic-lr" => self.agent.critic_lr = parse_num(key, v)?,
            "batch-size" => self.agent.batch_size = parse_num(key, v)?,
            "noise-std" => self.agent.noise_std = parse_num(key, v)?,
            "polyak" => self.agent.polyak = parse_num(key, v)?,
            "updates-per-episode" => self.agent.updates_per_episode = parse_num(key, v)?,
            "hidden" => {
                self.agent.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|w| parse_num(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "target-networks" => self.agent.target_networks = parse_switch(key, v)?,
            "estop-target" => self.agent.estop_target = v.parse()?,
            "c-ft" => self.reward.c_ft = parse_num(key, v)?,
            "c-touch" => self.reward.c_touch = parse_num(key, v)?,
            "sigma-ft" => {
                self.reward.sigma_ft = parse_num(key, v)?;
                self.sim.sigma_ft = self.reward.sigma_ft;
            }
            "sigma-touch" => {
                self.reward.sigma_touch = parse_num(key, v)?;
                self.sim.sigma_touch = self.reward.sigma_touch;
            }
            "success-radius" => {
                self.reward.success_radius = parse_num(key, v)?;
                self.sim.success_radius = self.reward.success_radius;
            }
            "dt" => self.sim.dt = parse_num(key, v)?,
            "max-steps" => self.sim.max_steps = parse_num(key, v)?,
            "friction" => self.sim.friction_coefficient = parse_num(key, v)?,
            "k-table" => self.sim.k_table = parse_num(key, v)?,
            "k-block" => self.sim.k_block = parse_num(key, v)?,
            "block-mass" => self.sim.block_mass = parse_num(key, v)?,
            "block-half-extent" => self.sim.block_half_extent = parse_num(key, v)?,
            "gripper-radius" => self.sim.gripper_radius = parse_num(key, v)?,
            "rotation-gain" => self.sim.rotation_gain = parse_num(key, v)?,
            "min-goal-distance" => self.sim.min_goal_distance = parse_num(key, v)?,
            "wall-clock" => self.wall_clock = parse_switch(key, v)?,
            "out" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.safety;
        Some(match key {
            "reward-config" => self.reward.variant.to_string(),
            "episodes" => self.episodes.to_string(),
            "seed" => self.seed.to_string(),
            "safety" => {
                switch(s.corrective_enabled && s.velocity_cap_enabled && s.estop_enabled).into()
            }
            "corrective" => switch(s.corrective_enabled).into(),
            "velocity-cap" => switch(s.velocity_cap_enabled).into(),
            "estop" => switch(s.estop_enabled).into(),
            "k-ft" => s.k_ft.to_string(),
            "v-max" => s.v_max.to_string(),
            "estop-threshold" => s.estop_force_threshold.to_string(),
            "her-k" => self.her_k.to_string(),
            "her-strategy" => self.her_strategy.to_string(),
            "buffer-capacity" => self.buffer_capacity.to_string(),
            "pose-noise" => self.sim.pose_noise_std.to_string(),
            "pose-filter" => switch(self.sim.pose_filter).into(),
            "eval-every" => self.eval_every.to_string(),
            "eval-episodes" => self.eval_episodes.to_string(),
            "gamma" => self.agent.gamma.to_string(),
            "actor-lr" => self.agent.actor_lr.to_string(),
            "critic-lr" => self.agent.critic_lr.to_string(),
            "batch-size" => self.agent.batch_size.to_string(),
            "noise-std" => self.agent.noise_std.to_string(),
            "polyak" => self.agent.polyak.to_string(),
            "updates-per-episode" => self.agent.updates_per_episode.to_string(),
            "hidden" => self
                .agent
                .hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "target-networks" => switch(self.agent.target_networks).into(),
            "estop-target" => self.agent.estop_target.to_string(),
            "c-ft" => self.reward.c_ft.to_string(),
            "c-touch" => self.reward.c_touch.to_string(),
            "sigma-ft" => self.reward.sigma_ft.to_string(),
            "sigma-touch" => self.reward.sigma_touch.to_string(),
            "success-radius" => self.reward.success_radius.to_string(),
            "dt" => self.sim.dt.to_string(),
            "max-steps" => self.sim.max_steps.to_string(),
            "friction" => self.sim.friction_coefficient.to_string(),
            "k-table" => self.sim.k_table.to_string(),
            "k-block" => self.sim.k_block.to_string(),
            "block-mass" => self.sim.block_mass.to_string(),
            "block-half-extent" => self.sim.block_half_extent.to_string(),
            "gripper-radius" => self.sim.gripper_radius.to_string(),
            "rotation-gain" => self.sim.rotation_gain.to_string(),
            "min-goal-distance" => self.sim.min_goal_distance.to_string(),
            "wall-clock" => switch(self.wall_clock).into(),
            "out" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical rendering: every key once, in [`KEYS`] order. The
    /// aggregate `safety` key is omitted since the per-mechanism keys carry
    /// its information.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS.iter().filter(|k| **k != "safety") {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("every listed key renders"));
            out.push('\n');
        }
        out
    }

    /// First eight bytes of the SHA-256 of the canonical text, excluding keys
    /// that do not affect learning.
    pub fn hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for key in KEYS
            .iter()
            .filter(|k| **k != "safety" && !UNHASHED.contains(k))
        {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(self.get(key).expect("every listed key renders").as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(first)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval-episodes must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval-every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.her_k) {
            return Err(Error::Config(format!(
                "her-k {} outside [0, 1]",
                self.her_k
            )));
        }
        if self.buffer_capacity < self.sim.max_steps {
            return Err(Error::Config(
                "buffer-capacity must hold at least one full episode".into(),
            ));
        }
        if self.reward.sigma_ft != self.sim.sigma_ft
            || self.reward.sigma_touch != self.sim.sigma_touch
            || self.reward.success_radius != self.sim.success_radius
        {
            return Err(Error::Config(
                "reward and simulator thresholds disagree".into(),
            ));
        }
        self.reward.validate()?;
        self.sim.validate()?;
        self.agent.validate()?;
        self.safety.validate(self.sim.sigma_ft)?;
        Ok(())
    }
}
