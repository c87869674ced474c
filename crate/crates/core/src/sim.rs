//! Quasi-static Cartesian pushing simulator.
//!
//! A spherical fingertip gripper under displacement control pushes a square
//! block across a table. Contacts are penalty springs: the table pushes back
//! with `k_table * penetration`, the block with `k_block * overlap`. The block
//! is quasi-static. It slides to resolve the overlap only when the contact
//! force beats Coulomb friction and never carries momentum between steps.
//!
//! Block yaw is driven by a single gain applied to the moment arm of the
//! contact. This is not rigid-body physics; it only exists so that off-centre
//! pushes rotate the block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::reward::{self, RewardConfig};

pub const GRAVITY: f64 = 9.81;
pub const OBS_DIM: usize = 16;
pub const GOAL_DIM: usize = 2;

/// Slot offsets inside [`Observation::vector`].
pub mod slot {
    pub const GRIPPER_POS: usize = 0;
    pub const GRIPPER_VEL: usize = 3;
    pub const BLOCK_POSE: usize = 6;
    pub const RELATIVE: usize = 9;
    pub const I_FT: usize = 12;
    pub const TOUCH: usize = 13;
    pub const GOAL_DISTANCE: usize = 15;
}

const MAX_RESET_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Seconds per step.
    pub dt: f64,
    pub max_steps: usize,
    pub block_half_extent: f64,
    pub gripper_radius: f64,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub spawn_min: [f64; 2],
    pub spawn_max: [f64; 2],
    pub min_goal_distance: f64,
    pub success_radius: f64,
    pub home: [f64; 3],
    /// N/m.
    pub k_table: f64,
    /// N/m.
    pub k_block: f64,
    pub friction_coefficient: f64,
    /// kg.
    pub block_mass: f64,
    pub sigma_ft: f64,
    pub sigma_touch: f64,
    /// Standard deviation of the measured block position, metres.
    pub pose_noise_std: f64,
    /// Hold the block estimate while the fingertips feel nothing.
    pub pose_filter: bool,
    /// rad/m^2, couples contact moment arm to yaw.
    pub rotation_gain: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_steps: 200,
            block_half_extent: 0.035,
            gripper_radius: 0.01,
            workspace_min: [0.0, 0.0, 0.0],
            workspace_max: [0.6, 0.6, 0.3],
            spawn_min: [0.1, 0.1],
            spawn_max: [0.5, 0.5],
            min_goal_distance: 0.08,
            success_radius: 0.04,
            home: [0.3, 0.3, 0.05],
            k_table: 10_000.0,
            k_block: 1_000.0,
            friction_coefficient: 0.03,
            block_mass: 0.5,
            sigma_ft: 50.0,
            sigma_touch: 0.1,
            pose_noise_std: 0.0,
            pose_filter: true,
            rotation_gain: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("block_half_extent", self.block_half_extent),
            ("gripper_radius", self.gripper_radius),
            ("min_goal_distance", self.min_goal_distance),
            ("success_radius", self.success_radius),
            ("k_table", self.k_table),
            ("k_block", self.k_block),
            ("friction_coefficient", self.friction_coefficient),
            ("block_mass", self.block_mass),
            ("sigma_ft", self.sigma_ft),
            ("sigma_touch", self.sigma_touch),
            ("rotation_gain", self.rotation_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.pose_noise_std >= 0.0 && self.pose_noise_std.is_finite()) {
            return Err(Error::Config("pose_noise_std must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        for i in 0..3 {
            if !(self.workspace_min[i] < self.workspace_max[i]) {
                return Err(Error::Config("empty workspace".into()));
            }
            if !(self.workspace_min[i]..=self.workspace_max[i]).contains(&self.home[i]) {
                return Err(Error::Config("home position outside the workspace".into()));
            }
        }
        for i in 0..2 {
            let extent = self.spawn_max[i] - self.spawn_min[i];
            if !(extent > 0.0) {
                return Err(Error::Config("empty spawn region".into()));
            }
            if !(self.success_radius < extent) {
                return Err(Error::Config(
                    "success radius must be smaller than the spawn region".into(),
                ));
            }
            if self.spawn_min[i] < self.workspace_min[i]
                || self.spawn_max[i] > self.workspace_max[i]
            {
                return Err(Error::Config(
                    "spawn region must lie inside the workspace".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn block_height(&self) -> f64 {
        2.0 * self.block_half_extent
    }

    /// Force the block's contact must exceed before it slides, N.
    pub fn friction_resistance(&self) -> f64 {
        self.friction_coefficient * self.block_mass * GRAVITY
    }

    fn indicator_config(&self) -> RewardConfig {
        RewardConfig {
            sigma_ft: self.sigma_ft,
            sigma_touch: self.sigma_touch,
            success_radius: self.success_radius,
            ..RewardConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub gripper_pos: [f64; 3],
    pub gripper_vel: [f64; 3],
    /// `(x, y, yaw)`, yaw in `[0, 2pi)`.
    pub block_pose: [f64; 3],
    pub goal: [f64; 2],
    /// Reaction force on the gripper, N.
    pub ft_force: [f64; 3],
    /// Fingertip contact magnitudes, N.
    pub touch: [f64; 2],
    pub step_index: usize,
    pub estopped: bool,
}

impl SimState {
    pub fn block_xy(&self) -> [f64; 2] {
        [self.block_pose[0], self.block_pose[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorReadings {
    pub ft_force: [f64; 3],
    pub touch: [f64; 2],
    /// Table normal force alone, N.
    pub table_force: f64,
    /// Whether the block slid this step.
    pub block_moved: bool,
}

impl SensorReadings {
    pub fn force_norm(&self) -> f64 {
        norm3(self.ft_force)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub vector: [f64; OBS_DIM],
    pub achieved_goal: [f64; 2],
    pub desired_goal: [f64; 2],
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

pub fn reset<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimState> {
    let sample_xy = |rng: &mut R| {
        [
            rng.random_range(config.spawn_min[0]..config.spawn_max[0]),
            rng.random_range(config.spawn_min[1]..config.spawn_max[1]),
        ]
    };
    let block = sample_xy(rng);
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    for _ in 0..MAX_RESET_ATTEMPTS {
        let goal = sample_xy(rng);
        if reward::goal_distance(block, goal) >= config.min_goal_distance {
            return Ok(SimState {
                gripper_pos: config.home,
                gripper_vel: [0.0; 3],
                block_pose: [block[0], block[1], yaw],
                goal,
                ft_force: [0.0; 3],
                touch: [0.0; 2],
                step_index: 0,
                estopped: false,
            });
        }
    }
    Err(Error::Config(format!(
        "no goal at least {} m from the block after {MAX_RESET_ATTEMPTS} draws; spawn region too small",
        config.min_goal_distance
    )))
}

/// Overlap between the gripper disc and the block square in the horizontal
/// plane.
struct BlockContact {
    overlap: f64,
    /// Unit vector from the block toward the gripper (world frame).
    outward: [f64; 2],
    /// Contact point on the block boundary (world frame).
    point: [f64; 2],
}

fn block_contact(
    gripper_xy: [f64; 2],
    block_pose: [f64; 3],
    config: &SimConfig,
) -> Option<BlockContact> {
    let h = config.block_half_extent;
    let r = config.gripper_radius;
    let yaw = block_pose[2];
    let local = rotate(
        [gripper_xy[0] - block_pose[0], gripper_xy[1] - block_pose[1]],
        -yaw,
    );

    let inside = local[0].abs() <= h && local[1].abs() <= h;
    let (overlap, outward_local, point_local) = if inside {
        // Push out through the nearest face.
        let depth_x = h - local[0].abs();
        let depth_y = h - local[1].abs();
        if depth_x <= depth_y {
            let s = if local[0] >= 0.0 { 1.0 } else { -1.0 };
            (r + depth_x, [s, 0.0], [s * h, local[1]])
        } else {
            let s = if local[1] >= 0.0 { 1.0 } else { -1.0 };
            (r + depth_y, [0.0, s], [local[0], s * h])
        }
    } else {
        let closest = [local[0].clamp(-h, h), local[1].clamp(-h, h)];
        let d = [local[0] - closest[0], local[1] - closest[1]];
        let dist = d[0].hypot(d[1]);
        if dist >= r {
            return None;
        }
        (r - dist, [d[0] / dist, d[1] / dist], closest)
    };

    let outward = rotate(outward_local, yaw);
    let p = rotate(point_local, yaw);
    Some(BlockContact {
        overlap,
        outward,
        point: [block_pose[0] + p[0], block_pose[1] + p[1]],
    })
}

/// Advances the simulation by one displacement-controlled step.
pub fn step(
    state: &SimState,
    config: &SimConfig,
    displacement: [f64; 3],
) -> Result<(SimState, SensorReadings)> {
    if state.estopped {
        return Err(Error::Contract(
            "cannot step an emergency-stopped episode".into(),
        ));
    }
    if state.step_index >= config.max_steps {
        return Err(Error::Contract(format!(
            "episode already ran its {} steps",
            config.max_steps
        )));
    }
    if displacement.iter().any(|d| !d.is_finite()) {
        return Err(Error::Contract(format!(
            "non-finite displacement {displacement:?}"
        )));
    }

    let mut next = state.clone();
    let mut pos = [0.0; 3];
    for i in 0..3 {
        pos[i] = (state.gripper_pos[i] + displacement[i])
            .clamp(config.workspace_min[i], config.workspace_max[i]);
        next.gripper_vel[i] = (pos[i] - state.gripper_pos[i]) / config.dt;
    }
    next.gripper_pos = pos;

    // Table: soft contact, the fingertip may sink in up to its radius.
    let table_force = if pos[2] - config.gripper_radius < 0.0 {
        config.k_table * (config.gripper_radius - pos[2])
    } else {
        0.0
    };

    let mut ft = [0.0, 0.0, table_force];
    let mut touch = [0.0; 2];
    let mut block_moved = false;

    if pos[2] < config.block_height() {
        if let Some(contact) = block_contact([pos[0], pos[1]], state.block_pose, config) {
            let force = config.k_block * contact.overlap;
            touch = [force, force];
            ft[0] = contact.outward[0] * force;
            ft[1] = contact.outward[1] * force;
            if force > config.friction_resistance() {
                let shift = [
                    -contact.outward[0] * contact.overlap,
                    -contact.outward[1] * contact.overlap,
                ];
                let arm = [
                    contact.point[0] - state.block_pose[0],
                    contact.point[1] - state.block_pose[1],
                ];
                let yaw = state.block_pose[2] + config.rotation_gain * cross2(arm, shift);
                next.block_pose = [
                    state.block_pose[0] + shift[0],
                    state.block_pose[1] + shift[1],
                    yaw.rem_euclid(std::f64::consts::TAU),
                ];
                block_moved = true;
            }
        }
    }

    next.ft_force = ft;
    next.touch = touch;
    next.step_index += 1;
    let readings = SensorReadings {
        ft_force: ft,
        touch,
        table_force,
        block_moved,
    };
    Ok((next, readings))
}

/// Tactile-gated block pose: while the fingertips feel nothing the block
/// cannot have moved, so the previous estimate is kept.
pub fn filtered_block_pose(
    previous_estimate: Option<[f64; 3]>,
    measured: [f64; 3],
    touch_indicator: f64,
) -> [f64; 3] {
    match previous_estimate {
        Some(prev) if touch_indicator == 0.0 => prev,
        _ => measured,
    }
}

/// Running pose estimate carried across the steps of one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseEstimator {
    estimate: Option<[f64; 3]>,
}

impl PoseEstimator {
    pub fn clear(&mut self) {
        self.estimate = None;
    }

    pub fn update(&mut self, measured: [f64; 3], touch_indicator: f64) -> [f64; 3] {
        let pose = filtered_block_pose(self.estimate, measured, touch_indicator);
        self.estimate = Some(pose);
        pose
    }
}

pub fn observe<R: Rng + ?Sized>(
    state: &SimState,
    config: &SimConfig,
    rng: &mut R,
    estimator: &mut PoseEstimator,
) -> Observation {
    let icfg = config.indicator_config();
    let i_ft = reward::indicator_ft(state.ft_force, &icfg);
    let i_touch = reward::indicator_touch(state.touch, &icfg);

    let block = if config.pose_noise_std > 0.0 {
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let measured = [
            state.block_pose[0] + config.pose_noise_std * nx,
            state.block_pose[1] + config.pose_noise_std * ny,
            state.block_pose[2],
        ];
        if config.pose_filter {
            estimator.update(measured, i_touch)
        } else {
            measured
        }
    } else {
        state.block_pose
    };

    let g = state.gripper_pos;
    let mut v = [0.0; OBS_DIM];
    v[slot::GRIPPER_POS..slot::GRIPPER_POS + 3].copy_from_slice(&g);
    v[slot::GRIPPER_VEL..slot::GRIPPER_VEL + 3].copy_from_slice(&state.gripper_vel);
    v[slot::BLOCK_POSE..slot::BLOCK_POSE + 3].copy_from_slice(&block);
    v[slot::RELATIVE] = block[0] - g[0];
    v[slot::RELATIVE + 1] = block[1] - g[1];
    v[slot::RELATIVE + 2] = g[2];
    v[slot::I_FT] = i_ft;
    // Both fingertips share one contact, so both slots carry the same bit.
    v[slot::TOUCH] = i_touch;
    v[slot::TOUCH + 1] = i_touch;
    let achieved = [block[0], block[1]];
    v[slot::GOAL_DISTANCE] = reward::goal_distance(achieved, state.goal);

    Observation {
        vector: v,
        achieved_goal: achieved,
        desired_goal: state.goal,
    }
}

/// Rewrites the goal-dependent slot of an observation vector for a new goal.
pub fn relabel_observation(vector: &mut [f64; OBS_DIM], goal: [f64; 2]) {
    let block = [vector[slot::BLOCK_POSE], vector[slot::BLOCK_POSE + 1]];
    vector[slot::GOAL_DISTANCE] = reward::goal_distance(block, goal);
}

pub fn is_success(achieved: [f64; 2], goal: [f64; 2], config: &SimConfig) -> bool {
    reward::goal_distance(achieved, goal) <= config.success_radius
}

/// A seeded environment: state, its random stream, and the pose estimator.
#[derive(Clone, Debug)]
pub struct PushEnv {
    config: SimConfig,
    state: SimState,
    rng: ChaCha8Rng,
    estimator: PoseEstimator,
}

impl PushEnv {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(config: SimConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let state = reset(&config, &mut rng)?;
        Ok(Self {
            config,
            state,
            rng,
            estimator: PoseEstimator::default(),
        })
    }

    /// Starts a new episode and returns its first observation.
    pub fn reset(&mut self) -> Result<Observation> {
        self.state = reset(&self.config, &mut self.rng)?;
        self.estimator.clear();
        Ok(self.observe())
    }

    /// Observation of the current state. Draws pose noise, so call it once
    /// per step.
    pub fn observe(&mut self) -> Observation {
        observe(
            &self.state,
            &self.config,
            &mut self.rng,
            &mut self.estimator,
        )
    }

    pub fn step(&mut self, displacement: [f64; 3]) -> Result<(Observation, SensorReadings)> {
        let (next, readings) = step(&self.state, &self.config, displacement)?;
        self.state = next;
        Ok((self.observe(), readings))
    }

    /// Marks the episode as emergency-stopped; further steps are refused.
    pub fn halt(&mut self) {
        self.state.estopped = true;
    }

    pub fn is_done(&self) -> bool {
        self.state.estopped || self.state.step_index >= self.config.max_steps
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
        self.estimator.clear();
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn true_achieved_goal(&self) -> [f64; 2] {
        self.state.block_xy()
    }

    pub fn success(&self) -> bool {
        is_success(self.state.block_xy(), self.state.goal, &self.config)
    }
}
