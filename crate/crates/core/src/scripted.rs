//! Hand-written reference policies: a geometric pushing controller that
//! shows the task is solvable, and a uniform-random policy as a floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::safety::ACTION_SCALE;
use crate::sim::{slot, Observation, SimConfig};
use crate::train::Policy;

/// Pushes the block face-on toward the goal.
///
/// The block slides along the normal of the face being pushed, so the
/// block-to-goal vector is worked off one face axis at a time: hover at
/// travel height to a point behind the face whose normal best matches the
/// remaining offset, drop to pushing height, push through, repeat.
#[derive(Clone, Debug)]
pub struct ScriptedPusher {
    half_extent: f64,
    radius: f64,
    block_height: f64,
    travel_z: f64,
    push_z: f64,
    standoff: f64,
    done_radius: f64,
    push_tolerance: f64,
}

impl ScriptedPusher {
    pub fn new(sim: &SimConfig) -> Self {
        Self {
            half_extent: sim.block_half_extent,
            radius: sim.gripper_radius,
            block_height: sim.block_height(),
            travel_z: sim.block_height() + 0.03,
            push_z: sim.gripper_radius + 0.015,
            standoff: 0.012,
            done_radius: 0.5 * sim.success_radius,
            push_tolerance: 0.25 * sim.success_radius,
        }
    }

    fn toward(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| ((to[i] - from[i]) / ACTION_SCALE).clamp(-1.0, 1.0))
    }

    pub fn action(&self, obs: &Observation) -> [f64; 3] {
        let v = &obs.vector;
        let g = [
            v[slot::GRIPPER_POS],
            v[slot::GRIPPER_POS + 1],
            v[slot::GRIPPER_POS + 2],
        ];
        let b = [v[slot::BLOCK_POSE], v[slot::BLOCK_POSE + 1]];
        let yaw = v[slot::BLOCK_POSE + 2];
        let goal = obs.desired_goal;
        let d = [goal[0] - b[0], goal[1] - b[1]];

        if d[0].hypot(d[1]) < self.done_radius {
            return Self::toward(g, [g[0], g[1], self.travel_z]);
        }

        let faces: Vec<([f64; 2], [f64; 2])> = (0..4)
            .map(|k| {
                let (s, c) = (yaw + k as f64 * std::f64::consts::FRAC_PI_2).sin_cos();
                ([c, s], [-s, c])
            })
            .collect();
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let rel = [g[0] - b[0], g[1] - b[1]];

        // Already behind a face that still has distance to cover: push.
        let h = self.half_extent;
        let pushing = faces
            .iter()
            .filter(|(n, t)| {
                let along = dot(rel, *n);
                let lateral = dot(rel, *t);
                dot(d, *n) > self.push_tolerance
                    && along < -h
                    && along > -(h + self.radius + 2.5 * self.standoff)
                    && lateral.abs() < 0.3 * h
                    && g[2] < self.block_height - 0.02
            })
            .max_by(|a, b| dot(d, a.0).total_cmp(&dot(d, b.0)));
        if let Some((n, t)) = pushing {
            let lateral = dot(rel, *t);
            let step = [
                g[0] + n[0] * ACTION_SCALE - t[0] * lateral,
                g[1] + n[1] * ACTION_SCALE - t[1] * lateral,
                self.push_z,
            ];
            return Self::toward(g, step);
        }

        let (n, _) = faces
            .iter()
            .max_by(|a, b| dot(d, a.0).total_cmp(&dot(d, b.0)))
            .copied()
            .expect("four faces");
        let offset = h + self.radius + self.standoff;
        let pre = [b[0] - n[0] * offset, b[1] - n[1] * offset];
        let gap = (g[0] - pre[0]).hypot(g[1] - pre[1]);
        if gap < 0.004 {
            Self::toward(g, [pre[0], pre[1], self.push_z])
        } else if g[2] < self.travel_z - 0.005 {
            Self::toward(g, [g[0], g[1], self.travel_z])
        } else {
            Self::toward(g, [pre[0], pre[1], self.travel_z])
        }
    }
}

impl Policy for ScriptedPusher {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]> {
        Ok(self.action(obs))
    }
}

/// Actions drawn uniformly from `[-1, 1]^3`.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation) -> Result<[f64; 3]> {
        Ok([0; 3].map(|_| self.rng.random_range(-1.0..=1.0)))
    }
}
