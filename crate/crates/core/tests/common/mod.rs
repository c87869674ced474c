//! Oracles and fixtures shared by the integration tests. The reward oracle
//! is written out longhand and deliberately shares no code with the crate.

#![allow(dead_code)]

use fsrl::agent::{ACTOR_INPUT, CRITIC_INPUT};
use fsrl::config::TrainConfig;
use fsrl::nn::{Activation, Mlp};
use fsrl::replay::Transition;
use fsrl::reward::RewardVariant;
use fsrl::scripted::{RandomPolicy, ScriptedPusher};
use fsrl::sim::{PushEnv, OBS_DIM};
use fsrl::train::{run_episode, EpisodeOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const C_FT: f64 = 0.2;
pub const C_TOUCH: f64 = 0.2;
pub const SIGMA_FT: f64 = 50.0;
pub const SIGMA_TOUCH: f64 = 0.1;
pub const SUCCESS_RADIUS: f64 = 0.04;

/// Sparse goal term, shaping terms and their sum, evaluated from the raw
/// readings with the table constants above.
pub fn oracle_terms(
    variant: &str,
    achieved: [f64; 2],
    goal: [f64; 2],
    ft: [f64; 3],
    touch: [f64; 2],
) -> (f64, f64, f64) {
    let dx = achieved[0] - goal[0];
    let dy = achieved[1] - goal[1];
    let dist = (dx * dx + dy * dy).sqrt();
    let r_d = if dist <= SUCCESS_RADIUS { 0.0 } else { -1.0 };
    let amplitude = (ft[0] * ft[0] + ft[1] * ft[1] + ft[2] * ft[2]).sqrt();
    let i_ft = if amplitude >= SIGMA_FT { -1.0 } else { 0.0 };
    let strongest = if touch[0] > touch[1] {
        touch[0]
    } else {
        touch[1]
    };
    let i_touch = if strongest >= SIGMA_TOUCH { 1.0 } else { 0.0 };
    let (use_ft, use_touch) = match variant {
        "r1" => (true, true),
        "r2" => (true, false),
        "r3" => (false, true),
        "r4" => (false, false),
        other => panic!("no such variant {other}"),
    };
    let r_ft = if use_ft { C_FT * i_ft } else { 0.0 };
    let r_touch = if use_touch { C_TOUCH * i_touch } else { 0.0 };
    (r_d, r_ft, r_touch)
}

pub fn oracle_reward(
    variant: &str,
    achieved: [f64; 2],
    goal: [f64; 2],
    ft: [f64; 3],
    touch: [f64; 2],
) -> f64 {
    let (r_d, r_ft, r_touch) = oracle_terms(variant, achieved, goal, ft, touch);
    r_d + r_ft + r_touch
}

pub fn oracle_for(tr: &Transition, variant: RewardVariant) -> f64 {
    oracle_reward(
        variant.as_str(),
        tr.next_achieved_goal,
        tr.goal,
        tr.ft_force,
        tr.touch,
    )
}

/// The six sums reachable under r1.
pub const R1_VALUES: [f64; 6] = [-1.2, -1.0, -0.8, -0.2, 0.0, 0.2];

/// `|a - n| <= max(rel * max(|a|, |n|), abs)`.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    (analytic - numeric).abs() <= (rel * analytic.abs().max(numeric.abs())).max(abs)
}

/// Central differences of `f` over every entry of `params`.
pub fn central_differences(
    params: &mut [f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn toy_critic(rng: &mut ChaCha8Rng) -> Mlp {
    let h1 = rng.random_range(3..=8);
    let h2 = rng.random_range(3..=8);
    Mlp::random(
        &[CRITIC_INPUT, h1, h2, 1],
        Activation::Tanh,
        Activation::Identity,
        rng,
    )
    .unwrap()
}

pub fn toy_actor(rng: &mut ChaCha8Rng) -> Mlp {
    let h1 = rng.random_range(3..=8);
    let h2 = rng.random_range(3..=8);
    Mlp::random(
        &[ACTOR_INPUT, h1, h2, 3],
        Activation::Tanh,
        Activation::Tanh,
        rng,
    )
    .unwrap()
}

/// A transition with plausible but otherwise arbitrary contents.
pub fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let mut obs = || -> [f64; OBS_DIM] { std::array::from_fn(|_| rng.random_range(0.0..0.6)) };
    let observation = obs();
    let next_observation = obs();
    Transition {
        observation,
        next_observation,
        action: std::array::from_fn(|_| rng.random_range(-1.0..=1.0)),
        goal: [rng.random_range(0.1..0.5), rng.random_range(0.1..0.5)],
        achieved_goal: [observation[6], observation[7]],
        next_achieved_goal: [next_observation[6], next_observation[7]],
        ft_force: [0.0; 3],
        touch: [0.0; 2],
        reward: -1.0,
        terminal: false,
    }
}

/// Configuration with every evaluation knob set for quick runs.
pub fn quick_config(variant: RewardVariant, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.reward.variant = variant;
    c.seed = seed;
    c
}

/// Episodes that exercise free motion, block pushing and table contact.
pub fn mixed_rollouts(config: &TrainConfig, episodes: u64) -> Vec<EpisodeOutcome> {
    (0..episodes)
        .map(|i| {
            let mut env = PushEnv::new(config.sim.clone(), 1000 + i).unwrap();
            if i % 2 == 0 {
                run_episode(&mut env, &mut ScriptedPusher::new(&config.sim), config).unwrap()
            } else {
                run_episode(&mut env, &mut RandomPolicy::new(i), config).unwrap()
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
