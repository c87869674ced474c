//! Acceptance suite: one test per criterion, so the harness prints exactly
//! one pass/fail line for each. Run with `--nocapture` to see the measured
//! figures behind every verdict.

mod common;

use std::time::{Duration, Instant};

use common::*;
use fsrl::agent::{actor_objective_and_grad, critic_loss_and_grad};
use fsrl::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
use fsrl::config::TrainConfig;
use fsrl::replay::{HerStrategy, ReplayBuffer};
use fsrl::reward::{indicator_ft, shaped_reward, shaping_terms, RewardConfig, RewardVariant};
use fsrl::scripted::{RandomPolicy, ScriptedPusher};
use fsrl::sim::{slot, PushEnv};
use fsrl::train::{emit_csv, evaluate, parallel_map, run_episode, train};
use rand::Rng;

fn report(criterion: u32, started: Instant, detail: impl std::fmt::Display) {
    eprintln!(
        "criterion {criterion}: {detail} [{:.1} s]",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let (h, rel, abs) = (1e-6, 1e-5, 1e-8);
    let mut rng = rng(101);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let batch: Vec<_> = (0..rng.random_range(1..=6))
            .map(|_| random_transition(&mut rng))
            .collect();
        let y: Vec<f64> = batch.iter().map(|_| rng.random_range(-3.0..3.0)).collect();

        let critic = toy_critic(&mut rng);
        let (_, analytic) = critic_loss_and_grad(&critic, &batch, &y).unwrap();
        let mut probe = critic.clone();
        let mut params = critic.params().to_vec();
        let numeric = central_differences(&mut params, h, |p| {
            probe.params_mut().copy_from_slice(p);
            critic_loss_and_grad(&probe, &batch, &y).unwrap().0
        });
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(
                close(*a, *n, rel, abs),
                "critic instance {instance} param {i}: {a} vs {n}"
            );
            worst = worst.max((a - n).abs());
        }
        checked += analytic.len();

        let actor = toy_actor(&mut rng);
        let (_, analytic) = actor_objective_and_grad(&actor, &critic, &batch).unwrap();
        let mut probe = actor.clone();
        let mut params = actor.params().to_vec();
        let numeric = central_differences(&mut params, h, |p| {
            probe.params_mut().copy_from_slice(p);
            actor_objective_and_grad(&probe, &critic, &batch).unwrap().0
        });
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(
                close(*a, *n, rel, abs),
                "actor instance {instance} param {i}: {a} vs {n}"
            );
            worst = worst.max((a - n).abs());
        }
        checked += analytic.len();
    }
    assert!(
        started.elapsed() < Duration::from_secs(30),
        "took {:?}",
        started.elapsed()
    );
    report(
        1,
        started,
        format!("{checked} partials over 50 critic + 50 actor instances, worst |diff| {worst:.2e}"),
    );
}

/// (distance m, force vector N, touch N): both sides of every threshold,
/// the exact boundaries, and all combinations of the three indicators.
const TABLE: [(f64, [f64; 3], [f64; 2]); 20] = [
    (0.0, [0.0, 0.0, 0.0], [0.0, 0.0]),
    (0.02, [0.0, 0.0, 0.0], [0.5, 0.0]),
    (0.03, [10.0, 0.0, 0.0], [0.05, 0.05]),
    (0.04, [0.0, 0.0, 0.0], [0.0, 0.0]),
    (0.0400001, [0.0, 0.0, 0.0], [0.0, 0.0]),
    (0.10, [60.0, 0.0, 0.0], [0.5, 0.0]),
    (0.10, [50.0, 0.0, 0.0], [0.0, 0.0]),
    (0.10, [49.999, 0.0, 0.0], [0.0, 0.0]),
    (0.10, [0.0, 30.0, 40.0], [0.0, 0.0]),
    (0.10, [0.0, 0.0, 0.0], [0.1, 0.0]),
    (0.10, [0.0, 0.0, 0.0], [0.0, 0.1]),
    (0.10, [0.0, 0.0, 0.0], [0.0999, 0.0999]),
    (0.02, [60.0, 0.0, 0.0], [0.0, 0.0]),
    (0.02, [60.0, 0.0, 0.0], [0.3, 0.3]),
    (0.02, [0.0, 0.0, 50.0], [0.1, 0.0]),
    (0.25, [-70.0, 10.0, 0.0], [0.0, 2.0]),
    (0.25, [0.0, 0.0, 100.0], [0.0, 0.0]),
    (0.05, [0.0, 0.0, 0.0], [0.0, 0.0]),
    (0.0, [120.0, 0.0, 0.0], [1.0, 1.0]),
    (0.6, [0.0, 0.0, 0.0], [0.2, 0.0]),
];

#[test]
fn criterion_2_reward_exactness() {
    let started = Instant::now();
    let cfg = RewardConfig::default();
    let mut cells = 0;
    for (row, (d, ft, touch)) in TABLE.iter().enumerate() {
        let achieved = [0.3, 0.3];
        let goal = [0.3 + d, 0.3];
        for v in RewardVariant::ALL {
            let got = shaped_reward(v, achieved, goal, *ft, *touch, &cfg);
            let want = oracle_reward(v.as_str(), achieved, goal, *ft, *touch);
            assert_eq!(
                got.to_bits(),
                want.to_bits(),
                "row {row} {v}: {got} vs {want}"
            );
            cells += 1;
        }
    }
    report(
        2,
        started,
        format!("{cells} table cells equal the longhand evaluation bit for bit"),
    );
}

#[test]
fn criterion_3_her_oracle() {
    let started = Instant::now();
    let config = quick_config(RewardVariant::R1, 0);
    let cfg = &config.reward;
    let mut buffer = ReplayBuffer::new(100_000, 3);
    for outcome in mixed_rollouts(&config, 8) {
        buffer.store_episode(outcome.transitions).unwrap();
    }
    assert!(
        buffer.len() >= 1000,
        "only {} stored transitions",
        buffer.len()
    );

    let mut rng = rng(303);
    for _ in 0..1000 {
        let tr = buffer
            .get(rng.random_range(0..buffer.len()))
            .unwrap()
            .clone();
        let goal = [rng.random_range(0.0..0.6), rng.random_range(0.0..0.6)];
        let relabeled = tr.with_goal(goal, cfg);
        for variant in RewardVariant::ALL {
            let before = oracle_terms(
                variant.as_str(),
                tr.next_achieved_goal,
                tr.goal,
                tr.ft_force,
                tr.touch,
            );
            let after = oracle_terms(
                variant.as_str(),
                relabeled.next_achieved_goal,
                goal,
                relabeled.ft_force,
                relabeled.touch,
            );
            assert_eq!(before.1.to_bits(), after.1.to_bits());
            assert_eq!(before.2.to_bits(), after.2.to_bits());
            let crate_before = shaping_terms(variant, tr.ft_force, tr.touch, cfg);
            let crate_after = shaping_terms(variant, relabeled.ft_force, relabeled.touch, cfg);
            assert_eq!(crate_before.0.to_bits(), crate_after.0.to_bits());
            assert_eq!(crate_before.1.to_bits(), crate_after.1.to_bits());
        }
        assert_eq!(relabeled.goal, goal);
        assert_eq!(
            relabeled.reward.to_bits(),
            oracle_for(&relabeled, RewardVariant::R1).to_bits()
        );
    }

    // Rewards on HER-sampled batches, both strategies.
    for strategy in [HerStrategy::Final, HerStrategy::Future] {
        for s in buffer.sample_batch(1000, 1.0, strategy, cfg).unwrap() {
            let t = &s.transition;
            assert_eq!(
                t.reward.to_bits(),
                oracle_for(t, RewardVariant::R1).to_bits()
            );
        }
    }

    let relabeled = buffer
        .sample_batch(10_000, 0.8, HerStrategy::Final, cfg)
        .unwrap()
        .iter()
        .filter(|s| s.relabeled)
        .count();
    let fraction = relabeled as f64 / 10_000.0;
    assert!(
        (0.78..=0.82).contains(&fraction),
        "relabel fraction {fraction}"
    );
    report(
        3,
        started,
        format!("1000 relabels + 2000 sampled rewards exact; relabel fraction {fraction}"),
    );
}

#[test]
fn criterion_4_safety_properties() {
    let started = Instant::now();
    let config = quick_config(RewardVariant::R1, 0);
    let cap = config.safety.v_max * config.sim.dt + 1e-12;
    let (mut steps, mut estops, mut episode) = (0usize, 0usize, 0u64);
    while steps < 10_000 {
        let mut env = PushEnv::new(config.sim.clone(), 4000 + episode).unwrap();
        let outcome = if episode % 3 == 0 {
            run_episode(&mut env, &mut ScriptedPusher::new(&config.sim), &config).unwrap()
        } else {
            run_episode(&mut env, &mut RandomPolicy::new(episode), &config).unwrap()
        };
        for d in &outcome.displacements {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!(n <= cap, "episode {episode}: displacement norm {n}");
        }
        assert_eq!(outcome.displacements.len(), outcome.transitions.len());
        let threshold = config.safety.estop_force_threshold;
        let trips: Vec<usize> = outcome
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let f = t.ft_force;
                (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt() >= threshold
            })
            .map(|(i, _)| i)
            .collect();
        if let Some(&first) = trips.first() {
            // Nothing executes after the tripping step, and the simulator
            // refuses any further motion.
            assert_eq!(
                first,
                outcome.transitions.len() - 1,
                "episode {episode} moved after a trip"
            );
            assert!(outcome.estopped && outcome.transitions[first].terminal);
            assert!(env.state().estopped);
            assert!(env.step([0.0, 0.0, 0.01]).is_err());
            estops += 1;
        } else {
            assert!(!outcome.estopped);
        }
        steps += outcome.transitions.len();
        episode += 1;
    }
    assert!(estops > 0, "no emergency stop exercised");

    // 5 mm of table penetration reads exactly the shaping threshold.
    let mut env = PushEnv::new(config.sim.clone(), 7).unwrap();
    env.reset().unwrap();
    let mut state = env.state().clone();
    state.gripper_pos = [0.05, 0.05, config.sim.gripper_radius];
    state.block_pose = [0.4, 0.4, 0.0];
    env.set_state(state);
    let (_, readings) = env.step([0.0, 0.0, -0.005]).unwrap();
    assert_eq!(readings.force_norm(), 50.0);
    assert_eq!(indicator_ft(readings.ft_force, &config.reward), -1.0);
    report(
        4,
        started,
        format!("{steps} steps over {episode} episodes, {estops} emergency stops, 5 mm -> 50 N"),
    );
}

#[test]
fn criterion_5_environment_solvability() {
    let started = Instant::now();
    let config = TrainConfig {
        eval_episodes: 20,
        ..Default::default()
    };
    let scripted = evaluate(&mut ScriptedPusher::new(&config.sim), &config, 5).unwrap();
    let random = evaluate(&mut RandomPolicy::new(5), &config, 5).unwrap();
    assert!(
        scripted.success_rate >= 0.8,
        "scripted {}",
        scripted.success_rate
    );
    assert!(random.success_rate <= 0.2, "random {}", random.success_rate);
    assert!(
        started.elapsed() < Duration::from_secs(10),
        "took {:?}",
        started.elapsed()
    );
    report(
        5,
        started,
        format!(
            "scripted success {}, random success {}",
            scripted.success_rate, random.success_rate
        ),
    );
}

#[test]
fn criterion_6_ablation_trend() {
    let started = Instant::now();
    let seeds = [1u64, 2, 3];
    let arms: [(&str, RewardVariant, bool); 3] = [
        ("r1 safe", RewardVariant::R1, true),
        ("r4 safe", RewardVariant::R4, true),
        ("r4 unsafe", RewardVariant::R4, false),
    ];
    let jobs: Vec<(usize, TrainConfig)> = arms
        .iter()
        .enumerate()
        .flat_map(|(a, &(_, variant, safe))| {
            seeds.iter().map(move |&seed| {
                let mut c = quick_config(variant, seed);
                c.safety.set_all(safe);
                (a, c)
            })
        })
        .collect();
    let results = parallel_map(jobs, |(a, c)| {
        let t = Instant::now();
        let (log, agent) = train(&c).unwrap();
        assert!(
            agent.is_finite(),
            "non-finite parameters in {} seed {}",
            arms[a].0,
            c.seed
        );
        for row in &log.rows {
            assert!(row.mean_reward.is_finite() && row.mean_max_force.is_finite());
        }
        (a, log.last().cloned().unwrap(), t.elapsed())
    });

    let mut success = [0.0; 3];
    let mut collisions = [0.0; 3];
    let mut elapsed = [Duration::ZERO; 3];
    for (a, row, t) in &results {
        success[*a] += row.success_rate / seeds.len() as f64;
        collisions[*a] += row.collisions as f64 / seeds.len() as f64;
        elapsed[*a] += *t;
    }
    for (a, (name, ..)) in arms.iter().enumerate() {
        eprintln!(
            "  {name:<10} final success {:.3}  collisions per 20 episodes {:.2}  ({:.0} s)",
            success[a],
            collisions[a],
            elapsed[a].as_secs_f64()
        );
        assert!(
            elapsed[a] < Duration::from_secs(15 * 60),
            "{name} took {:?}",
            elapsed[a]
        );
    }
    assert!(
        success[0] >= success[1],
        "r1 success {} < r4 success {}",
        success[0],
        success[1]
    );
    assert!(
        collisions[0] <= collisions[2],
        "r1 with safety collides more ({}) than r4 without ({})",
        collisions[0],
        collisions[2]
    );
    report(
        6,
        started,
        "success r1 >= r4 and collisions r1 safe <= r4 unsafe",
    );
}

#[test]
fn criterion_7_determinism_and_persistence() {
    let started = Instant::now();
    let mut config = quick_config(RewardVariant::R1, 11);
    config.episodes = 6;
    config.eval_every = 3;
    config.eval_episodes = 3;
    config.agent.updates_per_episode = 5;
    config.agent.batch_size = 32;

    let dir = tempfile::tempdir().unwrap();
    let (log_a, agent) = train(&config).unwrap();
    let (log_b, _) = train(&config).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    emit_csv(&log_a, &a).unwrap();
    emit_csv(&log_b, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(log_a.rows.len(), 2);

    let path = dir.path().join("agent.fsrl");
    save_checkpoint(&path, &agent, config.hash()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let original = Checkpoint::from_agent(&agent, config.hash());
    let bits = |c: &Checkpoint| -> Vec<u64> {
        [&c.actor, &c.critic, &c.actor_target, &c.critic_target]
            .iter()
            .flat_map(|n| n.params().iter().map(|p| p.to_bits()))
            .chain([&c.actor_opt, &c.critic_opt].iter().flat_map(|o| {
                o.first_moment
                    .iter()
                    .chain(&o.second_moment)
                    .map(|p| p.to_bits())
            }))
            .collect()
    };
    assert_eq!(bits(&loaded), bits(&original));
    assert_eq!(loaded.config_hash, config.hash());
    assert_eq!(encode(&loaded), std::fs::read(&path).unwrap());
    assert!(decode(&std::fs::read(&path).unwrap()).is_ok());
    report(
        7,
        started,
        format!(
            "{} identical CSV bytes; checkpoint round trip bit-exact",
            bytes.len()
        ),
    );
}

#[test]
fn criterion_8_pose_filter() {
    let started = Instant::now();
    let mut config = quick_config(RewardVariant::R1, 0);
    config.sim.pose_noise_std = 0.02;
    config.sim.pose_filter = true;
    let (mut held, mut refreshed) = (0usize, 0usize);
    for outcome in mixed_rollouts(&config, 6) {
        for tr in &outcome.transitions {
            let prev = &tr.observation[slot::BLOCK_POSE..slot::BLOCK_POSE + 3];
            let next = &tr.next_observation[slot::BLOCK_POSE..slot::BLOCK_POSE + 3];
            let touching = tr.next_observation[slot::TOUCH] != 0.0
                || tr.next_observation[slot::TOUCH + 1] != 0.0;
            if touching {
                refreshed += usize::from(prev != next);
            } else {
                assert_eq!(prev, next, "observed pose changed without touch");
                held += 1;
            }
        }
    }
    assert!(
        held > 0 && refreshed > 0,
        "held {held}, refreshed {refreshed}"
    );
    report(
        8,
        started,
        format!("pose held on {held} untouched steps, refreshed on {refreshed} touched steps"),
    );
}
