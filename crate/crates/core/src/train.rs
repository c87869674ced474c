//! Rollouts, training loop, evaluation protocol and CSV logging.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{policy_action, select_action, Agent, UpdateStats};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::shaped_reward;
use crate::safety::{estop_check, SafetyConfig};
use crate::sim::{Observation, PushEnv};

pub const CSV_HEADER: &str = "episode,success_rate,mean_reward,collisions,mean_max_force,wall_time";

/// Added to the run seed to derive evaluation episodes, keeping them apart
/// from the training stream.
pub const EVAL_SEED_OFFSET: u64 = 0x5EED_0000_0000;

/// Random streams carved from one run seed.
mod stream {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const REPLAY: u64 = 4;
}

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]>;
}

/// Noise-free actor.
pub struct ActorPolicy<'a>(pub &'a Mlp);

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]> {
        policy_action(self.0, &obs.vector, obs.desired_goal)
    }
}

/// Actor plus Gaussian exploration noise.
pub struct ExploringPolicy<'a> {
    pub actor: &'a Mlp,
    pub sigma: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Policy for ExploringPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<[f64; 3]> {
        select_action(
            self.actor,
            &obs.vector,
            obs.desired_goal,
            self.sigma,
            self.rng,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    /// Block within the success radius at the end and no collision.
    pub success: bool,
    /// Some reading reached the emergency-stop force.
    pub collided: bool,
    /// The episode was halted by the emergency stop.
    pub estopped: bool,
    pub total_reward: f64,
    pub max_force: f64,
    pub transitions: Vec<Transition>,
    /// Displacement commanded at every executed step.
    pub displacements: Vec<[f64; 3]>,
}

/// Runs one episode from a fresh reset of `env`.
///
/// Each step: policy action, safety post-processing, simulator step, reward
/// from the resulting readings, then the emergency-stop check.
pub fn run_episode(
    env: &mut PushEnv,
    policy: &mut dyn Policy,
    config: &TrainConfig,
) -> Result<EpisodeOutcome> {
    let safety: &SafetyConfig = &config.safety;
    let mut obs = env.reset()?;
    let goal = obs.desired_goal;
    let mut achieved = env.true_achieved_goal();
    let mut transitions = Vec::with_capacity(config.sim.max_steps);
    let mut displacements = Vec::with_capacity(config.sim.max_steps);
    let mut collided = false;
    let mut estopped = false;
    let mut total_reward = 0.0;
    let mut max_force: f64 = 0.0;

    while !env.is_done() {
        let action = policy.act(&obs)?;
        let displacement = safety.process(action, env.state().ft_force, config.sim.dt);
        let (next_obs, readings) = env.step(displacement)?;
        displacements.push(displacement);

        let next_achieved = env.true_achieved_goal();
        let reward = shaped_reward(
            config.reward.variant,
            next_achieved,
            goal,
            readings.ft_force,
            readings.touch,
            &config.reward,
        );
        let hit = estop_check(readings.ft_force, safety.estop_force_threshold);
        let halt = hit && safety.estop_enabled;
        collided |= hit;
        total_reward += reward;
        max_force = max_force.max(readings.force_norm());

        transitions.push(Transition {
            observation: obs.vector,
            next_observation: next_obs.vector,
            action,
            goal,
            achieved_goal: achieved,
            next_achieved_goal: next_achieved,
            ft_force: readings.ft_force,
            touch: readings.touch,
            reward,
            terminal: halt,
        });

        if halt {
            env.halt();
            estopped = true;
        }
        obs = next_obs;
        achieved = next_achieved;
    }

    Ok(EpisodeOutcome {
        success: env.success() && !collided,
        collided,
        estopped,
        total_reward,
        max_force,
        transitions,
        displacements,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    /// Episodes with at least one emergency-stop-level reading.
    pub collision_count: usize,
    pub mean_reward: f64,
    pub mean_max_force: f64,
}

/// Runs `config.eval_episodes` episodes; episode `i` is reset from
/// stream `i` of `seed`, so different policies face the same episodes.
pub fn evaluate(policy: &mut dyn Policy, config: &TrainConfig, seed: u64) -> Result<EvalResult> {
    let n = config.eval_episodes;
    let mut successes = 0;
    let mut collisions = 0;
    let mut reward = 0.0;
    let mut force = 0.0;
    for i in 0..n {
        let mut env = PushEnv::with_rng(config.sim.clone(), seeded_stream(seed, i as u64))?;
        let out = run_episode(&mut env, policy, config)?;
        successes += usize::from(out.success);
        collisions += usize::from(out.collided);
        reward += out.total_reward;
        force += out.max_force;
    }
    Ok(EvalResult {
        success_rate: successes as f64 / n as f64,
        collision_count: collisions,
        mean_reward: reward / n as f64,
        mean_max_force: force / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub episode: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub collisions: usize,
    pub mean_max_force: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EvalRow>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.episode,
                r.success_rate,
                r.mean_reward,
                r.collisions,
                r.mean_max_force,
                r.wall_time
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn last(&self) -> Option<&EvalRow> {
        self.rows.last()
    }
}

pub fn emit_csv(log: &RunLog, path: &Path) -> Result<()> {
    fs::write(path, log.to_csv())?;
    Ok(())
}

/// Per-episode training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub estopped: bool,
    pub mean_critic_loss: f64,
    pub mean_q: f64,
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer {
    config: TrainConfig,
    agent: Agent,
    buffer: ReplayBuffer,
    env: PushEnv,
    noise_rng: ChaCha8Rng,
    episodes_done: usize,
    log: RunLog,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let agent = Agent::new(
            config.agent.clone(),
            &mut seeded_stream(config.seed, stream::INIT),
        )?;
        let buffer = ReplayBuffer::with_rng(
            config.buffer_capacity,
            seeded_stream(config.seed, stream::REPLAY),
        );
        let env = PushEnv::with_rng(config.sim.clone(), seeded_stream(config.seed, stream::ENV))?;
        Ok(Self {
            noise_rng: seeded_stream(config.seed, stream::NOISE),
            config,
            agent,
            buffer,
            env,
            episodes_done: 0,
            log: RunLog::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn into_agent(self) -> Agent {
        self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn is_finished(&self) -> bool {
        self.episodes_done >= self.config.episodes
    }

    /// One exploration episode, its storage, and the optimization steps.
    pub fn train_episode(&mut self) -> Result<EpisodeStats> {
        let outcome = {
            let mut policy = ExploringPolicy {
                actor: &self.agent.actor,
                sigma: self.config.agent.noise_std,
                rng: &mut self.noise_rng,
            };
            run_episode(&mut self.env, &mut policy, &self.config)?
        };
        let steps = outcome.transitions.len();
        self.buffer.store_episode(outcome.transitions)?;

        let mut loss = 0.0;
        let mut q = 0.0;
        let updates = self.config.agent.updates_per_episode;
        for _ in 0..updates {
            let batch: Vec<Transition> = self
                .buffer
                .sample_batch(
                    self.config.agent.batch_size,
                    self.config.her_k,
                    self.config.her_strategy,
                    &self.config.reward,
                )?
                .into_iter()
                .map(|s| s.transition)
                .collect();
            let UpdateStats {
                critic_loss,
                mean_q,
            } = self.agent.train_step(&batch)?;
            if !(critic_loss.is_finite() && mean_q.is_finite()) {
                return Err(Error::Contract(format!(
                    "training diverged at episode {}: loss {critic_loss}, mean Q {mean_q}",
                    self.episodes_done + 1
                )));
            }
            loss += critic_loss;
            q += mean_q;
        }
        self.episodes_done += 1;
        let denom = updates.max(1) as f64;
        Ok(EpisodeStats {
            episode: self.episodes_done,
            steps,
            total_reward: outcome.total_reward,
            estopped: outcome.estopped,
            mean_critic_loss: loss / denom,
            mean_q: q / denom,
        })
    }

    /// Evaluates the current actor and appends a log row.
    pub fn evaluate_now(&mut self) -> Result<&EvalRow> {
        let eval_seed = self.config.seed.wrapping_add(EVAL_SEED_OFFSET);
        let result = evaluate(&mut ActorPolicy(&self.agent.actor), &self.config, eval_seed)?;
        let wall_time = if self.config.wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.log.rows.push(EvalRow {
            episode: self.episodes_done,
            success_rate: result.success_rate,
            mean_reward: result.mean_reward,
            collisions: result.collision_count,
            mean_max_force: result.mean_max_force,
            wall_time,
        });
        Ok(self.log.rows.last().expect("just pushed"))
    }

    /// Trains one episode and evaluates when the schedule says so. Returns the
    /// new log row, if any.
    pub fn advance(&mut self) -> Result<(EpisodeStats, Option<EvalRow>)> {
        let stats = self.train_episode()?;
        let due = self.episodes_done.is_multiple_of(self.config.eval_every) || self.is_finished();
        let row = if due {
            Some(self.evaluate_now()?.clone())
        } else {
            None
        };
        Ok((stats, row))
    }
}

/// Runs the whole schedule. `on_row` sees the log after each evaluation and
/// may abort the run by returning an error.
pub fn train_with(
    config: &TrainConfig,
    mut on_row: impl FnMut(&RunLog) -> Result<()>,
) -> Result<(RunLog, Agent)> {
    let mut trainer = Trainer::new(config.clone())?;
    while !trainer.is_finished() {
        let (_, row) = trainer.advance()?;
        if row.is_some() {
            on_row(trainer.log())?;
        }
    }
    let log = trainer.log().clone();
    Ok((log, trainer.into_agent()))
}

pub fn train(config: &TrainConfig) -> Result<(RunLog, Agent)> {
    train_with(config, |_| Ok(()))
}

/// Runs `jobs` on up to `available_parallelism` threads, preserving order.
pub fn parallel_map<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    if workers <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().expect("job queue").next();
                let Some((i, job)) = next else { break };
                let r = f(job);
                results.lock().expect("results").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}
