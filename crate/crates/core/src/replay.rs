//! Episode-grouped replay storage with hindsight goal relabeling.
//!
//! Relabeling happens at sampling time. Each transition keeps its raw sensor
//! readings, so the reward under a substituted goal is recomputed exactly
//! without touching the simulator.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reward::{shaped_reward, RewardConfig};
use crate::sim::{relabel_observation, OBS_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: [f64; OBS_DIM],
    pub next_observation: [f64; OBS_DIM],
    pub action: [f64; 3],
    pub goal: [f64; 2],
    pub achieved_goal: [f64; 2],
    pub next_achieved_goal: [f64; 2],
    /// Readings produced by this step, N.
    pub ft_force: [f64; 3],
    pub touch: [f64; 2],
    pub reward: f64,
    /// Set only when the step triggered an emergency stop.
    pub terminal: bool,
}

impl Transition {
    /// The reward this transition would earn under `goal`.
    pub fn reward_for(&self, goal: [f64; 2], cfg: &RewardConfig) -> f64 {
        shaped_reward(
            cfg.variant,
            self.next_achieved_goal,
            goal,
            self.ft_force,
            self.touch,
            cfg,
        )
    }

    pub fn with_goal(&self, goal: [f64; 2], cfg: &RewardConfig) -> Transition {
        let mut t = self.clone();
        t.goal = goal;
        relabel_observation(&mut t.observation, goal);
        relabel_observation(&mut t.next_observation, goal);
        t.reward = self.reward_for(goal, cfg);
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HerStrategy {
    /// Goal taken from the episode's last achieved state.
    Final,
    /// Goal taken from a uniformly drawn step at or after the replayed one.
    Future,
}

impl fmt::Display for HerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HerStrategy::Final => "final",
            HerStrategy::Future => "future",
        })
    }
}

impl FromStr for HerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "final" => Ok(HerStrategy::Final),
            "future" => Ok(HerStrategy::Future),
            other => Err(Error::Config(format!(
                "unknown HER strategy {other:?} (expected final or future)"
            ))),
        }
    }
}

/// Index of the step whose achieved goal becomes the substitute goal.
pub fn relabel_source_index<R: Rng + ?Sized>(
    len: usize,
    t: usize,
    strategy: HerStrategy,
    rng: &mut R,
) -> usize {
    match strategy {
        HerStrategy::Final => len - 1,
        HerStrategy::Future => rng.random_range(t..len),
    }
}

pub fn her_relabel<R: Rng + ?Sized>(
    episode: &[Transition],
    t: usize,
    strategy: HerStrategy,
    rng: &mut R,
    cfg: &RewardConfig,
) -> Result<Transition> {
    if t >= episode.len() {
        return Err(Error::Contract(format!(
            "relabel step {t} outside episode of length {}",
            episode.len()
        )));
    }
    let source = relabel_source_index(episode.len(), t, strategy, rng);
    Ok(episode[t].with_goal(episode[source].next_achieved_goal, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub transition: Transition,
    pub relabeled: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Vec<Transition>>,
    /// First global transition index of each stored episode.
    starts: Vec<usize>,
    size: usize,
    rng: ChaCha8Rng,
}

fn check_episode(episode: &[Transition]) -> Result<()> {
    let first = episode
        .first()
        .ok_or_else(|| Error::Contract("cannot store an empty episode".into()))?;
    for (t, pair) in episode.windows(2).enumerate() {
        if pair[0].next_observation != pair[1].observation {
            return Err(Error::Contract(format!(
                "episode breaks observation chaining between steps {t} and {}",
                t + 1
            )));
        }
        if pair[0].next_achieved_goal != pair[1].achieved_goal {
            return Err(Error::Contract(format!(
                "episode breaks achieved-goal chaining between steps {t} and {}",
                t + 1
            )));
        }
        if pair[1].goal != first.goal {
            return Err(Error::Contract(format!(
                "goal changes inside the episode at step {}",
                t + 1
            )));
        }
    }
    if episode[..episode.len() - 1].iter().any(|tr| tr.terminal) {
        return Err(Error::Contract(
            "terminal transition before the end of the episode".into(),
        ));
    }
    Ok(())
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self {
            capacity,
            episodes: VecDeque::new(),
            starts: Vec::new(),
            size: 0,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[Transition]> {
        self.episodes.iter().map(Vec::as_slice)
    }

    /// Transition by global index, oldest first.
    pub fn get(&self, index: usize) -> Option<&Transition> {
        if index >= self.size {
            return None;
        }
        let (e, t) = self.locate(index);
        Some(&self.episodes[e][t])
    }

    fn locate(&self, index: usize) -> (usize, usize) {
        let e = self.starts.partition_point(|&s| s <= index) - 1;
        (e, index - self.starts[e])
    }

    pub fn store_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        check_episode(&episode)?;
        if episode.len() > self.capacity {
            return Err(Error::Contract(format!(
                "episode of {} transitions exceeds buffer capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        self.size += episode.len();
        self.episodes.push_back(episode);
        while self.size > self.capacity {
            let old = self
                .episodes
                .pop_front()
                .expect("size > 0 implies an episode");
            self.size -= old.len();
        }
        self.starts.clear();
        let mut acc = 0;
        for ep in &self.episodes {
            self.starts.push(acc);
            acc += ep.len();
        }
        Ok(())
    }

    /// Draws `batch_size` transitions uniformly, relabeling each with
    /// probability `relabel_probability`.
    pub fn sample_batch(
        &mut self,
        batch_size: usize,
        relabel_probability: f64,
        strategy: HerStrategy,
        cfg: &RewardConfig,
    ) -> Result<Vec<Sampled>> {
        if self.is_empty() {
            return Err(Error::Contract(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        if !(0.0..=1.0).contains(&relabel_probability) {
            return Err(Error::Config(format!(
                "relabel probability {relabel_probability} outside [0, 1]"
            )));
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let index = self.rng.random_range(0..self.size);
            let (e, t) = self.locate(index);
            let episode = &self.episodes[e];
            let relabel = self.rng.random::<f64>() < relabel_probability;
            let transition = if relabel {
                her_relabel(episode, t, strategy, &mut self.rng, cfg)?
            } else {
                episode[t].clone()
            };
            out.push(Sampled {
                transition,
                relabeled: relabel,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::reward::{goal_distance, RewardVariant};
    use crate::sim::slot;

    /// A chained synthetic episode whose block drifts along +x.
    pub(crate) fn synthetic_episode(
        len: usize,
        goal: [f64; 2],
        cfg: &RewardConfig,
        tag: f64,
    ) -> Vec<Transition> {
        let block = |t: usize| [0.1 + 0.001 * t as f64, 0.2];
        let obs = |t: usize| {
            let mut o = [0.0; OBS_DIM];
            o[0] = tag;
            o[1] = t as f64;
            o[slot::BLOCK_POSE] = block(t)[0];
            o[slot::BLOCK_POSE + 1] = block(t)[1];
            o[slot::GOAL_DISTANCE] = goal_distance(block(t), goal);
            o
        };
        (0..len)
            .map(|t| {
                let ft_force = [if t % 7 == 0 { 60.0 } else { 0.0 }, 0.0, 0.0];
                let touch = [if t % 3 == 0 { 0.5 } else { 0.0 }; 2];
                let next_achieved_goal = block(t + 1);
                Transition {
                    observation: obs(t),
                    next_observation: obs(t + 1),
                    action: [0.1, 0.0, 0.0],
                    goal,
                    achieved_goal: block(t),
                    next_achieved_goal,
                    ft_force,
                    touch,
                    reward: shaped_reward(
                        cfg.variant,
                        next_achieved_goal,
                        goal,
                        ft_force,
                        touch,
                        cfg,
                    ),
                    terminal: false,
                }
            })
            .collect()
    }

    #[test]
    fn store_and_retrieve() {
        let cfg = RewardConfig::default();
        let ep = synthetic_episode(200, [0.5, 0.5], &cfg, 0.0);
        let mut buf = ReplayBuffer::new(100_000, 0);
        buf.store_episode(ep.clone()).unwrap();
        assert_eq!(buf.len(), 200);
        for (i, tr) in ep.iter().enumerate() {
            assert_eq!(buf.get(i).unwrap(), tr);
        }
        assert!(buf.get(200).is_none());
    }

    #[test]
    fn eviction_drops_oldest_episode() {
        let cfg = RewardConfig::default();
        let mut buf = ReplayBuffer::new(1000, 0);
        for e in 0..5 {
            buf.store_episode(synthetic_episode(200, [0.5, 0.5], &cfg, e as f64))
                .unwrap();
        }
        assert_eq!(buf.len(), 1000);
        buf.store_episode(synthetic_episode(200, [0.5, 0.5], &cfg, 5.0))
            .unwrap();
        assert!(buf.len() <= 1000);
        let tags: Vec<f64> = buf.episodes().map(|ep| ep[0].observation[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn broken_chaining_is_rejected() {
        let cfg = RewardConfig::default();
        let mut ep = synthetic_episode(10, [0.5, 0.5], &cfg, 0.0);
        ep[4].next_observation[0] = 99.0;
        let mut buf = ReplayBuffer::new(100, 0);
        assert!(matches!(buf.store_episode(ep), Err(Error::Contract(_))));
        assert!(matches!(
            buf.store_episode(Vec::new()),
            Err(Error::Contract(_))
        ));
        assert!(buf.is_empty());
    }

    #[test]
    fn final_strategy_makes_last_step_successful() {
        let cfg = RewardConfig {
            variant: RewardVariant::R4,
            ..Default::default()
        };
        let ep = synthetic_episode(200, [0.5, 0.5], &cfg, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tr = her_relabel(&ep, 199, HerStrategy::Final, &mut rng, &cfg).unwrap();
        assert_eq!(tr.goal, ep[199].next_achieved_goal);
        assert_eq!(tr.reward, 0.0);
        assert_eq!(tr.next_observation[slot::GOAL_DISTANCE], 0.0);
    }

    #[test]
    fn relabel_far_goal_under_r4_is_minus_one() {
        let cfg = RewardConfig {
            variant: RewardVariant::R4,
            ..Default::default()
        };
        let ep = synthetic_episode(200, [0.5, 0.5], &cfg, 0.0);
        // Final achieved x = 0.3; the transition at t = 0 reaches x = 0.101.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tr = her_relabel(&ep[..101], 0, HerStrategy::Final, &mut rng, &cfg).unwrap();
        assert!((goal_distance(tr.next_achieved_goal, tr.goal) - 0.1).abs() < 1e-12);
        assert_eq!(tr.reward, -1.0);
    }

    #[test]
    fn future_indices_are_uniform_over_the_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; 200];
        for _ in 0..10_000 {
            counts[relabel_source_index(200, 50, HerStrategy::Future, &mut rng)] += 1;
        }
        assert!(counts[..50].iter().all(|&c| c == 0));
        // 150 bins, expected 66.7 each; chi-square with 149 dof, p = 0.001
        // critical value 205.
        let expected = 10_000.0 / 150.0;
        let chi2: f64 = counts[50..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 205.0, "chi2 = {chi2}");
    }

    #[test]
    fn relabel_probability_extremes_and_frequency() {
        let cfg = RewardConfig::default();
        let mut buf = ReplayBuffer::new(10_000, 3);
        for e in 0..4 {
            buf.store_episode(synthetic_episode(
                200,
                [0.45, 0.4 + 0.01 * e as f64],
                &cfg,
                e as f64,
            ))
            .unwrap();
        }
        let stored_goal = |s: &Sampled| [0.45, 0.4 + 0.01 * s.transition.observation[0]];

        let batch = buf
            .sample_batch(500, 0.0, HerStrategy::Future, &cfg)
            .unwrap();
        assert!(batch
            .iter()
            .all(|s| !s.relabeled && s.transition.goal == stored_goal(s)));

        let batch = buf
            .sample_batch(500, 1.0, HerStrategy::Final, &cfg)
            .unwrap();
        assert!(batch.iter().all(|s| s.relabeled));

        let batch = buf
            .sample_batch(10_000, 0.8, HerStrategy::Future, &cfg)
            .unwrap();
        let frac = batch.iter().filter(|s| s.relabeled).count() as f64 / 10_000.0;
        assert!((frac - 0.8).abs() <= 0.02, "fraction {frac}");
    }

    #[test]
    fn sampling_is_deterministic_and_fails_when_empty() {
        let cfg = RewardConfig::default();
        let mut a = ReplayBuffer::new(1000, 11);
        assert!(a.sample_batch(1, 0.5, HerStrategy::Final, &cfg).is_err());
        a.store_episode(synthetic_episode(50, [0.5, 0.5], &cfg, 0.0))
            .unwrap();
        let mut b = a.clone();
        assert_eq!(
            a.sample_batch(64, 0.8, HerStrategy::Future, &cfg).unwrap(),
            b.sample_batch(64, 0.8, HerStrategy::Future, &cfg).unwrap()
        );
    }
}
