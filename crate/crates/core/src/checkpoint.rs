//! Binary agent checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     4 bytes  "FSRL"
//! version   u8       1
//! 4 x network        actor, critic, actor target, critic target
//!     layers  u32          number of weight layers L
//!     dims    (L+1) x u32
//!     params  f64 ...      per layer: weights (out x in, row-major), biases
//! 2 x adam state     actor optimizer, critic optimizer
//!     steps   u64
//!     m       network block (same layout as above)
//!     v       network block
//! config    u64      configuration hash
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::agent::{Agent, AgentHyper};
use crate::nn::{param_count, Activation, AdamState, Mlp};

pub const MAGIC: &[u8; 4] = b"FSRL";
pub const VERSION: u8 = 1;

const MAX_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {VERSION})")]
    UnsupportedVersion { found: u8 },
    #[error("checkpoint truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a checkpoint holds, independent of hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, config_hash: u64) -> Self {
        Self {
            actor: agent.actor.clone(),
            critic: agent.critic.clone(),
            actor_target: agent.actor_target.clone(),
            critic_target: agent.critic_target.clone(),
            actor_opt: agent.actor_opt.clone(),
            critic_opt: agent.critic_opt.clone(),
            config_hash,
        }
    }

    /// Rebuilds an agent, taking optimizer settings from `hyper`.
    pub fn into_agent(self, hyper: AgentHyper) -> Agent {
        let mut actor_opt = self.actor_opt;
        actor_opt.learning_rate = hyper.actor_lr;
        let mut critic_opt = self.critic_opt;
        critic_opt.learning_rate = hyper.critic_lr;
        Agent {
            hyper,
            actor: self.actor,
            critic: self.critic,
            actor_target: self.actor_target,
            critic_target: self.critic_target,
            actor_opt,
            critic_opt,
        }
    }
}

fn put_block(out: &mut Vec<u8>, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&((dims.len() - 1) as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_adam(out: &mut Vec<u8>, dims: &[usize], adam: &AdamState) {
    out.extend_from_slice(&adam.step_count.to_le_bytes());
    put_block(out, dims, &adam.first_moment);
    put_block(out, dims, &adam.second_moment);
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for net in [
        &ckpt.actor,
        &ckpt.critic,
        &ckpt.actor_target,
        &ckpt.critic_target,
    ] {
        put_block(&mut out, net.dims(), net.params());
    }
    put_adam(&mut out, ckpt.actor.dims(), &ckpt.actor_opt);
    put_adam(&mut out, ckpt.critic.dims(), &ckpt.critic_opt);
    out.extend_from_slice(&ckpt.config_hash.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.offset,
                needed: n - available,
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn block(&mut self) -> Result<(Vec<usize>, Vec<f64>), CheckpointError> {
        let layers = self.u32()?;
        if layers == 0 || layers > MAX_LAYERS {
            return Err(CheckpointError::Malformed(format!(
                "implausible layer count {layers}"
            )));
        }
        let mut dims = Vec::with_capacity(layers as usize + 1);
        for _ in 0..=layers {
            let d = self.u32()?;
            if d == 0 || d > MAX_WIDTH {
                return Err(CheckpointError::Malformed(format!(
                    "implausible layer width {d}"
                )));
            }
            dims.push(d as usize);
        }
        let count = param_count(&dims);
        // Size check before allocating anything proportional to the count.
        let raw = self.take(count * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((dims, values))
    }

    fn network(&mut self, output: Activation, what: &str) -> Result<Mlp, CheckpointError> {
        let (dims, params) = self.block()?;
        Mlp::from_params(&dims, Activation::Tanh, output, params)
            .map_err(|e| CheckpointError::Malformed(format!("{what}: {e}")))
    }

    fn adam(&mut self, net: &Mlp, what: &str) -> Result<AdamState, CheckpointError> {
        let step_count = self.u64()?;
        let mut moments = Vec::with_capacity(2);
        for _ in 0..2 {
            let (dims, values) = self.block()?;
            if dims != net.dims() {
                return Err(CheckpointError::Malformed(format!(
                    "{what} moments shaped {dims:?}, network is {:?}",
                    net.dims()
                )));
            }
            moments.push(values);
        }
        let second_moment = moments.pop().expect("two moments");
        let first_moment = moments.pop().expect("two moments");
        Ok(AdamState {
            first_moment,
            second_moment,
            step_count,
            ..AdamState::new(0, 0.0)
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, offset: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.take(MAGIC.len())?;
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let actor = r.network(Activation::Tanh, "actor")?;
    let critic = r.network(Activation::Identity, "critic")?;
    let actor_target = r.network(Activation::Tanh, "actor target")?;
    let critic_target = r.network(Activation::Identity, "critic target")?;
    if !actor.same_architecture(&actor_target) || !critic.same_architecture(&critic_target) {
        return Err(CheckpointError::Malformed(
            "target networks differ from online networks".into(),
        ));
    }
    let actor_opt = r.adam(&actor, "actor optimizer")?;
    let critic_opt = r.adam(&critic, "critic optimizer")?;
    let config_hash = r.u64()?;
    if r.offset != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.offset
        )));
    }
    Ok(Checkpoint {
        actor,
        critic,
        actor_target,
        critic_target,
        actor_opt,
        critic_opt,
        config_hash,
    })
}

pub fn save_checkpoint(
    path: &Path,
    agent: &Agent,
    config_hash: u64,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(&Checkpoint::from_agent(agent, config_hash)))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}
