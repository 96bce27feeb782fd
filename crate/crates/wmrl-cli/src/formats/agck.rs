//! AGCK v1 — agent checkpoint: all six networks, the hyperparameters they
//! were trained under, the normalization statistics, and the phase tag.

use std::path::Path;

use wmrl_core::agent::{AgentCheckpoint, Hyperparams, Phase};

use crate::error::Result;
use crate::formats::bytes::{read_file, write_file, Reader, Writer};
use crate::formats::net::{read_net, write_net};
use crate::formats::wmck::{read_norm, write_norm};

const MAGIC: &[u8; 4] = b"AGCK";
const VERSION: u32 = 1;

pub fn encode(ckpt: &AgentCheckpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.u8(match ckpt.phase {
        Phase::Offline => 0,
        Phase::Online => 1,
    });
    let h = &ckpt.hyper;
    w.f64(h.discount);
    w.f64(h.polyak);
    w.f64(h.policy_noise);
    w.f64(h.noise_clip);
    w.dim(h.policy_delay);
    w.f64(h.exploration_noise);
    w.dim(h.batch_size);
    w.f64(h.bc_weight);
    w.f64(h.augment_fraction);
    w.f64(h.actor_lr);
    w.f64(h.critic_lr);
    w.dim(h.hidden.len());
    for &x in &h.hidden {
        w.dim(x);
    }
    w.u64(h.warm_start_steps as u64);
    w.u64(h.buffer_capacity as u64);
    write_norm(&mut w, &ckpt.norm_stats);
    for net in [
        &ckpt.actor,
        &ckpt.critic1,
        &ckpt.critic2,
        &ckpt.target_actor,
        &ckpt.target_critic1,
        &ckpt.target_critic2,
    ] {
        write_net(&mut w, net);
    }
    w.buf
}

pub fn save(path: &Path, ckpt: &AgentCheckpoint) -> Result<()> {
    write_file(path, &encode(ckpt))
}

pub fn load(path: &Path) -> Result<AgentCheckpoint> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported AGCK version {version}")));
    }
    let phase = match r.u8("phase")? {
        0 => Phase::Offline,
        1 => Phase::Online,
        other => return Err(r.error(format!("unknown phase tag {other}"))),
    };
    let discount = r.f64("discount")?;
    let polyak = r.f64("polyak")?;
    let policy_noise = r.f64("policy_noise")?;
    let noise_clip = r.f64("noise_clip")?;
    let policy_delay = r.dim("policy_delay")?;
    let exploration_noise = r.f64("exploration_noise")?;
    let batch_size = r.dim("batch_size")?;
    let bc_weight = r.f64("bc_weight")?;
    let augment_fraction = r.f64("augment_fraction")?;
    let actor_lr = r.f64("actor_lr")?;
    let critic_lr = r.f64("critic_lr")?;
    let hidden_len = r.dim("hidden count")?;
    let mut hidden = Vec::with_capacity(hidden_len);
    for _ in 0..hidden_len {
        hidden.push(r.dim("hidden width")?);
    }
    let warm_start_steps = r.u64("warm_start_steps")? as usize;
    let buffer_capacity = r.u64("buffer_capacity")? as usize;
    let hyper = Hyperparams {
        discount,
        polyak,
        policy_noise,
        noise_clip,
        policy_delay,
        exploration_noise,
        batch_size,
        bc_weight,
        augment_fraction,
        actor_lr,
        critic_lr,
        hidden,
        warm_start_steps,
        buffer_capacity,
    };
    hyper.validate()?;
    let norm_stats = read_norm(&mut r)?;
    let actor = read_net(&mut r)?;
    let critic1 = read_net(&mut r)?;
    let critic2 = read_net(&mut r)?;
    let target_actor = read_net(&mut r)?;
    let target_critic1 = read_net(&mut r)?;
    let target_critic2 = read_net(&mut r)?;
    r.finish()?;
    Ok(AgentCheckpoint {
        actor,
        critic1,
        critic2,
        target_actor,
        target_critic1,
        target_critic2,
        hyper,
        norm_stats,
        phase,
    })
}
