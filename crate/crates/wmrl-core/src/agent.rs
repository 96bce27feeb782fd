//! TD3 and TD3BC actor-critic training, the world-model augmentation hook in
//! the offline batch path, and TD target computation.
//!
//! Conventions used throughout:
//! - Critics consume `(normalized state ⊕ action)`; actions are never
//!   normalized (they are already box-bounded).
//! - States live un-normalized in datasets and buffers; normalization is
//!   applied at sampling time with the offline statistics, in both phases.
//! - Noise magnitudes (σ_p, c, σ_e) are absolute, in action units.

use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::data::{
    sample_batch_buffer, sample_batch_dataset, NormStats, OfflineDataset, ReplayBuffer, TrainBatch,
    Transition,
};
use crate::envs::Env;
use crate::math::clamp;
use crate::matrix::{hcat, Matrix};
use crate::nn::{AdamConfig, Head, MlpNet, NetGrads};
use crate::rng::{choose_distinct, standard_normal};
use crate::wm::{EncodeMode, WorldModel};
use crate::{Error, Result};

/// Algorithm hyperparameters, all config-exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub discount: f64,
    pub polyak: f64,
    /// Target-policy smoothing noise σ_p (action units).
    pub policy_noise: f64,
    /// Smoothing-noise clip c (action units).
    pub noise_clip: f64,
    pub policy_delay: usize,
    /// Behavior/exploration noise σ_e (action units).
    pub exploration_noise: f64,
    pub batch_size: usize,
    /// α in λ = α / mean|Q1|.
    pub bc_weight: f64,
    /// Fraction p of each offline batch whose next states are replaced.
    pub augment_fraction: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Hidden widths of actor and critic networks.
    pub hidden: Vec<usize>,
    pub warm_start_steps: usize,
    pub buffer_capacity: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            discount: 0.99,
            polyak: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            exploration_noise: 0.1,
            batch_size: 256,
            bc_weight: 2.5,
            augment_fraction: 0.5,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: alloc::vec![256, 256],
            warm_start_steps: 5_000,
            buffer_capacity: 1_000_000,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config("discount must be in (0, 1)".into()));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::Config("polyak must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return Err(Error::Config("augment_fraction must be in [0, 1]".into()));
        }
        if self.policy_delay == 0 {
            return Err(Error::Config("policy_delay must be ≥ 1".into()));
        }
        for (name, v) in [
            ("policy_noise", self.policy_noise),
            ("noise_clip", self.noise_clip),
            ("exploration_noise", self.exploration_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be ≥ 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Which loop a checkpoint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn parse(name: &str) -> Result<Phase> {
        match name {
            "offline" => Ok(Phase::Offline),
            "online" => Ok(Phase::Online),
            other => Err(Error::Config(alloc::format!("unknown phase '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
}

/// Actor, twin critics, their targets, and everything needed to act.
#[derive(Debug, Clone)]
pub struct AgentCheckpoint {
    pub actor: MlpNet,
    pub critic1: MlpNet,
    pub critic2: MlpNet,
    pub target_actor: MlpNet,
    pub target_critic1: MlpNet,
    pub target_critic2: MlpNet,
    pub hyper: Hyperparams,
    pub norm_stats: NormStats,
    pub phase: Phase,
}

impl AgentCheckpoint {
    /// Fresh networks: actor with a tanh head scaled to the action bound,
    /// critics linear. Draw order (actor, critic1, critic2) from `rng` is
    /// part of the determinism contract; targets start as exact copies.
    pub fn init<R: RngCore>(
        obs_dim: usize,
        act_dim: usize,
        action_bound: f64,
        hyper: Hyperparams,
        norm_stats: NormStats,
        phase: Phase,
        rng: &mut R,
    ) -> Result<AgentCheckpoint> {
        hyper.validate()?;
        let layer = |input: usize, output: usize| {
            let mut v = alloc::vec![input];
            v.extend_from_slice(&hyper.hidden);
            v.push(output);
            v
        };
        let actor = MlpNet::init(&layer(obs_dim, act_dim), Head::TanhScaled(action_bound), rng);
        let critic1 = MlpNet::init(&layer(obs_dim + act_dim, 1), Head::Linear, rng);
        let critic2 = MlpNet::init(&layer(obs_dim + act_dim, 1), Head::Linear, rng);
        Ok(AgentCheckpoint {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
            hyper,
            norm_stats,
            phase,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Symmetric action bound baked into the actor's head.
    pub fn action_bound(&self) -> f64 {
        match self.actor.head {
            Head::TanhScaled(b) => b,
            Head::Linear => f64::INFINITY,
        }
    }

    /// Deterministic policy action for a raw observation.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_one(&self.norm_stats.normalize(obs))
    }

    /// Behavior action: policy output plus N(0, σ_e²) noise, clipped to the
    /// action box. Draws act_dim normals even when σ_e = 0, keeping stream
    /// alignment independent of the noise setting.
    pub fn act_exploring<R: RngCore>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let bound = self.action_bound();
        let mut a = self.act_deterministic(obs)?;
        for x in a.iter_mut() {
            *x = clamp(*x + self.hyper.exploration_noise * standard_normal(rng), -bound, bound);
        }
        Ok(a)
    }

    /// Both critics on an already-normalized state batch.
    pub fn q_values(&self, states_norm: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = hcat(states_norm, actions);
        let q1 = self.critic1.forward_only(&input)?;
        let q2 = self.critic2.forward_only(&input)?;
        Ok((q1.data, q2.data))
    }

    fn normalized_states(&self, states: &Matrix) -> Matrix {
        let mut out = states.clone();
        self.norm_stats.normalize_rows(&mut out);
        out
    }
}

/// Replace the next states of a uniformly chosen ⌊p·B⌋-subset of the batch's
/// non-terminal transitions with model samples; rewards, states, actions and
/// done flags are untouched. Returns how many were substituted. With p = 0
/// nothing is drawn from `rng` at all.
pub fn augment_batch<R: RngCore>(
    batch: &mut TrainBatch,
    wm: &WorldModel,
    norm: &NormStats,
    fraction: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config("augment fraction must be in [0, 1]".into()));
    }
    let b = batch.size();
    let eligible: Vec<usize> = (0..b).filter(|&i| !batch.dones[i]).collect();
    let k = ((fraction * b as f64) as usize).min(eligible.len());
    if k == 0 {
        return Ok(0);
    }
    let chosen = choose_distinct(rng, eligible.len(), k);
    let mut states = Matrix::zeros(k, batch.states.cols);
    let mut actions = Matrix::zeros(k, batch.actions.cols);
    for (row, &c) in chosen.iter().enumerate() {
        let i = eligible[c];
        states.row_mut(row).copy_from_slice(batch.states.row(i));
        actions.row_mut(row).copy_from_slice(batch.actions.row(i));
    }
    norm.normalize_rows(&mut states);
    let generated = wm.generate_next_state(&states, &actions, EncodeMode::Sample, rng, true)?;
    for (row, &c) in chosen.iter().enumerate() {
        let i = eligible[c];
        let raw = norm.denormalize(generated.row(row));
        batch.next_states.row_mut(i).copy_from_slice(&raw);
    }
    Ok(k)
}

/// Clipped double-Q targets:
/// `y = r + γ·(1−done)·min(Q1ₜ, Q2ₜ)(s', clip(πₜ(s') + clip(ε, −c, c), bounds))`
/// with ε ~ N(0, σ_p²). The batch's next states are raw; normalization uses
/// the checkpoint's statistics.
pub fn compute_td_target<R: RngCore>(
    ckpt: &AgentCheckpoint,
    batch: &TrainBatch,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let h = &ckpt.hyper;
    let bound = ckpt.action_bound();
    let next_norm = ckpt.normalized_states(&batch.next_states);
    let mut next_actions = ckpt.target_actor.forward_only(&next_norm)?;
    for x in next_actions.data.iter_mut() {
        let eps = clamp(h.policy_noise * standard_normal(rng), -h.noise_clip, h.noise_clip);
        *x = clamp(*x + eps, -bound, bound);
    }
    let input = hcat(&next_norm, &next_actions);
    let q1 = ckpt.target_critic1.forward_only(&input)?;
    let q2 = ckpt.target_critic2.forward_only(&input)?;
    let mut y = Vec::with_capacity(batch.size());
    for i in 0..batch.size() {
        let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
        let q_min = q1.data[i].min(q2.data[i]);
        y.push(batch.rewards[i] + h.discount * not_done * q_min);
    }
    Ok(y)
}

/// Mean squared TD error of one critic on `(state ⊕ action) → y`, with its
/// parameter gradients. `y` is constant.
pub fn critic_loss_and_grads(
    critic: &MlpNet,
    input: &Matrix,
    y: &[f64],
) -> Result<(f64, NetGrads)> {
    let cache = critic.forward(input)?;
    let q = cache.output();
    let b = y.len() as f64;
    let mut loss = 0.0;
    let mut dq = Matrix::zeros(q.rows, 1);
    for i in 0..y.len() {
        let d = q.data[i] - y[i];
        loss += d * d;
        dq.data[i] = 2.0 * d / b;
    }
    let (grads, _) = critic.backward(&cache, &dq)?;
    Ok((loss / b, grads))
}

/// One actor-loss evaluation: value, the λ actually used, and the actor's
/// parameter gradients.
pub struct ActorLossResult {
    pub loss: f64,
    pub lambda: f64,
    pub grads: NetGrads,
}

/// TD3BC actor loss
/// `−λ·mean(Q1(s, π(s))) + mean‖π(s) − a‖²`, `λ = α / mean|Q1(s, π(s))|`,
/// with λ's denominator gradient-detached. The squared norm sums over action
/// dimensions; both terms average over the batch.
pub fn td3bc_actor_loss(
    ckpt: &AgentCheckpoint,
    states_norm: &Matrix,
    actions: &Matrix,
) -> Result<ActorLossResult> {
    let b = states_norm.rows as f64;
    let pi_cache = ckpt.actor.forward(states_norm)?;
    let pi = pi_cache.output();
    let q_input = hcat(states_norm, pi);
    let q_cache = ckpt.critic1.forward(&q_input)?;
    let q = q_cache.output();

    let mean_q = q.data.iter().sum::<f64>() / b;
    let mean_abs_q = q.data.iter().map(|x| x.abs()).sum::<f64>() / b;
    let lambda = ckpt.hyper.bc_weight / mean_abs_q;
    let mut bc = 0.0;
    for (p, a) in pi.data.iter().zip(actions.data.iter()) {
        let d = p - a;
        bc += d * d;
    }
    bc /= b;
    let loss = -lambda * mean_q + bc;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite actor loss".into()));
    }

    // Backward: Q path through critic1 into π, plus the BC term; the critic's
    // own parameter gradients are discarded (actor update only).
    let dq = Matrix::from_vec(q.rows, 1, alloc::vec![-lambda / b; q.rows]);
    let (_, d_q_input) = ckpt.critic1.backward(&q_cache, &dq)?;
    let (_, mut d_pi) = d_q_input.split_cols(states_norm.cols);
    for (g, (p, a)) in d_pi.data.iter_mut().zip(pi.data.iter().zip(actions.data.iter())) {
        *g += 2.0 * (p - a) / b;
    }
    let (grads, _) = ckpt.actor.backward(&pi_cache, &d_pi)?;
    Ok(ActorLossResult { loss, lambda, grads })
}

/// The same loss with λ supplied externally (and no BC gradient), for
/// finite-difference probing where λ must stay frozen at the base point.
pub fn td3bc_actor_loss_frozen_lambda(
    ckpt: &AgentCheckpoint,
    states_norm: &Matrix,
    actions: &Matrix,
    lambda: f64,
) -> Result<f64> {
    let b = states_norm.rows as f64;
    let pi = ckpt.actor.forward_only(states_norm)?;
    let q = ckpt.critic1.forward_only(&hcat(states_norm, &pi))?;
    let mean_q = q.data.iter().sum::<f64>() / b;
    let mut bc = 0.0;
    for (p, a) in pi.data.iter().zip(actions.data.iter()) {
        let d = p - a;
        bc += d * d;
    }
    Ok(-lambda * mean_q + bc / b)
}

/// TD3 actor loss `−mean(Q1(s, π(s)))` with actor gradients.
pub fn td3_actor_loss(ckpt: &AgentCheckpoint, states_norm: &Matrix) -> Result<ActorLossResult> {
    let b = states_norm.rows as f64;
    let pi_cache = ckpt.actor.forward(states_norm)?;
    let q_input = hcat(states_norm, pi_cache.output());
    let q_cache = ckpt.critic1.forward(&q_input)?;
    let q = q_cache.output();
    let loss = -q.data.iter().sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite actor loss".into()));
    }
    let dq = Matrix::from_vec(q.rows, 1, alloc::vec![-1.0 / b; q.rows]);
    let (_, d_q_input) = ckpt.critic1.backward(&q_cache, &dq)?;
    let (_, d_pi) = d_q_input.split_cols(states_norm.cols);
    let (grads, _) = ckpt.actor.backward(&pi_cache, &d_pi)?;
    Ok(ActorLossResult { loss, lambda: 1.0, grads })
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    /// Present on iterations where the actor updated.
    pub actor_loss: Option<f64>,
    /// Batch entries whose next state was model-generated.
    pub augmented: usize,
}

fn map_diverged(e: Error, iter: usize) -> Error {
    match e {
        Error::Numeric(_) => {
            Error::Training(alloc::format!("agent update diverged at iteration {iter}"))
        }
        other => other,
    }
}

/// Shared critic/actor/target update given an assembled (possibly augmented)
/// batch. `offline` selects the TD3BC actor loss; online uses plain TD3.
fn update_from_batch<R: RngCore>(
    ckpt: &mut AgentCheckpoint,
    batch: &TrainBatch,
    iter: usize,
    offline: bool,
    rng: &mut R,
) -> Result<StepMetrics> {
    let y = compute_td_target(ckpt, batch, rng).map_err(|e| map_diverged(e, iter))?;
    let states_norm = ckpt.normalized_states(&batch.states);
    let critic_input = hcat(&states_norm, &batch.actions);
    let adam_critic = AdamConfig::with_lr(ckpt.hyper.critic_lr);
    let mut critic_loss = 0.0;
    for critic in [&mut ckpt.critic1, &mut ckpt.critic2] {
        let (loss, grads) =
            critic_loss_and_grads(critic, &critic_input, &y).map_err(|e| map_diverged(e, iter))?;
        critic.adam_step(&grads, &adam_critic).map_err(|e| map_diverged(e, iter))?;
        critic_loss += loss;
    }

    let mut actor_loss = None;
    if iter % ckpt.hyper.policy_delay == 0 {
        let result = if offline {
            td3bc_actor_loss(ckpt, &states_norm, &batch.actions)
        } else {
            td3_actor_loss(ckpt, &states_norm)
        }
        .map_err(|e| map_diverged(e, iter))?;
        let adam_actor = AdamConfig::with_lr(ckpt.hyper.actor_lr);
        ckpt.actor.adam_step(&result.grads, &adam_actor).map_err(|e| map_diverged(e, iter))?;
        actor_loss = Some(result.loss);
        let tau = ckpt.hyper.polyak;
        ckpt.target_actor.polyak_from(&ckpt.actor, tau)?;
        ckpt.target_critic1.polyak_from(&ckpt.critic1, tau)?;
        ckpt.target_critic2.polyak_from(&ckpt.critic2, tau)?;
    }
    Ok(StepMetrics { critic_loss, actor_loss, augmented: 0 })
}

/// One TD3BC iteration over the offline dataset. `iter` is 1-based; the
/// actor and targets move only when `iter % policy_delay == 0`. Augmentation
/// noise comes from `augment_rng`, so a run with `wm = None` and a run with
/// `fraction = 0` consume identical draws from `train_rng` and are
/// bit-identical.
pub fn offline_train_step<R: RngCore>(
    ckpt: &mut AgentCheckpoint,
    dataset: &OfflineDataset,
    wm: Option<&WorldModel>,
    iter: usize,
    train_rng: &mut R,
    augment_rng: &mut R,
) -> Result<StepMetrics> {
    debug_assert_eq!(ckpt.phase, Phase::Offline);
    let mut batch = sample_batch_dataset(dataset, ckpt.hyper.batch_size, train_rng)?;
    let augmented = match wm {
        Some(model) => {
            augment_batch(&mut batch, model, &ckpt.norm_stats, ckpt.hyper.augment_fraction, augment_rng)?
        }
        None => 0,
    };
    let metrics = update_from_batch(ckpt, &batch, iter, true, train_rng)?;
    Ok(StepMetrics { augmented, ..metrics })
}

/// One online TD3 iteration: act in the environment (exploration noise from
/// `env_rng`), store the raw transition, then update from a buffer sample.
/// `obs` is the current observation and is advanced in place; episode ends
/// reset the environment. Stored transitions always carry `done = false` —
/// horizon ends are time limits, not terminals.
pub fn online_train_step<R: RngCore>(
    ckpt: &mut AgentCheckpoint,
    env: &mut Env,
    obs: &mut Vec<f64>,
    buffer: &mut ReplayBuffer,
    iter: usize,
    train_rng: &mut R,
    env_rng: &mut R,
) -> Result<StepMetrics> {
    debug_assert_eq!(ckpt.phase, Phase::Online);
    let action = ckpt.act_exploring(obs, env_rng)?;
    let step = env.step(&action)?;
    buffer.push(Transition {
        state: core::mem::take(obs),
        action,
        reward: step.reward,
        next_state: step.obs.clone(),
        done: false,
    });
    *obs = if step.done { env.reset(env_rng) } else { step.obs };

    let batch = sample_batch_buffer(buffer, ckpt.obs_dim(), ckpt.act_dim(), ckpt.hyper.batch_size, train_rng)?;
    update_from_batch(ckpt, &batch, iter, false, train_rng)
}

/// Roll out `steps` environment steps with the checkpoint's actor plus
/// exploration noise, filling a fresh buffer before any gradient step.
/// Returns the buffer and the observation the environment was left at, so
/// the online loop continues seamlessly. Every stored transition is also
/// appended to `stream_log` when provided (the source of medium_replay
/// datasets).
pub fn warm_start_buffer<R: RngCore>(
    ckpt: &AgentCheckpoint,
    env: &mut Env,
    steps: usize,
    rng: &mut R,
    mut stream_log: Option<&mut Vec<Transition>>,
) -> Result<(ReplayBuffer, Vec<f64>)> {
    if steps > ckpt.hyper.buffer_capacity {
        return Err(Error::Config(alloc::format!(
            "warm start of {steps} steps exceeds buffer capacity {}",
            ckpt.hyper.buffer_capacity
        )));
    }
    let mut buffer = ReplayBuffer::new(ckpt.hyper.buffer_capacity);
    let mut obs = env.reset(rng);
    for _ in 0..steps {
        let action = ckpt.act_exploring(&obs, rng)?;
        let step = env.step(&action)?;
        let t = Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.obs.clone(),
            done: false,
        };
        if let Some(log) = stream_log.as_mut() {
            log.push(t.clone());
        }
        buffer.push(t);
        obs = if step.done { env.reset(rng) } else { step.obs };
    }
    Ok((buffer, obs))
}
