//! Transitions, offline datasets, normalization statistics, and the replay
//! buffer, plus seeded dataset generation in D4RL-like flavors.
//!
//! Datasets are immutable after construction. The replay buffer is a plain
//! ring: oldest-first eviction, with every inserted transition observable in
//! insertion order (the medium-replay dataset flavor is literally a prefix of
//! that stream from a reference training run).

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::envs::{Env, EnvKind};
use crate::math::{population_std, sqrt};
use crate::matrix::Matrix;
use crate::nn::MlpNet;
use crate::rng::{choose_distinct, index, standard_normal, substream, uniform, Stream};
use crate::{Error, Result};

/// One environment transition `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Dataset construction flavor, mirroring the D4RL taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Random,
    Medium,
    MediumReplay,
    MediumExpert,
    Imported,
}

impl Flavor {
    pub fn parse(name: &str) -> Result<Flavor> {
        match name {
            "random" => Ok(Flavor::Random),
            "medium" => Ok(Flavor::Medium),
            "medium_replay" => Ok(Flavor::MediumReplay),
            "medium_expert" => Ok(Flavor::MediumExpert),
            "imported" => Ok(Flavor::Imported),
            other => Err(Error::Config(alloc::format!("unknown dataset flavor '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Random => "random",
            Flavor::Medium => "medium",
            Flavor::MediumReplay => "medium_replay",
            Flavor::MediumExpert => "medium_expert",
            Flavor::Imported => "imported",
        }
    }
}

/// A fixed set of transitions collected by some behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env_name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub transitions: Vec<Transition>,
    pub flavor: Flavor,
    pub seed: u64,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Validate dimensional consistency and finiteness of every transition.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let ok = t.state.len() == self.obs_dim
                && t.next_state.len() == self.obs_dim
                && t.action.len() == self.act_dim;
            if !ok {
                return Err(Error::Shape {
                    expected: self.obs_dim,
                    got: t.state.len(),
                    what: "dataset transition dims",
                });
            }
            let finite = t.state.iter().chain(t.next_state.iter()).chain(t.action.iter()).all(|x| x.is_finite())
                && t.reward.is_finite();
            if !finite {
                return Err(Error::Numeric(alloc::format!("non-finite values in transition {i}")));
            }
        }
        Ok(())
    }
}

/// Per-dimension state normalization: `normalize(s) = (s − mean)/(std + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

pub const DEFAULT_NORM_EPSILON: f64 = 1e-3;

impl NormStats {
    /// Identity-like stats (mean 0, std 1) for runs with no offline dataset,
    /// e.g. the fully-online baseline.
    pub fn identity(obs_dim: usize) -> NormStats {
        NormStats {
            mean: alloc::vec![0.0; obs_dim],
            std: alloc::vec![1.0; obs_dim],
            epsilon: DEFAULT_NORM_EPSILON,
        }
    }

    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.mean.len());
        s.iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(x, (m, sd))| (x - m) / (sd + self.epsilon))
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(x, (m, sd))| x * (sd + self.epsilon) + m)
            .collect()
    }

    /// Normalize a row-batch of states in place.
    pub fn normalize_rows(&self, m: &mut Matrix) {
        debug_assert_eq!(m.cols, self.mean.len());
        for r in 0..m.rows {
            let row = m.row_mut(r);
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / (self.std[j] + self.epsilon);
            }
        }
    }
}

/// Per-dimension mean and population standard deviation over dataset states.
pub fn compute_norm_stats(dataset: &OfflineDataset, epsilon: f64) -> Result<NormStats> {
    if dataset.is_empty() {
        return Err(Error::Config("norm stats over empty dataset".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("norm epsilon must be > 0".into()));
    }
    let d = dataset.obs_dim;
    let n = dataset.len() as f64;
    let mut mean = alloc::vec![0.0; d];
    for t in &dataset.transitions {
        for (m, x) in mean.iter_mut().zip(t.state.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = alloc::vec![0.0; d];
    for t in &dataset.transitions {
        for ((v, m), x) in var.iter_mut().zip(mean.iter()).zip(t.state.iter()) {
            let dlt = x - m;
            *v += dlt * dlt;
        }
    }
    let std = var.iter().map(|v| sqrt(v / n)).collect();
    Ok(NormStats { mean, std, epsilon })
}

/// Ring buffer over transitions with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
    insertions: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        // Grows on demand; desk-scale runs rarely approach full capacity.
        ReplayBuffer { capacity, storage: VecDeque::new(), insertions: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        self.insertions += 1;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    /// The i-th oldest retained transition.
    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}

/// A training batch in matrix form (rows are transitions). States are stored
/// exactly as sampled; normalization happens in the agent update path.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl TrainBatch {
    pub fn size(&self) -> usize {
        self.rewards.len()
    }

    fn from_rows(obs_dim: usize, act_dim: usize, rows: &[&Transition]) -> TrainBatch {
        let b = rows.len();
        let mut states = Matrix::zeros(b, obs_dim);
        let mut actions = Matrix::zeros(b, act_dim);
        let mut next_states = Matrix::zeros(b, obs_dim);
        let mut rewards = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for (r, t) in rows.iter().enumerate() {
            states.row_mut(r).copy_from_slice(&t.state);
            actions.row_mut(r).copy_from_slice(&t.action);
            next_states.row_mut(r).copy_from_slice(&t.next_state);
            rewards.push(t.reward);
            dones.push(t.done);
        }
        TrainBatch { states, actions, rewards, next_states, dones }
    }
}

/// Uniform with-replacement batch from a dataset.
pub fn sample_batch_dataset<R: RngCore>(
    dataset: &OfflineDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if dataset.is_empty() {
        return Err(Error::Config("sample from empty dataset".into()));
    }
    let rows: Vec<&Transition> = (0..batch_size)
        .map(|_| &dataset.transitions[index(rng, dataset.len())])
        .collect();
    Ok(TrainBatch::from_rows(dataset.obs_dim, dataset.act_dim, &rows))
}

/// Uniform with-replacement batch from a replay buffer.
pub fn sample_batch_buffer<R: RngCore>(
    buffer: &ReplayBuffer,
    obs_dim: usize,
    act_dim: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if buffer.is_empty() {
        return Err(Error::Config("sample from empty replay buffer".into()));
    }
    let rows: Vec<&Transition> =
        (0..batch_size).map(|_| buffer.get(index(rng, buffer.len()))).collect();
    Ok(TrainBatch::from_rows(obs_dim, act_dim, &rows))
}

/// `k` transitions drawn uniformly without replacement; flavor and dims are
/// preserved, the subsample seed is recorded.
pub fn subsample_dataset(dataset: &OfflineDataset, k: usize, seed: u64) -> Result<OfflineDataset> {
    if k > dataset.len() {
        return Err(Error::Config(alloc::format!(
            "cannot subsample {k} transitions from a dataset of {}",
            dataset.len()
        )));
    }
    let mut rng = substream(seed, Stream::Data);
    let picks = choose_distinct(&mut rng, dataset.len(), k);
    Ok(OfflineDataset {
        env_name: dataset.env_name.clone(),
        obs_dim: dataset.obs_dim,
        act_dim: dataset.act_dim,
        transitions: picks.iter().map(|&i| dataset.transitions[i].clone()).collect(),
        flavor: dataset.flavor,
        seed,
    })
}

/// A behavior policy for dataset generation.
pub enum BehaviorPolicy<'a> {
    UniformRandom,
    /// Deterministic actor plus Gaussian exploration noise, clipped into the
    /// action box. The actor sees states through its own `NormStats`.
    Actor { actor: &'a MlpNet, norm: &'a NormStats, noise_std: f64 },
}

impl BehaviorPolicy<'_> {
    fn act<R: RngCore>(&self, env: &Env, obs: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            BehaviorPolicy::UniformRandom => (0..env.spec.act_dim)
                .map(|d| uniform(rng, env.spec.action_low[d], env.spec.action_high[d]))
                .collect(),
            BehaviorPolicy::Actor { actor, norm, noise_std } => {
                let mut a = actor
                    .forward_one(&norm.normalize(obs))
                    .expect("actor dims match env observation");
                for (d, x) in a.iter_mut().enumerate() {
                    if *noise_std > 0.0 {
                        *x += noise_std * standard_normal(rng);
                    }
                    *x = crate::math::clamp(*x, env.spec.action_low[d], env.spec.action_high[d]);
                }
                a
            }
        }
    }
}

/// Roll a behavior policy until `size` transitions are collected, resetting
/// at the horizon. Stored transitions always carry `done = false`: episode
/// ends are time-limit truncations, not environment terminals.
fn collect_rollouts<R: RngCore>(
    kind: EnvKind,
    policy: &BehaviorPolicy,
    size: usize,
    rng: &mut R,
) -> Vec<Transition> {
    let mut env = Env::new(kind);
    let mut out = Vec::with_capacity(size);
    'outer: loop {
        let mut obs = env.reset(rng);
        loop {
            let action = policy.act(&env, &obs, rng);
            let step = env.step(&action).expect("policy actions are finite");
            out.push(Transition {
                state: obs,
                action,
                reward: step.reward,
                next_state: step.obs.clone(),
                done: false,
            });
            if out.len() == size {
                break 'outer;
            }
            obs = step.obs;
            if step.done {
                break;
            }
        }
    }
    out
}

/// Inputs for the checkpoint-dependent flavors.
pub struct GenerationSources<'a> {
    /// Actor and stats of the medium-quality policy (flavors medium and
    /// medium_expert).
    pub medium: Option<(&'a MlpNet, &'a NormStats)>,
    /// Actor and stats of the expert policy (flavor medium_expert).
    pub expert: Option<(&'a MlpNet, &'a NormStats)>,
    /// Recorded replay insertion stream of the training run that produced
    /// the medium policy (flavor medium_replay).
    pub replay_stream: Option<&'a [Transition]>,
    /// Exploration noise applied to policy rollouts.
    pub noise_std: f64,
}

impl Default for GenerationSources<'_> {
    fn default() -> Self {
        GenerationSources { medium: None, expert: None, replay_stream: None, noise_std: 0.1 }
    }
}

/// Build an offline dataset of the requested flavor.
///
/// - `random`: uniform actions.
/// - `medium`: medium-policy rollouts with exploration noise.
/// - `medium_replay`: the first `size` transitions of the recorded replay
///   stream from the run that produced the medium policy.
/// - `medium_expert`: 50/50 concatenation of medium and expert rollouts.
pub fn generate_dataset(
    kind: EnvKind,
    flavor: Flavor,
    size: usize,
    seed: u64,
    sources: &GenerationSources,
) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    let spec = crate::envs::EnvSpec::for_kind(kind);
    let mut rng = substream(seed, Stream::Data);
    let transitions = match flavor {
        Flavor::Random => collect_rollouts(kind, &BehaviorPolicy::UniformRandom, size, &mut rng),
        Flavor::Medium => {
            let (actor, norm) = sources
                .medium
                .ok_or_else(|| Error::Config("medium flavor requires a medium checkpoint".into()))?;
            let policy = BehaviorPolicy::Actor { actor, norm, noise_std: sources.noise_std };
            collect_rollouts(kind, &policy, size, &mut rng)
        }
        Flavor::MediumReplay => {
            let stream = sources.replay_stream.ok_or_else(|| {
                Error::Config("medium_replay flavor requires the recorded replay stream".into())
            })?;
            if stream.len() < size {
                return Err(Error::Config(alloc::format!(
                    "replay stream has {} transitions, need {size}",
                    stream.len()
                )));
            }
            stream[..size].to_vec()
        }
        Flavor::MediumExpert => {
            if size % 2 != 0 {
                return Err(Error::Config("medium_expert size must be even".into()));
            }
            let (m_actor, m_norm) = sources
                .medium
                .ok_or_else(|| Error::Config("medium_expert requires a medium checkpoint".into()))?;
            let (e_actor, e_norm) = sources
                .expert
                .ok_or_else(|| Error::Config("medium_expert requires an expert checkpoint".into()))?;
            let medium_policy =
                BehaviorPolicy::Actor { actor: m_actor, norm: m_norm, noise_std: sources.noise_std };
            let expert_policy =
                BehaviorPolicy::Actor { actor: e_actor, norm: e_norm, noise_std: sources.noise_std };
            let mut both = collect_rollouts(kind, &medium_policy, size / 2, &mut rng);
            both.extend(collect_rollouts(kind, &expert_policy, size / 2, &mut rng));
            both
        }
        Flavor::Imported => {
            return Err(Error::Config("imported datasets are loaded from files, not generated".into()))
        }
    };
    let ds = OfflineDataset {
        env_name: spec.name.clone(),
        obs_dim: spec.obs_dim,
        act_dim: spec.act_dim,
        transitions,
        flavor,
        seed,
    };
    ds.validate()?;
    Ok(ds)
}

/// Held-out split helper: deterministic partition of a dataset into
/// `(train, holdout)` with `holdout_k` transitions held out.
pub fn split_holdout(dataset: &OfflineDataset, holdout_k: usize, seed: u64) -> Result<(OfflineDataset, OfflineDataset)> {
    if holdout_k == 0 || holdout_k >= dataset.len() {
        return Err(Error::Config("holdout size must be in (0, dataset size)".into()));
    }
    let mut rng = substream(seed, Stream::Data);
    let picks = choose_distinct(&mut rng, dataset.len(), holdout_k);
    let mut is_holdout = alloc::vec![false; dataset.len()];
    for &i in &picks {
        is_holdout[i] = true;
    }
    let part = |keep: bool| OfflineDataset {
        env_name: dataset.env_name.clone(),
        obs_dim: dataset.obs_dim,
        act_dim: dataset.act_dim,
        transitions: dataset
            .transitions
            .iter()
            .zip(is_holdout.iter())
            .filter(|(_, &h)| h == keep)
            .map(|(t, _)| t.clone())
            .collect(),
        flavor: dataset.flavor,
        seed: dataset.seed,
    };
    Ok((part(false), part(true)))
}

/// Population variance per dimension of the `next_state` field — the scale
/// reference for world-model fidelity thresholds.
pub fn next_state_variance(dataset: &OfflineDataset, norm: &NormStats) -> Vec<f64> {
    let d = dataset.obs_dim;
    let mut cols: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(dataset.len()); d];
    for t in &dataset.transitions {
        let z = norm.normalize(&t.next_state);
        for (c, v) in cols.iter_mut().zip(z.iter()) {
            c.push(*v);
        }
    }
    cols.iter()
        .map(|c| {
            let s = population_std(c);
            s * s
        })
        .collect()
}
