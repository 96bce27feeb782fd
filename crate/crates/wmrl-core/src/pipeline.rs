//! Experiment orchestration: offline pre-training, online fine-tuning,
//! evaluation bookkeeping, reference calibration, and critic diagnostics.
//!
//! The reproducibility contract lives here as much as in the RNG module:
//! every phase re-derives its substreams from the master seed at position
//! zero, so a standalone online run and the online half of a two-phase run
//! consume identical random numbers. Evaluations draw from per-point indexed
//! substreams (a global 1-based ordinal), so two runs with the same budgets
//! score their checkpoints on exactly the same evaluation episodes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::agent::{
    offline_train_step, online_train_step, warm_start_buffer, AgentCheckpoint, Hyperparams, Phase,
};
use crate::data::{
    compute_norm_stats, NormStats, OfflineDataset, Transition, DEFAULT_NORM_EPSILON,
};
use crate::envs::{reward_min, Env, EnvKind, EnvSpec};
use crate::math::{mean, population_std};
use crate::matrix::Matrix;
use crate::rng::{substream, substream_indexed, uniform, Stream};
use crate::wm::{train_world_model, WmConfig, WmCurve, WorldModel};
use crate::{Error, Result};

/// Which pre-trained networks seed the online phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Actor and both critics carried over.
    Both,
    ActorOnly,
    CriticOnly,
    /// Fresh networks; the online phase is a from-scratch run.
    None,
}

impl InitMode {
    pub fn parse(name: &str) -> Result<InitMode> {
        match name {
            "both" => Ok(InitMode::Both),
            "actor_only" => Ok(InitMode::ActorOnly),
            "critic_only" => Ok(InitMode::CriticOnly),
            "none" => Ok(InitMode::None),
            other => Err(Error::Config(format!(
                "unknown init mode '{other}' (expected both, actor_only, critic_only, none)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Both => "both",
            InitMode::ActorOnly => "actor_only",
            InitMode::CriticOnly => "critic_only",
            InitMode::None => "none",
        }
    }
}

/// Everything a two-phase experiment needs besides the data itself.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub env: EnvKind,
    /// Master seed; all phase substreams derive from it.
    pub seed: u64,
    pub wm: WmConfig,
    pub hyper: Hyperparams,
    pub offline_iterations: usize,
    pub online_iterations: usize,
    /// Evaluate every this many iterations (plus once at the final iteration
    /// when it is not a multiple).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub init_mode: InitMode,
    /// Replace a fraction of offline batch next-states with model samples.
    pub augment: bool,
    pub norm_epsilon: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            env: EnvKind::Pendulum,
            seed: 0,
            wm: WmConfig::default(),
            hyper: Hyperparams::default(),
            offline_iterations: 50_000,
            online_iterations: 100_000,
            eval_every: 5_000,
            eval_episodes: 10,
            init_mode: InitMode::Both,
            augment: true,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.wm.validate()?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        if !(self.norm_epsilon > 0.0 && self.norm_epsilon.is_finite()) {
            return Err(Error::Config("norm_epsilon must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Return references that anchor the normalized score: 0 at the random
/// policy, 100 at the expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Refs {
    pub env_name: String,
    pub random_ref: f64,
    pub expert_ref: f64,
}

impl Refs {
    pub fn validate(&self) -> Result<()> {
        if !(self.random_ref.is_finite() && self.expert_ref.is_finite()) {
            return Err(Error::Config("reference returns must be finite".into()));
        }
        if !(self.expert_ref > self.random_ref) {
            return Err(Error::Config(format!(
                "expert reference ({}) must exceed random reference ({})",
                self.expert_ref, self.random_ref
            )));
        }
        Ok(())
    }
}

/// `100 * (raw - random) / (expert - random)`.
pub fn normalized_score(raw_return: f64, refs: &Refs) -> Result<f64> {
    refs.validate()?;
    Ok(100.0 * (raw_return - refs.random_ref) / (refs.expert_ref - refs.random_ref))
}

/// One evaluation point on a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub phase: Phase,
    /// Training iteration within the phase.
    pub iteration: usize,
    /// Cumulative environment interactions (0 throughout the offline phase).
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    /// NaN until references are available; see [`rescore_records`].
    pub normalized_score: f64,
}

/// Iterations at which a phase evaluates: every multiple of `eval_every`
/// in `1..=iterations`, plus the final iteration when it is not a multiple.
/// Never includes 0.
pub fn eval_points(iterations: usize, eval_every: usize) -> Vec<usize> {
    assert!(eval_every > 0, "eval_every must be positive");
    let mut points: Vec<usize> = (1..=iterations).filter(|i| i % eval_every == 0).collect();
    if iterations > 0 && iterations % eval_every != 0 {
        points.push(iterations);
    }
    points
}

/// Fill in `normalized_score` for every record from the given references.
pub fn rescore_records(records: &mut [EvalRecord], refs: &Refs) -> Result<()> {
    for r in records.iter_mut() {
        r.normalized_score = normalized_score(r.mean_return, refs)?;
    }
    Ok(())
}

fn score_or_nan(raw_return: f64, refs: Option<&Refs>) -> Result<f64> {
    match refs {
        Some(r) => normalized_score(raw_return, r),
        None => Ok(f64::NAN),
    }
}

fn check_refs_env(refs: Option<&Refs>, spec: &EnvSpec) -> Result<()> {
    if let Some(r) = refs {
        r.validate()?;
        if r.env_name != spec.name {
            return Err(Error::Config(format!(
                "references are for '{}' but the run targets '{}'",
                r.env_name, spec.name
            )));
        }
    }
    Ok(())
}

fn check_policy_dims(ckpt: &AgentCheckpoint, spec: &EnvSpec) -> Result<()> {
    if ckpt.obs_dim() != spec.obs_dim {
        return Err(Error::Shape {
            expected: spec.obs_dim,
            got: ckpt.obs_dim(),
            what: "policy observation dim vs environment",
        });
    }
    if ckpt.act_dim() != spec.act_dim {
        return Err(Error::Shape {
            expected: spec.act_dim,
            got: ckpt.act_dim(),
            what: "policy action dim vs environment",
        });
    }
    Ok(())
}

/// Undiscounted return of one episode under the deterministic policy.
fn episode_return<R: RngCore>(ckpt: &AgentCheckpoint, env: &mut Env, rng: &mut R) -> Result<f64> {
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = ckpt.act_deterministic(&obs)?;
        let step = env.step(&action)?;
        total += step.reward;
        if step.done {
            return Ok(total);
        }
        obs = step.obs;
    }
}

/// Mean and population std of undiscounted returns over `episodes` rollouts
/// of the deterministic policy. Uses a fresh environment; the rng drives
/// only the episode resets.
pub fn evaluate_policy<R: RngCore>(
    ckpt: &AgentCheckpoint,
    kind: EnvKind,
    episodes: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    check_policy_dims(ckpt, &EnvSpec::for_kind(kind))?;
    let mut env = Env::new(kind);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        returns.push(episode_return(ckpt, &mut env, rng)?);
    }
    Ok((mean(&returns), population_std(&returns)))
}

/// Mean and population std of returns under uniformly random actions; the
/// zero anchor of the normalized score.
pub fn uniform_policy_return<R: RngCore>(
    kind: EnvKind,
    episodes: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut env = Env::new(kind);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(rng);
        let mut total = 0.0;
        loop {
            let action: Vec<f64> = (0..env.spec.act_dim)
                .map(|d| uniform(rng, env.spec.action_low[d], env.spec.action_high[d]))
                .collect();
            let step = env.step(&action)?;
            total += step.reward;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok((mean(&returns), population_std(&returns)))
}

/// One deterministic-policy episode as (observation, action) pairs, in step
/// order. The episode runs to the horizon.
pub fn rollout_episode<R: RngCore>(
    ckpt: &AgentCheckpoint,
    kind: EnvKind,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    check_policy_dims(ckpt, &EnvSpec::for_kind(kind))?;
    let mut env = Env::new(kind);
    let mut obs = env.reset(rng);
    let mut pairs = Vec::new();
    loop {
        let action = ckpt.act_deterministic(&obs)?;
        let step = env.step(&action)?;
        pairs.push((obs, action));
        if step.done {
            return Ok(pairs);
        }
        obs = step.obs;
    }
}

/// TD3BC pre-training on a fixed dataset. Normalization statistics come from
/// the dataset; evaluations use global ordinals `1..`, and every record
/// carries `env_steps = 0` — the offline phase never touches the
/// environment.
pub fn run_offline_phase(
    settings: &RunSettings,
    dataset: &OfflineDataset,
    wm: Option<&WorldModel>,
    refs: Option<&Refs>,
) -> Result<(AgentCheckpoint, Vec<EvalRecord>)> {
    settings.validate()?;
    dataset.validate()?;
    let spec = EnvSpec::for_kind(settings.env);
    check_refs_env(refs, &spec)?;
    if dataset.env_name != spec.name {
        return Err(Error::Config(format!(
            "dataset was generated for '{}' but the run targets '{}'",
            dataset.env_name, spec.name
        )));
    }
    let model = if settings.augment {
        let m = wm.ok_or_else(|| {
            Error::Config("augmentation enabled but no world model supplied".into())
        })?;
        if m.obs_dim() != spec.obs_dim || m.act_dim() != spec.act_dim {
            return Err(Error::Shape {
                expected: spec.obs_dim,
                got: m.obs_dim(),
                what: "world model dims vs environment",
            });
        }
        if !m.trained_on_normalized {
            return Err(Error::Config(
                "augmentation needs a world model trained on normalized transitions".into(),
            ));
        }
        Some(m)
    } else {
        None
    };

    let norm = compute_norm_stats(dataset, settings.norm_epsilon)?;
    let mut init_rng = substream(settings.seed, Stream::AgentInit);
    let mut ckpt = AgentCheckpoint::init(
        spec.obs_dim,
        spec.act_dim,
        spec.action_bound(),
        settings.hyper.clone(),
        norm,
        Phase::Offline,
        &mut init_rng,
    )?;

    let mut train_rng = substream(settings.seed, Stream::AgentTrain);
    let mut augment_rng = substream(settings.seed, Stream::Augment);
    let points = eval_points(settings.offline_iterations, settings.eval_every);
    let mut next_point = 0;
    let mut records = Vec::with_capacity(points.len());
    for it in 1..=settings.offline_iterations {
        offline_train_step(&mut ckpt, dataset, model, it, &mut train_rng, &mut augment_rng)?;
        if next_point < points.len() && points[next_point] == it {
            next_point += 1;
            let ordinal = next_point as u64;
            let mut eval_rng = substream_indexed(settings.seed, Stream::Eval, ordinal);
            let (mean_return, std_return) =
                evaluate_policy(&ckpt, settings.env, settings.eval_episodes, &mut eval_rng)?;
            records.push(EvalRecord {
                phase: Phase::Offline,
                iteration: it,
                env_steps: 0,
                mean_return,
                std_return,
                normalized_score: score_or_nan(mean_return, refs)?,
            });
        }
    }
    Ok((ckpt, records))
}

/// Side outputs of an online phase beyond the curve itself.
#[derive(Debug, Clone, Default)]
pub struct OnlineOptions {
    /// Global ordinal of the last evaluation before this phase (the number
    /// of offline evaluations, or 0 for a standalone run).
    pub eval_ordinal_offset: u64,
    /// Record every inserted transition, warm start included, in insertion
    /// order — the raw material of replay datasets.
    pub capture_stream: bool,
    /// Clone the checkpoint at every evaluation point.
    pub snapshot_every_eval: bool,
    /// Stop training after the first evaluation whose normalized score
    /// reaches this threshold (requires references). The crossing record is
    /// kept; later iterations never run.
    pub stop_at_score: Option<f64>,
}

/// Result of an online phase.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub ckpt: AgentCheckpoint,
    pub records: Vec<EvalRecord>,
    /// Insertion stream; empty unless requested.
    pub stream: Vec<Transition>,
    /// `(iteration, checkpoint)` at each evaluation point; empty unless
    /// requested.
    pub snapshots: Vec<(usize, AgentCheckpoint)>,
}

/// TD3 fine-tuning against the live environment.
///
/// Fresh networks are always drawn from a restarted `AgentInit` substream —
/// so with `init_mode = none` this is bit-identical to a standalone online
/// run — and then pre-trained networks are copied over per the init mode,
/// with their Adam state reset and targets re-synced to exact copies.
/// `norm_stats` stays frozen for the whole phase (the offline statistics
/// when fine-tuning, identity for a standalone baseline).
pub fn run_online_phase(
    settings: &RunSettings,
    offline: Option<&AgentCheckpoint>,
    norm_stats: &NormStats,
    refs: Option<&Refs>,
    options: &OnlineOptions,
) -> Result<OnlineRun> {
    settings.validate()?;
    let spec = EnvSpec::for_kind(settings.env);
    check_refs_env(refs, &spec)?;
    if offline.is_none() && settings.init_mode != InitMode::None {
        return Err(Error::Config(format!(
            "init mode '{}' needs a pre-trained checkpoint",
            settings.init_mode.name()
        )));
    }
    if norm_stats.mean.len() != spec.obs_dim {
        return Err(Error::Shape {
            expected: spec.obs_dim,
            got: norm_stats.mean.len(),
            what: "normalization dims vs environment",
        });
    }
    if options.stop_at_score.is_some() && refs.is_none() {
        return Err(Error::Config(
            "stopping at a score threshold requires references".into(),
        ));
    }

    let mut init_rng = substream(settings.seed, Stream::AgentInit);
    let mut ckpt = AgentCheckpoint::init(
        spec.obs_dim,
        spec.act_dim,
        spec.action_bound(),
        settings.hyper.clone(),
        norm_stats.clone(),
        Phase::Online,
        &mut init_rng,
    )?;

    if let Some(src) = offline {
        if settings.init_mode != InitMode::None {
            let compatible = src.actor.layer_sizes == ckpt.actor.layer_sizes
                && src.actor.head == ckpt.actor.head
                && src.critic1.layer_sizes == ckpt.critic1.layer_sizes;
            if !compatible {
                return Err(Error::Config(
                    "pre-trained checkpoint architecture differs from the run settings".into(),
                ));
            }
        }
        let take_actor =
            matches!(settings.init_mode, InitMode::Both | InitMode::ActorOnly);
        let take_critics =
            matches!(settings.init_mode, InitMode::Both | InitMode::CriticOnly);
        if take_actor {
            ckpt.actor = src.actor.clone();
            ckpt.actor.reset_adam();
            ckpt.target_actor = ckpt.actor.clone();
        }
        if take_critics {
            ckpt.critic1 = src.critic1.clone();
            ckpt.critic1.reset_adam();
            ckpt.target_critic1 = ckpt.critic1.clone();
            ckpt.critic2 = src.critic2.clone();
            ckpt.critic2.reset_adam();
            ckpt.target_critic2 = ckpt.critic2.clone();
        }
    }

    let mut env = Env::new(settings.env);
    let mut warm_rng = substream(settings.seed, Stream::WarmStart);
    let mut stream_log = if options.capture_stream { Some(Vec::new()) } else { None };
    let (mut buffer, mut obs) = warm_start_buffer(
        &ckpt,
        &mut env,
        settings.hyper.warm_start_steps,
        &mut warm_rng,
        stream_log.as_mut(),
    )?;

    let mut env_rng = substream(settings.seed, Stream::Env);
    let mut train_rng = substream(settings.seed, Stream::AgentTrain);
    let points = eval_points(settings.online_iterations, settings.eval_every);
    let mut next_point = 0;
    let mut records = Vec::with_capacity(points.len());
    let mut snapshots = Vec::new();
    for it in 1..=settings.online_iterations {
        online_train_step(&mut ckpt, &mut env, &mut obs, &mut buffer, it, &mut train_rng, &mut env_rng)?;
        if let Some(log) = stream_log.as_mut() {
            log.push(buffer.get(buffer.len() - 1).clone());
        }
        if next_point < points.len() && points[next_point] == it {
            next_point += 1;
            let ordinal = options.eval_ordinal_offset + next_point as u64;
            let mut eval_rng = substream_indexed(settings.seed, Stream::Eval, ordinal);
            let (mean_return, std_return) =
                evaluate_policy(&ckpt, settings.env, settings.eval_episodes, &mut eval_rng)?;
            records.push(EvalRecord {
                phase: Phase::Online,
                iteration: it,
                env_steps: settings.hyper.warm_start_steps + it,
                mean_return,
                std_return,
                normalized_score: score_or_nan(mean_return, refs)?,
            });
            if options.snapshot_every_eval {
                snapshots.push((it, ckpt.clone()));
            }
            if let Some(threshold) = options.stop_at_score {
                if records.last().map_or(false, |r| r.normalized_score >= threshold) {
                    break;
                }
            }
        }
    }
    Ok(OnlineRun {
        ckpt,
        records,
        stream: stream_log.unwrap_or_default(),
        snapshots,
    })
}

/// Train a fresh world model for a run's augmentation: the run's master
/// seed fans into the model's init/train substreams, and normalization
/// statistics come from the dataset (so model and agent share one space).
pub fn train_augmentation_model(
    settings: &RunSettings,
    dataset: &OfflineDataset,
) -> Result<(WorldModel, WmCurve)> {
    dataset.validate()?;
    let mut cfg = settings.wm.clone();
    cfg.seed = settings.seed;
    let norm = compute_norm_stats(dataset, settings.norm_epsilon)?;
    let mut wm = WorldModel::init(dataset.obs_dim, dataset.act_dim, &cfg)?;
    let curve = train_world_model(&mut wm, dataset, &norm, &cfg)?;
    Ok((wm, curve))
}

/// A full two-phase experiment: offline pre-training on the dataset (with
/// optional model-based augmentation), then online fine-tuning seeded per
/// the init mode. Evaluation ordinals run contiguously across the phases.
///
/// Normalization statistics travel with the networks: when any pre-trained
/// network carries over, the online phase keeps the offline statistics
/// frozen; with `init_mode = none` nothing carries over and the online
/// phase runs on identity statistics — which makes it bit-identical to a
/// standalone online run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub offline_ckpt: AgentCheckpoint,
    pub final_ckpt: AgentCheckpoint,
    /// Offline records (env_steps = 0) followed by online records.
    pub records: Vec<EvalRecord>,
    /// The model trained inline for augmentation; `None` when one was
    /// supplied by the caller or augmentation is off.
    pub wm: Option<WorldModel>,
    pub wm_curve: WmCurve,
}

pub fn run_experiment(
    settings: &RunSettings,
    dataset: &OfflineDataset,
    wm: Option<&WorldModel>,
    refs: Option<&Refs>,
) -> Result<ExperimentOutcome> {
    settings.validate()?;
    let (trained, wm_curve) = if settings.augment && wm.is_none() {
        let (m, c) = train_augmentation_model(settings, dataset)?;
        (Some(m), c)
    } else {
        (None, WmCurve::new())
    };
    let model = wm.or(trained.as_ref());
    let (offline_ckpt, mut records) = run_offline_phase(settings, dataset, model, refs)?;
    let online_norm = if settings.init_mode == InitMode::None {
        NormStats::identity(EnvSpec::for_kind(settings.env).obs_dim)
    } else {
        offline_ckpt.norm_stats.clone()
    };
    let options = OnlineOptions {
        eval_ordinal_offset: records.len() as u64,
        ..OnlineOptions::default()
    };
    let online = run_online_phase(settings, Some(&offline_ckpt), &online_norm, refs, &options)?;
    records.extend(online.records);
    Ok(ExperimentOutcome {
        offline_ckpt,
        final_ckpt: online.ckpt,
        records,
        wm: trained,
        wm_curve,
    })
}

/// Per-step critic values along one deterministic episode, with the
/// discounted-return range any admissible Q must respect.
#[derive(Debug, Clone)]
pub struct CriticAnalysis {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    /// `r_min / (1 - γ)` — the most negative admissible value.
    pub bound_low: f64,
    /// 0 — rewards never exceed it.
    pub bound_high: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Values outside the tolerance band `[1.2·bound_low, 0.05·|bound_low|]`
    /// (20% slack below, 5% above zero), over both critics.
    pub flagged: usize,
}

/// Score every (state, action) of one deterministic `expert` episode with
/// the analyzed checkpoint's critics, in that checkpoint's normalization
/// space. A well-scaled critic stays inside the discounted-return range
/// even on states it never trained on.
pub fn analyze_critic<R: RngCore>(
    ckpt: &AgentCheckpoint,
    expert: &AgentCheckpoint,
    kind: EnvKind,
    rng: &mut R,
) -> Result<CriticAnalysis> {
    let spec = EnvSpec::for_kind(kind);
    check_policy_dims(ckpt, &spec)?;
    let pairs = rollout_episode(expert, kind, rng)?;
    let n = pairs.len();
    let mut states = Matrix::zeros(n, spec.obs_dim);
    let mut actions = Matrix::zeros(n, spec.act_dim);
    for (i, (obs, action)) in pairs.iter().enumerate() {
        states.row_mut(i).copy_from_slice(obs);
        actions.row_mut(i).copy_from_slice(action);
    }
    ckpt.norm_stats.normalize_rows(&mut states);
    let (q1, q2) = ckpt.q_values(&states, &actions)?;

    let bound_low = reward_min(kind) / (1.0 - ckpt.hyper.discount);
    let bound_high = 0.0;
    let tol_low = 1.2 * bound_low;
    let tol_high = 0.05 * crate::math::fabs(bound_low);
    let all = q1.iter().chain(q2.iter());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut flagged = 0;
    for &q in all {
        lo = lo.min(q);
        hi = hi.max(q);
        sum += q;
        if q < tol_low || q > tol_high {
            flagged += 1;
        }
    }
    Ok(CriticAnalysis {
        bound_low,
        bound_high,
        min: lo,
        max: hi,
        mean: sum / (2 * n) as f64,
        flagged,
        q1,
        q2,
    })
}

/// How to produce score references and source policies for an environment.
#[derive(Debug, Clone)]
pub struct CalibrationSettings {
    pub env: EnvKind,
    pub seed: u64,
    pub hyper: Hyperparams,
    /// Online iterations of the from-scratch reference run.
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes behind each of the two reference returns.
    pub ref_episodes: usize,
    /// Minimum normalized score for a snapshot to count as the medium
    /// policy.
    pub medium_threshold: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            env: EnvKind::Pendulum,
            seed: 0,
            hyper: Hyperparams::default(),
            iterations: 50_000,
            eval_every: 5_000,
            eval_episodes: 10,
            ref_episodes: 20,
            medium_threshold: 40.0,
        }
    }
}

/// Products of a calibration run.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub refs: Refs,
    /// The final checkpoint of the reference run (or the supplied override).
    pub expert: AgentCheckpoint,
    /// First snapshot at or above the medium threshold, with its score.
    pub medium: Option<(AgentCheckpoint, f64)>,
    /// Replay insertion stream of the reference run; the source of
    /// medium_replay datasets. Empty when an override skipped training.
    pub stream: Vec<Transition>,
    /// The reference run's curve, scored against the fresh references.
    pub records: Vec<EvalRecord>,
}

/// Establish score references for an environment, and with them the medium
/// policy and replay stream that checkpoint-dependent dataset flavors need.
///
/// Without an override this trains a from-scratch online agent (snapshotting
/// at every evaluation and recording the insertion stream), takes the final
/// checkpoint as the expert, then measures both references on indexed
/// `Calibration` substreams: index 0 drives the uniform-random episodes,
/// index 1 the expert's. The run's curve is then re-scored against those
/// references, and the medium policy is the earliest snapshot scoring at or
/// above the threshold.
///
/// With `expert_override`, training is skipped and only the references are
/// measured; no medium policy or stream is produced.
pub fn calibrate_references(
    cal: &CalibrationSettings,
    expert_override: Option<&AgentCheckpoint>,
) -> Result<CalibrationOutcome> {
    if cal.ref_episodes == 0 {
        return Err(Error::Config("ref_episodes must be positive".into()));
    }
    if !cal.medium_threshold.is_finite() {
        return Err(Error::Config("medium_threshold must be finite".into()));
    }
    let spec = EnvSpec::for_kind(cal.env);

    let (expert, mut records, stream, snapshots) = match expert_override {
        Some(ckpt) => {
            check_policy_dims(ckpt, &spec)?;
            (ckpt.clone(), Vec::new(), Vec::new(), Vec::new())
        }
        None => {
            let settings = RunSettings {
                env: cal.env,
                seed: cal.seed,
                wm: WmConfig::default(),
                hyper: cal.hyper.clone(),
                offline_iterations: 0,
                online_iterations: cal.iterations,
                eval_every: cal.eval_every,
                eval_episodes: cal.eval_episodes,
                init_mode: InitMode::None,
                augment: false,
                norm_epsilon: DEFAULT_NORM_EPSILON,
            };
            let options = OnlineOptions {
                eval_ordinal_offset: 0,
                capture_stream: true,
                snapshot_every_eval: true,
                stop_at_score: None,
            };
            let run = run_online_phase(
                &settings,
                None,
                &NormStats::identity(spec.obs_dim),
                None,
                &options,
            )?;
            (run.ckpt, run.records, run.stream, run.snapshots)
        }
    };

    let mut random_rng = substream_indexed(cal.seed, Stream::Calibration, 0);
    let (random_ref, _) = uniform_policy_return(cal.env, cal.ref_episodes, &mut random_rng)?;
    let mut expert_rng = substream_indexed(cal.seed, Stream::Calibration, 1);
    let (expert_ref, _) = evaluate_policy(&expert, cal.env, cal.ref_episodes, &mut expert_rng)?;
    if !(expert_ref > random_ref) {
        return Err(Error::Training(format!(
            "calibration produced no usable expert: expert return {expert_ref} does not exceed random return {random_ref}"
        )));
    }
    let refs = Refs { env_name: spec.name.clone(), random_ref, expert_ref };
    rescore_records(&mut records, &refs)?;

    let mut medium = None;
    for ((it, ckpt), record) in snapshots.into_iter().zip(records.iter()) {
        debug_assert_eq!(record.iteration, it);
        if record.normalized_score >= cal.medium_threshold {
            medium = Some((ckpt, record.normalized_score));
            break;
        }
    }
    Ok(CalibrationOutcome { refs, expert, medium, stream, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Phase;
    use crate::data::{generate_dataset, Flavor, GenerationSources};
    use alloc::string::ToString;
    use alloc::vec;

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            hidden: vec![16, 16],
            batch_size: 8,
            warm_start_steps: 40,
            buffer_capacity: 10_000,
            ..Hyperparams::default()
        }
    }

    fn small_settings(seed: u64) -> RunSettings {
        RunSettings {
            env: EnvKind::PointMass,
            seed,
            wm: WmConfig {
                hidden: vec![16, 16],
                iterations: 0,
                batch_size: 8,
                ..WmConfig::default()
            },
            hyper: small_hyper(),
            offline_iterations: 12,
            online_iterations: 10,
            eval_every: 5,
            eval_episodes: 2,
            init_mode: InitMode::Both,
            augment: false,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }

    fn pointmass_dataset(size: usize, seed: u64) -> OfflineDataset {
        generate_dataset(
            EnvKind::PointMass,
            Flavor::Random,
            size,
            seed,
            &GenerationSources::default(),
        )
        .expect("random flavor needs no sources")
    }

    fn flat_params(ckpt: &AgentCheckpoint) -> Vec<f64> {
        let mut out = ckpt.actor.params_flat();
        out.extend(ckpt.critic1.params_flat());
        out.extend(ckpt.critic2.params_flat());
        out.extend(ckpt.target_actor.params_flat());
        out.extend(ckpt.target_critic1.params_flat());
        out.extend(ckpt.target_critic2.params_flat());
        out
    }

    fn test_refs() -> Refs {
        Refs { env_name: "pointmass".to_string(), random_ref: -80.0, expert_ref: -20.0 }
    }

    #[test]
    fn normalized_score_anchors_and_affine_behavior() {
        let refs = test_refs();
        assert_eq!(normalized_score(-80.0, &refs).unwrap(), 0.0);
        assert_eq!(normalized_score(-20.0, &refs).unwrap(), 100.0);
        assert_eq!(normalized_score(-50.0, &refs).unwrap(), 50.0);
        // Beyond the anchors the map stays affine.
        assert_eq!(normalized_score(10.0, &refs).unwrap(), 150.0);
        assert_eq!(normalized_score(-110.0, &refs).unwrap(), -50.0);

        let degenerate = Refs { env_name: "pointmass".to_string(), random_ref: 1.0, expert_ref: 1.0 };
        assert!(normalized_score(0.0, &degenerate).is_err());
        let inverted = Refs { env_name: "pointmass".to_string(), random_ref: 5.0, expert_ref: 1.0 };
        assert!(normalized_score(0.0, &inverted).is_err());
    }

    #[test]
    fn eval_points_cover_multiples_and_partial_tail() {
        assert_eq!(eval_points(60, 25), vec![25, 50, 60]);
        assert_eq!(eval_points(50, 25), vec![25, 50]);
        assert_eq!(eval_points(0, 5), Vec::<usize>::new());
        assert_eq!(eval_points(3, 5), vec![3]);
        assert_eq!(eval_points(200_000, 5_000).len(), 40);
        assert_eq!(*eval_points(200_000, 5_000).last().unwrap(), 200_000);
    }

    #[test]
    fn evaluation_is_deterministic_and_single_episode_has_zero_std() {
        let mut rng = substream(7, Stream::AgentInit);
        let ckpt = AgentCheckpoint::init(
            4,
            2,
            1.0,
            small_hyper(),
            NormStats::identity(4),
            Phase::Online,
            &mut rng,
        )
        .unwrap();

        let mut e1 = substream_indexed(7, Stream::Eval, 3);
        let mut e2 = substream_indexed(7, Stream::Eval, 3);
        let a = evaluate_policy(&ckpt, EnvKind::PointMass, 4, &mut e1).unwrap();
        let b = evaluate_policy(&ckpt, EnvKind::PointMass, 4, &mut e2).unwrap();
        assert_eq!(a, b);

        let mut e3 = substream_indexed(7, Stream::Eval, 4);
        let (_, std_one) = evaluate_policy(&ckpt, EnvKind::PointMass, 1, &mut e3).unwrap();
        assert_eq!(std_one, 0.0);

        // Pendulum-sized policy against pointmass is a shape error.
        let mut rng_p = substream(7, Stream::AgentInit);
        let pend = AgentCheckpoint::init(
            3,
            1,
            2.0,
            small_hyper(),
            NormStats::identity(3),
            Phase::Online,
            &mut rng_p,
        )
        .unwrap();
        assert!(evaluate_policy(&pend, EnvKind::PointMass, 1, &mut e3).is_err());
    }

    #[test]
    fn init_modes_compose_fresh_and_pretrained_networks() {
        let dataset = pointmass_dataset(600, 11);
        let mut settings = small_settings(11);
        settings.offline_iterations = 6;
        settings.online_iterations = 0;
        settings.hyper.warm_start_steps = 0;
        let (offline_ckpt, _) = run_offline_phase(&settings, &dataset, None, None).unwrap();

        // The reference for "fresh": what init draws from the restarted
        // substream with the offline stats.
        let spec = EnvSpec::for_kind(settings.env);
        let mut init_rng = substream(settings.seed, Stream::AgentInit);
        let fresh = AgentCheckpoint::init(
            spec.obs_dim,
            spec.act_dim,
            spec.action_bound(),
            settings.hyper.clone(),
            offline_ckpt.norm_stats.clone(),
            Phase::Online,
            &mut init_rng,
        )
        .unwrap();

        for mode in [InitMode::Both, InitMode::ActorOnly, InitMode::CriticOnly, InitMode::None] {
            settings.init_mode = mode;
            let run = run_online_phase(
                &settings,
                Some(&offline_ckpt),
                &offline_ckpt.norm_stats,
                None,
                &OnlineOptions::default(),
            )
            .unwrap();
            let expect_actor = match mode {
                InitMode::Both | InitMode::ActorOnly => &offline_ckpt.actor,
                _ => &fresh.actor,
            };
            let expect_critic = match mode {
                InitMode::Both | InitMode::CriticOnly => &offline_ckpt.critic1,
                _ => &fresh.critic1,
            };
            assert_eq!(run.ckpt.actor.params_flat(), expect_actor.params_flat());
            assert_eq!(run.ckpt.critic1.params_flat(), expect_critic.params_flat());
            // Targets are exact copies and Adam state is clean regardless of
            // where the network came from.
            assert_eq!(run.ckpt.target_actor.params_flat(), run.ckpt.actor.params_flat());
            assert_eq!(run.ckpt.target_critic1.params_flat(), run.ckpt.critic1.params_flat());
            assert_eq!(run.ckpt.actor.adam.step, 0);
            assert_eq!(run.ckpt.critic1.adam.step, 0);
            assert_eq!(run.ckpt.phase, Phase::Online);
        }

        // A pre-trained checkpoint is mandatory unless the mode is none.
        settings.init_mode = InitMode::Both;
        assert!(run_online_phase(
            &settings,
            None,
            &offline_ckpt.norm_stats,
            None,
            &OnlineOptions::default()
        )
        .is_err());
        settings.init_mode = InitMode::None;
        assert!(run_online_phase(
            &settings,
            None,
            &offline_ckpt.norm_stats,
            None,
            &OnlineOptions::default()
        )
        .is_ok());
    }

    #[test]
    fn online_bookkeeping_counts_steps_and_pairs_eval_streams() {
        let mut settings = small_settings(3);
        settings.online_iterations = 60;
        settings.eval_every = 25;
        settings.init_mode = InitMode::None;
        settings.hyper.warm_start_steps = 40;
        let options = OnlineOptions {
            eval_ordinal_offset: 0,
            capture_stream: true,
            snapshot_every_eval: true,
            stop_at_score: None,
        };
        let norm = NormStats::identity(4);
        let run = run_online_phase(&settings, None, &norm, None, &options).unwrap();

        let iters: Vec<usize> = run.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![25, 50, 60]);
        for r in &run.records {
            assert_eq!(r.phase, Phase::Online);
            assert_eq!(r.env_steps, 40 + r.iteration);
            assert!(r.normalized_score.is_nan());
        }
        // Every environment interaction is on the stream: warm start plus
        // one per iteration.
        assert_eq!(run.stream.len(), 40 + 60);

        // Each record reproduces from its snapshot and the indexed
        // evaluation substream — the pairing the ablation comparisons rely
        // on.
        assert_eq!(run.snapshots.len(), 3);
        for (j, ((it, snap), record)) in run.snapshots.iter().zip(run.records.iter()).enumerate() {
            assert_eq!(*it, record.iteration);
            let mut eval_rng = substream_indexed(settings.seed, Stream::Eval, (j + 1) as u64);
            let (m, s) =
                evaluate_policy(snap, settings.env, settings.eval_episodes, &mut eval_rng).unwrap();
            assert_eq!((m, s), (record.mean_return, record.std_return));
        }
    }

    #[test]
    fn experiment_merges_phases_and_reruns_bit_identically() {
        let dataset = pointmass_dataset(600, 5);
        let mut settings = small_settings(5);
        settings.offline_iterations = 40;
        settings.online_iterations = 50;
        settings.eval_every = 20;
        settings.hyper.warm_start_steps = 30;
        let refs = test_refs();

        let a = run_experiment(&settings, &dataset, None, Some(&refs)).unwrap();
        let b = run_experiment(&settings, &dataset, None, Some(&refs)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(flat_params(&a.final_ckpt), flat_params(&b.final_ckpt));
        assert_eq!(flat_params(&a.offline_ckpt), flat_params(&b.offline_ckpt));

        let phases: Vec<(Phase, usize, usize)> =
            a.records.iter().map(|r| (r.phase, r.iteration, r.env_steps)).collect();
        assert_eq!(
            phases,
            vec![
                (Phase::Offline, 20, 0),
                (Phase::Offline, 40, 0),
                (Phase::Online, 20, 50),
                (Phase::Online, 40, 70),
                (Phase::Online, 50, 80),
            ]
        );
        for r in &a.records {
            assert!(r.normalized_score.is_finite());
        }
        assert_eq!(a.offline_ckpt.phase, Phase::Offline);
        assert_eq!(a.final_ckpt.phase, Phase::Online);
    }

    #[test]
    fn zero_fraction_augmentation_matches_no_model_run() {
        let dataset = pointmass_dataset(600, 9);
        let mut settings = small_settings(9);
        settings.offline_iterations = 30;
        settings.online_iterations = 8;
        settings.hyper.warm_start_steps = 20;

        settings.augment = false;
        let plain = run_experiment(&settings, &dataset, None, None).unwrap();
        assert!(plain.wm.is_none());

        // Auto-trained model (0 iterations here), fraction 0: the model's
        // substreams never touch the agent's, and a zero fraction draws
        // nothing, so the runs match bitwise.
        settings.augment = true;
        settings.hyper.augment_fraction = 0.0;
        let ours = run_experiment(&settings, &dataset, None, None).unwrap();
        assert!(ours.wm.is_some());

        assert_eq!(flat_params(&plain.final_ckpt), flat_params(&ours.final_ckpt));
        let key = |rs: &[EvalRecord]| -> Vec<(usize, f64, f64)> {
            rs.iter().map(|r| (r.iteration, r.mean_return, r.std_return)).collect()
        };
        assert_eq!(key(&plain.records), key(&ours.records));

        // At the phase level, augmentation without a model — or with a
        // raw-space model — is a usage error.
        assert!(run_offline_phase(&settings, &dataset, None, None).is_err());
        let mut raw_wm = WorldModel::init(4, 2, &settings.wm).unwrap();
        raw_wm.trained_on_normalized = false;
        assert!(run_offline_phase(&settings, &dataset, Some(&raw_wm), None).is_err());
    }

    #[test]
    fn score_threshold_stops_at_first_crossing_and_requires_refs() {
        let mut settings = small_settings(23);
        settings.online_iterations = 30;
        settings.eval_every = 10;
        settings.init_mode = InitMode::None;
        settings.hyper.warm_start_steps = 20;
        let norm = NormStats::identity(4);
        let refs = test_refs();

        // Any finite return clears a threshold this low, so the run stops
        // at the very first evaluation.
        let stop = OnlineOptions { stop_at_score: Some(-1e12), ..OnlineOptions::default() };
        let run = run_online_phase(&settings, None, &norm, Some(&refs), &stop).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].iteration, 10);

        // An unreachable threshold runs the full budget.
        let never = OnlineOptions { stop_at_score: Some(1e12), ..OnlineOptions::default() };
        let run = run_online_phase(&settings, None, &norm, Some(&refs), &never).unwrap();
        assert_eq!(run.records.len(), 3);

        // The threshold is meaningless without references.
        assert!(run_online_phase(&settings, None, &norm, None, &stop).is_err());
    }

    #[test]
    fn none_mode_experiment_is_bit_identical_to_standalone_online() {
        let dataset = pointmass_dataset(400, 17);
        let mut settings = small_settings(17);
        settings.offline_iterations = 0;
        settings.online_iterations = 30;
        settings.eval_every = 10;
        settings.init_mode = InitMode::None;
        settings.augment = false;
        settings.hyper.warm_start_steps = 25;
        let refs = test_refs();

        let exp = run_experiment(&settings, &dataset, None, Some(&refs)).unwrap();
        let standalone = run_online_phase(
            &settings,
            None,
            &NormStats::identity(4),
            Some(&refs),
            &OnlineOptions::default(),
        )
        .unwrap();
        assert_eq!(exp.records, standalone.records);
        assert_eq!(flat_params(&exp.final_ckpt), flat_params(&standalone.ckpt));
    }

    #[test]
    fn critic_analysis_scores_a_full_expert_episode_against_bounds() {
        let expert = handmade_pointmass_expert();
        let mut rng = substream(13, Stream::AgentInit);
        let mut ckpt = AgentCheckpoint::init(
            4,
            2,
            1.0,
            small_hyper(),
            NormStats::identity(4),
            Phase::Online,
            &mut rng,
        )
        .unwrap();
        // Zero both critics: every Q is exactly 0, inside the band.
        ckpt.critic1.for_each_param_mut(|p| *p = 0.0);
        ckpt.critic2.for_each_param_mut(|p| *p = 0.0);

        let mut roll_rng = substream(13, Stream::Eval);
        let analysis = analyze_critic(&ckpt, &expert, EnvKind::PointMass, &mut roll_rng).unwrap();
        assert_eq!(analysis.q1.len(), 100);
        assert_eq!(analysis.q2.len(), 100);
        assert!(analysis.q1.iter().all(|&q| q == 0.0));
        assert_eq!((analysis.min, analysis.max, analysis.mean), (0.0, 0.0, 0.0));
        assert_eq!(analysis.flagged, 0);
        let expected_low = reward_min(EnvKind::PointMass) / (1.0 - ckpt.hyper.discount);
        assert_eq!(analysis.bound_low, expected_low);
        assert_eq!(analysis.bound_high, 0.0);

        // Pin critic1 to a constant far below the band: all of its values
        // flag, critic2's zeros do not.
        *ckpt.critic1.biases.last_mut().unwrap().last_mut().unwrap() = 1.5 * expected_low;
        let mut roll_rng = substream(13, Stream::Eval);
        let analysis = analyze_critic(&ckpt, &expert, EnvKind::PointMass, &mut roll_rng).unwrap();
        assert_eq!(analysis.flagged, 100);
        assert_eq!(analysis.min, 1.5 * expected_low);

        // Environment mismatch — on either checkpoint — is caught before
        // any rollout.
        let mut roll_rng = substream(13, Stream::Eval);
        assert!(analyze_critic(&ckpt, &expert, EnvKind::Pendulum, &mut roll_rng).is_err());
        let mut rng_p = substream(13, Stream::AgentInit);
        let pend = AgentCheckpoint::init(
            3,
            1,
            2.0,
            small_hyper(),
            NormStats::identity(3),
            Phase::Online,
            &mut rng_p,
        )
        .unwrap();
        assert!(analyze_critic(&ckpt, &pend, EnvKind::PointMass, &mut roll_rng).is_err());
    }

    /// A hand-built pointmass policy: accelerate against position and
    /// velocity, i.e. `a = tanh(-p - v)` per axis. Good enough to beat
    /// uniform random actions by a wide margin.
    fn handmade_pointmass_expert() -> AgentCheckpoint {
        let mut rng = substream(0, Stream::AgentInit);
        let mut ckpt = AgentCheckpoint::init(
            4,
            2,
            1.0,
            Hyperparams { hidden: vec![], ..small_hyper() },
            NormStats::identity(4),
            Phase::Online,
            &mut rng,
        )
        .unwrap();
        ckpt.actor.for_each_param_mut(|p| *p = 0.0);
        let w = &mut ckpt.actor.weights[0];
        debug_assert_eq!((w.rows, w.cols), (4, 2));
        w.set(0, 0, -1.0); // ax ← −px
        w.set(2, 0, -1.0); // ax ← −vx
        w.set(1, 1, -1.0); // ay ← −py
        w.set(3, 1, -1.0); // ay ← −vy
        ckpt.target_actor = ckpt.actor.clone();
        ckpt
    }

    #[test]
    fn calibration_with_override_measures_refs_only() {
        let expert = handmade_pointmass_expert();
        let cal = CalibrationSettings {
            env: EnvKind::PointMass,
            seed: 21,
            hyper: small_hyper(),
            iterations: 0,
            eval_every: 5,
            eval_episodes: 2,
            ref_episodes: 6,
            medium_threshold: 40.0,
        };
        let out = calibrate_references(&cal, Some(&expert)).unwrap();
        assert_eq!(out.refs.env_name, "pointmass");
        assert!(out.refs.expert_ref > out.refs.random_ref);
        assert!(out.medium.is_none());
        assert!(out.stream.is_empty());
        assert!(out.records.is_empty());
        assert_eq!(
            out.expert.actor.params_flat(),
            expert.actor.params_flat()
        );

        // The reference draws are pinned to their calibration substreams.
        let mut random_rng = substream_indexed(cal.seed, Stream::Calibration, 0);
        let (expect_random, _) =
            uniform_policy_return(cal.env, cal.ref_episodes, &mut random_rng).unwrap();
        assert_eq!(out.refs.random_ref, expect_random);
        let mut expert_rng = substream_indexed(cal.seed, Stream::Calibration, 1);
        let (expect_expert, _) =
            evaluate_policy(&expert, cal.env, cal.ref_episodes, &mut expert_rng).unwrap();
        assert_eq!(out.refs.expert_ref, expect_expert);
    }

    #[test]
    fn full_calibration_trains_an_expert_and_finds_a_medium_policy() {
        let cal = CalibrationSettings {
            env: EnvKind::PointMass,
            seed: 2,
            hyper: Hyperparams {
                hidden: vec![32, 32],
                batch_size: 32,
                warm_start_steps: 300,
                buffer_capacity: 10_000,
                actor_lr: 1e-3,
                critic_lr: 1e-3,
                ..Hyperparams::default()
            },
            iterations: 6_000,
            eval_every: 1_500,
            eval_episodes: 3,
            ref_episodes: 5,
            medium_threshold: 40.0,
        };
        let out = calibrate_references(&cal, None).unwrap();
        assert!(
            out.refs.expert_ref > out.refs.random_ref,
            "trained expert {} should beat random {}",
            out.refs.expert_ref,
            out.refs.random_ref
        );
        assert_eq!(out.stream.len(), 300 + 6_000);
        assert_eq!(out.records.len(), 4);
        for r in &out.records {
            assert!(r.normalized_score.is_finite());
        }
        let (_, medium_score) = out.medium.as_ref().expect("some snapshot reaches the threshold");
        assert!(*medium_score >= 40.0);
        // The chosen snapshot is the earliest qualifying one.
        let first_qualifying = out
            .records
            .iter()
            .find(|r| r.normalized_score >= 40.0)
            .expect("a qualifying record exists when medium does");
        assert_eq!(*medium_score, first_qualifying.normalized_score);
    }
}
