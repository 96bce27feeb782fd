//! `calibrate`: establish the random/expert score references for an
//! environment, and with them the medium checkpoint and replay stream that
//! checkpoint-dependent dataset flavors are built from.

use std::path::PathBuf;

use clap::Args;
use wmrl_core::data::{Flavor, OfflineDataset};
use wmrl_core::envs::{EnvKind, EnvSpec};
use wmrl_core::pipeline::{calibrate_references, CalibrationSettings};
use wmrl_core::Error as CoreError;

use crate::commands::{check_ckpt_env, split_set_pair};
use crate::config::{echo_pairs, hyper_pairs, resolve_seed_flag, sidecar_path, write_echo, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{agck, csv, orld, refs as refs_format};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Environment: pendulum or pointmass.
    #[arg(long)]
    pub env: String,
    /// Output references file.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (falls back to WMRL_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episodes behind each reference return.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Online iterations of the from-scratch reference run.
    #[arg(long)]
    pub train_iterations: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Minimum normalized score for a snapshot to count as medium.
    #[arg(long)]
    pub medium_threshold: Option<f64>,
    /// Measure references against this expert instead of training one.
    #[arg(long)]
    pub expert_ckpt: Option<PathBuf>,
    /// Save the expert checkpoint here.
    #[arg(long)]
    pub out_expert: Option<PathBuf>,
    /// Save the medium checkpoint here (errors if no snapshot qualifies).
    #[arg(long)]
    pub out_medium: Option<PathBuf>,
    /// Save the reference run's replay stream here.
    #[arg(long)]
    pub out_stream: Option<PathBuf>,
    /// Save the reference run's learning curve here.
    #[arg(long)]
    pub out_curve: Option<PathBuf>,
    /// Agent hyperparameter override, e.g. --set exploration_noise=0.3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let kind = EnvKind::parse(&args.env)?;
    let seed = resolve_seed_flag(args.seed)?;
    let spec = EnvSpec::for_kind(kind);

    let mut cfg = RunConfig::default();
    let hyper_keys: Vec<String> =
        hyper_pairs(&cfg.hyper).into_iter().map(|(k, _)| k).collect();
    for raw in &args.set {
        let (key, value) = split_set_pair(raw)?;
        if !hyper_keys.iter().any(|k| k == key) {
            return Err(CliError::usage(format!(
                "--set key '{key}' is not an agent hyperparameter"
            )));
        }
        cfg.apply(key, value)?;
    }

    let defaults = CalibrationSettings::default();
    let cal = CalibrationSettings {
        env: kind,
        seed,
        hyper: cfg.hyper.clone(),
        iterations: args.train_iterations.unwrap_or(defaults.iterations),
        eval_every: args.eval_every.unwrap_or(defaults.eval_every),
        eval_episodes: args.eval_episodes.unwrap_or(defaults.eval_episodes),
        ref_episodes: args.episodes.unwrap_or(defaults.ref_episodes),
        medium_threshold: args.medium_threshold.unwrap_or(defaults.medium_threshold),
    };

    if args.out_stream.is_some() && args.expert_ckpt.is_some() {
        return Err(CliError::usage(
            "--out-stream needs a training run; it cannot be combined with --expert-ckpt",
        ));
    }

    let expert_override = match &args.expert_ckpt {
        Some(path) => {
            let ckpt = agck::load(path)?;
            check_ckpt_env(&ckpt, &spec, "--expert-ckpt")?;
            Some(ckpt)
        }
        None => None,
    };

    let outcome = calibrate_references(&cal, expert_override.as_ref())?;
    refs_format::save(&args.out, &outcome.refs)?;

    if let Some(path) = &args.out_expert {
        agck::save(path, &outcome.expert)?;
    }
    if let Some(path) = &args.out_medium {
        match &outcome.medium {
            Some((ckpt, score)) => {
                agck::save(path, ckpt)?;
                println!("medium checkpoint scored {score:.2} (threshold {})", cal.medium_threshold);
            }
            None => {
                return Err(CoreError::Training(format!(
                    "no snapshot reached the medium threshold {}",
                    cal.medium_threshold
                ))
                .into())
            }
        }
    }
    if let Some(path) = &args.out_stream {
        let stream = OfflineDataset {
            env_name: spec.name.clone(),
            obs_dim: spec.obs_dim,
            act_dim: spec.act_dim,
            transitions: outcome.stream.clone(),
            flavor: Flavor::Imported,
            seed,
        };
        orld::save(path, &stream)?;
    }
    if let Some(path) = &args.out_curve {
        csv::save_curve(path, &outcome.records)?;
    }

    let mut pairs: Vec<(String, String)> = vec![
        ("env".into(), spec.name.clone()),
        ("seed".into(), seed.to_string()),
        ("ref_episodes".into(), cal.ref_episodes.to_string()),
        ("train_iterations".into(), cal.iterations.to_string()),
        ("eval_every".into(), cal.eval_every.to_string()),
        ("eval_episodes".into(), cal.eval_episodes.to_string()),
        ("medium_threshold".into(), cal.medium_threshold.to_string()),
    ];
    if let Some(path) = &args.expert_ckpt {
        pairs.push(("expert_ckpt".into(), path.display().to_string()));
    }
    pairs.extend(hyper_pairs(&cal.hyper));
    write_echo(&sidecar_path(&args.out), &echo_pairs(&pairs))?;

    println!(
        "references for {}: random {:.4}, expert {:.4} ({} episodes each)",
        spec.name, outcome.refs.random_ref, outcome.refs.expert_ref, cal.ref_episodes
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
