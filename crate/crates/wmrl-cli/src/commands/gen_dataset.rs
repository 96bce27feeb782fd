//! `gen-dataset`: build an offline dataset of a given flavor and size.

use std::path::PathBuf;

use clap::Args;
use wmrl_core::data::{generate_dataset, Flavor, GenerationSources};
use wmrl_core::envs::{EnvKind, EnvSpec};

use crate::commands::check_ckpt_env;
use crate::config::{echo_pairs, resolve_seed_flag, sidecar_path, write_echo};
use crate::error::{CliError, Result};
use crate::formats::{agck, orld};

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Environment: pendulum or pointmass.
    #[arg(long)]
    pub env: String,
    /// Flavor: random, medium, medium_replay, or medium_expert.
    #[arg(long)]
    pub flavor: String,
    /// Number of transitions to produce.
    #[arg(long)]
    pub size: usize,
    /// Master seed (falls back to WMRL_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,
    /// Medium-policy checkpoint (flavors medium and medium_expert).
    #[arg(long)]
    pub medium_ckpt: Option<PathBuf>,
    /// Expert-policy checkpoint (flavor medium_expert).
    #[arg(long)]
    pub expert_ckpt: Option<PathBuf>,
    /// Recorded replay stream (flavor medium_replay).
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Gaussian action noise added to policy rollouts.
    #[arg(long)]
    pub noise_std: Option<f64>,
}

pub fn cmd_gen_dataset(args: &GenDatasetArgs) -> Result<()> {
    let kind = EnvKind::parse(&args.env)?;
    let flavor = Flavor::parse(&args.flavor)?;
    let seed = resolve_seed_flag(args.seed)?;
    let spec = EnvSpec::for_kind(kind);

    let needs = |flag: &str| {
        CliError::usage(format!("flavor '{}' requires {flag}", flavor.name()))
    };
    let medium = match (flavor, &args.medium_ckpt) {
        (Flavor::Medium | Flavor::MediumExpert, None) => return Err(needs("--medium-ckpt")),
        (_, Some(path)) => {
            let ckpt = agck::load(path)?;
            check_ckpt_env(&ckpt, &spec, "--medium-ckpt")?;
            Some(ckpt)
        }
        _ => None,
    };
    let expert = match (flavor, &args.expert_ckpt) {
        (Flavor::MediumExpert, None) => return Err(needs("--expert-ckpt")),
        (_, Some(path)) => {
            let ckpt = agck::load(path)?;
            check_ckpt_env(&ckpt, &spec, "--expert-ckpt")?;
            Some(ckpt)
        }
        _ => None,
    };
    let stream = match (flavor, &args.stream) {
        (Flavor::MediumReplay, None) => return Err(needs("--stream")),
        (_, Some(path)) => {
            let ds = orld::load(path)?;
            if ds.env_name != spec.name {
                return Err(CliError::usage(format!(
                    "--stream is for env '{}', not '{}'",
                    ds.env_name, spec.name
                )));
            }
            Some(ds)
        }
        _ => None,
    };

    let mut sources = GenerationSources::default();
    if let Some(noise) = args.noise_std {
        sources.noise_std = noise;
    }
    sources.medium = medium.as_ref().map(|c| (&c.actor, &c.norm_stats));
    sources.expert = expert.as_ref().map(|c| (&c.actor, &c.norm_stats));
    sources.replay_stream = stream.as_ref().map(|d| d.transitions.as_slice());

    let dataset = generate_dataset(kind, flavor, args.size, seed, &sources)?;
    orld::save(&args.out, &dataset)?;

    let mut pairs: Vec<(String, String)> = vec![
        ("env".into(), spec.name.clone()),
        ("flavor".into(), flavor.name().to_string()),
        ("size".into(), args.size.to_string()),
        ("seed".into(), seed.to_string()),
        ("noise_std".into(), sources.noise_std.to_string()),
    ];
    for (key, path) in [
        ("medium_ckpt", &args.medium_ckpt),
        ("expert_ckpt", &args.expert_ckpt),
        ("stream", &args.stream),
    ] {
        if let Some(p) = path {
            pairs.push((key.into(), p.display().to_string()));
        }
    }
    write_echo(&sidecar_path(&args.out), &echo_pairs(&pairs))?;

    let mean_reward = dataset.transitions.iter().map(|t| t.reward).sum::<f64>()
        / dataset.len() as f64;
    println!(
        "wrote {} ({} {} transitions, mean reward {:.4})",
        args.out.display(),
        dataset.len(),
        flavor.name(),
        mean_reward
    );
    Ok(())
}
