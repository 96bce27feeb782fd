//! `analyze-critic`: score every step of one expert episode with a
//! checkpoint's critics and compare against the discounted-return range.
//! Diagnostic only — out-of-range values are reported, never asserted.

use std::path::PathBuf;

use clap::Args;
use wmrl_core::envs::{EnvKind, EnvSpec};
use wmrl_core::pipeline::analyze_critic;
use wmrl_core::rng::{substream, Stream};

use crate::commands::check_ckpt_env;
use crate::config::{echo_pairs, resolve_seed_flag, sidecar_path, write_echo};
use crate::error::Result;
use crate::formats::{agck, csv};

#[derive(Debug, Args)]
pub struct AnalyzeCriticArgs {
    /// Checkpoint whose critics are analyzed.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Environment: pendulum or pointmass.
    #[arg(long)]
    pub env: String,
    /// Policy that drives the analyzed episode.
    #[arg(long)]
    pub expert_ckpt: PathBuf,
    /// Master seed (falls back to WMRL_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_analyze_critic(args: &AnalyzeCriticArgs) -> Result<()> {
    let kind = EnvKind::parse(&args.env)?;
    let seed = resolve_seed_flag(args.seed)?;
    let spec = EnvSpec::for_kind(kind);

    let ckpt = agck::load(&args.checkpoint)?;
    check_ckpt_env(&ckpt, &spec, "--checkpoint")?;
    let expert = agck::load(&args.expert_ckpt)?;
    check_ckpt_env(&expert, &spec, "--expert-ckpt")?;

    let mut rng = substream(seed, Stream::Eval);
    let analysis = analyze_critic(&ckpt, &expert, kind, &mut rng)?;
    csv::save_analysis(&args.out, &analysis)?;

    let pairs: Vec<(String, String)> = vec![
        ("checkpoint".into(), args.checkpoint.display().to_string()),
        ("env".into(), spec.name.clone()),
        ("expert_ckpt".into(), args.expert_ckpt.display().to_string()),
        ("seed".into(), seed.to_string()),
    ];
    write_echo(&sidecar_path(&args.out), &echo_pairs(&pairs))?;

    println!(
        "{} steps: q in [{:.4}, {:.4}], mean {:.4}, admissible [{:.4}, {:.4}], \
         {} outside the tolerance band",
        analysis.q1.len(),
        analysis.min,
        analysis.max,
        analysis.mean,
        analysis.bound_low,
        analysis.bound_high,
        analysis.flagged
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
