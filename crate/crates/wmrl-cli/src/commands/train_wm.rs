//! `train-wm`: fit a world model to an offline dataset, optionally scoring
//! its one-step predictions on a held-out split.

use std::path::PathBuf;

use clap::Args;
use wmrl_core::data::{
    compute_norm_stats, next_state_variance, split_holdout, DEFAULT_NORM_EPSILON,
};
use wmrl_core::math::mean;
use wmrl_core::wm::{train_world_model, KlDirection, WmConfig, WorldModel};

use crate::config::{echo_pairs, resolve_seed_flag, sidecar_path, wm_pairs, write_echo};
use crate::error::{CliError, Result};
use crate::formats::{csv, orld, wmck};

#[derive(Debug, Args)]
pub struct TrainWmArgs {
    /// Training dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output model checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (falls back to WMRL_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Latent width, or `auto` to match the observation dimension.
    #[arg(long)]
    pub latent_dim: Option<String>,
    /// Comma-separated hidden widths, e.g. 512,512,512.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Divergence direction: standard or reversed.
    #[arg(long)]
    pub kl_direction: Option<String>,
    #[arg(long)]
    pub curve_every: Option<usize>,
    /// Write the training curve CSV here.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
    #[arg(long)]
    pub norm_epsilon: Option<f64>,
    /// Hold out this many transitions (never trained on) and report the
    /// mean-mode prediction MSE against their next-state variance.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

pub fn cmd_train_wm(args: &TrainWmArgs) -> Result<()> {
    let seed = resolve_seed_flag(args.seed)?;
    let norm_epsilon = args.norm_epsilon.unwrap_or(DEFAULT_NORM_EPSILON);

    let mut cfg = WmConfig { seed, ..WmConfig::default() };
    if let Some(raw) = &args.latent_dim {
        cfg.latent_dim = if raw == "auto" {
            None
        } else {
            Some(raw.parse::<usize>().map_err(|_| {
                CliError::usage(format!("--latent-dim '{raw}' is not a width or 'auto'"))
            })?)
        };
    }
    if let Some(raw) = &args.hidden {
        let dims: Result<Vec<usize>> = raw
            .split(',')
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    CliError::usage(format!("--hidden '{raw}' is not a comma-separated list"))
                })
            })
            .collect();
        cfg.hidden = dims?;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(raw) = &args.kl_direction {
        cfg.kl_direction = KlDirection::parse(raw)?;
    }
    if let Some(v) = args.curve_every {
        cfg.curve_every = v;
    }

    let full = orld::load(&args.dataset)?;
    let (train, held) = if args.holdout > 0 {
        let (t, h) = split_holdout(&full, args.holdout, seed)?;
        (t, Some(h))
    } else {
        (full, None)
    };

    let norm = compute_norm_stats(&train, norm_epsilon)?;
    let mut wm = WorldModel::init(train.obs_dim, train.act_dim, &cfg)?;
    let curve = train_world_model(&mut wm, &train, &norm, &cfg)?;
    wmck::save(&args.out, &wm, &norm)?;
    if let Some(curve_path) = &args.curve_out {
        csv::save_wm_curve(curve_path, &curve)?;
    }

    let mut pairs: Vec<(String, String)> = vec![
        ("dataset".into(), args.dataset.display().to_string()),
        ("seed".into(), seed.to_string()),
        ("norm_epsilon".into(), norm_epsilon.to_string()),
        ("holdout".into(), args.holdout.to_string()),
    ];
    pairs.extend(wm_pairs(&cfg));
    write_echo(&sidecar_path(&args.out), &echo_pairs(&pairs))?;

    if let Some((iter, last)) = curve.last() {
        println!(
            "trained {} iterations on {} transitions (loss at {iter}: total {:.6}, \
             recon {:.6}, kl {:.6}, state {:.6}, latent {:.6})",
            cfg.iterations,
            train.len(),
            last.total,
            last.recon_elbo,
            last.kl,
            last.state_recon,
            last.latent_recon
        );
    }
    if let Some(held) = &held {
        let mse = wm.mean_mode_mse(held, &norm)?;
        let variance = mean(&next_state_variance(held, &norm));
        println!(
            "holdout ({} transitions): mean-mode mse {:.6}, next-state variance {:.6}, \
             ratio {:.4}",
            held.len(),
            mse,
            variance,
            mse / variance
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
