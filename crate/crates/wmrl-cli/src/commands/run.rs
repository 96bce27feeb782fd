//! `run`: the full two-phase experiment — offline pre-training with optional
//! model-based augmentation, then online fine-tuning. Artifacts land in
//! `--out-dir` as they are produced, so an interrupted run keeps its
//! completed phases; the manifest is written last.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use wmrl_core::data::{compute_norm_stats, NormStats, OfflineDataset};
use wmrl_core::envs::EnvSpec;
use wmrl_core::pipeline::{
    run_offline_phase, run_online_phase, train_augmentation_model, EvalRecord, InitMode,
    OnlineOptions, Refs, RunSettings,
};
use wmrl_core::wm::{WmCurve, WorldModel};
use wmrl_core::Error as CoreError;

use crate::commands::split_set_pair;
use crate::config::{load_kv_file, write_echo, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{agck, csv, manifest, orld, refs as refs_format, wmck};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory that receives every artifact of this run.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Offline dataset (config key `dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Score references file (config key `refs`); required.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Environment (config key `env`).
    #[arg(long)]
    pub env: Option<String>,
    /// Master seed (beats the config file and WMRL_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Networks carried into the online phase (config key `init_mode`).
    #[arg(long)]
    pub init_mode: Option<String>,
    /// Model-based augmentation on or off (config key `augment`).
    #[arg(long)]
    pub augment: Option<bool>,
    /// Any config key, e.g. --set bc_weight=1.0. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Config resolution: defaults, then the file, then `--set` pairs in order,
/// then the dedicated flags. Overrides of file-set keys are logged.
fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut file_values: HashMap<String, String> = HashMap::new();
    if let Some(path) = &args.config {
        let pairs = load_kv_file(path)?;
        cfg.apply_all(&pairs)?;
        file_values = pairs.into_iter().collect();
    }

    let apply_override = |cfg: &mut RunConfig, key: &str, value: &str| -> Result<()> {
        if let Some(old) = file_values.get(key) {
            if old != value {
                eprintln!("override: {key}={value} (config file had {old})");
            }
        }
        cfg.apply(key, value)
    };

    for raw in &args.set {
        let (key, value) = split_set_pair(raw)?;
        apply_override(&mut cfg, key, value)?;
    }
    if let Some(env) = &args.env {
        apply_override(&mut cfg, "env", env)?;
    }
    if let Some(path) = &args.dataset {
        apply_override(&mut cfg, "dataset", &path.display().to_string())?;
    }
    if let Some(path) = &args.refs {
        apply_override(&mut cfg, "refs", &path.display().to_string())?;
    }
    if let Some(mode) = &args.init_mode {
        apply_override(&mut cfg, "init_mode", mode)?;
    }
    if let Some(augment) = args.augment {
        apply_override(&mut cfg, "augment", &augment.to_string())?;
    }
    cfg.resolve_seed(args.seed)?;
    Ok(cfg)
}

/// Load inputs, check they agree with the settings, and fail early —
/// before any artifact is written.
fn load_inputs(cfg: &RunConfig, settings: &RunSettings) -> Result<(OfflineDataset, Refs)> {
    let spec = EnvSpec::for_kind(settings.env);
    let dataset_path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::usage("a dataset is required (--dataset or config key)"))?;
    let refs_path = cfg
        .refs
        .as_ref()
        .ok_or_else(|| CliError::usage("score references are required (--refs or config key)"))?;
    let dataset = orld::load(dataset_path)?;
    if dataset.env_name != spec.name {
        return Err(CoreError::Config(format!(
            "dataset is for env '{}' but the run is on '{}'",
            dataset.env_name, spec.name
        ))
        .into());
    }
    let refs = refs_format::load(refs_path)?;
    if refs.env_name != spec.name {
        return Err(CoreError::Config(format!(
            "references are for env '{}' but the run is on '{}'",
            refs.env_name, spec.name
        ))
        .into());
    }
    Ok((dataset, refs))
}

/// The world model used for augmentation: the supplied checkpoint (whose
/// stored statistics must match the dataset exactly) or one trained inline.
fn augmentation_model(
    cfg: &RunConfig,
    settings: &RunSettings,
    dataset: &OfflineDataset,
) -> Result<Option<(WorldModel, NormStats, WmCurve)>> {
    if !settings.augment {
        return Ok(None);
    }
    match &cfg.wm_ckpt {
        Some(path) => {
            let (wm, stored) = wmck::load(path)?;
            let computed = compute_norm_stats(dataset, settings.norm_epsilon)?;
            if stored != computed {
                return Err(CoreError::Config(format!(
                    "{}: stored normalization statistics do not match the dataset",
                    path.display()
                ))
                .into());
            }
            Ok(Some((wm, stored, WmCurve::new())))
        }
        None => {
            let (wm, curve) = train_augmentation_model(settings, dataset)?;
            let norm = compute_norm_stats(dataset, settings.norm_epsilon)?;
            Ok(Some((wm, norm, curve)))
        }
    }
}

struct ArtifactLog {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl ArtifactLog {
    fn record(&mut self, name: &str) -> Result<()> {
        let digest = manifest::digest_file(&self.dir.join(name))?;
        self.entries.push((name.to_string(), digest));
        Ok(())
    }
}

fn last_score(records: &[EvalRecord]) -> f64 {
    records.last().map(|r| r.normalized_score).unwrap_or(f64::NAN)
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let settings = cfg.to_settings()?;
    let (dataset, refs) = load_inputs(&cfg, &settings)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::io(args.out_dir.clone(), e))?;
    let mut log = ArtifactLog { dir: args.out_dir.clone(), entries: Vec::new() };
    let path_of = |name: &str| args.out_dir.join(name);

    write_echo(&path_of("resolved_config.txt"), &cfg.echo())?;
    log.record("resolved_config.txt")?;

    let model = augmentation_model(&cfg, &settings, &dataset)?;
    if let Some((wm, norm, curve)) = &model {
        wmck::save(&path_of("wm.wmck"), wm, norm)?;
        log.record("wm.wmck")?;
        if !curve.is_empty() {
            csv::save_wm_curve(&path_of("wm_curve.csv"), curve)?;
            log.record("wm_curve.csv")?;
            if let Some((iter, last)) = curve.last() {
                println!("world model trained: loss {:.6} at iteration {iter}", last.total);
            }
        } else {
            println!("world model loaded from checkpoint");
        }
    }

    let wm_ref = model.as_ref().map(|(wm, _, _)| wm);
    let (offline_ckpt, mut records) =
        run_offline_phase(&settings, &dataset, wm_ref, Some(&refs))?;
    agck::save(&path_of("offline.agck"), &offline_ckpt)?;
    log.record("offline.agck")?;
    println!(
        "offline phase done: {} iterations, final normalized score {:.2}",
        settings.offline_iterations,
        last_score(&records)
    );

    let online_norm = if settings.init_mode == InitMode::None {
        NormStats::identity(EnvSpec::for_kind(settings.env).obs_dim)
    } else {
        offline_ckpt.norm_stats.clone()
    };
    let options = OnlineOptions {
        eval_ordinal_offset: records.len() as u64,
        ..OnlineOptions::default()
    };
    let online = run_online_phase(&settings, Some(&offline_ckpt), &online_norm, Some(&refs), &options)?;
    records.extend(online.records);

    csv::save_curve(&path_of("curve.csv"), &records)?;
    log.record("curve.csv")?;
    agck::save(&path_of("final.agck"), &online.ckpt)?;
    log.record("final.agck")?;
    manifest::save(&path_of("manifest.txt"), &log.entries)?;

    println!(
        "online phase done: {} iterations, final normalized score {:.2}",
        settings.online_iterations,
        last_score(&records)
    );
    println!("run artifacts in {}", args.out_dir.display());
    Ok(())
}

/// The artifact names a completed run directory always contains, in
/// manifest order (augmented runs also carry wm.wmck and, when trained
/// inline, wm_curve.csv).
pub fn base_artifacts() -> &'static [&'static str] {
    &["resolved_config.txt", "offline.agck", "curve.csv", "final.agck"]
}
