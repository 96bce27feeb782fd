//! Flat `key=value` configuration for `run`, plus the resolved-config echo
//! every command writes next to its outputs. Parsing is strict: unknown
//! keys, duplicate keys, and malformed values are usage errors, so a typo
//! can never silently fall back to a default.

use std::path::{Path, PathBuf};

use wmrl_core::agent::Hyperparams;
use wmrl_core::data::DEFAULT_NORM_EPSILON;
use wmrl_core::envs::EnvKind;
use wmrl_core::pipeline::{InitMode, RunSettings};
use wmrl_core::wm::{KlDirection, WmConfig};

use crate::error::{CliError, Result};
use crate::formats::bytes::{read_file, write_file};

/// Environment variable consulted when neither a flag nor the config file
/// sets the master seed.
pub const SEED_ENV_VAR: &str = "WMRL_SEED";

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
/// Returns pairs in file order; duplicates are rejected.
pub fn parse_kv_text(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Format {
            path: path.to_path_buf(),
            offset: i,
            message: format!("line {} is not key=value: '{line}'", i + 1),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                offset: i,
                message: format!("duplicate key '{key}'"),
            });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

pub fn load_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "config file is not valid UTF-8".into(),
    })?;
    parse_kv_text(path, &text)
}

fn bad_value(key: &str, value: &str, expected: &str) -> CliError {
    CliError::usage(format!("config key '{key}': '{value}' is not {expected}"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| bad_value(key, value, "a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

/// Comma-separated layer widths, e.g. `256,256`.
fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>> {
    let dims: Result<Vec<usize>> = value
        .split(',')
        .map(|part| parse_usize(key, part.trim()))
        .collect();
    let dims = dims.map_err(|_| bad_value(key, value, "a comma-separated list of widths"))?;
    if dims.is_empty() {
        return Err(bad_value(key, value, "a non-empty list of widths"));
    }
    Ok(dims)
}

fn format_dims(dims: &[usize]) -> String {
    let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    parts.join(",")
}

/// Everything `run` needs, resolved from defaults, a config file, and flag
/// overrides — in that order, later sources winning.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvKind,
    /// None until some source sets it; the final fallback chain is
    /// flag > config file > WMRL_SEED > 0.
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub wm_ckpt: Option<PathBuf>,
    pub offline_iterations: usize,
    pub online_iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub init_mode: InitMode,
    pub augment: bool,
    pub norm_epsilon: f64,
    pub hyper: Hyperparams,
    pub wm: WmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let settings = RunSettings::default();
        RunConfig {
            env: EnvKind::Pendulum,
            seed: None,
            dataset: None,
            refs: None,
            wm_ckpt: None,
            offline_iterations: settings.offline_iterations,
            online_iterations: settings.online_iterations,
            eval_every: settings.eval_every,
            eval_episodes: settings.eval_episodes,
            init_mode: settings.init_mode,
            augment: settings.augment,
            norm_epsilon: DEFAULT_NORM_EPSILON,
            hyper: Hyperparams::default(),
            wm: WmConfig::default(),
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` setting. Shared by the config file, `--set`
    /// flags, and the dedicated override flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = EnvKind::parse(value)?,
            "seed" => self.seed = Some(parse_u64(key, value)?),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "refs" => self.refs = Some(PathBuf::from(value)),
            "wm_ckpt" => self.wm_ckpt = Some(PathBuf::from(value)),
            "offline_iterations" => self.offline_iterations = parse_usize(key, value)?,
            "online_iterations" => self.online_iterations = parse_usize(key, value)?,
            "eval_every" => self.eval_every = parse_usize(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_usize(key, value)?,
            "init_mode" => self.init_mode = InitMode::parse(value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "norm_epsilon" => self.norm_epsilon = parse_f64(key, value)?,
            "discount" => self.hyper.discount = parse_f64(key, value)?,
            "polyak" => self.hyper.polyak = parse_f64(key, value)?,
            "policy_noise" => self.hyper.policy_noise = parse_f64(key, value)?,
            "noise_clip" => self.hyper.noise_clip = parse_f64(key, value)?,
            "policy_delay" => self.hyper.policy_delay = parse_usize(key, value)?,
            "exploration_noise" => self.hyper.exploration_noise = parse_f64(key, value)?,
            "batch_size" => self.hyper.batch_size = parse_usize(key, value)?,
            "bc_weight" => self.hyper.bc_weight = parse_f64(key, value)?,
            "augment_fraction" => self.hyper.augment_fraction = parse_f64(key, value)?,
            "actor_lr" => self.hyper.actor_lr = parse_f64(key, value)?,
            "critic_lr" => self.hyper.critic_lr = parse_f64(key, value)?,
            "hidden" => self.hyper.hidden = parse_dims(key, value)?,
            "warm_start_steps" => self.hyper.warm_start_steps = parse_usize(key, value)?,
            "buffer_capacity" => self.hyper.buffer_capacity = parse_usize(key, value)?,
            "wm_latent_dim" => {
                self.wm.latent_dim = if value == "auto" {
                    None
                } else {
                    Some(parse_usize(key, value)?)
                }
            }
            "wm_hidden" => self.wm.hidden = parse_dims(key, value)?,
            "wm_iterations" => self.wm.iterations = parse_usize(key, value)?,
            "wm_batch_size" => self.wm.batch_size = parse_usize(key, value)?,
            "wm_learning_rate" => self.wm.learning_rate = parse_f64(key, value)?,
            "wm_kl_direction" => self.wm.kl_direction = KlDirection::parse(value)?,
            "wm_w_recon" => self.wm.w_recon = parse_f64(key, value)?,
            "wm_w_kl" => self.wm.w_kl = parse_f64(key, value)?,
            "wm_w_state" => self.wm.w_state = parse_f64(key, value)?,
            "wm_w_latent" => self.wm.w_latent = parse_f64(key, value)?,
            "wm_curve_every" => self.wm.curve_every = parse_usize(key, value)?,
            other => {
                return Err(CliError::usage(format!(
                    "unknown config key '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs {
            self.apply(key, value)?;
        }
        Ok(())
    }

    /// Finalize the seed: flag beats config file beats `WMRL_SEED` beats 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = match (flag, self.seed) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => seed_from_env()?.unwrap_or(0),
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    /// The settings struct the pipeline consumes. The world-model seed is
    /// tied to the master seed.
    pub fn to_settings(&self) -> Result<RunSettings> {
        let seed = self
            .seed
            .ok_or_else(|| CliError::usage("seed was never resolved".to_string()))?;
        let mut wm = self.wm.clone();
        wm.seed = seed;
        let settings = RunSettings {
            env: self.env,
            seed,
            wm,
            hyper: self.hyper.clone(),
            offline_iterations: self.offline_iterations,
            online_iterations: self.online_iterations,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            init_mode: self.init_mode,
            augment: self.augment,
            norm_epsilon: self.norm_epsilon,
        };
        settings.validate()?;
        Ok(settings)
    }

    /// All resolved settings as sorted `key=value` lines. The echo is itself
    /// a loadable config file.
    pub fn echo(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("env".into(), self.env.name().to_string()),
            ("offline_iterations".into(), self.offline_iterations.to_string()),
            ("online_iterations".into(), self.online_iterations.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("eval_episodes".into(), self.eval_episodes.to_string()),
            ("init_mode".into(), self.init_mode.name().to_string()),
            ("augment".into(), self.augment.to_string()),
            ("norm_epsilon".into(), self.norm_epsilon.to_string()),
        ];
        pairs.extend(hyper_pairs(&self.hyper));
        pairs.extend(wm_pairs(&self.wm));
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        if let Some(path) = &self.dataset {
            pairs.push(("dataset".into(), path.display().to_string()));
        }
        if let Some(path) = &self.refs {
            pairs.push(("refs".into(), path.display().to_string()));
        }
        if let Some(path) = &self.wm_ckpt {
            pairs.push(("wm_ckpt".into(), path.display().to_string()));
        }
        echo_pairs(&pairs)
    }
}

/// `WMRL_SEED` from the environment, if set; parse failures are usage
/// errors rather than silent fallbacks.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw
            .parse::<u64>()
            .map(Some)
            .map_err(|_| {
                CliError::usage(format!(
                    "{SEED_ENV_VAR}='{raw}' is not a non-negative integer"
                ))
            }),
        Err(_) => Ok(None),
    }
}

/// Seed for commands without a config file: flag beats `WMRL_SEED` beats 0.
pub fn resolve_seed_flag(flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(seed_from_env()?.unwrap_or(0)),
    }
}

/// The agent hyperparameters as config pairs, under the same keys `apply`
/// accepts.
pub fn hyper_pairs(hyper: &Hyperparams) -> Vec<(String, String)> {
    vec![
        ("discount".into(), hyper.discount.to_string()),
        ("polyak".into(), hyper.polyak.to_string()),
        ("policy_noise".into(), hyper.policy_noise.to_string()),
        ("noise_clip".into(), hyper.noise_clip.to_string()),
        ("policy_delay".into(), hyper.policy_delay.to_string()),
        ("exploration_noise".into(), hyper.exploration_noise.to_string()),
        ("batch_size".into(), hyper.batch_size.to_string()),
        ("bc_weight".into(), hyper.bc_weight.to_string()),
        ("augment_fraction".into(), hyper.augment_fraction.to_string()),
        ("actor_lr".into(), hyper.actor_lr.to_string()),
        ("critic_lr".into(), hyper.critic_lr.to_string()),
        ("hidden".into(), format_dims(&hyper.hidden)),
        ("warm_start_steps".into(), hyper.warm_start_steps.to_string()),
        ("buffer_capacity".into(), hyper.buffer_capacity.to_string()),
    ]
}

/// The world-model settings as config pairs, under the same keys `apply`
/// accepts.
pub fn wm_pairs(wm: &WmConfig) -> Vec<(String, String)> {
    vec![
        (
            "wm_latent_dim".into(),
            match wm.latent_dim {
                Some(d) => d.to_string(),
                None => "auto".to_string(),
            },
        ),
        ("wm_hidden".into(), format_dims(&wm.hidden)),
        ("wm_iterations".into(), wm.iterations.to_string()),
        ("wm_batch_size".into(), wm.batch_size.to_string()),
        ("wm_learning_rate".into(), wm.learning_rate.to_string()),
        ("wm_kl_direction".into(), wm.kl_direction.name().to_string()),
        ("wm_w_recon".into(), wm.w_recon.to_string()),
        ("wm_w_kl".into(), wm.w_kl.to_string()),
        ("wm_w_state".into(), wm.w_state.to_string()),
        ("wm_w_latent".into(), wm.w_latent.to_string()),
        ("wm_curve_every".into(), wm.curve_every.to_string()),
    ]
}

/// Sorted `key=value` lines with a trailing newline — the shared layout for
/// every command's resolved-config echo.
pub fn echo_pairs(pairs: &[(String, String)]) -> String {
    let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::new();
    for (key, value) in sorted {
        out.push_str(&format!("{key}={value}\n"));
    }
    out
}

pub fn write_echo(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

/// `<out>.cfg` — the echo path for a command whose output is a single file.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".cfg");
    out.with_file_name(name)
}
