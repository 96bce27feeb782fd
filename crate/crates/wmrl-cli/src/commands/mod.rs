//! One module per subcommand. Each command resolves its settings, does the
//! work through the core crate, writes its outputs plus a `.cfg` echo of
//! the resolved settings, and prints a short summary.

pub mod analyze_critic;
pub mod calibrate;
pub mod export_curves;
pub mod gen_dataset;
pub mod grad_check;
pub mod run;
pub mod train_wm;

use std::path::Path;

use wmrl_core::agent::AgentCheckpoint;
use wmrl_core::envs::EnvSpec;
use wmrl_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Split a `--set KEY=VALUE` argument.
pub fn split_set_pair(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::usage(format!("--set '{raw}' is not KEY=VALUE")))
}

/// A checkpoint's networks must fit the environment it is used on.
pub fn check_ckpt_env(ckpt: &AgentCheckpoint, spec: &EnvSpec, what: &str) -> Result<()> {
    if ckpt.obs_dim() != spec.obs_dim || ckpt.act_dim() != spec.act_dim {
        return Err(CoreError::Config(format!(
            "{what}: checkpoint is {}obs/{}act but {} needs {}obs/{}act",
            ckpt.obs_dim(),
            ckpt.act_dim(),
            spec.name,
            spec.obs_dim,
            spec.act_dim
        ))
        .into());
    }
    Ok(())
}

/// File stem of a path, for default curve labels.
pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
