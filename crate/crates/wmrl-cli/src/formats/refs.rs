//! Score-reference file: three `key=value` lines of plain text. Floats are
//! printed with Rust's shortest round-trip formatting, so load(save(x))
//! is exact.

use std::path::Path;

use wmrl_core::pipeline::Refs;

use crate::error::{CliError, Result};
use crate::formats::bytes::{read_file, write_file};

pub fn encode(refs: &Refs) -> String {
    format!(
        "env={}\nrandom_ref={}\nexpert_ref={}\n",
        refs.env_name, refs.random_ref, refs.expert_ref
    )
}

pub fn save(path: &Path, refs: &Refs) -> Result<()> {
    refs.validate()?;
    write_file(path, encode(refs).as_bytes())
}

pub fn load(path: &Path) -> Result<Refs> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "refs file is not valid UTF-8".into(),
    })?;
    let mut env_name = None;
    let mut random_ref = None;
    let mut expert_ref = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| CliError::Format {
            path: path.to_path_buf(),
            offset: i,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {} is not key=value", i + 1)))?;
        match key.trim() {
            "env" => env_name = Some(value.trim().to_string()),
            "random_ref" => {
                random_ref = Some(value.trim().parse::<f64>().map_err(|_| {
                    bad(format!("random_ref '{}' is not a number", value.trim()))
                })?)
            }
            "expert_ref" => {
                expert_ref = Some(value.trim().parse::<f64>().map_err(|_| {
                    bad(format!("expert_ref '{}' is not a number", value.trim()))
                })?)
            }
            other => return Err(bad(format!("unknown refs key '{other}'"))),
        }
    }
    let missing = |what: &str| CliError::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("refs file is missing '{what}'"),
    };
    let refs = Refs {
        env_name: env_name.ok_or_else(|| missing("env"))?,
        random_ref: random_ref.ok_or_else(|| missing("random_ref"))?,
        expert_ref: expert_ref.ok_or_else(|| missing("expert_ref"))?,
    };
    refs.validate()?;
    Ok(refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.refs");
        let refs = Refs {
            env_name: "pendulum".into(),
            random_ref: -1234.567891234,
            expert_ref: -150.000000001,
        };
        save(&path, &refs).unwrap();
        assert_eq!(load(&path).unwrap(), refs);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.refs");
        std::fs::write(&path, "env=pendulum\nrandom_ref=abc\nexpert_ref=1\n").unwrap();
        assert!(load(&path).is_err());
        std::fs::write(&path, "env=pendulum\nexpert_ref=1\n").unwrap();
        assert!(load(&path).is_err());
        std::fs::write(&path, "env=pendulum\nrandom_ref=5\nexpert_ref=1\n").unwrap();
        // Parses but fails validation (expert ≤ random) → config error.
        assert_eq!(load(&path).unwrap_err().exit_code(), 2);
        std::fs::write(&path, "env=pendulum\nrandom_ref=0\nexpert_ref=1\nbogus=2\n").unwrap();
        assert!(load(&path).is_err());
    }
}
