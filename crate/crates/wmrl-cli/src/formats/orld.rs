//! ORLD v1 — offline transition dataset container.
//!
//! Layout (little-endian):
//! ```text
//! "ORLD"  u32 version=1
//! env_name: u32 len + utf8     flavor: u32 len + utf8
//! obs_dim: u32   act_dim: u32  seed: u64   count: u64
//! count × [state; obs_dim][action; act_dim][reward][next_state; obs_dim][done: u8]
//! ```
//! All floats are f64. Round trips are bit-exact.

use std::path::Path;

use wmrl_core::data::{Flavor, OfflineDataset, Transition};

use crate::error::Result;
use crate::formats::bytes::{read_file, write_file, Reader, Writer};

const MAGIC: &[u8; 4] = b"ORLD";
const VERSION: u32 = 1;

pub fn encode(dataset: &OfflineDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mut w = Writer::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.string(&dataset.env_name);
    w.string(dataset.flavor.name());
    w.dim(dataset.obs_dim);
    w.dim(dataset.act_dim);
    w.u64(dataset.seed);
    w.u64(dataset.transitions.len() as u64);
    for t in &dataset.transitions {
        w.f64_slice(&t.state);
        w.f64_slice(&t.action);
        w.f64(t.reward);
        w.f64_slice(&t.next_state);
        w.u8(t.done as u8);
    }
    Ok(w.buf)
}

pub fn save(path: &Path, dataset: &OfflineDataset) -> Result<()> {
    write_file(path, &encode(dataset)?)
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported ORLD version {version}")));
    }
    let env_name = r.string("env_name")?;
    let flavor_name = r.string("flavor")?;
    let flavor = Flavor::parse(&flavor_name).map_err(|_| {
        r.error(format!("unknown flavor '{flavor_name}'"))
    })?;
    let obs_dim = r.dim("obs_dim")?;
    let act_dim = r.dim("act_dim")?;
    if obs_dim == 0 || act_dim == 0 {
        return Err(r.error("dimensions must be positive"));
    }
    let seed = r.u64("seed")?;
    let count = r.u64("count")? as usize;
    if count == 0 {
        return Err(r.error("dataset holds no transitions"));
    }
    let mut transitions = Vec::with_capacity(count);
    for _ in 0..count {
        let state = r.f64_vec(obs_dim, "state")?;
        let action = r.f64_vec(act_dim, "action")?;
        let reward = r.f64("reward")?;
        let next_state = r.f64_vec(obs_dim, "next_state")?;
        let done = match r.u8("done")? {
            0 => false,
            1 => true,
            other => return Err(r.error(format!("done flag must be 0 or 1, found {other}"))),
        };
        transitions.push(Transition { state, action, reward, next_state, done });
    }
    r.finish()?;
    let dataset = OfflineDataset { env_name, obs_dim, act_dim, transitions, flavor, seed };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;
    use wmrl_core::data::{generate_dataset, GenerationSources};
    use wmrl_core::envs::EnvKind;

    fn sample(size: usize) -> OfflineDataset {
        generate_dataset(
            EnvKind::PointMass,
            Flavor::Random,
            size,
            5,
            &GenerationSources::default(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.orld");
        let d = sample(50);
        save(&path, &d).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.env_name, d.env_name);
        assert_eq!(back.flavor, d.flavor);
        assert_eq!(back.seed, d.seed);
        assert_eq!(back.transitions, d.transitions);
        // Bytes are deterministic.
        assert_eq!(encode(&d).unwrap(), encode(&back).unwrap());
    }

    #[test]
    fn empty_dataset_is_rejected_on_write() {
        let mut d = sample(3);
        d.transitions.clear();
        assert!(encode(&d).is_err());
    }

    #[test]
    fn corrupt_files_fail_with_offsets() {
        let dir = tempdir().unwrap();
        let d = sample(4);
        let bytes = encode(&d).unwrap();

        // Truncated mid-transition.
        let path = dir.path().join("t.orld");
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load(&path).unwrap_err() {
            crate::error::CliError::Format { offset, .. } => assert!(offset > 0),
            other => panic!("unexpected {other:?}"),
        }

        // Wrong magic.
        let path2 = dir.path().join("m.orld");
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        std::fs::write(&path2, &wrong).unwrap();
        assert!(load(&path2).is_err());

        // Trailing garbage.
        let path3 = dir.path().join("g.orld");
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path3, &extra).unwrap();
        match load(&path3).unwrap_err() {
            crate::error::CliError::Format { message, .. } => {
                assert!(message.contains("trailing"))
            }
            other => panic!("unexpected {other:?}"),
        }

        // Missing file is an I/O error with the path in the message.
        let missing = dir.path().join("absent.orld");
        let err = load(&missing).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(format!("{err}").contains("absent.orld"));
    }
}
