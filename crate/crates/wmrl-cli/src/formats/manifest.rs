//! Run manifest: one `sha256-hex  relative-path` line per artifact, in the
//! order the artifacts were written. `sha256sum -c manifest.txt` inside the
//! run directory verifies a run byte for byte.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::formats::bytes::{read_file, write_file};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

/// `entries` are (relative name, digest) pairs.
pub fn encode(entries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (name, digest) in entries {
        out.push_str(&format!("{digest}  {name}\n"));
    }
    out
}

pub fn save(path: &Path, entries: &[(String, String)]) -> Result<()> {
    write_file(path, encode(entries).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_match_the_reference_vector() {
        // SHA-256 of the empty string and of "abc" are published constants.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lines_follow_the_sha256sum_layout() {
        let entries = vec![("curve.csv".to_string(), sha256_hex(b"abc"))];
        assert_eq!(
            encode(&entries),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  curve.csv\n"
        );
    }
}
