//! `export-curves`: merge learning-curve CSVs from several runs into one
//! long-format table for plotting, each row tagged with its run label.

use std::path::PathBuf;

use clap::Args;

use crate::commands::file_stem;
use crate::config::{echo_pairs, sidecar_path, write_echo};
use crate::error::Result;
use crate::formats::bytes::write_file;
use crate::formats::csv::{load_curve, CURVE_HEADER};

#[derive(Debug, Args)]
pub struct ExportCurvesArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Input curves, each either PATH or LABEL=PATH (the label defaults to
    /// the file stem).
    #[arg(required = true, value_name = "[LABEL=]PATH")]
    pub inputs: Vec<String>,
}

fn split_input(raw: &str) -> (String, PathBuf) {
    match raw.split_once('=') {
        Some((label, path)) => (label.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(raw);
            (file_stem(&path), path)
        }
    }
}

pub fn cmd_export_curves(args: &ExportCurvesArgs) -> Result<()> {
    let mut out = format!("run,{CURVE_HEADER}\n");
    let mut pairs: Vec<(String, String)> = vec![("out".into(), args.out.display().to_string())];
    let mut total_rows = 0;
    for (i, raw) in args.inputs.iter().enumerate() {
        let (label, path) = split_input(raw);
        let records = load_curve(&path)?;
        for r in &records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                label,
                r.phase.name(),
                r.iteration,
                r.env_steps,
                r.mean_return,
                r.std_return,
                r.normalized_score
            ));
        }
        total_rows += records.len();
        pairs.push((format!("input.{i}"), format!("{label}={}", path.display())));
    }
    write_file(&args.out, out.as_bytes())?;
    write_echo(&sidecar_path(&args.out), &echo_pairs(&pairs))?;
    println!(
        "wrote {} ({} rows from {} curves)",
        args.out.display(),
        total_rows,
        args.inputs.len()
    );
    Ok(())
}

/// Label resolution is part of the file-format contract, so it is pinned
/// here rather than in the integration tests.
#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn labels_default_to_the_file_stem() {
        let (label, path) = split_input("runs/ours_seed3/curve.csv");
        assert_eq!(label, "curve");
        assert_eq!(path, Path::new("runs/ours_seed3/curve.csv"));
        let (label, path) = split_input("ours=runs/ours_seed3/curve.csv");
        assert_eq!(label, "ours");
        assert_eq!(path, Path::new("runs/ours_seed3/curve.csv"));
    }
}
