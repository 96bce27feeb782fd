//! The three CSV outputs. Floats are written with shortest round-trip
//! formatting so a parse of our own output reproduces the values bit for bit.

use std::path::Path;

use wmrl_core::agent::Phase;
use wmrl_core::pipeline::{CriticAnalysis, EvalRecord};
use wmrl_core::wm::WmCurve;

use crate::error::{CliError, Result};
use crate::formats::bytes::{read_file, write_file};

pub const CURVE_HEADER: &str = "phase,iter,env_steps,mean_return,std_return,normalized_score";
pub const ANALYSIS_HEADER: &str = "step,q1,q2,bound_low,bound_high";
pub const WM_CURVE_HEADER: &str = "iter,total,recon_elbo,kl,state_recon,latent_recon";

pub fn encode_curve(records: &[EvalRecord]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.phase.name(),
            r.iteration,
            r.env_steps,
            r.mean_return,
            r.std_return,
            r.normalized_score
        ));
    }
    out
}

pub fn save_curve(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_file(path, encode_curve(records).as_bytes())
}

fn csv_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "file is not valid UTF-8".into(),
    })
}

fn parse_f64(path: &Path, line_no: usize, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| CliError::Format {
        path: path.to_path_buf(),
        offset: line_no,
        message: format!("{field} '{raw}' is not a number"),
    })
}

fn parse_usize(path: &Path, line_no: usize, field: &str, raw: &str) -> Result<usize> {
    raw.parse::<usize>().map_err(|_| CliError::Format {
        path: path.to_path_buf(),
        offset: line_no,
        message: format!("{field} '{raw}' is not a non-negative integer"),
    })
}

pub fn load_curve(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = csv_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CURVE_HEADER => {}
        _ => {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("expected curve header '{CURVE_HEADER}'"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                offset: i,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let phase = Phase::parse(fields[0]).map_err(|_| CliError::Format {
            path: path.to_path_buf(),
            offset: i,
            message: format!("unknown phase '{}'", fields[0]),
        })?;
        records.push(EvalRecord {
            phase,
            iteration: parse_usize(path, i, "iter", fields[1])?,
            env_steps: parse_usize(path, i, "env_steps", fields[2])?,
            mean_return: parse_f64(path, i, "mean_return", fields[3])?,
            std_return: parse_f64(path, i, "std_return", fields[4])?,
            normalized_score: parse_f64(path, i, "normalized_score", fields[5])?,
        });
    }
    Ok(records)
}

/// One row per environment step of the analyzed episode; `step` is 0-based.
pub fn encode_analysis(analysis: &CriticAnalysis) -> String {
    let mut out = String::from(ANALYSIS_HEADER);
    out.push('\n');
    for (step, (q1, q2)) in analysis.q1.iter().zip(analysis.q2.iter()).enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            step, q1, q2, analysis.bound_low, analysis.bound_high
        ));
    }
    out
}

pub fn save_analysis(path: &Path, analysis: &CriticAnalysis) -> Result<()> {
    write_file(path, encode_analysis(analysis).as_bytes())
}

pub fn encode_wm_curve(curve: &WmCurve) -> String {
    let mut out = String::from(WM_CURVE_HEADER);
    out.push('\n');
    for (iter, report) in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            iter, report.total, report.recon_elbo, report.kl, report.state_recon,
            report.latent_recon
        ));
    }
    out
}

pub fn save_wm_curve(path: &Path, curve: &WmCurve) -> Result<()> {
    write_file(path, encode_wm_curve(curve).as_bytes())
}
