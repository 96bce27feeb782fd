//! WMCK v1 — world-model checkpoint: the three networks plus the latent
//! width, the training-space flag, and the normalization statistics the
//! model was trained under (so downstream use can verify it matches the
//! dataset's space).

use std::path::Path;

use wmrl_core::data::NormStats;
use wmrl_core::wm::WorldModel;

use crate::error::Result;
use crate::formats::bytes::{read_file, write_file, Reader, Writer};
use crate::formats::net::{read_net, write_net};

const MAGIC: &[u8; 4] = b"WMCK";
const VERSION: u32 = 1;

pub fn encode(wm: &WorldModel, norm: &NormStats) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.dim(wm.latent_dim);
    w.u8(wm.trained_on_normalized as u8);
    write_norm(&mut w, norm);
    write_net(&mut w, &wm.encoder);
    write_net(&mut w, &wm.decoder);
    write_net(&mut w, &wm.transition);
    w.buf
}

pub fn save(path: &Path, wm: &WorldModel, norm: &NormStats) -> Result<()> {
    write_file(path, &encode(wm, norm))
}

pub fn load(path: &Path) -> Result<(WorldModel, NormStats)> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported WMCK version {version}")));
    }
    let latent_dim = r.dim("latent_dim")?;
    let trained_on_normalized = read_bool(&mut r, "normalized flag")?;
    let norm = read_norm(&mut r)?;
    let encoder = read_net(&mut r)?;
    let decoder = read_net(&mut r)?;
    let transition = read_net(&mut r)?;
    r.finish()?;
    if latent_dim == 0 || encoder.output_dim() != 2 * latent_dim {
        return Err(r.error("encoder output does not match the latent width"));
    }
    Ok((
        WorldModel { encoder, decoder, transition, latent_dim, trained_on_normalized },
        norm,
    ))
}

pub(crate) fn write_norm(w: &mut Writer, norm: &NormStats) {
    w.dim(norm.mean.len());
    w.f64_slice(&norm.mean);
    w.f64_slice(&norm.std);
    w.f64(norm.epsilon);
}

pub(crate) fn read_norm(r: &mut Reader) -> Result<NormStats> {
    let dim = r.dim("norm dim")?;
    if dim == 0 {
        return Err(r.error("normalization dimension must be positive"));
    }
    let mean = r.f64_vec(dim, "norm mean")?;
    let std = r.f64_vec(dim, "norm std")?;
    let epsilon = r.f64("norm epsilon")?;
    Ok(NormStats { mean, std, epsilon })
}

pub(crate) fn read_bool(r: &mut Reader, what: &str) -> Result<bool> {
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(r.error(format!("{what} must be 0 or 1, found {other}"))),
    }
}
