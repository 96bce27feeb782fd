//! Serialized MLP block shared by the checkpoint formats.
//!
//! Layout: layer count L, then L+1 layer sizes, the output head (tag +
//! scale), every weight matrix row-major and bias vector in layer order,
//! and finally the Adam state behind a presence flag (step counter plus
//! first/second moments in the same shapes). Bit-exact round trips.

use wmrl_core::matrix::Matrix;
use wmrl_core::nn::{AdamState, Head, MlpNet};

use crate::error::Result;
use crate::formats::bytes::{Reader, Writer};

pub fn write_net(w: &mut Writer, net: &MlpNet) {
    w.dim(net.weights.len());
    for &s in &net.layer_sizes {
        w.dim(s);
    }
    match net.head {
        Head::Linear => {
            w.u8(0);
            w.f64(0.0);
        }
        Head::TanhScaled(scale) => {
            w.u8(1);
            w.f64(scale);
        }
    }
    for m in &net.weights {
        w.f64_slice(&m.data);
    }
    for b in &net.biases {
        w.f64_slice(b);
    }
    w.u8(1); // Adam always stored; the flag leaves room for stripped nets.
    w.u64(net.adam.step);
    for m in &net.adam.m_weights {
        w.f64_slice(&m.data);
    }
    for m in &net.adam.v_weights {
        w.f64_slice(&m.data);
    }
    for b in &net.adam.m_biases {
        w.f64_slice(b);
    }
    for b in &net.adam.v_biases {
        w.f64_slice(b);
    }
}

pub fn read_net(r: &mut Reader) -> Result<MlpNet> {
    let layers = r.dim("layer count")?;
    if layers == 0 {
        return Err(r.error("network needs at least one layer"));
    }
    let mut layer_sizes = Vec::with_capacity(layers + 1);
    for _ in 0..=layers {
        let s = r.dim("layer size")?;
        if s == 0 {
            return Err(r.error("layer sizes must be positive"));
        }
        layer_sizes.push(s);
    }
    let head = match r.u8("head tag")? {
        0 => {
            r.f64("head scale")?;
            Head::Linear
        }
        1 => {
            let scale = r.f64("head scale")?;
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(r.error("tanh head scale must be positive and finite"));
            }
            Head::TanhScaled(scale)
        }
        other => return Err(r.error(format!("unknown head tag {other}"))),
    };

    let read_weights = |r: &mut Reader, what: &str| -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let (rows, cols) = (layer_sizes[l], layer_sizes[l + 1]);
            out.push(Matrix::from_vec(rows, cols, r.f64_vec(rows * cols, what)?));
        }
        Ok(out)
    };
    let read_biases = |r: &mut Reader, what: &str| -> Result<Vec<Vec<f64>>> {
        (0..layers).map(|l| r.f64_vec(layer_sizes[l + 1], what)).collect()
    };

    let weights = read_weights(r, "weights")?;
    let biases = read_biases(r, "biases")?;
    let adam = match r.u8("adam flag")? {
        0 => AdamState {
            step: 0,
            m_weights: weights.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect(),
            v_weights: weights.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect(),
            m_biases: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        },
        1 => AdamState {
            step: r.u64("adam step")?,
            m_weights: read_weights(r, "adam m_weights")?,
            v_weights: read_weights(r, "adam v_weights")?,
            m_biases: read_biases(r, "adam m_biases")?,
            v_biases: read_biases(r, "adam v_biases")?,
        },
        other => return Err(r.error(format!("adam flag must be 0 or 1, found {other}"))),
    };
    Ok(MlpNet { layer_sizes, weights, biases, head, adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;
    use wmrl_core::nn::AdamConfig;
    use wmrl_core::rng::{substream, Stream};

    #[test]
    fn round_trip_preserves_params_and_adam() {
        let mut rng = substream(3, Stream::AgentInit);
        let mut net = MlpNet::init(&[4, 8, 2], Head::TanhScaled(1.5), &mut rng);
        // Take one Adam step so the moments are nonzero.
        let cache = net.forward(&Matrix::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.4])).unwrap();
        let upstream = Matrix::from_vec(1, 2, vec![1.0; 2]);
        let (grads, _) = net.backward(&cache, &upstream).unwrap();
        net.adam_step(&grads, &AdamConfig::default()).unwrap();

        let mut w = Writer::new();
        write_net(&mut w, &net);
        let mut r = Reader::new(Path::new("mem"), &w.buf);
        let back = read_net(&mut r).unwrap();
        r.finish().unwrap();

        assert_eq!(back.layer_sizes, net.layer_sizes);
        assert_eq!(back.head, net.head);
        assert_eq!(back.params_flat(), net.params_flat());
        assert_eq!(back.adam, net.adam);
    }

    #[test]
    fn absent_adam_reads_as_zeroed_state() {
        let mut rng = substream(3, Stream::AgentInit);
        let net = MlpNet::init(&[3, 4, 1], Head::Linear, &mut rng);
        let mut w = Writer::new();
        write_net(&mut w, &net);
        // Rewrite the adam presence flag (directly after params) to 0 and
        // truncate the stored state.
        let adam_payload = 8
            + 8 * (net.param_count() * 2); // step + m/v for every param
        let flag_pos = w.buf.len() - adam_payload - 1;
        assert_eq!(w.buf[flag_pos], 1);
        w.buf.truncate(flag_pos);
        w.u8(0);

        let mut r = Reader::new(Path::new("mem"), &w.buf);
        let back = read_net(&mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(back.adam.step, 0);
        assert_eq!(back.params_flat(), net.params_flat());
        assert!(back.adam.m_weights.iter().all(|m| m.data.iter().all(|&x| x == 0.0)));
    }
}
