//! Dense MLPs with manual backprop, Adam, and Polyak averaging.
//!
//! Layout convention: activations are row batches, so a layer computes
//! `y = act(x * W + b)` with `W: (fan_in, fan_out)`. Hidden activations are
//! always ReLU; the output head is linear (critics, world-model nets) or
//! tanh scaled by the action bound (actors).
//!
//! Everything here is a plain value — no graph, no interior mutability — and
//! every operation is a deterministic function of its inputs, which is what
//! the crate's bit-reproducibility tests lean on.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::matrix::{matmul_at_into, matmul_into, Matrix};
use crate::rng::uniform;
use crate::{Error, Result};

/// Output-layer activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Linear,
    /// `y = scale * tanh(z)`; used by actors so outputs live in
    /// `[-scale, +scale]`.
    TanhScaled(f64),
}

/// Adam configuration. Defaults follow the TD3/TD3BC lineage: lr 3e-4,
/// betas (0.9, 0.999), epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("adam learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m_weights: Vec<Matrix>,
    pub v_weights: Vec<Matrix>,
    pub m_biases: Vec<Vec<f64>>,
    pub v_biases: Vec<Vec<f64>>,
}

impl AdamState {
    fn zeros_like(weights: &[Matrix], biases: &[Vec<f64>]) -> Self {
        AdamState {
            step: 0,
            m_weights: weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect(),
            v_weights: weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect(),
            m_biases: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Parameter gradients for one network, shaped like its weights and biases.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        NetGrads {
            d_weights: net.weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Element-wise accumulate another gradient of identical shape.
    pub fn add_assign(&mut self, other: &NetGrads) {
        assert_eq!(self.d_weights.len(), other.d_weights.len());
        for (a, b) in self.d_weights.iter_mut().zip(other.d_weights.iter()) {
            for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(other.d_biases.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|w| w.is_finite())
            && self.d_biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Activations retained by a forward pass, sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// The batch fed in.
    pub input: Matrix,
    /// Post-activation output of every layer, the head included last.
    pub post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("cache from a forward pass is never empty")
    }
}

/// Fully-connected network: `layer_sizes = [input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub head: Head,
    pub adam: AdamState,
}

impl MlpNet {
    /// Seeded init: weights and biases of each layer drawn uniformly from
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, weights first (row-major), then
    /// biases. The draw order is part of the reproducibility contract.
    pub fn init<R: RngCore>(layer_sizes: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(layer_sizes.len() >= 2, "need an input and an output layer");
        assert!(layer_sizes.iter().all(|&s| s >= 1), "zero-width layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let mut w = Matrix::zeros(fan_in, fan_out);
            for x in w.data.iter_mut() {
                *x = uniform(rng, -bound, bound);
            }
            let mut b = vec![0.0; fan_out];
            for x in b.iter_mut() {
                *x = uniform(rng, -bound, bound);
            }
            weights.push(w);
            biases.push(b);
        }
        let adam = AdamState::zeros_like(&weights, &biases);
        MlpNet { layer_sizes: layer_sizes.to_vec(), weights, biases, head, adam }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: input.cols,
                what: "mlp input columns",
            });
        }
        Ok(())
    }

    /// Forward pass retaining per-layer activations for backprop.
    pub fn forward(&self, input: &Matrix) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut post = Vec::with_capacity(self.num_layers());
        let mut current = input;
        for l in 0..self.num_layers() {
            let mut z = Matrix::zeros(current.rows, self.weights[l].cols);
            matmul_into(current, &self.weights[l], &mut z);
            let bias = &self.biases[l];
            for r in 0..z.rows {
                let row = z.row_mut(r);
                for (x, b) in row.iter_mut().zip(bias.iter()) {
                    *x += b;
                }
            }
            let last = l + 1 == self.num_layers();
            if last {
                if let Head::TanhScaled(scale) = self.head {
                    for x in z.data.iter_mut() {
                        *x = scale * libm::tanh(*x);
                    }
                }
            } else {
                for x in z.data.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
            post.push(z);
            current = post.last().unwrap();
        }
        Ok(ForwardCache { input: input.clone(), post })
    }

    /// Forward pass without retaining activations (evaluation, TD targets).
    /// Bit-identical to `forward(...).output()`.
    pub fn forward_only(&self, input: &Matrix) -> Result<Matrix> {
        let cache = self.forward(input)?;
        Ok(cache.post.into_iter().last().unwrap())
    }

    /// Convenience single-row forward.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec());
        Ok(self.forward_only(&m)?.data)
    }

    /// Exact gradients of the cached forward map.
    ///
    /// `output_gradient` is dL/d(output), `batch x out_dim`. Returns the
    /// parameter gradients and dL/d(input) — the latter is what lets an actor
    /// loss flow through a frozen critic.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<(NetGrads, Matrix)> {
        let layers = self.num_layers();
        if cache.post.len() != layers || cache.input.cols != self.input_dim() {
            return Err(Error::Shape {
                expected: layers,
                got: cache.post.len(),
                what: "forward cache layers",
            });
        }
        let out = cache.output();
        if output_gradient.rows != out.rows || output_gradient.cols != out.cols {
            return Err(Error::Shape {
                expected: out.cols,
                got: output_gradient.cols,
                what: "upstream gradient columns",
            });
        }

        let mut grads = NetGrads::zeros_like(self);
        // d_post: gradient w.r.t. the post-activation output of layer l.
        let mut d_post = output_gradient.clone();

        for l in (0..layers).rev() {
            let post = &cache.post[l];
            // Through the activation: d_z = d_post ⊙ act'(z).
            let mut d_z = d_post;
            if l + 1 == layers {
                if let Head::TanhScaled(scale) = self.head {
                    // y = s·tanh(z) ⇒ dy/dz = s·(1 − tanh²z) = s − y²/s.
                    for (g, y) in d_z.data.iter_mut().zip(post.data.iter()) {
                        *g *= scale - y * y / scale;
                    }
                }
            } else {
                // ReLU: pass where the activation was positive.
                for (g, y) in d_z.data.iter_mut().zip(post.data.iter()) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }

            let layer_input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            matmul_at_into(layer_input, &d_z, &mut grads.d_weights[l]);
            for (j, db) in grads.d_biases[l].iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in 0..d_z.rows {
                    acc += d_z.get(r, j);
                }
                *db = acc;
            }
            // dL/d(layer input) = d_z · W^T.
            let wt = self.weights[l].transpose();
            let mut d_in = Matrix::zeros(d_z.rows, wt.cols);
            matmul_into(&d_z, &wt, &mut d_in);
            d_post = d_in;
        }
        Ok((grads, d_post))
    }

    /// Standard bias-corrected Adam, applied in place.
    pub fn adam_step(&mut self, grads: &NetGrads, config: &AdamConfig) -> Result<()> {
        if grads.d_weights.len() != self.weights.len() || grads.d_biases.len() != self.biases.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                got: grads.d_weights.len(),
                what: "adam gradient layers",
            });
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in adam_step".into()));
        }
        self.adam.step += 1;
        let t = self.adam.step;
        let bc1 = 1.0 - libm::pow(config.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(config.beta2, t as f64);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.epsilon);
        };

        for l in 0..self.weights.len() {
            let (w, dw) = (&mut self.weights[l], &grads.d_weights[l]);
            let (m, v) = (&mut self.adam.m_weights[l], &mut self.adam.v_weights[l]);
            for i in 0..w.data.len() {
                update(&mut w.data[i], dw.data[i], &mut m.data[i], &mut v.data[i]);
            }
            let (b, db) = (&mut self.biases[l], &grads.d_biases[l]);
            let (mb, vb) = (&mut self.adam.m_biases[l], &mut self.adam.v_biases[l]);
            for i in 0..b.len() {
                update(&mut b[i], db[i], &mut mb[i], &mut vb[i]);
            }
        }
        Ok(())
    }

    /// `target ← tau·source + (1−tau)·target`, element-wise over weights and
    /// biases. Optimizer state is untouched (target nets are never stepped).
    pub fn polyak_from(&mut self, source: &MlpNet, tau: f64) -> Result<()> {
        if self.layer_sizes != source.layer_sizes || self.head != source.head {
            return Err(Error::Shape {
                expected: source.layer_sizes.len(),
                got: self.layer_sizes.len(),
                what: "polyak architectures",
            });
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config("polyak tau must lie in [0, 1]".into()));
        }
        for l in 0..self.weights.len() {
            for (t, s) in self.weights[l].data.iter_mut().zip(source.weights[l].data.iter()) {
                *t = tau * s + (1.0 - tau) * *t;
            }
            for (t, s) in self.biases[l].iter_mut().zip(source.biases[l].iter()) {
                *t = tau * s + (1.0 - tau) * *t;
            }
        }
        Ok(())
    }

    /// Drop accumulated Adam moments and restart the step counter. Used when a
    /// network is handed from one training phase to another so the new phase
    /// starts from clean optimizer state.
    pub fn reset_adam(&mut self) {
        self.adam = AdamState::zeros_like(&self.weights, &self.biases);
    }

    /// Visit every parameter mutably, layer by layer (weights row-major, then
    /// bias). Order matches `grad_at` and the checkpoint serialization.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in 0..self.weights.len() {
            for x in self.weights[l].data.iter_mut() {
                f(x);
            }
            for x in self.biases[l].iter_mut() {
                f(x);
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l].data);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Overwrite parameters from a flat slice in `params_flat` order.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: flat.len(),
                what: "flat parameter vector",
            });
        }
        let mut it = flat.iter();
        self.for_each_param_mut(|p| *p = *it.next().unwrap());
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Flatten gradients in the same order as `params_flat`.
pub fn grads_flat(grads: &NetGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..grads.d_weights.len() {
        out.extend_from_slice(&grads.d_weights[l].data);
        out.extend_from_slice(&grads.d_biases[l]);
    }
    out
}
