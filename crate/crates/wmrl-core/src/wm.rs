//! Variational world model: encoder, decoder, and residual latent transition,
//! with the four-term training loss and stochastic one-step generation.
//!
//! The model always operates in a single state space, recorded by
//! `trained_on_normalized`; callers convert with `NormStats` at the boundary.
//! Generation is one-step only — nothing here feeds a generated state back
//! into the model.

use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::data::{sample_batch_dataset, NormStats, OfflineDataset};
use crate::math::{clamp, exp};
use crate::matrix::{hcat, Matrix};
use crate::nn::{AdamConfig, Head, MlpNet, NetGrads};
use crate::rng::{standard_normal, substream, Stream};
use crate::{Error, Result};

/// log σ² is clamped to this range before exponentiation (σ ∈ [e⁻⁵, e²]).
/// Clamped entries carry zero gradient.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

/// Which way the ELBO's divergence term is computed. `Standard` is the usual
/// VAE direction KL(N(μ,σ²) ‖ N(0,I)); `Reversed` is KL(N(0,I) ‖ N(μ,σ²)),
/// kept selectable for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    Standard,
    Reversed,
}

impl KlDirection {
    pub fn parse(name: &str) -> Result<KlDirection> {
        match name {
            "standard" => Ok(KlDirection::Standard),
            "reversed" => Ok(KlDirection::Reversed),
            other => Err(Error::Config(alloc::format!("unknown kl direction '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KlDirection::Standard => "standard",
            KlDirection::Reversed => "reversed",
        }
    }
}

/// Encoding mode: reparameterized sample or the distribution mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Sample,
    Mean,
}

/// World-model architecture and training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct WmConfig {
    /// Latent width; `None` means match the observation dimension.
    pub latent_dim: Option<usize>,
    /// Hidden widths shared by encoder, decoder, and transition nets.
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Master seed; init and training draw from separate substreams of it.
    pub seed: u64,
    pub kl_direction: KlDirection,
    /// Loss-term weights (reconstruction, KL, next-state, latent). The
    /// reported components are the weighted contributions, so the total is
    /// always their exact sum.
    pub w_recon: f64,
    pub w_kl: f64,
    pub w_state: f64,
    pub w_latent: f64,
    /// Record a loss-curve point every this many iterations.
    pub curve_every: usize,
}

impl Default for WmConfig {
    fn default() -> Self {
        WmConfig {
            latent_dim: None,
            hidden: alloc::vec![512, 512, 512],
            iterations: 5_000,
            batch_size: 256,
            learning_rate: 3e-4,
            seed: 0,
            kl_direction: KlDirection::Standard,
            w_recon: 1.0,
            w_kl: 1.0,
            w_state: 1.0,
            w_latent: 1.0,
            curve_every: 100,
        }
    }
}

impl WmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("wm batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("wm learning_rate must be positive".into()));
        }
        if self.curve_every == 0 {
            return Err(Error::Config("wm curve_every must be positive".into()));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::Config("wm latent_dim must be positive".into()));
        }
        for w in [self.w_recon, self.w_kl, self.w_state, self.w_latent] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config("wm loss weights must be finite and ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// The three networks plus the bookkeeping needed to use them consistently.
#[derive(Debug, Clone)]
pub struct WorldModel {
    /// obs_dim → 2·latent_dim, rows emitting (μ, log σ²).
    pub encoder: MlpNet,
    /// latent_dim → obs_dim.
    pub decoder: MlpNet,
    /// latent_dim + act_dim → latent_dim, emitting the residual Δ(z, a).
    pub transition: MlpNet,
    pub latent_dim: usize,
    pub trained_on_normalized: bool,
}

/// One loss evaluation, split into its four weighted components.
/// `total` is their exact sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmLossReport {
    pub total: f64,
    /// Weighted MSE(s̃_t, s_t).
    pub recon_elbo: f64,
    /// Weighted divergence term.
    pub kl: f64,
    /// Weighted MSE(s̃_{t+1}, s_{t+1}).
    pub state_recon: f64,
    /// Weighted MSE(z̃_{t+1}, z_{t+1}-target).
    pub latent_recon: f64,
}

/// Gradients for all three networks from one loss evaluation.
pub struct WmGrads {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
    pub transition: NetGrads,
}

/// `(iteration, loss)` samples recorded during training.
pub type WmCurve = Vec<(usize, WmLossReport)>;

fn mse(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(a.cols, b.cols);
    let mut s = 0.0;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = x - y;
        s += d * d;
    }
    s / (a.rows * a.cols) as f64
}

/// Mean over batch rows of ½ Σ_d of the per-dimension divergence.
pub fn kl_to_standard_normal(mu: &Matrix, log_var: &Matrix, direction: KlDirection) -> f64 {
    debug_assert_eq!(mu.rows, log_var.rows);
    debug_assert_eq!(mu.cols, log_var.cols);
    let mut s = 0.0;
    for (m, lv) in mu.data.iter().zip(log_var.data.iter()) {
        s += match direction {
            KlDirection::Standard => m * m + exp(*lv) - lv - 1.0,
            KlDirection::Reversed => lv + exp(-lv) * (1.0 + m * m) - 1.0,
        };
    }
    0.5 * s / mu.rows as f64
}

/// Monte Carlo estimate of the same divergence for a single (μ, log σ²) pair,
/// by averaging the log-density ratio over `n` samples from the first
/// argument of the KL.
pub fn kl_monte_carlo<R: RngCore>(
    mu: &[f64],
    log_var: &[f64],
    direction: KlDirection,
    n: usize,
    rng: &mut R,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n {
        let mut ratio = 0.0;
        for (m, lv) in mu.iter().zip(log_var.iter()) {
            let e = standard_normal(rng);
            match direction {
                KlDirection::Standard => {
                    // x ~ N(μ, σ²): log q(x) − log p(x)
                    let x = m + exp(lv / 2.0) * e;
                    ratio += 0.5 * (x * x - lv) - 0.5 * e * e;
                }
                KlDirection::Reversed => {
                    // x ~ N(0, 1): log p(x) − log q(x)
                    let x = e;
                    let d = x - m;
                    ratio += 0.5 * (lv + d * d * exp(-lv)) - 0.5 * x * x;
                }
            }
        }
        acc += ratio;
    }
    acc / n as f64
}

/// Everything the backward pass needs from one forward evaluation.
struct WmForward {
    enc_cache: crate::nn::ForwardCache,
    mu: Matrix,
    log_var: Matrix,
    /// 1.0 where log_var passed through unclamped, else 0.0.
    clamp_pass: Matrix,
    dec_recon_cache: crate::nn::ForwardCache,
    trans_cache: crate::nn::ForwardCache,
    z_next: Matrix,
    dec_pred_cache: crate::nn::ForwardCache,
    z_target: Matrix,
    report: WmLossReport,
}

impl WorldModel {
    /// Fresh model; network draw order (encoder, decoder, transition) from
    /// the init substream of `cfg.seed` is part of the determinism contract.
    pub fn init(obs_dim: usize, act_dim: usize, cfg: &WmConfig) -> Result<WorldModel> {
        cfg.validate()?;
        let latent_dim = cfg.latent_dim.unwrap_or(obs_dim);
        let sizes = |input: usize, output: usize| {
            let mut v = alloc::vec![input];
            v.extend_from_slice(&cfg.hidden);
            v.push(output);
            v
        };
        let enc_sizes = sizes(obs_dim, 2 * latent_dim);
        let dec_sizes = sizes(latent_dim, obs_dim);
        let trans_sizes = sizes(latent_dim + act_dim, latent_dim);
        let mut rng = substream(cfg.seed, Stream::WmInit);
        Ok(WorldModel {
            encoder: MlpNet::init(&enc_sizes, Head::Linear, &mut rng),
            decoder: MlpNet::init(&dec_sizes, Head::Linear, &mut rng),
            transition: MlpNet::init(&trans_sizes, Head::Linear, &mut rng),
            latent_dim,
            trained_on_normalized: true,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.transition.input_dim() - self.latent_dim
    }

    /// Split a raw encoder output batch into (μ, clamped log σ², pass mask).
    fn split_encoding(&self, enc_out: &Matrix) -> (Matrix, Matrix, Matrix) {
        let (mu, lv_raw) = enc_out.split_cols(self.latent_dim);
        let mut log_var = lv_raw.clone();
        let mut pass = Matrix::zeros(lv_raw.rows, lv_raw.cols);
        for (i, v) in log_var.data.iter_mut().enumerate() {
            if *v >= LOG_VAR_MIN && *v <= LOG_VAR_MAX {
                pass.data[i] = 1.0;
            } else {
                *v = clamp(*v, LOG_VAR_MIN, LOG_VAR_MAX);
            }
        }
        (mu, log_var, pass)
    }

    /// Encode a batch of states, returning `(z, μ, log σ²)`. Sample mode uses
    /// the reparameterization z = μ + exp(½ log σ²) ⊙ ε; mean mode returns μ
    /// and draws nothing from `rng`.
    pub fn encode<R: RngCore>(
        &self,
        states: &Matrix,
        mode: EncodeMode,
        rng: &mut R,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let enc_out = self.encoder.forward_only(states)?;
        let (mu, log_var, _) = self.split_encoding(&enc_out);
        let z = match mode {
            EncodeMode::Mean => mu.clone(),
            EncodeMode::Sample => {
                let mut z = mu.clone();
                for (zi, lv) in z.data.iter_mut().zip(log_var.data.iter()) {
                    *zi += exp(lv / 2.0) * standard_normal(rng);
                }
                z
            }
        };
        Ok((z, mu, log_var))
    }

    /// Residual transition: z + Δ(z ⊕ a).
    pub fn predict_next_latent(&self, z: &Matrix, actions: &Matrix) -> Result<Matrix> {
        if z.cols != self.latent_dim {
            return Err(Error::Shape { expected: self.latent_dim, got: z.cols, what: "latent width" });
        }
        let mut out = self.transition.forward_only(&hcat(z, actions))?;
        for (o, zi) in out.data.iter_mut().zip(z.data.iter()) {
            *o += zi;
        }
        Ok(out)
    }

    /// One-step next-state generation: decode(predict_next_latent(encode(s))).
    /// `states_normalized` must describe the space of `states`; a mismatch
    /// with the model's training space is a usage error.
    pub fn generate_next_state<R: RngCore>(
        &self,
        states: &Matrix,
        actions: &Matrix,
        mode: EncodeMode,
        rng: &mut R,
        states_normalized: bool,
    ) -> Result<Matrix> {
        if states_normalized != self.trained_on_normalized {
            return Err(Error::Config(alloc::format!(
                "state space mismatch: model trained on normalized={}, input normalized={}",
                self.trained_on_normalized, states_normalized
            )));
        }
        let (z, _, _) = self.encode(states, mode, rng)?;
        let z_next = self.predict_next_latent(&z, actions)?;
        self.decoder.forward_only(&z_next)
    }

    /// Gaussian noise batch for the reparameterization trick. Drawn up front
    /// so the loss can be re-evaluated with the noise frozen.
    pub fn draw_eps<R: RngCore>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
        let mut eps = Matrix::zeros(rows, cols);
        for e in eps.data.iter_mut() {
            *e = standard_normal(rng);
        }
        eps
    }

    /// Encoder mean of a state batch — the constant target of the latent
    /// reconstruction term.
    pub fn latent_target(&self, next_states: &Matrix) -> Result<Matrix> {
        let enc_out = self.encoder.forward_only(next_states)?;
        let (mu, _, _) = self.split_encoding(&enc_out);
        Ok(mu)
    }

    fn forward_loss(
        &self,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
        eps: &Matrix,
        frozen_target: Option<&Matrix>,
        cfg: &WmConfig,
    ) -> Result<WmForward> {
        let b = states.rows;
        if eps.rows != b || eps.cols != self.latent_dim {
            return Err(Error::Shape { expected: self.latent_dim, got: eps.cols, what: "eps width" });
        }
        let enc_cache = self.encoder.forward(states)?;
        let (mu, log_var, clamp_pass) = self.split_encoding(enc_cache.output());
        let mut z = mu.clone();
        for ((zi, lv), e) in z.data.iter_mut().zip(log_var.data.iter()).zip(eps.data.iter()) {
            *zi += exp(lv / 2.0) * e;
        }
        let dec_recon_cache = self.decoder.forward(&z)?;
        let trans_cache = self.transition.forward(&hcat(&z, actions))?;
        let mut z_next = trans_cache.output().clone();
        for (zn, zi) in z_next.data.iter_mut().zip(z.data.iter()) {
            *zn += zi;
        }
        let dec_pred_cache = self.decoder.forward(&z_next)?;
        // Target branch: encoder mean of the true next state, held constant.
        let z_target = match frozen_target {
            Some(t) => t.clone(),
            None => self.latent_target(next_states)?,
        };

        let recon_elbo = cfg.w_recon * mse(dec_recon_cache.output(), states);
        let kl = cfg.w_kl * kl_to_standard_normal(&mu, &log_var, cfg.kl_direction);
        let state_recon = cfg.w_state * mse(dec_pred_cache.output(), next_states);
        let latent_recon = cfg.w_latent * mse(&z_next, &z_target);
        let total = recon_elbo + kl + state_recon + latent_recon;
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite world-model loss".into()));
        }
        let report = WmLossReport { total, recon_elbo, kl, state_recon, latent_recon };
        Ok(WmForward {
            enc_cache,
            mu,
            log_var,
            clamp_pass,
            dec_recon_cache,
            trans_cache,
            z_next,
            dec_pred_cache,
            z_target,
            report,
        })
    }

    /// Loss only, with externally supplied reparameterization noise.
    pub fn loss_report(
        &self,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
        eps: &Matrix,
        cfg: &WmConfig,
    ) -> Result<WmLossReport> {
        Ok(self.forward_loss(states, actions, next_states, eps, None, cfg)?.report)
    }

    /// Loss with both the reparameterization noise and the latent target
    /// frozen. This is the function the finite-difference gradient check must
    /// probe: the analytic gradient treats the target as a constant, so the
    /// probed loss has to hold it constant too.
    pub fn loss_report_frozen(
        &self,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
        eps: &Matrix,
        z_target: &Matrix,
        cfg: &WmConfig,
    ) -> Result<WmLossReport> {
        Ok(self.forward_loss(states, actions, next_states, eps, Some(z_target), cfg)?.report)
    }

    /// Loss and exact gradients for all three networks.
    ///
    /// Gradient flow: both decoder calls backpropagate into their latent
    /// inputs; the residual gives z̃_{t+1} a direct path into z; KL gradients
    /// add on μ and log σ²; clamped log-variance entries are zeroed; the
    /// latent target is constant.
    pub fn loss_and_grads(
        &self,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
        eps: &Matrix,
        cfg: &WmConfig,
    ) -> Result<(WmLossReport, WmGrads)> {
        let f = self.forward_loss(states, actions, next_states, eps, None, cfg)?;
        let b = states.rows as f64;
        let d = states.cols as f64;
        let l = self.latent_dim as f64;

        // d total / d s̃_t
        let mut d_srec = f.dec_recon_cache.output().clone();
        for (g, t) in d_srec.data.iter_mut().zip(states.data.iter()) {
            *g = cfg.w_recon * 2.0 * (*g - t) / (b * d);
        }
        let (dec_grads_recon, d_z_from_recon) = self.decoder.backward(&f.dec_recon_cache, &d_srec)?;

        // d total / d s̃_{t+1}
        let mut d_spred = f.dec_pred_cache.output().clone();
        for (g, t) in d_spred.data.iter_mut().zip(next_states.data.iter()) {
            *g = cfg.w_state * 2.0 * (*g - t) / (b * d);
        }
        let (dec_grads_pred, mut d_znext) = self.decoder.backward(&f.dec_pred_cache, &d_spred)?;

        // d total / d z̃_{t+1} gains the latent-reconstruction term.
        for ((g, zn), zt) in d_znext.data.iter_mut().zip(f.z_next.data.iter()).zip(f.z_target.data.iter()) {
            *g += cfg.w_latent * 2.0 * (zn - zt) / (b * l);
        }
        let (trans_grads, d_trans_in) = self.transition.backward(&f.trans_cache, &d_znext)?;
        let (d_z_from_trans, _) = d_trans_in.split_cols(self.latent_dim);

        // d total / d z: decoder path + transition input path + residual path.
        let mut d_z = d_z_from_recon;
        for ((g, a), c) in d_z.data.iter_mut().zip(d_z_from_trans.data.iter()).zip(d_znext.data.iter()) {
            *g += a + c;
        }

        // μ and log σ² receive the z-path plus the KL term; clamped
        // log-variance entries are masked.
        let mut d_mu = d_z.clone();
        let mut d_lv = Matrix::zeros(d_z.rows, d_z.cols);
        for i in 0..d_z.data.len() {
            let m = f.mu.data[i];
            let lv = f.log_var.data[i];
            let (kl_mu, kl_lv) = match cfg.kl_direction {
                KlDirection::Standard => (m, 0.5 * (exp(lv) - 1.0)),
                KlDirection::Reversed => {
                    (exp(-lv) * m, 0.5 * (1.0 - exp(-lv) * (1.0 + m * m)))
                }
            };
            d_mu.data[i] += cfg.w_kl * kl_mu / b;
            let dz_dlv = 0.5 * exp(lv / 2.0) * eps.data[i];
            d_lv.data[i] = (d_z.data[i] * dz_dlv + cfg.w_kl * kl_lv / b) * f.clamp_pass.data[i];
        }
        let (enc_grads, _) = self.encoder.backward(&f.enc_cache, &hcat(&d_mu, &d_lv))?;

        let mut dec_grads = dec_grads_recon;
        dec_grads.add_assign(&dec_grads_pred);
        Ok((f.report, WmGrads { encoder: enc_grads, decoder: dec_grads, transition: trans_grads }))
    }

    /// Mean-mode one-step prediction error over a dataset, in normalized
    /// space: MSE between predicted and true normalized next states.
    pub fn mean_mode_mse(&self, dataset: &OfflineDataset, norm: &NormStats) -> Result<f64> {
        let n = dataset.len();
        let mut states = Matrix::zeros(n, dataset.obs_dim);
        let mut actions = Matrix::zeros(n, dataset.act_dim);
        let mut next_states = Matrix::zeros(n, dataset.obs_dim);
        for (i, t) in dataset.transitions.iter().enumerate() {
            states.row_mut(i).copy_from_slice(&t.state);
            actions.row_mut(i).copy_from_slice(&t.action);
            next_states.row_mut(i).copy_from_slice(&t.next_state);
        }
        norm.normalize_rows(&mut states);
        norm.normalize_rows(&mut next_states);
        let mut rng = substream(0, Stream::Eval); // mean mode draws nothing
        let pred = self.generate_next_state(&states, &actions, EncodeMode::Mean, &mut rng, true)?;
        Ok(mse(&pred, &next_states))
    }
}

/// Seeded minibatch Adam training on normalized states. Returns the loss
/// curve sampled every `cfg.curve_every` iterations (plus the final one).
pub fn train_world_model(
    wm: &mut WorldModel,
    dataset: &OfflineDataset,
    norm: &NormStats,
    cfg: &WmConfig,
) -> Result<WmCurve> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.obs_dim != wm.obs_dim() || dataset.act_dim != wm.act_dim() {
        return Err(Error::Shape {
            expected: wm.obs_dim(),
            got: dataset.obs_dim,
            what: "dataset dims vs world model",
        });
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut rng = substream(cfg.seed, Stream::WmTrain);
    let mut curve = WmCurve::new();
    for it in 1..=cfg.iterations {
        let mut batch = sample_batch_dataset(dataset, cfg.batch_size, &mut rng)?;
        norm.normalize_rows(&mut batch.states);
        norm.normalize_rows(&mut batch.next_states);
        let eps = WorldModel::draw_eps(cfg.batch_size, wm.latent_dim, &mut rng);
        let (report, grads) = wm
            .loss_and_grads(&batch.states, &batch.actions, &batch.next_states, &eps, cfg)
            .map_err(|e| match e {
                Error::Numeric(_) => {
                    Error::Training(alloc::format!("world-model loss diverged at iteration {it}"))
                }
                other => other,
            })?;
        let diverged =
            |e: Error| -> Error {
                match e {
                    Error::Numeric(_) => Error::Training(alloc::format!(
                        "world-model update diverged at iteration {it}"
                    )),
                    other => other,
                }
            };
        wm.encoder.adam_step(&grads.encoder, &adam).map_err(diverged)?;
        wm.decoder.adam_step(&grads.decoder, &adam).map_err(diverged)?;
        wm.transition.adam_step(&grads.transition, &adam).map_err(diverged)?;
        if it % cfg.curve_every == 0 || it == cfg.iterations {
            curve.push((it, report));
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_norm_stats, generate_dataset, Flavor, GenerationSources};
    use crate::envs::EnvKind;
    use crate::gradcheck::grad_check;
    use crate::math::sqrt;
    use crate::nn::grads_flat;
    use alloc::vec;

    fn small_cfg(seed: u64) -> WmConfig {
        WmConfig { hidden: vec![16, 16], latent_dim: Some(2), seed, ..WmConfig::default() }
    }

    fn zeroed(mut net: MlpNet) -> MlpNet {
        net.for_each_param_mut(|p| *p = 0.0);
        net
    }

    #[test]
    fn zero_encoder_means_zero_latent_in_mean_mode() {
        let mut wm = WorldModel::init(3, 1, &small_cfg(1)).unwrap();
        wm.encoder = zeroed(wm.encoder);
        let states = Matrix::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.0, 0.5, -0.2]);
        let mut rng = substream(0, Stream::Eval);
        let (z, mu, lv) = wm.encode(&states, EncodeMode::Mean, &mut rng).unwrap();
        assert!(mu.data.iter().all(|&x| x == 0.0));
        assert!(lv.data.iter().all(|&x| x == 0.0));
        assert!(z.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sample_moments_match_encoder_distribution() {
        let wm = WorldModel::init(3, 1, &small_cfg(2)).unwrap();
        let states = Matrix::from_vec(1, 3, vec![0.4, -0.1, 0.9]);
        let mut rng = substream(7, Stream::WmTrain);
        let (_, mu, lv) = wm.encode(&states, EncodeMode::Mean, &mut rng).unwrap();
        let n = 10_000;
        let mut sums = vec![0.0; 2];
        let mut sq = vec![0.0; 2];
        for _ in 0..n {
            let (z, _, _) = wm.encode(&states, EncodeMode::Sample, &mut rng).unwrap();
            for d in 0..2 {
                sums[d] += z.get(0, d);
                sq[d] += z.get(0, d) * z.get(0, d);
            }
        }
        for d in 0..2 {
            let mean = sums[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            let want_var = exp(lv.get(0, d));
            let se = sqrt(want_var / n as f64);
            assert!((mean - mu.get(0, d)).abs() < 5.0 * se, "dim {d} mean off");
            assert!(
                (var - want_var).abs() < 0.05 * want_var,
                "dim {d}: var {var} vs {want_var}"
            );
        }
    }

    #[test]
    fn kl_closed_form_hand_values() {
        let zero = Matrix::zeros(1, 3);
        assert_eq!(kl_to_standard_normal(&zero, &zero, KlDirection::Standard), 0.0);
        assert_eq!(kl_to_standard_normal(&zero, &zero, KlDirection::Reversed), 0.0);
        let mu = Matrix::from_vec(1, 1, vec![1.0]);
        let lv = Matrix::zeros(1, 1);
        assert!((kl_to_standard_normal(&mu, &lv, KlDirection::Standard) - 0.5).abs() < 1e-12);
        assert!((kl_to_standard_normal(&mu, &lv, KlDirection::Reversed) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        let mu = vec![0.8, -0.3, 0.2, 1.1];
        let lv = vec![0.4, -0.6, 0.0, 0.9];
        let mu_m = Matrix::from_vec(1, 4, mu.clone());
        let lv_m = Matrix::from_vec(1, 4, lv.clone());
        let mut rng = substream(11, Stream::Eval);
        for dir in [KlDirection::Standard, KlDirection::Reversed] {
            let closed = kl_to_standard_normal(&mu_m, &lv_m, dir);
            let mc = kl_monte_carlo(&mu, &lv, dir, 100_000, &mut rng);
            assert!(
                (closed - mc).abs() < 0.01 * closed.abs().max(1.0),
                "{}: closed {closed} vs mc {mc}",
                dir.name()
            );
        }
    }

    #[test]
    fn residual_transition_identities() {
        let mut wm = WorldModel::init(3, 1, &small_cfg(3)).unwrap();
        wm.transition = zeroed(wm.transition);
        let z = Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.25]);
        let a = Matrix::from_vec(2, 1, vec![0.1, -0.3]);
        let z_next = wm.predict_next_latent(&z, &a).unwrap();
        assert_eq!(z_next.data, z.data);

        // Single affine transition: doubling its weights doubles the delta.
        let mut rng = substream(4, Stream::WmInit);
        let mut linear = MlpNet::init(&[3, 2], Head::Linear, &mut rng);
        let wm_lin = WorldModel { transition: linear.clone(), ..wm.clone() };
        let d1: Vec<f64> = {
            let out = wm_lin.predict_next_latent(&z, &a).unwrap();
            out.data.iter().zip(z.data.iter()).map(|(o, zi)| o - zi).collect()
        };
        linear.for_each_param_mut(|p| *p *= 2.0);
        let wm_lin2 = WorldModel { transition: linear, ..wm.clone() };
        let d2: Vec<f64> = {
            let out = wm_lin2.predict_next_latent(&z, &a).unwrap();
            out.data.iter().zip(z.data.iter()).map(|(o, zi)| o - zi).collect()
        };
        for (x, y) in d1.iter().zip(d2.iter()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }

        // Hand case: z = 2, Δ = 0.5 via a bias-only net.
        let mut bias_only = MlpNet::init(&[2, 1], Head::Linear, &mut substream(5, Stream::WmInit));
        bias_only.for_each_param_mut(|p| *p = 0.0);
        bias_only.biases[0][0] = 0.5;
        let wm1 = WorldModel {
            encoder: wm.encoder.clone(),
            decoder: wm.decoder.clone(),
            transition: bias_only,
            latent_dim: 1,
            trained_on_normalized: true,
        };
        let out = wm1
            .predict_next_latent(&Matrix::from_vec(1, 1, vec![2.0]), &Matrix::from_vec(1, 1, vec![0.0]))
            .unwrap();
        assert_eq!(out.get(0, 0), 2.5);
    }

    #[test]
    fn generation_stochastic_in_sample_mode_deterministic_in_mean_mode() {
        let wm = WorldModel::init(3, 1, &small_cfg(6)).unwrap();
        let s = Matrix::from_vec(1, 3, vec![0.2, 0.4, -0.9]);
        let a = Matrix::from_vec(1, 1, vec![0.5]);
        let mut rng = substream(8, Stream::Augment);
        let g1 = wm.generate_next_state(&s, &a, EncodeMode::Sample, &mut rng, true).unwrap();
        let g2 = wm.generate_next_state(&s, &a, EncodeMode::Sample, &mut rng, true).unwrap();
        assert_ne!(g1.data, g2.data);
        let m1 = wm.generate_next_state(&s, &a, EncodeMode::Mean, &mut rng, true).unwrap();
        let m2 = wm.generate_next_state(&s, &a, EncodeMode::Mean, &mut rng, true).unwrap();
        assert_eq!(m1.data, m2.data);
        assert!(matches!(
            wm.generate_next_state(&s, &a, EncodeMode::Mean, &mut rng, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zeroed_transition_makes_generation_an_autoencoder() {
        let mut wm = WorldModel::init(3, 1, &small_cfg(9)).unwrap();
        wm.transition = zeroed(wm.transition);
        let s = Matrix::from_vec(2, 3, vec![0.3, -0.2, 0.8, -0.6, 0.1, 0.4]);
        let a = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        let mut rng = substream(0, Stream::Eval);
        let gen = wm.generate_next_state(&s, &a, EncodeMode::Mean, &mut rng, true).unwrap();
        let (z, _, _) = wm.encode(&s, EncodeMode::Mean, &mut rng).unwrap();
        let auto = wm.decoder.forward_only(&z).unwrap();
        assert_eq!(gen.data, auto.data);
    }

    #[test]
    fn loss_total_is_sum_of_components() {
        let wm = WorldModel::init(3, 1, &small_cfg(10)).unwrap();
        let cfg = WmConfig { w_recon: 0.7, w_kl: 2.0, w_state: 1.3, w_latent: 0.5, ..small_cfg(10) };
        let mut rng = substream(12, Stream::WmTrain);
        let s = WorldModel::draw_eps(4, 3, &mut rng);
        let a = WorldModel::draw_eps(4, 1, &mut rng);
        let s2 = WorldModel::draw_eps(4, 3, &mut rng);
        let eps = WorldModel::draw_eps(4, 2, &mut rng);
        let r = wm.loss_report(&s, &a, &s2, &eps, &cfg).unwrap();
        let sum = r.recon_elbo + r.kl + r.state_recon + r.latent_recon;
        assert!((r.total - sum).abs() < 1e-9);
        for part in [r.recon_elbo, r.kl, r.state_recon, r.latent_recon] {
            assert!(part >= 0.0);
        }
    }

    #[test]
    fn identical_states_zero_transition_mean_noise_kill_latent_loss() {
        let mut wm = WorldModel::init(3, 1, &small_cfg(13)).unwrap();
        wm.transition = zeroed(wm.transition);
        let cfg = small_cfg(13);
        let s = Matrix::from_vec(2, 3, vec![0.4, -0.5, 0.2, 0.9, 0.0, -0.3]);
        let a = Matrix::zeros(2, 1);
        let eps = Matrix::zeros(2, 2); // frozen at zero → z = μ
        let r = wm.loss_report(&s, &a, &s.clone(), &eps, &cfg).unwrap();
        assert!(r.latent_recon.abs() < 1e-24, "latent loss {}", r.latent_recon);
        assert!((r.recon_elbo - r.state_recon).abs() < 1e-12);
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        let base = WorldModel::init(3, 2, &WmConfig {
            hidden: vec![8],
            latent_dim: Some(2),
            seed: 14,
            ..WmConfig::default()
        }).unwrap();
        let mut rng = substream(15, Stream::WmTrain);
        let s = WorldModel::draw_eps(4, 3, &mut rng);
        let a = WorldModel::draw_eps(4, 2, &mut rng);
        let s2 = WorldModel::draw_eps(4, 3, &mut rng);
        let eps = WorldModel::draw_eps(4, 2, &mut rng);

        for dir in [KlDirection::Standard, KlDirection::Reversed] {
            let cfg = WmConfig { kl_direction: dir, ..WmConfig::default() };
            let (_, grads) = base.loss_and_grads(&s, &a, &s2, &eps, &cfg).unwrap();
            // The latent target is detached, so the probed loss freezes it at
            // the base point (else encoder perturbations leak through it).
            let target = base.latent_target(&s2).unwrap();
            for (which, analytic) in [
                ("encoder", grads_flat(&grads.encoder)),
                ("decoder", grads_flat(&grads.decoder)),
                ("transition", grads_flat(&grads.transition)),
            ] {
                let mut probe = match which {
                    "encoder" => base.encoder.clone(),
                    "decoder" => base.decoder.clone(),
                    _ => base.transition.clone(),
                };
                let report = grad_check(
                    &mut probe,
                    |net| {
                        let mut wm = base.clone();
                        match which {
                            "encoder" => wm.encoder = net.clone(),
                            "decoder" => wm.decoder = net.clone(),
                            _ => wm.transition = net.clone(),
                        }
                        wm.loss_report_frozen(&s, &a, &s2, &eps, &target, &cfg).unwrap().total
                    },
                    &analytic,
                    1e-4,
                );
                assert!(
                    report.pass,
                    "{which} ({}) worst rel err {} at {}",
                    dir.name(),
                    report.max_rel_error,
                    report.worst_param
                );
            }
        }
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let ds = generate_dataset(
            EnvKind::PointMass,
            Flavor::Random,
            2_000,
            21,
            &GenerationSources::default(),
        )
        .unwrap();
        let norm = compute_norm_stats(&ds, 1e-3).unwrap();
        let cfg = WmConfig {
            hidden: vec![32, 32],
            latent_dim: None,
            iterations: 300,
            batch_size: 64,
            seed: 21,
            curve_every: 10,
            ..WmConfig::default()
        };
        let mut wm = WorldModel::init(ds.obs_dim, ds.act_dim, &cfg).unwrap();
        let before = wm.encoder.params_flat();
        let curve0 = train_world_model(&mut wm, &ds, &norm, &WmConfig { iterations: 0, ..cfg.clone() }).unwrap();
        assert!(curve0.is_empty());
        assert_eq!(wm.encoder.params_flat(), before);

        let curve = train_world_model(&mut wm, &ds, &norm, &cfg).unwrap();
        let iters: Vec<usize> = curve.iter().map(|(i, _)| *i).collect();
        assert_eq!(iters, (1..=30).map(|k| 10 * k).collect::<Vec<usize>>());
        assert!(
            curve.last().unwrap().1.total < curve.first().unwrap().1.total,
            "loss did not decrease: {:?}",
            curve
        );

        let mut wm2 = WorldModel::init(ds.obs_dim, ds.act_dim, &cfg).unwrap();
        let curve2 = train_world_model(&mut wm2, &ds, &norm, &cfg).unwrap();
        assert_eq!(wm.encoder.params_flat(), wm2.encoder.params_flat());
        assert_eq!(wm.transition.params_flat(), wm2.transition.params_flat());
        assert_eq!(curve.last().unwrap().1, curve2.last().unwrap().1);
    }

    #[test]
    fn mean_mode_mse_beats_noise_floor_after_training() {
        let ds = generate_dataset(
            EnvKind::PointMass,
            Flavor::Random,
            3_000,
            22,
            &GenerationSources::default(),
        )
        .unwrap();
        let norm = compute_norm_stats(&ds, 1e-3).unwrap();
        let cfg = WmConfig {
            hidden: vec![64, 64],
            iterations: 800,
            batch_size: 64,
            seed: 22,
            ..WmConfig::default()
        };
        let mut wm = WorldModel::init(ds.obs_dim, ds.act_dim, &cfg).unwrap();
        let untrained = wm.mean_mode_mse(&ds, &norm).unwrap();
        train_world_model(&mut wm, &ds, &norm, &cfg).unwrap();
        let trained = wm.mean_mode_mse(&ds, &norm).unwrap();
        assert!(trained < untrained, "mse {trained} vs untrained {untrained}");
    }
}
