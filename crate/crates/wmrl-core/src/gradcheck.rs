//! Central finite-difference verification of analytic gradients.
//!
//! Every loss in the crate is checked against this oracle: perturb one
//! parameter at a time by ±h, difference the loss, and compare against the
//! implementation's backward pass. Losses with stochastic pieces (sampled
//! latents, target-policy smoothing noise, the detached λ denominator) must be
//! evaluated with that noise frozen so the probed function is deterministic.

use alloc::vec::Vec;

use crate::nn::MlpNet;

/// Central-difference step. 1e-5 balances truncation against cancellation in
/// 64-bit arithmetic.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of one gradient check sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index (params_flat order) of the worst parameter.
    pub worst_param: usize,
    pub params_checked: usize,
    pub pass: bool,
}

/// Relative error between a numeric and an analytic derivative, guarded so
/// that two near-zero gradients compare as equal.
#[inline]
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    let denom = (numeric.abs() + analytic.abs()).max(1e-8);
    (numeric - analytic).abs() / denom
}

/// Sweep every parameter of `net`, comparing `analytic` (in `params_flat`
/// order) against central differences of `loss_fn`.
///
/// `loss_fn` must be a deterministic scalar function of the network's
/// parameters; it is invoked `2 * param_count` times. The network is restored
/// to its original parameters before returning.
pub fn grad_check<F>(
    net: &mut MlpNet,
    mut loss_fn: F,
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&MlpNet) -> f64,
{
    let base = net.params_flat();
    assert_eq!(
        analytic.len(),
        base.len(),
        "analytic gradient length must match parameter count"
    );
    let h = DEFAULT_STEP;
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    let mut probe: Vec<f64> = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        net.set_params_flat(&probe).unwrap();
        let up = loss_fn(net);
        probe[i] = base[i] - h;
        net.set_params_flat(&probe).unwrap();
        let down = loss_fn(net);
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(numeric, analytic[i]);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    net.set_params_flat(&base).unwrap();
    GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        params_checked: base.len(),
        pass: max_rel < tolerance,
    }
}
