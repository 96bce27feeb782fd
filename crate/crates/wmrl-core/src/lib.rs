//! Deterministic substrate for world-model-augmented offline-to-online RL.
//!
//! Everything numeric lives here: a small f64 MLP stack with Adam and
//! finite-difference gradient checking, two closed-form control environments
//! (pendulum swing-up and a 2-D point mass), offline dataset and replay-buffer
//! machinery, a variational one-step world model, TD3 / TD3+BC agents whose
//! batches can be augmented with model-generated next states, and the
//! offline-pretrain / online-fine-tune pipeline that ties them together.
//!
//! The crate is `no_std` + `alloc` compatible (the default `std` feature only
//! forwards to `rand`'s std support). All transcendental functions go through
//! `libm` and all randomness through explicitly seeded ChaCha streams, so
//! every result — environment rollouts, network training, generated datasets —
//! is bit-reproducible for a given seed, on any platform.
//!
//! Modules:
//! - [`math`]: scalar helpers on top of `libm` (angle wrapping, clamping).
//! - [`matrix`]: row-major f64 matrices and the tiled matmul kernels.
//! - [`rng`]: master-seed fan-out into named deterministic substreams.
//! - [`nn`]: MLPs, Adam, Polyak averaging, parameter traversal.
//! - [`gradcheck`]: central finite-difference verification of any loss.
//! - [`envs`]: the two built-in environments plus reference-score tooling.
//! - [`data`]: transitions, offline datasets, normalization, replay buffer.
//! - [`wm`]: the variational one-step world model.
//! - [`agent`]: TD3 / TD3+BC updates and batch augmentation.
//! - [`pipeline`]: evaluation, normalized scores, phase loops, critic probes.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod agent;
pub mod data;
pub mod envs;
pub mod gradcheck;
pub mod math;
pub mod matrix;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod wm;

use alloc::string::String;
use core::fmt;

/// Crate-wide error type.
///
/// Variants map onto the process exit classes used by the CLI: configuration
/// and usage problems, data/shape problems, and numeric failures during
/// training or checking.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller passed inconsistent dimensions (e.g. batch columns vs. layer
    /// input size).
    Shape { expected: usize, got: usize, what: &'static str },
    /// A configuration value is out of its documented range.
    Config(String),
    /// A numeric invariant failed: non-finite loss, diverged parameters, a
    /// gradient check out of tolerance.
    Numeric(String),
    /// Training-time contract violation (empty dataset, missing phase input).
    Training(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { expected, got, what } => {
                write!(f, "shape mismatch in {what}: expected {expected}, got {got}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
