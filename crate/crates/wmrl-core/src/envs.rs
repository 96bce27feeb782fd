//! Built-in deterministic control tasks: pendulum swing-up and a 2-D point
//! mass.
//!
//! Both are pure dynamical systems — `(state, action) -> next state` with no
//! internal randomness — so replaying a recorded action sequence from the
//! same reset reproduces every observation and reward bit-exactly. Episodes
//! end only by time limit; neither task has failure states, and downstream
//! storage records `done = false` at truncation (bootstrapping continues
//! through the artificial horizon).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::rand_core::RngCore;

use crate::math::{clamp, cos, sin, sqrt, wrap_angle};
use crate::rng::uniform;
use crate::{Error, Result};

/// Pendulum constants: g=10, m=1, l=1, dt=0.05, torque in [-2, 2], angular
/// velocity clipped to [-8, 8], horizon 200.
pub mod pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;
    pub const HORIZON: usize = 200;
}

/// Point-mass constants: dt=0.05, acceleration in [-1,1]^2, velocity clipped
/// to [-1,1]^2, position clipped to [-2,2]^2, horizon 100.
pub mod pointmass {
    pub const DT: f64 = 0.05;
    pub const MAX_ACCEL: f64 = 1.0;
    pub const MAX_SPEED: f64 = 1.0;
    pub const MAX_POS: f64 = 2.0;
    pub const HORIZON: usize = 100;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    /// Parse an environment name as used in configs and dataset metadata.
    pub fn parse(name: &str) -> Result<EnvKind> {
        match name {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(Error::Config(alloc::format!("unknown env '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        }
    }
}

/// Static description of an environment's interface.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn for_kind(kind: EnvKind) -> EnvSpec {
        match kind {
            EnvKind::Pendulum => EnvSpec {
                name: "pendulum".into(),
                obs_dim: 3,
                act_dim: 1,
                action_low: vec![-pendulum::MAX_TORQUE],
                action_high: vec![pendulum::MAX_TORQUE],
                max_episode_steps: pendulum::HORIZON,
            },
            EnvKind::PointMass => EnvSpec {
                name: "pointmass".into(),
                obs_dim: 4,
                act_dim: 2,
                action_low: vec![-pointmass::MAX_ACCEL; 2],
                action_high: vec![pointmass::MAX_ACCEL; 2],
                max_episode_steps: pointmass::HORIZON,
            },
        }
    }

    /// Symmetric action bound, asserted uniform across dimensions (both
    /// built-in tasks have box actions of the form [-b, +b]^d).
    pub fn action_bound(&self) -> f64 {
        let b = self.action_high[0];
        debug_assert!(self
            .action_high
            .iter()
            .zip(self.action_low.iter())
            .all(|(hi, lo)| *hi == b && *lo == -b));
        b
    }
}

/// Per-step reward lower bound (the per-step maximum is 0 in both tasks);
/// used for the critic-scale bound Q ∈ [r_min/(1−γ), 0].
pub fn reward_min(kind: EnvKind) -> f64 {
    match kind {
        // −(π² + 0.1·8² + 0.001·2²)
        EnvKind::Pendulum => -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0),
        // −(‖(2,2)‖₂ + 0.001·2)
        EnvKind::PointMass => -(2.0 * sqrt(2.0) + 0.001 * 2.0),
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True only when the step counter reaches the horizon (time-limit
    /// truncation; neither task terminates otherwise).
    pub done: bool,
}

/// A live environment instance: task kind, internal state, step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub kind: EnvKind,
    pub spec: EnvSpec,
    /// Pendulum: `[theta, theta_dot]` (theta unwrapped). Point mass:
    /// `[px, py, vx, vy]`.
    pub state: Vec<f64>,
    pub step_counter: usize,
}

impl Env {
    /// A fresh instance in the zero state; call `reset` before use.
    pub fn new(kind: EnvKind) -> Env {
        let spec = EnvSpec::for_kind(kind);
        let dim = match kind {
            EnvKind::Pendulum => 2,
            EnvKind::PointMass => 4,
        };
        Env { kind, spec, state: vec![0.0; dim], step_counter: 0 }
    }

    /// Draw the initial state from the supplied stream and zero the step
    /// counter. Draw order is fixed per task: pendulum theta then theta_dot;
    /// point mass px then py (velocity starts at zero).
    pub fn reset<R: RngCore>(&mut self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                self.state[0] = uniform(rng, -PI, PI);
                self.state[1] = uniform(rng, -1.0, 1.0);
            }
            EnvKind::PointMass => {
                self.state[0] = uniform(rng, -1.0, 1.0);
                self.state[1] = uniform(rng, -1.0, 1.0);
                self.state[2] = 0.0;
                self.state[3] = 0.0;
            }
        }
        self.step_counter = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                vec![cos(self.state[0]), sin(self.state[0]), self.state[1]]
            }
            EnvKind::PointMass => self.state.clone(),
        }
    }

    /// Advance the dynamics one step. The action is clipped into the action
    /// box before use; the reward is computed from the post-update state and
    /// the clipped action.
    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != self.spec.act_dim {
            return Err(Error::Shape {
                expected: self.spec.act_dim,
                got: action.len(),
                what: "env action dimensions",
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite action passed to env step".into()));
        }
        let reward = match self.kind {
            EnvKind::Pendulum => {
                use pendulum::*;
                let a = clamp(action[0], -MAX_TORQUE, MAX_TORQUE);
                let (theta, theta_dot) = (self.state[0], self.state[1]);
                let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * sin(theta)
                    + 3.0 * a / (MASS * LENGTH * LENGTH);
                let new_dot = clamp(theta_dot + accel * DT, -MAX_SPEED, MAX_SPEED);
                let new_theta = theta + new_dot * DT;
                self.state[0] = new_theta;
                self.state[1] = new_dot;
                let w = wrap_angle(new_theta);
                -(w * w + 0.1 * new_dot * new_dot + 0.001 * a * a)
            }
            EnvKind::PointMass => {
                use pointmass::*;
                let ax = clamp(action[0], -MAX_ACCEL, MAX_ACCEL);
                let ay = clamp(action[1], -MAX_ACCEL, MAX_ACCEL);
                let vx = clamp(self.state[2] + ax * DT, -MAX_SPEED, MAX_SPEED);
                let vy = clamp(self.state[3] + ay * DT, -MAX_SPEED, MAX_SPEED);
                let px = clamp(self.state[0] + vx * DT, -MAX_POS, MAX_POS);
                let py = clamp(self.state[1] + vy * DT, -MAX_POS, MAX_POS);
                self.state = vec![px, py, vx, vy];
                -sqrt(px * px + py * py) - 0.001 * (ax * ax + ay * ay)
            }
        };
        self.step_counter += 1;
        Ok(Step {
            obs: self.observation(),
            reward,
            done: self.step_counter >= self.spec.max_episode_steps,
        })
    }
}
