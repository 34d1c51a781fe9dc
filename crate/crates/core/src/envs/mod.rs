//! Built-in continuous-control tasks.
//!
//! | name          | obs | act | dt   | steps | notes                         |
//! |---------------|-----|-----|------|-------|-------------------------------|
//! | `pointmass2d` | 4   | 2   | 0.1  | 100   | drive a 2-D mass to the origin |
//! | `pendulum`    | 3   | 1   | 0.05 | 200   | swing-up, torque 8·a, a ∈ [−1, 1] |
//! | `lqr2`        | 2   | 1   | 0.1  | 100   | double integrator, quadratic cost, state clamped to ±5 |
//!
//! Actions are clamped to the bounds before the dynamics run. Integration is
//! semi-implicit Euler. Dynamics are deterministic; only `reset` draws from
//! the environment's own RNG stream.

mod lqr;
mod pendulum;
mod pointmass;

pub use lqr::{riccati, Lqr, LqrModel, RiccatiSolution};
pub use pendulum::Pendulum;
pub use pointmass::PointMass;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
    pub dt: f64,
}

impl EnvSpec {
    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Samples an initial state from the task's reset distribution.
    fn reset(&mut self) -> Vec<f64>;

    /// Advances one `dt`. Fails if called after `done` without a reset, or
    /// with a non-finite or wrongly sized action.
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    fn observation(&self) -> Vec<f64>;
}

pub const ENV_NAMES: [&str; 3] = ["pointmass2d", "pendulum", "lqr2"];

pub fn spec(name: &str) -> Result<EnvSpec> {
    match name {
        "pointmass2d" => Ok(pointmass::spec()),
        "pendulum" => Ok(pendulum::spec()),
        "lqr2" => Ok(lqr::spec()),
        _ => Err(Error::UnknownEnv {
            name: name.to_string(),
            available: ENV_NAMES.join(", "),
        }),
    }
}

pub fn make(name: &str, rng: Rng) -> Result<Box<dyn Env>> {
    match name {
        "pointmass2d" => Ok(Box::new(PointMass::new(rng))),
        "pendulum" => Ok(Box::new(Pendulum::new(rng))),
        "lqr2" => Ok(Box::new(Lqr::new(rng))),
        _ => spec(name).map(|_| unreachable!()),
    }
}

/// Tracks the step counter and the done latch shared by every task.
#[derive(Debug, Clone)]
pub(crate) struct Episode {
    pub steps: usize,
    pub done: bool,
    /// Whether `reset` has run at least once.
    pub started: bool,
}

impl Episode {
    pub fn new() -> Self {
        Self {
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub fn restart(&mut self) {
        self.steps = 0;
        self.done = false;
        self.started = true;
    }

    pub fn check_action(&self, spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
        if !self.started || self.done {
            return Err(Error::Env {
                step: self.steps,
                message: "step called on a finished episode without reset".into(),
            });
        }
        if action.len() != spec.act_dim {
            return Err(Error::Env {
                step: self.steps,
                message: format!("action has {} entries, expected {}", action.len(), spec.act_dim),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Env {
                step: self.steps,
                message: "non-finite action".into(),
            });
        }
        Ok(spec.clamp_action(action))
    }

    /// Counts one step; returns whether the time limit was reached.
    pub fn tick(&mut self, spec: &EnvSpec) -> bool {
        self.steps += 1;
        self.steps >= spec.max_steps
    }
}
