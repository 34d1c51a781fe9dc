use std::f64::consts::PI;

use rand::Rng as _;

use super::{EnvSpec, Episode, Env, Step};
use crate::error::Result;
use crate::rng::Rng;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_TORQUE: f64 = 8.0;
pub const MAX_SPEED: f64 = 8.0;
pub const DT: f64 = 0.05;
pub const MAX_STEPS: usize = 200;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: "pendulum",
        obs_dim: 3,
        act_dim: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
        max_steps: MAX_STEPS,
        dt: DT,
    }
}

/// Torque-limited pendulum swing-up. The angle is measured from upright.
///
/// `θ̈ = (g/l)·sin θ + τ/(m l²)` with `g = 10`, `m = l = 1` and torque
/// `τ = 8a` for the action `a ∈ [−1, 1]`, so one swing is still needed from
/// hanging. Angular speed is clipped to `±8`. Reward
/// `−(wrap(θ)² + 0.1·θ̇² + 0.001·τ²)`. Resets to `θ ~ U[−π, π]`,
/// `θ̇ ~ U[−1, 1]`. Observation `(cos θ, sin θ, θ̇)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub omega: f64,
    episode: Episode,
    rng: Rng,
}

pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(rng: Rng) -> Self {
        Self {
            spec: spec(),
            theta: 0.0,
            omega: 0.0,
            episode: Episode::new(),
            rng,
        }
    }

    pub fn reset_to(&mut self, theta: f64, omega: f64) -> Vec<f64> {
        self.theta = theta;
        self.omega = omega;
        self.episode.restart();
        self.observation()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let theta = self.rng.gen_range(-PI..=PI);
        let omega = self.rng.gen_range(-1.0..=1.0);
        self.reset_to(theta, omega)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = self.episode.check_action(&self.spec, action)?;
        let torque = MAX_TORQUE * a[0];
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.omega * self.omega + 0.001 * torque * torque);
        let accel = GRAVITY / LENGTH * self.theta.sin() + torque / (MASS * LENGTH * LENGTH);
        self.omega = (self.omega + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.omega * DT);
        let done = self.episode.tick(&self.spec);
        self.episode.done = done;
        Ok(Step {
            obs: self.observation(),
            reward,
            done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}
