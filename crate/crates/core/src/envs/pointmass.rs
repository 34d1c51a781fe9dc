use rand::Rng as _;

use super::{EnvSpec, Episode, Env, Step};
use crate::error::Result;
use crate::rng::Rng;

pub const DT: f64 = 0.1;
pub const MAX_STEPS: usize = 100;
pub const ACTION_COST: f64 = 0.01;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: "pointmass2d",
        obs_dim: 4,
        act_dim: 2,
        action_low: vec![-1.0, -1.0],
        action_high: vec![1.0, 1.0],
        max_steps: MAX_STEPS,
        dt: DT,
    }
}

/// Unit mass in the plane with the goal at the origin.
///
/// State `(p, v)`; `v' = v + a·dt`, `p' = p + v'·dt`;
/// reward `−‖p'‖² − 0.01‖a‖²`. Resets to `p ~ U[−1, 1]²` at rest.
/// Observation is `(p_x, p_y, v_x, v_y)`.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    episode: Episode,
    rng: Rng,
}

impl PointMass {
    pub fn new(rng: Rng) -> Self {
        Self {
            spec: spec(),
            pos: [0.0; 2],
            vel: [0.0; 2],
            episode: Episode::new(),
            rng,
        }
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.vel = vel;
        self.episode.restart();
        self.observation()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let p = [self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)];
        self.reset_to(p, [0.0; 2])
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = self.episode.check_action(&self.spec, action)?;
        for k in 0..2 {
            self.vel[k] += a[k] * DT;
            self.pos[k] += self.vel[k] * DT;
        }
        let dist2 = self.pos[0].powi(2) + self.pos[1].powi(2);
        let reward = -dist2 - ACTION_COST * (a[0] * a[0] + a[1] * a[1]);
        let done = self.episode.tick(&self.spec);
        self.episode.done = done;
        Ok(Step {
            obs: self.observation(),
            reward,
            done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}
