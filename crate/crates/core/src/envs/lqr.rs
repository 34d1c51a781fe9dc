use rand::Rng as _;

use super::{EnvSpec, Episode, Env, Step};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DT: f64 = 0.1;
pub const MAX_STEPS: usize = 100;
pub const MAX_FORCE: f64 = 3.0;
/// Each state component is clamped to `±STATE_BOUND` after a step. Optimal
/// trajectories from the reset box stay below 1.3, so the bound never binds
/// for them.
pub const STATE_BOUND: f64 = 5.0;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: "lqr2",
        obs_dim: 2,
        act_dim: 1,
        action_low: vec![-MAX_FORCE],
        action_high: vec![MAX_FORCE],
        max_steps: MAX_STEPS,
        dt: DT,
    }
}

/// Discrete linear system `x' = A x + B u` with stage reward `−(xᵀQx + uᵀRu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrModel {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub q: [[f64; 2]; 2],
    pub r: f64,
}

impl Default for LqrModel {
    /// Exactly discretized double integrator (position, velocity), `Q = I`, `R = 1`.
    fn default() -> Self {
        Self {
            a: [[1.0, DT], [0.0, 1.0]],
            b: [0.5 * DT * DT, DT],
            q: [[1.0, 0.0], [0.0, 1.0]],
            r: 1.0,
        }
    }
}

impl LqrModel {
    pub fn step(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0] * u,
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1] * u,
        ]
    }

    pub fn cost(&self, x: [f64; 2], u: f64) -> f64 {
        quad(&self.q, x) + self.r * u * u
    }
}

fn quad(m: &[[f64; 2]; 2], x: [f64; 2]) -> f64 {
    x[0] * (m[0][0] * x[0] + m[0][1] * x[1]) + x[1] * (m[1][0] * x[0] + m[1][1] * x[1])
}

/// Fixed point of the discounted Riccati recursion: optimal cost-to-go
/// `xᵀPx` and gain `u = −Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: [[f64; 2]; 2],
    pub k: [f64; 2],
    pub iterations: usize,
}

impl RiccatiSolution {
    /// Optimal discounted *return* (negated cost) from `x`.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        -quad(&self.p, x)
    }

    pub fn action(&self, x: [f64; 2]) -> f64 {
        -(self.k[0] * x[0] + self.k[1] * x[1])
    }
}

/// Iterates `P ← Q + γAᵀPA − γ²AᵀPB (R + γBᵀPB)⁻¹ BᵀPA` from `P = 0` until
/// successive iterates differ by less than `tol` (max-abs).
pub fn riccati(model: &LqrModel, gamma: f64, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    let (a, b, q, r) = (&model.a, &model.b, &model.q, model.r);
    let mut p = [[0.0; 2]; 2];
    for it in 1..=max_iter {
        // PA, PB
        let mut pa = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                pa[i][j] = p[i][0] * a[0][j] + p[i][1] * a[1][j];
            }
        }
        let pb = [p[0][0] * b[0] + p[0][1] * b[1], p[1][0] * b[0] + p[1][1] * b[1]];
        let bpb = b[0] * pb[0] + b[1] * pb[1];
        let bpa = [
            b[0] * pa[0][0] + b[1] * pa[1][0],
            b[0] * pa[0][1] + b[1] * pa[1][1],
        ];
        let k = [gamma * bpa[0] / (r + gamma * bpb), gamma * bpa[1] / (r + gamma * bpb)];
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let apa = a[0][i] * pa[0][j] + a[1][i] * pa[1][j];
                next[i][j] = q[i][j] + gamma * apa - gamma * bpa[i] * k[j];
            }
        }
        let diff = (0..4)
            .map(|n| (next[n / 2][n % 2] - p[n / 2][n % 2]).abs())
            .fold(0.0, f64::max);
        p = next;
        if diff < tol {
            return Ok(RiccatiSolution { p, k, iterations: it });
        }
    }
    Err(Error::Argument(format!("riccati iteration did not converge in {max_iter} steps")))
}

/// `lqr2`: the default [`LqrModel`] with `|u| ≤ 3`, reset `x ~ U[−1, 1]²`,
/// state clamped to `[−5, 5]²`.
#[derive(Debug, Clone)]
pub struct Lqr {
    spec: EnvSpec,
    pub model: LqrModel,
    pub x: [f64; 2],
    episode: Episode,
    rng: Rng,
}

impl Lqr {
    pub fn new(rng: Rng) -> Self {
        Self {
            spec: spec(),
            model: LqrModel::default(),
            x: [0.0; 2],
            episode: Episode::new(),
            rng,
        }
    }

    /// Same task with a different episode length.
    pub fn with_max_steps(rng: Rng, max_steps: usize) -> Self {
        let mut env = Self::new(rng);
        env.spec.max_steps = max_steps.max(1);
        env
    }

    pub fn reset_to(&mut self, x: [f64; 2]) -> Vec<f64> {
        self.x = x;
        self.episode.restart();
        self.observation()
    }
}

impl Env for Lqr {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let x = [self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)];
        self.reset_to(x)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let u = self.episode.check_action(&self.spec, action)?[0];
        let reward = -self.model.cost(self.x, u);
        self.x = self.model.step(self.x, u).map(|v| v.clamp(-STATE_BOUND, STATE_BOUND));
        let done = self.episode.tick(&self.spec);
        self.episode.done = done;
        Ok(Step {
            obs: self.observation(),
            reward,
            done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.x.to_vec()
    }
}
