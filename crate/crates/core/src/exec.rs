//! Action selection: model-free behavior and the MPC / trajectory / repeat
//! modes that exercise the learned transition at execution time.

use std::cell::Cell;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Tensor, Var};
use crate::envs;
use crate::error::{Error, Result};
use crate::model::{Network, PPNParams};
use crate::par::{self, Parallelism};
use crate::rng::{stream_n, Rng, Stream};

/// `μ + σ ⊙ ξ`, `ξ ~ N(0, I)`, one draw per dimension in order.
pub fn sample_gaussian(mean: &[f64], sigma: &[f64], rng: &mut Rng) -> Vec<f64> {
    mean.iter()
        .zip(sigma)
        .map(|(m, s)| {
            let xi: f64 = rng.sample(StandardNormal);
            m + s * xi
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    ModelFree,
    Mpc,
    Trajectory,
    Repeat,
}

impl ExecMode {
    pub const ALL: [ExecMode; 4] = [ExecMode::ModelFree, ExecMode::Mpc, ExecMode::Trajectory, ExecMode::Repeat];
    pub const ABLATION: [ExecMode; 3] = [ExecMode::Mpc, ExecMode::Trajectory, ExecMode::Repeat];

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::ModelFree => "model_free",
            ExecMode::Mpc => "mpc",
            ExecMode::Trajectory => "trajectory",
            ExecMode::Repeat => "repeat",
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown mode `{s}` (model_free | mpc | trajectory | repeat)")))
    }
}

/// Number of head evaluations, for checking execution cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub encode: usize,
    pub policy_mean: usize,
    pub transition: usize,
    pub value: usize,
    pub reward: usize,
}

/// Read-only view of parameters that selects actions.
pub struct Actor<'p> {
    params: &'p PPNParams,
    sigma: Vec<f64>,
    stochastic: bool,
    counts: Cell<OpCounts>,
}

impl<'p> Actor<'p> {
    /// `stochastic = false` returns policy means.
    pub fn new(params: &'p PPNParams, sigma: Vec<f64>, stochastic: bool) -> Result<Self> {
        if sigma.len() != params.dims().act {
            return Err(Error::Dimension(format!(
                "sigma width {} != action width {}",
                sigma.len(),
                params.dims().act
            )));
        }
        Ok(Self {
            params,
            sigma,
            stochastic,
            counts: Cell::new(OpCounts::default()),
        })
    }

    pub fn counts(&self) -> OpCounts {
        self.counts.get()
    }

    fn bump(&self, f: impl FnOnce(&mut OpCounts)) {
        let mut c = self.counts.get();
        f(&mut c);
        self.counts.set(c);
    }

    fn draw(&self, mean: &[f64], rng: &mut Rng) -> Vec<f64> {
        if self.stochastic {
            sample_gaussian(mean, &self.sigma, rng)
        } else {
            mean.to_vec()
        }
    }

    fn encode<'t>(&self, tape: &mut Tape<'t>, net: &Network, obs: &[f64]) -> Result<Var>
    where
        'p: 't,
    {
        if obs.len() != self.params.dims().obs {
            return Err(Error::Dimension(format!(
                "observation width {} != {}",
                obs.len(),
                self.params.dims().obs
            )));
        }
        self.bump(|c| c.encode += 1);
        let x = tape.leaf(Tensor::row(obs));
        net.encode(tape, x)
    }

    fn mean(&self, tape: &mut Tape, net: &Network, s: Var) -> Result<Vec<f64>> {
        self.bump(|c| c.policy_mean += 1);
        let mu = net.policy_mean(tape, s)?;
        Ok(tape.value(mu).to_vec())
    }

    fn step_latent(&self, tape: &mut Tape, net: &Network, s: Var, a: &[f64]) -> Result<Var> {
        self.bump(|c| c.transition += 1);
        let a = tape.leaf(Tensor::row(a));
        net.transition(tape, s, a)
    }

    /// One encode and one policy head: the behavior policy.
    pub fn act_model_free(&self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let net = self.params.bind(&mut tape);
        let s = self.encode(&mut tape, &net, obs)?;
        let mu = self.mean(&mut tape, &net, s)?;
        Ok(self.draw(&mu, rng))
    }

    /// Latent rollout of `d` sampled actions: the first from `rng`, the rest
    /// from `tail_rng`. Returns the actions.
    fn plan(&self, obs: &[f64], d: usize, rng: &mut Rng, tail_rng: Option<&mut Rng>) -> Result<Vec<Vec<f64>>> {
        let d = d.max(1);
        let mut tape = Tape::new();
        let net = self.params.bind(&mut tape);
        let mut s = self.encode(&mut tape, &net, obs)?;
        let mu = self.mean(&mut tape, &net, s)?;
        let mut actions = vec![self.draw(&mu, rng)];
        let tail = match tail_rng {
            Some(t) => t,
            None => rng,
        };
        for i in 1..d {
            s = self.step_latent(&mut tape, &net, s, &actions[i - 1])?;
            let mu = self.mean(&mut tape, &net, s)?;
            actions.push(self.draw(&mu, tail));
        }
        Ok(actions)
    }

    /// Plans `d` steps and returns only the first action. The tail of the
    /// plan draws from `plan_rng`, so `rng` advances exactly as in
    /// [`Actor::act_model_free`].
    pub fn act_mpc(&self, obs: &[f64], d: usize, rng: &mut Rng, plan_rng: &mut Rng) -> Result<Vec<f64>> {
        let mut plan = self.plan(obs, d, rng, Some(plan_rng))?;
        Ok(plan.swap_remove(0))
    }

    /// `d` actions chosen along the predicted latent states, to be executed
    /// open-loop.
    pub fn act_trajectory(&self, obs: &[f64], d: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        self.plan(obs, d, rng, None)
    }

    /// One model-free action repeated `d` times.
    pub fn act_repeat(&self, obs: &[f64], d: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let a = self.act_model_free(obs, rng)?;
        Ok(vec![a; d.max(1)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub mode: ExecMode,
    pub horizon: usize,
    pub episodes: usize,
    /// Sample with the given σ instead of returning means.
    pub stochastic: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

impl EvalStats {
    fn from_episodes(eps: Vec<(f64, usize)>) -> Self {
        let (returns, lengths): (Vec<f64>, Vec<usize>) = eps.into_iter().unzip();
        let (mean, std) = mean_std(&returns);
        Self {
            returns,
            lengths,
            mean,
            std,
        }
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `cfg.episodes` episodes of `env_name`. Episode `k` uses its own
/// environment, action and plan streams derived from `cfg.seed`, so every
/// mode sees the same initial states.
pub fn run_episodes(
    params: &PPNParams,
    env_name: &str,
    sigma: &[f64],
    cfg: &EvalConfig,
    parallelism: Parallelism,
) -> Result<EvalStats> {
    if cfg.horizon == 0 {
        return Err(Error::Argument("horizon must be >= 1".into()));
    }
    let spec = envs::spec(env_name)?;
    let dims = params.dims();
    if spec.obs_dim != dims.obs || spec.act_dim != dims.act {
        return Err(Error::Dimension(format!(
            "parameters ({}→{}) do not fit `{env_name}` ({}→{})",
            dims.obs, dims.act, spec.obs_dim, spec.act_dim
        )));
    }
    let eps = par::map_range(parallelism, cfg.episodes, |k| {
        run_episode(params, env_name, sigma, cfg, k as u64)
    });
    let eps = eps.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalStats::from_episodes(eps))
}

fn run_episode(params: &PPNParams, env_name: &str, sigma: &[f64], cfg: &EvalConfig, k: u64) -> Result<(f64, usize)> {
    let mut env = envs::make(env_name, stream_n(cfg.seed, Stream::Env, k))?;
    let mut rng = stream_n(cfg.seed, Stream::Eval, k);
    let mut plan_rng = stream_n(cfg.seed, Stream::Plan, k);
    let actor = Actor::new(params, sigma.to_vec(), cfg.stochastic)?;
    let mut obs = env.reset();
    let mut queue: VecDeque<Vec<f64>> = VecDeque::new();
    let mut ret = 0.0;
    let mut len = 0;
    loop {
        if queue.is_empty() {
            match cfg.mode {
                ExecMode::ModelFree => queue.push_back(actor.act_model_free(&obs, &mut rng)?),
                ExecMode::Mpc => queue.push_back(actor.act_mpc(&obs, cfg.horizon, &mut rng, &mut plan_rng)?),
                ExecMode::Trajectory => queue.extend(actor.act_trajectory(&obs, cfg.horizon, &mut rng)?),
                ExecMode::Repeat => queue.extend(actor.act_repeat(&obs, cfg.horizon, &mut rng)?),
            }
        }
        let a = queue.pop_front().expect("queue refilled above");
        let step = env.step(&a)?;
        ret += step.reward;
        len += 1;
        obs = step.obs;
        if step.done {
            return Ok((ret, len));
        }
    }
}
