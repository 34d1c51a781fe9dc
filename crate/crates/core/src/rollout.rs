//! Experience collection with the frozen behavior parameters, advantage and
//! return estimation, and the old-parameter caches the clipped losses need.

use std::io::Write;
use std::path::Path;

use crate::diffcore::{Tape, Tensor, Var};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::exec::sample_gaussian;
use crate::model::PPNParams;
use crate::par::{self, Parallelism};
use crate::rng::Rng;

/// One environment step taken by the behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Reward received for `action` (already scaled for learning).
    pub reward: f64,
    pub done: bool,
    /// `log π_θ'(action | ŝ^0)` under the exploration scale of the iteration.
    pub logp_old: f64,
    /// `v̂^0` of `obs` under θ'.
    pub v_old: f64,
    pub episode: usize,
}

/// `n` consecutive steps plus what is needed to bootstrap past the last one.
#[derive(Debug, Clone)]
pub struct RawTrajectory {
    pub steps: Vec<StepRecord>,
    pub bootstrap_obs: Vec<f64>,
    pub bootstrap_value: f64,
    pub sigma: Vec<f64>,
    /// Undiscounted, unscaled returns of episodes that finished in this batch.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

/// Owns an environment across iterations; episodes may span batches.
pub struct Collector {
    env: Box<dyn Env>,
    obs: Vec<f64>,
    action_rng: Rng,
    reward_scale: f64,
    episode: usize,
    ep_return: f64,
    ep_len: usize,
}

impl Collector {
    pub fn new(mut env: Box<dyn Env>, action_rng: Rng, reward_scale: f64) -> Self {
        let obs = env.reset();
        Self {
            env,
            obs,
            action_rng,
            reward_scale,
            episode: 0,
            ep_return: 0.0,
            ep_len: 0,
        }
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    /// Runs the behavior policy `a ~ N(μ_θ'(ŝ^0), diag σ²)` for `n` steps,
    /// resetting the environment whenever an episode ends.
    pub fn collect(&mut self, params: &PPNParams, n: usize, sigma: &[f64]) -> Result<RawTrajectory> {
        if n == 0 {
            return Err(Error::Argument("collect: n must be >= 1".into()));
        }
        let mut steps = Vec::with_capacity(n);
        let mut episode_returns = Vec::new();
        let mut episode_lengths = Vec::new();
        for k in 0..n {
            let (_, mu, v) = params.act_heads(&self.obs)?;
            let action = sample_gaussian(&mu, sigma, &mut self.action_rng);
            let logp = log_density(&mu, sigma, &action);
            let step = self.env.step(&action).map_err(|e| match e {
                Error::Env { message, .. } => Error::Env { step: k, message },
                other => other,
            })?;
            if !step.reward.is_finite() || step.obs.iter().any(|x| !x.is_finite()) {
                return Err(Error::Env {
                    step: k,
                    message: "environment produced a non-finite value".into(),
                });
            }
            self.ep_return += step.reward;
            self.ep_len += 1;
            steps.push(StepRecord {
                obs: std::mem::replace(&mut self.obs, step.obs),
                action,
                reward: step.reward * self.reward_scale,
                done: step.done,
                logp_old: logp,
                v_old: v,
                episode: self.episode,
            });
            if step.done {
                episode_returns.push(self.ep_return);
                episode_lengths.push(self.ep_len);
                self.ep_return = 0.0;
                self.ep_len = 0;
                self.episode += 1;
                self.obs = self.env.reset();
            }
        }
        let (_, _, bootstrap_value) = params.act_heads(&self.obs)?;
        Ok(RawTrajectory {
            steps,
            bootstrap_obs: self.obs.clone(),
            bootstrap_value,
            sigma: sigma.to_vec(),
            episode_returns,
            episode_lengths,
        })
    }
}

/// Diagonal Gaussian log-density; same arithmetic as the differentiable op.
pub fn log_density(mean: &[f64], sigma: &[f64], action: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let m = tape.leaf(Tensor::row(mean));
    let lp = tape
        .gaussian_log_prob(m, sigma, &Tensor::row(action))
        .expect("behavior policy dimensions are consistent");
    tape.scalar(lp)
}

/// Generalized advantage estimates by the backward recursion
/// `A_t = δ_t + γλ(1 − done_t) A_{t+1}`, with
/// `δ_t = r_t + γ(1 − done_t) v_{t+1} − v_t`. The value after the last step is
/// `bootstrap_value`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

/// `R_t = A_t + v_t`.
pub fn compute_returns(advantages: &[f64], values: &[f64]) -> Vec<f64> {
    advantages.iter().zip(values).map(|(a, v)| a + v).collect()
}

/// `(A − mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    xs.iter().map(|x| (x - mean) / denom).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipScheme {
    Grounded,
    Ungrounded,
}

impl std::str::FromStr for ClipScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grounded" => Ok(ClipScheme::Grounded),
            "ungrounded" => Ok(ClipScheme::Ungrounded),
            other => Err(Error::Config(format!(
                "unknown clip scheme `{other}` (grounded | ungrounded)"
            ))),
        }
    }
}

impl std::fmt::Display for ClipScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClipScheme::Grounded => "grounded",
            ClipScheme::Ungrounded => "ungrounded",
        })
    }
}

/// θ' estimates at the real (encoded) states of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedCache {
    /// `v̂^0_{t,θ'}`.
    pub value: Vec<f64>,
    /// One-step reward estimate `f^r_θ'(ŝ^0_t, a_t)`.
    pub reward: Vec<f64>,
}

/// θ' estimates along its own latent unroll from each `ŝ^0_t`, indexed `[t][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UngroundedCache {
    /// Number of core applications cached per step.
    pub depth: usize,
    /// `v̂^i_{t,θ'}` for `i = 0..=depth`.
    pub value: Vec<Vec<f64>>,
    /// Reward predicted for `a_{t+i}` at `ŝ^i_{t,θ'}`, `i = 0..depth`.
    pub reward: Vec<Vec<f64>>,
    /// `log π_θ'(a_{t+i} | ŝ^i_{t,θ'})`, `i = 0..depth`.
    pub logp: Vec<Vec<f64>>,
}

/// Everything one iteration of optimization reads. Immutable once built.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub logp_old: Vec<f64>,
    pub v_old: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Advantages after per-batch normalization (what the policy loss uses).
    pub norm_advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Steps from `t` until the episode or the batch ends (inclusive), capped.
    pub chain: Vec<usize>,
    pub sigma: Vec<f64>,
    pub grounded: GroundedCache,
    pub ungrounded: Option<UngroundedCache>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Action rows `a_{t+offset}` for the given `t`s; zero past the batch end.
    pub fn actions_at(&self, idx: &[usize], offset: usize) -> Tensor {
        let z = self.actions.cols();
        let mut data = Vec::with_capacity(idx.len() * z);
        for &t in idx {
            if t + offset < self.len() {
                data.extend_from_slice(self.actions.row_slice(t + offset));
            } else {
                data.extend(std::iter::repeat(0.0).take(z));
            }
        }
        Tensor::new(idx.len(), z, data).expect("sized above")
    }

    /// Writes one CSV row per step:
    /// `t,episode,obs_0..,act_0..,reward,done,v_old,logp_old`.
    pub fn write_csv(&self, episodes: &[usize], path: &Path) -> Result<()> {
        let mut out = String::new();
        let header: Vec<String> = ["t".to_string(), "episode".to_string()]
            .into_iter()
            .chain((0..self.obs.cols()).map(|j| format!("obs_{j}")))
            .chain((0..self.actions.cols()).map(|j| format!("act_{j}")))
            .chain(["reward", "done", "v_old", "logp_old"].map(String::from))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for t in 0..self.len() {
            let mut row = vec![t.to_string(), episodes.get(t).copied().unwrap_or(0).to_string()];
            row.extend(self.obs.row_slice(t).iter().map(f64::to_string));
            row.extend(self.actions.row_slice(t).iter().map(f64::to_string));
            row.push(self.rewards[t].to_string());
            row.push(u8::from(self.dones[t]).to_string());
            row.push(self.v_old[t].to_string());
            row.push(self.logp_old[t].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// How the batch is prepared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    pub gamma: f64,
    pub lambda: f64,
    pub scheme: ClipScheme,
    /// Maximum number of core applications any loss term needs.
    pub depth: usize,
    pub normalize_advantages: bool,
}

/// `chain[t]`: number of steps `t, t+1, …` inside the batch and inside the
/// episode of step `t` (a done step is the last one), capped at `cap`.
pub fn chain_lengths(dones: &[bool], cap: usize) -> Vec<usize> {
    let n = dones.len();
    let mut chain = vec![0; n];
    for t in (0..n).rev() {
        chain[t] = if dones[t] || t + 1 == n {
            1
        } else {
            (1 + chain[t + 1]).min(cap.max(1))
        };
        chain[t] = chain[t].min(cap.max(1));
    }
    chain
}

/// Rows processed per forward pass when computing caches.
const CACHE_CHUNK: usize = 256;

/// Computes GAE, returns, and the θ' caches for one raw trajectory.
pub fn build_batch(
    raw: &RawTrajectory,
    params: &PPNParams,
    spec: &BatchSpec,
    parallelism: Parallelism,
) -> Result<TrajectoryBatch> {
    let n = raw.steps.len();
    let obs_rows: Vec<Vec<f64>> = raw.steps.iter().map(|s| s.obs.clone()).collect();
    let act_rows: Vec<Vec<f64>> = raw.steps.iter().map(|s| s.action.clone()).collect();
    let obs = Tensor::from_rows(&obs_rows)?;
    let actions = Tensor::from_rows(&act_rows)?;
    let rewards: Vec<f64> = raw.steps.iter().map(|s| s.reward).collect();
    let dones: Vec<bool> = raw.steps.iter().map(|s| s.done).collect();
    let v_old: Vec<f64> = raw.steps.iter().map(|s| s.v_old).collect();
    let logp_old: Vec<f64> = raw.steps.iter().map(|s| s.logp_old).collect();
    let advantages = compute_gae(&rewards, &v_old, &dones, raw.bootstrap_value, spec.gamma, spec.lambda);
    let returns = compute_returns(&advantages, &v_old);
    let norm_advantages = if spec.normalize_advantages {
        normalize(&advantages)
    } else {
        advantages.clone()
    };
    let chain = chain_lengths(&dones, spec.depth.max(1));
    let mut batch = TrajectoryBatch {
        obs,
        actions,
        rewards,
        dones,
        logp_old,
        v_old,
        advantages,
        norm_advantages,
        returns,
        chain,
        sigma: raw.sigma.clone(),
        grounded: GroundedCache {
            value: vec![],
            reward: vec![],
        },
        ungrounded: None,
    };
    debug_assert_eq!(batch.len(), n);
    cache_old_estimates(&mut batch, params, spec.scheme, spec.depth, parallelism)?;
    Ok(batch)
}

/// Fills the grounded caches and, for [`ClipScheme::Ungrounded`], unrolls θ'
/// along the recorded actions to `depth` from every `ŝ^0_t`.
pub fn cache_old_estimates(
    batch: &mut TrajectoryBatch,
    params: &PPNParams,
    scheme: ClipScheme,
    depth: usize,
    parallelism: Parallelism,
) -> Result<()> {
    let n = batch.len();
    let depth = if scheme == ClipScheme::Ungrounded { depth.max(1) } else { 1 };
    let chunks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(CACHE_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let b: &TrajectoryBatch = batch;
    let parts = par::map(parallelism, chunks, |idx| unroll_old(params, b, &idx, depth));
    let mut v_unrolled = Vec::with_capacity(n);
    let mut r_unrolled = Vec::with_capacity(n);
    let mut lp_unrolled = Vec::with_capacity(n);
    for part in parts {
        let (v, r, lp) = part?;
        v_unrolled.extend(v);
        r_unrolled.extend(r);
        lp_unrolled.extend(lp);
    }
    // v̂^0 at the real states is exactly what collection recorded
    let grounded = GroundedCache {
        value: batch.v_old.clone(),
        reward: r_unrolled.iter().map(|r: &Vec<f64>| r[0]).collect(),
    };
    if scheme == ClipScheme::Ungrounded {
        // depth 0 shares ŝ^0 with the grounded quantities
        for t in 0..n {
            lp_unrolled[t][0] = batch.logp_old[t];
            v_unrolled[t][0] = batch.v_old[t];
        }
        batch.ungrounded = Some(UngroundedCache {
            depth,
            value: v_unrolled,
            reward: r_unrolled,
            logp: lp_unrolled,
        });
    } else {
        batch.ungrounded = None;
    }
    batch.grounded = grounded;
    Ok(())
}

type Unrolled = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn unroll_old(params: &PPNParams, batch: &TrajectoryBatch, idx: &[usize], depth: usize) -> Result<Unrolled> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape);
    let x = tape.leaf(batch.obs.select_rows(idx));
    let s0 = net.encode(&mut tape, x)?;
    let acts: Vec<Tensor> = (0..depth).map(|i| batch.actions_at(idx, i)).collect();
    let act_vars: Vec<Var> = acts.iter().map(|a| tape.leaf(a.clone())).collect();
    let un = net.unroll(&mut tape, s0, &act_vars, &batch.sigma)?;
    let mut lps = Vec::with_capacity(depth);
    for (i, a) in acts.iter().enumerate() {
        lps.push(tape.gaussian_log_prob(un.means[i], &batch.sigma, a)?);
    }
    let rows = idx.len();
    let v = (0..rows)
        .map(|r| un.values.iter().map(|&v| tape.value(v)[r]).collect())
        .collect();
    let rw = (0..rows)
        .map(|r| un.rewards.iter().map(|&v| tape.value(v)[r]).collect())
        .collect();
    let lp = (0..rows)
        .map(|r| lps.iter().map(|&v| tape.value(v)[r]).collect())
        .collect();
    Ok((v, rw, lp))
}
