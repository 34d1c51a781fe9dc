//! The training loop: collect with θ', estimate advantages, cache θ'
//! estimates, then several epochs of shuffled minibatch Adam steps on θ.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::diffcore::{Tape, Var};
use crate::envs;
use crate::error::{Error, Result};
use crate::exec::{self, EvalConfig, EvalStats};
use crate::metrics::MetricsRow;
use crate::model::{Dims, Network, PPNParams, SigmaSchedule};
use crate::objective::{total_loss, LossBreakdown, LossConfig};
use crate::optim::{clip_grad_norm, Adam};
use crate::par::{self, Parallelism};
use crate::rng::{stream, Rng, Stream};
use crate::rollout::{build_batch, BatchSpec, Collector, TrajectoryBatch};

/// A minibatch loss. The trainer owns everything else.
pub trait Objective: Send + Sync {
    fn loss(
        &self,
        tape: &mut Tape,
        net: &Network,
        batch: &TrajectoryBatch,
        idx: &[usize],
    ) -> Result<(Var, LossBreakdown)>;

    /// Core applications the cached θ' estimates must cover.
    fn cache_depth(&self) -> usize;
}

/// The clipped multi-depth loss.
pub struct PpnObjective(pub LossConfig);

impl Objective for PpnObjective {
    fn loss(
        &self,
        tape: &mut Tape,
        net: &Network,
        batch: &TrajectoryBatch,
        idx: &[usize],
    ) -> Result<(Var, LossBreakdown)> {
        total_loss(tape, net, batch, idx, &self.0)
    }

    fn cache_depth(&self) -> usize {
        self.0.unroll_depth()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Live parameters θ.
    pub params: PPNParams,
    /// Behavior snapshot θ', refreshed at iteration boundaries.
    pub behavior: PPNParams,
    pub adam: Adam,
    /// Environment samples collected so far.
    pub total_steps: u64,
    pub iteration: usize,
}

pub struct Trainer {
    cfg: RunConfig,
    state: TrainState,
    collector: Collector,
    shuffle_rng: Rng,
    sigma: SigmaSchedule,
    objective: Box<dyn Objective>,
    parallelism: Parallelism,
    grad_shards: usize,
    started: Instant,
    out: Option<PathBuf>,
    episode_ids: Vec<usize>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let obj = PpnObjective(cfg.loss());
        Self::with_objective(cfg, Box::new(obj))
    }

    /// Same loop with a different minibatch loss.
    pub fn with_objective(cfg: RunConfig, objective: Box<dyn Objective>) -> Result<Self> {
        cfg.validate()?;
        let spec = envs::spec(&cfg.env)?;
        let dims = Dims {
            obs: spec.obs_dim,
            act: spec.act_dim,
            hidden: cfg.hidden,
        };
        let params = PPNParams::init(dims, &mut stream(cfg.seed, Stream::Init));
        let env = envs::make(&cfg.env, stream(cfg.seed, Stream::Env))?;
        let collector = Collector::new(env, stream(cfg.seed, Stream::Action), cfg.reward_scale);
        Ok(Self {
            sigma: cfg.sigma_schedule()?,
            state: TrainState {
                behavior: params.clone(),
                adam: Adam::new(cfg.adam(), &params),
                params,
                total_steps: 0,
                iteration: 0,
            },
            collector,
            shuffle_rng: stream(cfg.seed, Stream::Shuffle),
            objective,
            parallelism: Parallelism::default(),
            grad_shards: 1,
            started: Instant::now(),
            out: None,
            episode_ids: Vec::new(),
            cfg,
        })
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    /// Splits every minibatch into `k` row shards whose gradients are
    /// computed independently (in parallel under [`Parallelism::Rayon`]) and
    /// summed in shard order. Results depend on `k`, never on the executor.
    pub fn with_grad_shards(mut self, k: usize) -> Self {
        self.grad_shards = k.max(1);
        self
    }

    /// Replaces the initial parameters (θ and θ').
    pub fn with_params(mut self, params: PPNParams) -> Result<Self> {
        if params.dims() != self.state.params.dims() {
            return Err(Error::Dimension("initial parameters do not match the config".into()));
        }
        self.state.adam = Adam::new(self.cfg.adam(), &params);
        self.state.behavior = params.clone();
        self.state.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Runs one iteration and returns its metrics row.
    pub fn iterate(&mut self) -> Result<MetricsRow> {
        let cfg = &self.cfg;
        let n = cfg.n_steps;
        let sigma = self.sigma.sigma(self.state.total_steps);
        let raw = self.collector.collect(&self.state.behavior, n, &sigma)?;
        self.episode_ids = raw.steps.iter().map(|s| s.episode).collect();
        let spec = BatchSpec {
            gamma: cfg.gamma,
            lambda: cfg.lambda,
            scheme: cfg.clip_scheme,
            depth: self.objective.cache_depth(),
            normalize_advantages: cfg.normalize_advantages,
        };
        let batch = build_batch(&raw, &self.state.behavior, &spec, self.parallelism)?;
        let iteration = self.state.iteration + 1;

        let mut sums = LossBreakdown::default();
        let mut grad_norm_sum = 0.0;
        let mut updates = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for (mb, idx) in order.chunks(cfg.minibatch).enumerate() {
                let (mut grads, b) = self.minibatch_grads(&batch, idx).map_err(|e| match e {
                    Error::NonFinite(message) => self.diverged(&batch, idx, iteration, epoch, mb, message),
                    other => other,
                })?;
                if !grads.is_finite() {
                    return Err(self.diverged(&batch, idx, iteration, epoch, mb, "non-finite gradient".into()));
                }
                let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
                self.state.adam.update(&mut self.state.params, &grads);
                if !self.state.params.is_finite() {
                    return Err(self.diverged(&batch, idx, iteration, epoch, mb, "non-finite parameters".into()));
                }
                sums.loss_pi += b.loss_pi;
                sums.loss_v += b.loss_v;
                sums.loss_r += b.loss_r;
                sums.clip_frac_pi += b.clip_frac_pi;
                sums.clip_frac_v += b.clip_frac_v;
                sums.clip_frac_r += b.clip_frac_r;
                sums.entropy = b.entropy;
                grad_norm_sum += norm;
                updates += 1;
            }
        }
        self.state.behavior = self.state.params.clone();
        self.state.total_steps += n as u64;
        self.state.iteration = iteration;

        let (mean_return, std_return) = exec::mean_std(&raw.episode_returns);
        let lens: Vec<f64> = raw.episode_lengths.iter().map(|&l| l as f64).collect();
        let u = updates as f64;
        Ok(MetricsRow {
            iteration,
            total_steps: self.state.total_steps,
            wall_seconds: if cfg.wall_clock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            mean_return,
            std_return,
            mean_ep_len: exec::mean_std(&lens).0,
            loss_pi: sums.loss_pi / u,
            loss_v: sums.loss_v / u,
            loss_r: sums.loss_r / u,
            entropy: sums.entropy,
            clip_frac_pi: sums.clip_frac_pi / u,
            clip_frac_v: sums.clip_frac_v / u,
            clip_frac_r: sums.clip_frac_r / u,
            grad_norm: grad_norm_sum / u,
            sigma_mean: sigma.iter().sum::<f64>() / sigma.len() as f64,
        })
    }

    fn minibatch_grads(&self, batch: &TrajectoryBatch, idx: &[usize]) -> Result<(PPNParams, LossBreakdown)> {
        let params = &self.state.params;
        let objective = self.objective.as_ref();
        let shard_len = idx.len().div_ceil(self.grad_shards);
        let shards: Vec<&[usize]> = idx.chunks(shard_len).collect();
        let m = idx.len() as f64;
        let single = shards.len() == 1;
        let parts = par::map(self.parallelism, shards, |rows| -> Result<(PPNParams, LossBreakdown, f64)> {
            let mut tape = Tape::new();
            let net = params.bind(&mut tape);
            let (loss, b) = objective.loss(&mut tape, &net, batch, rows)?;
            if !b.total.is_finite() {
                return Err(Error::NonFinite(format!("loss = {}", b.total)));
            }
            let w = rows.len() as f64 / m;
            let loss = if single { loss } else { tape.scale(loss, w) };
            tape.backward(loss)?;
            Ok((net.grads(&tape), b, w))
        });
        let mut out: Option<(PPNParams, LossBreakdown)> = None;
        for part in parts {
            let (g, b, w) = part?;
            out = Some(match out {
                None if single => (g, b),
                None => (g, scale_breakdown(&b, w)),
                Some((mut acc, mut bs)) => {
                    for (a, x) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                        a.data_mut().iter_mut().zip(x.data()).for_each(|(a, x)| *a += x);
                    }
                    let sb = scale_breakdown(&b, w);
                    bs.total += sb.total;
                    bs.loss_pi += sb.loss_pi;
                    bs.loss_v += sb.loss_v;
                    bs.loss_r += sb.loss_r;
                    bs.clip_frac_pi += sb.clip_frac_pi;
                    bs.clip_frac_v += sb.clip_frac_v;
                    bs.clip_frac_r += sb.clip_frac_r;
                    (acc, bs)
                }
            });
        }
        Ok(out.expect("at least one shard"))
    }

    fn diverged(
        &self,
        batch: &TrajectoryBatch,
        idx: &[usize],
        iteration: usize,
        epoch: usize,
        minibatch: usize,
        message: String,
    ) -> Error {
        let dump = self.out.as_ref().and_then(|dir| {
            let path = dir.join(format!("nan_dump_iter{iteration:04}_epoch{epoch}_mb{minibatch}.csv"));
            let mut sub = batch.clone();
            let rows = idx.to_vec();
            sub.obs = batch.obs.select_rows(&rows);
            sub.actions = batch.actions.select_rows(&rows);
            let pick = |v: &[f64]| rows.iter().map(|&t| v[t]).collect::<Vec<_>>();
            sub.rewards = pick(&batch.rewards);
            sub.v_old = pick(&batch.v_old);
            sub.logp_old = pick(&batch.logp_old);
            sub.dones = rows.iter().map(|&t| batch.dones[t]).collect();
            let eps: Vec<usize> = rows.iter().map(|&t| self.episode_ids.get(t).copied().unwrap_or(0)).collect();
            sub.write_csv(&eps, &path).ok().map(|_| path)
        });
        Error::Diverged {
            iteration,
            epoch,
            minibatch,
            message,
            dump,
        }
    }

    /// Runs every iteration. With `out`, writes `config.snapshot`,
    /// `metrics.csv` (one row per iteration, flushed as it goes) and
    /// checkpoints under `checkpoints/`.
    pub fn run(mut self, out: Option<&Path>, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
        let mut csv = None;
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let snap = dir.join("config.snapshot");
            std::fs::write(&snap, self.cfg.to_text()).map_err(|e| Error::io(&snap, e))?;
            let path = dir.join("metrics.csv");
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", MetricsRow::header()).map_err(|e| Error::io(&path, e))?;
            csv = Some((f, path));
            self.out = Some(dir.to_path_buf());
        }
        self.started = Instant::now();
        let iterations = self.cfg.iterations();
        let mut rows = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let row = self.iterate()?;
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{}", row.to_csv()).map_err(|e| Error::io(&*path, e))?;
                f.flush().map_err(|e| Error::io(&*path, e))?;
            }
            if let Some(dir) = out {
                if row.iteration % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().save(&dir.join(format!("checkpoints/iter_{:06}.ckpt", row.iteration)))?;
                }
            }
            on_row(&row);
            rows.push(row);
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("checkpoints/final.ckpt"))?;
        }
        Ok(TrainOutcome {
            params: self.state.params,
            metrics: rows,
            total_steps: self.state.total_steps,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            env: self.cfg.env.clone(),
            total_steps: self.state.total_steps,
            params: self.state.params.clone(),
        }
    }
}

fn scale_breakdown(b: &LossBreakdown, w: f64) -> LossBreakdown {
    LossBreakdown {
        total: b.total * w,
        loss_pi: b.loss_pi * w,
        loss_v: b.loss_v * w,
        loss_r: b.loss_r * w,
        entropy: b.entropy,
        clip_frac_pi: b.clip_frac_pi * w,
        clip_frac_v: b.clip_frac_v * w,
        clip_frac_r: b.clip_frac_r * w,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PPNParams,
    pub metrics: Vec<MetricsRow>,
    pub total_steps: u64,
}

/// Trains with the default objective.
pub fn train(cfg: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone())?.run(out, |_| {})
}

/// Evaluates `params` on `env` under an execution mode. Stochastic
/// evaluation samples with `sigma`; otherwise policy means are used.
pub fn evaluate(
    params: &PPNParams,
    env: &str,
    sigma: &[f64],
    cfg: &EvalConfig,
    parallelism: Parallelism,
) -> Result<EvalStats> {
    exec::run_episodes(params, env, sigma, cfg, parallelism)
}
