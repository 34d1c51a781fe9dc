//! Clipped policy, value and reward losses over unrolled predictions.
//!
//! Per sample `t` the unroll produces, for each depth `i`, a policy mean at
//! `ŝ^i`, a value `v̂^i` and a reward prediction for action `a_{t+i}`. Terms
//! whose depth runs past the episode or batch end are masked out with zero
//! weight, and each sample's remaining terms are averaged.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{gaussian_entropy, Network};
use crate::rollout::{ClipScheme, TrajectoryBatch};

/// Bound on log-ratios before exponentiation.
const LOG_RATIO_BOUND: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub alpha_v: f64,
    pub alpha_r: f64,
    pub alpha_h: f64,
    pub d_pi: usize,
    pub d_v: usize,
    pub d_r: usize,
    pub scheme: ClipScheme,
    pub huber_delta: f64,
    pub clip_policy: bool,
    pub clip_value_reward: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            alpha_v: 0.5,
            alpha_r: 0.5,
            alpha_h: 0.0,
            d_pi: 2,
            d_v: 2,
            d_r: 2,
            scheme: ClipScheme::Grounded,
            huber_delta: 1.0,
            clip_policy: true,
            clip_value_reward: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_pi == 0 {
            return Err(Error::Config("d_pi must be >= 1".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("huber_delta must be positive".into()));
        }
        for (name, v) in [("alpha_v", self.alpha_v), ("alpha_r", self.alpha_r), ("alpha_h", self.alpha_h)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Core applications needed for the deepest term.
    pub fn unroll_depth(&self) -> usize {
        self.d_pi.max(self.d_r).max(self.d_v).max(1)
    }

    /// Policy-only reduction: depth-1 policy, depth-0 value, no reward loss.
    pub fn ppo2(mut self) -> Self {
        self.alpha_r = 0.0;
        self.d_pi = 1;
        self.d_v = 0;
        self.d_r = 0;
        self
    }
}

/// Scalar summary of one minibatch loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub loss_r: f64,
    pub entropy: f64,
    pub clip_frac_pi: f64,
    pub clip_frac_v: f64,
    pub clip_frac_r: f64,
}

/// Per-sample counts of unmasked terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermCounts {
    /// Policy terms `i = 0..n_pi`.
    pub n_pi: Vec<usize>,
    /// Value terms `i = 0..n_v`.
    pub n_v: Vec<usize>,
    /// Reward terms `i = 0..n_r` (prediction at `ŝ^i` for `a_{t+i}`).
    pub n_r: Vec<usize>,
}

impl TermCounts {
    pub fn new(batch: &TrajectoryBatch, idx: &[usize], cfg: &LossConfig) -> Self {
        let mut c = Self {
            n_pi: Vec::with_capacity(idx.len()),
            n_v: Vec::with_capacity(idx.len()),
            n_r: Vec::with_capacity(idx.len()),
        };
        for &t in idx {
            let l = batch.chain[t];
            c.n_pi.push(cfg.d_pi.min(l));
            c.n_v.push((cfg.d_v + 1).min(l));
            c.n_r.push(cfg.d_r.min(l));
        }
        c
    }

    /// Core applications the minibatch needs.
    pub fn depth(&self) -> usize {
        let pi = self.n_pi.iter().copied().max().unwrap_or(1);
        let r = self.n_r.iter().copied().max().unwrap_or(0);
        let v = self.n_v.iter().copied().max().unwrap_or(1).saturating_sub(1);
        pi.max(r).max(v).max(1)
    }
}

/// Per-term weights `1/n(t)` for depth `i < n(t)`, else 0.
fn weights(counts: &[usize], i: usize) -> Tensor {
    Tensor::column(
        &counts
            .iter()
            .map(|&n| if i < n { 1.0 / n as f64 } else { 0.0 })
            .collect::<Vec<_>>(),
    )
}

fn gather(values: &[f64], idx: &[usize], offset: usize) -> Tensor {
    Tensor::column(
        &idx.iter()
            .map(|&t| values.get(t + offset).copied().unwrap_or(0.0))
            .collect::<Vec<_>>(),
    )
}

/// Centers and importance weights of the clipping region at depth `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipCenters {
    /// `log π_old` used inside the clipped ratio.
    pub logp: Tensor,
    /// `log π_θ'(a_{t+i} | ŝ^0_{t+i})`, the grounded denominator.
    pub logp_grounded: Tensor,
    pub value: Tensor,
    pub reward: Tensor,
}

/// Centers at the real states: `θ'` evaluated at `ŝ^0_{t+i}`.
pub fn grounded_clips(batch: &TrajectoryBatch, idx: &[usize], i: usize) -> ClipCenters {
    let logp = gather(&batch.logp_old, idx, i);
    ClipCenters {
        logp_grounded: logp.clone(),
        logp,
        value: gather(&batch.grounded.value, idx, i),
        reward: gather(&batch.grounded.reward, idx, i),
    }
}

/// Centers along θ''s own unroll from `ŝ^0_t`.
pub fn ungrounded_clips(batch: &TrajectoryBatch, idx: &[usize], i: usize) -> Result<ClipCenters> {
    let cache = batch
        .ungrounded
        .as_ref()
        .ok_or_else(|| Error::Argument("ungrounded clipping needs an ungrounded cache".into()))?;
    let pick = |rows: &[Vec<f64>], what: &str| -> Result<Tensor> {
        let mut out = Vec::with_capacity(idx.len());
        for &t in idx {
            let v = rows[t]
                .get(i)
                .ok_or_else(|| Error::Argument(format!("ungrounded cache too shallow for {what} at depth {i}")))?;
            out.push(*v);
        }
        Ok(Tensor::column(&out))
    };
    Ok(ClipCenters {
        logp: pick(&cache.logp, "policy")?,
        logp_grounded: gather(&batch.logp_old, idx, i),
        value: pick(&cache.value, "value")?,
        reward: pick(&cache.reward, "reward")?,
    })
}

fn centers(batch: &TrajectoryBatch, idx: &[usize], i: usize, scheme: ClipScheme) -> Result<ClipCenters> {
    match scheme {
        ClipScheme::Grounded => Ok(grounded_clips(batch, idx, i)),
        ClipScheme::Ungrounded => ungrounded_clips(batch, idx, i),
    }
}

fn bounded_exp(tape: &mut Tape, log_ratio: Var) -> Result<Var> {
    let c = tape.clip(log_ratio, -LOG_RATIO_BOUND, LOG_RATIO_BOUND)?;
    Ok(tape.exp(c))
}

/// Clip `x` into `center ± eps`.
fn clip_around(tape: &mut Tape, x: Var, center: &Tensor, eps: f64) -> Result<Var> {
    let diff = tape.add_const(x, &center.map(|c| -c))?;
    let clipped = tape.clip(diff, -eps, eps)?;
    tape.add_const(clipped, center)
}

fn count_clipped(tape: &Tape, plain: Var, clipped: Var, counts: &[usize], i: usize) -> (usize, usize) {
    let a = tape.value(plain);
    let b = tape.value(clipped);
    let mut hit = 0;
    let mut total = 0;
    for (r, &n) in counts.iter().enumerate() {
        if i < n {
            total += 1;
            if b[r] > a[r] {
                hit += 1;
            }
        }
    }
    (hit, total)
}

struct Accum {
    sum: Option<Var>,
    hit: usize,
    total: usize,
}

impl Accum {
    fn new() -> Self {
        Self {
            sum: None,
            hit: 0,
            total: 0,
        }
    }

    fn push(&mut self, tape: &mut Tape, term: Var, w: &Tensor, hit: (usize, usize)) -> Result<()> {
        let wt = tape.mul_const(term, w)?;
        self.sum = Some(match self.sum {
            None => wt,
            Some(s) => tape.add(s, wt)?,
        });
        self.hit += hit.0;
        self.total += hit.1;
        Ok(())
    }

    fn finish(self, tape: &mut Tape, rows: usize) -> (Var, f64) {
        let frac = if self.total == 0 {
            0.0
        } else {
            self.hit as f64 / self.total as f64
        };
        let v = match self.sum {
            Some(s) => tape.mean(s),
            None => {
                let z = tape.leaf(Tensor::zeros(rows.max(1), 1));
                tape.mean(z)
            }
        };
        (v, frac)
    }
}

/// Builds the minibatch loss on `tape`: returns the differentiable total and
/// its scalar breakdown.
pub fn total_loss(
    tape: &mut Tape,
    net: &Network,
    batch: &TrajectoryBatch,
    idx: &[usize],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if idx.is_empty() {
        return Err(Error::Argument("total_loss: empty minibatch".into()));
    }
    let counts = TermCounts::new(batch, idx, cfg);
    let depth = counts.depth();
    let sigma = &batch.sigma;
    let obs = tape.leaf(batch.obs.select_rows(idx));
    let s0 = net.encode(tape, obs)?;
    let acts: Vec<Tensor> = (0..depth).map(|i| batch.actions_at(idx, i)).collect();
    let act_vars: Vec<Var> = acts.iter().map(|a| tape.leaf(a.clone())).collect();
    let un = net.unroll(tape, s0, &act_vars, sigma)?;
    let eps = cfg.clip_eps;

    let mut pi = Accum::new();
    let max_pi = counts.n_pi.iter().copied().max().unwrap_or(0);
    for i in 0..max_pi {
        let c = centers(batch, idx, i, cfg.scheme)?;
        let adv = gather(&batch.norm_advantages, idx, i);
        let neg_adv = adv.map(|a| -a);
        let logp = tape.gaussian_log_prob(un.means[i], sigma, &acts[i])?;
        let lr = tape.add_const(logp, &c.logp_grounded.map(|x| -x))?;
        let ratio = bounded_exp(tape, lr)?;
        let plain = tape.mul_const(ratio, &neg_adv)?;
        let w = weights(&counts.n_pi, i);
        if cfg.clip_policy {
            let inner = match cfg.scheme {
                ClipScheme::Grounded => ratio,
                ClipScheme::Ungrounded => {
                    let lr_u = tape.add_const(logp, &c.logp.map(|x| -x))?;
                    bounded_exp(tape, lr_u)?
                }
            };
            let inner = tape.clip(inner, 1.0 - eps, 1.0 + eps)?;
            let clipped_ratio = match cfg.scheme {
                ClipScheme::Grounded => inner,
                ClipScheme::Ungrounded => {
                    // θ''s own-unroll density over the grounded one
                    let iw = Tensor::column(
                        &c.logp
                            .data()
                            .iter()
                            .zip(c.logp_grounded.data())
                            .map(|(u, g)| (u - g).clamp(-LOG_RATIO_BOUND, LOG_RATIO_BOUND).exp())
                            .collect::<Vec<_>>(),
                    );
                    tape.mul_const(inner, &iw)?
                }
            };
            let clipped = tape.mul_const(clipped_ratio, &neg_adv)?;
            let term = tape.elementwise_max(plain, clipped)?;
            let hit = count_clipped(tape, plain, clipped, &counts.n_pi, i);
            pi.push(tape, term, &w, hit)?;
        } else {
            pi.push(tape, plain, &w, (0, 0))?;
        }
    }
    let (loss_pi, frac_pi) = pi.finish(tape, idx.len());
    let entropy = gaussian_entropy(sigma);
    let loss_pi = if cfg.alpha_h != 0.0 {
        tape.add_scalar(loss_pi, -cfg.alpha_h * entropy)
    } else {
        loss_pi
    };

    let mut val = Accum::new();
    let max_v = counts.n_v.iter().copied().max().unwrap_or(0);
    for i in 0..max_v {
        let c = centers(batch, idx, i, cfg.scheme)?;
        let target = gather(&batch.returns, idx, i);
        let neg_target = target.map(|x| -x);
        let v = un.values[i];
        let err = tape.add_const(v, &neg_target)?;
        let plain = tape.huber(err, cfg.huber_delta)?;
        let w = weights(&counts.n_v, i);
        if cfg.clip_value_reward {
            let vc = clip_around(tape, v, &c.value, eps)?;
            let err_c = tape.add_const(vc, &neg_target)?;
            let clipped = tape.huber(err_c, cfg.huber_delta)?;
            let term = tape.elementwise_max(plain, clipped)?;
            let hit = count_clipped(tape, plain, clipped, &counts.n_v, i);
            val.push(tape, term, &w, hit)?;
        } else {
            val.push(tape, plain, &w, (0, 0))?;
        }
    }
    let (loss_v, frac_v) = val.finish(tape, idx.len());

    let mut rew = Accum::new();
    let max_r = counts.n_r.iter().copied().max().unwrap_or(0);
    for i in 0..max_r {
        let c = centers(batch, idx, i, cfg.scheme)?;
        let target = gather(&batch.rewards, idx, i);
        let neg_target = target.map(|x| -x);
        let r = un.rewards[i];
        let err = tape.add_const(r, &neg_target)?;
        let plain = tape.huber(err, cfg.huber_delta)?;
        let w = weights(&counts.n_r, i);
        if cfg.clip_value_reward {
            let rc = clip_around(tape, r, &c.reward, eps)?;
            let err_c = tape.add_const(rc, &neg_target)?;
            let clipped = tape.huber(err_c, cfg.huber_delta)?;
            let term = tape.elementwise_max(plain, clipped)?;
            let hit = count_clipped(tape, plain, clipped, &counts.n_r, i);
            rew.push(tape, term, &w, hit)?;
        } else {
            rew.push(tape, plain, &w, (0, 0))?;
        }
    }
    let (loss_r, frac_r) = rew.finish(tape, idx.len());

    let sv = tape.scale(loss_v, cfg.alpha_v);
    let total = tape.add(loss_pi, sv)?;
    let sr = tape.scale(loss_r, cfg.alpha_r);
    let total = tape.add(total, sr)?;
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        loss_pi: tape.scalar(loss_pi),
        loss_v: tape.scalar(loss_v),
        loss_r: tape.scalar(loss_r),
        entropy,
        clip_frac_pi: frac_pi,
        clip_frac_v: frac_v,
        clip_frac_r: frac_r,
    };
    Ok((total, breakdown))
}
