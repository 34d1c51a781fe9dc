//! Shared helpers for integration and acceptance tests: small synthetic
//! batches, finite differences over every parameter, and an independently
//! written clipped-surrogate (PPO2) loss.

#![allow(dead_code)]

use ppn_core::diffcore::{Tape, Tensor, Var};
use ppn_core::envs;
use ppn_core::model::{gaussian_entropy, Dims, Network, PPNParams};
use ppn_core::objective::{total_loss, LossBreakdown, LossConfig};
use ppn_core::par::Parallelism;
use ppn_core::rng::{stream, stream_n, Stream};
use ppn_core::rollout::{build_batch, BatchSpec, ClipScheme, Collector, TrajectoryBatch};
use ppn_core::trainer::Objective;
use ppn_core::Result;
use rand::Rng as _;

pub fn flat(p: &PPNParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

/// `p` plus uniform noise in `±scale` on every entry.
pub fn perturbed(p: &PPNParams, seed: u64, scale: f64) -> PPNParams {
    let mut q = p.clone();
    let mut r = stream_n(seed, Stream::Init, 77);
    for t in q.tensors_mut() {
        for x in t.data_mut() {
            *x += r.gen_range(-scale..scale);
        }
    }
    q
}

/// Behavior parameters θ' and an `n`-step batch collected with them.
pub fn synthetic_batch(
    seed: u64,
    env: &str,
    hidden: usize,
    n: usize,
    scheme: ClipScheme,
    depth: usize,
) -> (PPNParams, TrajectoryBatch) {
    let spec = envs::spec(env).unwrap();
    let dims = Dims {
        obs: spec.obs_dim,
        act: spec.act_dim,
        hidden,
    };
    let p = PPNParams::init(dims, &mut stream(seed, Stream::Init));
    let mut col = Collector::new(
        envs::make(env, stream(seed, Stream::Env)).unwrap(),
        stream(seed, Stream::Action),
        1.0,
    );
    let sigma = vec![0.5; spec.act_dim];
    let raw = col.collect(&p, n, &sigma).unwrap();
    let bspec = BatchSpec {
        gamma: 0.99,
        lambda: 0.95,
        scheme,
        depth,
        normalize_advantages: true,
    };
    let batch = build_batch(&raw, &p, &bspec, Parallelism::Sequential).unwrap();
    (p, batch)
}

/// Value of `f` and the analytic gradient of its scalar output.
pub fn value_and_grad(
    p: &PPNParams,
    f: impl for<'a> Fn(&mut Tape<'a>, &Network) -> Var,
) -> (f64, PPNParams) {
    let mut tape = Tape::new();
    let net = p.bind(&mut tape);
    let l = f(&mut tape, &net);
    tape.backward(l).unwrap();
    (tape.scalar(l), net.grads(&tape))
}

pub fn value_only(p: &PPNParams, f: impl for<'a> Fn(&mut Tape<'a>, &Network) -> Var) -> f64 {
    let mut tape = Tape::new();
    let net = p.bind(&mut tape);
    let l = f(&mut tape, &net);
    tape.scalar(l)
}

/// Central differences over every parameter entry.
pub fn numeric_grad(p: &PPNParams, h: f64, f: impl Fn(&PPNParams) -> f64) -> Vec<f64> {
    let mut work = p.clone();
    let mut out = Vec::with_capacity(p.num_scalars());
    for k in 0..p.tensors().len() {
        for j in 0..p.tensors()[k].len() {
            let x = p.tensors()[k].data()[j];
            work.tensors_mut()[k].data_mut()[j] = x + h;
            let up = f(&work);
            work.tensors_mut()[k].data_mut()[j] = x - h;
            let down = f(&work);
            work.tensors_mut()[k].data_mut()[j] = x;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

/// Max relative error between the tape gradient of `f` and central
/// differences with step [`FD_STEP`].
pub fn grad_check_err(p: &PPNParams, f: impl for<'a> Fn(&mut Tape<'a>, &Network) -> Var + Copy) -> f64 {
    let (_, g) = value_and_grad(p, f);
    let numeric = numeric_grad(p, FD_STEP, |q| value_only(q, f));
    max_rel_err(&flat(&g), &numeric, 1e-6)
}

/// Max over entries of `|a − n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn ppn_loss(p: &PPNParams, batch: &TrajectoryBatch, idx: &[usize], cfg: &LossConfig) -> (f64, PPNParams, LossBreakdown) {
    let mut tape = Tape::new();
    let net = p.bind(&mut tape);
    let (l, b) = total_loss(&mut tape, &net, batch, idx, cfg).unwrap();
    tape.backward(l).unwrap();
    (tape.scalar(l), net.grads(&tape), b)
}

fn column(vals: impl Iterator<Item = f64>) -> Tensor {
    Tensor::column(&vals.collect::<Vec<_>>())
}

/// Textbook clipped surrogate with a clipped Huber value loss, written
/// directly against the network heads at the encoded observation.
pub struct Ppo2Oracle {
    pub eps: f64,
    pub alpha_v: f64,
    pub huber_delta: f64,
}

impl Ppo2Oracle {
    pub fn from(cfg: &LossConfig) -> Self {
        Self {
            eps: cfg.clip_eps,
            alpha_v: cfg.alpha_v,
            huber_delta: cfg.huber_delta,
        }
    }
}

impl Objective for Ppo2Oracle {
    fn loss(&self, tape: &mut Tape, net: &Network, batch: &TrajectoryBatch, idx: &[usize]) -> Result<(Var, LossBreakdown)> {
        let eps = self.eps;
        let x = tape.leaf(batch.obs.select_rows(idx));
        let s = net.encode(tape, x)?;
        let v = net.value(tape, s)?;
        let mu = net.policy_mean(tape, s)?;

        let logp = tape.gaussian_log_prob(mu, &batch.sigma, &batch.actions.select_rows(idx))?;
        let log_ratio = tape.add_const(logp, &column(idx.iter().map(|&t| -batch.logp_old[t])))?;
        let ratio = tape.exp(log_ratio);
        let neg_adv = column(idx.iter().map(|&t| -batch.norm_advantages[t]));
        let surr = tape.mul_const(ratio, &neg_adv)?;
        let ratio_c = tape.clip(ratio, 1.0 - eps, 1.0 + eps)?;
        let surr_c = tape.mul_const(ratio_c, &neg_adv)?;
        let pg = tape.elementwise_max(surr, surr_c)?;
        let loss_pi = tape.mean(pg);

        let neg_ret = column(idx.iter().map(|&t| -batch.returns[t]));
        let err = tape.add_const(v, &neg_ret)?;
        let vl = tape.huber(err, self.huber_delta)?;
        let v_old = column(idx.iter().map(|&t| batch.v_old[t]));
        let dv = tape.add_const(v, &v_old.map(|x| -x))?;
        let dv = tape.clip(dv, -eps, eps)?;
        let v_c = tape.add_const(dv, &v_old)?;
        let err_c = tape.add_const(v_c, &neg_ret)?;
        let vl_c = tape.huber(err_c, self.huber_delta)?;
        let vterm = tape.elementwise_max(vl, vl_c)?;
        let loss_v = tape.mean(vterm);

        let sv = tape.scale(loss_v, self.alpha_v);
        let total = tape.add(loss_pi, sv)?;

        let frac = |a: Var, b: Var, tape: &Tape| {
            let (a, b) = (tape.value(a), tape.value(b));
            a.iter().zip(b).filter(|(x, y)| y > x).count() as f64 / a.len() as f64
        };
        let b = LossBreakdown {
            total: tape.scalar(total),
            loss_pi: tape.scalar(loss_pi),
            loss_v: tape.scalar(loss_v),
            loss_r: 0.0,
            entropy: gaussian_entropy(&batch.sigma),
            clip_frac_pi: frac(surr, surr_c, tape),
            clip_frac_v: frac(vl, vl_c, tape),
            clip_frac_r: 0.0,
        };
        Ok((total, b))
    }

    fn cache_depth(&self) -> usize {
        1
    }
}

pub fn ppo2_loss(p: &PPNParams, batch: &TrajectoryBatch, idx: &[usize], cfg: &LossConfig) -> (f64, PPNParams) {
    let oracle = Ppo2Oracle::from(cfg);
    let mut tape = Tape::new();
    let net = p.bind(&mut tape);
    let (l, _) = oracle.loss(&mut tape, &net, batch, idx).unwrap();
    tape.backward(l).unwrap();
    (tape.scalar(l), net.grads(&tape))
}

#[derive(Clone, Copy, Debug)]
pub enum Head {
    Encoder,
    Transition,
    Policy,
    Value,
    Reward,
}

/// Fixed pseudo-random weights so every output entry gets a distinct
/// upstream gradient.
pub fn weights(rows: usize, cols: usize, salt: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|k| (((k + 3 * salt) * 7919 % 101) as f64 / 50.0) - 1.0)
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn weighted_sum(tape: &mut Tape, x: Var, salt: usize) -> Var {
    let (r, c) = tape.shape(x);
    let y = tape.mul_const(x, &weights(r, c, salt)).unwrap();
    tape.sum(y)
}

pub fn head_loss(tape: &mut Tape, net: &Network, batch: &TrajectoryBatch, head: Head, depth: usize) -> Var {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let x = tape.leaf(batch.obs.select_rows(&idx));
    let s0 = net.encode(tape, x).unwrap();
    let actions: Vec<Var> = (0..depth).map(|i| tape.leaf(batch.actions_at(&idx, i))).collect();
    let out = net.unroll(tape, s0, &actions, &batch.sigma).unwrap();
    let parts: Vec<Var> = match head {
        Head::Encoder => vec![s0],
        Head::Transition => out.states[1..].to_vec(),
        Head::Policy => out.means.clone(),
        Head::Value => out.values.clone(),
        Head::Reward => out.rewards.clone(),
    };
    let mut acc = None;
    for (i, p) in parts.into_iter().enumerate() {
        let term = weighted_sum(tape, p, i);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term).unwrap(),
        });
    }
    acc.unwrap()
}

/// θ's own depth-`i` predictions for sample `t`: (log-prob, value, reward).
pub fn predictions(p: &PPNParams, batch: &TrajectoryBatch, t: usize, depth: usize) -> Vec<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let net = p.bind(&mut tape);
    let x = tape.leaf(batch.obs.select_rows(&[t]));
    let s0 = net.encode(&mut tape, x).unwrap();
    let acts: Vec<_> = (0..depth).map(|i| batch.actions_at(&[t], i)).collect();
    let vars: Vec<_> = acts.iter().map(|a| tape.leaf(a.clone())).collect();
    let un = net.unroll(&mut tape, s0, &vars, &batch.sigma).unwrap();
    (0..depth)
        .map(|i| {
            let lp = tape.gaussian_log_prob(un.means[i], &batch.sigma, &acts[i]).unwrap();
            (
                tape.scalar(lp),
                tape.value(un.values[i])[0],
                tape.value(un.rewards[i])[0],
            )
        })
        .collect()
}

/// Rewrites the batch so that, for sample `t`, every max in the loss
/// strictly prefers its clipped (constant) branch under θ = `p`.
pub fn force_clipped(p: &PPNParams, batch: &mut TrajectoryBatch, t: usize, depth: usize, scheme: ClipScheme) {
    let preds = predictions(p, batch, t, depth);
    for (i, &(lp, v, r)) in preds.iter().enumerate() {
        let k = t + i;
        batch.norm_advantages[k] = 1.0;
        batch.returns[k] = v + 5.0;
        batch.rewards[k] = r + 5.0;
        // ratio e > 1 + ε with positive advantage
        batch.logp_old[k] = lp - 1.0;
        match scheme {
            ClipScheme::Grounded => {
                batch.grounded.value[k] = v - 1.0;
                batch.grounded.reward[k] = r - 1.0;
            }
            ClipScheme::Ungrounded => {
                let u = batch.ungrounded.as_mut().unwrap();
                u.logp[t][i] = lp - 1.0;
                u.value[t][i] = v - 1.0;
                u.reward[t][i] = r - 1.0;
            }
        }
    }
}

/// `A_t = Σ_k (γλ)^k δ_{t+k}`, summed term by term until the episode or
/// the batch ends.
pub fn gae_brute_force(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |k: usize| {
        if dones[k] {
            0.0
        } else if k + 1 < n {
            values[k + 1]
        } else {
            bootstrap
        }
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                let delta = rewards[k] + gamma * next_value(k) - values[k];
                total += (gamma * lambda).powi((k - t) as i32) * delta;
                if dones[k] {
                    break;
                }
            }
            total
        })
        .collect()
}
