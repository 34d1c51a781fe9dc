//! The policy prediction network: encoder, value/policy-mean/reward heads,
//! residual latent transition, and the depth-`d` recursive unroll.
//!
//! All forward computation is recorded on a [`Tape`]; the same code path
//! serves acting (no backward pass) and training.

use rand::Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Affine layer `y = x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(input, output),
            b: Tensor::zeros(1, output),
        }
    }

    /// Uniform fan-in initialization (`±1/√in`), zero bias.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            w: Tensor::new(input, output, data).expect("sized above"),
            b: Tensor::zeros(1, output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.rows()
    }

    pub fn output(&self) -> usize {
        self.w.cols()
    }
}

/// One residual transition block: `u ← normalize(u + out(tanh(hidden([u; a]))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub hidden: Linear,
    pub out: Linear,
}

pub const TRANSITION_BLOCKS: usize = 2;

/// Learnable parameters, grouped as encoder, transition, policy mean, value
/// and reward. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct PPNParams {
    pub encoder: [Linear; 2],
    pub transition: [ResidualBlock; TRANSITION_BLOCKS],
    pub policy_mean: Linear,
    pub value: Linear,
    pub reward: Linear,
}

/// Layer widths of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub obs: usize,
    pub act: usize,
    /// Hidden width, equal to the latent state width.
    pub hidden: usize,
}

impl PPNParams {
    pub fn init(dims: Dims, rng: &mut impl Rng) -> Self {
        let Dims { obs, act, hidden } = dims;
        let encoder = [Linear::init(obs, hidden, rng), Linear::init(hidden, hidden, rng)];
        let transition = [(); TRANSITION_BLOCKS].map(|_| ResidualBlock {
            hidden: Linear::init(hidden + act, hidden, rng),
            out: Linear::init(hidden, hidden, rng),
        });
        Self {
            encoder,
            transition,
            policy_mean: Linear::init(hidden, act, rng),
            value: Linear::init(hidden, 1, rng),
            reward: Linear::init(hidden + act, 1, rng),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let Dims { obs, act, hidden } = dims;
        Self {
            encoder: [Linear::zeros(obs, hidden), Linear::zeros(hidden, hidden)],
            transition: [(); TRANSITION_BLOCKS].map(|_| ResidualBlock {
                hidden: Linear::zeros(hidden + act, hidden),
                out: Linear::zeros(hidden, hidden),
            }),
            policy_mean: Linear::zeros(hidden, act),
            value: Linear::zeros(hidden, 1),
            reward: Linear::zeros(hidden + act, 1),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            obs: self.encoder[0].input(),
            act: self.policy_mean.output(),
            hidden: self.encoder[0].output(),
        }
    }

    /// Zero tensor with this parameter layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    fn layers(&self) -> [&Linear; 9] {
        let [e0, e1] = &self.encoder;
        let [t0, t1] = &self.transition;
        [
            e0,
            e1,
            &t0.hidden,
            &t0.out,
            &t1.hidden,
            &t1.out,
            &self.policy_mean,
            &self.value,
            &self.reward,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Linear; 9] {
        let [e0, e1] = &mut self.encoder;
        let [t0, t1] = &mut self.transition;
        [
            e0,
            e1,
            &mut t0.hidden,
            &mut t0.out,
            &mut t1.hidden,
            &mut t1.out,
            &mut self.policy_mean,
            &mut self.value,
            &mut self.reward,
        ]
    }

    /// Stable names, in the order of [`PPNParams::tensors`].
    pub fn tensor_names() -> [&'static str; 18] {
        [
            "encoder.0.w",
            "encoder.0.b",
            "encoder.1.w",
            "encoder.1.b",
            "transition.0.hidden.w",
            "transition.0.hidden.b",
            "transition.0.out.w",
            "transition.0.out.b",
            "transition.1.hidden.w",
            "transition.1.hidden.b",
            "transition.1.out.w",
            "transition.1.out.b",
            "policy_mean.w",
            "policy_mean.b",
            "value.w",
            "value.b",
            "reward.w",
            "reward.b",
        ]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers()
            .into_iter()
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Global L2 norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records every parameter as a borrowed leaf on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Network {
        let mut bind = |l: &'a Linear| LinearVars {
            w: tape.leaf_ref(&l.w),
            b: tape.leaf_ref(&l.b),
        };
        let [e0, e1] = &self.encoder;
        let encoder = [bind(e0), bind(e1)];
        let transition = [
            BlockVars {
                hidden: bind(&self.transition[0].hidden),
                out: bind(&self.transition[0].out),
            },
            BlockVars {
                hidden: bind(&self.transition[1].hidden),
                out: bind(&self.transition[1].out),
            },
        ];
        Network {
            encoder,
            transition,
            policy_mean: bind(&self.policy_mean),
            value: bind(&self.value),
            reward: bind(&self.reward),
            act_dim: self.dims().act,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LinearVars {
    w: Var,
    b: Var,
}

impl LinearVars {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_bias(xw, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockVars {
    hidden: LinearVars,
    out: LinearVars,
}

/// Parameters bound to a tape; forward passes of every head.
///
/// Inputs are batched by row: states are `B×hidden`, actions `B×act`.
#[derive(Debug, Clone)]
pub struct Network {
    encoder: [LinearVars; 2],
    transition: [BlockVars; TRANSITION_BLOCKS],
    policy_mean: LinearVars,
    value: LinearVars,
    reward: LinearVars,
    act_dim: usize,
}

/// Depth-indexed predictions of one unroll. `states[i]`/`values[i]` are
/// `ŝ^i`/`v̂^i` for `i = 0..=d`; `means[i]` is the policy mean at `ŝ^i` and
/// `rewards[i]` is the reward predicted for applying action `i` at `ŝ^i`
/// (so it pairs with the environment reward of that same step).
#[derive(Debug, Clone)]
pub struct UnrollOutput {
    pub states: Vec<Var>,
    pub values: Vec<Var>,
    pub means: Vec<Var>,
    pub rewards: Vec<Var>,
}

impl UnrollOutput {
    pub fn depth(&self) -> usize {
        self.means.len()
    }
}

/// Result of one core application.
#[derive(Debug, Clone)]
pub struct CoreOutput {
    pub mean: Var,
    pub sigma: Vec<f64>,
    pub reward: Var,
    pub next_value: Var,
    pub next_state: Var,
}

impl Network {
    /// Reads the accumulated parameter gradients off `tape`.
    pub fn grads(&self, tape: &Tape) -> PPNParams {
        let lin = |l: &LinearVars| Linear {
            w: tape.grad(l.w),
            b: tape.grad(l.b),
        };
        PPNParams {
            encoder: [lin(&self.encoder[0]), lin(&self.encoder[1])],
            transition: [0, 1].map(|k| ResidualBlock {
                hidden: lin(&self.transition[k].hidden),
                out: lin(&self.transition[k].out),
            }),
            policy_mean: lin(&self.policy_mean),
            value: lin(&self.value),
            reward: lin(&self.reward),
        }
    }

    /// Two affine+tanh layers. Not normalized.
    pub fn encode(&self, tape: &mut Tape, obs: Var) -> Result<Var> {
        let h = self.encoder[0].apply(tape, obs)?;
        let h = tape.tanh(h);
        let h = self.encoder[1].apply(tape, h)?;
        Ok(tape.tanh(h))
    }

    pub fn value(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        self.value.apply(tape, state)
    }

    pub fn policy_mean(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        self.policy_mean.apply(tape, state)
    }

    pub fn reward(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var> {
        let sa = tape.concat_cols(state, action)?;
        self.reward.apply(tape, sa)
    }

    /// Residual latent transition; every block ends in a unit-norm projection.
    pub fn transition(&self, tape: &mut Tape, state: Var, action: Var) -> Result<Var> {
        let mut u = state;
        for block in &self.transition {
            let ua = tape.concat_cols(u, action)?;
            let h = block.hidden.apply(tape, ua)?;
            let h = tape.tanh(h);
            let delta = block.out.apply(tape, h)?;
            let next = tape.add(u, delta)?;
            u = tape.normalize_rows(next);
        }
        Ok(u)
    }

    /// One depth-1 rollout from `state` under `action`.
    pub fn core(
        &self,
        tape: &mut Tape,
        state: Var,
        action: Var,
        sigma: &[f64],
    ) -> Result<CoreOutput> {
        let mean = self.policy_mean(tape, state)?;
        let reward = self.reward(tape, state, action)?;
        let next_state = self.transition(tape, state, action)?;
        let next_value = self.value(tape, next_state)?;
        Ok(CoreOutput {
            mean,
            sigma: sigma.to_vec(),
            reward,
            next_value,
            next_state,
        })
    }

    /// Recursively applies [`Network::core`] along `actions` (one `B×act`
    /// node per depth) starting from `s0`.
    pub fn unroll(&self, tape: &mut Tape, s0: Var, actions: &[Var], sigma: &[f64]) -> Result<UnrollOutput> {
        if actions.is_empty() {
            return Err(Error::Argument("unroll: empty action sequence".into()));
        }
        let mut out = UnrollOutput {
            states: vec![s0],
            values: vec![self.value(tape, s0)?],
            means: Vec::with_capacity(actions.len()),
            rewards: Vec::with_capacity(actions.len()),
        };
        let mut s = s0;
        for &a in actions {
            if tape.shape(a).1 != self.act_dim {
                return Err(Error::Dimension(format!(
                    "unroll: action width {} != {}",
                    tape.shape(a).1,
                    self.act_dim
                )));
            }
            let c = self.core(tape, s, a, sigma)?;
            out.means.push(c.mean);
            out.rewards.push(c.reward);
            out.states.push(c.next_state);
            out.values.push(c.next_value);
            s = c.next_state;
        }
        Ok(out)
    }
}

/// Parameter-free exploration scale: exponential interpolation from
/// `start` to `end` over `horizon` samples, floored at `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub horizon: f64,
}

impl SigmaSchedule {
    pub fn new(start: Vec<f64>, end: Vec<f64>, horizon: f64) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(Error::Argument("sigma schedule: start/end widths differ".into()));
        }
        if start.iter().chain(&end).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument("sigma schedule: values must be positive".into()));
        }
        if start.iter().zip(&end).any(|(s, e)| s < e) {
            return Err(Error::Argument("sigma schedule: start must be >= end".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Argument("sigma schedule: horizon must be positive".into()));
        }
        Ok(Self { start, end, horizon })
    }

    pub fn uniform(act_dim: usize, start: f64, end: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![start; act_dim], vec![end; act_dim], horizon)
    }

    pub fn sigma(&self, samples: u64) -> Vec<f64> {
        let frac = samples as f64 / self.horizon;
        self.start
            .iter()
            .zip(&self.end)
            .map(|(&s, &e)| (s * (-frac * (s / e).ln()).exp()).max(e))
            .collect()
    }
}

/// Differential entropy of `N(·, diag σ²)`.
pub fn gaussian_entropy(sigma: &[f64]) -> f64 {
    sigma
        .iter()
        .map(|s| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln())
        .sum()
}

/// Convenience single-observation forward passes (no gradients).
impl PPNParams {
    pub fn encode_obs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let x = tape.leaf(Tensor::row(obs));
        let s = net.encode(&mut tape, x)?;
        Ok(tape.value(s).to_vec())
    }

    /// `(ŝ^0, μ, v̂^0)` for one observation.
    pub fn act_heads(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.check_obs(obs)?;
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let x = tape.leaf(Tensor::row(obs));
        let s = net.encode(&mut tape, x)?;
        let mu = net.policy_mean(&mut tape, s)?;
        let v = net.value(&mut tape, s)?;
        Ok((tape.value(s).to_vec(), tape.value(mu).to_vec(), tape.scalar(v)))
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.dims().obs {
            return Err(Error::Argument(format!(
                "observation has {} entries, network expects {}",
                obs.len(),
                self.dims().obs
            )));
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        Ok(())
    }
}
