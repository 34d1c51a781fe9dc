//! Run configuration: every knob that, together with the seed, determines a
//! training run. Serialized as flat `key = value` text (a TOML subset).

use serde::{Deserialize, Serialize};

use crate::envs;
use crate::error::{Error, Result};
use crate::model::SigmaSchedule;
use crate::objective::LossConfig;
use crate::optim::AdamConfig;
use crate::rollout::ClipScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    /// Environment steps per iteration.
    pub n_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    /// Planning horizon used by the execution-mode ablations.
    pub depth: usize,
    pub d_pi: usize,
    pub d_v: usize,
    pub d_r: usize,
    pub clip_eps: f64,
    pub alpha_v: f64,
    pub alpha_r: f64,
    pub alpha_h: f64,
    pub huber_delta: f64,
    pub clip_scheme: ClipScheme,
    pub clip_policy: bool,
    pub clip_value_reward: bool,
    pub normalize_advantages: bool,
    /// Multiplies environment rewards before they enter learning.
    pub reward_scale: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Samples over which σ decays; defaults to `total_steps`.
    pub sigma_horizon: Option<u64>,
    pub checkpoint_every: usize,
    /// Log real elapsed time; off by default so metrics are reproducible.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pointmass2d".into(),
            seed: 0,
            total_steps: 300_000,
            n_steps: 2048,
            epochs: 10,
            minibatch: 64,
            gamma: 0.99,
            lambda: 0.95,
            lr: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_grad_norm: 0.5,
            hidden: 128,
            depth: 2,
            d_pi: 2,
            d_v: 2,
            d_r: 2,
            clip_eps: 0.2,
            alpha_v: 0.5,
            alpha_r: 0.5,
            alpha_h: 0.0,
            huber_delta: 1.0,
            clip_scheme: ClipScheme::Grounded,
            clip_policy: true,
            clip_value_reward: true,
            normalize_advantages: true,
            reward_scale: 1.0,
            sigma_start: 0.6,
            sigma_end: 0.1,
            sigma_horizon: None,
            checkpoint_every: 10,
            wall_clock: false,
        }
    }
}

impl RunConfig {
    /// Sets `depth`, `d_pi`, `d_v` and `d_r` together.
    pub fn with_depth(mut self, d: usize) -> Self {
        self.depth = d;
        self.d_pi = d;
        self.d_v = d;
        self.d_r = d;
        self
    }

    /// Policy-only reduction: no reward terms, depth-1 policy, depth-0 value.
    pub fn ppo2(mut self) -> Self {
        self.alpha_r = 0.0;
        self.d_pi = 1;
        self.d_v = 0;
        self.d_r = 0;
        self
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            clip_eps: self.clip_eps,
            alpha_v: self.alpha_v,
            alpha_r: self.alpha_r,
            alpha_h: self.alpha_h,
            d_pi: self.d_pi,
            d_v: self.d_v,
            d_r: self.d_r,
            scheme: self.clip_scheme,
            huber_delta: self.huber_delta,
            clip_policy: self.clip_policy,
            clip_value_reward: self.clip_value_reward,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn sigma_schedule(&self) -> Result<SigmaSchedule> {
        let act = envs::spec(&self.env)?.act_dim;
        let horizon = self.sigma_horizon.unwrap_or(self.total_steps) as f64;
        SigmaSchedule::uniform(act, self.sigma_start, self.sigma_end, horizon)
    }

    pub fn iterations(&self) -> usize {
        (self.total_steps / self.n_steps as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        envs::spec(&self.env)?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_steps == 0 || self.epochs == 0 || self.minibatch == 0 || self.hidden == 0 {
            return bad("n_steps, epochs, minibatch and hidden must be >= 1");
        }
        if self.minibatch > self.n_steps {
            return bad("minibatch must not exceed n_steps");
        }
        if self.total_steps < self.n_steps as u64 {
            return bad("total_steps must be >= n_steps");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and adam_eps must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if self.depth == 0 {
            return bad("depth must be >= 1");
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1");
        }
        if self.seed > i64::MAX as u64 || self.total_steps > i64::MAX as u64 {
            return bad("seed and total_steps must be below 2^63");
        }
        if self.sigma_horizon == Some(0) {
            return bad("sigma_horizon must be >= 1");
        }
        self.loss().validate()?;
        self.sigma_schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Flat `key = value` text with every field spelled out.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Parses [`RunConfig::to_text`] output; missing keys take defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one `key=value` override, parsing the value by the key's type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table = toml::from_str(&self.to_text()).expect("own output parses");
        let current = table
            .get(key)
            .cloned()
            .or_else(|| (key == "sigma_horizon").then(|| toml::Value::Integer(0)))
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        let parsed = match current {
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            toml::Value::Integer(_) => toml::Value::Integer(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{value}`")))?,
            ),
            toml::Value::Float(_) => toml::Value::Float(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))?,
            ),
            toml::Value::Boolean(_) => toml::Value::Boolean(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects true/false, got `{value}`")))?,
            ),
            _ => return Err(Error::Config(format!("`{key}` cannot be set from the command line"))),
        };
        table.insert(key.to_string(), parsed);
        *self = Self::from_text(&toml::to_string(&table).expect("table serializes"))?;
        Ok(())
    }
}
