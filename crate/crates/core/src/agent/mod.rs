//! The high-level learner: a soft actor-critic over the skill latent space,
//! regularised towards a weighted set of skill priors, plus the baseline
//! configurations built from the same machinery.

mod bc;
mod train;
mod update;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use bc::{behavior_clone, bc_loss_grad, BcConfig, BcReport};
pub use train::{
    audit_weight_log, evaluate_policy, execute_skill, train_mpr_rl, write_metrics_csv, Evaluation,
    MetricsRow, PriorSet, RunOptions,
    SkillOutcome, TrainResult, WeightRecord, METRICS_HEADER,
};
pub use update::{
    actor_loss_grad, alpha_update, critic_loss_grad, critic_targets, divergence_loss_grad,
    multi_prior_divergence,
    multi_prior_divergence_grad, ActorLoss, UpdateBatch, UpdateStats,
};

use crate::checkpoint::Bundle;
use crate::error::{Error, Result};
use crate::maze::OBS_WIDTH;
use crate::nn::{Adam, AdamConfig, DiagGaussian, Mlp};

/// How the per-transition weights over the priors are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    /// ω from the predictor, averaged over the executed trace.
    Adaptive,
    /// One-hot at the predictor's most likely member (lowest index on ties).
    HardMax,
    /// Constant 1/m.
    Uniform,
    /// One-hot at a fixed prior.
    SinglePrior { prior: usize },
    /// KL towards N(0, I) in latent space instead of any learned prior.
    StandardNormal,
    /// As `StandardNormal`, with the policy initialised by behaviour cloning.
    BcInit,
}

impl WeightingMode {
    pub fn uses_priors(&self) -> bool {
        !matches!(self, WeightingMode::StandardNormal | WeightingMode::BcInit)
    }

    pub fn needs_predictor(&self) -> bool {
        matches!(self, WeightingMode::Adaptive | WeightingMode::HardMax)
    }

    pub fn name(&self) -> String {
        match self {
            WeightingMode::Adaptive => "adaptive".into(),
            WeightingMode::HardMax => "hard-max".into(),
            WeightingMode::Uniform => "uniform".into(),
            WeightingMode::SinglePrior { prior } => format!("single-prior-{prior}"),
            WeightingMode::StandardNormal => "standard-normal".into(),
            WeightingMode::BcInit => "bc-init".into(),
        }
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "adaptive" => WeightingMode::Adaptive,
            "hard-max" | "hardmax" => WeightingMode::HardMax,
            "uniform" => WeightingMode::Uniform,
            "standard-normal" => WeightingMode::StandardNormal,
            "bc-init" => WeightingMode::BcInit,
            other => match other.strip_prefix("single-prior-").map(str::parse) {
                Some(Ok(prior)) => WeightingMode::SinglePrior { prior },
                _ => return Err(Error::Config(format!("unknown weighting mode {s:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Target weighted divergence δ in nats.
    pub target_divergence: f64,
    pub alpha_init: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps of prior-driven exploration before any update.
    pub warmup_steps: usize,
    /// Total environment steps.
    pub budget_steps: usize,
    /// Gradient steps after every high-level step once warm.
    pub updates_per_step: usize,
    /// Policy steps on the weighted divergence alone at the end of warmup
    /// (0 disables). Skipped when the policy comes from behaviour cloning.
    pub prior_fit_steps: usize,
    pub hidden: usize,
    /// Goal index in the layout for the transfer task.
    pub goal: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.005,
            target_divergence: 8.0,
            alpha_init: 0.1,
            alpha_min: 1e-4,
            alpha_max: 100.0,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 1e-3,
            buffer_capacity: 100_000,
            batch_size: 128,
            warmup_steps: 2000,
            budget_steps: 200_000,
            updates_per_step: 1,
            prior_fit_steps: 1000,
            hidden: 64,
            goal: 3,
            eval_episodes: 20,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.target_divergence > 0.0) {
            return bad("target_divergence must be positive");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_init && self.alpha_init <= self.alpha_max) {
            return bad("need 0 < alpha_min <= alpha_init <= alpha_max");
        }
        if ![self.lr_policy, self.lr_critic, self.lr_alpha].iter().all(|&l| l > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if self.budget_steps <= self.warmup_steps {
            return bad("budget_steps must exceed warmup_steps");
        }
        if self.hidden == 0 || self.eval_episodes == 0 {
            return bad("hidden and eval_episodes must be positive");
        }
        Ok(())
    }
}

/// Policy, critic, target critic and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub policy: Mlp,
    pub critic: Mlp,
    pub target_critic: Mlp,
    pub alpha: f64,
    pub latent_dim: usize,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, hidden: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        let mut policy = Mlp::new(&[OBS_WIDTH, hidden, hidden, 2 * latent_dim], rng)?;
        policy.scale_output_layer(0.1);
        let critic = Mlp::new(&[OBS_WIDTH + latent_dim, hidden, hidden, 1], rng)?;
        Ok(AgentNets {
            policy,
            target_critic: critic.clone(),
            critic,
            alpha,
            latent_dim,
        })
    }

    pub fn policy_dist(&self, features: &[f64]) -> Result<DiagGaussian> {
        DiagGaussian::from_head(&self.policy.forward(features)?)
    }

    pub fn to_bundle(&self, mode: WeightingMode) -> Bundle {
        Bundle::new()
            .meta("kind", "agent")
            .meta("mode", mode)
            .meta("latent_dim", self.latent_dim)
            .meta("alpha", format!("{:?}", self.alpha))
            .net("policy", &self.policy)
            .net("critic", &self.critic)
            .net("target_critic", &self.target_critic)
    }

    pub fn from_bundle(b: &Bundle) -> Result<(Self, WeightingMode)> {
        if b.get_meta("kind")? != "agent" {
            return Err(Error::Format("checkpoint is not an agent".into()));
        }
        let nets = AgentNets {
            policy: b.take_net("policy")?,
            critic: b.take_net("critic")?,
            target_critic: b.take_net("target_critic")?,
            alpha: b.parse_meta("alpha")?,
            latent_dim: b.parse_meta("latent_dim")?,
        };
        if nets.policy.output_width() != 2 * nets.latent_dim
            || nets.critic.input_width() != OBS_WIDTH + nets.latent_dim
        {
            return Err(Error::Format("agent networks disagree with |Z|".into()));
        }
        Ok((nets, b.get_meta("mode")?.parse()?))
    }

    pub fn save(&self, mode: WeightingMode, path: &Path) -> Result<()> {
        self.to_bundle(mode).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, WeightingMode)> {
        AgentNets::from_bundle(&Bundle::load(path)?)
    }
}

/// Adam state for policy and critic.
#[derive(Debug, Clone)]
pub struct AgentOptimizers {
    pub policy: Adam,
    pub critic: Adam,
}

impl AgentOptimizers {
    pub fn new(nets: &AgentNets, config: &AgentConfig) -> Self {
        AgentOptimizers {
            policy: Adam::new(AdamConfig::with_lr(config.lr_policy), &nets.policy),
            critic: Adam::new(AdamConfig::with_lr(config.lr_critic), &nets.critic),
        }
    }
}

/// `z ∼ π(·|s)` by reparameterisation, or the mean when `deterministic`.
pub fn select_skill<R: Rng + ?Sized>(
    policy: &Mlp,
    features: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> Result<Vec<f64>> {
    let dist = DiagGaussian::from_head(&policy.forward(features)?)?;
    if deterministic {
        return Ok(dist.mean().to_vec());
    }
    let noise: Vec<f64> = (0..dist.dim()).map(|_| rng.sample(StandardNormal)).collect();
    dist.sample(&noise)
}

/// Standard-normal matrix used as frozen reparameterisation noise.
pub fn noise_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Shannon entropy (nats) of a weight vector.
pub fn weight_entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests;
