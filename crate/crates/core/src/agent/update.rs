use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::{AgentConfig, AgentNets, AgentOptimizers};
use crate::error::{Error, Result};
use crate::nn::{DiagGaussian, GaussianGrad, InputGrad, Mlp, MlpGrads};

/// A sampled minibatch with everything the updates need.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    /// Scaled observation features at `s`, `(B, OBS_WIDTH)`.
    pub states: Array2<f64>,
    pub next_states: Array2<f64>,
    /// Executed latent actions, `(B, |Z|)`.
    pub z: Array2<f64>,
    /// Discounted within-skill reward.
    pub rewards: Vec<f64>,
    /// `γ^k` for a trace of length `k`, or 0 when the goal was reached.
    pub discounts: Vec<f64>,
    /// Weights over the priors, one simplex per entry.
    pub weights: Vec<Vec<f64>>,
    /// Priors evaluated at `s` and at `s′`.
    pub priors: Vec<Vec<DiagGaussian>>,
    pub next_priors: Vec<Vec<DiagGaussian>>,
}

impl UpdateBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty update batch".into()));
        }
        for (what, len) in [
            ("next states", self.next_states.nrows()),
            ("states", self.states.nrows()),
            ("latent actions", self.z.nrows()),
            ("discounts", self.discounts.len()),
            ("weights", self.weights.len()),
            ("priors", self.priors.len()),
            ("next priors", self.next_priors.len()),
        ] {
            if len != n {
                return Err(Error::shape(format!("update batch {what}"), n, len));
            }
        }
        Ok(())
    }
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weights {weights:?} are not on the simplex (sum {sum})"
        )));
    }
    Ok(())
}

/// `Σ ωᵢ KL(π ‖ pᵢ)`.
pub fn multi_prior_divergence(policy: &DiagGaussian, priors: &[DiagGaussian], weights: &[f64]) -> Result<f64> {
    Ok(multi_prior_divergence_grad(policy, priors, weights)?.0)
}

/// Weighted divergence and its gradient w.r.t. the policy distribution.
pub fn multi_prior_divergence_grad(
    policy: &DiagGaussian,
    priors: &[DiagGaussian],
    weights: &[f64],
) -> Result<(f64, GaussianGrad)> {
    if priors.len() != weights.len() || priors.is_empty() {
        return Err(Error::shape("prior weights", priors.len(), weights.len()));
    }
    check_simplex(weights)?;
    let mut total = 0.0;
    let mut grad = GaussianGrad::zeros(policy.dim());
    for (p, &w) in priors.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let (kl, gp, _) = policy.kl_grad(p)?;
        total += w * kl;
        for j in 0..policy.dim() {
            grad.mean[j] += w * gp.mean[j];
            grad.log_std[j] += w * gp.log_std[j];
        }
    }
    Ok((total, grad))
}

fn gaussians(raw: &Array2<f64>) -> Result<Vec<DiagGaussian>> {
    raw.rows()
        .into_iter()
        .map(|r| DiagGaussian::from_head(r.as_slice().unwrap()))
        .collect()
}

fn critic_input<'a>(states: ArrayView2<'a, f64>, z: ArrayView2<'a, f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[states, z]).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Bootstrapped targets
/// `Q̄ = R + γ^k [Q_target(s′, z′) − α Σ ωᵢ KL(π(·|s′) ‖ pᵢ(·|s′))]`
/// with `z′ = μ + σ ⊙ noise` drawn from the current policy at `s′`.
pub fn critic_targets(
    policy: &Mlp,
    target_critic: &Mlp,
    alpha: f64,
    batch: &UpdateBatch,
    noise_next: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    batch.check()?;
    let dists = gaussians(&policy.forward_output(batch.next_states.view())?)?;
    let mut z_next = Array2::zeros(noise_next.dim());
    for (i, d) in dists.iter().enumerate() {
        let s = d.sample(&noise_next.row(i).to_vec())?;
        z_next.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
    }
    let q_next = target_critic.forward_output(critic_input(batch.next_states.view(), z_next.view())?.view())?;
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let div = multi_prior_divergence(&dists[i], &batch.next_priors[i], &batch.weights[i])?;
        let t = batch.rewards[i] + batch.discounts[i] * (q_next[[i, 0]] - alpha * div);
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("critic target for batch entry {i}")));
        }
        out.push(t);
    }
    Ok(out)
}

/// `mean ½(Q(s, z) − Q̄)²` and its gradient w.r.t. the critic. The
/// targets are constants.
pub fn critic_loss_grad(critic: &Mlp, batch: &UpdateBatch, targets: &[f64]) -> Result<(f64, MlpGrads)> {
    batch.check()?;
    if targets.len() != batch.len() {
        return Err(Error::shape("critic targets", batch.len(), targets.len()));
    }
    let pass = critic.forward_batch(critic_input(batch.states.view(), batch.z.view())?.view())?;
    let n = batch.len() as f64;
    let mut up = Array2::zeros((batch.len(), 1));
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let d = pass.output()[[i, 0]] - targets[i];
        loss += 0.5 * d * d;
        up[[i, 0]] = d / n;
    }
    let (_, grads) = critic.backward(&pass, up.view(), InputGrad::None)?;
    Ok((loss / n, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorLoss {
    /// `mean[−Q(s, z_θ) + α D(s)]`.
    pub loss: f64,
    /// Batch-mean weighted divergence `D̂`.
    pub divergence: f64,
}

/// Actor objective with reparameterised `z_θ = μ(s) + σ(s) ⊙ noise` and its
/// gradient w.r.t. the policy; the critic is held fixed.
pub fn actor_loss_grad(
    policy: &Mlp,
    critic: &Mlp,
    alpha: f64,
    batch: &UpdateBatch,
    noise: ArrayView2<f64>,
) -> Result<(ActorLoss, MlpGrads)> {
    batch.check()?;
    let n = batch.len() as f64;
    let pass = policy.forward_batch(batch.states.view())?;
    let dists = gaussians(pass.output())?;
    let mut z = Array2::zeros(noise.dim());
    for (i, d) in dists.iter().enumerate() {
        let s = d.sample(&noise.row(i).to_vec())?;
        z.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
    }
    let obs_width = batch.states.ncols();
    let qpass = critic.forward_batch(critic_input(batch.states.view(), z.view())?.view())?;
    let up = Array2::from_elem((batch.len(), 1), -1.0 / n);
    let (dz, _) = critic.backward(&qpass, up.view(), InputGrad::From(obs_width))?;
    let dz = dz.expect("requested input gradient");
    let mut head_up = Array2::zeros(pass.output().dim());
    let mut q_sum = 0.0;
    let mut div_sum = 0.0;
    for i in 0..batch.len() {
        q_sum += qpass.output()[[i, 0]];
        let mut g = dists[i].sample_grad(&noise.row(i).to_vec(), &dz.row(i).to_vec());
        let (div, gd) = multi_prior_divergence_grad(&dists[i], &batch.priors[i], &batch.weights[i])?;
        div_sum += div;
        for j in 0..g.mean.len() {
            g.mean[j] += alpha * gd.mean[j] / n;
            g.log_std[j] += alpha * gd.log_std[j] / n;
        }
        let raw = pass.output().row(i);
        let head = DiagGaussian::head_grad(raw.as_slice().unwrap(), &g);
        head_up.row_mut(i).assign(&ndarray::ArrayView1::from(&head));
    }
    let (_, grads) = policy.backward(&pass, head_up.view(), InputGrad::None)?;
    let divergence = div_sum / n;
    Ok((
        ActorLoss {
            loss: -q_sum / n + alpha * divergence,
            divergence,
        },
        grads,
    ))
}

/// Batch-mean weighted divergence `D̂` alone and its gradient w.r.t. the
/// policy; used to start the policy on the priors before any RL update.
pub fn divergence_loss_grad(policy: &Mlp, batch: &UpdateBatch) -> Result<(f64, MlpGrads)> {
    batch.check()?;
    let n = batch.len() as f64;
    let pass = policy.forward_batch(batch.states.view())?;
    let mut head_up = Array2::zeros(pass.output().dim());
    let mut total = 0.0;
    for (i, raw) in pass.output().rows().into_iter().enumerate() {
        let raw = raw.to_vec();
        let dist = DiagGaussian::from_head(&raw)?;
        let (div, mut g) = multi_prior_divergence_grad(&dist, &batch.priors[i], &batch.weights[i])?;
        total += div;
        for j in 0..g.mean.len() {
            g.mean[j] /= n;
            g.log_std[j] /= n;
        }
        head_up
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&DiagGaussian::head_grad(&raw, &g)));
    }
    let (_, grads) = policy.backward(&pass, head_up.view(), InputGrad::None)?;
    Ok((total / n, grads))
}

/// Dual ascent on the divergence constraint:
/// `α ← clamp(α + λ_α (D̂ − δ), α_min, α_max)`.
pub fn alpha_update(alpha: f64, divergence: f64, config: &AgentConfig) -> f64 {
    (alpha + config.lr_alpha * (divergence - config.target_divergence))
        .clamp(config.alpha_min, config.alpha_max)
}

/// Losses and the divergence estimate from one full update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub divergence: f64,
    pub alpha: f64,
}

impl AgentNets {
    /// Critic step, actor step, temperature step, then the Polyak update
    /// of the target critic.
    pub fn update(
        &mut self,
        batch: &UpdateBatch,
        noise_next: ArrayView2<f64>,
        noise: ArrayView2<f64>,
        opt: &mut AgentOptimizers,
        config: &AgentConfig,
    ) -> Result<UpdateStats> {
        let targets = critic_targets(&self.policy, &self.target_critic, self.alpha, batch, noise_next)?;
        let (critic_loss, cg) = critic_loss_grad(&self.critic, batch, &targets)?;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        opt.critic.step(&mut self.critic, &cg)?;
        let (actor, ag) = actor_loss_grad(&self.policy, &self.critic, self.alpha, batch, noise)?;
        if !actor.loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        opt.policy.step(&mut self.policy, &ag)?;
        self.alpha = alpha_update(self.alpha, actor.divergence, config);
        self.target_critic.polyak_from(&self.critic, config.tau)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: actor.loss,
            divergence: actor.divergence,
            alpha: self.alpha,
        })
    }
}
