//! Latent skill space: an encoder over H-step action windows, a decoder
//! back to action sequences, and a state-conditioned skill prior.

mod train;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use train::{train_skill_model, window_actions, SkillLogRow, SkillTrainReport};

use crate::checkpoint::{join_floats, Bundle};
use crate::demo::Dataset;
use crate::error::{Error, Result};
use crate::maze::{FeatureScale, Observation, ACTION_DIM, OBS_WIDTH};
use crate::nn::{Adam, AdamConfig, DiagGaussian, GaussianGrad, InputGrad, Mlp, MlpGrads};

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    pub latent_dim: usize,
    pub horizon: usize,
    pub beta: f64,
    pub sigma_dec: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        SkillConfig {
            latent_dim: 5,
            horizon: 10,
            beta: 5e-4,
            sigma_dec: 0.1,
            hidden: 64,
            batch_size: 128,
            learning_rate: 1e-3,
            max_steps: 12_000,
            eval_every: 500,
            patience: 4,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SkillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("skill model: {m}")));
        if self.latent_dim == 0 || self.horizon == 0 || self.hidden == 0 {
            return bad("latent_dim, horizon and hidden must be positive");
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return bad("batch_size, max_steps and eval_every must be positive");
        }
        if !(self.sigma_dec > 0.0) || !(self.beta >= 0.0) || !(self.learning_rate > 0.0) {
            return bad("sigma_dec and learning_rate must be positive, beta non-negative");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Encoder, decoder and prior networks over a shared latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prior: Mlp,
    pub latent_dim: usize,
    pub horizon: usize,
    pub sigma_dec: f64,
    pub beta: f64,
    pub scale: FeatureScale,
    /// Dataset the encoder and prior were fitted on.
    pub dataset_id: String,
    /// Dataset the decoder was fitted on (the reference member).
    pub decoder_id: String,
}

/// `(trajectory, first step)` of an H-step window inside one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub trajectory: usize,
    pub start: usize,
}

/// Every stride-1 window of length `horizon`, never crossing trajectories.
pub fn windows(ds: &Dataset, horizon: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, t) in ds.trajectories.iter().enumerate() {
        if t.len() >= horizon {
            out.extend((0..=t.len() - horizon).map(|start| Window { trajectory: i, start }));
        }
    }
    out
}

/// Flattened action windows `(B, 2H)` and scaled first observations
/// `(B, OBS_WIDTH)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillBatch {
    pub actions: Array2<f64>,
    pub observations: Array2<f64>,
}

impl SkillBatch {
    pub fn from_windows(
        ds: &Dataset,
        scale: &FeatureScale,
        selected: &[Window],
        horizon: usize,
    ) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::InvalidArgument("empty skill batch".into()));
        }
        let mdp = ds.mdp()?;
        let mut actions = Array2::zeros((selected.len(), ACTION_DIM * horizon));
        let mut observations = Array2::zeros((selected.len(), OBS_WIDTH));
        for (row, w) in selected.iter().enumerate() {
            let t = &ds.trajectories[w.trajectory];
            if w.start + horizon > t.len() {
                return Err(Error::InvalidArgument(format!(
                    "window {w:?} runs past the end of its trajectory"
                )));
            }
            let mut a = actions.row_mut(row);
            for k in 0..horizon {
                a[2 * k] = t.actions[w.start + k][0];
                a[2 * k + 1] = t.actions[w.start + k][1];
            }
            let obs = t.observation(&mdp, w.start);
            scale.write(&obs, observations.row_mut(row).as_slice_mut().unwrap());
        }
        Ok(SkillBatch {
            actions,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batch-mean loss components. `total = reconstruction + beta·kl + prior_kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboLosses {
    /// Gaussian negative log-likelihood of the window under the decoder.
    pub reconstruction: f64,
    /// `KL(q(z|a) ‖ N(0, I))`, before the β weight.
    pub kl: f64,
    /// `KL(stopgrad q(z|a) ‖ p(z|s))`.
    pub prior_kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub prior: MlpGrads,
}

/// Adam state for the three networks.
#[derive(Debug, Clone)]
pub struct SkillOptimizers {
    pub encoder: Adam,
    pub decoder: Adam,
    pub prior: Adam,
}

impl SkillOptimizers {
    pub fn new(model: &SkillModel, lr: f64) -> Self {
        let cfg = AdamConfig::with_lr(lr);
        SkillOptimizers {
            encoder: Adam::new(cfg, &model.encoder),
            decoder: Adam::new(cfg, &model.decoder),
            prior: Adam::new(cfg, &model.prior),
        }
    }
}

fn gaussians(raw: &Array2<f64>) -> Result<Vec<DiagGaussian>> {
    raw.rows()
        .into_iter()
        .map(|r| DiagGaussian::from_head(r.as_slice().unwrap()))
        .collect()
}

impl SkillModel {
    pub fn new<R: Rng + ?Sized>(
        config: &SkillConfig,
        scale: FeatureScale,
        dataset_id: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (h, z, w) = (config.horizon, config.latent_dim, config.hidden);
        Ok(SkillModel {
            encoder: Mlp::new(&[ACTION_DIM * h, w, w, 2 * z], rng)?,
            decoder: Mlp::new(&[z, w, w, ACTION_DIM * h], rng)?,
            prior: Mlp::new(&[OBS_WIDTH, w, w, 2 * z], rng)?,
            latent_dim: z,
            horizon: h,
            sigma_dec: config.sigma_dec,
            beta: config.beta,
            scale,
            dataset_id: dataset_id.to_string(),
            decoder_id: dataset_id.to_string(),
        })
    }

    /// Posterior `q(z | a)` over a flattened window of `H·2` actions.
    pub fn encode(&self, window: &[f64]) -> Result<DiagGaussian> {
        if window.len() != ACTION_DIM * self.horizon {
            return Err(Error::shape("action window", ACTION_DIM * self.horizon, window.len()));
        }
        DiagGaussian::from_head(&self.encoder.forward(window)?)
    }

    pub fn encode_batch(&self, actions: ArrayView2<f64>) -> Result<Vec<DiagGaussian>> {
        gaussians(&self.encoder.forward_output(actions)?)
    }

    /// Decoded action means, unclamped.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<[f64; 2]>> {
        if z.len() != self.latent_dim {
            return Err(Error::shape("latent", self.latent_dim, z.len()));
        }
        let out = self.decoder.forward(z)?;
        Ok(out.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.forward_output(z)
    }

    /// Skill prior `p(z | s)`.
    pub fn prior_infer(&self, obs: &Observation) -> Result<DiagGaussian> {
        if obs.view.len() + 4 != OBS_WIDTH {
            return Err(Error::shape("observation", OBS_WIDTH, obs.view.len() + 4));
        }
        DiagGaussian::from_head(&self.prior.forward(&self.scale.features(obs))?)
    }

    /// Prior for rows of already scaled observation features.
    pub fn prior_batch(&self, features: ArrayView2<f64>) -> Result<Vec<DiagGaussian>> {
        gaussians(&self.prior.forward_output(features)?)
    }

    fn check_batch(&self, batch: &SkillBatch, noise: &ArrayView2<f64>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty skill batch".into()));
        }
        if noise.dim() != (batch.len(), self.latent_dim) {
            return Err(Error::shape("latent noise rows", batch.len(), noise.nrows()));
        }
        if batch.observations.nrows() != batch.len() {
            return Err(Error::shape("batch observations", batch.len(), batch.observations.nrows()));
        }
        Ok(())
    }

    fn reconstruction_nll(&self, target: &Array2<f64>, mean: &Array2<f64>) -> f64 {
        let inv_var = 1.0 / (self.sigma_dec * self.sigma_dec);
        let sq: f64 = (mean - target).iter().map(|d| d * d).sum();
        let per_window_const = target.ncols() as f64 * (self.sigma_dec.ln() + HALF_LOG_TWO_PI);
        (0.5 * sq * inv_var) / target.nrows() as f64 + per_window_const
    }

    /// Loss components for a batch with reparameterisation noise fixed to
    /// `noise` (shape `(B, |Z|)`).
    pub fn elbo_losses(&self, batch: &SkillBatch, noise: ArrayView2<f64>) -> Result<ElboLosses> {
        self.check_batch(batch, &noise)?;
        let q = self.encode_batch(batch.actions.view())?;
        let mut z = Array2::zeros(noise.dim());
        for (i, qi) in q.iter().enumerate() {
            let s = qi.sample(noise.row(i).as_slice().unwrap())?;
            z.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
        }
        let mean = self.decoder.forward_output(z.view())?;
        let p = self.prior_batch(batch.observations.view())?;
        let std = DiagGaussian::standard(self.latent_dim);
        let n = batch.len() as f64;
        let mut kl = 0.0;
        let mut prior_kl = 0.0;
        for (qi, pi) in q.iter().zip(&p) {
            kl += qi.kl(&std)?;
            prior_kl += qi.kl(pi)?;
        }
        let reconstruction = self.reconstruction_nll(&batch.actions, &mean);
        let (kl, prior_kl) = (kl / n, prior_kl / n);
        Ok(ElboLosses {
            reconstruction,
            kl,
            prior_kl,
            total: reconstruction + self.beta * kl + prior_kl,
        })
    }

    /// Losses together with exact gradients of `total` for every network.
    /// The prior term sees the posterior as a constant.
    pub fn elbo_loss_grad(
        &self,
        batch: &SkillBatch,
        noise: ArrayView2<f64>,
    ) -> Result<(ElboLosses, SkillGrads)> {
        self.check_batch(batch, &noise)?;
        let n = batch.len() as f64;
        let enc_pass = self.encoder.forward_batch(batch.actions.view())?;
        let q = gaussians(enc_pass.output())?;
        let mut z = Array2::zeros(noise.dim());
        for (i, qi) in q.iter().enumerate() {
            let s = qi.sample(noise.row(i).as_slice().unwrap())?;
            z.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
        }
        let dec_pass = self.decoder.forward_batch(z.view())?;
        let mean = dec_pass.output();
        let reconstruction = self.reconstruction_nll(&batch.actions, mean);
        let inv_var = 1.0 / (self.sigma_dec * self.sigma_dec);
        let d_mean = (mean - &batch.actions) * (inv_var / n);
        let (dz, decoder) = self
            .decoder
            .backward(&dec_pass, d_mean.view(), InputGrad::All)?;
        let dz = dz.expect("requested input gradient");

        let std = DiagGaussian::standard(self.latent_dim);
        let prior_pass = self.prior.forward_batch(batch.observations.view())?;
        let p = gaussians(prior_pass.output())?;
        let mut enc_up = Array2::zeros(enc_pass.output().dim());
        let mut prior_up = Array2::zeros(prior_pass.output().dim());
        let mut kl = 0.0;
        let mut prior_kl = 0.0;
        for i in 0..batch.len() {
            let noise_i = noise.row(i);
            let mut g = q[i].sample_grad(noise_i.as_slice().unwrap(), dz.row(i).as_slice().unwrap());
            let (k, gq, _) = q[i].kl_grad(&std)?;
            kl += k;
            for j in 0..self.latent_dim {
                g.mean[j] += self.beta * gq.mean[j] / n;
                g.log_std[j] += self.beta * gq.log_std[j] / n;
            }
            let raw = enc_pass.output().row(i);
            let head = DiagGaussian::head_grad(raw.as_slice().unwrap(), &g);
            enc_up.row_mut(i).assign(&ndarray::ArrayView1::from(&head));

            let (pk, _, gp) = q[i].kl_grad(&p[i])?;
            prior_kl += pk;
            let gp = GaussianGrad {
                mean: gp.mean.iter().map(|v| v / n).collect(),
                log_std: gp.log_std.iter().map(|v| v / n).collect(),
            };
            let raw = prior_pass.output().row(i);
            let head = DiagGaussian::head_grad(raw.as_slice().unwrap(), &gp);
            prior_up.row_mut(i).assign(&ndarray::ArrayView1::from(&head));
        }
        let (_, encoder) = self
            .encoder
            .backward(&enc_pass, enc_up.view(), InputGrad::None)?;
        let (_, prior) = self
            .prior
            .backward(&prior_pass, prior_up.view(), InputGrad::None)?;
        let (kl, prior_kl) = (kl / n, prior_kl / n);
        Ok((
            ElboLosses {
                reconstruction,
                kl,
                prior_kl,
                total: reconstruction + self.beta * kl + prior_kl,
            },
            SkillGrads {
                encoder,
                decoder,
                prior,
            },
        ))
    }

    /// One Adam step on all networks, or on encoder and prior only when
    /// `train_decoder` is false (the decoder is a frozen reference).
    pub fn elbo_step(
        &mut self,
        batch: &SkillBatch,
        noise: ArrayView2<f64>,
        opt: &mut SkillOptimizers,
        train_decoder: bool,
    ) -> Result<ElboLosses> {
        let (losses, grads) = self.elbo_loss_grad(batch, noise)?;
        if ![losses.reconstruction, losses.kl, losses.prior_kl].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "skill loss (reconstruction {}, kl {}, prior kl {})",
                losses.reconstruction, losses.kl, losses.prior_kl
            )));
        }
        opt.encoder.step(&mut self.encoder, &grads.encoder)?;
        if train_decoder {
            opt.decoder.step(&mut self.decoder, &grads.decoder)?;
        }
        opt.prior.step(&mut self.prior, &grads.prior)?;
        Ok(losses)
    }

    /// Mean squared error per action component when decoding the
    /// posterior mean of each window.
    pub fn reconstruction_mse(&self, actions: ArrayView2<f64>) -> Result<f64> {
        let q = self.encode_batch(actions)?;
        let mut z = Array2::zeros((q.len(), self.latent_dim));
        for (i, qi) in q.iter().enumerate() {
            z.row_mut(i).assign(&ndarray::ArrayView1::from(qi.mean()));
        }
        let out = self.decoder.forward_output(z.view())?;
        let diff = &out - &actions;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
    }

    /// Mean `KL(q(z|a) ‖ N(0, I))` over windows.
    pub fn mean_posterior_kl(&self, actions: ArrayView2<f64>) -> Result<f64> {
        let std = DiagGaussian::standard(self.latent_dim);
        let q = self.encode_batch(actions)?;
        let mut total = 0.0;
        for qi in &q {
            total += qi.kl(&std)?;
        }
        Ok(total / q.len() as f64)
    }

    /// Importance-weighted estimate of `log p(a)` per window with `k`
    /// posterior samples and a standard normal latent prior.
    pub fn importance_weighted_bound<R: Rng + ?Sized>(
        &self,
        actions: ArrayView2<f64>,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let q = self.encode_batch(actions)?;
        let std = DiagGaussian::standard(self.latent_dim);
        let dec_std = DiagGaussian::new(
            vec![0.0; actions.ncols()],
            vec![self.sigma_dec.ln(); actions.ncols()],
        )?;
        let mut out = Vec::with_capacity(q.len());
        for (i, qi) in q.iter().enumerate() {
            let target = actions.row(i);
            let mut logw = Vec::with_capacity(k);
            for _ in 0..k {
                let eps: Vec<f64> = (0..self.latent_dim)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect();
                let z = qi.sample(&eps)?;
                let mean = self.decoder.forward(&z)?;
                let resid: Vec<f64> = target.iter().zip(&mean).map(|(a, m)| a - m).collect();
                logw.push(dec_std.log_prob(&resid)? + std.log_prob(&z)? - qi.log_prob(&z)?);
            }
            let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logw.iter().map(|l| (l - m).exp()).sum();
            out.push(m + (s / k as f64).ln());
        }
        Ok(out)
    }

    pub fn to_bundle(&self) -> Bundle {
        Bundle::new()
            .meta("kind", "skill-model")
            .meta("latent_dim", self.latent_dim)
            .meta("horizon", self.horizon)
            .meta("sigma_dec", format!("{:?}", self.sigma_dec))
            .meta("beta", format!("{:?}", self.beta))
            .meta("dataset_id", &self.dataset_id)
            .meta("decoder_id", &self.decoder_id)
            .meta("extent", join_floats(&self.scale.extent))
            .meta("max_speed", format!("{:?}", self.scale.max_speed))
            .net("encoder", &self.encoder)
            .net("decoder", &self.decoder)
            .net("prior", &self.prior)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        if b.get_meta("kind")? != "skill-model" {
            return Err(Error::Format("checkpoint is not a skill model".into()));
        }
        let extent = b.parse_floats("extent")?;
        if extent.len() != 2 {
            return Err(Error::Format("skill model extent must have two entries".into()));
        }
        let m = SkillModel {
            encoder: b.take_net("encoder")?,
            decoder: b.take_net("decoder")?,
            prior: b.take_net("prior")?,
            latent_dim: b.parse_meta("latent_dim")?,
            horizon: b.parse_meta("horizon")?,
            sigma_dec: b.parse_meta("sigma_dec")?,
            beta: b.parse_meta("beta")?,
            scale: FeatureScale {
                extent: [extent[0], extent[1]],
                max_speed: b.parse_meta("max_speed")?,
            },
            dataset_id: b.get_meta("dataset_id")?.to_string(),
            decoder_id: b.get_meta("decoder_id")?.to_string(),
        };
        let (h, z) = (m.horizon, m.latent_dim);
        let ok = m.encoder.input_width() == ACTION_DIM * h
            && m.encoder.output_width() == 2 * z
            && m.decoder.input_width() == z
            && m.decoder.output_width() == ACTION_DIM * h
            && m.prior.input_width() == OBS_WIDTH
            && m.prior.output_width() == 2 * z;
        if !ok {
            return Err(Error::Format("skill model network shapes disagree with metadata".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SkillModel::from_bundle(&Bundle::load(path)?)
    }

    /// Flattened parameters of all three networks, encoder first.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.encoder.flat_params();
        v.extend(self.decoder.flat_params());
        v.extend(self.prior.flat_params());
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let a = self.encoder.param_count();
        let b = a + self.decoder.param_count();
        if flat.len() != b + self.prior.param_count() {
            return Err(Error::shape("skill parameters", b + self.prior.param_count(), flat.len()));
        }
        self.encoder.set_flat_params(&flat[..a])?;
        self.decoder.set_flat_params(&flat[a..b])?;
        self.prior.set_flat_params(&flat[b..])
    }
}

impl SkillGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.encoder.flat();
        v.extend(self.decoder.flat());
        v.extend(self.prior.flat());
        v
    }
}

/// Column means of an action matrix, repeated per step: the constant
/// mean-action predictor.
pub fn mean_action(actions: ArrayView2<f64>) -> [f64; 2] {
    let cols = actions.mean_axis(Axis(0)).expect("non-empty");
    let steps = cols.len() / 2;
    let mut m = [0.0; 2];
    for k in 0..steps {
        m[0] += cols[2 * k] / steps as f64;
        m[1] += cols[2 * k + 1] / steps as f64;
    }
    m
}

/// MSE of predicting `mean` for every action in every window.
pub fn constant_predictor_mse(actions: ArrayView2<f64>, mean: [f64; 2]) -> f64 {
    let mut total = 0.0;
    for row in actions.rows() {
        for (j, a) in row.iter().enumerate() {
            let d = a - mean[j % 2];
            total += d * d;
        }
    }
    total / actions.len() as f64
}
