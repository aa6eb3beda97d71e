use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::Dataset;
use crate::error::{Error, Result};
use crate::maze::OBS_WIDTH;
use crate::nn::{Adam, AdamConfig, DiagGaussian, InputGrad, Mlp, MlpGrads};
use crate::skill::{window_actions, windows, SkillModel, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            max_steps: 4000,
            eval_every: 250,
            patience: 4,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config("bc: sizes and step counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("bc: learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("bc: validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    pub steps: usize,
    pub best_step: usize,
    pub best_validation_nll: f64,
    /// `(step, validation NLL)` at each evaluation.
    pub log: Vec<(usize, f64)>,
}

/// Mean negative log-likelihood `−mean log π(z | s)` of latent labels and
/// its gradient w.r.t. the policy.
pub fn bc_loss_grad(policy: &Mlp, features: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<(f64, MlpGrads)> {
    if features.nrows() != labels.nrows() || features.nrows() == 0 {
        return Err(Error::shape("bc labels", features.nrows(), labels.nrows()));
    }
    let n = features.nrows() as f64;
    let pass = policy.forward_batch(features)?;
    let mut up = Array2::zeros(pass.output().dim());
    let mut loss = 0.0;
    for (i, raw) in pass.output().rows().into_iter().enumerate() {
        let raw = raw.as_slice().unwrap();
        let dist = DiagGaussian::from_head(raw)?;
        let (lp, mut g, _) = dist.log_prob_grad(&labels.row(i).to_vec())?;
        loss -= lp;
        for j in 0..g.mean.len() {
            g.mean[j] = -g.mean[j] / n;
            g.log_std[j] = -g.log_std[j] / n;
        }
        up.row_mut(i).assign(&ndarray::ArrayView1::from(&DiagGaussian::head_grad(raw, &g)));
    }
    let (_, grads) = policy.backward(&pass, up.view(), InputGrad::None)?;
    Ok((loss / n, grads))
}

fn batch_features(ds: &Dataset, model: &SkillModel, chosen: &[Window]) -> Result<Array2<f64>> {
    let mdp = ds.mdp()?;
    let mut out = Array2::zeros((chosen.len(), OBS_WIDTH));
    for (row, w) in chosen.iter().enumerate() {
        let obs = ds.trajectories[w.trajectory].observation(&mdp, w.start);
        model.scale.write(&obs, out.row_mut(row).as_slice_mut().unwrap());
    }
    Ok(out)
}

/// Fit `policy` to the posterior means of the target demonstrations'
/// action windows, labelled by `model`'s encoder. Trajectories are split
/// for validation and the best policy is returned.
pub fn behavior_clone(
    dataset: &Dataset,
    model: &SkillModel,
    mut policy: Mlp,
    config: &BcConfig,
) -> Result<(Mlp, BcReport)> {
    config.validate()?;
    if policy.input_width() != OBS_WIDTH || policy.output_width() != 2 * model.latent_dim {
        return Err(Error::Config(format!(
            "bc policy shape {:?} does not fit |Z| = {}",
            policy.sizes(),
            model.latent_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = dataset.trajectories.len();
    if n < 2 {
        return Err(Error::Dataset("need at least two trajectories for behaviour cloning".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction).ceil() as usize).clamp(1, n - 1);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let all = windows(dataset, model.horizon);
    let labels = label_windows(dataset, model, &all)?;
    let (mut train, val): (Vec<usize>, Vec<usize>) =
        (0..all.len()).partition(|&i| !is_val[all[i].trajectory]);
    if train.len() < config.batch_size || val.is_empty() {
        return Err(Error::Dataset(format!(
            "{} train / {} validation windows is too few for behaviour cloning",
            train.len(),
            val.len()
        )));
    }
    let val: Vec<usize> = val.iter().step_by(val.len().div_ceil(2048)).copied().collect();
    let gather = |idx: &[usize]| -> Result<(Array2<f64>, Array2<f64>)> {
        let ws: Vec<Window> = idx.iter().map(|&i| all[i]).collect();
        let feats = batch_features(dataset, model, &ws)?;
        let lab = labels.select(ndarray::Axis(0), idx);
        Ok((feats, lab))
    };
    let (val_x, val_y) = gather(&val)?;

    let mut opt = Adam::new(AdamConfig::with_lr(config.learning_rate), &policy);
    let mut best = policy.clone();
    let mut best_nll = f64::INFINITY;
    let mut best_step = 0;
    let mut bad = 0;
    let mut log = Vec::new();
    let mut cursor = train.len();
    let mut step = 0;
    while step < config.max_steps {
        if cursor + config.batch_size > train.len() {
            train.shuffle(&mut rng);
            cursor = 0;
        }
        let (x, y) = gather(&train[cursor..cursor + config.batch_size])?;
        cursor += config.batch_size;
        let (loss, g) = bc_loss_grad(&policy, x.view(), y.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("behaviour cloning loss at step {}", step + 1)));
        }
        opt.step(&mut policy, &g)?;
        step += 1;
        if step % config.eval_every == 0 || step == config.max_steps {
            let (nll, _) = bc_loss_grad(&policy, val_x.view(), val_y.view())?;
            log.push((step, nll));
            if nll < best_nll {
                best_nll = nll;
                best = policy.clone();
                best_step = step;
                bad = 0;
            } else {
                bad += 1;
                if bad >= config.patience {
                    break;
                }
            }
        }
    }
    Ok((
        best,
        BcReport {
            steps: step,
            best_step,
            best_validation_nll: best_nll,
            log,
        },
    ))
}

fn label_windows(ds: &Dataset, model: &SkillModel, all: &[Window]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((all.len(), model.latent_dim));
    for (c, chunk) in all.chunks(4096).enumerate() {
        let acts = window_actions(ds, chunk, model.horizon);
        for (k, d) in model.encode_batch(acts.view())?.iter().enumerate() {
            out.row_mut(c * 4096 + k).assign(&ndarray::ArrayView1::from(d.mean()));
        }
    }
    Ok(out)
}
