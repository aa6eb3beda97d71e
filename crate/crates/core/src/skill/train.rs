use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    constant_predictor_mse, mean_action, windows, SkillBatch, SkillConfig, SkillModel,
    SkillOptimizers, Window,
};
use crate::demo::Dataset;
use crate::error::{Error, Result};

const MAX_VALIDATION_WINDOWS: usize = 2048;

/// One training step, or one held-out evaluation when `validation` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillLogRow {
    pub step: usize,
    pub reconstruction: f64,
    pub kl: f64,
    pub prior_kl: f64,
    pub total: f64,
    pub validation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillTrainReport {
    pub steps: usize,
    pub best_step: usize,
    pub best_validation: f64,
    pub train_windows: usize,
    pub heldout_windows: usize,
    /// Held-out reconstruction MSE decoding posterior means.
    pub heldout_mse: f64,
    /// Held-out MSE of the constant mean-action predictor.
    pub baseline_mse: f64,
    pub heldout_posterior_kl: f64,
    pub log: Vec<SkillLogRow>,
}

impl SkillTrainReport {
    pub fn write_log_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["step", "split", "reconstruction", "kl", "prior_kl", "total"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.log {
            w.write_record([
                r.step.to_string(),
                if r.validation { "validation" } else { "train" }.to_string(),
                format!("{:?}", r.reconstruction),
                format!("{:?}", r.kl),
                format!("{:?}", r.prior_kl),
                format!("{:?}", r.total),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn noise<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal))
}

/// Fit a skill model on one dataset. With `reference`, the reference
/// model's decoder is copied and kept frozen so the fitted encoder and
/// prior live in the reference latent space.
///
/// Trajectories are split (not windows), so held-out windows come from
/// unseen episodes. Training stops early once the held-out loss has not
/// improved for `patience` evaluations; the best model is returned.
pub fn train_skill_model(
    dataset: &Dataset,
    config: &SkillConfig,
    reference: Option<&SkillModel>,
) -> Result<(SkillModel, SkillTrainReport)> {
    config.validate()?;
    dataset.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mdp = dataset.mdp()?;
    let scale = mdp.feature_scale();
    let mut model = SkillModel::new(config, scale, &dataset.mdp_id, &mut rng)?;
    if let Some(r) = reference {
        if r.latent_dim != config.latent_dim || r.horizon != config.horizon {
            return Err(Error::Config(format!(
                "reference decoder has |Z| = {}, H = {} but the config asks for {}, {}",
                r.latent_dim, r.horizon, config.latent_dim, config.horizon
            )));
        }
        model.decoder = r.decoder.clone();
        model.decoder_id = r.decoder_id.clone();
        model.sigma_dec = r.sigma_dec;
    }
    let train_decoder = reference.is_none();

    let n = dataset.trajectories.len();
    if n < 2 {
        return Err(Error::Dataset("need at least two trajectories to hold one out".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction).ceil() as usize).clamp(1, n - 1);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let all = windows(dataset, config.horizon);
    let (val_windows, mut train_windows): (Vec<Window>, Vec<Window>) =
        all.into_iter().partition(|w| is_val[w.trajectory]);
    if train_windows.len() < 10 * config.batch_size {
        return Err(Error::Dataset(format!(
            "dataset {} is too small: {} training windows, need at least {}",
            dataset.mdp_id,
            train_windows.len(),
            10 * config.batch_size
        )));
    }
    if val_windows.is_empty() {
        return Err(Error::Dataset("held-out trajectories are shorter than the horizon".into()));
    }
    let stride = val_windows.len().div_ceil(MAX_VALIDATION_WINDOWS);
    let val_subset: Vec<Window> = val_windows.iter().step_by(stride).copied().collect();
    let val_batch = SkillBatch::from_windows(dataset, &scale, &val_subset, config.horizon)?;
    let val_noise = noise(val_batch.len(), config.latent_dim, &mut rng);

    let mut opt = SkillOptimizers::new(&model, config.learning_rate);
    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_step = 0;
    let mut bad_evals = 0;
    let mut cursor = train_windows.len();
    let mut step = 0;
    while step < config.max_steps {
        if cursor + config.batch_size > train_windows.len() {
            train_windows.shuffle(&mut rng);
            cursor = 0;
        }
        let chosen = &train_windows[cursor..cursor + config.batch_size];
        cursor += config.batch_size;
        let batch = SkillBatch::from_windows(dataset, &scale, chosen, config.horizon)?;
        let eps = noise(batch.len(), config.latent_dim, &mut rng);
        let l = model.elbo_step(&batch, eps.view(), &mut opt, train_decoder)?;
        step += 1;
        log.push(SkillLogRow {
            step,
            reconstruction: l.reconstruction,
            kl: l.kl,
            prior_kl: l.prior_kl,
            total: l.total,
            validation: false,
        });
        if step % config.eval_every == 0 || step == config.max_steps {
            let v = model.elbo_losses(&val_batch, val_noise.view())?;
            log.push(SkillLogRow {
                step,
                reconstruction: v.reconstruction,
                kl: v.kl,
                prior_kl: v.prior_kl,
                total: v.total,
                validation: true,
            });
            if v.total < best_val {
                best_val = v.total;
                best = model.clone();
                best_step = step;
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= config.patience {
                    break;
                }
            }
        }
    }

    let train_mean = mean_action(window_actions(dataset, &train_windows, config.horizon).view());
    let heldout = window_actions(dataset, &val_windows, config.horizon);
    let report = SkillTrainReport {
        steps: step,
        best_step,
        best_validation: best_val,
        train_windows: train_windows.len(),
        heldout_windows: val_windows.len(),
        heldout_mse: best.reconstruction_mse(heldout.view())?,
        baseline_mse: constant_predictor_mse(heldout.view(), train_mean),
        heldout_posterior_kl: best.mean_posterior_kl(heldout.view())?,
        log,
    };
    Ok((best, report))
}

/// Flattened action windows `(B, 2H)` without observations.
pub fn window_actions(ds: &Dataset, selected: &[Window], h: usize) -> Array2<f64> {
    let mut out = Array2::zeros((selected.len(), 2 * h));
    for (row, w) in selected.iter().enumerate() {
        let t = &ds.trajectories[w.trajectory];
        for k in 0..h {
            out[[row, 2 * k]] = t.actions[w.start + k][0];
            out[[row, 2 * k + 1]] = t.actions[w.start + k][1];
        }
    }
    out
}
