//! The prior predictor Ω: a classifier over low-level transitions
//! `(s, a, s′)` whose softmax output weights the source-task priors.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{join_floats, Bundle};
use crate::demo::Dataset;
use crate::error::{Error, Result};
use crate::maze::{Observation, ACTION_DIM, OBS_WIDTH};
use crate::nn::{softmax, Adam, AdamConfig, InputGrad, Mlp, MlpGrads};

/// Width of a raw transition vector `[s, a, s′]`.
pub const TRANSITION_WIDTH: usize = 2 * OBS_WIDTH + ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    /// Fraction of each member's trajectories held out for testing.
    pub heldout_fraction: f64,
    /// Fraction of the remaining trajectories used for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden: 128,
            batch_size: 256,
            learning_rate: 1e-3,
            max_steps: 6000,
            eval_every: 500,
            patience: 4,
            heldout_fraction: 0.1,
            validation_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("predictor: {m}")));
        if self.hidden == 0 || self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return bad("hidden, batch_size, max_steps and eval_every must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        let f = |v: f64| v > 0.0 && v < 0.5;
        if !f(self.heldout_fraction) || !f(self.validation_fraction) {
            return bad("heldout_fraction and validation_fraction must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Raw transition vector `[s, a, s′]` of width [`TRANSITION_WIDTH`].
pub fn transition_vector(s: &Observation, a: [f64; 2], next: &Observation) -> Vec<f64> {
    let mut v = s.to_vector();
    v.extend_from_slice(&a);
    v.extend(next.to_vector());
    v
}

/// Ω with its input standardisation and member ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPredictor {
    pub net: Mlp,
    pub member_ids: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

/// Location of one transition: `(member, trajectory, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledTransition {
    pub member: usize,
    pub trajectory: usize,
    pub step: usize,
}

impl PriorPredictor {
    pub fn new<R: Rng + ?Sized>(member_ids: Vec<String>, hidden: usize, rng: &mut R) -> Result<Self> {
        if member_ids.len() < 2 {
            return Err(Error::InvalidArgument("the predictor needs at least two members".into()));
        }
        Ok(PriorPredictor {
            net: Mlp::new(&[TRANSITION_WIDTH, hidden, hidden, member_ids.len()], rng)?,
            member_ids,
            input_mean: vec![0.0; TRANSITION_WIDTH],
            input_std: vec![1.0; TRANSITION_WIDTH],
        })
    }

    pub fn members(&self) -> usize {
        self.member_ids.len()
    }

    fn standardize(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != TRANSITION_WIDTH {
            return Err(Error::shape("transition input", TRANSITION_WIDTH, raw.ncols()));
        }
        let mut x = raw.to_owned();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.input_mean[j]) / self.input_std[j];
            }
        }
        Ok(x)
    }

    /// Logits for raw transition rows.
    pub fn logits(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward_output(self.standardize(raw)?.view())
    }

    /// Softmax weights for each raw transition row.
    pub fn predict_batch(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.logits(raw)?;
        for mut row in out.rows_mut() {
            let p = softmax(row.as_slice().unwrap())?;
            row.assign(&ndarray::ArrayView1::from(&p));
        }
        Ok(out)
    }

    /// `ω = Ω(s, a, s′)` on the m-simplex.
    pub fn predict_weights(&self, s: &Observation, a: [f64; 2], next: &Observation) -> Result<Vec<f64>> {
        let v = transition_vector(s, a, next);
        let raw = ArrayView2::from_shape((1, TRANSITION_WIDTH), &v)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.predict_batch(raw)?.row(0).to_vec())
    }

    /// Mean of the per-step weights over a trace of raw transition rows,
    /// renormalised onto the simplex.
    pub fn aggregate_weights(&self, trace: ArrayView2<f64>) -> Result<Vec<f64>> {
        if trace.nrows() == 0 {
            return Err(Error::InvalidArgument("empty transition trace".into()));
        }
        Ok(mean_simplex(self.predict_batch(trace)?.view()))
    }

    /// Mean cross-entropy of the labels and its gradient.
    pub fn cross_entropy_grad(&self, raw: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, MlpGrads)> {
        if labels.len() != raw.nrows() || labels.is_empty() {
            return Err(Error::shape("labels", raw.nrows(), labels.len()));
        }
        let x = self.standardize(raw)?;
        let pass = self.net.forward_batch(x.view())?;
        let n = labels.len() as f64;
        let mut up = Array2::zeros(pass.output().dim());
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= self.members() {
                return Err(Error::InvalidArgument(format!("label {y} out of range")));
            }
            let logits = pass.output().row(i);
            let p = softmax(logits.as_slice().unwrap())?;
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            loss += lse - logits[y];
            for (j, pj) in p.iter().enumerate() {
                up[[i, j]] = (pj - if j == y { 1.0 } else { 0.0 }) / n;
            }
        }
        let (_, grads) = self.net.backward(&pass, up.view(), InputGrad::None)?;
        Ok((loss / n, grads))
    }

    pub fn cross_entropy(&self, raw: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(raw)?;
        let mut loss = 0.0;
        for (row, &y) in logits.rows().into_iter().zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        Ok(loss / labels.len() as f64)
    }

    pub fn to_bundle(&self) -> Bundle {
        Bundle::new()
            .meta("kind", "prior-predictor")
            .meta("members", self.member_ids.len())
            .meta("member_ids", self.member_ids.join(","))
            .meta("input_mean", join_floats(&self.input_mean))
            .meta("input_std", join_floats(&self.input_std))
            .net("omega", &self.net)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        if b.get_meta("kind")? != "prior-predictor" {
            return Err(Error::Format("checkpoint is not a prior predictor".into()));
        }
        let member_ids: Vec<String> = b.get_meta("member_ids")?.split(',').map(String::from).collect();
        let m: usize = b.parse_meta("members")?;
        let p = PriorPredictor {
            net: b.take_net("omega")?,
            member_ids,
            input_mean: b.parse_floats("input_mean")?,
            input_std: b.parse_floats("input_std")?,
        };
        if p.member_ids.len() != m
            || p.net.output_width() != m
            || p.net.input_width() != TRANSITION_WIDTH
            || p.input_mean.len() != TRANSITION_WIDTH
            || p.input_std.len() != TRANSITION_WIDTH
        {
            return Err(Error::Format("predictor checkpoint is inconsistent".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PriorPredictor::from_bundle(&Bundle::load(path)?)
    }
}

/// Arithmetic mean of simplex rows, renormalised. Each column is summed in
/// sorted order so the result does not depend on row order, and a single
/// row is returned unchanged.
pub fn mean_simplex(rows: ArrayView2<f64>) -> Vec<f64> {
    if rows.nrows() == 1 {
        return rows.row(0).to_vec();
    }
    let n = rows.nrows() as f64;
    let mean: Vec<f64> = rows
        .axis_iter(Axis(1))
        .map(|col| {
            let mut v = col.to_vec();
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / n
        })
        .collect();
    let total: f64 = mean.iter().sum();
    mean.iter().map(|v| v / total).collect()
}

/// Raw transition rows for the given locations.
pub fn transition_rows(datasets: &[&Dataset], picks: &[LabeledTransition]) -> Result<Array2<f64>> {
    let mdps: Vec<_> = datasets.iter().map(|d| d.mdp()).collect::<Result<_>>()?;
    let mut out = Array2::zeros((picks.len(), TRANSITION_WIDTH));
    for (row, p) in picks.iter().enumerate() {
        let t = &datasets[p.member].trajectories[p.trajectory];
        let s = t.observation(&mdps[p.member], p.step);
        let s2 = t.observation(&mdps[p.member], p.step + 1);
        let v = transition_vector(&s, t.actions[p.step], &s2);
        out.row_mut(row).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(out)
}

/// Row `i` counts how member-`i` transitions are classified (argmax, ties
/// to the lowest index), normalised to sum to one.
pub fn confusion_matrix(omega: &PriorPredictor, heldout: &[Array2<f64>]) -> Result<Array2<f64>> {
    let m = omega.members();
    if heldout.len() != m {
        return Err(Error::shape("held-out member sets", m, heldout.len()));
    }
    let mut cm = Array2::zeros((m, m));
    for (i, rows) in heldout.iter().enumerate() {
        if rows.nrows() < 100 {
            return Err(Error::InvalidArgument(format!(
                "member {i} has {} held-out transitions, need at least 100",
                rows.nrows()
            )));
        }
        let w = omega.predict_batch(rows.view())?;
        for r in w.rows() {
            cm[[i, argmax(r.as_slice().unwrap())]] += 1.0;
        }
        let n = rows.nrows() as f64;
        cm.row_mut(i).mapv_inplace(|c| c / n);
    }
    Ok(cm)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorReport {
    pub steps: usize,
    pub best_step: usize,
    pub train_per_member: usize,
    pub heldout_per_member: usize,
    pub heldout_accuracy: f64,
    pub confusion: Array2<f64>,
    /// `(step, train loss, validation loss or NaN)`.
    pub log: Vec<(usize, f64, f64)>,
}

impl PredictorReport {
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["step", "train_loss", "validation_loss"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for (s, t, v) in &self.log {
            let v = if v.is_nan() { String::new() } else { format!("{v:?}") };
            w.write_record([s.to_string(), format!("{t:?}"), v])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn diagonal_mean(&self) -> f64 {
        self.confusion.diag().mean().unwrap_or(0.0)
    }
}

struct Split {
    train: Vec<LabeledTransition>,
    validation: Vec<LabeledTransition>,
    heldout: Vec<Vec<LabeledTransition>>,
}

fn split<R: Rng + ?Sized>(datasets: &[&Dataset], cfg: &PredictorConfig, rng: &mut R) -> Result<Split> {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut heldout = Vec::new();
    let mut per_member_train = Vec::new();
    let mut per_member_val = Vec::new();
    for (member, ds) in datasets.iter().enumerate() {
        let n = ds.trajectories.len();
        if n < 3 {
            return Err(Error::Dataset(format!("dataset {} has fewer than 3 trajectories", ds.mdp_id)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_test = ((n as f64 * cfg.heldout_fraction).ceil() as usize).clamp(1, n - 2);
        let n_val = ((n as f64 * cfg.validation_fraction).ceil() as usize).clamp(1, n - n_test - 1);
        let collect = |ids: &[usize]| -> Vec<LabeledTransition> {
            let mut out = Vec::new();
            for &trajectory in ids {
                for step in 0..ds.trajectories[trajectory].len() {
                    out.push(LabeledTransition {
                        member,
                        trajectory,
                        step,
                    });
                }
            }
            out
        };
        heldout.push(collect(&order[..n_test]));
        per_member_val.push(collect(&order[n_test..n_test + n_val]));
        per_member_train.push(collect(&order[n_test + n_val..]));
    }
    // balance every split by downsampling to the smallest member
    let balance = |sets: &mut Vec<Vec<LabeledTransition>>, rng: &mut R| {
        let min = sets.iter().map(Vec::len).min().unwrap_or(0);
        for s in sets.iter_mut() {
            s.shuffle(rng);
            s.truncate(min);
        }
    };
    balance(&mut per_member_train, rng);
    balance(&mut per_member_val, rng);
    balance(&mut heldout, rng);
    for s in per_member_train {
        train.extend(s);
    }
    for s in per_member_val {
        validation.extend(s);
    }
    Ok(Split {
        train,
        validation,
        heldout,
    })
}

/// Per-dimension mean and standard deviation of raw transition vectors
/// (standard deviations below 1e-8 are replaced by 1).
pub fn input_statistics(datasets: &[&Dataset], picks: &[LabeledTransition]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0; TRANSITION_WIDTH];
    let mut sq = vec![0.0; TRANSITION_WIDTH];
    for chunk in picks.chunks(1024) {
        let rows = transition_rows(datasets, chunk)?;
        for r in rows.rows() {
            for (j, v) in r.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
    }
    let n = picks.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var.sqrt() < 1e-8 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok((mean, std))
}

/// Supervised training on labelled transitions from `m ≥ 2` datasets;
/// label `i` is the position of the dataset in `datasets`.
pub fn train_predictor(
    datasets: &[&Dataset],
    config: &PredictorConfig,
) -> Result<(PriorPredictor, PredictorReport)> {
    config.validate()?;
    if datasets.len() < 2 {
        return Err(Error::InvalidArgument("the predictor needs at least two datasets".into()));
    }
    for ds in datasets {
        ds.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids = datasets.iter().map(|d| d.mdp_id.clone()).collect();
    let mut omega = PriorPredictor::new(ids, config.hidden, &mut rng)?;
    let Split {
        mut train,
        validation,
        heldout,
    } = split(datasets, config, &mut rng)?;
    if train.len() < config.batch_size {
        return Err(Error::Dataset("too few training transitions".into()));
    }
    let (mean, std) = input_statistics(datasets, &train)?;
    omega.input_mean = mean;
    omega.input_std = std;

    let val_sample: Vec<LabeledTransition> = validation
        .iter()
        .step_by(validation.len().div_ceil(3000).max(1))
        .copied()
        .collect();
    let val_rows = transition_rows(datasets, &val_sample)?;
    let val_labels: Vec<usize> = val_sample.iter().map(|p| p.member).collect();

    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), &omega.net);
    let mut best = omega.clone();
    let mut best_val = f64::INFINITY;
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
        let batch = &train[cursor..cursor + config.batch_size];
        cursor += config.batch_size;
        let rows = transition_rows(datasets, batch)?;
        let labels: Vec<usize> = batch.iter().map(|p| p.member).collect();
        let (loss, grads) = omega.cross_entropy_grad(rows.view(), &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("predictor cross-entropy at step {step}")));
        }
        adam.step(&mut omega.net, &grads)?;
        step += 1;
        let mut val = f64::NAN;
        if step % config.eval_every == 0 || step == config.max_steps {
            val = omega.cross_entropy(val_rows.view(), &val_labels)?;
            if val < best_val {
                best_val = val;
                best = omega.clone();
                best_step = step;
                bad = 0;
            } else {
                bad += 1;
            }
        }
        log.push((step, loss, val));
        if bad >= config.patience {
            break;
        }
    }

    let m = datasets.len();
    let mut confusion = Array2::zeros((m, m));
    for (i, picks) in heldout.iter().enumerate() {
        for chunk in picks.chunks(1024) {
            let w = best.predict_batch(transition_rows(datasets, chunk)?.view())?;
            for r in w.rows() {
                confusion[[i, argmax(r.as_slice().unwrap())]] += 1.0;
            }
        }
    }
    let correct: f64 = confusion.diag().sum();
    let total: f64 = confusion.sum();
    for mut row in confusion.rows_mut() {
        let n: f64 = row.sum();
        row.mapv_inplace(|c| c / n);
    }
    let report = PredictorReport {
        steps: step,
        best_step,
        train_per_member: train.len() / datasets.len(),
        heldout_per_member: heldout[0].len(),
        heldout_accuracy: correct / total,
        confusion,
        log,
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests;
