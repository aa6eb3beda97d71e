use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::update::{divergence_loss_grad, UpdateBatch};
use super::{
    noise_matrix, select_skill, weight_entropy, AgentConfig, AgentNets, AgentOptimizers,
    UpdateStats, WeightingMode,
};
use crate::error::{Error, Result};
use crate::maze::{EnvState, FeatureScale, Kinematics, MdpSpec, OBS_WIDTH};
use crate::nn::{DiagGaussian, Mlp};
use crate::predictor::{argmax, transition_vector, PriorPredictor, TRANSITION_WIDTH};
use crate::skill::SkillModel;

pub const METRICS_HEADER: [&str; 9] = [
    "episode",
    "env_steps",
    "return",
    "success",
    "alpha",
    "mean_weighted_kl",
    "weight_entropy",
    "critic_loss",
    "actor_loss",
];

/// The frozen pre-trained pieces a run consumes.
#[derive(Debug, Clone, Copy)]
pub struct PriorSet<'a> {
    /// Reference skill model whose decoder executes latent actions.
    pub decoder: &'a SkillModel,
    /// Skill priors in the decoder's latent space, in predictor order.
    pub priors: &'a [SkillModel],
    pub omega: Option<&'a PriorPredictor>,
}

impl PriorSet<'_> {
    fn validate(&self, mode: WeightingMode, mdp: &MdpSpec) -> Result<()> {
        let z = self.decoder.latent_dim;
        let cfg = |m: String| Err(Error::Config(m));
        if self.decoder.scale != mdp.feature_scale() {
            return cfg("skill model feature scaling does not match the target MDP".into());
        }
        if mode.uses_priors() && self.priors.is_empty() {
            return cfg(format!("mode {mode} needs at least one prior"));
        }
        for p in self.priors {
            if p.latent_dim != z || p.horizon != self.decoder.horizon {
                return cfg(format!("prior {} has a different |Z| or H than the decoder", p.dataset_id));
            }
            if p.decoder_id != self.decoder.decoder_id {
                return cfg(format!(
                    "prior {} lives in the latent space of {}, not {}",
                    p.dataset_id, p.decoder_id, self.decoder.decoder_id
                ));
            }
        }
        if let WeightingMode::SinglePrior { prior } = mode {
            if prior >= self.priors.len() {
                return cfg(format!("single prior {prior} out of range"));
            }
        }
        if mode.needs_predictor() && self.priors.len() > 1 {
            let omega = match self.omega {
                Some(o) => o,
                None => return cfg(format!("mode {mode} needs a prior predictor")),
            };
            let ids: Vec<&str> = self.priors.iter().map(|p| p.dataset_id.as_str()).collect();
            if omega.member_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
                return cfg(format!(
                    "predictor members {:?} do not match the priors {ids:?}",
                    omega.member_ids
                ));
            }
        }
        Ok(())
    }
}

/// Where a run writes incremental artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Periodic checkpoints go here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Episodes between periodic checkpoints (0 disables them).
    pub checkpoint_every: usize,
    /// When set, every weight vector used in a gradient step is appended
    /// to this CSV.
    pub debug_weights: Option<PathBuf>,
    /// Initial policy parameters (behaviour cloning).
    pub init_policy: Option<Mlp>,
}

/// Result of executing one latent action.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillOutcome {
    /// `actions.len() + 1` states, starting at the state the skill began in.
    pub states: Vec<Kinematics>,
    pub actions: Vec<[f64; 2]>,
    /// `Σ_j γ^j r_j` over the executed steps.
    pub reward: f64,
    pub next_state: EnvState,
    /// The episode ended (goal or horizon).
    pub done: bool,
    pub reached_goal: bool,
}

impl SkillOutcome {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Decode `z`, clamp each action and step the environment until the
/// sequence runs out or the episode ends.
pub fn execute_skill(
    mdp: &MdpSpec,
    decoder: &SkillModel,
    state: &EnvState,
    z: &[f64],
    gamma: f64,
) -> Result<SkillOutcome> {
    let actions = decoder.decode(z)?;
    let mut s = *state;
    let mut out = SkillOutcome {
        states: vec![s.kinematics()],
        actions: Vec::with_capacity(actions.len()),
        reward: 0.0,
        next_state: s,
        done: false,
        reached_goal: false,
    };
    let mut discount = 1.0;
    for a in actions {
        let a = mdp.clamp_action(a);
        let step = mdp.step(&s, a)?;
        out.reward += discount * step.reward;
        discount *= gamma;
        out.actions.push(a);
        out.states.push(step.state.kinematics());
        s = step.state;
        if step.done {
            out.done = true;
            out.reached_goal = step.reached_goal;
            break;
        }
    }
    out.next_state = s;
    Ok(out)
}

#[derive(Debug, Clone)]
struct ReplayEntry {
    state: Kinematics,
    z: Vec<f64>,
    reward: f64,
    next_state: Kinematics,
    discount: f64,
    trace: Vec<Kinematics>,
    weights: Vec<f64>,
    priors: Vec<DiagGaussian>,
    next_priors: Vec<DiagGaussian>,
}

/// One row of the per-episode metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub env_steps: usize,
    /// Discounted episode return.
    pub ret: f64,
    pub success: bool,
    pub alpha: f64,
    /// Mean `D̂` over the episode's gradient steps (NaN when none ran).
    pub mean_weighted_kl: f64,
    /// Mean entropy of the weights of the episode's high-level steps.
    pub weight_entropy: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v:?}") };
        vec![
            self.episode.to_string(),
            self.env_steps.to_string(),
            f(self.ret),
            u8::from(self.success).to_string(),
            f(self.alpha),
            f(self.mean_weighted_kl),
            f(self.weight_entropy),
            f(self.critic_loss),
            f(self.actor_loss),
        ]
    }
}

/// Final deterministic evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub nets: AgentNets,
    pub mode: WeightingMode,
    pub metrics: Vec<MetricsRow>,
    /// Every gradient step in order.
    pub updates: Vec<UpdateStats>,
    /// `D̂` at each prior-fit step.
    pub prior_fit: Vec<f64>,
    pub evaluation: Evaluation,
    /// Low-level positions stored in the final buffer, oldest first.
    pub visited: Vec<[f64; 2]>,
    pub env_steps: usize,
}

impl TrainResult {
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        write_metrics_csv(&self.metrics, path)
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(METRICS_HEADER).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Regularizer<'a> {
    mode: WeightingMode,
    set: PriorSet<'a>,
    standard: DiagGaussian,
}

impl Regularizer<'_> {
    fn count(&self) -> usize {
        if self.mode.uses_priors() {
            self.set.priors.len()
        } else {
            1
        }
    }

    fn priors_at(&self, features: &[f64]) -> Result<Vec<DiagGaussian>> {
        if !self.mode.uses_priors() {
            return Ok(vec![self.standard.clone()]);
        }
        self.set
            .priors
            .iter()
            .map(|p| DiagGaussian::from_head(&p.prior.forward(features)?))
            .collect()
    }

    fn initial_weights(&self) -> Vec<f64> {
        let m = self.count();
        match self.mode {
            WeightingMode::HardMax => one_hot(m, 0),
            WeightingMode::SinglePrior { prior } => one_hot(m, prior),
            _ => vec![1.0 / m as f64; m],
        }
    }

    fn weights_for(&self, mdp: &MdpSpec, trace: &[Kinematics], actions: &[[f64; 2]]) -> Result<Vec<f64>> {
        let m = self.count();
        match self.mode {
            WeightingMode::Adaptive | WeightingMode::HardMax if m > 1 => {
                let omega = self.set.omega.expect("validated");
                let mut rows = Array2::zeros((actions.len(), TRANSITION_WIDTH));
                let mut prev = mdp.observe_kinematics(&trace[0]);
                for (k, a) in actions.iter().enumerate() {
                    let next = mdp.observe_kinematics(&trace[k + 1]);
                    let v = transition_vector(&prev, *a, &next);
                    rows.row_mut(k).assign(&ndarray::ArrayView1::from(&v));
                    prev = next;
                }
                let w = omega.aggregate_weights(rows.view())?;
                Ok(if self.mode == WeightingMode::HardMax {
                    one_hot(m, argmax(&w))
                } else {
                    w
                })
            }
            WeightingMode::Uniform => Ok(vec![1.0 / m as f64; m]),
            WeightingMode::SinglePrior { prior } => Ok(one_hot(m, prior)),
            _ => Ok(vec![1.0; m].into_iter().map(|v| v / m as f64).collect()),
        }
    }
}

fn one_hot(m: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[i] = 1.0;
    v
}

/// Index drawn from a categorical distribution with one uniform draw.
fn categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    w.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn features(mdp: &MdpSpec, scale: &FeatureScale, k: &Kinematics) -> Vec<f64> {
    scale.features(&mdp.observe_kinematics(k))
}

/// Run the multi-prior regularised actor-critic on `mdp` for
/// `config.budget_steps` environment steps.
pub fn train_mpr_rl(
    mdp: &MdpSpec,
    set: PriorSet<'_>,
    mode: WeightingMode,
    config: &AgentConfig,
    options: &RunOptions,
) -> Result<TrainResult> {
    config.validate()?;
    set.validate(mode, mdp)?;
    if config.goal >= mdp.layout.goals().len() {
        return Err(Error::Config(format!("goal {} is not in the layout", config.goal)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let latent = set.decoder.latent_dim;
    let mut nets = AgentNets::new(latent, config.hidden, config.alpha_init, &mut rng)?;
    if let Some(p) = &options.init_policy {
        if p.sizes() != nets.policy.sizes() {
            return Err(Error::Config(format!(
                "initial policy has shape {:?}, expected {:?}",
                p.sizes(),
                nets.policy.sizes()
            )));
        }
        nets.policy = p.clone();
    }
    let mut opt = AgentOptimizers::new(&nets, config);
    let reg = Regularizer {
        mode,
        set,
        standard: DiagGaussian::standard(latent),
    };
    let scale = mdp.feature_scale();
    let mut debug = match &options.debug_weights {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            let cols: Vec<String> = (0..reg.count()).map(|i| format!("w{i}")).collect();
            writeln!(w, "gradient_step,slot,{}", cols.join(",")).map_err(|e| Error::io(path, e))?;
            Some((w, path.clone()))
        }
        None => None,
    };

    let mut buffer: Vec<ReplayEntry> = Vec::new();
    let mut head = 0usize;
    let mut metrics = Vec::new();
    let mut updates = Vec::new();
    let mut env_steps = 0usize;
    let mut episode = 0usize;
    let mut fitted = false;
    let mut prior_fit = Vec::new();
    while env_steps < config.budget_steps {
        let mut state = mdp.reset(config.goal, &mut rng)?;
        let mut current_w = reg.initial_weights();
        let mut ret = 0.0;
        let mut disc = 1.0;
        let mut success = false;
        let mut ent_sum = 0.0;
        let mut hl_steps = 0usize;
        let (mut kl_sum, mut c_sum, mut a_sum, mut n_upd) = (0.0, 0.0, 0.0, 0usize);
        loop {
            let kin = state.kinematics();
            let f_s = features(mdp, &scale, &kin);
            let priors_s = reg.priors_at(&f_s)?;
            let z = if env_steps < config.warmup_steps {
                if mode == WeightingMode::BcInit {
                    select_skill(&nets.policy, &f_s, &mut rng, false)?
                } else {
                    let i = categorical(&current_w, &mut rng);
                    let eps: Vec<f64> = (0..latent).map(|_| rng.sample(StandardNormal)).collect();
                    priors_s[i].sample(&eps)?
                }
            } else {
                select_skill(&nets.policy, &f_s, &mut rng, false)?
            };
            let out = execute_skill(mdp, set.decoder, &state, &z, config.gamma)?;
            env_steps += out.len();
            ret += disc * out.reward;
            disc *= config.gamma.powi(out.len() as i32);
            success |= out.reached_goal;
            let weights = reg.weights_for(mdp, &out.states, &out.actions)?;
            ent_sum += weight_entropy(&weights);
            hl_steps += 1;
            let next_kin = out.next_state.kinematics();
            let next_priors = reg.priors_at(&features(mdp, &scale, &next_kin))?;
            let entry = ReplayEntry {
                state: kin,
                z,
                reward: out.reward,
                next_state: next_kin,
                discount: if out.reached_goal {
                    0.0
                } else {
                    config.gamma.powi(out.len() as i32)
                },
                trace: out.states.clone(),
                weights: weights.clone(),
                priors: priors_s,
                next_priors,
            };
            if buffer.len() < config.buffer_capacity {
                buffer.push(entry);
            } else {
                buffer[head] = entry;
                head = (head + 1) % config.buffer_capacity;
            }
            current_w = weights;

            if env_steps >= config.warmup_steps && buffer.len() >= config.batch_size {
                if !fitted {
                    fitted = true;
                    if options.init_policy.is_none() {
                        if mode.uses_priors() {
                            let m = reg.count();
                            let mut mass = vec![0.0; m];
                            for e in &buffer {
                                for (a, w) in mass.iter_mut().zip(&e.weights) {
                                    *a += w;
                                }
                            }
                            let i = argmax(&mass);
                            nets.policy = set.priors[i].prior.clone();
                        }
                        for step in 0..config.prior_fit_steps {
                            let idx: Vec<usize> = (0..config.batch_size)
                                .map(|_| rng.gen_range(0..buffer.len()))
                                .collect();
                            let batch = make_batch(mdp, &scale, &buffer, &idx, latent);
                            let (d, g) = divergence_loss_grad(&nets.policy, &batch)?;
                            if !d.is_finite() {
                                return Err(Error::Diverged(format!("prior fit step {}", step + 1)));
                            }
                            opt.policy.step(&mut nets.policy, &g)?;
                            prior_fit.push(d);
                        }
                    }
                }
                for _ in 0..config.updates_per_step {
                    let idx: Vec<usize> = (0..config.batch_size)
                        .map(|_| rng.gen_range(0..buffer.len()))
                        .collect();
                    let batch = make_batch(mdp, &scale, &buffer, &idx, latent);
                    let noise_next = noise_matrix(config.batch_size, latent, &mut rng);
                    let noise = noise_matrix(config.batch_size, latent, &mut rng);
                    let stats = nets
                        .update(&batch, noise_next.view(), noise.view(), &mut opt, config)
                        .map_err(|e| {
                            Error::Diverged(format!("gradient step {}: {e}", updates.len() + 1))
                        })?;
                    if let Some((w, path)) = debug.as_mut() {
                        for (slot, wv) in batch.weights.iter().enumerate() {
                            let cols: Vec<String> = wv.iter().map(|v| format!("{v:?}")).collect();
                            writeln!(w, "{},{slot},{}", updates.len() + 1, cols.join(","))
                                .map_err(|e| Error::io(path.as_path(), e))?;
                        }
                    }
                    updates.push(stats);
                    kl_sum += stats.divergence;
                    c_sum += stats.critic_loss;
                    a_sum += stats.actor_loss;
                    n_upd += 1;
                }
            }
            state = out.next_state;
            if out.done || env_steps >= config.budget_steps {
                break;
            }
        }
        let nan_mean = |s: f64| if n_upd == 0 { f64::NAN } else { s / n_upd as f64 };
        metrics.push(MetricsRow {
            episode,
            env_steps,
            ret,
            success,
            alpha: nets.alpha,
            mean_weighted_kl: nan_mean(kl_sum),
            weight_entropy: ent_sum / hl_steps as f64,
            critic_loss: nan_mean(c_sum),
            actor_loss: nan_mean(a_sum),
        });
        episode += 1;
        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && episode.is_multiple_of(options.checkpoint_every) {
                nets.save(mode, &dir.join(format!("agent_ep{episode:05}.ckpt")))?;
            }
        }
    }
    if let Some((mut w, path)) = debug {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    let evaluation = evaluate_policy(
        &nets.policy,
        set.decoder,
        mdp,
        config.goal,
        config.eval_episodes,
        config.gamma,
        config.seed ^ 0x9E37_79B9_7F4A_7C15,
    )?;
    let mut visited = Vec::new();
    let order = (head..buffer.len()).chain(0..head);
    for i in order {
        let t = &buffer[i].trace;
        visited.extend(t[..t.len() - 1].iter().map(|k| k.position));
    }
    Ok(TrainResult {
        nets,
        mode,
        metrics,
        updates,
        prior_fit,
        evaluation,
        visited,
        env_steps,
    })
}

fn make_batch(
    mdp: &MdpSpec,
    scale: &FeatureScale,
    buffer: &[ReplayEntry],
    idx: &[usize],
    latent: usize,
) -> UpdateBatch {
    let n = idx.len();
    let mut states = Array2::zeros((n, OBS_WIDTH));
    let mut next_states = Array2::zeros((n, OBS_WIDTH));
    let mut z = Array2::zeros((n, latent));
    let mut batch = UpdateBatch {
        states: Array2::zeros((0, 0)),
        next_states: Array2::zeros((0, 0)),
        z: Array2::zeros((0, 0)),
        rewards: Vec::with_capacity(n),
        discounts: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        priors: Vec::with_capacity(n),
        next_priors: Vec::with_capacity(n),
    };
    for (row, &i) in idx.iter().enumerate() {
        let e = &buffer[i];
        scale.write(&mdp.observe_kinematics(&e.state), states.row_mut(row).as_slice_mut().unwrap());
        scale.write(
            &mdp.observe_kinematics(&e.next_state),
            next_states.row_mut(row).as_slice_mut().unwrap(),
        );
        z.row_mut(row).assign(&ndarray::ArrayView1::from(&e.z));
        batch.rewards.push(e.reward);
        batch.discounts.push(e.discount);
        batch.weights.push(e.weights.clone());
        batch.priors.push(e.priors.clone());
        batch.next_priors.push(e.next_priors.clone());
    }
    batch.states = states;
    batch.next_states = next_states;
    batch.z = z;
    batch
}

/// Run `n_episodes` with the policy mean and report the success rate and
/// mean discounted return.
pub fn evaluate_policy(
    policy: &Mlp,
    decoder: &SkillModel,
    mdp: &MdpSpec,
    goal: usize,
    n_episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = mdp.feature_scale();
    let mut successes = 0usize;
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let mut state = mdp.reset(goal, &mut rng)?;
        let mut disc = 1.0;
        loop {
            let f = features(mdp, &scale, &state.kinematics());
            let z = select_skill(policy, &f, &mut rng, true)?;
            let out = execute_skill(mdp, decoder, &state, &z, gamma)?;
            total += disc * out.reward;
            disc *= gamma.powi(out.len() as i32);
            if out.reached_goal {
                successes += 1;
            }
            state = out.next_state;
            if out.done {
                break;
            }
        }
    }
    Ok(Evaluation {
        episodes: n_episodes,
        success_rate: successes as f64 / n_episodes as f64,
        mean_return: total / n_episodes as f64,
    })
}

/// Summary of a debug-weights log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub rows: usize,
    pub gradient_steps: usize,
    /// Largest `|Σω − 1|` seen.
    pub max_sum_error: f64,
    pub min_entry: f64,
    /// Rows that are exactly one vertex of the simplex.
    pub vertex_rows: usize,
}

/// Scan a debug-weights CSV written by [`train_mpr_rl`].
pub fn audit_weight_log(path: &Path) -> Result<WeightRecord> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rec = WeightRecord {
        rows: 0,
        gradient_steps: 0,
        max_sum_error: 0.0,
        min_entry: f64::INFINITY,
        vertex_rows: 0,
    };
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            continue;
        }
        let mut parts = line.split(',');
        let step: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad weight log line {}", i + 1)))?;
        parts.next();
        let w: Vec<f64> = parts
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad weight on line {}", i + 1))))
            .collect::<Result<_>>()?;
        rec.rows += 1;
        rec.gradient_steps = rec.gradient_steps.max(step);
        rec.max_sum_error = rec.max_sum_error.max((w.iter().sum::<f64>() - 1.0).abs());
        rec.min_entry = w.iter().cloned().fold(rec.min_entry, f64::min);
        if w.iter().filter(|&&v| v == 1.0).count() == 1 && w.iter().all(|&v| v == 0.0 || v == 1.0) {
            rec.vertex_rows += 1;
        }
    }
    Ok(rec)
}
