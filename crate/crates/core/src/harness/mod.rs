//! Experiment orchestration: demos → skill models → predictor → agent
//! runs → evaluation, with content-hash stage caching, per-seed runs,
//! aggregated learning curves, ablations and SVG output.

mod config;
mod plot;
pub mod provenance;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use config::{
    DemoSection, EnvSection, ExperimentConfig, ExperimentSection, FamilySection, Layout, Member, Method,
};
pub use plot::{emit_exploration_map, emit_plot, exploration_histogram, frame, read_curve, Curve, Frame, PlotSpec};

use crate::agent::{
    behavior_clone, evaluate_policy, train_mpr_rl, AgentNets, Evaluation, MetricsRow, PriorSet,
    RunOptions, TrainResult,
};
use crate::checkpoint::Bundle;
use crate::demo::{generate_dataset, load_dataset, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::maze::{MazeLayout, MdpSpec};
use crate::nn::Mlp;
use crate::predictor::{train_predictor, PriorPredictor};
use crate::skill::{train_skill_model, SkillModel};
use provenance::{is_fresh, record, StageKey};

/// Stage names as used in error messages and sidecars.
pub const STAGES: [&str; 5] = ["demos", "skills", "predictor", "agent", "eval"];

const POOLED_ID: &str = "pooled";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn toml_of<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).expect("config values are always representable")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// What a pipeline run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub root: PathBuf,
    /// Stages whose cached outputs were reused.
    pub skipped: Vec<String>,
    /// Stages that did work.
    pub built: Vec<String>,
    /// Final evaluation per `(method, seed)`.
    pub evaluations: BTreeMap<(Method, u64), Evaluation>,
    pub files: Vec<PathBuf>,
}

impl RunArtifacts {
    fn note(&mut self, label: String, fresh: bool) {
        if fresh {
            self.skipped.push(label);
        } else {
            self.built.push(label);
        }
    }

    /// Mean final success over the seeds of one method.
    pub fn mean_success(&self, m: Method) -> Option<f64> {
        let v: Vec<f64> = self
            .evaluations
            .iter()
            .filter(|((k, _), _)| *k == m)
            .map(|(_, e)| e.success_rate)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Drives the stages for one configuration and output directory.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub paths: Layout,
    pub maze: Arc<MazeLayout>,
    /// Progress lines go to stderr unless quiet.
    pub quiet: bool,
    artifacts: RunArtifacts,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let maze = config.layout()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let paths = Layout::new(out);
        let snapshot = config.to_toml();
        std::fs::write(paths.config(), &snapshot).map_err(|e| Error::io(paths.config(), e))?;
        Ok(Pipeline {
            config,
            paths,
            maze,
            quiet: false,
            artifacts: RunArtifacts {
                root: out.to_path_buf(),
                ..Default::default()
            },
        })
    }

    pub fn artifacts(&self) -> &RunArtifacts {
        &self.artifacts
    }

    pub fn into_artifacts(self) -> RunArtifacts {
        self.artifacts
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[mpr] {msg}");
        }
    }

    fn member_mdp(&self, m: &Member) -> Result<MdpSpec> {
        self.config.member_mdp(&self.maze, m)
    }

    fn env_key(&self) -> String {
        format!("{}{}", self.maze.to_text(), toml_of(&self.config.env))
    }

    /// Run `build` unless `outputs` are fresh for `key`.
    fn cached(
        &mut self,
        label: String,
        outputs: &[PathBuf],
        key: &StageKey,
        build: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<()> {
        if is_fresh(outputs, key) {
            self.say(&format!("{label}: cached"));
            self.artifacts.note(label, true);
            return Ok(());
        }
        self.say(&format!("{label}: building"));
        for p in outputs {
            ensure_parent(p)?;
        }
        build(self)?;
        record(outputs, key)?;
        self.artifacts.note(label, false);
        self.artifacts.files.extend(outputs.iter().cloned());
        Ok(())
    }

    // ---- stage 1 -----------------------------------------------------

    fn demo_key(&self, m: &Member, n: usize, seed: u64) -> StageKey {
        StageKey::new("demos")
            .value("env", self.env_key())
            .value("member", toml_of(m))
            .value("count", n.to_string())
            .value("seed", seed.to_string())
            .value("expert", toml_of(&self.config.demos.expert))
    }

    /// Source demos, plus target demos when a method needs them.
    pub fn stage_demos(&mut self, methods: &[Method]) -> Result<()> {
        let run = |p: &mut Self| -> Result<()> {
            let sources = p.config.family.sources.clone();
            for (i, m) in sources.iter().enumerate() {
                let seed = p.config.demos.seed + i as u64;
                p.demos_for(m, p.config.demos.per_source, seed)?;
            }
            if methods.iter().any(Method::needs_target_demos) {
                let t = p.config.family.target.clone();
                p.demos_for(&t, p.config.demos.target, p.config.demos.seed + 1000)?;
            }
            Ok(())
        };
        run(self).map_err(|e| Error::stage("demos", e))
    }

    fn demos_for(&mut self, m: &Member, n: usize, seed: u64) -> Result<()> {
        let path = self.paths.demos(&m.id);
        let key = self.demo_key(m, n, seed);
        let mdp = self.member_mdp(m)?;
        let expert = self.config.demos.expert;
        self.cached(format!("demos/{}", m.id), std::slice::from_ref(&path), &key, |_| {
            let ds = generate_dataset(&mdp, n, &expert, seed)?;
            save_dataset(&ds, &path)
        })
    }

    pub fn load_demos(&self, id: &str) -> Result<Dataset> {
        load_dataset(&self.paths.demos(id))
    }

    // ---- stage 2 -----------------------------------------------------

    fn skill_key(&self, id: &str, data: &[PathBuf], reference: Option<&Path>) -> Result<StageKey> {
        let mut k = StageKey::new("skills").value("id", id).value("config", toml_of(&self.config.skill));
        for (i, d) in data.iter().enumerate() {
            k = k.file(&format!("data{i}"), d)?;
        }
        if let Some(r) = reference {
            k = k.file("reference", r)?;
        }
        Ok(k)
    }

    /// Reference model on the first source, every other prior in its
    /// latent space, and the behaviour-cloned policy for `bc-sac`.
    pub fn stage_skills(&mut self, methods: &[Method]) -> Result<()> {
        let run = |p: &mut Self| -> Result<()> {
            let sources: Vec<String> = p.config.family.sources.iter().map(|m| m.id.clone()).collect();
            let reference = p.paths.skill(&sources[0]);
            p.skill_for(&sources[0], &[sources[0].clone()], None)?;
            for id in &sources[1..] {
                p.skill_for(id, std::slice::from_ref(id), Some(&reference))?;
            }
            if methods.contains(&Method::Spirl) {
                let t = p.config.family.target.id.clone();
                p.skill_for(&t, std::slice::from_ref(&t), Some(&reference))?;
            }
            if methods.contains(&Method::SpirlNoTarget) {
                p.skill_for(POOLED_ID, &sources, Some(&reference))?;
            }
            if methods.contains(&Method::BcSac) {
                p.bc_stage(&reference)?;
            }
            Ok(())
        };
        run(self).map_err(|e| Error::stage("skills", e))
    }

    fn skill_for(&mut self, id: &str, data_ids: &[String], reference: Option<&Path>) -> Result<()> {
        let data: Vec<PathBuf> = data_ids.iter().map(|d| self.paths.demos(d)).collect();
        let key = self.skill_key(id, &data, reference)?;
        let out = self.paths.skill(id);
        let log = self.paths.skill_log(id);
        let cfg = self.config.skill;
        self.cached(format!("skills/{id}"), &[out.clone(), log.clone()], &key, |_| {
            let parts: Vec<Dataset> = data.iter().map(|d| load_dataset(d)).collect::<Result<_>>()?;
            let ds = if parts.len() == 1 {
                parts.into_iter().next().unwrap()
            } else {
                let refs: Vec<&Dataset> = parts.iter().collect();
                Dataset::pooled(id, &refs)?
            };
            let reference = reference.map(SkillModel::load).transpose()?;
            let (model, report) = train_skill_model(&ds, &cfg, reference.as_ref())?;
            model.save(&out)?;
            report.write_log_csv(&log)
        })
    }

    fn bc_stage(&mut self, reference: &Path) -> Result<()> {
        let target = self.paths.demos(&self.config.family.target.id);
        let key = StageKey::new("bc")
            .value("bc", toml_of(&self.config.bc))
            .value("hidden", self.config.agent.hidden.to_string())
            .file("reference", reference)?
            .file("data", &target)?;
        let out = self.paths.bc_policy();
        let (bc, hidden) = (self.config.bc, self.config.agent.hidden);
        self.cached("skills/bc-policy".into(), std::slice::from_ref(&out), &key, |_| {
            let model = SkillModel::load(reference)?;
            let ds = load_dataset(&target)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(bc.seed);
            let init = AgentNets::new(model.latent_dim, hidden, 1.0, &mut rng)?.policy;
            let (policy, report) = behavior_clone(&ds, &model, init, &bc)?;
            Bundle::new()
                .meta("kind", "bc-policy")
                .meta("best_step", report.best_step)
                .meta("validation_nll", format!("{:?}", report.best_validation_nll))
                .net("policy", &policy)
                .save(&out)
        })
    }

    // ---- stage 3 -----------------------------------------------------

    pub fn stage_predictor(&mut self, methods: &[Method]) -> Result<()> {
        if !methods.iter().any(Method::needs_predictor) || self.config.family.sources.len() < 2 {
            return Ok(());
        }
        let run = |p: &mut Self| -> Result<()> {
            let data: Vec<PathBuf> = p.config.family.sources.iter().map(|m| p.paths.demos(&m.id)).collect();
            let mut key = StageKey::new("predictor").value("config", toml_of(&p.config.predictor));
            for (i, d) in data.iter().enumerate() {
                key = key.file(&format!("data{i}"), d)?;
            }
            let dir = p.paths.predictor_dir();
            let outs = [p.paths.predictor(), dir.join("confusion.csv"), dir.join("log.csv")];
            let cfg = p.config.predictor;
            p.cached("predictor".into(), &outs, &key, |_| {
                let parts: Vec<Dataset> = data.iter().map(|d| load_dataset(d)).collect::<Result<_>>()?;
                let refs: Vec<&Dataset> = parts.iter().collect();
                let (omega, report) = train_predictor(&refs, &cfg)?;
                omega.save(&outs[0])?;
                let m = report.confusion.nrows();
                let mut header = vec!["true_member".to_string()];
                header.extend(omega.member_ids.iter().cloned());
                let rows: Vec<Vec<String>> = (0..m)
                    .map(|i| {
                        let mut r = vec![omega.member_ids[i].clone()];
                        r.extend(report.confusion.row(i).iter().map(|v| format!("{v:?}")));
                        r
                    })
                    .collect();
                let h: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(&outs[1], &h, &rows)?;
                report.write_log_csv(&outs[2])
            })
        };
        run(self).map_err(|e| Error::stage("predictor", e))
    }

    // ---- stage 4 -----------------------------------------------------

    /// Checkpoints a method consumes, in prior order.
    fn prior_ids(&self, m: Method) -> Vec<String> {
        let sources = self.config.family.sources.iter().map(|s| s.id.clone());
        match m {
            Method::Adaptive | Method::HardMax | Method::Uniform => sources.collect(),
            Method::Spirl => vec![self.config.family.target.id.clone()],
            Method::SpirlNoTarget => vec![POOLED_ID.to_string()],
            Method::Sac | Method::BcSac => Vec::new(),
        }
    }

    fn run_outputs(&self, m: Method, seed: u64) -> Vec<PathBuf> {
        let d = self.paths.run_dir(m, seed);
        let mut v = vec![d.join("metrics.csv"), d.join("agent.ckpt"), d.join("summary.csv"), d.join("exploration.svg")];
        if self.config.experiment.debug_weights {
            v.push(d.join("weights.csv"));
        }
        v
    }

    pub fn stage_agent(&mut self, methods: &[Method], seeds: &[u64]) -> Result<()> {
        for &m in methods {
            for &seed in seeds {
                self.agent_run(m, seed)
                    .map_err(|e| Error::stage("agent", Error::stage(&format!("{m} seed {seed}"), e)))?;
            }
        }
        Ok(())
    }

    fn agent_run(&mut self, m: Method, seed: u64) -> Result<()> {
        let reference = self.paths.skill(&self.config.family.sources[0].id);
        let priors: Vec<PathBuf> = self.prior_ids(m).iter().map(|id| self.paths.skill(id)).collect();
        let mut agent = self.config.agent;
        agent.seed = seed;
        let mut key = StageKey::new("agent")
            .value("method", m.name())
            .value("agent", toml_of(&agent))
            .value("env", self.env_key())
            .value("target", toml_of(&self.config.family.target))
            .value(
                "experiment",
                format!(
                    "checkpoint_every={} debug_weights={}",
                    self.config.experiment.checkpoint_every, self.config.experiment.debug_weights
                ),
            )
            .file("reference", &reference)?;
        for (i, p) in priors.iter().enumerate() {
            key = key.file(&format!("prior{i}"), p)?;
        }
        let use_predictor = m.needs_predictor() && priors.len() > 1;
        if use_predictor {
            key = key.file("predictor", &self.paths.predictor())?;
        }
        if m == Method::BcSac {
            key = key.file("bc", &self.paths.bc_policy())?;
        }
        let outputs = self.run_outputs(m, seed);
        let dir = self.paths.run_dir(m, seed);
        let target = self.config.family.target.clone();
        let predictor = self.paths.predictor();
        let bc_path = self.paths.bc_policy();
        let exp = self.config.experiment.clone();
        let maze = self.maze.clone();
        self.cached(format!("agent/{m}/seed-{seed}"), &outputs, &key, |p| {
            let decoder = SkillModel::load(&reference)?;
            let prior_models: Vec<SkillModel> = priors.iter().map(|x| SkillModel::load(x)).collect::<Result<_>>()?;
            let omega = if use_predictor { Some(PriorPredictor::load(&predictor)?) } else { None };
            let init_policy = if m == Method::BcSac {
                Some(Bundle::load(&bc_path)?.take_net("policy")?)
            } else {
                None
            };
            let options = RunOptions {
                checkpoint_dir: (exp.checkpoint_every > 0).then(|| dir.join("checkpoints")),
                checkpoint_every: exp.checkpoint_every,
                debug_weights: exp.debug_weights.then(|| dir.join("weights.csv")),
                init_policy,
            };
            if let Some(c) = &options.checkpoint_dir {
                std::fs::create_dir_all(c).map_err(|e| Error::io(c, e))?;
            }
            let mdp = p.member_mdp(&target)?;
            let set = PriorSet {
                decoder: &decoder,
                priors: &prior_models,
                omega: omega.as_ref(),
            };
            let r = train_mpr_rl(&mdp, set, m.weighting(), &agent, &options)?;
            write_run(&dir, &r, &maze, seed)
        })?;
        let eval = read_summary(&self.paths.run_dir(m, seed).join("summary.csv"))?;
        self.artifacts.evaluations.insert((m, seed), eval);
        Ok(())
    }

    // ---- stage 5 -----------------------------------------------------

    /// Per-method aggregate curves and plots plus the combined
    /// evaluation table.
    pub fn stage_eval(&mut self, methods: &[Method], seeds: &[u64]) -> Result<()> {
        let run = |p: &mut Self| -> Result<()> {
            let bin = p.config.experiment.curve_bin;
            let budget = p.config.agent.budget_steps;
            let mut series = Vec::new();
            for &m in methods {
                let runs: Vec<Vec<MetricsRow>> = seeds
                    .iter()
                    .map(|&s| read_metrics(&p.paths.run_dir(m, s).join("metrics.csv")))
                    .collect::<Result<_>>()?;
                let agg = p.paths.method_dir(m).join("aggregate.csv");
                write_aggregate(&agg, &runs, bin, budget)?;
                series.push((m.name().to_string(), agg));
            }
            let mut rows = Vec::new();
            for &m in methods {
                let evals: Vec<f64> = seeds
                    .iter()
                    .map(|&s| read_summary(&p.paths.run_dir(m, s).join("summary.csv")).map(|e| e.success_rate))
                    .collect::<Result<_>>()?;
                for (&s, e) in seeds.iter().zip(&evals) {
                    let full = read_summary(&p.paths.run_dir(m, s).join("summary.csv"))?;
                    p.artifacts.evaluations.insert((m, s), full);
                    rows.push(vec![m.name().to_string(), s.to_string(), format!("{e:?}"), format!("{:?}", full.mean_return)]);
                }
            }
            write_csv(&p.paths.eval_csv(), &["method", "seed", "success", "return"], &rows)?;
            let curves: Vec<(String, Curve)> = series
                .iter()
                .map(|(n, path)| Ok((n.clone(), read_curve(path, "success")?)))
                .collect::<Result<_>>()?;
            let plot = p.paths.root.join("success.svg");
            emit_plot(&curves, &PlotSpec::success(), &plot)?;
            p.artifacts.files.extend([p.paths.eval_csv(), plot]);
            Ok(())
        };
        run(self).map_err(|e| Error::stage("eval", e))
    }

    /// All five stages for `methods` and the configured seeds.
    pub fn run(&mut self, methods: &[Method]) -> Result<()> {
        let seeds = self.config.experiment.seeds.clone();
        self.stage_demos(methods)?;
        self.stage_skills(methods)?;
        self.stage_predictor(methods)?;
        self.stage_agent(methods, &seeds)?;
        self.stage_eval(methods, &seeds)
    }
}

/// Convenience wrapper: build a [`Pipeline`] and run every stage.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, methods: &[Method], quiet: bool) -> Result<RunArtifacts> {
    let mut p = Pipeline::new(config.clone(), out)?;
    p.quiet = quiet;
    p.run(methods)?;
    Ok(p.into_artifacts())
}

fn write_run(dir: &Path, r: &TrainResult, maze: &MazeLayout, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    r.write_metrics_csv(&dir.join("metrics.csv"))?;
    r.nets.save(r.mode, &dir.join("agent.ckpt"))?;
    let first_alpha = r.updates.first().map_or(f64::NAN, |u| u.alpha);
    let last_alpha = r.updates.last().map_or(f64::NAN, |u| u.alpha);
    let (early, late) = alpha_trend(r);
    write_csv(
        &dir.join("summary.csv"),
        &[
            "seed",
            "success",
            "return",
            "eval_episodes",
            "env_steps",
            "gradient_steps",
            "episodes",
            "first_alpha",
            "last_alpha",
            "alpha_first_decile",
            "alpha_last_decile",
        ],
        &[vec![
            seed.to_string(),
            format!("{:?}", r.evaluation.success_rate),
            format!("{:?}", r.evaluation.mean_return),
            r.evaluation.episodes.to_string(),
            r.env_steps.to_string(),
            r.updates.len().to_string(),
            r.metrics.len().to_string(),
            format!("{first_alpha:?}"),
            format!("{last_alpha:?}"),
            format!("{early:?}"),
            format!("{late:?}"),
        ]],
    )?;
    emit_exploration_map(&r.visited, maze, &dir.join("exploration.svg"))
}

/// Mean α over the first and the last 10% of gradient steps.
pub fn alpha_trend(r: &TrainResult) -> (f64, f64) {
    let n = r.updates.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let k = (n / 10).max(1);
    let mean = |s: &[crate::agent::UpdateStats]| s.iter().map(|u| u.alpha).sum::<f64>() / s.len() as f64;
    (mean(&r.updates[..k]), mean(&r.updates[n - k..]))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn parse_field(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<f64> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("{}: missing column {i}", path.display())))?;
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display())))
}

/// Final evaluation recorded in a run's `summary.csv`.
pub fn read_summary(path: &Path) -> Result<Evaluation> {
    let mut r = csv_reader(path)?;
    let rec = r
        .records()
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty summary", path.display())))?
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(Evaluation {
        success_rate: parse_field(&rec, 1, path)?,
        mean_return: parse_field(&rec, 2, path)?,
        episodes: parse_field(&rec, 3, path)? as usize,
    })
}

/// Parse a metrics log written by the agent.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(crate::agent::METRICS_HEADER) {
        return Err(Error::Format(format!("{}: unexpected metrics header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let f = |i| parse_field(&rec, i, path);
        out.push(MetricsRow {
            episode: f(0)? as usize,
            env_steps: f(1)? as usize,
            ret: f(2)?,
            success: f(3)? == 1.0,
            alpha: f(4)?,
            mean_weighted_kl: f(5)?,
            weight_entropy: f(6)?,
            critic_loss: f(7)?,
            actor_loss: f(8)?,
        });
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-seed episode statistics binned on env steps, then mean and
/// population std across seeds. Bins a seed has no episode in carry that
/// seed's previous value forward.
pub fn aggregate_runs(runs: &[Vec<MetricsRow>], bin: usize, budget: usize) -> Vec<[f64; 7]> {
    let edges: Vec<usize> = (1..=budget.div_ceil(bin)).map(|i| (i * bin).min(budget)).collect();
    let per_seed: Vec<Vec<[f64; 3]>> = runs
        .iter()
        .map(|rows| {
            let mut prev = [0.0, 0.0, f64::NAN];
            let mut lo = 0;
            edges
                .iter()
                .map(|&hi| {
                    let in_bin: Vec<&MetricsRow> =
                        rows.iter().filter(|r| r.env_steps > lo && r.env_steps <= hi.max(lo + 1)).collect();
                    lo = hi;
                    if !in_bin.is_empty() {
                        let n = in_bin.len() as f64;
                        prev = [
                            in_bin.iter().filter(|r| r.success).count() as f64 / n,
                            in_bin.iter().map(|r| r.ret).sum::<f64>() / n,
                            in_bin.last().unwrap().alpha,
                        ];
                    }
                    prev
                })
                .collect()
        })
        .collect();
    edges
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let col = |j: usize| -> Vec<f64> { per_seed.iter().map(|s| s[i][j]).collect() };
            let (sm, ss) = mean_std(&col(0));
            let (rm, rs) = mean_std(&col(1));
            let (am, as_) = mean_std(&col(2));
            [x as f64, sm, ss, rm, rs, am, as_]
        })
        .collect()
}

pub const AGGREGATE_HEADER: [&str; 7] = [
    "env_steps",
    "success_mean",
    "success_std",
    "return_mean",
    "return_std",
    "alpha_mean",
    "alpha_std",
];

fn write_aggregate(path: &Path, runs: &[Vec<MetricsRow>], bin: usize, budget: usize) -> Result<()> {
    let rows: Vec<Vec<String>> = aggregate_runs(runs, bin, budget)
        .iter()
        .map(|r| {
            let mut v = vec![(r[0] as usize).to_string()];
            v.extend(r[1..].iter().map(|x| if x.is_nan() { String::new() } else { format!("{x:?}") }));
            v
        })
        .collect();
    write_csv(path, &AGGREGATE_HEADER, &rows)
}

/// Axis of an ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    /// Use the first `k` source members.
    PriorCount(Vec<usize>),
    /// Demonstrations per source member.
    DatasetSize(Vec<usize>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::PriorCount(_) => "prior-count",
            AblationAxis::DatasetSize(_) => "dataset-size",
        }
    }

    pub fn values(&self) -> &[usize] {
        match self {
            AblationAxis::PriorCount(v) | AblationAxis::DatasetSize(v) => v,
        }
    }

    pub fn parse(axis: &str, values: &[usize]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("ablation needs at least one value".into()));
        }
        match axis {
            "prior-count" => Ok(AblationAxis::PriorCount(values.to_vec())),
            "dataset-size" => Ok(AblationAxis::DatasetSize(values.to_vec())),
            other => Err(Error::Config(format!(
                "unknown ablation axis {other:?}; expected prior-count or dataset-size"
            ))),
        }
    }

    /// Configuration for one axis value.
    pub fn apply(&self, base: &ExperimentConfig, value: usize) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            AblationAxis::PriorCount(_) => {
                if value == 0 || value > base.family.sources.len() {
                    return Err(Error::Config(format!(
                        "prior count {value} is infeasible with {} source members",
                        base.family.sources.len()
                    )));
                }
                c.family.sources.truncate(value);
            }
            AblationAxis::DatasetSize(_) => {
                if value == 0 {
                    return Err(Error::Config("dataset size must be positive".into()));
                }
                c.demos.per_source = value;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Outcome of an ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub axis: String,
    pub runs: Vec<(usize, RunArtifacts)>,
    pub csv: PathBuf,
}

impl AblationResult {
    /// Seed-mean final success for one axis value.
    pub fn mean_success(&self, value: usize, m: Method) -> Option<f64> {
        self.runs.iter().find(|(v, _)| *v == value).and_then(|(_, a)| a.mean_success(m))
    }
}

/// One pipeline per axis value under `out/<axis>-<value>`, all with the
/// configured seeds, then `out/ablation.csv` with one row per value and
/// seed.
pub fn run_ablation(
    config: &ExperimentConfig,
    axis: &AblationAxis,
    method: Method,
    out: &Path,
    quiet: bool,
) -> Result<AblationResult> {
    let configs: Vec<(usize, ExperimentConfig)> = axis
        .values()
        .iter()
        .map(|&v| Ok((v, axis.apply(config, v)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (v, cfg) in configs {
        let a = run_pipeline(&cfg, &out.join(format!("{}-{v}", axis.name())), &[method], quiet)?;
        for ((_, seed), e) in &a.evaluations {
            rows.push(vec![
                v.to_string(),
                seed.to_string(),
                format!("{:?}", e.success_rate),
                format!("{:?}", e.mean_return),
            ]);
        }
        runs.push((v, a));
    }
    let csv = out.join("ablation.csv");
    write_csv(&csv, &[axis.name(), "seed", "success", "return"], &rows)?;
    Ok(AblationResult {
        axis: axis.name().to_string(),
        runs,
        csv,
    })
}

/// Evaluate a saved agent checkpoint on the configured target.
pub fn evaluate_checkpoint(config: &ExperimentConfig, out: &Path, m: Method, seed: u64, episodes: usize) -> Result<Evaluation> {
    let paths = Layout::new(out);
    let (nets, _) = AgentNets::load(&paths.run_dir(m, seed).join("agent.ckpt"))?;
    let decoder = SkillModel::load(&paths.skill(&config.family.sources[0].id))?;
    let maze = config.layout()?;
    let mdp = config.member_mdp(&maze, &config.family.target)?;
    evaluate_policy(
        &nets.policy,
        &decoder,
        &mdp,
        config.agent.goal,
        episodes,
        config.agent.gamma,
        seed ^ 0x5EED,
    )
}

/// Load a behaviour-cloned policy written by the skills stage.
pub fn load_bc_policy(path: &Path) -> Result<Mlp> {
    Bundle::load(path)?.take_net("policy")
}
