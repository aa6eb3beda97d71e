//! End-to-end transfer on the default family: source demos, skill models,
//! predictor, then one agent run on the held-out target dynamics.
//! Intermediate artifacts are cached in the given directory.
//!
//! cargo run --release --example transfer -- <cache dir> [mode] [budget] [seed] [key=value..]
//!
//! Overrides: fit, hidden, delta, updates, lr_alpha, lr.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use mprl::agent::{train_mpr_rl, AgentConfig, PriorSet, RunOptions, WeightingMode};
use mprl::demo::{generate_dataset, load_dataset, save_dataset, Dataset, ExpertConfig};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use mprl::predictor::{train_predictor, PredictorConfig, PriorPredictor};
use mprl::skill::{train_skill_model, SkillConfig, SkillModel};

const SOURCES: [(f64, f64, f64); 3] = [(0.2, 0.1, 0.1), (1.0, 0.5, 0.1), (3.0, 0.1, 0.5)];

fn mdp(id: &str, p: (f64, f64, f64)) -> anyhow::Result<MdpSpec> {
    Ok(MdpSpec::new(
        id,
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(p.0, p.1, p.2)?,
        PhysicsConfig::default(),
    )?)
}

fn cached<T>(path: &Path, load: impl Fn(&Path) -> mprl::Result<T>, make: impl FnOnce() -> anyhow::Result<T>, save: impl Fn(&T, &Path) -> mprl::Result<()>) -> anyhow::Result<T> {
    if path.exists() {
        return Ok(load(path)?);
    }
    let t = Instant::now();
    let v = make()?;
    save(&v, path)?;
    println!("built {} in {:.1}s", path.display(), t.elapsed().as_secs_f64());
    Ok(v)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = Path::new(args.get(1).map(String::as_str).unwrap_or("transfer-cache")).to_path_buf();
    let mode: WeightingMode = args.get(2).map(String::as_str).unwrap_or("adaptive").parse()?;
    let budget: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(200_000);
    let seed: u64 = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(0);
    std::fs::create_dir_all(&dir)?;

    let mut datasets: Vec<Dataset> = Vec::new();
    for (i, p) in SOURCES.into_iter().enumerate() {
        let id = format!("src-{i}");
        let m = mdp(&id, p)?;
        datasets.push(cached(
            &dir.join(format!("{id}.mprdat")),
            load_dataset,
            || Ok(generate_dataset(&m, 2000, &ExpertConfig::default(), i as u64)?),
            save_dataset,
        )?);
    }
    let skill_cfg = SkillConfig::default();
    let reference = cached(
        &dir.join("skill-src-0.ckpt"),
        SkillModel::load,
        || Ok(train_skill_model(&datasets[0], &skill_cfg, None)?.0),
        SkillModel::save,
    )?;
    let mut priors = vec![reference.clone()];
    for (i, ds) in datasets.iter().enumerate().skip(1) {
        priors.push(cached(
            &dir.join(format!("skill-src-{i}.ckpt")),
            SkillModel::load,
            || Ok(train_skill_model(ds, &skill_cfg, Some(&reference))?.0),
            SkillModel::save,
        )?);
    }
    let omega = cached(
        &dir.join("predictor.ckpt"),
        PriorPredictor::load,
        || {
            let refs: Vec<&Dataset> = datasets.iter().collect();
            Ok(train_predictor(&refs, &PredictorConfig::default())?.0)
        },
        PriorPredictor::save,
    )?;

    let target = mdp("target", (2.0, 0.3, 0.3))?;
    let mut config = AgentConfig {
        budget_steps: budget,
        seed,
        ..Default::default()
    };
    for kv in args.iter().skip(5) {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("expected key=value, got {kv}"))?;
        match k {
            "fit" => config.prior_fit_steps = v.parse()?,
            "hidden" => config.hidden = v.parse()?,
            "delta" => config.target_divergence = v.parse()?,
            "updates" => config.updates_per_step = v.parse()?,
            "lr_alpha" => config.lr_alpha = v.parse()?,
            "lr" => {
                config.lr_policy = v.parse()?;
                config.lr_critic = config.lr_policy;
            }
            _ => anyhow::bail!("unknown override {k}"),
        }
    }
    let set = PriorSet {
        decoder: &reference,
        priors: &priors,
        omega: Some(&omega),
    };
    let t = Instant::now();
    let r = train_mpr_rl(&target, set, mode, &config, &RunOptions::default())?;
    println!(
        "{mode}: {} episodes, {} gradient steps in {:.1}s",
        r.metrics.len(),
        r.updates.len(),
        t.elapsed().as_secs_f64()
    );
    if let (Some(a), Some(b)) = (r.prior_fit.first(), r.prior_fit.last()) {
        println!("prior fit: weighted divergence {a:.3} -> {b:.3} over {} steps", r.prior_fit.len());
    }
    for chunk in r.metrics.chunks(r.metrics.len().div_ceil(20).max(1)) {
        let last = chunk.last().unwrap();
        let succ = chunk.iter().filter(|m| m.success).count() as f64 / chunk.len() as f64;
        println!(
            "  env {:>7}  success {:.2}  alpha {:.4}  kl {:.3}  H(w) {:.3}  critic {:.4}",
            last.env_steps, succ, last.alpha, last.mean_weighted_kl, last.weight_entropy, last.critic_loss
        );
    }
    println!(
        "final evaluation: success {:.2}, return {:.3}",
        r.evaluation.success_rate, r.evaluation.mean_return
    );
    r.write_metrics_csv(&dir.join(format!("metrics-{mode}-{seed}.csv")))?;
    Ok(())
}
