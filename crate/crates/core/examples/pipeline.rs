//! The whole experiment: demos, skill priors, predictor, every agent variant
//! and the evaluation plots. The built-in config only exercises the stages;
//! pass a TOML file (or an empty one for the defaults) for a real run.
//!
//! cargo run --release --example pipeline -- [out_dir] [config.toml]

use std::path::PathBuf;

use mprl::harness::{run_pipeline, ExperimentConfig, Method};

const CONFIG: &str = r#"
[demos]
per_source = 40
target = 40

[skill]
hidden = 32
max_steps = 400

[predictor]
hidden = 32
max_steps = 400

[bc]
max_steps = 200

[agent]
hidden = 32
warmup_steps = 500
budget_steps = 3000
prior_fit_steps = 200
eval_episodes = 5

[experiment]
seeds = [0]
curve_bin = 500
"#;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/pipeline-example".into()));
    let config = match std::env::args().nth(2) {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::parse(CONFIG)?,
    };
    let arts = run_pipeline(&config, &out, &Method::ALL, false)?;
    println!("built {} stages, reused {}", arts.built.len(), arts.skipped.len());
    for ((method, seed), e) in &arts.evaluations {
        println!("{:>16} seed {seed}: success {:.2}", method.name(), e.success_rate);
    }
    println!("artifacts under {}", arts.root.display());
    Ok(())
}
