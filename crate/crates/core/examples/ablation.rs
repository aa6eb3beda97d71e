//! Sweep the number of source priors. The built-in config is a quick smoke
//! run; pass a TOML file for meaningful success rates.
//!
//! cargo run --release --example ablation -- [out_dir] [config.toml]

use std::path::PathBuf;

use mprl::harness::{run_ablation, AblationAxis, ExperimentConfig, Method};

const CONFIG: &str = r#"
[demos]
per_source = 40

[skill]
hidden = 32
max_steps = 400

[predictor]
hidden = 32
max_steps = 400

[agent]
hidden = 32
warmup_steps = 500
budget_steps = 2000
prior_fit_steps = 200
eval_episodes = 5

[experiment]
seeds = [0]
curve_bin = 500
"#;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/ablation-example".into()));
    let config = match std::env::args().nth(2) {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::parse(CONFIG)?,
    };
    let axis = AblationAxis::parse("prior-count", &[1, 2, 3])?;
    let result = run_ablation(&config, &axis, Method::Adaptive, &out, true)?;
    for &v in axis.values() {
        if let Some(s) = result.mean_success(v, Method::Adaptive) {
            println!("{} = {v}: success {s:.2}", result.axis);
        }
    }
    println!("table at {}", result.csv.display());
    Ok(())
}
