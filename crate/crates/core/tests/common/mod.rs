#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mprl::harness::ExperimentConfig;

/// A full pipeline that finishes in well under a minute: every stage and
/// every method runs, on tiny data and budgets.
pub const TINY_CONFIG: &str = r#"
[demos]
per_source = 24
target = 24

[skill]
hidden = 16
max_steps = 120
eval_every = 40

[predictor]
hidden = 16
batch_size = 64
max_steps = 120
eval_every = 40

[bc]
max_steps = 60
eval_every = 20

[agent]
hidden = 16
batch_size = 32
buffer_capacity = 5000
warmup_steps = 300
budget_steps = 900
prior_fit_steps = 20
eval_episodes = 2

[experiment]
modes = ["adaptive", "hardmax", "uniform", "spirl", "spirl-no-target", "sac", "bc-sac"]
seeds = [0]
debug_weights = true
curve_bin = 300
"#;

pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig::parse(TINY_CONFIG).unwrap()
}

/// Every regular file under `root`, relative and sorted.
pub fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
