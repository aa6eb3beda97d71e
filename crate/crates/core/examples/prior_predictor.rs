//! Train the transition classifier on the three default source members
//! and print its held-out confusion matrix.
//!
//! cargo run --release --example prior_predictor -- [n_traj] [max_steps]

use std::sync::Arc;
use std::time::Instant;

use mprl::demo::{generate_dataset, ExpertConfig};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use mprl::predictor::{train_predictor, PredictorConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_traj: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let max_steps: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(3000);
    let layout = Arc::new(MazeLayout::default_maze());
    let members = [(0.2, 0.1, 0.1), (1.0, 0.5, 0.1), (3.0, 0.1, 0.5)];
    let mut datasets = Vec::new();
    for (i, (z, mx, my)) in members.into_iter().enumerate() {
        let mdp = MdpSpec::new(
            format!("src-{i}"),
            layout.clone(),
            DynamicsParams::new(z, mx, my)?,
            PhysicsConfig::default(),
        )?;
        datasets.push(generate_dataset(&mdp, n_traj, &ExpertConfig::default(), i as u64)?);
    }
    let refs: Vec<_> = datasets.iter().collect();
    let config = PredictorConfig {
        max_steps,
        ..Default::default()
    };
    let t = Instant::now();
    let (_omega, report) = train_predictor(&refs, &config)?;
    println!(
        "{} steps in {:.1}s (best at {}), {} training transitions per member",
        report.steps,
        t.elapsed().as_secs_f64(),
        report.best_step,
        report.train_per_member
    );
    println!("held-out accuracy {:.4}", report.heldout_accuracy);
    println!("confusion matrix (rows: true member, columns: argmax weight)");
    for row in report.confusion.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}", cells.join("  "));
    }
    Ok(())
}
