//! Generate demonstrations on one maze member and fit a skill model.
//!
//! cargo run --release --example skill_model -- [n_traj] [max_steps]

use std::sync::Arc;
use std::time::Instant;

use mprl::demo::{generate_dataset, ExpertConfig};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use mprl::skill::{train_skill_model, SkillConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_traj: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let max_steps: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(3000);

    let mdp = MdpSpec::new(
        "src-0",
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(0.2, 0.1, 0.1)?,
        PhysicsConfig::default(),
    )?;
    let t = Instant::now();
    let ds = generate_dataset(&mdp, n_traj, &ExpertConfig::default(), 0)?;
    println!(
        "{} demos, {} transitions in {:.1}s",
        ds.trajectories.len(),
        ds.transition_count(),
        t.elapsed().as_secs_f64()
    );

    let config = SkillConfig {
        max_steps,
        ..Default::default()
    };
    let t = Instant::now();
    let (_model, report) = train_skill_model(&ds, &config, None)?;
    println!(
        "{} steps in {:.1}s (best at {})",
        report.steps,
        t.elapsed().as_secs_f64(),
        report.best_step
    );
    println!(
        "held-out reconstruction MSE {:.5} vs mean-action baseline {:.5}",
        report.heldout_mse, report.baseline_mse
    );
    println!("held-out posterior KL {:.3} nats", report.heldout_posterior_kl);
    Ok(())
}
