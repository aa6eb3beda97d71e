//! Generate expert demonstrations, round-trip them through the dataset
//! file format and check that they replay exactly.
//!
//! cargo run --release --example demos -- [n_traj]

use std::sync::Arc;

use mprl::demo::{generate_dataset, load_dataset, save_dataset, ExpertConfig};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(40);
    let mdp = MdpSpec::new(
        "src-1",
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(1.0, 0.5, 0.1)?,
        PhysicsConfig::default(),
    )?;
    let ds = generate_dataset(&mdp, n, &ExpertConfig::default(), 7)?;
    let lens: Vec<usize> = ds.trajectories.iter().map(|t| t.len()).collect();
    println!(
        "{} demos, {} transitions, lengths {}..{}, per goal {:?}",
        ds.trajectories.len(),
        ds.transition_count(),
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        ds.goal_counts()
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("src-1.mprdat");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    println!(
        "{} bytes on disk, identical after reload: {}",
        std::fs::metadata(&path)?.len(),
        back == ds
    );
    println!("max replay error {:.3e}", back.replay_error()?);

    let first = &back.trajectories[0];
    let obs = first.observation(&back.mdp()?, 0);
    println!(
        "first demo: goal {}, {} steps, starts at ({:.2}, {:.2})",
        first.goal,
        first.len(),
        obs.position[0],
        obs.position[1]
    );
    Ok(())
}
