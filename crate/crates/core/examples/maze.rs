//! Step the point-mass maze under each family member and print the local view.
//!
//! cargo run --release --example maze

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig, VIEW_SIZE};

fn main() -> anyhow::Result<()> {
    let layout = Arc::new(MazeLayout::default_maze());
    println!("{}", layout.to_text());

    let members = [("src-0", 0.2, 0.1, 0.1), ("src-1", 1.0, 0.5, 0.1), ("src-2", 3.0, 0.1, 0.5), ("target", 2.0, 0.3, 0.3)];
    for (id, zeta, fx, fy) in members {
        let mdp = MdpSpec::new(id, layout.clone(), DynamicsParams::new(zeta, fx, fy)?, PhysicsConfig::default())?;
        let mut state = mdp.reset(3, &mut ChaCha8Rng::seed_from_u64(0))?;
        let start = state.position;
        // same open-loop push for every member: 20 steps right, 20 down
        for t in 0..40 {
            let a = if t < 20 { [1.0, 0.0] } else { [0.0, 1.0] };
            let r = mdp.step(&state, a)?;
            state = r.state;
            if r.done {
                break;
            }
        }
        let dist = ((state.position[0] - start[0]).powi(2) + (state.position[1] - start[1]).powi(2)).sqrt();
        println!(
            "{id:>7}: moved {dist:.2} to ({:.2}, {:.2}), speed ({:.2}, {:.2})",
            state.position[0], state.position[1], state.velocity[0], state.velocity[1]
        );
    }

    let mdp = MdpSpec::new("view", layout.clone(), DynamicsParams::new(0.2, 0.1, 0.1)?, PhysicsConfig::default())?;
    let state = mdp.reset(0, &mut ChaCha8Rng::seed_from_u64(1))?;
    let obs = mdp.observe(&state);
    println!("\nlocal view at ({:.2}, {:.2}):", obs.position[0], obs.position[1]);
    for row in obs.view.chunks(VIEW_SIZE) {
        let line: String = row.iter().map(|&p| if p > 0 { '#' } else { '.' }).collect();
        println!("{line}");
    }
    Ok(())
}
