//! Fit a skill model on target-task demonstrations, then clone its latent
//! skill labels into a state-conditioned policy.
//!
//! cargo run --release --example behavior_cloning -- [n_traj]

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mprl::agent::{behavior_clone, AgentNets, BcConfig};
use mprl::demo::{generate_dataset, ExpertConfig};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use mprl::skill::{train_skill_model, SkillConfig};

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(120);
    let mdp = MdpSpec::new(
        "target",
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(2.0, 0.3, 0.3)?,
        PhysicsConfig::default(),
    )?;
    let ds = generate_dataset(&mdp, n, &ExpertConfig::default(), 3)?;
    let skill_cfg = SkillConfig {
        max_steps: 1500,
        ..Default::default()
    };
    let (model, report) = train_skill_model(&ds, &skill_cfg, None)?;
    println!("skill model: {} steps, best validation ELBO at {}", report.steps, report.best_step);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = AgentNets::new(model.latent_dim, 64, 0.1, &mut rng)?.policy;
    let config = BcConfig {
        max_steps: 1500,
        ..Default::default()
    };
    let (_policy, bc) = behavior_clone(&ds, &model, policy, &config)?;
    for (step, nll) in &bc.log {
        println!("step {step:>5}: validation NLL {nll:.3}");
    }
    println!("best NLL {:.3} at step {}", bc.best_validation_nll, bc.best_step);
    Ok(())
}
