//! Draw a mean ± std learning-curve plot and an exploration heat map.
//!
//! cargo run --release --example plot -- [out_dir]

use std::path::PathBuf;
use std::sync::Arc;

use mprl::demo::{generate_dataset, ExpertConfig};
use mprl::harness::{emit_exploration_map, emit_plot, Curve, PlotSpec};
use mprl::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/plot-example".into()));
    std::fs::create_dir_all(&out)?;

    let x: Vec<f64> = (1..=20).map(|i| i as f64 * 10_000.0).collect();
    let logistic = |rate: f64, top: f64| -> Curve {
        let mean: Vec<f64> = x.iter().map(|v| top / (1.0 + (-(v / 1e4 - 8.0) * rate).exp())).collect();
        let std = mean.iter().map(|m| 0.5 * m * (1.0 - m)).collect();
        Curve { x: x.clone(), mean, std }
    };
    let curves = vec![
        ("fast".to_string(), logistic(0.9, 0.95)),
        ("slow".to_string(), logistic(0.4, 0.6)),
    ];
    let path = out.join("curves.svg");
    emit_plot(&curves, &PlotSpec::success(), &path)?;
    println!("wrote {}", path.display());

    let maze = Arc::new(MazeLayout::default_maze());
    let mdp = MdpSpec::new("src-0", maze.clone(), DynamicsParams::new(0.2, 0.1, 0.1)?, PhysicsConfig::default())?;
    let ds = generate_dataset(&mdp, 40, &ExpertConfig::default(), 0)?;
    let visited: Vec<[f64; 2]> = ds
        .trajectories
        .iter()
        .flat_map(|t| t.states.iter().map(|k| k.position))
        .collect();
    let path = out.join("exploration.svg");
    emit_exploration_map(&visited, &maze, &path)?;
    println!("wrote {} from {} positions", path.display(), visited.len());
    Ok(())
}
