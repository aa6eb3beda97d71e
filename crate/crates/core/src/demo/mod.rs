//! Scripted demonstrations for each family member and the `MPRDAT1`
//! dataset file format.

mod expert;
mod io;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use expert::{demonstrate, follow_waypoints, plan_path, ExpertConfig};
pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use crate::error::{Error, Result};
use crate::maze::{DynamicsParams, Kinematics, MazeLayout, MdpSpec, Observation, PhysicsConfig};

/// A recorded episode. Observations are stored as kinematic states; the
/// local view is re-rendered from the layout on demand, so `states[t]`
/// together with the dataset's layout determines observation `t` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `actions.len() + 1` states; the last one is the terminal state.
    pub states: Vec<Kinematics>,
    pub actions: Vec<[f64; 2]>,
    pub goal: usize,
    pub success: bool,
}

impl Trajectory {
    /// Number of (observation, action) pairs.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, mdp: &MdpSpec, t: usize) -> Observation {
        mdp.observe_kinematics(&self.states[t])
    }
}

/// Demonstrations collected on one family member.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mdp_id: String,
    pub params: DynamicsParams,
    pub physics: PhysicsConfig,
    pub layout: Arc<MazeLayout>,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn mdp(&self) -> Result<MdpSpec> {
        MdpSpec::new(self.mdp_id.clone(), self.layout.clone(), self.params, self.physics)
    }

    pub fn goal_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.layout.goals().len()];
        for t in &self.trajectories {
            counts[t.goal] += 1;
        }
        counts
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Concatenate datasets that share a layout and physics. The result
    /// carries the first member's dynamics, so it is only meant for
    /// training on observations and actions, not for open-loop replay.
    pub fn pooled(id: &str, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dataset("nothing to pool".into()))?;
        let mut trajectories = Vec::new();
        for p in parts {
            if p.layout != first.layout || p.physics != first.physics {
                return Err(Error::Dataset(format!(
                    "cannot pool {} with {}: layouts or physics differ",
                    p.mdp_id, first.mdp_id
                )));
            }
            trajectories.extend(p.trajectories.iter().cloned());
        }
        let mut metadata = BTreeMap::new();
        let ids: Vec<&str> = parts.iter().map(|p| p.mdp_id.as_str()).collect();
        metadata.insert("pooled_from".into(), ids.join(","));
        let ds = Dataset {
            mdp_id: id.to_string(),
            params: first.params,
            physics: first.physics,
            layout: first.layout.clone(),
            seed: first.seed,
            metadata,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// First `n` trajectories, as a new dataset with the same provenance.
    pub fn truncated(&self, n: usize) -> Dataset {
        let mut d = self.clone();
        d.trajectories.truncate(n);
        d.metadata.insert("truncated_to".into(), n.to_string());
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Dataset("non-empty invariant violated: no trajectories".into()));
        }
        let goals = self.layout.goals().len();
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Dataset(format!(
                    "non-empty invariant violated: trajectory {i} has no steps"
                )));
            }
            if t.states.len() != t.actions.len() + 1 {
                return Err(Error::Dataset(format!("trajectory {i}: state/action count mismatch")));
            }
            if t.goal >= goals {
                return Err(Error::Dataset(format!("trajectory {i}: goal {} out of range", t.goal)));
            }
            if !t.success {
                return Err(Error::Dataset(format!("trajectory {i} is not a success")));
            }
            let a = self.physics.max_action;
            if t.actions.iter().flatten().any(|v| !v.is_finite() || v.abs() > a) {
                return Err(Error::Dataset(format!("trajectory {i}: action out of range")));
            }
        }
        Ok(())
    }

    /// Replay every trajectory open loop and return the largest deviation
    /// from the recorded states.
    pub fn replay_error(&self) -> Result<f64> {
        let mdp = self.mdp()?;
        let mut worst: f64 = 0.0;
        for t in &self.trajectories {
            let mut state = mdp.state_at(t.states[0], t.goal, 0);
            for (k, a) in t.actions.iter().enumerate() {
                state = mdp.step(&state, *a)?.state;
                let rec = t.states[k + 1];
                for i in 0..2 {
                    worst = worst
                        .max((state.position[i] - rec.position[i]).abs())
                        .max((state.velocity[i] - rec.velocity[i]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Goals are cycled `0, 1, …` rather than sampled. Aborts when fewer than
/// half of the last `SUCCESS_WINDOW` expert attempts succeed.
pub fn generate_dataset(
    mdp: &MdpSpec,
    n_traj: usize,
    config: &ExpertConfig,
    seed: u64,
) -> Result<Dataset> {
    const SUCCESS_WINDOW: usize = 50;
    const MIN_ATTEMPTS: usize = 20;
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_goals = mdp.layout.goals().len();
    let paths: Vec<_> = mdp
        .layout
        .goals()
        .iter()
        .map(|&g| plan_path(&mdp.layout, mdp.layout.start(), g))
        .collect::<Result<_>>()?;
    let mut window: VecDeque<bool> = VecDeque::with_capacity(SUCCESS_WINDOW);
    let mut attempts = 0usize;
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let goal = i % n_goals;
        let mut found = None;
        for _ in 0..=config.max_retries {
            let start = mdp.reset(goal, &mut rng)?;
            let traj = follow_waypoints(mdp, start, &paths[goal], config, &mut rng)?;
            let ok = traj.success && traj.len() >= config.min_length;
            attempts += 1;
            if window.len() == SUCCESS_WINDOW {
                window.pop_front();
            }
            window.push_back(ok);
            let rate = window.iter().filter(|&&s| s).count() as f64 / window.len() as f64;
            if window.len() >= MIN_ATTEMPTS && rate < 0.5 {
                return Err(Error::Dataset(format!(
                    "expert success rate {rate:.2} over the last {} attempts on {} \
                     (goal {goal}, {} of {n_traj} trajectories collected, {attempts} attempts)",
                    window.len(),
                    mdp.id,
                    trajectories.len()
                )));
            }
            if ok {
                found = Some(traj);
                break;
            }
        }
        let traj = found.ok_or_else(|| {
            Error::Dataset(format!(
                "expert failed {} times in a row on goal {goal} of {}",
                config.max_retries + 1,
                mdp.id
            ))
        })?;
        trajectories.push(traj);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "bfs-pd-expert".into());
    metadata.insert("attempts".into(), attempts.to_string());
    metadata.insert("kp".into(), format!("{:?}", config.kp));
    metadata.insert("kd".into(), format!("{:?}", config.kd));
    metadata.insert("noise_std".into(), format!("{:?}", config.noise_std));
    let ds = Dataset {
        mdp_id: mdp.id.clone(),
        params: mdp.params,
        physics: mdp.physics,
        layout: mdp.layout.clone(),
        seed,
        metadata,
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mdp(id: &str, d: f64, mx: f64, my: f64) -> MdpSpec {
        MdpSpec::new(
            id,
            Arc::new(MazeLayout::default_maze()),
            DynamicsParams::new(d, mx, my).unwrap(),
            PhysicsConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_trajectory_dataset() {
        let ds = generate_dataset(&mdp("a", 1.0, 0.1, 0.1), 1, &ExpertConfig::default(), 3).unwrap();
        assert_eq!(ds.trajectories.len(), 1);
        assert!(ds.trajectories[0].success);
    }

    #[test]
    fn goals_are_cycled_evenly() {
        let ds = generate_dataset(&mdp("a", 1.0, 0.5, 0.1), 200, &ExpertConfig::default(), 1).unwrap();
        assert_eq!(ds.goal_counts(), vec![50, 50, 50, 50]);
        assert!(ds.trajectories.iter().all(|t| t.len() >= 10));
        assert!(ds.replay_error().unwrap() <= 1e-9);
    }

    #[test]
    fn members_share_goal_order_but_not_content() {
        let cfg = ExpertConfig::default();
        let a = generate_dataset(&mdp("a", 0.2, 0.1, 0.1), 12, &cfg, 9).unwrap();
        let b = generate_dataset(&mdp("b", 3.0, 0.1, 0.5), 12, &cfg, 9).unwrap();
        let ga: Vec<_> = a.trajectories.iter().map(|t| t.goal).collect();
        let gb: Vec<_> = b.trajectories.iter().map(|t| t.goal).collect();
        assert_eq!(ga, gb);
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_ne!(ta.states, tb.states);
        }
    }

    #[test]
    fn hostile_dynamics_abort_with_diagnostics() {
        let cfg = ExpertConfig {
            kp: 0.05,
            kd: 0.0,
            ..Default::default()
        };
        let err = generate_dataset(&mdp("slow", 3.0, 0.5, 0.5), 10, &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("success rate"), "{err}");
    }
}
