use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{Cell, EnvState, MazeLayout, MdpSpec, NEIGHBOURS_NESW};

use super::Trajectory;

/// Scripted expert: BFS waypoints tracked by a PD controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub kp: f64,
    pub kd: f64,
    /// Std of the zero-mean Gaussian noise added to every command.
    pub noise_std: f64,
    /// Switch to the next waypoint inside this radius (m).
    pub waypoint_tolerance: f64,
    pub max_retries: usize,
    /// Shortest stored trajectory, normally the skill horizon.
    pub min_length: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            kp: 2.0,
            kd: 1.0,
            noise_std: 0.1,
            waypoint_tolerance: 0.3,
            max_retries: 20,
            min_length: 10,
        }
    }
}

/// Shortest 4-connected path from `start` to `goal`, both inclusive.
/// Neighbours are expanded north, east, south, west.
pub fn plan_path(layout: &MazeLayout, start: Cell, goal: Cell) -> Result<Vec<Cell>> {
    for c in [start, goal] {
        if layout.is_wall(c) {
            return Err(Error::InvalidArgument(format!("cell {c:?} is not free")));
        }
    }
    let w = layout.width();
    let idx = |(x, y): Cell| y * w + x;
    let mut parent: Vec<Option<Cell>> = vec![None; w * layout.height()];
    let mut seen = vec![false; w * layout.height()];
    seen[idx(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if c == goal {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(p) = parent[idx(cur)] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(path);
        }
        for (dx, dy) in NEIGHBOURS_NESW {
            let nx = c.0 as i64 + dx as i64;
            let ny = c.1 as i64 + dy as i64;
            if layout.is_wall_signed(nx, ny) {
                continue;
            }
            let n = (nx as usize, ny as usize);
            if !seen[idx(n)] {
                seen[idx(n)] = true;
                parent[idx(n)] = Some(c);
                queue.push_back(n);
            }
        }
    }
    Err(Error::Unreachable(goal))
}

/// Drive the PD controller along `waypoints` from `start` until the goal
/// reward or the horizon. The returned trajectory's `success` flag tells
/// which happened.
pub fn follow_waypoints<R: Rng + ?Sized>(
    mdp: &MdpSpec,
    start: EnvState,
    waypoints: &[Cell],
    config: &ExpertConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    if waypoints.is_empty() {
        return Err(Error::InvalidArgument("no waypoints".into()));
    }
    let targets: Vec<[f64; 2]> = waypoints.iter().map(|&c| mdp.layout.cell_center(c)).collect();
    // the agent starts inside the first cell, so aim for the next one
    let mut active = usize::from(targets.len() > 1);
    let mut state = start;
    let mut states = vec![state.kinematics()];
    let mut actions = Vec::new();
    let mut success = false;
    loop {
        let target = targets[active];
        let dx = [target[0] - state.position[0], target[1] - state.position[1]];
        if active + 1 < targets.len() && dx[0].hypot(dx[1]) <= config.waypoint_tolerance {
            active += 1;
            continue;
        }
        let mut action = [0.0; 2];
        for i in 0..2 {
            let noise: f64 = rng.sample(StandardNormal);
            action[i] = config.kp * dx[i] - config.kd * state.velocity[i] + config.noise_std * noise;
        }
        let action = mdp.clamp_action(action);
        let step = mdp.step(&state, action)?;
        actions.push(action);
        states.push(step.state.kinematics());
        state = step.state;
        if step.reached_goal {
            success = true;
        }
        if step.done {
            break;
        }
    }
    Ok(Trajectory {
        states,
        actions,
        goal: start.goal,
        success,
    })
}

/// One successful demonstration towards `goal`, retrying with fresh noise
/// (and a fresh start jitter) up to `max_retries` times.
pub fn demonstrate<R: Rng + ?Sized>(
    mdp: &MdpSpec,
    goal: usize,
    config: &ExpertConfig,
    rng: &mut R,
) -> Result<(Trajectory, usize)> {
    let path = plan_path(&mdp.layout, mdp.layout.start(), mdp.layout.goals()[goal])?;
    for attempt in 0..=config.max_retries {
        let start = mdp.reset(goal, rng)?;
        let traj = follow_waypoints(mdp, start, &path, config, rng)?;
        if traj.success && traj.len() >= config.min_length {
            return Ok((traj, attempt + 1));
        }
    }
    Err(Error::Dataset(format!(
        "expert failed to reach goal {goal} in {} attempts on {}",
        config.max_retries + 1,
        mdp.id
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{DynamicsParams, PhysicsConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    use std::sync::Arc;

    fn dijkstra(layout: &MazeLayout, from: Cell, to: Cell) -> Option<usize> {
        let w = layout.width();
        let mut dist = vec![usize::MAX; w * layout.height()];
        let mut heap = BinaryHeap::new();
        dist[from.1 * w + from.0] = 0;
        heap.push(Reverse((0usize, from)));
        while let Some(Reverse((d, c))) = heap.pop() {
            if c == to {
                return Some(d);
            }
            if d > dist[c.1 * w + c.0] {
                continue;
            }
            for n in layout.free_neighbours(c) {
                let nd = d + 1;
                if nd < dist[n.1 * w + n.0] {
                    dist[n.1 * w + n.0] = nd;
                    heap.push(Reverse((nd, n)));
                }
            }
        }
        None
    }

    fn corridor(len: usize) -> MazeLayout {
        let mut text = "#".repeat(len + 3) + "\n#S";
        text += &".".repeat(len - 1);
        text += "G#\n";
        text += &"#".repeat(len + 3);
        MazeLayout::parse(&text, 1.0).unwrap()
    }

    #[test]
    fn trivial_and_straight_paths() {
        let l = MazeLayout::default_maze();
        assert_eq!(plan_path(&l, (5, 5), (5, 5)).unwrap(), vec![(5, 5)]);
        let c = corridor(6);
        let p = plan_path(&c, (1, 1), (7, 1)).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.windows(2).all(|w| w[1].0 == w[0].0 + 1));
        assert!(plan_path(&l, (0, 0), (5, 5)).is_err());
    }

    #[test]
    fn tie_break_prefers_north_then_east() {
        let text = "#####\n#..G#\n#S..#\n#####\n";
        let l = MazeLayout::parse(text, 1.0).unwrap();
        // both (1,1) and (2,2) are valid second cells; north wins
        assert_eq!(plan_path(&l, (1, 2), (3, 1)).unwrap(), vec![(1, 2), (1, 1), (2, 1), (3, 1)]);
    }

    proptest! {
        #[test]
        fn path_length_matches_dijkstra(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (10usize, 9usize);
            let mut text = String::new();
            for y in 0..h {
                for x in 0..w {
                    let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
                    text.push(if border {
                        '#'
                    } else if (x, y) == (1, 1) {
                        'S'
                    } else if (x, y) == (w - 2, h - 2) {
                        'G'
                    } else if rng.gen_bool(0.3) {
                        '#'
                    } else {
                        '.'
                    });
                }
                text.push('\n');
            }
            let layout = match MazeLayout::parse(&text, 1.0) {
                Ok(l) => l,
                Err(_) => return Ok(()),
            };
            for _ in 0..5 {
                let a = (rng.gen_range(1..w - 1), rng.gen_range(1..h - 1));
                let b = (rng.gen_range(1..w - 1), rng.gen_range(1..h - 1));
                if layout.is_wall(a) || layout.is_wall(b) { continue; }
                match (plan_path(&layout, a, b), dijkstra(&layout, a, b)) {
                    (Ok(p), Some(d)) => {
                        prop_assert_eq!(p.len(), d + 1);
                        prop_assert!(p.windows(2).all(|s| s[0].0.abs_diff(s[1].0) + s[0].1.abs_diff(s[1].1) == 1));
                    }
                    (Err(_), None) => {}
                    (p, d) => prop_assert!(false, "planner {:?} vs dijkstra {:?}", p.is_ok(), d),
                }
            }
        }
    }

    fn noiseless() -> ExpertConfig {
        ExpertConfig {
            noise_std: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_corridor_approach_is_monotone() {
        let layout = Arc::new(corridor(8));
        let physics = PhysicsConfig {
            start_jitter: 0.0,
            ..Default::default()
        };
        let mdp = MdpSpec::new("c", layout.clone(), DynamicsParams::new(1.0, 0.1, 0.1).unwrap(), physics).unwrap();
        let path = plan_path(&layout, (1, 1), (9, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = mdp.reset(0, &mut rng).unwrap();
        let traj = follow_waypoints(&mdp, start, &path, &noiseless(), &mut rng).unwrap();
        assert!(traj.success);
        // one straight segment: distance to the goal centre never increases
        let goal = layout.cell_center((9, 1));
        let d: Vec<f64> = traj
            .states
            .iter()
            .map(|k| (k.position[0] - goal[0]).hypot(k.position[1] - goal[1]))
            .collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn zero_gains_never_succeed() {
        let layout = Arc::new(MazeLayout::default_maze());
        let mdp = MdpSpec::new("m", layout, DynamicsParams::new(1.0, 0.1, 0.1).unwrap(), PhysicsConfig::default()).unwrap();
        let cfg = ExpertConfig {
            kp: 0.0,
            kd: 0.0,
            max_retries: 2,
            ..Default::default()
        };
        let err = demonstrate(&mdp, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn demonstrations_are_seeded() {
        let layout = Arc::new(MazeLayout::default_maze());
        let mdp = MdpSpec::new("m", layout, DynamicsParams::new(3.0, 0.1, 0.5).unwrap(), PhysicsConfig::default()).unwrap();
        let a = demonstrate(&mdp, 3, &ExpertConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = demonstrate(&mdp, 3, &ExpertConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.0.success);
    }
}
