//! A family of 2D point-mass maze MDPs. Members share the layout, start,
//! goals, state and action spaces and differ only in damping and per-axis
//! linear friction.

mod layout;

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layout::{Cell, MazeLayout, DEFAULT_LAYOUT, NEIGHBOURS_NESW};

use crate::error::{Error, Result};

pub const VIEW_SIZE: usize = 32;
pub const VIEW_PIXELS: usize = VIEW_SIZE * VIEW_SIZE;
/// position (2) + velocity (2) + flattened local view.
pub const OBS_WIDTH: usize = 4 + VIEW_PIXELS;
pub const ACTION_DIM: usize = 2;

/// Distance kept between a clipped position and the wall face, as a
/// fraction of the cell size, so that the point stays in its free cell.
const FACE_MARGIN: f64 = 1e-9;

/// Damping and linear friction of one family member, all in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub damping: f64,
    pub friction_x: f64,
    pub friction_y: f64,
}

impl DynamicsParams {
    pub fn new(damping: f64, friction_x: f64, friction_y: f64) -> Result<Self> {
        let p = DynamicsParams {
            damping,
            friction_x,
            friction_y,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("damping", self.damping),
            ("friction_x", self.friction_x),
            ("friction_y", self.friction_y),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Simulation constants shared by every member of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub dt: f64,
    pub max_speed: f64,
    pub max_action: f64,
    pub goal_radius: f64,
    pub horizon: usize,
    pub pixels_per_cell: usize,
    /// Start jitter as a fraction of the cell size (uniform in ±jitter).
    pub start_jitter: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            dt: 0.1,
            max_speed: 2.0,
            max_action: 1.0,
            goal_radius: 0.4,
            horizon: 400,
            pixels_per_cell: 4,
            start_jitter: 0.25,
        }
    }
}

impl PhysicsConfig {
    fn validate(&self, cell_size: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.max_speed > 0.0 && self.max_action > 0.0 && self.goal_radius > 0.0) {
            return Err(Error::InvalidArgument("physics constants must be positive".into()));
        }
        if self.max_speed * self.dt >= cell_size {
            return Err(Error::InvalidArgument(
                "one step may not cross more than one cell (max_speed·dt < cell size)".into(),
            ));
        }
        if self.horizon == 0 || self.pixels_per_cell == 0 {
            return Err(Error::InvalidArgument("horizon and pixels_per_cell must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.start_jitter) {
            return Err(Error::InvalidArgument("start jitter must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Position and velocity of the point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub steps: usize,
    /// Index into the layout's goal list.
    pub goal: usize,
}

impl EnvState {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics {
            position: self.position,
            velocity: self.velocity,
        }
    }
}

/// Position, velocity and the 32×32 occupancy view around the agent.
/// View row `r` spans increasing `y`, column `c` increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub view: Vec<u8>,
}

impl Observation {
    /// Raw observation vector of width [`OBS_WIDTH`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_WIDTH);
        v.extend_from_slice(&self.position);
        v.extend_from_slice(&self.velocity);
        v.extend(self.view.iter().map(|&p| p as f64));
        v
    }
}

/// Fixed affine scaling from raw observations to network inputs: position
/// mapped to [-1, 1] over the maze extent, velocity divided by the speed
/// limit, view pixels unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    pub extent: [f64; 2],
    pub max_speed: f64,
}

impl FeatureScale {
    pub fn write(&self, obs: &Observation, out: &mut [f64]) {
        debug_assert_eq!(out.len(), OBS_WIDTH);
        for i in 0..2 {
            out[i] = 2.0 * obs.position[i] / self.extent[i] - 1.0;
            out[2 + i] = obs.velocity[i] / self.max_speed;
        }
        for (o, &p) in out[4..].iter_mut().zip(&obs.view) {
            *o = p as f64;
        }
    }

    pub fn features(&self, obs: &Observation) -> Vec<f64> {
        let mut out = vec![0.0; OBS_WIDTH];
        self.write(obs, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub reward: f64,
    /// Goal reached or horizon hit.
    pub done: bool,
    /// Goal reached (the only true terminal condition).
    pub reached_goal: bool,
}

/// One member of the maze family.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    pub id: String,
    pub layout: Arc<MazeLayout>,
    pub params: DynamicsParams,
    pub physics: PhysicsConfig,
}

impl MdpSpec {
    pub fn new(
        id: impl Into<String>,
        layout: Arc<MazeLayout>,
        params: DynamicsParams,
        physics: PhysicsConfig,
    ) -> Result<Self> {
        params.validate()?;
        physics.validate(layout.cell_size())?;
        Ok(MdpSpec {
            id: id.into(),
            layout,
            params,
            physics,
        })
    }

    pub fn feature_scale(&self) -> FeatureScale {
        FeatureScale {
            extent: self.layout.extent(),
            max_speed: self.physics.max_speed,
        }
    }

    fn check_goal(&self, goal: usize) -> Result<()> {
        if goal >= self.layout.goals().len() {
            return Err(Error::InvalidArgument(format!(
                "goal index {goal} out of range ({} goals)",
                self.layout.goals().len()
            )));
        }
        Ok(())
    }

    /// Agent at the start-cell centre plus uniform jitter, at rest.
    pub fn reset<R: Rng + ?Sized>(&self, goal: usize, rng: &mut R) -> Result<EnvState> {
        self.check_goal(goal)?;
        let mut position = self.layout.cell_center(self.layout.start());
        let j = self.physics.start_jitter * self.layout.cell_size();
        if j > 0.0 {
            for p in &mut position {
                *p += rng.gen_range(-j..=j);
            }
        }
        Ok(EnvState {
            position,
            velocity: [0.0; 2],
            steps: 0,
            goal,
        })
    }

    pub fn state_at(&self, kin: Kinematics, goal: usize, steps: usize) -> EnvState {
        EnvState {
            position: kin.position,
            velocity: kin.velocity,
            steps,
            goal,
        }
    }

    pub fn goal_center(&self, goal: usize) -> [f64; 2] {
        self.layout.cell_center(self.layout.goals()[goal])
    }

    pub fn clamp_action(&self, action: [f64; 2]) -> [f64; 2] {
        let a = self.physics.max_action;
        [action[0].clamp(-a, a), action[1].clamp(-a, a)]
    }

    /// Advance one semi-implicit Euler step.
    pub fn step(&self, state: &EnvState, action: [f64; 2]) -> Result<StepResult> {
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let a = self.clamp_action(action);
        let dt = self.physics.dt;
        let decay = (1.0 - self.params.damping * dt).max(0.0);
        let friction = [
            (1.0 - self.params.friction_x * dt).max(0.0),
            (1.0 - self.params.friction_y * dt).max(0.0),
        ];
        let mut v = [0.0; 2];
        for i in 0..2 {
            v[i] = (decay * state.velocity[i] + dt * a[i]) * friction[i];
        }
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > self.physics.max_speed {
            let s = self.physics.max_speed / speed;
            v[0] *= s;
            v[1] *= s;
        }
        let mut p = state.position;
        for axis in 0..2 {
            let delta = dt * v[axis];
            self.move_axis(&mut p, &mut v, axis, delta);
        }
        let goal = self.goal_center(state.goal);
        let dist = ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt();
        let reached_goal = dist <= self.physics.goal_radius;
        let steps = state.steps + 1;
        Ok(StepResult {
            state: EnvState {
                position: p,
                velocity: v,
                steps,
                goal: state.goal,
            },
            reward: if reached_goal { 1.0 } else { 0.0 },
            done: reached_goal || steps >= self.physics.horizon,
            reached_goal,
        })
    }

    fn move_axis(&self, p: &mut [f64; 2], v: &mut [f64; 2], axis: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let mut target = *p;
        target[axis] += delta;
        if self.layout.is_free_point(target) {
            *p = target;
            return;
        }
        let cs = self.layout.cell_size();
        let cell = (p[axis] / cs).floor();
        p[axis] = if delta > 0.0 {
            (cell + 1.0) * cs - FACE_MARGIN * cs
        } else {
            cell * cs + FACE_MARGIN * cs
        };
        v[axis] = 0.0;
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        self.observe_kinematics(&state.kinematics())
    }

    pub fn observe_kinematics(&self, kin: &Kinematics) -> Observation {
        Observation {
            position: kin.position,
            velocity: kin.velocity,
            view: render_local_view(&self.layout, kin.position, self.physics.pixels_per_cell),
        }
    }
}

/// Rasterise the 32×32 occupancy window centred on `position`. Each pixel
/// spans `cell_size / pixels_per_cell`; it is 1 when its centre lies in a
/// wall cell or outside the maze.
pub fn render_local_view(layout: &MazeLayout, position: [f64; 2], pixels_per_cell: usize) -> Vec<u8> {
    let pixel = layout.cell_size() / pixels_per_cell as f64;
    let half = VIEW_SIZE as f64 / 2.0 - 0.5;
    let mut view = Vec::with_capacity(VIEW_PIXELS);
    for r in 0..VIEW_SIZE {
        let y = position[1] + (r as f64 - half) * pixel;
        for c in 0..VIEW_SIZE {
            let x = position[0] + (c as f64 - half) * pixel;
            view.push(u8::from(!layout.is_free_point([x, y])));
        }
    }
    view
}

/// One [`MdpSpec`] per `(id, params)` pair, all sharing `layout`.
pub fn make_family(
    layout: Arc<MazeLayout>,
    members: &[(String, DynamicsParams)],
    physics: PhysicsConfig,
) -> Result<Vec<MdpSpec>> {
    if members.len() < 2 {
        return Err(Error::InvalidArgument("a family needs at least two members".into()));
    }
    let mut seen = HashSet::new();
    members
        .iter()
        .map(|(id, params)| {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate member id {id:?}")));
            }
            MdpSpec::new(id.clone(), layout.clone(), *params, physics)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn open_room(n: usize) -> Arc<MazeLayout> {
        let mut text = String::new();
        for y in 0..n {
            for x in 0..n {
                let wall = x == 0 || y == 0 || x == n - 1 || y == n - 1;
                text.push(if wall {
                    '#'
                } else if (x, y) == (n / 2, n / 2) {
                    'S'
                } else if (x, y) == (1, 1) {
                    'G'
                } else {
                    '.'
                });
            }
            text.push('\n');
        }
        Arc::new(MazeLayout::parse(&text, 1.0).unwrap())
    }

    fn spec(layout: Arc<MazeLayout>, d: f64, mx: f64, my: f64) -> MdpSpec {
        MdpSpec::new("m", layout, DynamicsParams::new(d, mx, my).unwrap(), PhysicsConfig::default()).unwrap()
    }

    fn no_jitter() -> PhysicsConfig {
        PhysicsConfig {
            start_jitter: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn reset_without_jitter_is_at_start_center() {
        let layout = Arc::new(MazeLayout::default_maze());
        let m = MdpSpec::new("m", layout.clone(), DynamicsParams::new(1.0, 0.1, 0.1).unwrap(), no_jitter()).unwrap();
        let s = m.reset(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.position, layout.cell_center(layout.start()));
        assert_eq!(s.velocity, [0.0, 0.0]);
    }

    #[test]
    fn reset_is_seeded_and_bounded() {
        let m = spec(Arc::new(MazeLayout::default_maze()), 1.0, 0.1, 0.1);
        let a = m.reset(1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = m.reset(1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let c = m.layout.cell_center(m.layout.start());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for _ in 0..10_000 {
            let s = m.reset(0, &mut rng).unwrap();
            for i in 0..2 {
                let off = s.position[i] - c[i];
                lo[i] = lo[i].min(off);
                hi[i] = hi[i].max(off);
            }
        }
        for i in 0..2 {
            assert!(lo[i] >= -0.25 && hi[i] <= 0.25);
            // 10⁴ uniform draws come within 1% of both edges
            assert!(lo[i] < -0.24 && hi[i] > 0.24);
        }
    }

    #[test]
    fn frictionless_step_in_open_space() {
        let m = spec(open_room(20), 0.0, 0.0, 0.0);
        let s = EnvState {
            position: [10.0, 10.0],
            velocity: [0.3, -0.2],
            steps: 0,
            goal: 0,
        };
        let r = m.step(&s, [0.5, 1.0]).unwrap();
        let v = [0.3 + 0.1 * 0.5, -0.2 + 0.1 * 1.0];
        assert_eq!(r.state.velocity, v);
        assert_eq!(r.state.position, [10.0 + 0.1 * v[0], 10.0 + 0.1 * v[1]]);
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn zero_action_at_rest_only_counts_steps() {
        let m = spec(open_room(20), 2.0, 0.3, 0.3);
        let s = EnvState {
            position: [7.3, 8.1],
            velocity: [0.0; 2],
            steps: 3,
            goal: 0,
        };
        let r = m.step(&s, [0.0, 0.0]).unwrap();
        assert_eq!(r.state.position, s.position);
        assert_eq!(r.state.velocity, s.velocity);
        assert_eq!(r.state.steps, 4);
    }

    #[test]
    fn full_damping_forgets_velocity() {
        let m = spec(open_room(20), 10.0, 0.0, 0.0);
        let s = EnvState {
            position: [10.0, 10.0],
            velocity: [1.5, -1.0],
            steps: 0,
            goal: 0,
        };
        let r = m.step(&s, [0.4, -0.7]).unwrap();
        assert_eq!(r.state.velocity, [0.1 * 0.4, 0.1 * -0.7]);
    }

    #[test]
    fn non_finite_action_is_rejected() {
        let m = spec(open_room(8), 1.0, 0.1, 0.1);
        let s = m.reset(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.step(&s, [f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn wall_collision_clips_and_zeroes_velocity() {
        let m = spec(open_room(8), 0.0, 0.0, 0.0);
        let s = EnvState {
            position: [1.05, 3.5],
            velocity: [-1.5, 0.5],
            steps: 0,
            goal: 0,
        };
        let r = m.step(&s, [-1.0, 0.0]).unwrap();
        assert_eq!(r.state.velocity[0], 0.0);
        assert!(r.state.position[0] >= 1.0 && r.state.position[0] < 1.0 + 1e-6);
        assert_eq!(r.state.velocity[1], 0.5);
    }

    #[test]
    fn goal_reward_ends_episode() {
        let m = spec(open_room(8), 0.0, 0.0, 0.0);
        let s = EnvState {
            position: [1.5 + 0.45, 1.5],
            velocity: [-0.5, 0.0],
            steps: 0,
            goal: 0,
        };
        let r = m.step(&s, [0.0, 0.0]).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done && r.reached_goal);
    }

    #[test]
    fn horizon_terminates() {
        let m = spec(open_room(8), 0.0, 0.0, 0.0);
        let mut s = m.reset(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        s.steps = 399;
        let r = m.step(&s, [0.0, 0.0]).unwrap();
        assert!(r.done && !r.reached_goal);
    }

    #[test]
    fn open_room_view_is_empty() {
        let layout = open_room(20);
        let view = render_local_view(&layout, [10.0, 10.0], 4);
        assert!(view.iter().all(|&p| p == 0));
    }

    #[test]
    fn view_next_to_boundary_is_half_wall() {
        let layout = open_room(20);
        let view = render_local_view(&layout, [1.0 + 1e-9, 10.0], 4);
        for r in 0..VIEW_SIZE {
            for c in 0..VIEW_SIZE {
                assert_eq!(view[r * VIEW_SIZE + c], u8::from(c < VIEW_SIZE / 2), "pixel {r},{c}");
            }
        }
    }

    #[test]
    fn view_matches_brute_force_rasteriser() {
        let layout = MazeLayout::default_maze();
        let positions = [[5.5, 5.5], [1.3, 9.8], [10.9, 1.05], [3.5, 7.2]];
        for pos in positions {
            let view = render_local_view(&layout, pos, 4);
            for r in 0..VIEW_SIZE {
                for c in 0..VIEW_SIZE {
                    let px = pos[0] + (c as f64 - 15.5) / 4.0;
                    let py = pos[1] + (r as f64 - 15.5) / 4.0;
                    // test the pixel centre against every cell rectangle
                    let mut inside_free = false;
                    for cy in 0..layout.height() {
                        for cx in 0..layout.width() {
                            let in_cell = px >= cx as f64
                                && px < cx as f64 + 1.0
                                && py >= cy as f64
                                && py < cy as f64 + 1.0;
                            if in_cell && !layout.is_wall((cx, cy)) {
                                inside_free = true;
                            }
                        }
                    }
                    assert_eq!(view[r * VIEW_SIZE + c], u8::from(!inside_free));
                }
            }
        }
    }

    #[test]
    fn family_construction() {
        let layout = Arc::new(MazeLayout::default_maze());
        let p = DynamicsParams::new(1.0, 0.1, 0.1).unwrap();
        let members: Vec<_> = (0..3).map(|i| (format!("m{i}"), p)).collect();
        let fam = make_family(layout.clone(), &members, PhysicsConfig::default()).unwrap();
        assert_eq!(fam.len(), 3);
        assert!(fam.iter().all(|m| m.layout.content_hash() == layout.content_hash()));
        let dup = vec![("a".to_string(), p), ("a".to_string(), p)];
        assert!(make_family(layout.clone(), &dup, PhysicsConfig::default()).is_err());
        assert!(make_family(layout, &members[..1], PhysicsConfig::default()).is_err());
    }

    #[test]
    fn identical_members_replay_identically() {
        let layout = Arc::new(MazeLayout::default_maze());
        let p = DynamicsParams::new(1.0, 0.5, 0.1).unwrap();
        let fam = make_family(layout, &[("a".into(), p), ("b".into(), p)], PhysicsConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actions: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let s0 = fam[0].reset(0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (mut a, mut b) = (s0, s0);
        for act in &actions {
            a = fam[0].step(&a, *act).unwrap().state;
            b = fam[1].step(&b, *act).unwrap().state;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn damping_is_inert_from_rest_then_diverges() {
        let layout = Arc::new(MazeLayout::default_maze());
        let fam = make_family(
            layout,
            &[
                ("a".into(), DynamicsParams::new(0.2, 0.1, 0.1).unwrap()),
                ("b".into(), DynamicsParams::new(3.0, 0.1, 0.1).unwrap()),
            ],
            no_jitter(),
        )
        .unwrap();
        let s0 = fam[0].reset(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a1 = fam[0].step(&s0, [0.6, -0.4]).unwrap().state;
        let b1 = fam[1].step(&s0, [0.6, -0.4]).unwrap().state;
        assert_eq!(a1, b1);
        let a2 = fam[0].step(&a1, [0.6, -0.4]).unwrap().state;
        let b2 = fam[1].step(&b1, [0.6, -0.4]).unwrap().state;
        assert_ne!(a2.velocity, b2.velocity);
        // v2 = ((1 - ζ dt) v1 + dt a)(1 - μ dt)
        let expect = |z: f64| ((1.0 - z * 0.1) * a1.velocity[0] + 0.06) * 0.99;
        assert!((a2.velocity[0] - expect(0.2)).abs() < 1e-15);
        assert!((b2.velocity[0] - expect(3.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn never_inside_a_wall(
            seed in 0u64..1000,
            actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..300),
            damping in 0.0f64..3.0,
        ) {
            let m = spec(Arc::new(MazeLayout::default_maze()), damping, 0.1, 0.3);
            let mut s = m.reset(0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (ax, ay) in actions {
                let r = m.step(&s, [ax, ay]).unwrap();
                prop_assert!(m.layout.is_free_point(r.state.position));
                let speed = r.state.velocity[0].hypot(r.state.velocity[1]);
                prop_assert!(speed <= m.physics.max_speed + 1e-12);
                prop_assert!(r.reward == 0.0 || r.reward == 1.0);
                if r.reward == 1.0 { prop_assert!(r.done); }
                s = r.state;
                s.steps = 0;
            }
        }

        #[test]
        fn speed_never_grows_without_action(
            vx in -2.0f64..2.0, vy in -2.0f64..2.0,
            damping in 0.0f64..4.0, fx in 0.0f64..2.0, fy in 0.0f64..2.0,
        ) {
            prop_assume!(damping > 0.0 || fx > 0.0 || fy > 0.0);
            let m = spec(open_room(40), damping, fx, fy);
            let mut s = EnvState { position: [20.0, 20.0], velocity: [vx, vy], steps: 0, goal: 0 };
            for _ in 0..20 {
                let next = m.step(&s, [0.0, 0.0]).unwrap().state;
                prop_assert!(next.velocity[0].hypot(next.velocity[1]) <= s.velocity[0].hypot(s.velocity[1]));
                s = next;
            }
        }
    }
}
