//! Deterministic sparse-reward point-mass tasks in the unit square.
//!
//! * `point-reach`: move the agent within `success_radius` of the goal.
//!   State `[agent_x, agent_y, goal_x, goal_y]`.
//! * `point-pick`: touch the object (grasp happens automatically inside
//!   `grasp_radius`), then carry it to the goal.
//!   State `[agent_x, agent_y, object_x, object_y, goal_x, goal_y, holding]`.
//!
//! Reward is 1 on the step the task completes and 0 otherwise; the episode
//! ends on success or when the horizon is reached.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the action bound before a component is rejected instead of clamped.
pub const ACTION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    PointReach,
    PointPick,
}

/// Axis-aligned spawn box, `[lo[i], hi[i]]` on axis `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl SpawnBox {
    pub const fn square(lo: f64, hi: f64) -> Self {
        Self {
            lo: [lo, lo],
            hi: [hi, hi],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        [
            rng.random_range(self.lo[0]..=self.hi[0]),
            rng.random_range(self.lo[1]..=self.hi[1]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnLayout {
    pub agent: SpawnBox,
    /// Only used by `point-pick`.
    pub object: Option<SpawnBox>,
    pub goal: SpawnBox,
    /// Minimum pairwise distance between spawned points.
    pub min_separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub kind: TaskKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub step_scale: f64,
    pub success_radius: f64,
    pub grasp_radius: f64,
    pub layout: SpawnLayout,
}

impl EnvSpec {
    pub fn point_reach() -> Self {
        Self {
            name: "point-reach".into(),
            kind: TaskKind::PointReach,
            state_dim: 4,
            action_dim: 2,
            horizon: 100,
            step_scale: 0.05,
            success_radius: 0.1,
            grasp_radius: 0.0,
            layout: SpawnLayout {
                agent: SpawnBox::square(0.05, 0.35),
                object: None,
                goal: SpawnBox::square(0.65, 0.95),
                min_separation: 0.0,
            },
        }
    }

    pub fn point_pick() -> Self {
        Self {
            name: "point-pick".into(),
            kind: TaskKind::PointPick,
            state_dim: 7,
            action_dim: 2,
            horizon: 200,
            step_scale: 0.05,
            success_radius: 0.05,
            grasp_radius: 0.05,
            layout: SpawnLayout {
                // The object sits off the agent-goal line, so no single
                // heading both grasps it and delivers it.
                agent: SpawnBox::square(0.05, 0.35),
                object: Some(SpawnBox {
                    lo: [0.35, 0.65],
                    hi: [0.65, 0.95],
                }),
                goal: SpawnBox {
                    lo: [0.65, 0.05],
                    hi: [0.95, 0.35],
                },
                min_separation: 0.3,
            },
        }
    }

    /// Looks an environment up by name (`point-reach`, `point-pick`; the
    /// CamelCase forms are accepted too).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point-reach" | "PointReach" | "point_reach" => Ok(Self::point_reach()),
            "point-pick" | "PointPick" | "point_pick" => Ok(Self::point_pick()),
            other => Err(Error::UnknownEnv(other.to_owned())),
        }
    }

    pub fn names() -> [&'static str; 2] {
        ["point-reach", "point-pick"]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub values: Vec<f64>,
    pub steps_taken: usize,
}

impl EnvState {
    pub fn agent(&self) -> [f64; 2] {
        [self.values[0], self.values[1]]
    }

    pub fn goal(&self, spec: &EnvSpec) -> [f64; 2] {
        match spec.kind {
            TaskKind::PointReach => [self.values[2], self.values[3]],
            TaskKind::PointPick => [self.values[4], self.values[5]],
        }
    }

    /// `point-pick` only.
    pub fn object(&self) -> [f64; 2] {
        [self.values[2], self.values[3]]
    }

    /// `point-pick` only.
    pub fn holding(&self) -> bool {
        self.values[6] > 0.5
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// Samples a start state, redrawing until all spawned points are at least
/// `min_separation` apart.
pub fn reset(spec: &EnvSpec, rng: &mut impl Rng) -> EnvState {
    let layout = &spec.layout;
    let sep = layout.min_separation;
    let values = loop {
        let agent = layout.agent.sample(rng);
        let object = match spec.kind {
            TaskKind::PointReach => None,
            TaskKind::PointPick => Some(
                layout
                    .object
                    .expect("point-pick layout has an object box")
                    .sample(rng),
            ),
        };
        let goal = layout.goal.sample(rng);
        let points: Vec<[f64; 2]> = [Some(agent), object, Some(goal)].into_iter().flatten().collect();
        let separated = points
            .iter()
            .enumerate()
            .all(|(i, &p)| points[i + 1..].iter().all(|&q| dist(p, q) >= sep));
        if separated {
            let mut v: Vec<f64> = points.concat();
            if spec.kind == TaskKind::PointPick {
                v.push(0.0);
            }
            break v;
        }
    };
    EnvState {
        values,
        steps_taken: 0,
    }
}

/// Validates an action and clamps marginal overshoot into `[-1, 1]`.
pub fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<[f64; 2]> {
    if action.len() != spec.action_dim {
        return Err(Error::shape("env action", &[spec.action_dim], &[action.len()]));
    }
    let mut out = [0.0; 2];
    for (i, &a) in action.iter().enumerate() {
        if !a.is_finite() || a.abs() > 1.0 + ACTION_TOLERANCE {
            return Err(Error::ActionOutOfRange { index: i, value: a });
        }
        out[i] = a.clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Pure transition function.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<StepResult> {
    let a = check_action(spec, action)?;
    if state.values.len() != spec.state_dim {
        return Err(Error::shape(
            "env state",
            &[spec.state_dim],
            &[state.values.len()],
        ));
    }
    if state.steps_taken >= spec.horizon {
        return Err(Error::InvalidArgument(format!(
            "episode already reached its horizon of {}",
            spec.horizon
        )));
    }
    let agent = state.agent();
    let moved = clamp_unit([
        agent[0] + spec.step_scale * a[0],
        agent[1] + spec.step_scale * a[1],
    ]);
    let mut values = state.values.clone();
    values[0] = moved[0];
    values[1] = moved[1];
    let success = match spec.kind {
        TaskKind::PointReach => dist(moved, state.goal(spec)) < spec.success_radius,
        TaskKind::PointPick => {
            let mut holding = state.holding();
            let mut object = state.object();
            if holding {
                object = clamp_unit([object[0] + moved[0] - agent[0], object[1] + moved[1] - agent[1]]);
            } else if dist(moved, object) < spec.grasp_radius {
                holding = true;
            }
            values[2] = object[0];
            values[3] = object[1];
            values[6] = if holding { 1.0 } else { 0.0 };
            holding && dist(object, state.goal(spec)) < spec.success_radius
        }
    };
    let steps_taken = state.steps_taken + 1;
    Ok(StepResult {
        next_state: EnvState { values, steps_taken },
        reward: if success { 1.0 } else { 0.0 },
        done: success || steps_taken == spec.horizon,
        success,
    })
}

/// Saturating proportional controller toward the current subgoal, plus
/// Gaussian noise, clamped to the action box.
pub fn scripted_expert(spec: &EnvSpec, state: &EnvState, noise_std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (from, to) = match spec.kind {
        TaskKind::PointReach => (state.agent(), state.goal(spec)),
        TaskKind::PointPick if state.holding() => (state.object(), state.goal(spec)),
        TaskKind::PointPick => (state.agent(), state.object()),
    };
    let mut a = [
        (to[0] - from[0]) / spec.step_scale,
        (to[1] - from[1]) / spec.step_scale,
    ];
    let peak = a[0].abs().max(a[1].abs());
    if peak > 1.0 {
        a = [a[0] / peak, a[1] / peak];
    }
    a.iter()
        .map(|&v| {
            let noisy = if noise_std > 0.0 {
                v + noise_std * crate::rng::normal(rng)
            } else {
                v
            };
            noisy.clamp(-1.0, 1.0)
        })
        .collect()
}

/// Runs one episode with `policy`, returning `(success, steps)`.
pub fn rollout(
    spec: &EnvSpec,
    mut state: EnvState,
    mut policy: impl FnMut(&EnvState) -> Result<Vec<f64>>,
) -> Result<(bool, usize)> {
    loop {
        let action = policy(&state)?;
        let res = step(spec, &state, &action)?;
        if res.done {
            return Ok((res.success, res.next_state.steps_taken));
        }
        state = res.next_state;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn reach_state(agent: [f64; 2], goal: [f64; 2]) -> EnvState {
        EnvState {
            values: vec![agent[0], agent[1], goal[0], goal[1]],
            steps_taken: 0,
        }
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        for spec in [EnvSpec::point_reach(), EnvSpec::point_pick()] {
            let a = reset(&spec, &mut rng::stream(7, 0));
            let b = reset(&spec, &mut rng::stream(7, 0));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reach_resets_stay_in_layout() {
        let spec = EnvSpec::point_reach();
        let mut r = rng::stream(1, 0);
        for _ in 0..10_000 {
            let s = reset(&spec, &mut r);
            assert!(spec.layout.agent.contains(s.agent()));
            assert!(spec.layout.goal.contains(s.goal(&spec)));
            assert_eq!(s.steps_taken, 0);
        }
    }

    #[test]
    fn pick_resets_not_holding_and_separated() {
        let spec = EnvSpec::point_pick();
        let mut r = rng::stream(2, 0);
        for _ in 0..2_000 {
            let s = reset(&spec, &mut r);
            assert_eq!(s.values[6], 0.0);
            let sep = spec.layout.min_separation;
            assert!(dist(s.agent(), s.object()) >= sep);
            assert!(dist(s.object(), s.goal(&spec)) >= sep);
            assert!(dist(s.agent(), s.goal(&spec)) >= sep);
        }
    }

    #[test]
    fn pick_spawns_in_boxes() {
        let spec = EnvSpec::point_pick();
        let layout = &spec.layout;
        let mut r = rng::stream(3, 0);
        for _ in 0..2_000 {
            let s = reset(&spec, &mut r);
            assert!(layout.agent.contains(s.agent()));
            assert!(layout.object.unwrap().contains(s.object()));
            assert!(layout.goal.contains(s.goal(&spec)));
        }
    }

    #[test]
    fn pick_is_not_solved_by_any_constant_action() {
        let spec = EnvSpec::point_pick();
        let mut r = rng::stream(4, 0);
        for k in 0..16 {
            let angle = std::f64::consts::TAU * f64::from(k) / 16.0;
            let action = [angle.cos(), angle.sin()];
            for _ in 0..200 {
                let start = reset(&spec, &mut r);
                let (success, _) = rollout(&spec, start, |_| Ok(action.to_vec())).unwrap();
                assert!(!success, "constant heading {action:?} solved the task");
            }
        }
    }

    #[test]
    fn at_goal_zero_action_succeeds() {
        let spec = EnvSpec::point_reach();
        let res = step(&spec, &reach_state([0.5, 0.5], [0.5, 0.5]), &[0.0, 0.0]).unwrap();
        assert_eq!(res.reward, 1.0);
        assert!(res.done && res.success);
    }

    #[test]
    fn step_arithmetic() {
        let spec = EnvSpec::point_reach();
        let res = step(&spec, &reach_state([0.0, 0.0], [1.0, 1.0]), &[1.0, 1.0]).unwrap();
        assert!((res.next_state.values[0] - 0.05).abs() < 1e-15);
        assert!((res.next_state.values[1] - 0.05).abs() < 1e-15);
        assert_eq!(res.reward, 0.0);
        assert!(!res.done);
    }

    #[test]
    fn action_bounds() {
        let spec = EnvSpec::point_reach();
        let s = reach_state([0.2, 0.2], [0.8, 0.8]);
        let res = step(&spec, &s, &[1.0 + 5e-10, -1.0]).unwrap();
        assert!((res.next_state.values[0] - 0.25).abs() < 1e-15);
        assert!(matches!(
            step(&spec, &s, &[1.0 + 1e-6, 0.0]),
            Err(Error::ActionOutOfRange { index: 0, .. })
        ));
        assert!(matches!(step(&spec, &s, &[0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn positions_clamped() {
        let spec = EnvSpec::point_reach();
        let res = step(&spec, &reach_state([0.01, 0.99], [0.5, 0.5]), &[-1.0, 1.0]).unwrap();
        assert_eq!(res.next_state.agent(), [0.0, 1.0]);
    }

    #[test]
    fn horizon_ends_episode() {
        let spec = EnvSpec::point_reach();
        let mut s = reach_state([0.1, 0.1], [0.9, 0.9]);
        s.steps_taken = spec.horizon - 1;
        let res = step(&spec, &s, &[-1.0, -1.0]).unwrap();
        assert!(res.done && !res.success);
        assert!(step(&spec, &res.next_state, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pick_carries_object_after_grasp() {
        let spec = EnvSpec::point_pick();
        let s = EnvState {
            values: vec![0.3, 0.3, 0.33, 0.3, 0.9, 0.9, 0.0],
            steps_taken: 0,
        };
        let grasped = step(&spec, &s, &[0.0, 0.0]).unwrap().next_state;
        assert!(grasped.holding());
        let moved = step(&spec, &grasped, &[1.0, 0.0]).unwrap().next_state;
        assert!((moved.object()[0] - 0.38).abs() < 1e-12);
        assert!((moved.object()[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pick_needs_grasp_for_success() {
        let spec = EnvSpec::point_pick();
        // Object already inside the goal but not grasped, agent far away.
        let s = EnvState {
            values: vec![0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.0],
            steps_taken: 0,
        };
        assert!(!step(&spec, &s, &[0.0, 0.0]).unwrap().success);
    }

    #[test]
    fn expert_sign_and_determinism() {
        let spec = EnvSpec::point_reach();
        let s = reach_state([0.2, 0.5], [0.8, 0.5]);
        let mut r = rng::stream(0, 0);
        let a = scripted_expert(&spec, &s, 0.0, &mut r);
        assert!(a[0] > 0.0);
        assert_eq!(a, scripted_expert(&spec, &s, 0.0, &mut r));
    }

    #[test]
    fn step_is_pure() {
        let spec = EnvSpec::point_pick();
        let s = reset(&spec, &mut rng::stream(3, 0));
        assert_eq!(
            step(&spec, &s, &[0.3, -0.2]).unwrap(),
            step(&spec, &s, &[0.3, -0.2]).unwrap()
        );
    }

    #[test]
    fn unknown_env_name() {
        assert!(matches!(EnvSpec::by_name("cartpole"), Err(Error::UnknownEnv(_))));
    }
}
