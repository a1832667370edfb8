//! Deterministic 2D block-manipulation world.
//!
//! A kinematic point effector moves toward position targets and interacts
//! with one square block through penalty contact. The floor is a hard
//! constraint with Coulomb friction. In the picking task the effector can
//! grip the block, after which the block tracks the effector subject to a
//! lift-force budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clamp_to_workspace, Vec2, WORKSPACE_X, WORKSPACE_Z};
use crate::scm::{apply_intervention, CausalVariables, Intervention, Variable};

pub const OBS_WIDTH: usize = 11;
pub const ACTION_WIDTH: usize = 3;

/// Offsets into the flat observation vector.
pub mod obs_index {
    pub const TIME_LEFT: usize = 0;
    pub const EFFECTOR_POS: usize = 1;
    pub const EFFECTOR_VEL: usize = 3;
    pub const GRIP: usize = 5;
    pub const BLOCK_POS: usize = 6;
    pub const BLOCK_SIZE: usize = 8;
    pub const GOAL_POS: usize = 9;
}

/// Rate (1/s) at which a gripped block is drawn onto the effector point.
const GRIP_CENTERING_RATE: f64 = 20.0;

pub const EFFECTOR_HOME: Vec2 = Vec2::new(0.0, 0.15);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pushing,
    Picking,
}

impl TaskKind {
    /// Goal square center; pushing goals rest on the floor.
    pub fn goal_center(self, vars: &CausalVariables) -> Vec2 {
        match self {
            TaskKind::Pushing => Vec2::new(vars.goal_pose.x, vars.block_size / 2.0),
            TaskKind::Picking => vars.goal_pose,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Pushing => "pushing",
            TaskKind::Picking => "picking",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pushing" => Ok(TaskKind::Pushing),
            "picking" => Ok(TaskKind::Picking),
            other => Err(Error::Configuration(format!("unknown task {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub reach: f64,
    pub goal: f64,
    pub fractional_success: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { reach: 750.0, goal: 250.0, fractional_success: 100.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub weights: RewardWeights,
    pub episode_length: usize,
    pub skipframe: usize,
}

impl TaskSpec {
    pub fn new(task: TaskKind) -> Self {
        Self { task, weights: RewardWeights::default(), episode_length: 250, skipframe: 3 }
    }

    pub fn with_episode_length(mut self, len: usize) -> Self {
        self.episode_length = len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if self.episode_length == 0 {
            return Err(Error::Configuration("episode_length must be positive".into()));
        }
        if self.skipframe == 0 {
            return Err(Error::Configuration("skipframe must be at least 1".into()));
        }
        let all = [w.reach, w.goal, w.fractional_success];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Configuration("reward weights must be non-negative".into()));
        }
        if w.reach < w.goal || w.reach < w.fractional_success {
            return Err(Error::Configuration("reaching weight must be the largest".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub dt: f64,
    pub max_speed: f64,
    /// Proportional gain of the effector position controller, 1/s.
    pub position_gain: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub lift_force: f64,
    pub gravity: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 0.004,
            max_speed: 1.0,
            position_gain: 10.0,
            contact_stiffness: 1000.0,
            contact_damping: 10.0,
            lift_force: 30.0,
            gravity: 9.81,
        }
    }
}

/// Complete simulator state; cloning it is a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub task: TaskKind,
    pub seed: u64,
    pub time_step: usize,
    pub effector_pos: Vec2,
    pub effector_vel: Vec2,
    pub grip: f64,
    pub block_pos: Vec2,
    pub block_vel: Vec2,
    pub attached: bool,
    pub vars: CausalVariables,
}

impl WorldState {
    fn initial(task: TaskKind, vars: CausalVariables, seed: u64) -> Self {
        Self {
            task,
            seed,
            time_step: 0,
            effector_pos: EFFECTOR_HOME,
            effector_vel: Vec2::ZERO,
            grip: 0.0,
            block_pos: Vec2::new(vars.block_pose.x, vars.block_size / 2.0),
            block_vel: Vec2::ZERO,
            attached: false,
            vars,
        }
    }

    /// Same state with `intervention` applied to the causal variables.
    ///
    /// Block pose and size interventions re-seat the block on the floor at
    /// the intervened position and release any grip.
    pub fn with_intervention(&self, intervention: &Intervention) -> Result<WorldState> {
        let mut out = self.clone();
        out.vars = apply_intervention(&self.vars, intervention)?;
        let moved = intervention.get(Variable::BlockPose).is_some()
            || intervention.get(Variable::BlockSize).is_some();
        if moved {
            out.block_pos = Vec2::new(out.vars.block_pose.x, out.vars.block_size / 2.0);
            out.block_vel = Vec2::ZERO;
            out.attached = false;
        }
        Ok(out)
    }

    pub fn goal_center(&self) -> Vec2 {
        self.task.goal_center(&self.vars)
    }

    pub fn fractional_success(&self) -> f64 {
        let size = self.vars.block_size;
        fractional_success(self.block_pos, size, self.goal_center(), size)
            .expect("validated block size is positive")
    }
}

/// Flat structured observation. Mass and friction are never exposed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_WIDTH]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn effector_pos(&self) -> Vec2 {
        Vec2::new(self.0[obs_index::EFFECTOR_POS], self.0[obs_index::EFFECTOR_POS + 1])
    }

    pub fn block_pos(&self) -> Vec2 {
        Vec2::new(self.0[obs_index::BLOCK_POS], self.0[obs_index::BLOCK_POS + 1])
    }

    pub fn goal_pos(&self) -> Vec2 {
        Vec2::new(self.0[obs_index::GOAL_POS], self.0[obs_index::GOAL_POS + 1])
    }

    pub fn block_size(&self) -> f64 {
        self.0[obs_index::BLOCK_SIZE]
    }

    pub fn time_left(&self) -> f64 {
        self.0[obs_index::TIME_LEFT]
    }

    pub fn grip(&self) -> f64 {
        self.0[obs_index::GRIP]
    }
}

/// Normalized command `[target_x, target_z, grip]`, each in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action(pub [f64; ACTION_WIDTH]);

impl Action {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != ACTION_WIDTH {
            return Err(Error::InvalidAction(format!(
                "expected width {ACTION_WIDTH}, got {}",
                values.len()
            )));
        }
        let mut a = [0.0; ACTION_WIDTH];
        for (dst, &v) in a.iter_mut().zip(values) {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidAction(format!("component {v} outside [-1, 1]")));
            }
            *dst = v;
        }
        Ok(Action(a))
    }

    /// Action that commands the effector to `target` (meters) with `grip` in `[0, 1]`.
    pub fn toward(target: Vec2, grip: f64) -> Self {
        let t = clamp_to_workspace(target);
        let nx = 2.0 * (t.x - WORKSPACE_X.0) / (WORKSPACE_X.1 - WORKSPACE_X.0) - 1.0;
        let nz = 2.0 * (t.z - WORKSPACE_Z.0) / (WORKSPACE_Z.1 - WORKSPACE_Z.0) - 1.0;
        Action([nx.clamp(-1.0, 1.0), nz.clamp(-1.0, 1.0), (2.0 * grip - 1.0).clamp(-1.0, 1.0)])
    }

    pub fn target(&self) -> Vec2 {
        let x = WORKSPACE_X.0 + (self.0[0] + 1.0) / 2.0 * (WORKSPACE_X.1 - WORKSPACE_X.0);
        let z = WORKSPACE_Z.0 + (self.0[1] + 1.0) / 2.0 * (WORKSPACE_Z.1 - WORKSPACE_Z.0);
        Vec2::new(x, z)
    }

    pub fn grip(&self) -> f64 {
        (self.0[2] + 1.0) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub fractional_success: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Overlap area of two axis-aligned squares divided by the goal area.
pub fn fractional_success(block_pos: Vec2, block_size: f64, goal_pos: Vec2, goal_size: f64) -> Result<f64> {
    if !(block_size > 0.0 && goal_size > 0.0) || !block_size.is_finite() || !goal_size.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "sizes must be positive, got {block_size} and {goal_size}"
        )));
    }
    let overlap_1d = |b: f64, g: f64| {
        let lo = (b - block_size / 2.0).max(g - goal_size / 2.0);
        let hi = (b + block_size / 2.0).min(g + goal_size / 2.0);
        (hi - lo).max(0.0)
    };
    let area = overlap_1d(block_pos.x, goal_pos.x) * overlap_1d(block_pos.z, goal_pos.z);
    Ok((area / (goal_size * goal_size)).clamp(0.0, 1.0))
}

/// The block world environment. One instance is single-threaded.
#[derive(Clone, Debug)]
pub struct BlockWorld {
    spec: TaskSpec,
    physics: PhysicsParams,
    state: Option<WorldState>,
    done: bool,
}

impl BlockWorld {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        Self::with_physics(spec, PhysicsParams::default())
    }

    pub fn with_physics(spec: TaskSpec, physics: PhysicsParams) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, physics, state: None, done: false })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn physics(&self) -> &PhysicsParams {
        &self.physics
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self, vars: &CausalVariables, seed: u64) -> Result<Observation> {
        vars.validate()?;
        let goal = self.spec.task.goal_center(vars);
        let half = vars.block_size / 2.0;
        let fits = |c: f64| c - half >= WORKSPACE_Z.0 - 1e-12 && c + half <= WORKSPACE_Z.1 + 1e-12;
        if !fits(goal.z) {
            return Err(Error::InvalidVariables(format!("goal height {} does not fit", goal.z)));
        }
        self.state = Some(WorldState::initial(self.spec.task, *vars, seed));
        self.done = false;
        Ok(self.observe())
    }

    pub fn snapshot(&self) -> Result<WorldState> {
        self.state.clone().ok_or(Error::NotReset)
    }

    pub fn restore(&mut self, state: WorldState) -> Result<()> {
        if state.task != self.spec.task {
            return Err(Error::IncompatibleState(format!(
                "snapshot from {} restored into {} environment",
                state.task, self.spec.task
            )));
        }
        state.vars.validate()?;
        if state.time_step > self.spec.episode_length {
            return Err(Error::IncompatibleState("snapshot beyond episode length".into()));
        }
        self.done = state.time_step == self.spec.episode_length;
        self.state = Some(state);
        Ok(())
    }

    pub fn observe(&self) -> Observation {
        let s = self.state.as_ref().expect("observe after reset");
        let goal = s.goal_center();
        let len = self.spec.episode_length as f64;
        Observation([
            (len - s.time_step as f64) / len,
            s.effector_pos.x,
            s.effector_pos.z,
            s.effector_vel.x,
            s.effector_vel.z,
            s.grip,
            s.block_pos.x,
            s.block_pos.z,
            s.vars.block_size,
            goal.x,
            goal.z,
        ])
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        Action::new(&action.0)?;
        let physics = self.physics;
        let spec = self.spec;
        let s = self.state.as_mut().ok_or(Error::NotReset)?;

        let goal = s.goal_center();
        let reach_before = s.effector_pos.dist(s.block_pos);
        let goal_before = s.block_pos.dist(goal);

        let target = action.target();
        let grip = action.grip();
        for _ in 0..spec.skipframe {
            substep(s, &physics, target, grip);
        }
        s.time_step += 1;

        let reach_after = s.effector_pos.dist(s.block_pos);
        let goal_after = s.block_pos.dist(goal);
        let fs = s.fractional_success();
        let w = spec.weights;
        let reward = w.reach * (reach_before - reach_after)
            + w.goal * (goal_before - goal_after)
            + w.fractional_success * fs;
        self.done = s.time_step == spec.episode_length;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
            info: StepInfo { fractional_success: fs },
        })
    }
}

fn substep(s: &mut WorldState, p: &PhysicsParams, target: Vec2, grip: f64) {
    let dt = p.dt;
    let mass = s.vars.block_mass;
    let half = s.vars.block_size / 2.0;

    // Kinematic effector: proportional approach of the target at bounded speed.
    let mut vel = (target - s.effector_pos) * p.position_gain.min(1.0 / dt);
    let speed = vel.norm();
    if speed > p.max_speed {
        vel = vel * (p.max_speed / speed);
    }
    let new_pos = clamp_to_workspace(s.effector_pos + vel * dt);
    s.effector_vel = (new_pos - s.effector_pos) * (1.0 / dt);
    s.effector_pos = new_pos;
    s.grip = grip;

    if s.task == TaskKind::Picking {
        if s.attached && grip <= 0.5 {
            s.attached = false;
        } else if !s.attached && grip > 0.5 && s.effector_pos.dist(s.block_pos) <= half {
            s.attached = true;
        }
    }

    if s.attached {
        // Velocity tracking limited by the lift-force budget.
        let max_acc = p.lift_force / mass;
        let desired = s.effector_vel + (s.effector_pos - s.block_pos) * GRIP_CENTERING_RATE;
        let mut acc = (desired - s.block_vel) * (1.0 / dt);
        acc.x = acc.x.clamp(-max_acc, max_acc);
        acc.z = acc.z.clamp(-(max_acc + p.gravity), max_acc - p.gravity);
        s.block_vel = s.block_vel + acc * dt;
        s.block_pos = s.block_pos + s.block_vel * dt;
        seat_on_floor(s, half);
        if s.effector_pos.dist(s.block_pos) > half {
            s.attached = false;
        }
        return;
    }

    let mut force = Vec2::new(0.0, -mass * p.gravity);
    let d = s.effector_pos - s.block_pos;
    if d.x.abs() < half && d.z.abs() < half {
        let pen_x = half - d.x.abs();
        let pen_z = half - d.z.abs();
        // Contact pushes sideways or down; the effector never scoops the block up.
        let (normal, pen) = if pen_z < pen_x && d.z > 0.0 {
            (Vec2::new(0.0, -1.0), pen_z)
        } else {
            (Vec2::new(-d.x.signum(), 0.0), pen_x)
        };
        let approach = {
            let rel = s.effector_vel - s.block_vel;
            rel.x * normal.x + rel.z * normal.z
        };
        let push = (p.contact_stiffness * pen + p.contact_damping * approach).max(0.0);
        force = force + normal * push;
    }

    let on_floor = s.block_pos.z <= half + 1e-9;
    if on_floor && s.block_vel.z <= 0.0 && force.z < 0.0 {
        let normal_load = -force.z;
        force.z = 0.0;
        let limit = s.vars.floor_friction * normal_load;
        let vx = s.block_vel.x;
        if vx == 0.0 {
            if force.x.abs() <= limit {
                force.x = 0.0;
            } else {
                force.x -= limit * force.x.signum();
            }
        } else {
            let drive = force.x;
            force.x = drive - limit * vx.signum();
            let next_vx = vx + force.x / mass * dt;
            if next_vx.signum() != vx.signum() && drive.abs() <= limit {
                // Kinetic friction brings the block to rest within this step.
                force.x = -vx * mass / dt;
            }
        }
    }

    s.block_vel = s.block_vel + force * (dt / mass);
    if s.block_vel.x.abs() < 1e-12 {
        s.block_vel.x = 0.0;
    }
    s.block_pos = s.block_pos + s.block_vel * dt;
    seat_on_floor(s, half);
}

fn seat_on_floor(s: &mut WorldState, half: f64) {
    if s.block_pos.z < half {
        s.block_pos.z = half;
        if s.block_vel.z < 0.0 {
            s.block_vel.z = 0.0;
        }
    }
}
