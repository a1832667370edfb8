//! Policies acting on raw structured observations.

use crate::env::{Action, Observation};
use crate::geometry::Vec2;

pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Action;
}

impl<F: FnMut(&Observation) -> Action> Policy for F {
    fn act(&mut self, obs: &Observation) -> Action {
        self(obs)
    }
}

/// Scripted reach-then-push controller used to bootstrap counterfactual
/// data before any agent has been trained.
///
/// It approaches the side of the block facing away from the goal from
/// above, drops to block-center height, and drives through the block
/// toward the goal at a bounded lead so the block does not overshoot.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedPusher;

impl ScriptedPusher {
    const CLEARANCE: f64 = 0.03;
    const STANDOFF: f64 = 0.02;
    const PUSH_STEP: f64 = 0.03;
}

impl Policy for ScriptedPusher {
    fn act(&mut self, obs: &Observation) -> Action {
        let eff = obs.effector_pos();
        let block = obs.block_pos();
        let goal = obs.goal_pos();
        let half = obs.block_size() / 2.0;
        let dir = if goal.x >= block.x { 1.0 } else { -1.0 };
        let side = Vec2::new(block.x - dir * (half + Self::STANDOFF), block.z);

        let behind = dir * (block.x - eff.x) > half * 0.5;
        let low = eff.z < block.z + half * 0.5;
        let target = if behind && low && (eff.x - side.x).abs() < half + Self::STANDOFF {
            let remaining = (dir * (goal.x - block.x)).clamp(0.0, Self::PUSH_STEP);
            Vec2::new(eff.x + dir * remaining, block.z)
        } else if (eff.x - side.x).abs() > 0.01 {
            Vec2::new(side.x, block.z + half + Self::CLEARANCE)
        } else {
            side
        };
        Action::toward(target, 0.0)
    }
}

/// Scripted grasp-and-lift controller for the picking task.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedPicker;

impl Policy for ScriptedPicker {
    fn act(&mut self, obs: &Observation) -> Action {
        let eff = obs.effector_pos();
        let block = obs.block_pos();
        let goal = obs.goal_pos();
        let half = obs.block_size() / 2.0;
        if eff.dist(block) <= half * 0.9 && obs.grip() > 0.5 {
            return Action::toward(goal, 1.0);
        }
        if eff.dist(block) <= half * 0.5 {
            return Action::toward(block, 1.0);
        }
        Action::toward(block, 0.0)
    }
}
