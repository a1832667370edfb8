use crate::env::BlockWorld;
use crate::error::Result;
use crate::policy::Policy;
use crate::scm::{CausalVariables, Intervention};

use super::{CfSample, Trajectory};

/// Factual setting and intervention for one counterfactual sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CfEpisode {
    pub factual: CausalVariables,
    pub intervention: Intervention,
    /// Policy steps taken after reset before the observed window opens.
    pub warmup: usize,
}

fn roll(env: &mut BlockWorld, policy: &mut dyn Policy, steps: usize) -> Result<Trajectory> {
    let initial = env.observe();
    let mut obs = initial;
    let mut observations = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = policy.act(&obs);
        obs = env.step(&action)?.observation;
        observations.push(obs);
        actions.push(action);
    }
    Trajectory::new(initial, observations, actions)
}

fn replay(env: &mut BlockWorld, observed: &Trajectory) -> Result<Trajectory> {
    let initial = env.observe();
    let mut observations = Vec::with_capacity(observed.len());
    for action in &observed.actions {
        observations.push(env.step(action)?.observation);
    }
    Trajectory::new(initial, observations, observed.actions.clone())
}

/// Generates `n` samples of `steps` steps each.
///
/// For sample `i` the environment is reset to `sampler(i)`'s factual
/// variables with seed `seed + i` and run for the warm-up steps. That state
/// is snapshotted, the policy is rolled out, the snapshot is restored with
/// the intervention applied, and the recorded actions are replayed.
pub fn generate_cf_batch(
    env: &mut BlockWorld,
    policy: &mut dyn Policy,
    sampler: &mut dyn FnMut(usize) -> Result<CfEpisode>,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<CfSample>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let episode = sampler(i)?;
        let mut obs = env.reset(&episode.factual, seed.wrapping_add(i as u64))?;
        for _ in 0..episode.warmup {
            obs = env.step(&policy.act(&obs))?.observation;
        }
        let start = env.snapshot()?;
        let observed = roll(env, policy, steps)?;
        env.restore(start.with_intervention(&episode.intervention)?)?;
        let counterfactual = replay(env, &observed)?;
        out.push(CfSample::new(observed, episode.intervention, counterfactual)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TaskKind, TaskSpec};
    use crate::policy::ScriptedPusher;
    use crate::scm::{Value, Variable};

    fn env() -> BlockWorld {
        BlockWorld::new(TaskSpec::new(TaskKind::Pushing)).unwrap()
    }

    fn fixed(intervention: Intervention) -> impl FnMut(usize) -> Result<CfEpisode> {
        move |_| {
            Ok(CfEpisode {
                factual: CausalVariables::defaults(TaskKind::Pushing),
                intervention: intervention.clone(),
                warmup: 0,
            })
        }
    }

    #[test]
    fn counts_and_shared_actions() {
        let samples =
            generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut fixed(Intervention::none()), 30, 40, 0).unwrap();
        assert_eq!(samples.len(), 40);
        for s in &samples {
            assert_eq!(s.observed.len(), 30);
            assert_eq!(s.observed.actions, s.counterfactual.actions);
        }
    }

    #[test]
    fn null_intervention_is_identical() {
        let samples =
            generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut fixed(Intervention::none()), 60, 3, 9).unwrap();
        for s in &samples {
            assert_eq!(s.observed, s.counterfactual);
        }
    }

    #[test]
    fn goal_intervention_moves_goal_only() {
        let i = Intervention::none().with(Variable::GoalPose, Value::Pose { x: 0.02, z: None });
        let s = generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut fixed(i), 10, 1, 0).unwrap().remove(0);
        assert_eq!(s.counterfactual.initial.goal_pos().x, 0.02);
        assert_eq!(s.observed.observations[9].block_pos(), s.counterfactual.observations[9].block_pos());
    }

    #[test]
    fn warmup_shifts_window() {
        let mut sampler = |_| {
            Ok(CfEpisode {
                factual: CausalVariables::defaults(TaskKind::Pushing),
                intervention: Intervention::none(),
                warmup: 5,
            })
        };
        let late = generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut sampler, 5, 1, 0).unwrap();
        let early = generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut fixed(Intervention::none()), 10, 1, 0).unwrap();
        assert_eq!(late[0].observed.initial, early[0].observed.observations[4]);
        assert_eq!(late[0].observed.observations[..], early[0].observed.observations[5..]);
    }

    #[test]
    fn propagates_env_errors() {
        let r = generate_cf_batch(&mut env(), &mut ScriptedPusher, &mut fixed(Intervention::none()), 251, 1, 0);
        assert!(r.is_err());
    }
}
