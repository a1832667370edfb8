//! Rolls the scripted pushing and picking controllers through one episode
//! each and prints the fractional success along the way.

use causalcf::env::{BlockWorld, TaskKind, TaskSpec};
use causalcf::policy::{Policy, ScriptedPicker, ScriptedPusher};
use causalcf::scm::CausalVariables;

fn main() -> causalcf::Result<()> {
    let runs: [(TaskKind, Box<dyn Policy>); 2] =
        [(TaskKind::Pushing, Box::new(ScriptedPusher)), (TaskKind::Picking, Box::new(ScriptedPicker))];
    for (task, mut policy) in runs {
        let mut env = BlockWorld::new(TaskSpec::new(task))?;
        let mut obs = env.reset(&CausalVariables::defaults(task), 0)?;
        let (mut reward, mut step) = (0.0, 0);
        loop {
            let out = env.step(&policy.act(&obs))?;
            reward += out.reward;
            step += 1;
            if step % 50 == 0 {
                println!("{task} step {step:3}: block {:?} fs {:.3}", out.observation.block_pos(), out.info.fractional_success);
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        println!("{task}: return {reward:.2}");
    }
    Ok(())
}
