//! Drives the SAC agent directly: random warm-up, replay, updates, and a
//! deterministic greedy rollout afterwards.

use causalcf::env::{Action, BlockWorld, TaskKind, TaskSpec, OBS_WIDTH};
use causalcf::sac::{ReplayBuffer, SacAgent, SacConfig, Transition};
use causalcf::scm::CausalVariables;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> causalcf::Result<()> {
    let config = SacConfig { learning_starts: 500, batch_size: 64, buffer_size: 20_000, ..SacConfig::default() };
    let mut agent = SacAgent::new(config.clone(), OBS_WIDTH, 0)?;
    let mut buffer = ReplayBuffer::new(OBS_WIDTH, config.buffer_size);
    let mut env = BlockWorld::new(TaskSpec::new(TaskKind::Pushing))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vars = CausalVariables::defaults(TaskKind::Pushing);
    let mut obs = env.reset(&vars, 0)?;
    for step in 1..=5_000u64 {
        let action = if step <= config.learning_starts {
            Action([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        } else {
            agent.select_action(obs.as_slice(), false, &mut rng)?
        };
        let out = env.step(&action)?;
        buffer.push(&Transition {
            obs: obs.as_slice().to_vec(),
            action,
            reward: out.reward,
            next_obs: out.observation.as_slice().to_vec(),
            done: out.done,
        })?;
        obs = if out.done { env.reset(&vars, step)? } else { out.observation };
        if step >= config.learning_starts {
            let losses = agent.update(&buffer, step)?;
            if step % 1000 == 0 {
                println!("step {step}: critic {:.4} actor {:.4}", losses.critic, losses.actor);
            }
        }
    }
    let mut obs = env.reset(&vars, 99)?;
    let mut total = 0.0;
    loop {
        let out = env.step(&agent.select_action(obs.as_slice(), true, &mut rng)?)?;
        total += out.reward;
        obs = out.observation;
        if out.done {
            break;
        }
    }
    println!("greedy return {total:.3}");
    Ok(())
}
