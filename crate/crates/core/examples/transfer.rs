//! Learns a representation on pushing, then trains a picking agent that
//! keeps it fixed.

use causalcf::env::TaskKind;
use causalcf::pipeline::{run_iteration_training, transfer_rep, RunConfig, Variant};

fn main() -> causalcf::Result<()> {
    let mut source = RunConfig::desk(TaskKind::Pushing, Variant::CausalcfIter);
    source.total_steps = 3_000;
    source.iter_start = 2_000;
    source.checkpoint_every = 3_000;
    source.cf.epochs = 2;
    source.sac.learning_starts = 1_000;
    let root = std::env::temp_dir().join("causalcf_example_transfer");
    let _ = std::fs::remove_dir_all(&root);
    let (_, s) = run_iteration_training(&source, &root.join("pushing"))?;
    println!("source finished with rep v{:?}", s.rep_version);

    let target = RunConfig { task: TaskKind::Picking, ..source };
    let (trainer, t) = transfer_rep(&root.join("pushing"), &target, &root.join("picking"))?;
    println!(
        "picking agent trained {} steps on rep v{:?}; last episode fs {:.3}",
        t.env_steps,
        t.rep_version,
        trainer.log().last().map_or(0.0, |r| r.frac_success)
    );
    Ok(())
}
