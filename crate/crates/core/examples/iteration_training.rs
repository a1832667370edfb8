//! A shrunken iteration-training run: bootstrap phase, agent training,
//! scheduled representation refreshes, checkpoints, and a resume that
//! reproduces the uninterrupted log.

use causalcf::env::TaskKind;
use causalcf::pipeline::{read_log, run_iteration_training, RunConfig, Trainer, Variant};

fn main() -> causalcf::Result<()> {
    let mut cfg = RunConfig::desk(TaskKind::Pushing, Variant::CausalcfIter);
    cfg.total_steps = 6_000;
    cfg.iter_start = 2_000;
    cfg.iter_every = 2_000;
    cfg.checkpoint_every = 3_000;
    cfg.cf.epochs = 2;
    cfg.sac.learning_starts = 1_000;
    let root = std::env::temp_dir().join("causalcf_example_iter");
    let _ = std::fs::remove_dir_all(&root);

    let (_, summary) = run_iteration_training(&cfg, &root.join("full"))?;
    println!("refreshes at {:?}, final rep v{:?}", summary.refresh_steps, summary.rep_version);

    let mut short = cfg.clone();
    short.total_steps = 3_000;
    let (_, half) = run_iteration_training(&short, &root.join("half"))?;
    let mut resumed = Trainer::resume(&half.final_checkpoint, &root.join("resumed"), Some(cfg.total_steps))?;
    resumed.run()?;
    let same = read_log(&root.join("full/train_log.csv"))? == read_log(&root.join("resumed/train_log.csv"))?;
    println!("resumed log identical: {same}");
    Ok(())
}
