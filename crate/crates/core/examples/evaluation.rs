//! Scores the scripted pusher on all twelve protocols, then writes the
//! report and plots.

use causalcf::env::{TaskKind, TaskSpec};
use causalcf::harness::{emit_plots, emit_report, run_pipeline, EvalSetup, RunMeta};
use causalcf::policy::ScriptedPusher;

fn main() -> causalcf::Result<()> {
    let setup = EvalSetup::new(TaskSpec::new(TaskKind::Pushing));
    let meta = RunMeta { task: TaskKind::Pushing, variant: Some("scripted".into()), seed: 0, checkpoint_step: None };
    let report = run_pipeline(&mut ScriptedPusher, &setup, 5, 0, meta)?;
    for p in &report.protocols {
        println!("{}  space {}  mean {:.3}  std {:.3}", p.id, p.space, p.mean, p.std);
    }
    println!("overall {:.3}", report.mean_score());
    let out = std::env::temp_dir().join("causalcf_example_eval");
    emit_report(&report, &out.join("report.json"))?;
    emit_plots(&[], &[("scripted".into(), report)], &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
