//! Trains the counterfactual model for a shortened phase with the scripted
//! bootstrap policy and prints the loss and the extracted representation.

use causalcf::cf_model::CfModel;
use causalcf::env::{TaskKind, TaskSpec};
use causalcf::pipeline::{train_counterfactual_phase, CfPhaseConfig};
use causalcf::policy::ScriptedPusher;

fn main() -> causalcf::Result<()> {
    let cfg = CfPhaseConfig { epochs: 3, iterations: 40, ..CfPhaseConfig::default() };
    let mut model = CfModel::new(cfg.model, 0)?;
    let report = train_counterfactual_phase(&cfg, TaskSpec::new(TaskKind::Pushing), &mut model, &mut ScriptedPusher, 0, 0)?;
    for (k, chunk) in report.losses.chunks(cfg.iterations).enumerate() {
        println!("epoch {k}: mean loss {:.5}", chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    let norm = report.rep.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("representation v{} width {} norm {norm:.4}", report.rep.version, report.rep.width);
    let dir = std::env::temp_dir().join("causalcf_example_model");
    model.save(&dir)?;
    println!("saved {} parameters to {}", model.params().num_scalars(), dir.display());
    Ok(())
}
