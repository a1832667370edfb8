//! Properties of a counterfactual model after one full training phase.

use std::sync::OnceLock;

use causalcf::cf_model::{generate_cf_batch, CfModel, CfSample};
use causalcf::env::{BlockWorld, TaskKind, TaskSpec};
use causalcf::pipeline::{phase_episode, phase_intervention, train_counterfactual_phase, CfPhaseConfig, CfPhaseReport};
use causalcf::policy::ScriptedPusher;
use causalcf::scm::{CausalVariables, Intervention, Value, Variable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained() -> &'static (CfModel, CfPhaseReport) {
    static MODEL: OnceLock<(CfModel, CfPhaseReport)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = CfPhaseConfig::default();
        let mut model = CfModel::new(cfg.model, 11).unwrap();
        let report =
            train_counterfactual_phase(&cfg, TaskSpec::new(TaskKind::Pushing), &mut model, &mut ScriptedPusher, 11, 0)
                .unwrap();
        (model, report)
    })
}

/// Samples drawn like the training phase; `edit` may change the factual
/// variables and the intervention before the rollout.
fn held_out(n: usize, seed: u64, mut edit: impl FnMut(&mut CausalVariables, &mut Intervention)) -> Vec<CfSample> {
    let cfg = CfPhaseConfig::default();
    let mut env = BlockWorld::new(TaskSpec::new(TaskKind::Pushing)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let intervention = phase_intervention(TaskKind::Pushing, &mut rng);
            let mut episode = phase_episode(TaskKind::Pushing, &intervention, cfg.warmup_max, &mut rng).unwrap();
            edit(&mut episode.factual, &mut episode.intervention);
            let mut sampler = |_| Ok(episode.clone());
            generate_cf_batch(&mut env, &mut ScriptedPusher, &mut sampler, cfg.steps, 1, rng.random()).unwrap().remove(0)
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>], distinct: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if distinct && j <= i {
                continue;
            }
            sum += cosine(x, y);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn confounders_separate_block_mass() {
    let (model, _) = trained();
    let estimate = |mass: f64| -> Vec<Vec<f64>> {
        held_out(50, 500, |vars, _| vars.block_mass = mass)
            .iter()
            .map(|s| model.estimate_for(s).unwrap().values)
            .collect()
    };
    let light = estimate(0.5);
    let heavy = estimate(2.0);
    let within = (mean_pairwise(&light, &light, true) + mean_pairwise(&heavy, &heavy, true)) / 2.0;
    let between = mean_pairwise(&light, &heavy, false);
    assert!(between < within, "between {between:.4} within {within:.4}");
}

#[test]
fn null_intervention_is_easier_than_heavy_mass() {
    let (model, _) = trained();
    let null = held_out(60, 600, |_, i| *i = Intervention::none());
    let heavy = held_out(60, 600, |_, i| *i = i.clone().with(Variable::BlockMass, Value::Scalar(2.0)));
    let (a, b) = (model.evaluate_mse(&null, false).unwrap(), model.evaluate_mse(&heavy, false).unwrap());
    assert!(a < b, "null {a:.4e} heavy {b:.4e}");
}

#[test]
fn zeroing_confounders_hurts() {
    let (model, _) = trained();
    let batch = held_out(60, 700, |_, _| {});
    assert!(model.evaluate_mse(&batch, false).unwrap() < model.evaluate_mse(&batch, true).unwrap());
}

#[test]
fn phase_representation_is_tagged() {
    let (model, report) = trained();
    assert_eq!(report.rep.width, 32);
    assert_eq!(report.rep.version, 0);
    assert!(report.rep.values.iter().all(|v| v.is_finite()));
    assert_eq!(report.updates, 600);
    assert_eq!(model.training_steps(), 600);
    let first: f64 = report.losses[..40].iter().sum();
    let last: f64 = report.losses[560..].iter().sum();
    assert!(last < first, "loss did not fall: {first} -> {last}");
}

