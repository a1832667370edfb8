//! Evaluation pipeline over the twelve protocols, training-curve smoothing,
//! and report/plot output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{BlockWorld, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::pipeline::{read_log, LogRow};
use crate::policy::Policy;
use crate::scm::{apply_intervention, protocol_spec, CausalVariables, ProtocolId, Space, VariableSet, VariableSpace};

pub const DEFAULT_EPISODES_PER_PROTOCOL: usize = 20;
pub const SMOOTHING_WINDOW: usize = 100;

/// Time-mean of the per-step fractional success of one episode.
pub fn integrated_fractional_success(episode_fs: &[f64]) -> Result<f64> {
    if episode_fs.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    Ok(episode_fs.iter().sum::<f64>() / episode_fs.len() as f64)
}

/// Task, episode length and the variables that protocols intervene on.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSetup {
    pub task: TaskSpec,
    pub base: CausalVariables,
}

impl EvalSetup {
    pub fn new(task: TaskSpec) -> Self {
        Self { base: CausalVariables::defaults(task.task), task }
    }
}

fn episode_rng(seed: u64, protocol: ProtocolId, episode: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((protocol.index() as u64) << 32) | episode as u64);
    r
}

/// Score of episode `episode` of `protocol`; depends only on its arguments.
pub fn run_episode(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    protocol: ProtocolId,
    episode: usize,
    seed: u64,
) -> Result<f64> {
    let spec = protocol_spec(protocol);
    let table = VariableSpace::for_task(setup.task.task);
    let mut rng = episode_rng(seed, protocol, episode);
    let intervention = table.sample_with(spec.space, &spec.variables, &mut rng);
    if !table.intervention_in_space(&intervention, spec.space) {
        return Err(Error::InvalidIntervention(format!(
            "{protocol} drew {intervention:?} outside space {}",
            spec.space
        )));
    }
    let vars = apply_intervention(&setup.base, &intervention)?;
    let mut env = BlockWorld::new(setup.task)?;
    let mut obs = env.reset(&vars, rng.random())?;
    let mut fs = Vec::with_capacity(setup.task.episode_length);
    loop {
        let out = env.step(&policy.act(&obs))?;
        fs.push(out.info.fractional_success);
        obs = out.observation;
        if out.done {
            break;
        }
    }
    integrated_fractional_success(&fs)
}

/// Scores of `n` episodes, indexed by episode.
pub fn run_protocol(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    protocol: ProtocolId,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n).map(|e| run_episode(policy, setup, protocol, e, seed)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: TaskKind,
    pub variant: Option<String>,
    pub seed: u64,
    pub checkpoint_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub id: ProtocolId,
    pub space: Space,
    pub variables: VariableSet,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ProtocolResult {
    pub fn from_scores(id: ProtocolId, scores: &[f64]) -> Result<Self> {
        let spec = protocol_spec(id);
        let mean = integrated_fractional_success(scores)?;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
        Ok(Self { id, space: spec.space, variables: spec.variables, n: scores.len(), mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run: RunMeta,
    pub protocols: Vec<ProtocolResult>,
}

impl EvalReport {
    /// Mean of the per-protocol means.
    pub fn mean_score(&self) -> f64 {
        self.protocols.iter().map(|p| p.mean).sum::<f64>() / self.protocols.len().max(1) as f64
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Runs the listed protocols (all twelve for the full pipeline).
pub fn run_protocols(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    protocols: &[ProtocolId],
    n: usize,
    seed: u64,
    run: RunMeta,
) -> Result<EvalReport> {
    let protocols = protocols
        .iter()
        .map(|&id| ProtocolResult::from_scores(id, &run_protocol(policy, setup, id, n, seed)?))
        .collect::<Result<_>>()?;
    Ok(EvalReport { run, protocols })
}

pub fn run_pipeline(policy: &mut dyn Policy, setup: &EvalSetup, n: usize, seed: u64, run: RunMeta) -> Result<EvalReport> {
    run_protocols(policy, setup, &ProtocolId::all().collect::<Vec<_>>(), n, seed, run)
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub episode_fs: Vec<f64>,
    /// Environment step at the end of each episode.
    pub env_steps: Vec<u64>,
    /// Means of consecutive full windows.
    pub smoothed: Vec<f64>,
    /// Mean of the trailing incomplete window, if any.
    pub partial: Option<f64>,
}

impl TrainingCurve {
    pub fn last_smoothed(&self) -> Option<f64> {
        self.smoothed.last().copied()
    }

    /// Environment step at the end of full window `i`.
    pub fn window_end_step(&self, i: usize) -> u64 {
        self.env_steps[(i + 1) * SMOOTHING_WINDOW - 1]
    }
}

pub fn smooth_curve(log: &[LogRow]) -> TrainingCurve {
    let episode_fs: Vec<f64> = log.iter().map(|r| r.frac_success).collect();
    let chunks = episode_fs.chunks(SMOOTHING_WINDOW);
    let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    let smoothed = chunks.clone().filter(|c| c.len() == SMOOTHING_WINDOW).map(mean).collect();
    let partial = chunks.last().filter(|c| c.len() < SMOOTHING_WINDOW).map(mean);
    TrainingCurve { env_steps: log.iter().map(|r| r.env_steps).collect(), episode_fs, smoothed, partial }
}

pub fn read_train_log(run_dir: &Path) -> Result<TrainingCurve> {
    Ok(smooth_curve(&read_log(&run_dir.join("train_log.csv"))?))
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

const PALETTE: [plotters::style::RGBColor; 6] = [
    plotters::style::RGBColor(31, 119, 180),
    plotters::style::RGBColor(255, 127, 14),
    plotters::style::RGBColor(44, 160, 44),
    plotters::style::RGBColor(214, 39, 40),
    plotters::style::RGBColor(148, 103, 189),
    plotters::style::RGBColor(140, 86, 75),
];

/// Writes `training_curves.svg` (smoothed curves overlaid) and, when reports
/// are given, `protocols.svg` (per-protocol grouped bars) into `dir`.
pub fn emit_plots(curves: &[(String, TrainingCurve)], reports: &[(String, EvalReport)], dir: &Path) -> Result<()> {
    use plotters::prelude::*;
    std::fs::create_dir_all(dir)?;

    let curve_path = dir.join("training_curves.svg");
    let root = SVGBackend::new(&curve_path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let max_x = curves.iter().map(|(_, c)| c.smoothed.len()).max().unwrap_or(1).max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_x, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("episodes / 100")
        .y_desc("fractional success")
        .draw()
        .map_err(plot_err)?;
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(c.smoothed.iter().enumerate().map(|(k, v)| (k as f64 + 1.0, *v)), color))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;

    if reports.is_empty() {
        return Ok(());
    }
    let bar_path = dir.join("protocols.svg");
    let root = SVGBackend::new(&bar_path, (1000, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n_protocols = reports.iter().map(|(_, r)| r.protocols.len()).max().unwrap_or(0);
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..n_protocols as f64, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n_protocols)
        .x_label_formatter(&|x| format!("P{}", x.floor() as usize))
        .y_desc("integrated fractional success")
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / reports.len() as f64;
    for (i, (label, report)) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(report.protocols.iter().map(|p| {
                let x0 = p.id.index() as f64 + 0.1 + i as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, p.mean)], color.filled())
            }))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
