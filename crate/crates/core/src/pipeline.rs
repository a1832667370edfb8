//! Training orchestration: counterfactual phases, agent training, iteration
//! training with representation refreshes, checkpoints and transfer.
//!
//! A run directory holds
//!
//! ```text
//! config.json            echoed RunConfig
//! train_log.csv          episode, env_steps, frac_success, reward, rep_version
//! rep_v<K>.json          representation produced by refresh round K
//! checkpoints/step_<N>/  state.bin + manifest.json (+ rep.json, cf/)
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::cf_model::{extract_causal_rep, generate_cf_batch, CfConfig, CfEpisode, CfModel, CfSample, ConfounderVector};
use crate::env::{Action, BlockWorld, Observation, TaskKind, TaskSpec, WorldState};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::policy::{Policy, ScriptedPicker, ScriptedPusher};
use crate::rng;
use crate::sac::{augment_observation, ReplayBuffer, SacAgent, SacConfig, Transition};
use crate::scm::{apply_intervention, CausalVariables, Intervention, Space, Variable, VariableSet, VariableSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoIntervene,
    Intervene,
    CounterfactualIntervene,
    CausalcfIter,
    TransferRepIntervene,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NoIntervene,
        Variant::Intervene,
        Variant::CounterfactualIntervene,
        Variant::CausalcfIter,
        Variant::TransferRepIntervene,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoIntervene => "no_intervene",
            Variant::Intervene => "intervene",
            Variant::CounterfactualIntervene => "counterfactual_intervene",
            Variant::CausalcfIter => "causalcf_iter",
            Variant::TransferRepIntervene => "transfer_rep_intervene",
        }
    }

    /// Whether observations carry a representation.
    pub fn uses_rep(self) -> bool {
        !matches!(self, Variant::NoIntervene | Variant::Intervene)
    }

    /// Whether the run trains a counterfactual model itself.
    pub fn trains_cf_model(self) -> bool {
        matches!(self, Variant::CounterfactualIntervene | Variant::CausalcfIter)
    }

    pub fn intervenes(self) -> bool {
        self != Variant::NoIntervene
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown variant {s:?}")))
    }
}

/// Constants of one counterfactual training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfPhaseConfig {
    pub epochs: usize,
    pub iterations: usize,
    pub steps: usize,
    /// Prior samples replayed with each fresh one.
    pub replay_pool: usize,
    /// Largest number of policy steps before the observed window.
    pub warmup_max: usize,
    pub model: CfConfig,
}

impl Default for CfPhaseConfig {
    fn default() -> Self {
        Self { epochs: 15, iterations: 40, steps: 30, replay_pool: 8, warmup_max: 60, model: CfConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub variant: Variant,
    pub seed: u64,
    pub total_steps: u64,
    pub iter_start: u64,
    pub iter_every: u64,
    pub checkpoint_every: u64,
    pub episode_length: usize,
    /// Training space; only `A` is accepted.
    pub space: Space,
    pub cf: CfPhaseConfig,
    pub sac: SacConfig,
    /// Representation file (or run directory) for the transfer variant.
    pub source_rep: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk(TaskKind::Pushing, Variant::Intervene)
    }
}

impl RunConfig {
    /// Desk-scale schedule keeping the 1.5/7 start and 0.5/7 period ratios.
    pub fn desk(task: TaskKind, variant: Variant) -> Self {
        Self {
            task,
            variant,
            seed: 0,
            total_steps: 140_000,
            iter_start: 30_000,
            iter_every: 10_000,
            checkpoint_every: 10_000,
            episode_length: 250,
            space: Space::A,
            cf: CfPhaseConfig::default(),
            sac: SacConfig { buffer_size: 200_000, ..SacConfig::default() },
            source_rep: None,
        }
    }

    /// Full-length schedule.
    pub fn paper(task: TaskKind, variant: Variant) -> Self {
        Self {
            total_steps: 7_000_000,
            iter_start: 1_500_000,
            iter_every: 500_000,
            checkpoint_every: 500_000,
            sac: SacConfig::default(),
            ..Self::desk(task, variant)
        }
    }

    /// Parses a TOML file whose keys override the desk preset, nested tables
    /// included.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(Self::default(), text)
    }

    /// Like [`RunConfig::from_toml`] with another preset underneath.
    pub fn from_toml_over(preset: Self, text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let mut base = toml::Table::try_from(preset).map_err(|e| Error::Configuration(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.space != Space::A {
            return bad("training runs in space A".into());
        }
        if self.total_steps == 0 || self.iter_every == 0 || self.checkpoint_every == 0 {
            return bad("total_steps, iter_every and checkpoint_every must be positive".into());
        }
        if self.variant == Variant::CausalcfIter && self.iter_start >= self.total_steps {
            return bad(format!("iter_start {} must be below total_steps {}", self.iter_start, self.total_steps));
        }
        if self.cf.epochs == 0 || self.cf.iterations == 0 || self.cf.steps == 0 {
            return bad("counterfactual phase needs epochs, iterations and steps".into());
        }
        if self.cf.steps + self.cf.warmup_max > self.episode_length {
            return bad("counterfactual window exceeds the episode".into());
        }
        if self.variant == Variant::TransferRepIntervene && self.source_rep.is_none() {
            return bad("transfer_rep_intervene needs source_rep".into());
        }
        TaskSpec::new(self.task).with_episode_length(self.episode_length).validate()?;
        self.cf.model.validate()?;
        self.sac.validate()
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::new(self.task).with_episode_length(self.episode_length)
    }

    /// Environment steps after which the representation is refreshed.
    pub fn refresh_steps(&self) -> Vec<u64> {
        if self.variant != Variant::CausalcfIter {
            return Vec::new();
        }
        (0..).map(|k| self.iter_start + k * self.iter_every).take_while(|&s| s < self.total_steps).collect()
    }

    pub fn checkpoint_steps(&self) -> Vec<u64> {
        (1..).map(|k| k * self.checkpoint_every).take_while(|&s| s <= self.total_steps).collect()
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// One row of `train_log.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: u64,
    pub env_steps: u64,
    pub frac_success: f64,
    pub reward: f64,
    pub rep_version: Option<u32>,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_reader(std::fs::File::open(path)?);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Deterministic agent policy on representation-augmented observations.
pub struct AgentPolicy<'a> {
    pub agent: &'a SacAgent,
    pub rep: Option<&'a ConfounderVector>,
}

impl Policy for AgentPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        let width = self.rep.map_or(0, |r| r.width);
        let aug = augment_observation(obs.as_slice(), self.rep, width).expect("representation validated on load");
        // The generator is unused in deterministic mode.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.agent.select_action(&aug, true, &mut rng).expect("agent width matches representation")
    }
}

/// Stochastic agent policy used to regenerate counterfactual data.
struct SamplingPolicy<'a> {
    agent: &'a SacAgent,
    rep: Option<&'a ConfounderVector>,
    rng: ChaCha8Rng,
}

impl Policy for SamplingPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        let width = self.rep.map_or(0, |r| r.width);
        let aug = augment_observation(obs.as_slice(), self.rep, width).expect("representation validated on load");
        self.agent.select_action(&aug, false, &mut self.rng).expect("agent width matches representation")
    }
}

pub fn bootstrap_policy(task: TaskKind) -> Box<dyn Policy> {
    match task {
        TaskKind::Pushing => Box::new(ScriptedPusher),
        TaskKind::Picking => Box::new(ScriptedPicker),
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_ACT: u64 = 1;
const STREAM_EPISODES: u64 = 2;
const STREAM_CF: u64 = 1 << 20;
const STREAM_CF_POLICY: u64 = 2 << 20;

/// Outcome of one counterfactual phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CfPhaseReport {
    pub rep: ConfounderVector,
    pub updates: usize,
    pub losses: Vec<f64>,
}

fn goal_and_mass() -> VariableSet {
    [Variable::GoalPose, Variable::BlockMass].into_iter().collect()
}

/// Factual goal pose, block mass and floor friction drawn from space A, with
/// a uniform warm-up in `0..=warmup_max`.
pub fn phase_episode<R: Rng>(task: TaskKind, intervention: &Intervention, warmup_max: usize, rng: &mut R) -> Result<CfEpisode> {
    let space = VariableSpace::for_task(task);
    let hidden: VariableSet = [Variable::GoalPose, Variable::BlockMass, Variable::FloorFriction].into_iter().collect();
    let factual = apply_intervention(&CausalVariables::defaults(task), &space.sample_with(Space::A, &hidden, rng))?;
    Ok(CfEpisode { factual, intervention: intervention.clone(), warmup: rng.random_range(0..=warmup_max) })
}

/// Goal-pose and block-mass intervention from space A.
pub fn phase_intervention<R: Rng>(task: TaskKind, rng: &mut R) -> Intervention {
    VariableSpace::for_task(task).sample_with(Space::A, &goal_and_mass(), rng)
}

/// Runs `epochs x iterations` training steps on freshly generated samples.
///
/// Each epoch draws one goal-pose and block-mass intervention from space A.
/// Each iteration draws a factual goal pose, block mass and floor friction
/// from space A, so friction acts as a hidden confounder shared by both
/// branches, then trains on the fresh sample plus up to `replay_pool` prior
/// samples. The representation is the mean estimate over the final epoch.
pub fn train_counterfactual_phase(
    cfg: &CfPhaseConfig,
    task: TaskSpec,
    model: &mut CfModel,
    policy: &mut dyn Policy,
    seed: u64,
    version: u32,
) -> Result<CfPhaseReport> {
    let mut env = BlockWorld::new(task)?;
    let mut rng = stream_rng(seed, STREAM_CF + version as u64);
    let mut pool: Vec<CfSample> = Vec::with_capacity(cfg.replay_pool);
    let mut last_epoch = Vec::with_capacity(cfg.iterations);
    let mut losses = Vec::with_capacity(cfg.epochs * cfg.iterations);
    for epoch in 0..cfg.epochs {
        let intervention = phase_intervention(task.task, &mut rng);
        last_epoch.clear();
        for _ in 0..cfg.iterations {
            let episode = phase_episode(task.task, &intervention, cfg.warmup_max, &mut rng)?;
            let episode_seed = rng.random::<u64>();
            let mut sampler = |_| Ok(episode.clone());
            let sample = generate_cf_batch(&mut env, policy, &mut sampler, cfg.steps, 1, episode_seed)?.remove(0);
            let mut batch = Vec::with_capacity(pool.len() + 1);
            batch.push(sample.clone());
            batch.extend(pool.iter().cloned());
            losses.push(model.training_step(&batch)?);
            if cfg.replay_pool > 0 {
                if pool.len() == cfg.replay_pool {
                    pool.remove(0);
                }
                pool.push(sample.clone());
            }
            if epoch + 1 == cfg.epochs {
                last_epoch.push(sample);
            }
        }
    }
    let rep = extract_causal_rep(model, &last_epoch, version)?;
    Ok(CfPhaseReport { rep, updates: losses.len(), losses })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct EpisodeProgress {
    obs: [f64; crate::env::OBS_WIDTH],
    reward: f64,
    fs_sum: f64,
    steps: u64,
}

/// Summary of a finished (or resumed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub env_steps: u64,
    pub episodes: u64,
    pub refresh_steps: Vec<u64>,
    pub checkpoint_steps: Vec<u64>,
    pub rep_version: Option<u32>,
    /// Counterfactual models constructed by this process for the run.
    pub cf_models_built: u32,
    pub cf_updates: u64,
    pub final_checkpoint: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    env_steps: u64,
    episode: u64,
    rep_version: Option<u32>,
    refresh_steps: Vec<u64>,
    cf_updates: u64,
    env_state: Option<WorldState>,
    progress: Option<EpisodeProgress>,
    config: RunConfig,
}

/// Training state for one run; stepping it is the only way runs advance.
pub struct Trainer {
    config: RunConfig,
    out: PathBuf,
    env: BlockWorld,
    agent: SacAgent,
    buffer: ReplayBuffer,
    rep: Option<ConfounderVector>,
    cf: Option<CfModel>,
    act_rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    env_steps: u64,
    episode: u64,
    progress: Option<EpisodeProgress>,
    log: Vec<LogRow>,
    goals: Vec<Vec2>,
    refresh_steps: Vec<u64>,
    checkpoint_steps: Vec<u64>,
    cf_models_built: u32,
    cf_updates: u64,
}

impl Trainer {
    /// Fresh trainer. `rep` must be present exactly when the variant uses one;
    /// variants that train a counterfactual model pass `None` and get one from
    /// [`Trainer::bootstrap`].
    fn new(config: RunConfig, out: &Path, rep: Option<ConfounderVector>) -> Result<Self> {
        config.validate()?;
        let width = match (&rep, config.variant.uses_rep()) {
            (Some(r), true) => {
                r.validate()?;
                r.width
            }
            (None, true) if config.variant.trains_cf_model() => config.cf.model.confounder_width,
            (None, false) => 0,
            (Some(_), false) => {
                return Err(Error::Configuration(format!("variant {} takes no representation", config.variant)))
            }
            (None, true) => {
                return Err(Error::Configuration(format!("variant {} needs a representation", config.variant)))
            }
        };
        let obs_width = crate::env::OBS_WIDTH + width;
        std::fs::create_dir_all(out)?;
        Ok(Self {
            env: BlockWorld::new(config.task_spec())?,
            agent: SacAgent::new(config.sac.clone(), obs_width, config.seed)?,
            buffer: ReplayBuffer::new(obs_width, config.sac.buffer_size),
            act_rng: stream_rng(config.seed, STREAM_ACT),
            episode_rng: stream_rng(config.seed, STREAM_EPISODES),
            out: out.to_path_buf(),
            rep,
            cf: None,
            env_steps: 0,
            episode: 0,
            progress: None,
            log: Vec::new(),
            goals: Vec::new(),
            refresh_steps: Vec::new(),
            checkpoint_steps: Vec::new(),
            cf_models_built: 0,
            cf_updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn rep(&self) -> Option<&ConfounderVector> {
        self.rep.as_ref()
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    /// Goal centre of every episode started by this process.
    pub fn episode_goals(&self) -> &[Vec2] {
        &self.goals
    }

    fn obs_width(&self) -> usize {
        self.agent.obs_width()
    }

    fn augment(&self, obs: &Observation) -> Result<Vec<f64>> {
        augment_observation(obs.as_slice(), self.rep.as_ref(), self.obs_width() - crate::env::OBS_WIDTH)
    }

    /// First counterfactual phase, driven by the scripted policy.
    fn bootstrap(&mut self) -> Result<()> {
        let mut model = CfModel::new(self.config.cf.model, self.config.seed ^ 0x5eed_cf)?;
        self.cf_models_built += 1;
        let mut policy = bootstrap_policy(self.config.task);
        let report =
            train_counterfactual_phase(&self.config.cf, self.config.task_spec(), &mut model, policy.as_mut(), self.config.seed, 0)?;
        self.cf_updates += report.updates as u64;
        report.rep.save(&self.out.join("rep_v0.json"))?;
        self.rep = Some(report.rep);
        self.cf = Some(model);
        Ok(())
    }

    /// Continues counterfactual training on data from the current policy and
    /// replaces the representation.
    fn refresh(&mut self) -> Result<()> {
        let version = self.rep.as_ref().map_or(0, |r| r.version) + 1;
        let model = self.cf.as_mut().ok_or_else(|| Error::Configuration("refresh without a cf model".into()))?;
        let mut policy = SamplingPolicy {
            agent: &self.agent,
            rep: self.rep.as_ref(),
            rng: stream_rng(self.config.seed, STREAM_CF_POLICY + version as u64),
        };
        let report =
            train_counterfactual_phase(&self.config.cf, self.config.task_spec(), model, &mut policy, self.config.seed, version)?;
        self.cf_updates += report.updates as u64;
        report.rep.save(&self.out.join(format!("rep_v{version}.json")))?;
        self.rep = Some(report.rep);
        self.refresh_steps.push(self.env_steps);
        Ok(())
    }

    fn begin_episode(&mut self) -> Result<Observation> {
        let mut vars = CausalVariables::defaults(self.config.task);
        if self.config.variant.intervenes() {
            let space = VariableSpace::for_task(self.config.task);
            let goal: VariableSet = [Variable::GoalPose].into_iter().collect();
            vars = apply_intervention(&vars, &space.sample_with(Space::A, &goal, &mut self.episode_rng))?;
        }
        self.goals.push(self.config.task.goal_center(&vars));
        let obs = self.env.reset(&vars, self.config.seed.wrapping_add(self.episode))?;
        self.progress = Some(EpisodeProgress { obs: obs.0, reward: 0.0, fs_sum: 0.0, steps: 0 });
        Ok(obs)
    }

    /// One environment step, its transition, and one update once learning
    /// has started.
    pub fn step(&mut self) -> Result<()> {
        let obs = match self.progress {
            Some(p) => Observation(p.obs),
            None => self.begin_episode()?,
        };
        let aug = self.augment(&obs)?;
        let action = if self.env_steps < self.config.sac.learning_starts {
            let r = &mut self.act_rng;
            Action([r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)])
        } else {
            self.agent.select_action(&aug, false, &mut self.act_rng)?
        };
        let out = self.env.step(&action)?;
        let next = self.augment(&out.observation)?;
        self.buffer.push(&Transition { obs: aug, action, reward: out.reward, next_obs: next, done: out.done })?;
        self.env_steps += 1;
        if self.env_steps >= self.config.sac.learning_starts && self.buffer.len() >= self.config.sac.batch_size {
            self.agent.update(&self.buffer, self.env_steps)?;
        }
        let mut p = self.progress.take().expect("episode in progress");
        p.obs = out.observation.0;
        p.reward += out.reward;
        p.fs_sum += out.info.fractional_success;
        p.steps += 1;
        if out.done {
            self.log.push(LogRow {
                episode: self.episode,
                env_steps: self.env_steps,
                frac_success: p.fs_sum / p.steps as f64,
                reward: p.reward,
                rep_version: self.rep.as_ref().map(|r| r.version),
            });
            self.episode += 1;
        } else {
            self.progress = Some(p);
        }
        Ok(())
    }

    /// Runs to `total_steps`, refreshing and checkpointing on schedule.
    pub fn run(&mut self) -> Result<RunSummary> {
        let refresh_at = self.config.refresh_steps();
        let checkpoint_every = self.config.checkpoint_every;
        while self.env_steps < self.config.total_steps {
            self.step()?;
            if refresh_at.binary_search(&self.env_steps).is_ok() {
                self.refresh()?;
            }
            if self.env_steps % checkpoint_every == 0 {
                self.save_checkpoint()?;
            }
        }
        let final_dir = self.checkpoint_dir(self.env_steps);
        if !final_dir.join("manifest.json").exists() {
            self.save_checkpoint()?;
        }
        write_log(&self.out.join("train_log.csv"), &self.log)?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            out_dir: self.out.clone(),
            env_steps: self.env_steps,
            episodes: self.episode,
            refresh_steps: self.refresh_steps.clone(),
            checkpoint_steps: self.checkpoint_steps.clone(),
            rep_version: self.rep.as_ref().map(|r| r.version),
            cf_models_built: self.cf_models_built,
            cf_updates: self.cf_updates,
            final_checkpoint: self.checkpoint_dir(self.env_steps),
        }
    }

    fn checkpoint_dir(&self, step: u64) -> PathBuf {
        self.out.join("checkpoints").join(format!("step_{step}"))
    }

    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        let dir = self.checkpoint_dir(self.env_steps);
        std::fs::create_dir_all(&dir)?;
        let mut a = Archive::new();
        self.agent.to_archive(&mut a, "agent");
        self.buffer.to_archive(&mut a, "replay");
        a.push_words("rng.act", &rng::to_words(&self.act_rng));
        a.push_words("rng.episodes", &rng::to_words(&self.episode_rng));
        a.save(&dir.join("state.bin"))?;
        if let Some(rep) = &self.rep {
            rep.save(&dir.join("rep.json"))?;
        }
        if let Some(cf) = &self.cf {
            cf.save(&dir.join("cf"))?;
        }
        write_log(&dir.join("train_log.csv"), &self.log)?;
        let manifest = Manifest {
            format_version: crate::archive::FORMAT_VERSION,
            env_steps: self.env_steps,
            episode: self.episode,
            rep_version: self.rep.as_ref().map(|r| r.version),
            refresh_steps: self.refresh_steps.clone(),
            cf_updates: self.cf_updates,
            env_state: self.progress.map(|_| self.env.snapshot()).transpose()?,
            progress: self.progress,
            config: self.config.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        write_log(&self.out.join("train_log.csv"), &self.log)?;
        self.checkpoint_steps.push(self.env_steps);
        Ok(dir)
    }

    /// Restores a checkpoint into `out`; `total_steps` may extend the run.
    pub fn resume(checkpoint: &Path, out: &Path, total_steps: Option<u64>) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(checkpoint.join("manifest.json"))?)?;
        let mut config = manifest.config;
        if let Some(t) = total_steps {
            config.total_steps = t;
        }
        let rep = match checkpoint.join("rep.json") {
            p if p.exists() => Some(ConfounderVector::load(&p)?),
            _ => None,
        };
        let a = Archive::load(&checkpoint.join("state.bin"))?;
        let mut t = Trainer::new(config.clone(), out, rep.filter(|_| config.variant.uses_rep()))?;
        t.agent = SacAgent::from_archive(config.sac.clone(), &a, "agent")?;
        t.buffer = ReplayBuffer::from_archive(&a, "replay")?;
        t.act_rng = rng::from_words(&a.words("rng.act")?)?;
        t.episode_rng = rng::from_words(&a.words("rng.episodes")?)?;
        if checkpoint.join("cf").exists() {
            t.cf = Some(CfModel::load(&checkpoint.join("cf"))?);
        }
        t.env_steps = manifest.env_steps;
        t.episode = manifest.episode;
        t.refresh_steps = manifest.refresh_steps;
        t.cf_updates = manifest.cf_updates;
        t.progress = manifest.progress;
        if let Some(state) = manifest.env_state {
            t.env.restore(state)?;
        }
        t.log = read_log(&checkpoint.join("train_log.csv"))?;
        Ok(t)
    }

    /// Agent and representation stored in a checkpoint, for evaluation.
    pub fn load_policy(checkpoint: &Path) -> Result<(RunConfig, SacAgent, Option<ConfounderVector>, u64)> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(checkpoint.join("manifest.json"))?)?;
        let a = Archive::load(&checkpoint.join("state.bin"))?;
        let agent = SacAgent::from_archive(manifest.config.sac.clone(), &a, "agent")?;
        let rep = match checkpoint.join("rep.json") {
            p if p.exists() => Some(ConfounderVector::load(&p)?),
            _ => None,
        };
        Ok((manifest.config, agent, rep, manifest.env_steps))
    }
}

fn write_config(config: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// Episodic agent training with a fixed representation (or none).
pub fn train_agent_phase(config: &RunConfig, rep: Option<ConfounderVector>, out: &Path) -> Result<(Trainer, RunSummary)> {
    if config.variant.trains_cf_model() && config.variant == Variant::CausalcfIter {
        return Err(Error::Configuration("causalcf_iter runs through run_iteration_training".into()));
    }
    write_config(config, out)?;
    let mut t = Trainer::new(config.clone(), out, rep)?;
    let summary = t.run()?;
    Ok((t, summary))
}

/// Bootstrap counterfactual phase, then agent training interleaved with
/// refreshes at `iter_start, iter_start + iter_every, ...`.
pub fn run_iteration_training(config: &RunConfig, out: &Path) -> Result<(Trainer, RunSummary)> {
    if config.variant != Variant::CausalcfIter {
        return Err(Error::Configuration(format!("iteration training needs causalcf_iter, got {}", config.variant)));
    }
    write_config(config, out)?;
    let mut t = Trainer::new(config.clone(), out, None)?;
    t.bootstrap()?;
    let summary = t.run()?;
    Ok((t, summary))
}

/// The newest `rep_v<K>.json` of a run directory, or the file itself.
pub fn load_rep(source: &Path) -> Result<ConfounderVector> {
    if source.is_file() {
        return ConfounderVector::load(source).map_err(|e| Error::Transfer(format!("{}: {e}", source.display())));
    }
    let newest = std::fs::read_dir(source)
        .map_err(|e| Error::Transfer(format!("{}: {e}", source.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let k: u32 = name.strip_prefix("rep_v")?.strip_suffix(".json")?.parse().ok()?;
            Some((k, e.path()))
        })
        .max_by_key(|(k, _)| *k)
        .ok_or_else(|| Error::Transfer(format!("no representation in {}", source.display())))?;
    ConfounderVector::load(&newest.1).map_err(|e| Error::Transfer(format!("{}: {e}", newest.1.display())))
}

/// Trains a fresh agent on `config.task` with a representation taken from
/// another run, held fixed, under per-episode goal interventions.
pub fn transfer_rep(source: &Path, config: &RunConfig, out: &Path) -> Result<(Trainer, RunSummary)> {
    let rep = load_rep(source)?;
    if rep.width != config.cf.model.confounder_width {
        return Err(Error::Transfer(format!(
            "representation width {} (expected {})",
            rep.width, config.cf.model.confounder_width
        )));
    }
    let config = RunConfig { variant: Variant::TransferRepIntervene, source_rep: Some(source.to_path_buf()), ..config.clone() };
    train_agent_phase(&config, Some(rep), out)
}

/// Dispatches on the variant.
pub fn run(config: &RunConfig, out: &Path) -> Result<(Trainer, RunSummary)> {
    match config.variant {
        Variant::NoIntervene | Variant::Intervene => train_agent_phase(config, None, out),
        Variant::CounterfactualIntervene => {
            write_config(config, out)?;
            let mut t = Trainer::new(config.clone(), out, None)?;
            t.bootstrap()?;
            let summary = t.run()?;
            Ok((t, summary))
        }
        Variant::CausalcfIter => run_iteration_training(config, out),
        Variant::TransferRepIntervene => {
            let source = config.source_rep.clone().ok_or_else(|| Error::Configuration("missing source_rep".into()))?;
            transfer_rep(&source, config, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> RunConfig {
        let mut c = RunConfig::desk(TaskKind::Pushing, variant);
        c.total_steps = 600;
        c.iter_start = 300;
        c.iter_every = 200;
        c.checkpoint_every = 200;
        c.episode_length = 100;
        c.cf = CfPhaseConfig {
            epochs: 2,
            iterations: 3,
            steps: 5,
            replay_pool: 2,
            warmup_max: 10,
            model: CfConfig { confounder_width: 4, hidden: 8, ..CfConfig::default() },
        };
        c.sac = SacConfig { buffer_size: 1000, batch_size: 16, learning_starts: 100, hidden: vec![16, 16], ..SacConfig::default() };
        c
    }

    #[test]
    fn desk_schedule() {
        let c = RunConfig::desk(TaskKind::Pushing, Variant::CausalcfIter);
        let r = c.refresh_steps();
        assert_eq!(r.len(), 11);
        assert_eq!(r.first(), Some(&30_000));
        assert_eq!(r.last(), Some(&130_000));
        assert!(r.windows(2).all(|w| w[1] - w[0] == 10_000));
        assert_eq!(c.checkpoint_steps().len(), 14);
    }

    #[test]
    fn paper_schedule() {
        let r = RunConfig::paper(TaskKind::Pushing, Variant::CausalcfIter).refresh_steps();
        assert_eq!(r.len(), 11);
        assert_eq!((r[0], r[10]), (1_500_000, 6_500_000));
    }

    #[test]
    fn schedule_validation() {
        let mut c = RunConfig::desk(TaskKind::Pushing, Variant::CausalcfIter);
        c.iter_start = c.total_steps;
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        let mut c = RunConfig::default();
        c.space = Space::B;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_overrides_desk_defaults() {
        let c = RunConfig::from_toml("variant = \"causalcf_iter\"\ntotal_steps = 50000\n[sac]\nbatch_size = 128\n").unwrap();
        assert_eq!(c.variant, Variant::CausalcfIter);
        assert_eq!(c.total_steps, 50_000);
        assert_eq!(c.sac.batch_size, 128);
        assert_eq!(c.sac.buffer_size, 200_000);
        assert_eq!(c.cf.epochs, 15);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn degenerate_phase_gives_sample_estimate() {
        let cfg = CfPhaseConfig { epochs: 1, iterations: 1, steps: 5, ..tiny(Variant::CausalcfIter).cf };
        let mut model = CfModel::new(cfg.model, 0).unwrap();
        let report =
            train_counterfactual_phase(&cfg, TaskSpec::new(TaskKind::Pushing), &mut model, &mut ScriptedPusher, 3, 0).unwrap();
        assert_eq!(report.updates, 1);
        assert_eq!(model.training_steps(), 1);
        assert_eq!(report.rep.version, 0);
        assert_eq!(report.rep.width, 4);
    }

    #[test]
    fn phase_update_count() {
        let cfg = tiny(Variant::CausalcfIter).cf;
        let mut model = CfModel::new(cfg.model, 0).unwrap();
        let report =
            train_counterfactual_phase(&cfg, TaskSpec::new(TaskKind::Pushing), &mut model, &mut ScriptedPusher, 3, 0).unwrap();
        assert_eq!(report.updates, cfg.epochs * cfg.iterations);
    }

    #[test]
    fn no_intervene_keeps_goal_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let (t, s) = train_agent_phase(&tiny(Variant::NoIntervene), None, dir.path()).unwrap();
        assert_eq!(s.episodes, 6);
        assert!(t.episode_goals().windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.cf_models_built, 0);
    }

    #[test]
    fn intervene_draws_one_goal_per_episode() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(Variant::Intervene);
        c.total_steps = 1000;
        c.checkpoint_every = 1000;
        let (t, s) = train_agent_phase(&c, None, dir.path()).unwrap();
        assert_eq!(t.episode_goals().len(), 10);
        let space = VariableSpace::for_task(TaskKind::Pushing);
        for g in t.episode_goals() {
            assert!(space.bounds(Space::A).goal_x.contains(g.x));
        }
        assert!(t.episode_goals().windows(2).all(|w| w[0] != w[1]));
        assert_eq!(s.cf_models_built, 0);
    }

    #[test]
    fn rep_presence_must_match_variant() {
        let dir = tempfile::tempdir().unwrap();
        let rep = ConfounderVector::zeros(4);
        assert!(matches!(
            train_agent_phase(&tiny(Variant::Intervene), Some(rep), dir.path()),
            Err(Error::Configuration(_))
        ));
        let mut c = tiny(Variant::TransferRepIntervene);
        c.source_rep = Some(dir.path().join("rep.json"));
        assert!(matches!(train_agent_phase(&c, None, dir.path()), Err(Error::Configuration(_))));
    }

    #[test]
    fn iteration_training_refreshes_on_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(Variant::CausalcfIter);
        let (t, s) = run_iteration_training(&c, dir.path()).unwrap();
        assert_eq!(s.refresh_steps, vec![300, 500]);
        assert_eq!(s.rep_version, Some(2));
        assert_eq!(s.cf_models_built, 1);
        assert_eq!(s.cf_updates, 3 * 6);
        assert_eq!(t.agent().obs_width(), 15);
        for k in 0..=2 {
            assert!(dir.path().join(format!("rep_v{k}.json")).exists());
        }
        assert_eq!(s.checkpoint_steps, vec![200, 400, 600]);
        // Versions only change at refresh boundaries.
        for row in t.log() {
            let expect = if row.env_steps <= 300 { 0 } else if row.env_steps <= 500 { 1 } else { 2 };
            assert_eq!(row.rep_version, Some(expect), "episode ending at {}", row.env_steps);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let full = tempfile::tempdir().unwrap();
        let part = tempfile::tempdir().unwrap();
        let resumed = tempfile::tempdir().unwrap();
        let mut c = tiny(Variant::CausalcfIter);
        let (a, _) = run_iteration_training(&c, full.path()).unwrap();
        c.total_steps = 400;
        c.iter_start = 300;
        let (_, s) = run_iteration_training(&c, part.path()).unwrap();
        let mut t = Trainer::resume(&s.final_checkpoint, resumed.path(), Some(600)).unwrap();
        t.run().unwrap();
        assert_eq!(t.log(), a.log());
        assert_eq!(t.agent(), a.agent());
        assert_eq!(t.rep(), a.rep());
        let la = std::fs::read(full.path().join("train_log.csv")).unwrap();
        let lb = std::fs::read(resumed.path().join("train_log.csv")).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn resume_mid_episode() {
        let full = tempfile::tempdir().unwrap();
        let part = tempfile::tempdir().unwrap();
        let resumed = tempfile::tempdir().unwrap();
        let mut c = tiny(Variant::Intervene);
        c.checkpoint_every = 150;
        c.total_steps = 450;
        let (a, _) = train_agent_phase(&c, None, full.path()).unwrap();
        c.total_steps = 150;
        let (_, s) = train_agent_phase(&c, None, part.path()).unwrap();
        let mut t = Trainer::resume(&s.final_checkpoint, resumed.path(), Some(450)).unwrap();
        t.run().unwrap();
        assert_eq!(t.log(), a.log());
        assert_eq!(t.agent(), a.agent());
    }

    #[test]
    fn transfer_requires_rep() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(Variant::Intervene);
        let missing = dir.path().join("nothing");
        assert!(matches!(transfer_rep(&missing, &c, dir.path()), Err(Error::Transfer(_))));
        let rep = ConfounderVector::new(vec![0.1, -0.2, 0.3, 0.4], 7).unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        rep.save(&src.join("rep_v7.json")).unwrap();
        ConfounderVector::zeros(4).save(&src.join("rep_v2.json")).unwrap();
        assert_eq!(load_rep(&src).unwrap(), rep);
        let mut picking = tiny(Variant::Intervene);
        picking.task = TaskKind::Picking;
        let (t, s) = transfer_rep(&src, &picking, &dir.path().join("out")).unwrap();
        assert_eq!(t.rep(), Some(&rep));
        assert_eq!(t.agent().obs_width(), 15);
        assert_eq!(s.cf_models_built, 0);
        let wide = ConfounderVector::zeros(6);
        wide.save(&dir.path().join("wide.json")).unwrap();
        assert!(matches!(transfer_rep(&dir.path().join("wide.json"), &picking, dir.path()), Err(Error::Transfer(_))));
    }
}
