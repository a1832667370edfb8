//! Soft actor-critic on representation-augmented observations.
//!
//! The entropy coefficient is fixed. Networks run in `f32`; everything is
//! single-threaded and seeded, so identical inputs give identical updates.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::cf_model::ConfounderVector;
use crate::env::{Action, ACTION_WIDTH, OBS_WIDTH};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpAdam};

const LOG_STD_MIN: f32 = -20.0;
const LOG_STD_MAX: f32 = 2.0;
const SQUASH_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub ent_coef: f64,
    /// Accepted for completeness; with a fixed `ent_coef` it has no effect.
    pub target_entropy: String,
    pub learning_rate: f64,
    pub buffer_size: usize,
    pub learning_starts: u64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 1e-3,
            ent_coef: 1e-3,
            target_entropy: "auto".into(),
            learning_rate: 1e-4,
            buffer_size: 1_000_000,
            learning_starts: 1000,
            batch_size: 256,
            hidden: vec![64, 64],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.ent_coef >= 0.0 && self.ent_coef.is_finite()) {
            return bad("ent_coef must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("buffer_size, batch_size and hidden widths must be positive");
        }
        if self.batch_size > self.buffer_size {
            return bad("batch_size exceeds buffer_size");
        }
        Ok(())
    }
}

/// `[obs ∥ rep]`; without a representation the observation is returned as is.
pub fn augment_observation(obs: &[f64], rep: Option<&ConfounderVector>, width: usize) -> Result<Vec<f64>> {
    if obs.len() != OBS_WIDTH {
        return Err(Error::Shape(format!("observation width {} (expected {OBS_WIDTH})", obs.len())));
    }
    let mut out = obs.to_vec();
    match rep {
        Some(rep) => {
            rep.validate()?;
            if rep.width != width {
                return Err(Error::Shape(format!("representation width {} (expected {width})", rep.width)));
            }
            out.extend_from_slice(&rep.values);
        }
        None if width != 0 => {
            return Err(Error::Shape(format!("missing representation of width {width}")));
        }
        None => {}
    }
    Ok(out)
}

/// Soft Bellman target for one transition.
pub fn bellman_target(reward: f64, done: bool, gamma: f64, min_target_q: f64, alpha: f64, next_log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_target_q - alpha * next_log_prob)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO store of transitions in flat `f32` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    width: usize,
    capacity: usize,
    len: usize,
    head: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<f32>,
}

/// Columns of a sampled minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Array2<f32>,
    pub actions: Array2<f32>,
    pub rewards: Array2<f32>,
    pub next_obs: Array2<f32>,
    pub dones: Array2<f32>,
}

impl ReplayBuffer {
    pub fn new(width: usize, capacity: usize) -> Self {
        Self {
            width,
            capacity,
            len: 0,
            head: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.width || t.next_obs.len() != self.width {
            return Err(Error::Shape(format!("transition width {} (expected {})", t.obs.len(), self.width)));
        }
        let finite = t.obs.iter().chain(&t.next_obs).chain(&t.action.0).all(|v| v.is_finite()) && t.reward.is_finite();
        if !finite {
            return Err(Error::Shape("non-finite transition".into()));
        }
        let w = self.width;
        let i = self.head;
        let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        if self.len < self.capacity && i == self.rewards.len() {
            self.obs.extend(cast(&t.obs));
            self.next_obs.extend(cast(&t.next_obs));
            self.actions.extend(cast(&t.action.0));
            self.rewards.push(t.reward as f32);
            self.dones.push(if t.done { 1.0 } else { 0.0 });
        } else {
            self.obs[i * w..(i + 1) * w].copy_from_slice(&cast(&t.obs));
            self.next_obs[i * w..(i + 1) * w].copy_from_slice(&cast(&t.next_obs));
            self.actions[i * ACTION_WIDTH..(i + 1) * ACTION_WIDTH].copy_from_slice(&cast(&t.action.0));
            self.rewards[i] = t.reward as f32;
            self.dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Slot indices from oldest to newest.
    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.head };
        (0..self.len).map(move |k| (start + k) % self.capacity)
    }

    pub fn reward_at(&self, slot: usize) -> f32 {
        self.rewards[slot]
    }

    pub fn obs_at(&self, slot: usize) -> &[f32] {
        &self.obs[slot * self.width..(slot + 1) * self.width]
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n > self.len || self.len == 0 {
            return Err(Error::NotReady(format!("{} transitions stored, {n} requested", self.len)));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let w = self.width;
        let n = idx.len();
        Batch {
            obs: Array2::from_shape_fn((n, w), |(r, c)| self.obs[idx[r] * w + c]),
            actions: Array2::from_shape_fn((n, ACTION_WIDTH), |(r, c)| self.actions[idx[r] * ACTION_WIDTH + c]),
            rewards: Array2::from_shape_fn((n, 1), |(r, _)| self.rewards[idx[r]]),
            next_obs: Array2::from_shape_fn((n, w), |(r, c)| self.next_obs[idx[r] * w + c]),
            dones: Array2::from_shape_fn((n, 1), |(r, _)| self.dones[idx[r]]),
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn to_archive(&self, a: &mut Archive, prefix: &str) {
        let widen = |v: &[f32], cols: usize| {
            let rows = if cols == 0 { 0 } else { v.len() / cols };
            Array2::from_shape_vec((rows, cols), v.iter().map(|&x| x as f64).collect()).expect("flat store")
        };
        a.push_words(format!("{prefix}.meta"), &[self.width as u64, self.capacity as u64, self.len as u64, self.head as u64]);
        a.push_f32(format!("{prefix}.obs"), widen(&self.obs, self.width));
        a.push_f32(format!("{prefix}.next_obs"), widen(&self.next_obs, self.width));
        a.push_f32(format!("{prefix}.actions"), widen(&self.actions, ACTION_WIDTH));
        a.push_f32(format!("{prefix}.rewards"), widen(&self.rewards, 1));
        a.push_f32(format!("{prefix}.dones"), widen(&self.dones, 1));
    }

    pub fn from_archive(a: &Archive, prefix: &str) -> Result<Self> {
        let meta = a.words(&format!("{prefix}.meta"))?;
        let [width, capacity, len, head] = meta[..] else {
            return Err(Error::Archive("replay metadata".into()));
        };
        let narrow = |name: &str| -> Result<Vec<f32>> {
            Ok(a.require(&format!("{prefix}.{name}"))?.iter().map(|&x| x as f32).collect())
        };
        let buf = Self {
            width: width as usize,
            capacity: capacity as usize,
            len: len as usize,
            head: head as usize,
            obs: narrow("obs")?,
            next_obs: narrow("next_obs")?,
            actions: narrow("actions")?,
            rewards: narrow("rewards")?,
            dones: narrow("dones")?,
        };
        if buf.rewards.len() != buf.len.min(buf.capacity) || buf.obs.len() != buf.rewards.len() * buf.width {
            return Err(Error::Archive("replay buffer sizes disagree".into()));
        }
        Ok(buf)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
}

/// Squashed-Gaussian sample with everything the actor gradient needs.
struct PolicySample {
    action: Array2<f32>,
    log_prob: Array2<f32>,
    noise: Array2<f32>,
    std: Array2<f32>,
    /// 1 where the log-std was inside its clamp range.
    std_live: Array2<f32>,
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct SacAgent {
    config: SacConfig,
    obs_width: usize,
    pub actor: Mlp<f32>,
    pub q1: Mlp<f32>,
    pub q2: Mlp<f32>,
    pub q1_target: Mlp<f32>,
    pub q2_target: Mlp<f32>,
    actor_opt: MlpAdam<f32>,
    q1_opt: MlpAdam<f32>,
    q2_opt: MlpAdam<f32>,
    rng: ChaCha8Rng,
    updates: u64,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

fn hcat(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("equal rows")
}

impl SacAgent {
    pub fn new(config: SacConfig, obs_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new(&sizes(obs_width, &config.hidden, 2 * ACTION_WIDTH), &mut rng);
        let q1 = Mlp::new(&sizes(obs_width + ACTION_WIDTH, &config.hidden, 1), &mut rng);
        let q2 = Mlp::new(&sizes(obs_width + ACTION_WIDTH, &config.hidden, 1), &mut rng);
        let lr = config.learning_rate;
        Ok(Self {
            actor_opt: MlpAdam::new(&actor, lr),
            q1_opt: MlpAdam::new(&q1, lr),
            q2_opt: MlpAdam::new(&q2, lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            config,
            obs_width,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn all_finite(&self) -> bool {
        [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target].iter().all(|n| n.all_finite())
    }

    fn heads(&self, obs: &Array2<f32>) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        let out = self.actor.predict(obs);
        let mean = out.slice(s![.., ..ACTION_WIDTH]).to_owned();
        let raw = out.slice(s![.., ACTION_WIDTH..]).to_owned();
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std, raw)
    }

    fn sample_policy(mean: &Array2<f32>, log_std: &Array2<f32>, raw: &Array2<f32>, noise: Array2<f32>) -> PolicySample {
        let std = log_std.mapv(f32::exp);
        let action = (mean + &(&std * &noise)).mapv(f32::tanh);
        let half_log_2pi = 0.5 * (2.0 * std::f32::consts::PI).ln();
        let mut log_prob = Array2::zeros((mean.nrows(), 1));
        for r in 0..mean.nrows() {
            let mut lp = 0.0;
            for j in 0..ACTION_WIDTH {
                let a = action[[r, j]];
                lp += -0.5 * noise[[r, j]] * noise[[r, j]] - log_std[[r, j]] - half_log_2pi - (1.0 - a * a + SQUASH_EPS).ln();
            }
            log_prob[[r, 0]] = lp;
        }
        let std_live = raw.mapv(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
        PolicySample { action, log_prob, noise, std, std_live }
    }

    fn noise<R: Rng>(rows: usize, rng: &mut R) -> Array2<f32> {
        Array2::from_shape_fn((rows, ACTION_WIDTH), |_| rng.sample::<f32, _>(StandardNormal))
    }

    fn check_width(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_width {
            return Err(Error::Shape(format!("observation width {} (expected {})", obs.len(), self.obs_width)));
        }
        Ok(())
    }

    /// Deterministic mode returns the squashed mean; otherwise one sample.
    pub fn select_action<R: Rng>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Result<Action> {
        self.check_width(obs)?;
        let x = Array2::from_shape_fn((1, self.obs_width), |(_, c)| obs[c] as f32);
        let (mean, log_std, raw) = self.heads(&x);
        let a = if deterministic {
            mean.mapv(f32::tanh)
        } else {
            Self::sample_policy(&mean, &log_std, &raw, Self::noise(1, rng)).action
        };
        Ok(Action([a[[0, 0]] as f64, a[[0, 1]] as f64, a[[0, 2]] as f64]))
    }

    /// One gradient step on a uniform minibatch.
    ///
    /// Fails with not-ready before `learning_starts` environment steps or
    /// while the buffer holds fewer than `batch_size` transitions.
    pub fn update(&mut self, buffer: &ReplayBuffer, env_steps: u64) -> Result<Losses> {
        if env_steps < self.config.learning_starts {
            return Err(Error::NotReady(format!(
                "{env_steps} environment steps, learning starts at {}",
                self.config.learning_starts
            )));
        }
        if buffer.width() != self.obs_width {
            return Err(Error::Shape(format!("buffer width {} (expected {})", buffer.width(), self.obs_width)));
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng)?;
        let n = batch.obs.nrows();
        let nf = n as f32;
        let alpha = self.config.ent_coef as f32;
        let gamma = self.config.gamma as f32;

        // Critic targets.
        let (m2, ls2, raw2) = self.heads(&batch.next_obs);
        let next = Self::sample_policy(&m2, &ls2, &raw2, Self::noise(n, &mut self.rng));
        let next_in = hcat(&batch.next_obs, &next.action);
        let t1 = self.q1_target.predict(&next_in);
        let t2 = self.q2_target.predict(&next_in);
        let y = Array2::from_shape_fn((n, 1), |(r, _)| {
            let min_q = t1[[r, 0]].min(t2[[r, 0]]);
            bellman_target(
                batch.rewards[[r, 0]] as f64,
                batch.dones[[r, 0]] > 0.5,
                gamma as f64,
                min_q as f64,
                alpha as f64,
                next.log_prob[[r, 0]] as f64,
            ) as f32
        });

        // Critic regression, 0.5 * (mse1 + mse2).
        let sa = hcat(&batch.obs, &batch.actions);
        let mut critic_loss = 0.0;
        for (net, opt) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)] {
            let (q, cache) = net.forward(&sa);
            let diff = &q - &y;
            critic_loss += 0.5 * diff.iter().map(|d| (d * d) as f64).sum::<f64>() / n as f64;
            let (grads, _) = net.backward(&cache, &(diff / nf));
            opt.update(net, &grads);
        }

        // Actor: minimise alpha * log_prob - min(q1, q2) at reparameterised actions.
        let (out, actor_cache) = self.actor.forward(&batch.obs);
        let mean = out.slice(s![.., ..ACTION_WIDTH]).to_owned();
        let raw = out.slice(s![.., ACTION_WIDTH..]).to_owned();
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let pi = Self::sample_policy(&mean, &log_std, &raw, Self::noise(n, &mut self.rng));
        let pi_in = hcat(&batch.obs, &pi.action);
        let (qa, c1) = self.q1.forward(&pi_in);
        let (qb, c2) = self.q2.forward(&pi_in);
        let pick_a = Array2::from_shape_fn((n, 1), |(r, _)| if qa[[r, 0]] <= qb[[r, 0]] { 1.0 } else { 0.0 });
        let pick_b = pick_a.mapv(|v| 1.0 - v);
        let ga = self.q1.input_gradient(&c1, &pick_a);
        let gb = self.q2.input_gradient(&c2, &pick_b);
        let dq = (&ga + &gb).slice(s![.., self.obs_width..]).to_owned();
        let mut actor_loss = 0.0f64;
        for r in 0..n {
            let min_q = qa[[r, 0]].min(qb[[r, 0]]);
            actor_loss += (alpha * pi.log_prob[[r, 0]] - min_q) as f64;
        }
        actor_loss /= n as f64;
        let mut grad_out = Array2::<f32>::zeros((n, 2 * ACTION_WIDTH));
        for r in 0..n {
            for j in 0..ACTION_WIDTH {
                let a = pi.action[[r, j]];
                let dtanh = 1.0 - a * a;
                // d log_prob / d pre-squash value.
                let g = 2.0 * a * dtanh / (dtanh + SQUASH_EPS);
                let du = alpha * g - dq[[r, j]] * dtanh;
                let sigma_eps = pi.std[[r, j]] * pi.noise[[r, j]];
                grad_out[[r, j]] = du / nf;
                grad_out[[r, ACTION_WIDTH + j]] = (du * sigma_eps - alpha) * pi.std_live[[r, j]] / nf;
            }
        }
        let (grads, _) = self.actor.backward(&actor_cache, &grad_out);
        self.actor_opt.update(&mut self.actor, &grads);

        let tau = self.config.tau as f32;
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);
        self.updates += 1;
        Ok(Losses { critic: critic_loss, actor: actor_loss })
    }

    pub fn to_archive(&self, a: &mut Archive, prefix: &str) {
        for (name, net) in [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            a.extend(net.export(&format!("{prefix}.{name}")));
        }
        for (name, opt) in [("actor_opt", &self.actor_opt), ("q1_opt", &self.q1_opt), ("q2_opt", &self.q2_opt)] {
            a.extend(opt.export(&format!("{prefix}.{name}")));
        }
        a.push_words(format!("{prefix}.rng"), &crate::rng::to_words(&self.rng));
        a.push_words(format!("{prefix}.updates"), &[self.updates, self.obs_width as u64]);
    }

    pub fn from_archive(config: SacConfig, a: &Archive, prefix: &str) -> Result<Self> {
        let meta = a.words(&format!("{prefix}.updates"))?;
        let [updates, width] = meta[..] else {
            return Err(Error::Archive("agent metadata".into()));
        };
        let mut agent = Self::new(config, width as usize, 0)?;
        let lookup = |name: &str| a.get(name).cloned();
        let missing = |what: &str| Error::Archive(format!("agent tensor {prefix}.{what} missing or mis-shaped"));
        for (name, net) in [
            ("actor", &mut agent.actor),
            ("q1", &mut agent.q1),
            ("q2", &mut agent.q2),
            ("q1_target", &mut agent.q1_target),
            ("q2_target", &mut agent.q2_target),
        ] {
            net.import(&format!("{prefix}.{name}"), &lookup).ok_or_else(|| missing(name))?;
        }
        for (name, opt) in
            [("actor_opt", &mut agent.actor_opt), ("q1_opt", &mut agent.q1_opt), ("q2_opt", &mut agent.q2_opt)]
        {
            opt.import(&format!("{prefix}.{name}"), &lookup).ok_or_else(|| missing(name))?;
        }
        agent.rng = crate::rng::from_words(&a.words(&format!("{prefix}.rng"))?)?;
        agent.updates = updates;
        Ok(agent)
    }
}
