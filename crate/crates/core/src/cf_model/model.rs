use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::env::{Action, ACTION_WIDTH};
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore, Tape, Var};
use crate::scm::Intervention;

use super::{
    convert_input_shape, intervention_encoding, object_state, CfSample, ConfounderVector, ObjectTensor,
    DEFAULT_CONFOUNDER_WIDTH, DYNAMIC_FEATURES, GOAL, INTERVENTION_WIDTH, NUM_OBJECTS, OBJECT_FEATURES,
};

const MODEL_FILE: &str = "cf_model.bin";
const MANIFEST_FILE: &str = "cf_model.json";

/// Positions are in metres; the networks see them in decimetres.
const INPUT_POSITION_SCALE: f64 = 10.0;

/// Offsets to the other objects are given in centimetres.
const RELATION_SCALE: f64 = 100.0;
/// Per-object input: its own features plus the offset to every other object.
const RELATION_WIDTH: usize = 2 * (NUM_OBJECTS - 1);

fn input_scale(rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, OBJECT_FEATURES), |(_, f)| if f < 2 { INPUT_POSITION_SCALE } else { 1.0 })
}

fn others(k: usize) -> impl Iterator<Item = usize> {
    (0..NUM_OBJECTS).filter(move |&j| j != k)
}

/// Encoder input rows for object `k`: scaled features then offsets.
fn encoder_input(objects: &[Array2<f64>; NUM_OBJECTS], k: usize) -> Array2<f64> {
    let n = objects[k].nrows();
    let own = &objects[k] * &input_scale(n);
    let mut out = Array2::zeros((n, OBJECT_FEATURES + RELATION_WIDTH));
    out.slice_mut(s![.., ..OBJECT_FEATURES]).assign(&own);
    for (slot, j) in others(k).enumerate() {
        let rel = (&objects[j].slice(s![.., 0..2]) - &objects[k].slice(s![.., 0..2])) * RELATION_SCALE;
        out.slice_mut(s![.., OBJECT_FEATURES + 2 * slot..OBJECT_FEATURES + 2 * slot + 2]).assign(&rel);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfConfig {
    pub confounder_width: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Output scale of the per-step position residual.
    pub position_step: f64,
    /// Output scale of the per-step velocity residual.
    pub velocity_step: f64,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            confounder_width: DEFAULT_CONFOUNDER_WIDTH,
            hidden: 64,
            learning_rate: 1e-4,
            position_step: 0.5,
            velocity_step: 2.0,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.confounder_width == 0 || self.hidden == 0 {
            return Err(Error::Configuration("cf model widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Configuration("cf learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter indices `(weight, bias)` of each affine layer.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    enc1: (usize, usize),
    enc2: (usize, usize),
    enc_msg: (usize, usize),
    gru_gate: (usize, usize),
    gru_cand: (usize, usize),
    dec_in: (usize, usize),
    dec_msg: (usize, usize),
    dec_out: (usize, usize),
    dec_skip: (usize, usize),
}

/// Batch of samples laid out for the graph. Rows of per-step matrices are
/// time-major (`t * B + b`).
struct Prepared {
    steps: usize,
    batch: usize,
    observed: [Array2<f64>; NUM_OBJECTS],
    actions: Array2<f64>,
    initial: [Array2<f64>; NUM_OBJECTS],
    encoding: Array2<f64>,
    /// Rows ordered `(t, k, b)`, columns position then velocity.
    targets: Array2<f64>,
}

/// Encoder, confounder aggregator and rollout decoder, with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct CfModel {
    config: CfConfig,
    params: ParamStore,
    layout: Layout,
    adam: Adam,
    steps: u64,
}

impl CfModel {
    pub fn new(config: CfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, d) = (config.hidden, config.confounder_width);
        let mut p = ParamStore::new();
        let layout = Layout {
            enc1: p.add_linear("encoder.0", OBJECT_FEATURES + RELATION_WIDTH, h, &mut rng),
            enc2: p.add_linear("encoder.1", h, h, &mut rng),
            enc_msg: p.add_linear("encoder.message", 2 * h, h, &mut rng),
            gru_gate: p.add_linear("aggregator.gate", h + ACTION_WIDTH + d, 2 * d, &mut rng),
            gru_cand: p.add_linear("aggregator.candidate", h + ACTION_WIDTH + d, d, &mut rng),
            dec_in: p.add_linear("decoder.input", OBJECT_FEATURES + RELATION_WIDTH + d + ACTION_WIDTH + INTERVENTION_WIDTH, h, &mut rng),
            dec_msg: p.add_linear("decoder.message", 2 * h, h, &mut rng),
            dec_out: p.add_linear("decoder.output", h, DYNAMIC_FEATURES, &mut rng),
            dec_skip: p.add_linear(
                "decoder.skip",
                OBJECT_FEATURES + RELATION_WIDTH + d + ACTION_WIDTH + INTERVENTION_WIDTH,
                DYNAMIC_FEATURES,
                &mut rng,
            ),
        };
        // A zero output layer starts the rollout as "nothing moves".
        p.get_mut(layout.dec_out.0).fill(0.0);
        p.get_mut(layout.dec_skip.0).fill(0.0);
        let adam = Adam::new(&p, config.learning_rate);
        Ok(Self { config, params: p, layout, adam, steps: 0 })
    }

    pub fn config(&self) -> &CfConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn width(&self) -> usize {
        self.config.confounder_width
    }

    /// Gradient updates applied so far.
    pub fn training_steps(&self) -> u64 {
        self.steps
    }

    fn prepare(&self, batch: &[CfSample]) -> Result<Prepared> {
        let first = batch.first().ok_or_else(|| Error::EmptyBatch("no samples".into()))?;
        let steps = first.steps();
        if steps == 0 {
            return Err(Error::Shape("zero-length trajectory".into()));
        }
        if batch.iter().any(|s| s.steps() != steps || s.counterfactual.len() != steps) {
            return Err(Error::Shape("trajectory lengths differ within batch".into()));
        }
        let b = batch.len();
        let observed: Vec<ObjectTensor> = batch.iter().map(|s| convert_input_shape(&s.observed)).collect::<Result<_>>()?;
        let truth: Vec<ObjectTensor> =
            batch.iter().map(|s| convert_input_shape(&s.counterfactual)).collect::<Result<_>>()?;
        let starts: Vec<Array2<f64>> = batch.iter().map(|s| object_state(&s.counterfactual.initial, None)).collect();

        let observed =
            std::array::from_fn(|k| Array2::from_shape_fn((steps * b, OBJECT_FEATURES), |(r, f)| observed[r % b].0[[r / b, k, f]]));
        let actions = Array2::from_shape_fn((steps * b, ACTION_WIDTH), |(r, j)| batch[r % b].observed.actions[r / b].0[j]);
        let initial = std::array::from_fn(|k| Array2::from_shape_fn((b, OBJECT_FEATURES), |(i, f)| starts[i][[k, f]]));
        let mut encoding = Array2::zeros((b, INTERVENTION_WIDTH));
        for (i, s) in batch.iter().enumerate() {
            encoding.row_mut(i).assign(&ndarray::ArrayView1::from(&intervention_encoding(&s.intervention)));
        }
        let targets = Array2::from_shape_fn((steps * NUM_OBJECTS * b, DYNAMIC_FEATURES), |(r, f)| {
            let (t, rest) = (r / (NUM_OBJECTS * b), r % (NUM_OBJECTS * b));
            truth[rest % b].0[[t, rest / b, f]]
        });
        Ok(Prepared { steps, batch: b, observed, actions, initial, encoding, targets })
    }

    /// One message-passing round over the `K` row blocks of `h`, each `n`
    /// rows: every object sees itself and the mean of the others.
    fn interact(&self, tape: &mut Tape, h: Var, n: usize, layer: (usize, usize)) -> Var {
        let parts: Vec<Var> = (0..NUM_OBJECTS).map(|k| tape.slice_rows(h, k * n, n)).collect();
        let s01 = tape.add(parts[0], parts[1]);
        let sum = tape.add(s01, parts[2]);
        let out: Vec<Var> = parts
            .iter()
            .map(|&p| {
                let rest = tape.sub(sum, p);
                let others = tape.scale(rest, 1.0 / (NUM_OBJECTS - 1) as f64);
                let joined = tape.concat_cols(&[p, others]);
                let z = tape.affine(joined, layer.0, layer.1);
                tape.tanh(z)
            })
            .collect();
        tape.concat_rows(&out)
    }

    fn gru(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let d = self.config.confounder_width;
        let xh = tape.concat_cols(&[x, h]);
        let gate_in = tape.affine(xh, self.layout.gru_gate.0, self.layout.gru_gate.1);
        let gates = tape.sigmoid(gate_in);
        let z = tape.slice_cols(gates, 0, d);
        let r = tape.slice_cols(gates, d, d);
        let rh = tape.mul(r, h);
        let xr = tape.concat_cols(&[x, rh]);
        let cand_in = tape.affine(xr, self.layout.gru_cand.0, self.layout.gru_cand.1);
        let cand = tape.tanh(cand_in);
        let keep = tape.one_minus(z);
        let fresh = tape.mul(keep, cand);
        let old = tape.mul(z, h);
        tape.add(fresh, old)
    }

    /// Confounder estimate `(B, d)` from the observed trajectories.
    fn encode(&self, tape: &mut Tape, observed: &[Array2<f64>; NUM_OBJECTS], actions: &Array2<f64>, steps: usize, b: usize) -> Var {
        let n = steps * b;
        let objs: Vec<Var> = (0..NUM_OBJECTS).map(|k| tape.constant(encoder_input(observed, k))).collect();
        let x = tape.concat_rows(&objs);
        let z1 = tape.affine(x, self.layout.enc1.0, self.layout.enc1.1);
        let h1 = tape.tanh(z1);
        let z2 = tape.affine(h1, self.layout.enc2.0, self.layout.enc2.1);
        let h2 = tape.tanh(z2);
        let e = self.interact(tape, h2, n, self.layout.enc_msg);
        let parts: Vec<Var> = (0..NUM_OBJECTS).map(|k| tape.slice_rows(e, k * n, n)).collect();
        let s01 = tape.add(parts[0], parts[1]);
        let sum = tape.add(s01, parts[2]);
        let pool = tape.scale(sum, 1.0 / NUM_OBJECTS as f64);
        let act = tape.constant(actions.clone());
        let seq = tape.concat_cols(&[pool, act]);
        let mut h = tape.constant(Array2::zeros((b, self.config.confounder_width)));
        for t in 0..steps {
            let xt = tape.slice_rows(seq, t * b, b);
            h = self.gru(tape, xt, h);
        }
        h
    }

    /// Autoregressive rollout; one `(3B, 4)` node per step, rows `k * B + b`.
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        tape: &mut Tape,
        u: Var,
        initial: &[Array2<f64>; NUM_OBJECTS],
        actions: &Array2<f64>,
        encoding: &Array2<f64>,
        steps: usize,
        b: usize,
    ) -> Vec<Var> {
        // The goal is static; its rows keep their initial state.
        let scales = Array2::from_shape_fn((NUM_OBJECTS * b, DYNAMIC_FEATURES), |(r, f)| {
            if r / b == GOAL {
                0.0
            } else if f < 2 {
                self.config.position_step
            } else {
                self.config.velocity_step
            }
        });
        let scales = tape.constant(scales);
        let statics: Vec<Var> = initial
            .iter()
            .map(|x| tape.constant(x.slice(s![.., DYNAMIC_FEATURES..]).to_owned()))
            .collect();
        let mut state: Vec<Var> = initial.iter().map(|x| tape.constant(x.clone())).collect();
        let in_scale = tape.constant(input_scale(b));
        let act = tape.constant(actions.clone());
        let enc = tape.constant(encoding.clone());
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let a = tape.slice_rows(act, t * b, b);
            let pos: Vec<Var> = state.iter().map(|&x| tape.slice_cols(x, 0, 2)).collect();
            let rows: Vec<Var> = (0..NUM_OBJECTS)
                .map(|k| {
                    let mut parts = vec![tape.mul(state[k], in_scale)];
                    for j in others(k) {
                        let d = tape.sub(pos[j], pos[k]);
                        parts.push(tape.scale(d, RELATION_SCALE));
                    }
                    parts.extend([u, a, enc]);
                    tape.concat_cols(&parts)
                })
                .collect();
            let x = tape.concat_rows(&rows);
            let z = tape.affine(x, self.layout.dec_in.0, self.layout.dec_in.1);
            let h = tape.tanh(z);
            let m = self.interact(tape, h, b, self.layout.dec_msg);
            let deep = tape.affine(m, self.layout.dec_out.0, self.layout.dec_out.1);
            let linear = tape.affine(x, self.layout.dec_skip.0, self.layout.dec_skip.1);
            let raw = tape.add(deep, linear);
            let delta = tape.mul(raw, scales);
            let dyn_rows: Vec<Var> = state.iter().map(|&x| tape.slice_cols(x, 0, DYNAMIC_FEATURES)).collect();
            let prev = tape.concat_rows(&dyn_rows);
            let next = tape.add(prev, delta);
            out.push(next);
            state = (0..NUM_OBJECTS)
                .map(|k| {
                    let d = tape.slice_rows(next, k * b, b);
                    tape.concat_cols(&[d, statics[k]])
                })
                .collect();
        }
        out
    }

    fn loss_node(&self, tape: &mut Tape, p: &Prepared, zero_u: bool) -> Var {
        let u = if zero_u {
            tape.constant(Array2::zeros((p.batch, self.config.confounder_width)))
        } else {
            self.encode(tape, &p.observed, &p.actions, p.steps, p.batch)
        };
        let preds = self.decode(tape, u, &p.initial, &p.actions, &p.encoding, p.steps, p.batch);
        let pred = tape.concat_rows(&preds);
        let target = tape.constant(p.targets.clone());
        let diff = tape.sub(pred, target);
        tape.mean_square(diff)
    }

    /// Counterfactual mean squared error over positions and velocities,
    /// averaged over steps, objects and samples.
    pub fn loss(&self, batch: &[CfSample]) -> Result<f64> {
        self.evaluate_mse(batch, false)
    }

    /// Like [`CfModel::loss`]; with `zero_u` the decoder receives a zero
    /// confounder instead of the estimate.
    pub fn evaluate_mse(&self, batch: &[CfSample], zero_u: bool) -> Result<f64> {
        let p = self.prepare(batch)?;
        let mut tape = Tape::new(&self.params);
        let l = self.loss_node(&mut tape, &p, zero_u);
        Ok(tape.scalar(l))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[CfSample]) -> Result<(f64, Vec<Array2<f64>>)> {
        let p = self.prepare(batch)?;
        let mut tape = Tape::new(&self.params);
        let l = self.loss_node(&mut tape, &p, false);
        Ok((tape.scalar(l), tape.backward(l)))
    }

    /// One optimizer step on `batch`; returns the loss before the step.
    pub fn training_step(&mut self, batch: &[CfSample]) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch)?;
        self.adam.update(&mut self.params, &grads);
        self.steps += 1;
        Ok(loss)
    }

    /// Confounder estimate for one observed trajectory.
    pub fn estimate_confounders(&self, tensor: &ObjectTensor, actions: &Array2<f64>) -> Result<ConfounderVector> {
        let steps = tensor.steps();
        if steps == 0 || actions.dim() != (steps, ACTION_WIDTH) {
            return Err(Error::Shape(format!(
                "{steps}-step tensor with actions of shape {:?}",
                actions.shape()
            )));
        }
        let observed = std::array::from_fn(|k| tensor.0.slice(s![.., k, ..]).to_owned());
        let mut tape = Tape::new(&self.params);
        let u = self.encode(&mut tape, &observed, actions, steps, 1);
        ConfounderVector::new(tape.value(u).row(0).to_vec(), 0)
    }

    pub fn estimate_for(&self, sample: &CfSample) -> Result<ConfounderVector> {
        self.estimate_confounders(&convert_input_shape(&sample.observed)?, &sample.observed.action_matrix())
    }

    /// Rolls the decoder from `initial` (one `3 x 9` object state of the
    /// intervened world) under `actions`, returning `(T, 3, 9)`.
    pub fn predict_counterfactual(
        &self,
        u: &ConfounderVector,
        initial: ArrayView2<f64>,
        actions: &[Action],
        intervention: &Intervention,
    ) -> Result<ObjectTensor> {
        u.validate()?;
        if u.width != self.config.confounder_width {
            return Err(Error::Shape(format!("confounder width {} (expected {})", u.width, self.config.confounder_width)));
        }
        if initial.dim() != (NUM_OBJECTS, OBJECT_FEATURES) {
            return Err(Error::Shape(format!("initial state {:?}", initial.shape())));
        }
        let steps = actions.len();
        if steps == 0 {
            return Err(Error::Shape("no actions to roll out".into()));
        }
        let init = std::array::from_fn(|k| initial.slice(s![k..k + 1, ..]).to_owned());
        let acts = Array2::from_shape_fn((steps, ACTION_WIDTH), |(t, j)| actions[t].0[j]);
        let enc = Array2::from_shape_vec((1, INTERVENTION_WIDTH), intervention_encoding(intervention).to_vec())
            .expect("encoding row");
        let mut tape = Tape::new(&self.params);
        let uvar = tape.constant(Array2::from_shape_vec((1, u.width), u.values.clone()).expect("row"));
        let preds = self.decode(&mut tape, uvar, &init, &acts, &enc, steps, 1);
        let mut out = Array3::zeros((steps, NUM_OBJECTS, OBJECT_FEATURES));
        for (t, node) in preds.iter().enumerate() {
            let v = tape.value(*node);
            for k in 0..NUM_OBJECTS {
                for f in 0..OBJECT_FEATURES {
                    out[[t, k, f]] = if f < DYNAMIC_FEATURES { v[[k, f]] } else { initial[[k, f]] };
                }
            }
        }
        ObjectTensor::new(out)
    }

    /// Parameters, optimizer moments and counters as a tensor archive.
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        for (i, (name, t)) in self.params.iter().enumerate() {
            a.push(format!("param/{name}"), t.clone());
            a.push(format!("adam_m/{name}"), self.adam.m[i].clone());
            a.push(format!("adam_v/{name}"), self.adam.v[i].clone());
        }
        a.push_words("adam_step", &[self.adam.step]);
        a.push_words("training_steps", &[self.steps]);
        a
    }

    pub fn from_archive(config: CfConfig, archive: &Archive) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_string();
            let fetch = |prefix: &str, like: &Array2<f64>| -> Result<Array2<f64>> {
                let t = archive.require(&format!("{prefix}/{name}"))?;
                if t.dim() != like.dim() {
                    return Err(Error::Archive(format!("{prefix}/{name} has shape {:?}", t.shape())));
                }
                Ok(t.clone())
            };
            let p = fetch("param", model.params.get(i))?;
            model.adam.m[i] = fetch("adam_m", &p)?;
            model.adam.v[i] = fetch("adam_v", &p)?;
            *model.params.get_mut(i) = p;
        }
        model.adam.step = first_word(archive, "adam_step")?;
        model.steps = first_word(archive, "training_steps")?;
        if !model.params.all_finite() {
            return Err(Error::Archive("non-finite cf model parameter".into()));
        }
        Ok(model)
    }

    /// Writes the archive and a JSON manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.to_archive().save(&dir.join(MODEL_FILE))?;
        let layers: Vec<_> = self
            .params
            .iter()
            .filter(|(n, _)| n.ends_with(".w"))
            .map(|(n, t)| serde_json::json!({ "name": n.trim_end_matches(".w"), "in": t.nrows(), "out": t.ncols() }))
            .collect();
        let manifest = serde_json::json!({
            "format_version": crate::archive::FORMAT_VERSION,
            "width": self.config.confounder_width,
            "config": self.config,
            "layers": layers,
            "training_steps": self.steps,
            "num_parameters": self.params.num_scalars(),
        });
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let config: CfConfig = serde_json::from_value(manifest["config"].clone())?;
        Self::from_archive(config, &Archive::load(&dir.join(MODEL_FILE))?)
    }
}

fn first_word(archive: &Archive, name: &str) -> Result<u64> {
    archive.words(name)?.first().copied().ok_or_else(|| Error::Archive(format!("empty {name}")))
}

/// Element-wise mean of the confounder estimates of `samples`.
pub fn extract_causal_rep(model: &CfModel, samples: &[CfSample], version: u32) -> Result<ConfounderVector> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch("no samples to average".into()));
    }
    let mut sum = vec![0.0; model.width()];
    for s in samples {
        for (acc, v) in sum.iter_mut().zip(model.estimate_for(s)?.values) {
            *acc += v;
        }
    }
    let n = samples.len() as f64;
    ConfounderVector::new(sum.into_iter().map(|v| v / n).collect(), version)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf_model::{generate_cf_batch, CfEpisode};
    use crate::env::{BlockWorld, TaskKind, TaskSpec};
    use crate::policy::ScriptedPusher;
    use crate::scm::{CausalVariables, Value, Variable};

    fn samples(n: usize, steps: usize) -> Vec<CfSample> {
        let mut env = BlockWorld::new(TaskSpec::new(TaskKind::Pushing)).unwrap();
        let mut sampler = |i: usize| -> crate::Result<CfEpisode> {
            let mut factual = CausalVariables::defaults(TaskKind::Pushing);
            factual.floor_friction = 0.3 + 0.05 * i as f64;
            Ok(CfEpisode {
                factual,
                intervention: Intervention::none().with(Variable::BlockMass, Value::Scalar(0.5 + 0.1 * i as f64)),
                warmup: 20,
            })
        };
        generate_cf_batch(&mut env, &mut ScriptedPusher, &mut sampler, steps, n, 0).unwrap()
    }

    fn small() -> CfConfig {
        CfConfig { confounder_width: 4, hidden: 8, ..CfConfig::default() }
    }

    #[test]
    fn confounder_width_and_determinism() {
        let m = CfModel::new(CfConfig::default(), 1).unwrap();
        let s = &samples(1, 30)[0];
        let u1 = m.estimate_for(s).unwrap();
        let u2 = m.estimate_for(s).unwrap();
        assert_eq!(u1.width, 32);
        assert_eq!(u1, u2);
    }

    #[test]
    fn estimate_rejects_action_mismatch() {
        let m = CfModel::new(small(), 1).unwrap();
        let s = &samples(1, 5)[0];
        let x = convert_input_shape(&s.observed).unwrap();
        assert!(matches!(m.estimate_confounders(&x, &Array2::zeros((4, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn untrained_prediction_is_finite() {
        let m = CfModel::new(CfConfig::default(), 2).unwrap();
        let s = &samples(1, 30)[0];
        let u = m.estimate_for(s).unwrap();
        let init = object_state(&s.counterfactual.initial, None);
        let p = m.predict_counterfactual(&u, init.view(), &s.observed.actions, &s.intervention).unwrap();
        assert_eq!(p.shape(), (30, 3, 9));
        assert!(p.0.iter().all(|v| v.is_finite()));
        assert!(p.one_hot_valid());
    }

    #[test]
    fn single_step_rollout_is_one_decode() {
        let m = CfModel::new(small(), 3).unwrap();
        let s = &samples(1, 4)[0];
        let u = m.estimate_for(s).unwrap();
        let init = object_state(&s.counterfactual.initial, None);
        let full = m.predict_counterfactual(&u, init.view(), &s.observed.actions, &s.intervention).unwrap();
        let one = m.predict_counterfactual(&u, init.view(), &s.observed.actions[..1], &s.intervention).unwrap();
        assert_eq!(one.shape(), (1, 3, 9));
        assert_eq!(one.step(0), full.step(0));
    }

    #[test]
    fn nan_confounder_rejected() {
        let m = CfModel::new(small(), 3).unwrap();
        let u = ConfounderVector { width: 4, version: 0, values: vec![f64::NAN, 0.0, 0.0, 0.0] };
        let init = Array2::zeros((3, 9));
        let r = m.predict_counterfactual(&u, init.view(), &[Action([0.0; 3])], &Intervention::none());
        assert!(matches!(r, Err(Error::InvalidRepresentation(_))));
    }

    #[test]
    fn loss_nonnegative_and_batch_errors() {
        let mut m = CfModel::new(small(), 4).unwrap();
        let batch = samples(3, 5);
        assert!(m.training_step(&batch).unwrap() >= 0.0);
        assert_eq!(m.training_steps(), 1);
        assert!(matches!(m.training_step(&[]), Err(Error::EmptyBatch(_))));
        let mut mixed = batch.clone();
        mixed.push(samples(1, 4).remove(0));
        assert!(matches!(m.training_step(&mixed), Err(Error::Shape(_))));
    }

    #[test]
    fn rep_is_mean_of_estimates() {
        let m = CfModel::new(small(), 5).unwrap();
        let batch = samples(2, 6);
        let one = extract_causal_rep(&m, &batch[..1], 3).unwrap();
        assert_eq!(one.values, m.estimate_for(&batch[0]).unwrap().values);
        assert_eq!(one.version, 3);
        let both = extract_causal_rep(&m, &batch, 0).unwrap();
        let (a, b) = (m.estimate_for(&batch[0]).unwrap(), m.estimate_for(&batch[1]).unwrap());
        for i in 0..4 {
            assert!((both.values[i] - (a.values[i] + b.values[i]) / 2.0).abs() < 1e-15);
        }
        assert!(matches!(extract_causal_rep(&m, &[], 0), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let mut m = CfModel::new(small(), 6).unwrap();
        let batch = samples(2, 4);
        m.training_step(&batch).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = CfModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("\"training_steps\": 1"));
    }

    /// Central differences on a reduced instance, every parameter entry.
    #[test]
    fn gradients_match_finite_differences() {
        let m = CfModel::new(small(), 7).unwrap();
        let batch = samples(4, 3);
        let (_, grads) = m.loss_and_gradients(&batch).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.params().len() {
            for idx in 0..m.params().get(i).len() {
                let mut probe = m.clone();
                probe.params_mut().get_mut(i).as_slice_mut().unwrap()[idx] += eps;
                let up = probe.loss(&batch).unwrap();
                probe.params_mut().get_mut(i).as_slice_mut().unwrap()[idx] -= 2.0 * eps;
                let down = probe.loss(&batch).unwrap();
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[i].as_slice().unwrap()[idx];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-9 {
                    worst = worst.max((analytic - numeric).abs() / scale);
                }
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
