//! Counterfactual dynamics model over structured observations.
//!
//! The model reads an observed trajectory, compresses it into a confounder
//! vector `U`, and rolls out the trajectory that the same action sequence
//! would have produced under an intervention. `U` doubles as the causal
//! representation handed to the agent.

mod data;
mod model;

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::{obs_index, Action, Observation, ACTION_WIDTH, OBS_WIDTH};
use crate::error::{Error, Result};
use crate::scm::{Intervention, Value, Variable};

pub use data::{generate_cf_batch, CfEpisode};
pub use model::{extract_causal_rep, CfConfig, CfModel};

/// Objects per scene: effector, block, goal.
pub const NUM_OBJECTS: usize = 3;
/// Features per object: position (2), velocity (2), extras (2), one-hot (3).
pub const OBJECT_FEATURES: usize = 9;
/// Leading features of each object that the model predicts.
pub const DYNAMIC_FEATURES: usize = 4;
pub const INTERVENTION_WIDTH: usize = 12;
pub const DEFAULT_CONFOUNDER_WIDTH: usize = 32;

pub const EFFECTOR: usize = 0;
pub const BLOCK: usize = 1;
pub const GOAL: usize = 2;

/// Block velocity is not observed; it is recovered as per-step displacement
/// in centimetres.
pub const BLOCK_VELOCITY_SCALE: f64 = 100.0;

/// Observed rollout: the state before the first action plus one
/// observation after each action.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: Observation,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn new(initial: Observation, observations: Vec<Observation>, actions: Vec<Action>) -> Result<Self> {
        let traj = Self { initial, observations, actions };
        traj.validate()?;
        Ok(traj)
    }

    /// Builds a trajectory from untyped rows, checking every width.
    pub fn from_raw(initial: &[f64], observations: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Self> {
        let obs = |row: &[f64]| -> Result<Observation> {
            let arr: [f64; OBS_WIDTH] = row.try_into().map_err(|_| {
                Error::Shape(format!("observation width {} (expected {OBS_WIDTH})", row.len()))
            })?;
            Ok(Observation(arr))
        };
        let act = |row: &Vec<f64>| -> Result<Action> {
            if row.len() != ACTION_WIDTH {
                return Err(Error::Shape(format!("action width {} (expected {ACTION_WIDTH})", row.len())));
            }
            Action::new(row)
        };
        Self::new(
            obs(initial)?,
            observations.iter().map(|r| obs(r)).collect::<Result<_>>()?,
            actions.iter().map(act).collect::<Result<_>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() {
            return Err(Error::Shape(format!(
                "{} observations but {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        let finite = std::iter::once(&self.initial)
            .chain(&self.observations)
            .all(|o| o.0.iter().all(|v| v.is_finite()))
            && self.actions.iter().all(|a| a.0.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Shape("non-finite trajectory entry".into()));
        }
        Ok(())
    }

    /// Actions as a `T x 3` matrix.
    pub fn action_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), ACTION_WIDTH), |(t, j)| self.actions[t].0[j])
    }
}

/// Per-object view of a trajectory, shape `(T, 3, 9)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTensor(pub Array3<f64>);

impl ObjectTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (_, k, f) = data.dim();
        if k != NUM_OBJECTS || f != OBJECT_FEATURES {
            return Err(Error::Shape(format!("object tensor {:?}", data.shape())));
        }
        Ok(Self(data))
    }

    pub fn steps(&self) -> usize {
        self.0.dim().0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    /// All objects at step `t`, as a `3 x 9` view.
    pub fn step(&self, t: usize) -> ArrayView2<'_, f64> {
        self.0.slice(s![t, .., ..])
    }

    /// Reassembles the observation rows. Inverse of [`convert_input_shape`]
    /// on every observed field.
    pub fn to_observations(&self) -> Vec<Observation> {
        (0..self.steps())
            .map(|t| {
                let x = self.step(t);
                let mut o = [0.0; OBS_WIDTH];
                o[obs_index::TIME_LEFT] = x[[EFFECTOR, 5]];
                o[obs_index::EFFECTOR_POS] = x[[EFFECTOR, 0]];
                o[obs_index::EFFECTOR_POS + 1] = x[[EFFECTOR, 1]];
                o[obs_index::EFFECTOR_VEL] = x[[EFFECTOR, 2]];
                o[obs_index::EFFECTOR_VEL + 1] = x[[EFFECTOR, 3]];
                o[obs_index::GRIP] = x[[EFFECTOR, 4]];
                o[obs_index::BLOCK_POS] = x[[BLOCK, 0]];
                o[obs_index::BLOCK_POS + 1] = x[[BLOCK, 1]];
                o[obs_index::BLOCK_SIZE] = x[[BLOCK, 4]];
                o[obs_index::GOAL_POS] = x[[GOAL, 0]];
                o[obs_index::GOAL_POS + 1] = x[[GOAL, 1]];
                Observation(o)
            })
            .collect()
    }

    pub fn one_hot_valid(&self) -> bool {
        (0..self.steps()).all(|t| {
            (0..NUM_OBJECTS).all(|k| (0..NUM_OBJECTS).all(|j| self.0[[t, k, 6 + j]] == if j == k { 1.0 } else { 0.0 }))
        })
    }
}

/// Object features of `obs`; `prev` supplies the block displacement.
pub fn object_state(obs: &Observation, prev: Option<&Observation>) -> Array2<f64> {
    let o = &obs.0;
    let block_vel = match prev {
        Some(p) => [
            (o[obs_index::BLOCK_POS] - p.0[obs_index::BLOCK_POS]) * BLOCK_VELOCITY_SCALE,
            (o[obs_index::BLOCK_POS + 1] - p.0[obs_index::BLOCK_POS + 1]) * BLOCK_VELOCITY_SCALE,
        ],
        None => [0.0, 0.0],
    };
    let mut x = Array2::zeros((NUM_OBJECTS, OBJECT_FEATURES));
    let rows = [
        [
            o[obs_index::EFFECTOR_POS],
            o[obs_index::EFFECTOR_POS + 1],
            o[obs_index::EFFECTOR_VEL],
            o[obs_index::EFFECTOR_VEL + 1],
            o[obs_index::GRIP],
            o[obs_index::TIME_LEFT],
        ],
        [
            o[obs_index::BLOCK_POS],
            o[obs_index::BLOCK_POS + 1],
            block_vel[0],
            block_vel[1],
            o[obs_index::BLOCK_SIZE],
            0.0,
        ],
        [o[obs_index::GOAL_POS], o[obs_index::GOAL_POS + 1], 0.0, 0.0, 0.0, 0.0],
    ];
    for (k, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[k, j]] = *v;
        }
        x[[k, 6 + k]] = 1.0;
    }
    x
}

/// Re-lays the post-action observations of `traj` as `(T, 3, 9)`.
pub fn convert_input_shape(traj: &Trajectory) -> Result<ObjectTensor> {
    traj.validate()?;
    let mut out = Array3::zeros((traj.len(), NUM_OBJECTS, OBJECT_FEATURES));
    let mut prev = &traj.initial;
    for (t, obs) in traj.observations.iter().enumerate() {
        out.slice_mut(s![t, .., ..]).assign(&object_state(obs, Some(prev)));
        prev = obs;
    }
    ObjectTensor::new(out)
}

/// Fixed-width encoding of an intervention: a presence flag followed by
/// the value(s) for each of bp, gp, bm, bs, ff.
pub fn intervention_encoding(intervention: &Intervention) -> [f64; INTERVENTION_WIDTH] {
    let mut e = [0.0; INTERVENTION_WIDTH];
    let pose = |v: &Value| match *v {
        Value::Pose { x, z } => (x, z.unwrap_or(0.0)),
        Value::Scalar(x) => (x, 0.0),
    };
    let scalar = |v: &Value| match *v {
        Value::Scalar(x) => x,
        Value::Pose { x, .. } => x,
    };
    if let Some(v) = intervention.get(Variable::BlockPose) {
        let (x, z) = pose(v);
        e[0..3].copy_from_slice(&[1.0, x, z]);
    }
    if let Some(v) = intervention.get(Variable::GoalPose) {
        let (x, z) = pose(v);
        e[3..6].copy_from_slice(&[1.0, x, z]);
    }
    if let Some(v) = intervention.get(Variable::BlockMass) {
        e[6..8].copy_from_slice(&[1.0, scalar(v)]);
    }
    if let Some(v) = intervention.get(Variable::BlockSize) {
        e[8..10].copy_from_slice(&[1.0, scalar(v)]);
    }
    if let Some(v) = intervention.get(Variable::FloorFriction) {
        e[10..12].copy_from_slice(&[1.0, scalar(v)]);
    }
    e
}

/// Observed trajectory, the intervention, and the trajectory the same
/// actions produce once the intervention is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct CfSample {
    pub observed: Trajectory,
    pub intervention: Intervention,
    pub counterfactual: Trajectory,
}

impl CfSample {
    pub fn new(observed: Trajectory, intervention: Intervention, counterfactual: Trajectory) -> Result<Self> {
        if observed.actions != counterfactual.actions {
            return Err(Error::Shape("observed and counterfactual actions differ".into()));
        }
        Ok(Self { observed, intervention, counterfactual })
    }

    pub fn steps(&self) -> usize {
        self.observed.len()
    }
}

/// The causal representation: a confounder estimate tagged with the
/// refresh round that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfounderVector {
    pub width: usize,
    pub version: u32,
    pub values: Vec<f64>,
}

impl ConfounderVector {
    pub fn new(values: Vec<f64>, version: u32) -> Result<Self> {
        let rep = Self { width: values.len(), version, values };
        rep.validate()?;
        Ok(rep)
    }

    pub fn zeros(width: usize) -> Self {
        Self { width, version: 0, values: vec![0.0; width] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.width {
            return Err(Error::InvalidRepresentation(format!(
                "width {} but {} values",
                self.width,
                self.values.len()
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRepresentation("non-finite value".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl<'de> Deserialize<'de> for ConfounderVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            width: usize,
            version: u32,
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        let rep = ConfounderVector { width: raw.width, version: raw.version, values: raw.values };
        rep.validate().map_err(serde::de::Error::custom)?;
        Ok(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs_row(i: usize) -> Vec<f64> {
        (0..OBS_WIDTH).map(|j| (i * OBS_WIDTH + j) as f64 * 0.01).collect()
    }

    fn traj(t: usize) -> Trajectory {
        let rows: Vec<Vec<f64>> = (1..=t).map(obs_row).collect();
        let acts = vec![vec![0.1, -0.2, 0.3]; t];
        Trajectory::from_raw(&obs_row(0), &rows, &acts).unwrap()
    }

    #[test]
    fn tensor_shapes() {
        assert_eq!(convert_input_shape(&traj(30)).unwrap().shape(), (30, 3, 9));
        assert_eq!(convert_input_shape(&traj(1)).unwrap().shape(), (1, 3, 9));
    }

    #[test]
    fn narrow_observations_rejected() {
        let rows = vec![vec![0.0; 10]];
        let err = Trajectory::from_raw(&[0.0; 11], &rows, &[vec![0.0; 3]]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(matches!(Trajectory::from_raw(&[0.0; 10], &[], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = Trajectory::from_raw(&obs_row(0), &[obs_row(1)], &[]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn one_hot_rows() {
        assert!(convert_input_shape(&traj(5)).unwrap().one_hot_valid());
    }

    #[test]
    fn block_velocity_is_scaled_displacement() {
        let tr = traj(2);
        let x = convert_input_shape(&tr).unwrap();
        let dx = tr.observations[1].0[obs_index::BLOCK_POS] - tr.observations[0].0[obs_index::BLOCK_POS];
        assert!((x.0[[1, BLOCK, 2]] - dx * BLOCK_VELOCITY_SCALE).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn layout_inverts(rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, OBS_WIDTH), 1..8)) {
            let acts = vec![vec![0.0; 3]; rows.len()];
            let tr = Trajectory::from_raw(&rows[0], &rows, &acts).unwrap();
            let back = convert_input_shape(&tr).unwrap().to_observations();
            prop_assert_eq!(back, tr.observations);
        }
    }

    #[test]
    fn encoding_layout() {
        let i = Intervention::none()
            .with(Variable::GoalPose, Value::Pose { x: 0.05, z: None })
            .with(Variable::BlockMass, Value::Scalar(0.7));
        let e = intervention_encoding(&i);
        assert_eq!(e, [0.0, 0.0, 0.0, 1.0, 0.05, 0.0, 1.0, 0.7, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(intervention_encoding(&Intervention::none()), [0.0; 12]);
    }

    #[test]
    fn sample_requires_shared_actions() {
        let a = traj(3);
        let mut b = a.clone();
        b.actions[2] = Action([0.0, 0.0, 0.0]);
        assert!(CfSample::new(a.clone(), Intervention::none(), b).is_err());
        assert!(CfSample::new(a.clone(), Intervention::none(), a).is_ok());
    }

    #[test]
    fn rep_json_round_trip() {
        let rep = ConfounderVector::new(vec![0.25, -1.5, 3.0e-7], 4).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        assert!(text.contains("\"width\":3") && text.contains("\"version\":4"));
        let back: ConfounderVector = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn rep_rejects_bad_width_and_nan() {
        assert!(serde_json::from_str::<ConfounderVector>(r#"{"width":2,"version":0,"values":[1.0]}"#).is_err());
        assert!(matches!(ConfounderVector::new(vec![f64::NAN], 0), Err(Error::InvalidRepresentation(_))));
    }
}
