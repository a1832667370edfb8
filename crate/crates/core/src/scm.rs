//! Structural causal model layer: the five causal variables of the block
//! world, the disjoint training (A) and generalization (B) value spaces,
//! do-interventions, and the twelve evaluation protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::geometry::{in_workspace, Vec2};

/// Causal variable names, abbreviated the way the protocol table writes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "bp")]
    BlockPose,
    #[serde(rename = "bm")]
    BlockMass,
    #[serde(rename = "bs")]
    BlockSize,
    #[serde(rename = "gp")]
    GoalPose,
    #[serde(rename = "ff")]
    FloorFriction,
}

impl Variable {
    pub const ALL: [Variable; 5] = [
        Variable::BlockPose,
        Variable::GoalPose,
        Variable::BlockMass,
        Variable::BlockSize,
        Variable::FloorFriction,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variable::BlockPose => "bp",
            Variable::BlockMass => "bm",
            Variable::BlockSize => "bs",
            Variable::GoalPose => "gp",
            Variable::FloorFriction => "ff",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" | "block_pose" => Ok(Variable::BlockPose),
            "bm" | "block_mass" => Ok(Variable::BlockMass),
            "bs" | "block_size" => Ok(Variable::BlockSize),
            "gp" | "goal_pose" => Ok(Variable::GoalPose),
            "ff" | "floor_friction" => Ok(Variable::FloorFriction),
            other => Err(Error::UnknownVariable(other.to_string())),
        }
    }
}

pub type VariableSet = BTreeSet<Variable>;

pub fn parse_variables<I, S>(names: I) -> Result<VariableSet>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    names.into_iter().map(|n| n.as_ref().parse()).collect()
}

/// Full assignment of the causal variables for one episode.
///
/// Block and (for pushing) goal heights are forced to rest on the floor at
/// reset, so only their `x` is free in that case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalVariables {
    pub block_mass: f64,
    pub block_size: f64,
    pub block_pose: Vec2,
    pub goal_pose: Vec2,
    pub floor_friction: f64,
}

pub const MASS_LIMITS: (f64, f64) = (1e-3, 10.0);
pub const SIZE_LIMITS: (f64, f64) = (1e-3, 0.3);
pub const FRICTION_LIMITS: (f64, f64) = (0.0, 2.0);

impl CausalVariables {
    pub fn defaults(task: TaskKind) -> Self {
        let block_size = 0.1;
        match task {
            TaskKind::Pushing => Self {
                block_mass: 0.75,
                block_size,
                block_pose: Vec2::new(-0.06, block_size / 2.0),
                goal_pose: Vec2::new(0.06, block_size / 2.0),
                floor_friction: 0.45,
            },
            TaskKind::Picking => Self {
                block_mass: 0.75,
                block_size,
                block_pose: Vec2::new(0.0, block_size / 2.0),
                goal_pose: Vec2::new(0.0, 0.20),
                floor_friction: 0.45,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.block_mass, MASS_LIMITS) {
            return Err(Error::InvalidVariables(format!("block_mass {}", self.block_mass)));
        }
        if !in_range(self.block_size, SIZE_LIMITS) {
            return Err(Error::InvalidVariables(format!("block_size {}", self.block_size)));
        }
        if !in_range(self.floor_friction, FRICTION_LIMITS) {
            return Err(Error::InvalidVariables(format!(
                "floor_friction {}",
                self.floor_friction
            )));
        }
        if !in_workspace(self.block_pose) {
            return Err(Error::InvalidVariables(format!(
                "block_pose ({}, {}) outside workspace",
                self.block_pose.x, self.block_pose.z
            )));
        }
        if !in_workspace(self.goal_pose) {
            return Err(Error::InvalidVariables(format!(
                "goal_pose ({}, {}) outside workspace",
                self.goal_pose.x, self.goal_pose.z
            )));
        }
        Ok(())
    }
}

/// Value assigned by an intervention.
///
/// Poses may leave `z` unset, meaning the height keeps its current value
/// (the environment re-seats floor-resting objects at reset anyway).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(f64),
    Pose {
        x: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
    },
}

impl Value {
    pub fn pose(x: f64, z: f64) -> Self {
        Value::Pose { x, z: Some(z) }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Value::Scalar(v) => v.is_finite(),
            Value::Pose { x, z } => x.is_finite() && z.is_none_or(f64::is_finite),
        }
    }
}

/// A do-intervention: partial assignment of causal variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Intervention(pub BTreeMap<Variable, Value>);

impl Intervention {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Variable, value: Value) -> Self {
        self.0.insert(var, value);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, var: Variable) -> Option<&Value> {
        self.0.get(&var)
    }

    pub fn variables(&self) -> VariableSet {
        self.0.keys().copied().collect()
    }

    /// Merge `other` into `self`; entries of `other` win.
    pub fn merged(mut self, other: &Intervention) -> Self {
        for (k, v) in &other.0 {
            self.0.insert(*k, *v);
        }
        self
    }
}

/// Point-update `vars` with the intervened values.
pub fn apply_intervention(vars: &CausalVariables, intervention: &Intervention) -> Result<CausalVariables> {
    let mut out = *vars;
    for (&var, value) in &intervention.0 {
        if !value.is_finite() {
            return Err(Error::InvalidIntervention(format!("{var}: non-finite value")));
        }
        match (var, *value) {
            (Variable::BlockMass, Value::Scalar(v)) => out.block_mass = v,
            (Variable::BlockSize, Value::Scalar(v)) => out.block_size = v,
            (Variable::FloorFriction, Value::Scalar(v)) => out.floor_friction = v,
            (Variable::BlockPose, Value::Pose { x, z }) => {
                out.block_pose.x = x;
                if let Some(z) = z {
                    out.block_pose.z = z;
                }
            }
            (Variable::GoalPose, Value::Pose { x, z }) => {
                out.goal_pose.x = x;
                if let Some(z) = z {
                    out.goal_pose.z = z;
                }
            }
            (var, value) => {
                return Err(Error::InvalidIntervention(format!(
                    "{var}: value {value:?} has the wrong kind"
                )))
            }
        }
    }
    out.validate().map_err(|e| match e {
        Error::InvalidVariables(m) => Error::InvalidIntervention(m),
        other => other,
    })?;
    Ok(out)
}

/// Interval with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub lo_open: bool,
    #[serde(default)]
    pub hi_open: bool,
}

impl Interval {
    pub const fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: false, hi_open: false }
    }

    pub const fn left_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: true, hi_open: false }
    }

    pub const fn right_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: false, hi_open: true }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_open { v > self.lo } else { v >= self.lo };
        let below = if self.hi_open { v < self.hi } else { v <= self.hi };
        above && below
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        loop {
            let v = rng.random_range(self.lo..=self.hi);
            if self.contains(v) {
                return v;
            }
        }
    }

    fn overlaps(&self, other: &Interval) -> bool {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo < hi {
            return true;
        }
        lo == hi && self.contains(lo) && other.contains(lo)
    }
}

/// Union of intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(pub Vec<Interval>);

impl Region {
    pub fn single(i: Interval) -> Self {
        Region(vec![i])
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0.iter().any(|i| i.contains(v))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total: f64 = self.0.iter().map(Interval::len).sum();
        let mut pick = rng.random_range(0.0..total);
        for seg in &self.0 {
            if pick < seg.len() {
                return seg.sample(rng);
            }
            pick -= seg.len();
        }
        self.0.last().expect("non-empty region").sample(rng)
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.0.iter().any(|a| other.0.iter().any(|b| a.overlaps(b)))
    }

    pub fn midpoint(&self) -> f64 {
        let first = &self.0[0];
        0.5 * (first.lo + first.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Space {
    A,
    B,
}

impl FromStr for Space {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Space::A),
            "B" | "b" => Ok(Space::B),
            other => Err(Error::Configuration(format!("unknown space {other}"))),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::A => "A",
            Space::B => "B",
        })
    }
}

/// Per-variable value ranges of one space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceBounds {
    pub block_mass: Region,
    pub block_size: Region,
    pub floor_friction: Region,
    pub block_x: Region,
    pub goal_x: Region,
    /// Only elevated goals (picking) have a free height.
    pub goal_height: Option<Region>,
}

/// Space A and space B for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpace {
    pub a: SpaceBounds,
    pub b: SpaceBounds,
}

impl VariableSpace {
    pub fn for_task(task: TaskKind) -> Self {
        let x_a = Region::single(Interval::closed(-0.10, 0.10));
        let x_b = Region(vec![Interval::right_open(-0.18, -0.10), Interval::left_open(0.10, 0.18)]);
        let (h_a, h_b) = match task {
            TaskKind::Pushing => (None, None),
            TaskKind::Picking => (
                Some(Region::single(Interval::closed(0.15, 0.25))),
                Some(Region::single(Interval::left_open(0.25, 0.35))),
            ),
        };
        Self {
            a: SpaceBounds {
                block_mass: Region::single(Interval::closed(0.5, 1.0)),
                block_size: Region::single(Interval::closed(0.08, 0.12)),
                floor_friction: Region::single(Interval::closed(0.3, 0.6)),
                block_x: x_a.clone(),
                goal_x: x_a,
                goal_height: h_a,
            },
            b: SpaceBounds {
                block_mass: Region::single(Interval::left_open(1.0, 2.0)),
                block_size: Region::single(Interval::left_open(0.12, 0.20)),
                floor_friction: Region::single(Interval::left_open(0.6, 1.0)),
                block_x: x_b.clone(),
                goal_x: x_b,
                goal_height: h_b,
            },
        }
    }

    pub fn bounds(&self, space: Space) -> &SpaceBounds {
        match space {
            Space::A => &self.a,
            Space::B => &self.b,
        }
    }

    /// Checks that A and B never share a value for any variable.
    pub fn check_disjoint(&self) -> Result<()> {
        let pairs = [
            ("bm", &self.a.block_mass, &self.b.block_mass),
            ("bs", &self.a.block_size, &self.b.block_size),
            ("ff", &self.a.floor_friction, &self.b.floor_friction),
            ("bp", &self.a.block_x, &self.b.block_x),
            ("gp", &self.a.goal_x, &self.b.goal_x),
        ];
        for (name, a, b) in pairs {
            if a.overlaps(b) {
                return Err(Error::Configuration(format!("spaces A and B overlap on {name}")));
            }
        }
        match (&self.a.goal_height, &self.b.goal_height) {
            (Some(a), Some(b)) if a.overlaps(b) => {
                Err(Error::Configuration("spaces A and B overlap on goal height".into()))
            }
            (Some(_), None) | (None, Some(_)) => {
                Err(Error::Configuration("goal height defined for only one space".into()))
            }
            _ => Ok(()),
        }
    }

    /// Draws one uniform value per named variable from `space`.
    pub fn sample(&self, space: Space, variables: &VariableSet, seed: u64) -> Intervention {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(space, variables, &mut rng)
    }

    pub fn sample_named<S: AsRef<str>>(&self, space: Space, names: &[S], seed: u64) -> Result<Intervention> {
        let vars = parse_variables(names)?;
        Ok(self.sample(space, &vars, seed))
    }

    pub fn sample_with<R: Rng>(&self, space: Space, variables: &VariableSet, rng: &mut R) -> Intervention {
        let b = self.bounds(space);
        let mut out = Intervention::none();
        // Variable::ALL order fixes the RNG consumption order.
        for var in Variable::ALL {
            if !variables.contains(&var) {
                continue;
            }
            let value = match var {
                Variable::BlockMass => Value::Scalar(b.block_mass.sample(rng)),
                Variable::BlockSize => Value::Scalar(b.block_size.sample(rng)),
                Variable::FloorFriction => Value::Scalar(b.floor_friction.sample(rng)),
                Variable::BlockPose => Value::Pose { x: b.block_x.sample(rng), z: None },
                Variable::GoalPose => {
                    let x = b.goal_x.sample(rng);
                    let z = b.goal_height.as_ref().map(|h| h.sample(rng));
                    Value::Pose { x, z }
                }
            };
            out.0.insert(var, value);
        }
        out
    }

    /// True iff every variable of `vars` lies in its interval for `space`.
    pub fn contains(&self, vars: &CausalVariables, space: Space) -> bool {
        let b = self.bounds(space);
        let height_ok = match &b.goal_height {
            Some(h) => h.contains(vars.goal_pose.z),
            None => true,
        };
        b.block_mass.contains(vars.block_mass)
            && b.block_size.contains(vars.block_size)
            && b.floor_friction.contains(vars.floor_friction)
            && b.block_x.contains(vars.block_pose.x)
            && b.goal_x.contains(vars.goal_pose.x)
            && height_ok
    }

    /// True iff every intervened value lies in `space`.
    pub fn intervention_in_space(&self, intervention: &Intervention, space: Space) -> bool {
        let b = self.bounds(space);
        intervention.0.iter().all(|(var, value)| match (var, *value) {
            (Variable::BlockMass, Value::Scalar(v)) => b.block_mass.contains(v),
            (Variable::BlockSize, Value::Scalar(v)) => b.block_size.contains(v),
            (Variable::FloorFriction, Value::Scalar(v)) => b.floor_friction.contains(v),
            (Variable::BlockPose, Value::Pose { x, .. }) => b.block_x.contains(x),
            (Variable::GoalPose, Value::Pose { x, z }) => {
                let h_ok = match (&b.goal_height, z) {
                    (Some(h), Some(z)) => h.contains(z),
                    (None, _) => true,
                    (Some(_), None) => false,
                };
                b.goal_x.contains(x) && h_ok
            }
            _ => false,
        })
    }
}

/// Convenience wrapper matching the free-function form of `in_space`.
pub fn in_space(table: &VariableSpace, vars: &CausalVariables, space: Space) -> bool {
    table.contains(vars, space)
}

/// Evaluation protocol identifier, `P0` through `P11`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProtocolId(u8);

impl ProtocolId {
    pub const COUNT: u8 = 12;

    pub fn new(index: u8) -> Result<Self> {
        if index < Self::COUNT {
            Ok(Self(index))
        } else {
            Err(Error::UnknownProtocol(format!("P{index}")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ProtocolId> {
        (0..Self::COUNT).map(ProtocolId)
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl FromStr for ProtocolId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let idx = s
            .strip_prefix('P')
            .or_else(|| s.strip_prefix('p'))
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| Error::UnknownProtocol(s.to_string()))?;
        ProtocolId::new(idx).map_err(|_| Error::UnknownProtocol(s.to_string()))
    }
}

impl TryFrom<String> for ProtocolId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProtocolId> for String {
    fn from(p: ProtocolId) -> String {
        p.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub id: ProtocolId,
    pub space: Space,
    pub variables: VariableSet,
}

/// The evaluation protocol table.
pub fn protocol_spec(id: ProtocolId) -> Protocol {
    use Space::{A, B};
    use Variable::*;
    let (space, vars): (Space, &[Variable]) = match id.0 {
        0 => (A, &[]),
        1 => (A, &[BlockMass]),
        2 => (B, &[BlockMass]),
        3 => (A, &[BlockSize]),
        4 => (A, &[BlockPose]),
        5 => (A, &[GoalPose]),
        6 => (B, &[BlockPose, GoalPose]),
        7 => (A, &[BlockPose, GoalPose, BlockMass]),
        8 => (B, &[BlockPose, GoalPose, BlockMass]),
        9 => (B, &[BlockPose, GoalPose, BlockMass, FloorFriction]),
        10 => (A, &Variable::ALL),
        11 => (B, &Variable::ALL),
        _ => unreachable!("ProtocolId is range-checked"),
    };
    Protocol { id, space, variables: vars.iter().copied().collect() }
}

pub fn protocol_by_name(name: &str) -> Result<Protocol> {
    Ok(protocol_spec(name.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> VariableSpace {
        VariableSpace::for_task(TaskKind::Pushing)
    }

    #[test]
    fn mass_samples_stay_in_space_a() {
        let t = table();
        let vars: VariableSet = [Variable::BlockMass].into();
        for seed in 0..1000 {
            let i = t.sample(Space::A, &vars, seed);
            match i.get(Variable::BlockMass) {
                Some(Value::Scalar(m)) => assert!((0.5..=1.0).contains(m), "{m}"),
                other => panic!("unexpected {other:?}"),
            }
            assert_eq!(i.0.len(), 1);
        }
    }

    #[test]
    fn empty_set_gives_empty_intervention() {
        assert!(table().sample(Space::B, &VariableSet::new(), 7).is_empty());
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let err = table().sample_named(Space::A, &["color"], 0).unwrap_err();
        assert!(matches!(err, Error::UnknownVariable(_)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = VariableSpace::for_task(TaskKind::Picking);
        let all: VariableSet = Variable::ALL.into_iter().collect();
        assert_eq!(t.sample(Space::B, &all, 42), t.sample(Space::B, &all, 42));
    }

    #[test]
    fn point_update_leaves_other_fields() {
        let d = CausalVariables::defaults(TaskKind::Pushing);
        let out = apply_intervention(&d, &Intervention::none().with(Variable::BlockMass, Value::Scalar(1.5))).unwrap();
        assert_eq!(out.block_mass, 1.5);
        assert_eq!(out.block_size.to_bits(), d.block_size.to_bits());
        assert_eq!(out.block_pose, d.block_pose);
        assert_eq!(out.goal_pose, d.goal_pose);
        assert_eq!(out.floor_friction.to_bits(), d.floor_friction.to_bits());
    }

    #[test]
    fn empty_intervention_is_identity() {
        let d = CausalVariables::defaults(TaskKind::Picking);
        assert_eq!(apply_intervention(&d, &Intervention::none()).unwrap(), d);
    }

    #[test]
    fn out_of_workspace_pose_is_rejected() {
        let d = CausalVariables::defaults(TaskKind::Pushing);
        let i = Intervention::none().with(Variable::BlockPose, Value::pose(0.9, 0.05));
        assert!(matches!(apply_intervention(&d, &i), Err(Error::InvalidIntervention(_))));
    }

    #[test]
    fn wrong_value_kind_is_rejected() {
        let d = CausalVariables::defaults(TaskKind::Pushing);
        let i = Intervention::none().with(Variable::BlockMass, Value::pose(0.0, 0.0));
        assert!(matches!(apply_intervention(&d, &i), Err(Error::InvalidIntervention(_))));
    }

    #[test]
    fn protocol_rows() {
        let p1 = protocol_spec("P1".parse().unwrap());
        assert_eq!(p1.space, Space::A);
        assert_eq!(p1.variables, [Variable::BlockMass].into());
        let p9 = protocol_spec("P9".parse().unwrap());
        assert_eq!(p9.space, Space::B);
        assert_eq!(
            p9.variables,
            [Variable::BlockPose, Variable::GoalPose, Variable::BlockMass, Variable::FloorFriction].into()
        );
        let p0 = protocol_spec("P0".parse().unwrap());
        assert_eq!((p0.space, p0.variables.len()), (Space::A, 0));
        assert!(matches!("P13".parse::<ProtocolId>(), Err(Error::UnknownProtocol(_))));
        assert!(matches!("Q1".parse::<ProtocolId>(), Err(Error::UnknownProtocol(_))));
    }

    #[test]
    fn in_space_membership() {
        let t = table();
        let d = CausalVariables::defaults(TaskKind::Pushing);
        assert!(t.contains(&d, Space::A));
        let heavy = CausalVariables { block_mass: 1.5, ..d };
        assert!(!t.contains(&heavy, Space::A));
        let all_b = CausalVariables {
            block_mass: 1.5,
            block_size: 0.15,
            floor_friction: 0.8,
            block_pose: Vec2::new(0.14, 0.075),
            goal_pose: Vec2::new(-0.15, 0.075),
        };
        assert!(t.contains(&all_b, Space::B));
        assert!(!t.contains(&all_b, Space::A));
    }

    #[test]
    fn picking_defaults_in_space_a() {
        let t = VariableSpace::for_task(TaskKind::Picking);
        assert!(t.contains(&CausalVariables::defaults(TaskKind::Picking), Space::A));
    }

    #[test]
    fn tables_are_disjoint() {
        table().check_disjoint().unwrap();
        VariableSpace::for_task(TaskKind::Picking).check_disjoint().unwrap();
    }

    #[test]
    fn intervention_json_shape() {
        let i = Intervention::none()
            .with(Variable::BlockMass, Value::Scalar(1.5))
            .with(Variable::GoalPose, Value::pose(0.1, 0.2));
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"bm":1.5,"gp":{"x":0.1,"z":0.2}}"#);
        let back: Intervention = serde_json::from_str(&s).unwrap();
        assert_eq!(back, i);
    }
}
