//! Fragment objectives and per-step rewards.
//!
//! Every objective here is a non-negative combination of *fragment rates*:
//! `Σ_numa (free mod block) / Σ_numa free` for one resource. Migrations
//! never change total free resources, so within an episode each rate is an
//! integer fragment count over a fixed denominator. Rewards are computed
//! exactly in [`Exact`] and only lifted to floats by callers.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    pair_fragments, ClusterState, MigrationAction, MovePreview, NumaState, PhysicalMachine, PmId, Resource,
};
use crate::scalar::{exact_from_f64, exact_serde, Exact, Scalar};

pub const DEFAULT_SCALING: u32 = 64;
pub const DEFAULT_BLOCK: u32 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid objective parameter: {0}")]
    InvalidParameter(String),
    #[error("reward contract violated: {0}")]
    Contract(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// CPU fragments against an `x`-core grid.
    XCoreFr { x: u32 },
    /// Memory fragments against `block_gb`-GB blocks.
    MemFragFr { block_gb: u32 },
    /// `lambda * a + (1 - lambda) * b`.
    Mixed {
        #[serde(with = "exact_serde")]
        lambda: Exact,
        a: Box<ObjectiveKind>,
        b: Box<ObjectiveKind>,
    },
    /// Reach `goal` on `base` with as few migrations as possible.
    MinMnlToGoal {
        #[serde(with = "exact_serde")]
        goal: Exact,
        base: Box<ObjectiveKind>,
    },
}

fn default_scaling() -> u32 {
    DEFAULT_SCALING
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(flatten)]
    pub kind: ObjectiveKind,
    #[serde(default = "default_scaling")]
    pub scaling: u32,
}

/// One weighted fragment-rate component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub resource: Resource,
    pub block: u32,
    pub weight: Exact,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::x_core(DEFAULT_BLOCK)
    }
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Result<Self, ObjectiveError> {
        let spec = ObjectiveSpec {
            kind,
            scaling: DEFAULT_SCALING,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn x_core(x: u32) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::XCoreFr { x },
            scaling: DEFAULT_SCALING,
        }
    }

    pub fn memory(block_gb: u32) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::MemFragFr { block_gb },
            scaling: DEFAULT_SCALING,
        }
    }

    pub fn mixed(lambda: Exact, a: ObjectiveKind, b: ObjectiveKind) -> Result<Self, ObjectiveError> {
        ObjectiveSpec::new(ObjectiveKind::Mixed {
            lambda,
            a: Box::new(a),
            b: Box::new(b),
        })
    }

    pub fn min_mnl_to_goal(goal: Exact, base: ObjectiveKind) -> Result<Self, ObjectiveError> {
        ObjectiveSpec::new(ObjectiveKind::MinMnlToGoal {
            goal,
            base: Box::new(base),
        })
    }

    pub fn with_scaling(mut self, c: u32) -> Self {
        self.scaling = c;
        self
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.scaling == 0 {
            return Err(ObjectiveError::InvalidParameter("scaling constant c must be positive".into()));
        }
        validate_kind(&self.kind)
    }

    /// Goal on the base objective when this is a min-MNL-to-goal objective.
    pub fn goal(&self) -> Option<Exact> {
        match &self.kind {
            ObjectiveKind::MinMnlToGoal { goal, .. } => Some(*goal),
            _ => None,
        }
    }

    /// The objective with any goal wrapper removed.
    pub fn base_kind(&self) -> &ObjectiveKind {
        match &self.kind {
            ObjectiveKind::MinMnlToGoal { base, .. } => base,
            k => k,
        }
    }

    pub fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        flatten(self.base_kind(), Ratio::one(), &mut out);
        out.retain(|t| !t.weight.is_zero());
        out
    }

    /// Fragment grid used for feature encoding: the first CPU block, or 16.
    pub fn cpu_block(&self) -> u32 {
        self.terms()
            .iter()
            .find(|t| t.resource == Resource::Cpu)
            .map(|t| t.block)
            .unwrap_or(DEFAULT_BLOCK)
    }

    /// Objective value of a state (lower is better).
    pub fn value(&self, state: &ClusterState) -> Exact {
        self.terms()
            .iter()
            .map(|t| t.weight * term_rate(state, t))
            .fold(Exact::zero(), |a, b| a + b)
    }

    /// Per-step reward ignoring any goal bonus: the scaled change of the
    /// source and destination PMs' fragments.
    pub fn base_reward(&self, before: &[[NumaState; 2]], after: &[[NumaState; 2]]) -> Exact {
        let c = Exact::from_integer(self.scaling as i64);
        self.terms()
            .iter()
            .map(|t| {
                let b: i64 = before.iter().map(|n| pair_fragments(n, t.resource, t.block) as i64).sum();
                let a: i64 = after.iter().map(|n| pair_fragments(n, t.resource, t.block) as i64).sum();
                t.weight * Exact::from_integer(b - a) / c
            })
            .fold(Exact::zero(), |x, y| x + y)
    }
}

fn validate_kind(kind: &ObjectiveKind) -> Result<(), ObjectiveError> {
    let unit = |v: Exact, what: &str| {
        if v < Exact::zero() || v > Exact::one() {
            Err(ObjectiveError::InvalidParameter(format!("{what} must lie in [0, 1]")))
        } else {
            Ok(())
        }
    };
    match kind {
        ObjectiveKind::XCoreFr { x } if *x == 0 => {
            Err(ObjectiveError::InvalidParameter("X must be positive".into()))
        }
        ObjectiveKind::MemFragFr { block_gb } if *block_gb == 0 => {
            Err(ObjectiveError::InvalidParameter("memory block must be positive".into()))
        }
        ObjectiveKind::XCoreFr { .. } | ObjectiveKind::MemFragFr { .. } => Ok(()),
        ObjectiveKind::Mixed { lambda, a, b } => {
            unit(*lambda, "lambda")?;
            validate_kind(a)?;
            validate_kind(b)
        }
        ObjectiveKind::MinMnlToGoal { goal, base } => {
            unit(*goal, "FR goal")?;
            if matches!(**base, ObjectiveKind::MinMnlToGoal { .. }) {
                return Err(ObjectiveError::InvalidParameter("goal objectives cannot nest".into()));
            }
            validate_kind(base)
        }
    }
}

fn flatten(kind: &ObjectiveKind, weight: Exact, out: &mut Vec<Term>) {
    match kind {
        ObjectiveKind::XCoreFr { x } => push_term(out, Resource::Cpu, *x, weight),
        ObjectiveKind::MemFragFr { block_gb } => push_term(out, Resource::Mem, *block_gb, weight),
        ObjectiveKind::Mixed { lambda, a, b } => {
            flatten(a, weight * lambda, out);
            flatten(b, weight * (Exact::one() - lambda), out);
        }
        ObjectiveKind::MinMnlToGoal { base, .. } => flatten(base, weight, out),
    }
}

fn push_term(out: &mut Vec<Term>, resource: Resource, block: u32, weight: Exact) {
    if let Some(t) = out.iter_mut().find(|t| t.resource == resource && t.block == block) {
        t.weight += weight;
    } else {
        out.push(Term { resource, block, weight });
    }
}

fn term_rate(state: &ClusterState, t: &Term) -> Exact {
    let free = state.total_free(t.resource);
    if free == 0 {
        return Exact::zero();
    }
    Exact::new(state.resource_fragments(t.resource, t.block) as i64, free as i64)
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::XCoreFr { x } => write!(f, "fr{x}"),
            ObjectiveKind::MemFragFr { block_gb } => write!(f, "mem{block_gb}"),
            ObjectiveKind::Mixed { lambda, a, b } => {
                write!(f, "mixed:{}:{a}:{b}", Scalar::to_f64(*lambda))
            }
            ObjectiveKind::MinMnlToGoal { goal, base } => write!(f, "goal:{}:{base}", Scalar::to_f64(*goal)),
        }
    }
}

impl fmt::Display for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

fn parse_simple(tok: &str) -> Result<ObjectiveKind, ObjectiveError> {
    let bad = || ObjectiveError::InvalidParameter(format!("unknown objective `{tok}`"));
    let num = |s: &str| s.parse::<u32>().map_err(|_| bad());
    if let Some(rest) = tok.strip_prefix("fr") {
        Ok(ObjectiveKind::XCoreFr { x: num(rest)? })
    } else if let Some(rest) = tok.strip_prefix("mem") {
        Ok(ObjectiveKind::MemFragFr { block_gb: num(rest)? })
    } else {
        Err(bad())
    }
}

fn parse_fraction(s: &str) -> Result<Exact, ObjectiveError> {
    s.parse::<f64>()
        .ok()
        .and_then(exact_from_f64)
        .ok_or_else(|| ObjectiveError::InvalidParameter(format!("bad number `{s}`")))
}

/// Parses `fr16`, `mem64`, `mixed:0.4:fr64:fr16` and `goal:0.3:fr16`.
impl FromStr for ObjectiveSpec {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let kind = match parts.as_slice() {
            [simple] => parse_simple(simple)?,
            ["mixed", l, a, b] => ObjectiveKind::Mixed {
                lambda: parse_fraction(l)?,
                a: Box::new(parse_simple(a)?),
                b: Box::new(parse_simple(b)?),
            },
            ["goal", g, base] => ObjectiveKind::MinMnlToGoal {
                goal: parse_fraction(g)?,
                base: Box::new(parse_simple(base)?),
            },
            ["goal", g, "mixed", l, a, b] => ObjectiveKind::MinMnlToGoal {
                goal: parse_fraction(g)?,
                base: Box::new(ObjectiveKind::Mixed {
                    lambda: parse_fraction(l)?,
                    a: Box::new(parse_simple(a)?),
                    b: Box::new(parse_simple(b)?),
                }),
            },
            _ => return Err(ObjectiveError::InvalidParameter(format!("cannot parse objective `{s}`"))),
        };
        ObjectiveSpec::new(kind)
    }
}

/// `S_i = Σ_j (free_ij mod x) / c` for one PM.
pub fn rescaled_fragment_size<T: Scalar>(pm: &PhysicalMachine, x: u32, c: u32) -> Result<T, ObjectiveError> {
    if x == 0 || c == 0 {
        return Err(ObjectiveError::InvalidParameter("X and c must be positive".into()));
    }
    Ok(T::from_int(pm.fragments(Resource::Cpu, x) as i64) / T::from_int(c as i64))
}

/// Reward for the transition `before -> after` caused by `action`.
///
/// The source and destination PMs are compared before and after; when they
/// coincide the PM is counted once.
pub fn step_reward(
    before: &ClusterState,
    after: &ClusterState,
    action: &MigrationAction,
    spec: &ObjectiveSpec,
) -> Result<Exact, ObjectiveError> {
    if action.vm.0 >= before.num_vms() || action.dest_pm.0 >= before.num_pms() {
        return Err(ObjectiveError::Contract("action refers to unknown VM or PM".into()));
    }
    if before.num_pms() != after.num_pms() || before.num_vms() != after.num_vms() {
        return Err(ObjectiveError::Contract("states describe different clusters".into()));
    }
    let src = before.placement(action.vm).pm;
    let landed = after.placement(action.vm);
    if landed.pm != action.dest_pm || action.dest_numa.is_some_and(|s| s != landed.slot) {
        return Err(ObjectiveError::Contract(format!(
            "{} is at {landed} after the step, expected {}",
            action.vm, action.dest_pm
        )));
    }
    let touched: Vec<PmId> = if src == action.dest_pm {
        vec![src]
    } else {
        vec![src, action.dest_pm]
    };
    let b: Vec<[NumaState; 2]> = touched.iter().map(|&p| before.pm(p).numas).collect();
    let a: Vec<[NumaState; 2]> = touched.iter().map(|&p| after.pm(p).numas).collect();
    let r = spec.base_reward(&b, &a);
    Ok(match spec.goal() {
        Some(goal) => goal_reward(r, spec.value(after), goal),
        None => r,
    })
}

/// `step_r - 1` while the objective is above the goal, `step_r + 10` once
/// it is at or below it.
pub fn goal_reward<T: Scalar>(step_r: T, current: T, goal: T) -> T {
    if current <= goal {
        step_r + T::from_int(10)
    } else {
        step_r - T::one()
    }
}

/// `lambda * a + (1 - lambda) * b`.
pub fn mixed_objective<T: Scalar>(a: T, b: T, lambda: T) -> Result<T, ObjectiveError> {
    if lambda < T::zero() || lambda > T::one() {
        return Err(ObjectiveError::InvalidParameter("lambda must lie in [0, 1]".into()));
    }
    Ok(lambda * a + (T::one() - lambda) * b)
}

/// Memory fragments over total free memory; zero when nothing is free.
pub fn memory_fragment_rate<T: Scalar>(state: &ClusterState, block_gb: u32) -> Result<T, ObjectiveError> {
    if block_gb == 0 {
        return Err(ObjectiveError::InvalidParameter("memory block must be positive".into()));
    }
    let free = state.total_free(Resource::Mem);
    if free == 0 {
        return Ok(T::zero());
    }
    Ok(T::from_int(state.resource_fragments(Resource::Mem, block_gb) as i64) / T::from_int(free as i64))
}

/// Integer surrogate of an objective for a fixed cluster.
///
/// Because migrations preserve total free resources, the objective of any
/// reachable state equals `score / scale` for a fixed positive `scale`; the
/// score compares candidate moves without rational arithmetic.
#[derive(Clone, Debug)]
pub struct FragmentScore {
    terms: Vec<(Resource, u32, i128)>,
}

impl FragmentScore {
    pub fn new(spec: &ObjectiveSpec, state: &ClusterState) -> Self {
        let raw: Vec<(Term, i128)> = spec
            .terms()
            .into_iter()
            .map(|t| (t, state.total_free(t.resource) as i128))
            .collect();
        let mut lcm: i128 = 1;
        for (t, free) in &raw {
            if *free > 0 {
                lcm = lcm.lcm(&(*t.weight.denom() as i128 * free));
            }
        }
        let terms = raw
            .into_iter()
            .map(|(t, free)| {
                let coef = if free > 0 {
                    *t.weight.numer() as i128 * (lcm / (*t.weight.denom() as i128 * free))
                } else {
                    0
                };
                (t.resource, t.block, coef)
            })
            .collect();
        FragmentScore { terms }
    }

    pub fn pm(&self, pm: &PhysicalMachine) -> i128 {
        self.numas(&pm.numas)
    }

    pub fn numas(&self, numas: &[NumaState; 2]) -> i128 {
        self.terms
            .iter()
            .map(|&(r, b, coef)| coef * pair_fragments(numas, r, b) as i128)
            .sum()
    }

    /// Score change (after minus before) of a previewed move; negative is
    /// an improvement.
    pub fn move_delta(&self, state: &ClusterState, preview: &MovePreview) -> i128 {
        if preview.src == preview.dest {
            self.numas(&preview.dest_after) - self.pm(state.pm(preview.dest))
        } else {
            self.numas(&preview.src_after) + self.numas(&preview.dest_after)
                - self.pm(state.pm(preview.src))
                - self.pm(state.pm(preview.dest))
        }
    }

    pub fn state(&self, state: &ClusterState) -> i128 {
        state.pms().iter().map(|pm| self.pm(pm)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{NumaSlot, VmId};
    use crate::fixtures::worked_example;

    fn pm_with(frees: (u32, u32)) -> PhysicalMachine {
        let mut a = NumaState::empty(64, 128);
        a.free_cpu = frees.0;
        let mut b = NumaState::empty(64, 128);
        b.free_cpu = frees.1;
        PhysicalMachine {
            id: PmId(0),
            numas: [a, b],
            hosted: vec![],
        }
    }

    #[test]
    fn rescaled_size_examples() {
        assert_eq!(rescaled_fragment_size::<f64>(&pm_with((12, 0)), 16, 64).unwrap(), 0.1875);
        assert_eq!(rescaled_fragment_size::<Exact>(&pm_with((16, 32)), 16, 64).unwrap(), Exact::zero());
        assert_eq!(
            rescaled_fragment_size::<Exact>(&pm_with((15, 15)), 16, 64).unwrap(),
            Exact::new(30, 64)
        );
    }

    #[test]
    fn worked_example_reward_is_a_quarter() {
        let s = worked_example();
        let action = MigrationAction::new(VmId(0), PmId(1));
        let next = s.apply_migration(&action, NumaSlot::Numa0).unwrap();
        let r = step_reward(&s, &next, &action, &ObjectiveSpec::default()).unwrap();
        assert_eq!(r, Exact::new(16, 64));
        let back = MigrationAction::new(VmId(0), PmId(0));
        let undone = next.apply_migration(&back, NumaSlot::Numa0).unwrap();
        assert_eq!(step_reward(&next, &undone, &back, &ObjectiveSpec::default()).unwrap(), -r);
    }

    #[test]
    fn reward_contract_checked() {
        let s = worked_example();
        let action = MigrationAction::new(VmId(0), PmId(1));
        let err = step_reward(&s, &s, &action, &ObjectiveSpec::default()).unwrap_err();
        assert!(matches!(err, ObjectiveError::Contract(_)));
    }

    #[test]
    fn goal_reward_branches() {
        assert_eq!(goal_reward(0.25, 0.40, 0.30), -0.75);
        assert_eq!(goal_reward(0.25, 0.30, 0.30), 10.25);
        assert_eq!(goal_reward(0.0, 0.0, 0.5), 10.0);
    }

    #[test]
    fn mixed_examples() {
        let v: f64 = mixed_objective(0.6960, 0.3413, 0.4).unwrap();
        assert!((v - 0.4832).abs() < 5e-5, "{v}");
        assert_eq!(mixed_objective(0.6960, 0.3413, 0.0).unwrap(), 0.3413);
        assert_eq!(mixed_objective(0.6960, 0.3413, 1.0).unwrap(), 0.6960);
        assert!(mixed_objective(0.1, 0.2, 1.5).is_err());
    }

    #[test]
    fn memory_rate_examples() {
        use crate::cluster::{ClusterState, Placement, VirtualMachine};
        let vms = vec![VirtualMachine::custom(VmId(0), 2, 32, 1)];
        let s = ClusterState::new(
            vec![[(16, 128), (0, 0)]],
            vms,
            vec![Placement { pm: PmId(0), slot: NumaSlot::Numa0 }],
        )
        .unwrap();
        assert_eq!(memory_fragment_rate::<Exact>(&s, 64).unwrap(), Exact::new(1, 3));
        let spec = ObjectiveSpec::mixed(
            Exact::one(),
            ObjectiveKind::MemFragFr { block_gb: 64 },
            ObjectiveKind::XCoreFr { x: 16 },
        )
        .unwrap();
        assert_eq!(spec.value(&s), Exact::new(1, 3));
    }

    #[test]
    fn parse_and_display() {
        let s: ObjectiveSpec = "mixed:0.4:fr64:fr16".parse().unwrap();
        assert_eq!(s.to_string(), "mixed:0.4:fr64:fr16");
        assert_eq!(s.terms().len(), 2);
        let g: ObjectiveSpec = "goal:0.3:fr16".parse().unwrap();
        assert_eq!(g.goal(), Some(Exact::new(3, 10)));
        assert!("mixed:1.5:fr64:fr16".parse::<ObjectiveSpec>().is_err());
        assert!("fr0".parse::<ObjectiveSpec>().is_err());
        assert!("bogus".parse::<ObjectiveSpec>().is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s: ObjectiveSpec = "goal:0.25:mixed:0.4:fr64:mem64".parse().unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: ObjectiveSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let plain: ObjectiveSpec = serde_json::from_str(r#"{"kind":"x_core_fr","x":16}"#).unwrap();
        assert_eq!(plain, ObjectiveSpec::default());
    }

    #[test]
    fn score_orders_like_value() {
        let s = worked_example();
        let spec = ObjectiveSpec::default();
        let score = FragmentScore::new(&spec, &s);
        let next = s
            .apply_migration(&MigrationAction::new(VmId(0), PmId(1)), NumaSlot::Numa0)
            .unwrap();
        assert!(score.state(&next) < score.state(&s));
        assert_eq!(score.state(&next), 0);
    }
}
