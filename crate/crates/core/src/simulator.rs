//! Deterministic episodic rescheduling environment.
//!
//! An episode grants exactly `mnl` migration steps. Legality covers CPU and
//! memory capacity, NUMA shape, anti-affinity, and excludes moving a VM onto
//! its current exact placement. For single-NUMA VMs the destination NUMA is
//! chosen by the step: the legal slot with the best post-move objective,
//! lower NUMA index on ties.

use num_traits::Zero;
use thiserror::Error;

use crate::cluster::{ClusterError, ClusterState, MigrationAction, MigrationPlan, NumaSlot, Placement, PmId, Violation, VmId};
use crate::objectives::{step_reward, ObjectiveError, ObjectiveSpec};
use crate::scalar::Exact;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidMapping(#[from] ClusterError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("illegal action at step {step}: {violation}")]
    Illegal { step: usize, violation: Violation },
    #[error("episode already finished after {steps} steps")]
    Finished { steps: usize },
}

/// One executed step, with the NUMA slots resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub action: MigrationAction,
    pub from: Placement,
    pub to: Placement,
    pub reward: Exact,
}

#[derive(Clone, Debug)]
pub struct Episode {
    state: ClusterState,
    step_index: usize,
    mnl: usize,
    objective: ObjectiveSpec,
    done: bool,
    cumulative_reward: Exact,
    trace: Vec<StepRecord>,
}

impl Episode {
    pub fn reset(mapping: &ClusterState, mnl: usize, objective: &ObjectiveSpec) -> Result<Self, SimError> {
        objective.validate()?;
        mapping.revalidate()?;
        let goal_met = objective.goal().is_some_and(|g| objective.value(mapping) <= g);
        Ok(Episode {
            state: mapping.clone(),
            step_index: 0,
            mnl,
            objective: objective.clone(),
            done: mnl == 0 || goal_met,
            cumulative_reward: Exact::zero(),
            trace: Vec::new(),
        })
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn mnl(&self) -> usize {
        self.mnl
    }

    pub fn objective(&self) -> &ObjectiveSpec {
        &self.objective
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn cumulative_reward(&self) -> Exact {
        self.cumulative_reward
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn remaining_steps(&self) -> usize {
        self.mnl - self.step_index
    }

    pub fn plan(&self) -> MigrationPlan {
        MigrationPlan::new(self.trace.iter().map(|r| r.action).collect())
    }

    /// Slots on `pm` that `vm` may legally move into.
    pub fn legal_slots(&self, vm: VmId, pm: PmId) -> Vec<NumaSlot> {
        legal_slots(&self.state, vm, pm)
    }

    /// Destination mask for `vm`: PM `i` is legal iff some slot on it is.
    pub fn legal_pms(&self, vm: VmId) -> Vec<bool> {
        (0..self.state.num_pms())
            .map(|i| has_legal_slot(&self.state, vm, PmId(i)))
            .collect()
    }

    /// VMs that have at least one legal destination.
    pub fn vm_mask(&self) -> Vec<bool> {
        (0..self.state.num_vms())
            .map(|k| (0..self.state.num_pms()).any(|i| has_legal_slot(&self.state, VmId(k), PmId(i))))
            .collect()
    }

    pub fn legal_actions(&self) -> Vec<MigrationAction> {
        legal_actions(&self.state)
    }

    /// Resolves the slot an action would land in, or the constraint it breaks.
    pub fn check_action(&self, action: &MigrationAction) -> Result<NumaSlot, Violation> {
        resolve_slot(&self.state, &self.objective, action)
    }

    /// Applies a legal action and returns its reward.
    pub fn step(&mut self, action: &MigrationAction) -> Result<Exact, SimError> {
        if self.done {
            return Err(SimError::Finished { steps: self.step_index });
        }
        let slot = self
            .check_action(action)
            .map_err(|violation| SimError::Illegal { step: self.step_index, violation })?;
        let resolved = MigrationAction::pinned(action.vm, action.dest_pm, slot);
        let before = self.state.clone();
        let from = self
            .state
            .move_vm(action.vm, action.dest_pm, slot)
            .map_err(|violation| SimError::Illegal { step: self.step_index, violation })?;
        let reward = step_reward(&before, &self.state, &resolved, &self.objective)?;
        self.trace.push(StepRecord {
            action: resolved,
            from,
            to: Placement { pm: action.dest_pm, slot },
            reward,
        });
        self.cumulative_reward += reward;
        self.step_index += 1;
        let goal_met = self.objective.goal().is_some_and(|g| self.objective.value(&self.state) <= g);
        self.done = self.step_index >= self.mnl || goal_met;
        Ok(reward)
    }

    /// Ends the episode early (no legal action left).
    pub fn finish(&mut self) {
        self.done = true;
    }
}

pub fn legal_slots(state: &ClusterState, vm: VmId, pm: PmId) -> Vec<NumaSlot> {
    let current = state.placement(vm);
    state
        .feasible_slots(vm, pm)
        .filter(|&s| Placement { pm, slot: s } != current)
        .collect()
}

pub fn has_legal_slot(state: &ClusterState, vm: VmId, pm: PmId) -> bool {
    let current = state.placement(vm);
    state
        .feasible_slots(vm, pm)
        .any(|s| Placement { pm, slot: s } != current)
}

/// Every legal `(vm, pm)` pair, VM-major.
pub fn legal_actions(state: &ClusterState) -> Vec<MigrationAction> {
    let mut out = Vec::new();
    for k in 0..state.num_vms() {
        for i in 0..state.num_pms() {
            if has_legal_slot(state, VmId(k), PmId(i)) {
                out.push(MigrationAction::new(VmId(k), PmId(i)));
            }
        }
    }
    out
}

/// Picks the NUMA slot an unpinned action lands in.
pub fn resolve_slot(state: &ClusterState, objective: &ObjectiveSpec, action: &MigrationAction) -> Result<NumaSlot, Violation> {
    if action.vm.0 >= state.num_vms() {
        return Err(Violation::UnknownVm(action.vm));
    }
    if action.dest_pm.0 >= state.num_pms() {
        return Err(Violation::UnknownPm(action.dest_pm));
    }
    let current = state.placement(action.vm);
    if let Some(slot) = action.dest_numa {
        if (Placement { pm: action.dest_pm, slot }) == current {
            return Err(Violation::NoOp { vm: action.vm });
        }
        state.check_move(action.vm, action.dest_pm, slot)?;
        return Ok(slot);
    }
    let mut first_violation = None;
    let mut best: Option<(NumaSlot, Exact)> = None;
    for &slot in NumaSlot::candidates(state.vm(action.vm).numa_count) {
        if (Placement { pm: action.dest_pm, slot }) == current {
            first_violation.get_or_insert(Violation::NoOp { vm: action.vm });
            continue;
        }
        if let Err(v) = state.check_move(action.vm, action.dest_pm, slot) {
            first_violation.get_or_insert(v);
            continue;
        }
        let p = state.preview_move(action.vm, action.dest_pm, slot);
        let r = if p.src == p.dest {
            objective.base_reward(&[state.pm(p.src).numas], &[p.dest_after])
        } else {
            objective.base_reward(
                &[state.pm(p.src).numas, state.pm(p.dest).numas],
                &[p.src_after, p.dest_after],
            )
        };
        // Strictly better only, so the lower slot wins ties.
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((slot, r));
        }
    }
    match best {
        Some((slot, _)) => Ok(slot),
        None => Err(first_violation.unwrap_or(Violation::NumaShape {
            vm: action.vm,
            slot: NumaSlot::Both,
        })),
    }
}

/// Final state and rewards of replaying a plan.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub final_state: ClusterState,
    pub final_objective: Exact,
    pub rewards: Vec<Exact>,
    pub trace: Vec<StepRecord>,
}

/// Replays `plan` from `mapping`, failing at the first illegal action.
pub fn rollout_plan(mapping: &ClusterState, plan: &MigrationPlan, objective: &ObjectiveSpec) -> Result<Rollout, SimError> {
    let mut ep = Episode::reset(mapping, plan.len(), objective)?;
    let mut rewards = Vec::with_capacity(plan.len());
    for action in &plan.actions {
        if ep.is_done() {
            // A goal objective may be met before the plan runs out.
            break;
        }
        rewards.push(ep.step(action)?);
    }
    Ok(Rollout {
        final_objective: objective.value(ep.state()),
        final_state: ep.state,
        rewards,
        trace: ep.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{fragment_rate, total_fragments, VirtualMachine, VmType};
    use crate::fixtures::{worked_example, RandomInstance};
    use num_rational::Ratio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example_episode() {
        let s = worked_example();
        let spec = ObjectiveSpec::default();
        let mut ep = Episode::reset(&s, 1, &spec).unwrap();
        assert_eq!(fragment_rate::<Exact>(ep.state(), 16).unwrap(), Ratio::new(1, 2));
        assert!(!ep.is_done());
        let r = ep.step(&MigrationAction::new(VmId(0), PmId(1))).unwrap();
        assert_eq!(r, Ratio::new(1, 4));
        assert!(ep.is_done());
        assert_eq!(fragment_rate::<Exact>(ep.state(), 16).unwrap(), Exact::zero());
        assert!(matches!(
            ep.step(&MigrationAction::new(VmId(1), PmId(1))),
            Err(SimError::Finished { .. })
        ));
    }

    #[test]
    fn zero_mnl_is_done() {
        let ep = Episode::reset(&worked_example(), 0, &ObjectiveSpec::default()).unwrap();
        assert!(ep.is_done());
    }

    #[test]
    fn reset_is_deterministic() {
        let s = worked_example();
        let a = Episode::reset(&s, 3, &ObjectiveSpec::default()).unwrap();
        let b = Episode::reset(&s, 3, &ObjectiveSpec::default()).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.vm_mask(), b.vm_mask());
    }

    #[test]
    fn masks_capacity_affinity_and_noop() {
        let mut a = VirtualMachine::of_type(VmId(0), VmType::Xlarge);
        a.affinity_conflicts.push(VmId(2));
        let vms = vec![
            a,
            VirtualMachine::of_type(VmId(1), VmType::X4large),
            VirtualMachine::of_type(VmId(2), VmType::Large),
            VirtualMachine::custom(VmId(3), 30, 8, 1),
        ];
        let at = |pm, slot| Placement { pm: PmId(pm), slot };
        let s = ClusterState::new(
            vec![[(32, 64), (0, 0)], [(32, 64), (0, 0)], [(32, 64), (0, 0)]],
            vms,
            vec![at(0, NumaSlot::Numa0), at(0, NumaSlot::Numa0), at(1, NumaSlot::Numa0), at(2, NumaSlot::Numa0)],
        )
        .unwrap();
        let ep = Episode::reset(&s, 2, &ObjectiveSpec::default()).unwrap();
        // pm0 is its own placement, pm1 hosts the conflicting vm2, pm2 has 2 cores left.
        assert_eq!(ep.legal_pms(VmId(0)), vec![false, false, false]);
        assert_eq!(ep.check_action(&MigrationAction::new(VmId(0), PmId(0))).unwrap_err().constraint(), "no-op");
        assert_eq!(
            ep.check_action(&MigrationAction::new(VmId(0), PmId(1))).unwrap_err().constraint(),
            "anti-affinity"
        );
        assert_eq!(ep.check_action(&MigrationAction::new(VmId(0), PmId(2))).unwrap_err().constraint(), "cpu");
        assert!(!ep.vm_mask()[0]);
        assert!(ep.vm_mask()[2]);
    }

    #[test]
    fn slot_choice_prefers_lower_fragment_then_lower_index() {
        let vms = vec![
            VirtualMachine::of_type(VmId(0), VmType::Xlarge),
            VirtualMachine::custom(VmId(1), 12, 8, 1),
        ];
        let at = |pm, slot| Placement { pm: PmId(pm), slot };
        let s = ClusterState::new(
            vec![[(32, 64), (0, 0)], [(32, 64), (32, 64)]],
            vms,
            vec![at(0, NumaSlot::Numa0), at(1, NumaSlot::Numa1)],
        )
        .unwrap();
        // pm1: numa0 32 free, numa1 20 free. A 4-core VM leaves 28 (frag 12) or 16 (frag 0).
        let slot = resolve_slot(&s, &ObjectiveSpec::default(), &MigrationAction::new(VmId(0), PmId(1))).unwrap();
        assert_eq!(slot, NumaSlot::Numa1);
        let s2 = ClusterState::new(
            vec![[(32, 64), (0, 0)], [(32, 64), (32, 64)]],
            vec![VirtualMachine::of_type(VmId(0), VmType::Xlarge)],
            vec![at(0, NumaSlot::Numa0)],
        )
        .unwrap();
        let slot = resolve_slot(&s2, &ObjectiveSpec::default(), &MigrationAction::new(VmId(0), PmId(1))).unwrap();
        assert_eq!(slot, NumaSlot::Numa0);
    }

    #[test]
    fn replay_matches_live_stepping() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ObjectiveSpec::default();
        for _ in 0..20 {
            let s = RandomInstance::tiny(4, 8).sample(&mut rng);
            let mut ep = Episode::reset(&s, 2, &spec).unwrap();
            while !ep.is_done() {
                let acts = ep.legal_actions();
                let Some(a) = acts.first() else { break };
                ep.step(a).unwrap();
            }
            let replay = rollout_plan(&s, &ep.plan(), &spec).unwrap();
            let sum: Exact = replay.rewards.iter().copied().sum();
            assert_eq!(sum, ep.cumulative_reward());
            assert_eq!(&replay.final_state, ep.state());
            let frag0 = total_fragments(&s, 16).unwrap() as i64;
            let frag1 = total_fragments(ep.state(), 16).unwrap() as i64;
            assert_eq!(sum * Exact::from_integer(64), Exact::from_integer(frag0 - frag1));
        }
    }

    #[test]
    fn rollout_reports_failing_step() {
        let s = worked_example();
        let plan = MigrationPlan::new(vec![
            MigrationAction::new(VmId(0), PmId(1)),
            MigrationAction::new(VmId(0), PmId(1)),
        ]);
        match rollout_plan(&s, &plan, &ObjectiveSpec::default()) {
            Err(SimError::Illegal { step, violation }) => {
                assert_eq!(step, 1);
                assert_eq!(violation.constraint(), "no-op");
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = rollout_plan(&s, &MigrationPlan::default(), &ObjectiveSpec::default()).unwrap();
        assert_eq!(empty.final_objective, Ratio::new(1, 2));
    }

    #[test]
    fn goal_objective_terminates_on_reaching_goal() {
        let spec: ObjectiveSpec = "goal:0.3:fr16".parse().unwrap();
        let mut ep = Episode::reset(&worked_example(), 5, &spec).unwrap();
        let r = ep.step(&MigrationAction::new(VmId(0), PmId(1))).unwrap();
        assert_eq!(r, Ratio::new(1, 4) + Exact::from_integer(10));
        assert!(ep.is_done());
        let spec: ObjectiveSpec = "goal:0.6:fr16".parse().unwrap();
        assert!(Episode::reset(&worked_example(), 5, &spec).unwrap().is_done());
    }
}
