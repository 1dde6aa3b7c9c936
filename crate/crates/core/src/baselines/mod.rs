//! Non-learned rescheduling algorithms.
//!
//! All of them emit plans of pinned actions (`dest_numa` set), so replaying
//! a plan through the simulator reproduces exactly the state the algorithm
//! reasoned about.

mod ha;
mod mcts;
mod random;
mod vbpp;

pub use ha::{ha_reschedule, ha_step};
pub use mcts::{mcts_reschedule, MctsConfig};
pub use random::random_policy;
pub use vbpp::alpha_vbpp;

use crate::cluster::{ClusterState, MigrationAction, NumaSlot, Placement, PmId, VmId};
use crate::objectives::FragmentScore;

/// A legal move together with its objective change (negative improves).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoredMove {
    pub vm: VmId,
    pub pm: PmId,
    pub slot: NumaSlot,
    pub delta: i128,
}

impl ScoredMove {
    pub fn action(&self) -> MigrationAction {
        MigrationAction::pinned(self.vm, self.pm, self.slot)
    }
}

/// Every legal `(vm, pm, slot)` move with its score change.
pub fn scored_moves(state: &ClusterState, score: &FragmentScore) -> Vec<ScoredMove> {
    let mut out = Vec::new();
    for k in 0..state.num_vms() {
        scored_moves_for(state, score, VmId(k), &mut out);
    }
    out
}

/// Score drop on the source PM if `vm` were taken off it.
pub(crate) fn removal_gain(state: &ClusterState, score: &FragmentScore, vm: VmId) -> (i128, i128) {
    let src = state.placement(vm);
    let v = state.vm(vm);
    let mut after = state.pm(src.pm).numas;
    for &j in src.slot.indices() {
        after[j].free_cpu += v.cpu_per_numa();
        after[j].free_mem += v.mem_per_numa();
    }
    let before = score.pm(state.pm(src.pm));
    let removed = score.numas(&after);
    (before - removed, removed)
}

/// VM tie-break key: larger CPU first, then lower id.
pub(crate) fn tie_key(state: &ClusterState, vm: VmId) -> (std::cmp::Reverse<u32>, VmId) {
    (std::cmp::Reverse(state.vm(vm).cpu), vm)
}

pub(crate) fn scored_moves_for(state: &ClusterState, score: &FragmentScore, vm: VmId, out: &mut Vec<ScoredMove>) {
    let current = state.placement(vm);
    for i in 0..state.num_pms() {
        let pm = PmId(i);
        for &slot in NumaSlot::candidates(state.vm(vm).numa_count) {
            if (Placement { pm, slot }) == current || state.check_move(vm, pm, slot).is_err() {
                continue;
            }
            let p = state.preview_move(vm, pm, slot);
            out.push(ScoredMove {
                vm,
                pm,
                slot,
                delta: score.move_delta(state, &p),
            });
        }
    }
}
