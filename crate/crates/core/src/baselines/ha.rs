use crate::cluster::{ClusterState, MigrationPlan, NumaSlot, PmId, VmId};
use crate::objectives::{FragmentScore, ObjectiveSpec};

use super::{removal_gain, scored_moves_for, tie_key, ScoredMove};

/// Filtering-and-scoring heuristic.
///
/// Filtering ranks VMs by how much removing them from their source PM would
/// lower the objective. Scoring then walks that ranking and places each
/// candidate on the destination with the largest overall drop; candidates
/// whose optimistic bound cannot beat the incumbent are skipped. Stops early
/// once no single migration lowers the objective.
pub fn ha_reschedule(mapping: &ClusterState, mnl: usize, objective: &ObjectiveSpec) -> MigrationPlan {
    let score = FragmentScore::new(objective, mapping);
    let mut state = mapping.clone();
    let mut actions = Vec::new();
    while actions.len() < mnl {
        let Some(mv) = ha_step(&state, &score) else { break };
        state
            .move_vm(mv.vm, mv.pm, mv.slot)
            .expect("scored moves are feasible");
        actions.push(mv.action());
    }
    MigrationPlan::new(actions)
}

/// The single best improving move, or `None` when no move improves.
///
/// Ties go to the larger VM (by CPU), then the lower VM id, then the lower
/// PM id and NUMA slot.
pub fn ha_step(state: &ClusterState, score: &FragmentScore) -> Option<ScoredMove> {
    let max_pm = state.pms().iter().map(|pm| score.pm(pm)).max().unwrap_or(0);
    let mut ranked: Vec<(i128, i128, VmId)> = (0..state.num_vms())
        .map(|k| {
            let vm = VmId(k);
            let (gain, removed) = removal_gain(state, score, vm);
            // Drop from removal, and an upper bound on the drop of any move.
            (gain, gain + removed.max(max_pm), vm)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| tie_key(state, a.2).cmp(&tie_key(state, b.2))));

    let mut best: Option<ScoredMove> = None;
    let mut buf = Vec::new();
    for &(_, bound, vm) in &ranked {
        if let Some(b) = best {
            if bound < -b.delta {
                continue;
            }
        }
        buf.clear();
        scored_moves_for(state, score, vm, &mut buf);
        for &mv in &buf {
            if better(state, &mv, best.as_ref()) {
                best = Some(mv);
            }
        }
    }
    best.filter(|b| b.delta < 0)
}

fn better(state: &ClusterState, cand: &ScoredMove, incumbent: Option<&ScoredMove>) -> bool {
    let Some(inc) = incumbent else { return true };
    let key = |m: &ScoredMove| -> (i128, (std::cmp::Reverse<u32>, VmId), PmId, NumaSlot) {
        (m.delta, tie_key(state, m.vm), m.pm, m.slot)
    };
    key(cand) < key(inc)
}
