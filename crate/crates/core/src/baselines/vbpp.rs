use crate::cluster::{ClusterState, MigrationAction, MigrationPlan, NumaSlot, NumaState, Placement, PmId, VmId};
use crate::objectives::{FragmentScore, ObjectiveSpec};

use super::{removal_gain, tie_key};

/// α-VBPP: stage by stage, lift the `alpha` VMs whose removal frees the most
/// fragments and re-pack them best-fit, largest first.
///
/// Runs `ceil(mnl / alpha)` stages; the last one is shortened so the plan
/// never exceeds `mnl`. A VM that is re-packed onto its own slot, or whose
/// target cannot be reached by a feasible sequence of single moves, stays
/// where it is and costs no step.
pub fn alpha_vbpp(mapping: &ClusterState, mnl: usize, alpha: usize, objective: &ObjectiveSpec) -> MigrationPlan {
    let alpha = alpha.max(1);
    let score = FragmentScore::new(objective, mapping);
    let mut state = mapping.clone();
    let mut actions = Vec::new();
    for _ in 0..mnl.div_ceil(alpha) {
        let k = alpha.min(mnl - actions.len());
        if k == 0 {
            break;
        }
        let moved = stage(&mut state, &score, k, &mut actions);
        if moved == 0 {
            break;
        }
    }
    MigrationPlan::new(actions)
}

fn stage(state: &mut ClusterState, score: &FragmentScore, k: usize, actions: &mut Vec<MigrationAction>) -> usize {
    let mut ranked: Vec<(i128, VmId)> = (0..state.num_vms())
        .map(|i| (removal_gain(state, score, VmId(i)).0, VmId(i)))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| tie_key(state, a.1).cmp(&tie_key(state, b.1))));
    let mut lifted: Vec<VmId> = ranked.iter().take(k).map(|r| r.1).collect();

    // Scratch cluster with the lifted VMs taken off.
    let mut numas: Vec<[NumaState; 2]> = state.pms().iter().map(|pm| pm.numas).collect();
    // Overcommit from lifted VMs that had to stay after their slot was taken.
    let mut debt = vec![[false; 2]; numas.len()];
    for &vm in &lifted {
        let v = state.vm(vm);
        let src = state.placement(vm);
        for &j in src.slot.indices() {
            numas[src.pm.0][j].free_cpu += v.cpu_per_numa();
            numas[src.pm.0][j].free_mem += v.mem_per_numa();
        }
    }
    lifted.sort_by_key(|&vm| tie_key(state, vm));

    let mut targets: Vec<(VmId, Placement)> = Vec::new();
    let mut placed: Vec<Option<PmId>> = state.placements().iter().map(|p| Some(p.pm)).collect();
    for &vm in &lifted {
        placed[vm.0] = None;
    }
    for &vm in &lifted {
        let v = state.vm(vm);
        let (c, m) = (v.cpu_per_numa(), v.mem_per_numa());
        let mut best: Option<(i128, Placement)> = None;
        for (i, pair) in numas.iter().enumerate() {
            if v.affinity_conflicts.iter().any(|o| placed[o.0] == Some(PmId(i))) {
                continue;
            }
            for &slot in NumaSlot::candidates(v.numa_count) {
                if slot
                    .indices()
                    .iter()
                    .any(|&j| debt[i][j] || pair[j].free_cpu < c || pair[j].free_mem < m)
                {
                    continue;
                }
                let mut after = *pair;
                for &j in slot.indices() {
                    after[j].free_cpu -= c;
                    after[j].free_mem -= m;
                }
                let d = score.numas(&after) - score.numas(pair);
                if best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, Placement { pm: PmId(i), slot }));
                }
            }
        }
        // With no room anywhere, even on its own slot, the VM stays put.
        let target = best.map_or(state.placement(vm), |b| b.1);
        for &j in target.slot.indices() {
            let n = &mut numas[target.pm.0][j];
            if n.free_cpu < c || n.free_mem < m {
                debt[target.pm.0][j] = true;
            }
            n.free_cpu = n.free_cpu.saturating_sub(c);
            n.free_mem = n.free_mem.saturating_sub(m);
        }
        placed[vm.0] = Some(target.pm);
        if target != state.placement(vm) {
            targets.push((vm, target));
        }
    }

    // Realize the targets with single feasible moves.
    let mut moved = 0;
    loop {
        let mut progress = false;
        targets.retain(|&(vm, t)| {
            if state.move_vm(vm, t.pm, t.slot).is_ok() {
                actions.push(MigrationAction::pinned(vm, t.pm, t.slot));
                moved += 1;
                progress = true;
                false
            } else {
                true
            }
        });
        if !progress || targets.is_empty() {
            break;
        }
    }
    moved
}
