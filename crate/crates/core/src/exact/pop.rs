use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cluster::{ClusterState, MigrationAction, MigrationPlan, Placement, PmId, VirtualMachine, VmId};

use super::{solve_exact, MipInstance, Ordering};

/// How the migration budget is shared between subproblems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MnlSplit {
    /// Equal shares; the remainder goes to the first subproblems.
    #[default]
    Even,
    /// Shares proportional to VM count, rounded down, remainder to the
    /// largest subproblems.
    Proportional,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopConfig {
    pub partitions: usize,
    pub seed: u64,
    /// Time limit for each subproblem.
    pub time_limit: Duration,
    pub split: MnlSplit,
}

impl Default for PopConfig {
    fn default() -> Self {
        PopConfig {
            partitions: 16,
            seed: 0,
            time_limit: Duration::from_secs(5),
            split: MnlSplit::Even,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PopSolution {
    pub plan: MigrationPlan,
    /// Total X-core fragments after the plan.
    pub objective: u64,
    /// True when every subproblem was solved to optimality.
    pub all_optimal: bool,
    pub ordering: Ordering,
}

/// Randomly deals PMs into `partitions` groups (each VM follows its PM),
/// solves each group exactly in parallel and concatenates the plans.
pub fn pop_solve(instance: &MipInstance, config: &PopConfig) -> PopSolution {
    let parts = config.partitions.max(1);
    let state = &instance.state;
    let mut pms: Vec<usize> = (0..state.num_pms()).collect();
    pms.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (i, pm) in pms.into_iter().enumerate() {
        groups[i % parts].push(pm);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    let subs: Vec<(ClusterState, Vec<usize>)> = groups.iter().map(|g| sub_state(state, g)).collect();
    let budgets = split_budget(instance.mnl, &subs.iter().map(|s| s.0.num_vms()).collect::<Vec<_>>(), config.split);

    let solved: Vec<_> = subs
        .par_iter()
        .zip(budgets.par_iter())
        .map(|((sub, _), &mnl)| {
            let inst = MipInstance { state: sub.clone(), mnl, x: instance.x };
            solve_exact(&inst, config.time_limit)
        })
        .collect();

    let mut actions = Vec::new();
    let mut objective = 0;
    let mut all_optimal = true;
    let mut ordering = Ordering::Direct;
    for (((_, vm_ids), group), sol) in subs.iter().zip(&groups).zip(&solved) {
        objective += sol.objective;
        all_optimal &= sol.optimal;
        ordering = ordering.max_severity(sol.ordering);
        for a in &sol.plan.actions {
            actions.push(MigrationAction {
                vm: VmId(vm_ids[a.vm.0]),
                dest_pm: PmId(group[a.dest_pm.0]),
                dest_numa: a.dest_numa,
            });
        }
    }
    PopSolution {
        plan: MigrationPlan::new(actions),
        objective,
        all_optimal,
        ordering,
    }
}

impl Ordering {
    fn max_severity(self, other: Ordering) -> Ordering {
        let rank = |o: Ordering| match o {
            Ordering::Direct => 0,
            Ordering::Relayed => 1,
            Ordering::Infeasible => 2,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

/// The sub-cluster on `group` (original PM ids, ascending) with ids
/// renumbered; also returns the original id of every sub VM.
fn sub_state(state: &ClusterState, group: &[usize]) -> (ClusterState, Vec<usize>) {
    let mut pm_map = vec![usize::MAX; state.num_pms()];
    for (new, &old) in group.iter().enumerate() {
        pm_map[old] = new;
    }
    let vm_ids: Vec<usize> = (0..state.num_vms())
        .filter(|&k| pm_map[state.placement(VmId(k)).pm.0] != usize::MAX)
        .collect();
    let mut vm_map = vec![usize::MAX; state.num_vms()];
    for (new, &old) in vm_ids.iter().enumerate() {
        vm_map[old] = new;
    }
    let caps = state.capacities();
    let sub_caps = group.iter().map(|&i| caps[i]).collect();
    let vms: Vec<VirtualMachine> = vm_ids
        .iter()
        .map(|&k| {
            let mut v = state.vm(VmId(k)).clone();
            v.id = VmId(vm_map[k]);
            v.affinity_conflicts = v
                .affinity_conflicts
                .iter()
                .filter(|c| vm_map[c.0] != usize::MAX)
                .map(|c| VmId(vm_map[c.0]))
                .collect();
            v
        })
        .collect();
    let placement = vm_ids
        .iter()
        .map(|&k| {
            let p = state.placement(VmId(k));
            Placement { pm: PmId(pm_map[p.pm.0]), slot: p.slot }
        })
        .collect();
    let sub = ClusterState::new(sub_caps, vms, placement).expect("a sub-cluster of a valid state is valid");
    (sub, vm_ids)
}

fn split_budget(mnl: usize, sizes: &[usize], split: MnlSplit) -> Vec<usize> {
    let p = sizes.len();
    match split {
        MnlSplit::Even => (0..p).map(|i| mnl / p + usize::from(i < mnl % p)).collect(),
        MnlSplit::Proportional => {
            let total: usize = sizes.iter().sum::<usize>().max(1);
            let mut out: Vec<usize> = sizes.iter().map(|s| mnl * s / total).collect();
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by_key(|&i| (std::cmp::Reverse(sizes[i]), i));
            let mut left = mnl - out.iter().sum::<usize>();
            for &i in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                out[i] += 1;
                left -= 1;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::RandomInstance;
    use crate::simulator::rollout_plan;
    use crate::objectives::ObjectiveSpec;

    #[test]
    fn budget_splits() {
        assert_eq!(split_budget(10, &[1, 1, 1], MnlSplit::Even), vec![4, 3, 3]);
        assert_eq!(split_budget(10, &[6, 3, 1], MnlSplit::Proportional), vec![6, 3, 1]);
        assert_eq!(split_budget(4, &[5, 5, 5], MnlSplit::Proportional), vec![2, 1, 1]);
    }

    #[test]
    fn single_partition_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let s = RandomInstance::tiny(4, 8).sample(&mut rng);
            let inst = MipInstance::new(s, 2, 16).unwrap();
            let exact = solve_exact(&inst, Duration::from_secs(10));
            let cfg = PopConfig { partitions: 1, seed, ..PopConfig::default() };
            let pop = pop_solve(&inst, &cfg);
            assert_eq!(pop.objective, exact.objective);
            assert_eq!(pop.plan, exact.plan);
        }
    }

    #[test]
    fn partitioned_plans_replay_and_never_beat_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..10 {
            let s = RandomInstance::tiny(6, 10).with_affinity(0.1).sample(&mut rng);
            let inst = MipInstance::new(s.clone(), 2, 16).unwrap();
            let exact = solve_exact(&inst, Duration::from_secs(10));
            let pop = pop_solve(&inst, &PopConfig { partitions: 3, seed, ..PopConfig::default() });
            assert!(pop.objective >= exact.objective);
            let r = rollout_plan(&s, &pop.plan, &ObjectiveSpec::x_core(16)).unwrap();
            assert_eq!(crate::cluster::total_fragments(&r.final_state, 16).unwrap(), pop.objective);
        }
    }
}
