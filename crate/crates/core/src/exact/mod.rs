//! Exact minimization of total X-core fragments at small scale, and the POP
//! partition-and-solve wrapper on top of it.
//!
//! The search branches over VMs in index order: each VM either stays or
//! moves to one other (PM, slot). At most `mnl` VMs are displaced, counting
//! distinct VMs. Capacities may run negative mid-search as long as VMs not
//! yet decided could still leave and cover the deficit.

mod pop;

pub use pop::{pop_solve, MnlSplit, PopConfig, PopSolution};

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::baselines::ha_reschedule;
use crate::cluster::{
    ClusterError, ClusterState, MigrationAction, MigrationPlan, NumaSlot, Placement, PmId, VirtualMachine, VmId,
};
use crate::objectives::ObjectiveSpec;

/// The optimization program derived from a cluster state.
#[derive(Clone, Debug)]
pub struct MipInstance {
    pub state: ClusterState,
    pub mnl: usize,
    pub x: u32,
}

impl MipInstance {
    pub fn new(state: ClusterState, mnl: usize, x: u32) -> Result<Self, ClusterError> {
        if x == 0 {
            return Err(ClusterError::InvalidParameter("fragment block X must be positive".into()));
        }
        Ok(MipInstance { state, mnl, x })
    }

    /// Per-NUMA `(cpu, mem)` capacities.
    pub fn capacities(&self) -> Vec<[(u32, u32); 2]> {
        self.state.capacities()
    }

    /// `(cpu, mem, numa_count)` for every VM.
    pub fn demands(&self) -> Vec<(u32, u32, u8)> {
        self.state.vms().iter().map(|v| (v.cpu, v.mem, v.numa_count)).collect()
    }

    pub fn initial(&self) -> &[Placement] {
        self.state.placements()
    }

    /// Unordered anti-affinity pairs, lower id first.
    pub fn affinity_pairs(&self) -> Vec<(VmId, VmId)> {
        let mut out = Vec::new();
        for v in self.state.vms() {
            for &o in &v.affinity_conflicts {
                if v.id < o {
                    out.push((v.id, o));
                }
            }
        }
        out
    }

    pub fn initial_fragments(&self) -> u64 {
        self.state.pms().iter().flat_map(|pm| pm.numas.iter()).map(|n| (n.free_cpu % self.x) as u64).sum()
    }
}

/// How the optimal assignment was turned into a migration sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Every displaced VM moves straight to its target.
    Direct,
    /// Some VMs pass through a temporary PM first; the plan may be longer
    /// than the number of displaced VMs.
    Relayed,
    /// The assignment is optimal but no feasible sequence was found; the
    /// plan holds the moves that could be made.
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub plan: MigrationPlan,
    /// Total X-core fragments of `assignment`.
    pub objective: u64,
    pub optimal: bool,
    pub ordering: Ordering,
    pub assignment: Vec<Placement>,
    /// Proven lower bound on the optimum; equals `objective` when optimal.
    pub lower_bound: u64,
    pub nodes: u64,
}

/// Branch and bound over displaced-VM sets and their placements.
///
/// Starts from the better of "no move" and the greedy heuristic's result.
/// On timeout the incumbent comes back with `optimal == false`.
pub fn solve_exact(instance: &MipInstance, time_limit: Duration) -> ExactSolution {
    let mut search = Search::new(instance, Instant::now() + time_limit);
    let root_bound = search.bound(0, 0);

    let ha = ha_reschedule(&instance.state, instance.mnl, &ObjectiveSpec::x_core(instance.x));
    let mut greedy = instance.state.clone();
    for a in &ha.actions {
        greedy
            .move_vm(a.vm, a.dest_pm, a.dest_numa.expect("heuristic pins slots"))
            .expect("heuristic plans are legal");
    }
    let greedy_frag = fragments_of(&greedy, instance.x);
    if greedy_frag < search.best_val {
        search.best_val = greedy_frag;
        search.best = greedy.placements().to_vec();
    }

    search.dfs(0, 0);
    let optimal = !search.timed_out;
    let objective = search.best_val;
    let assignment = search.best.clone();
    let (plan, ordering) = order_moves(&instance.state, &assignment);
    ExactSolution {
        plan,
        objective,
        optimal,
        ordering,
        assignment,
        lower_bound: if optimal { objective } else { root_bound.min(objective) },
        nodes: search.nodes,
    }
}

fn fragments_of(state: &ClusterState, x: u32) -> u64 {
    state.pms().iter().flat_map(|pm| pm.numas.iter()).map(|n| (n.free_cpu % x) as u64).sum()
}

struct Search<'a> {
    vms: &'a [VirtualMachine],
    initial: &'a [Placement],
    x: i64,
    mnl: usize,
    free_cpu: Vec<i64>,
    free_mem: Vec<i64>,
    /// `suffix_*[k][n]`: demand on NUMA `n` of VMs `k..` at their initial slot.
    suffix_cpu: Vec<Vec<i64>>,
    suffix_mem: Vec<Vec<i64>>,
    /// Whether any VM in `k..` spans both NUMAs.
    suffix_double: Vec<bool>,
    total_mod: u64,
    assign: Vec<Placement>,
    best: Vec<Placement>,
    best_val: u64,
    deadline: Instant,
    timed_out: bool,
    nodes: u64,
}

fn numa_index(pm: PmId, j: usize) -> usize {
    pm.0 * 2 + j
}

impl<'a> Search<'a> {
    fn new(inst: &'a MipInstance, deadline: Instant) -> Self {
        let state = &inst.state;
        let n = state.num_pms() * 2;
        let m = state.num_vms();
        let mut free_cpu = vec![0; n];
        let mut free_mem = vec![0; n];
        for pm in state.pms() {
            for j in 0..2 {
                free_cpu[numa_index(pm.id, j)] = pm.numas[j].free_cpu as i64;
                free_mem[numa_index(pm.id, j)] = pm.numas[j].free_mem as i64;
            }
        }
        let mut suffix_cpu = vec![vec![0; n]; m + 1];
        let mut suffix_mem = vec![vec![0; n]; m + 1];
        let mut suffix_double = vec![false; m + 1];
        for k in (0..m).rev() {
            suffix_cpu[k] = suffix_cpu[k + 1].clone();
            suffix_mem[k] = suffix_mem[k + 1].clone();
            let v = &state.vms()[k];
            let p = state.placements()[k];
            for &j in p.slot.indices() {
                suffix_cpu[k][numa_index(p.pm, j)] += v.cpu_per_numa() as i64;
                suffix_mem[k][numa_index(p.pm, j)] += v.mem_per_numa() as i64;
            }
            suffix_double[k] = suffix_double[k + 1] || v.numa_count == 2;
        }
        let total: u64 = state.total_free(crate::cluster::Resource::Cpu);
        Search {
            vms: state.vms(),
            initial: state.placements(),
            x: inst.x as i64,
            mnl: inst.mnl,
            free_cpu,
            free_mem,
            suffix_cpu,
            suffix_mem,
            suffix_double,
            total_mod: total % inst.x as u64,
            assign: state.placements().to_vec(),
            best: state.placements().to_vec(),
            best_val: fragments_of(state, inst.x),
            deadline,
            timed_out: false,
            nodes: 0,
        }
    }

    /// Fragments of NUMAs no remaining move can touch, floored by the
    /// cluster-wide residue and rounded up to a reachable value.
    fn bound(&self, k: usize, used: usize) -> u64 {
        let moves = (self.mnl - used).min(self.vms.len() - k);
        let touches = moves * if self.suffix_double[k] { 4 } else { 2 };
        let mut frags: Vec<i64> = Vec::with_capacity(self.free_cpu.len());
        let mut negative = 0;
        for (&c, &m) in self.free_cpu.iter().zip(&self.free_mem) {
            if c < 0 || m < 0 {
                negative += 1;
            } else {
                frags.push(c % self.x);
            }
        }
        if negative > touches {
            return u64::MAX;
        }
        let spare = touches - negative;
        let sum: i64 = if spare >= frags.len() {
            0
        } else {
            frags.sort_unstable_by(|a, b| b.cmp(a));
            frags[spare..].iter().sum()
        };
        let lb = (sum as u64).max(self.total_mod);
        let x = self.x as u64;
        self.total_mod + (lb - self.total_mod).div_ceil(x) * x
    }

    fn covered(&self, k: usize, numa: usize) -> bool {
        self.free_cpu[numa] + self.suffix_cpu[k][numa] >= 0 && self.free_mem[numa] + self.suffix_mem[k][numa] >= 0
    }

    fn affinity_ok(&self, k: usize, pm: PmId) -> bool {
        self.vms[k]
            .affinity_conflicts
            .iter()
            .all(|c| c.0 > k || self.assign[c.0].pm != pm)
    }

    fn shift(&mut self, k: usize, p: Placement, sign: i64) {
        let v = &self.vms[k];
        for &j in p.slot.indices() {
            self.free_cpu[numa_index(p.pm, j)] += sign * v.cpu_per_numa() as i64;
            self.free_mem[numa_index(p.pm, j)] += sign * v.mem_per_numa() as i64;
        }
    }

    fn leaf_value(&self) -> u64 {
        self.free_cpu.iter().map(|&f| (f % self.x) as u64).sum()
    }

    fn dfs(&mut self, k: usize, used: usize) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(512) && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        if k == self.vms.len() {
            let v = self.leaf_value();
            if v < self.best_val {
                self.best_val = v;
                self.best = self.assign.clone();
            }
            return;
        }
        if self.bound(k, used) >= self.best_val {
            return;
        }
        let src = self.initial[k];
        let v = &self.vms[k];
        let x = self.x;

        // Candidate destinations, most promising first.
        let mut options: Vec<(i64, Placement)> = Vec::new();
        if used < self.mnl {
            let (c, m) = (v.cpu_per_numa() as i64, v.mem_per_numa() as i64);
            for i in 0..self.free_cpu.len() / 2 {
                let pm = PmId(i);
                if !self.affinity_ok(k, pm) {
                    continue;
                }
                for &slot in NumaSlot::candidates(v.numa_count) {
                    let p = Placement { pm, slot };
                    if p == src {
                        continue;
                    }
                    let mut key = 0;
                    let mut possible = true;
                    for &j in slot.indices() {
                        let n = numa_index(pm, j);
                        let released = src.pm == pm && src.slot.indices().contains(&j);
                        let (extra_c, extra_m) = if released { (c, m) } else { (0, 0) };
                        // Short even if every undecided VM leaves.
                        if self.free_cpu[n] + extra_c + self.suffix_cpu[k + 1][n] < c
                            || self.free_mem[n] + extra_m + self.suffix_mem[k + 1][n] < m
                        {
                            possible = false;
                            break;
                        }
                        let after = self.free_cpu[n] + extra_c - c;
                        key += if after >= 0 { after % x } else { 0 };
                    }
                    if possible {
                        options.push((key, p));
                    }
                }
            }
            options.sort_by_key(|o| o.0);
        }

        // Stay.
        if self.affinity_ok(k, src.pm) && src.slot.indices().iter().all(|&j| self.covered(k + 1, numa_index(src.pm, j))) {
            self.dfs(k + 1, used);
        }
        for (_, p) in options {
            if self.timed_out {
                return;
            }
            self.shift(k, src, 1);
            self.shift(k, p, -1);
            self.assign[k] = p;
            let ok = src
                .slot
                .indices()
                .iter()
                .map(|&j| numa_index(src.pm, j))
                .chain(p.slot.indices().iter().map(|&j| numa_index(p.pm, j)))
                .all(|n| self.covered(k + 1, n));
            if ok {
                self.dfs(k + 1, used + 1);
            }
            self.assign[k] = src;
            self.shift(k, p, 1);
            self.shift(k, src, -1);
        }
    }
}

/// Turns a target assignment into single feasible moves.
///
/// Any VM whose target is currently feasible moves there; when every
/// remaining VM is blocked, one of them is parked on the PM with the most
/// free CPU that can take it, and retried later.
pub fn order_moves(initial: &ClusterState, target: &[Placement]) -> (MigrationPlan, Ordering) {
    let mut state = initial.clone();
    let mut pending: Vec<VmId> = (0..target.len())
        .map(VmId)
        .filter(|&vm| state.placement(vm) != target[vm.0])
        .collect();
    let mut actions = Vec::new();
    let mut relays = 0;
    let relay_cap = pending.len() * 2;
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|&vm| {
            let t = target[vm.0];
            if state.move_vm(vm, t.pm, t.slot).is_ok() {
                actions.push(MigrationAction::pinned(vm, t.pm, t.slot));
                false
            } else {
                true
            }
        });
        if pending.len() < before {
            continue;
        }
        if relays >= relay_cap || !relay(&mut state, &pending, target, &mut actions) {
            return (MigrationPlan::new(actions), Ordering::Infeasible);
        }
        relays += 1;
    }
    let ordering = if relays == 0 { Ordering::Direct } else { Ordering::Relayed };
    (MigrationPlan::new(actions), ordering)
}

fn relay(state: &mut ClusterState, pending: &[VmId], target: &[Placement], actions: &mut Vec<MigrationAction>) -> bool {
    let mut pms: Vec<PmId> = (0..state.num_pms()).map(PmId).collect();
    pms.sort_by_key(|&p| {
        let pm = state.pm(p);
        (std::cmp::Reverse(pm.numas[0].free_cpu + pm.numas[1].free_cpu), p)
    });
    for &vm in pending {
        let cur = state.placement(vm);
        for &pm in &pms {
            if pm == target[vm.0].pm || pm == cur.pm {
                continue;
            }
            let slot = state.feasible_slots(vm, pm).next();
            if let Some(slot) = slot {
                state.move_vm(vm, pm, slot).expect("feasible slot");
                actions.push(MigrationAction::pinned(vm, pm, slot));
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_example;
    use crate::simulator::rollout_plan;

    #[test]
    fn worked_example_is_solved() {
        let inst = MipInstance::new(worked_example(), 1, 16).unwrap();
        let sol = solve_exact(&inst, Duration::from_secs(5));
        assert_eq!(sol.objective, 0);
        assert!(sol.optimal);
        assert_eq!(sol.ordering, Ordering::Direct);
        assert_eq!(sol.plan.len(), 1);
    }

    #[test]
    fn zero_budget_keeps_the_mapping() {
        let inst = MipInstance::new(worked_example(), 0, 16).unwrap();
        let sol = solve_exact(&inst, Duration::from_secs(5));
        assert_eq!(sol.objective, 16);
        assert!(sol.plan.is_empty());
    }

    #[test]
    fn swap_needs_a_relay() {
        // Two full PMs swapping VMs of different sizes plus an empty spare.
        let caps = vec![[(16, 32), (0, 0)], [(8, 16), (0, 0)], [(16, 32), (0, 0)]];
        let vms = vec![
            VirtualMachine::of_type(VmId(0), crate::cluster::VmType::X2large),
            VirtualMachine::of_type(VmId(1), crate::cluster::VmType::X2large),
            VirtualMachine::of_type(VmId(2), crate::cluster::VmType::X2large),
        ];
        let at = |pm| Placement { pm: PmId(pm), slot: NumaSlot::Numa0 };
        let s = ClusterState::new(caps, vms, vec![at(0), at(0), at(1)]).unwrap();
        let target = vec![at(1), at(0), at(0)];
        let (plan, ord) = order_moves(&s, &target);
        assert_eq!(ord, Ordering::Relayed);
        let r = rollout_plan(&s, &plan, &ObjectiveSpec::default()).unwrap();
        assert_eq!(r.final_state.placements(), &target[..]);
    }
}
