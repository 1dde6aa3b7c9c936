//! Small hand-built and random instances shared by tests, benchmarks and the
//! acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cluster::{ClusterState, NumaSlot, Placement, PmId, VirtualMachine, VmId, VmType};

/// Two PMs with one usable NUMA each: 12 and 20 cores free, 16 cores of
/// fragments against a 16-core grid. Moving `vm0` (4 cores) from `pm0` to
/// `pm1` leaves 16 free on both and no fragments.
pub fn worked_example() -> ClusterState {
    let caps = vec![[(32, 64), (0, 0)], [(32, 64), (0, 0)]];
    let vms = vec![
        VirtualMachine::of_type(VmId(0), VmType::Xlarge),
        VirtualMachine::of_type(VmId(1), VmType::X4large),
        VirtualMachine::of_type(VmId(2), VmType::X2large),
        VirtualMachine::of_type(VmId(3), VmType::Xlarge),
    ];
    let at = |pm| Placement { pm: PmId(pm), slot: NumaSlot::Numa0 };
    ClusterState::new(caps, vms, vec![at(0), at(0), at(1), at(1)]).expect("worked example is valid")
}

/// Shape of random test instances.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub pms: usize,
    pub vms: usize,
    /// Per-NUMA CPU capacities to draw from; memory is twice the CPU.
    pub numa_cpu: Vec<u32>,
    pub types: Vec<VmType>,
    /// Probability that any given VM pair is in anti-affinity.
    pub affinity: f64,
}

impl RandomInstance {
    pub fn tiny(pms: usize, vms: usize) -> Self {
        RandomInstance {
            pms,
            vms,
            numa_cpu: vec![16, 24, 32],
            types: vec![VmType::Large, VmType::Xlarge, VmType::X2large, VmType::X4large, VmType::X8large],
            affinity: 0.0,
        }
    }

    pub fn with_affinity(mut self, p: f64) -> Self {
        self.affinity = p;
        self
    }

    /// Draws VMs and places each on a uniformly random feasible slot. VMs
    /// that fit nowhere are dropped, so the result may hold fewer than
    /// `self.vms` VMs.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ClusterState {
        let caps: Vec<[(u32, u32); 2]> = (0..self.pms)
            .map(|_| {
                let a = *self.numa_cpu.choose(rng).unwrap();
                let b = *self.numa_cpu.choose(rng).unwrap();
                [(a, 2 * a), (b, 2 * b)]
            })
            .collect();
        let mut free: Vec<[(u32, u32); 2]> = caps.clone();
        let mut vms: Vec<VirtualMachine> = Vec::new();
        let mut placement: Vec<Placement> = Vec::new();
        let mut hosted: Vec<Vec<usize>> = vec![Vec::new(); self.pms];
        for _ in 0..self.vms {
            let ty = *self.types.choose(rng).unwrap();
            let id = VmId(vms.len());
            let mut vm = VirtualMachine::of_type(id, ty);
            for other in 0..vms.len() {
                if rng.gen_bool(self.affinity) {
                    vm.affinity_conflicts.push(VmId(other));
                }
            }
            let (c, m) = (vm.cpu_per_numa(), vm.mem_per_numa());
            let mut options = Vec::new();
            for (i, f) in free.iter().enumerate() {
                if hosted[i].iter().any(|&o| vm.affinity_conflicts.contains(&VmId(o))) {
                    continue;
                }
                for &slot in NumaSlot::candidates(vm.numa_count) {
                    if slot.indices().iter().all(|&j| f[j].0 >= c && f[j].1 >= m) {
                        options.push(Placement { pm: PmId(i), slot });
                    }
                }
            }
            let Some(&p) = options.choose(rng) else { continue };
            for &j in p.slot.indices() {
                free[p.pm.0][j].0 -= c;
                free[p.pm.0][j].1 -= m;
            }
            hosted[p.pm.0].push(id.0);
            vms.push(vm);
            placement.push(p);
        }
        ClusterState::new(caps, vms, placement).expect("random instance is valid by construction")
    }
}
