//! Physical machines, NUMA nodes, virtual machines and their assignment.
//!
//! All resource bookkeeping is integral (cores and GB). A [`ClusterState`]
//! is only ever constructed through validation, so every VM is placed
//! exactly once and per-NUMA free resources always match the placement.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PmId(pub usize);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

impl fmt::Display for PmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pm{}", self.0)
    }
}

/// Which NUMA node(s) of a PM a VM occupies. Ordered so that ties resolve
/// towards the lower NUMA index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumaSlot {
    Numa0,
    Numa1,
    Both,
}

impl NumaSlot {
    pub fn indices(self) -> &'static [usize] {
        match self {
            NumaSlot::Numa0 => &[0],
            NumaSlot::Numa1 => &[1],
            NumaSlot::Both => &[0, 1],
        }
    }

    /// Slots a VM spanning `numa_count` nodes may occupy.
    pub fn candidates(numa_count: u8) -> &'static [NumaSlot] {
        if numa_count == 2 {
            &[NumaSlot::Both]
        } else {
            &[NumaSlot::Numa0, NumaSlot::Numa1]
        }
    }

    pub fn single(index: usize) -> NumaSlot {
        if index == 0 {
            NumaSlot::Numa0
        } else {
            NumaSlot::Numa1
        }
    }
}

impl fmt::Display for NumaSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumaSlot::Numa0 => write!(f, "0"),
            NumaSlot::Numa1 => write!(f, "1"),
            NumaSlot::Both => write!(f, "both"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub pm: PmId,
    pub slot: NumaSlot,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.pm, self.slot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    Cpu,
    Mem,
}

/// Standard instance sizes; every standard type keeps a 1:2 CPU:memory ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmType {
    Large,
    Xlarge,
    #[serde(rename = "2xlarge")]
    X2large,
    #[serde(rename = "4xlarge")]
    X4large,
    #[serde(rename = "8xlarge")]
    X8large,
    #[serde(rename = "16xlarge")]
    X16large,
    #[serde(rename = "22xlarge")]
    X22large,
    Custom,
}

impl VmType {
    pub const STANDARD: [VmType; 7] = [
        VmType::Large,
        VmType::Xlarge,
        VmType::X2large,
        VmType::X4large,
        VmType::X8large,
        VmType::X16large,
        VmType::X22large,
    ];

    /// `(cpu, mem_gb, numa_count)` for standard types.
    pub fn shape(self) -> Option<(u32, u32, u8)> {
        Some(match self {
            VmType::Large => (2, 4, 1),
            VmType::Xlarge => (4, 8, 1),
            VmType::X2large => (8, 16, 1),
            VmType::X4large => (16, 32, 1),
            VmType::X8large => (32, 64, 2),
            VmType::X16large => (64, 128, 2),
            VmType::X22large => (88, 176, 2),
            VmType::Custom => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            VmType::Large => "large",
            VmType::Xlarge => "xlarge",
            VmType::X2large => "2xlarge",
            VmType::X4large => "4xlarge",
            VmType::X8large => "8xlarge",
            VmType::X16large => "16xlarge",
            VmType::X22large => "22xlarge",
            VmType::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NumaState {
    pub capacity_cpu: u32,
    pub capacity_mem: u32,
    pub free_cpu: u32,
    pub free_mem: u32,
}

impl NumaState {
    pub fn empty(capacity_cpu: u32, capacity_mem: u32) -> Self {
        NumaState {
            capacity_cpu,
            capacity_mem,
            free_cpu: capacity_cpu,
            free_mem: capacity_mem,
        }
    }

    pub fn free(&self, resource: Resource) -> u32 {
        match resource {
            Resource::Cpu => self.free_cpu,
            Resource::Mem => self.free_mem,
        }
    }

    pub fn capacity(&self, resource: Resource) -> u32 {
        match resource {
            Resource::Cpu => self.capacity_cpu,
            Resource::Mem => self.capacity_mem,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalMachine {
    pub id: PmId,
    pub numas: [NumaState; 2],
    /// Hosted VMs in ascending id order.
    pub hosted: Vec<VmId>,
}

impl PhysicalMachine {
    /// Sum over both NUMAs of `free mod block` for one resource.
    pub fn fragments(&self, resource: Resource, block: u32) -> u32 {
        pair_fragments(&self.numas, resource, block)
    }
}

pub fn pair_fragments(numas: &[NumaState; 2], resource: Resource, block: u32) -> u32 {
    numas.iter().map(|n| n.free(resource) % block).sum()
}

/// NUMA records of the PMs a move touches, as they would be afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MovePreview {
    pub src: PmId,
    pub dest: PmId,
    pub src_after: [NumaState; 2],
    pub dest_after: [NumaState; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualMachine {
    pub id: VmId,
    pub cpu: u32,
    pub mem: u32,
    pub numa_count: u8,
    pub vm_type: VmType,
    /// Sorted, deduplicated ids of VMs that may not share a PM with this one.
    pub affinity_conflicts: Vec<VmId>,
}

impl VirtualMachine {
    pub fn of_type(id: VmId, vm_type: VmType) -> Self {
        let (cpu, mem, numa_count) = vm_type.shape().unwrap_or((0, 0, 1));
        VirtualMachine {
            id,
            cpu,
            mem,
            numa_count,
            vm_type,
            affinity_conflicts: Vec::new(),
        }
    }

    pub fn custom(id: VmId, cpu: u32, mem: u32, numa_count: u8) -> Self {
        VirtualMachine {
            id,
            cpu,
            mem,
            numa_count,
            vm_type: VmType::Custom,
            affinity_conflicts: Vec::new(),
        }
    }

    /// CPU demand placed on each occupied NUMA (`u_k / w_k`).
    pub fn cpu_per_numa(&self) -> u32 {
        self.cpu / self.numa_count.max(1) as u32
    }

    pub fn mem_per_numa(&self) -> u32 {
        self.mem / self.numa_count.max(1) as u32
    }

    pub fn demand_per_numa(&self, resource: Resource) -> u32 {
        match resource {
            Resource::Cpu => self.cpu_per_numa(),
            Resource::Mem => self.mem_per_numa(),
        }
    }

    pub fn conflicts_with(&self, other: VmId) -> bool {
        self.affinity_conflicts.binary_search(&other).is_ok()
    }

    fn check_shape(&self) -> Result<(), String> {
        if self.numa_count != 1 && self.numa_count != 2 {
            return Err(format!("{}: numa_count must be 1 or 2, got {}", self.id, self.numa_count));
        }
        let w = self.numa_count as u32;
        if !self.cpu.is_multiple_of(w) || !self.mem.is_multiple_of(w) {
            return Err(format!(
                "{}: cpu {} and mem {} must be divisible by numa_count {}",
                self.id, self.cpu, self.mem, w
            ));
        }
        if let Some((cpu, mem, numa)) = self.vm_type.shape() {
            if (cpu, mem, numa) != (self.cpu, self.mem, self.numa_count) {
                return Err(format!(
                    "{}: type {} requires cpu {cpu}, mem {mem}, numa_count {numa}",
                    self.id,
                    self.vm_type.name()
                ));
            }
        }
        Ok(())
    }
}

/// A constraint a placement would break.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Cpu { pm: PmId, numa: usize, need: u32, free: u32 },
    Memory { pm: PmId, numa: usize, need: u32, free: u32 },
    NumaShape { vm: VmId, slot: NumaSlot },
    Affinity { vm: VmId, other: VmId, pm: PmId },
    NoOp { vm: VmId },
    UnknownVm(VmId),
    UnknownPm(PmId),
}

impl Violation {
    /// Short constraint name, stable for reports and tests.
    pub fn constraint(&self) -> &'static str {
        match self {
            Violation::Cpu { .. } => "cpu",
            Violation::Memory { .. } => "memory",
            Violation::NumaShape { .. } => "numa-shape",
            Violation::Affinity { .. } => "anti-affinity",
            Violation::NoOp { .. } => "no-op",
            Violation::UnknownVm(_) => "unknown-vm",
            Violation::UnknownPm(_) => "unknown-pm",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cpu { pm, numa, need, free } => {
                write!(f, "cpu capacity: {pm} numa {numa} needs {need} cores, {free} free")
            }
            Violation::Memory { pm, numa, need, free } => {
                write!(f, "memory capacity: {pm} numa {numa} needs {need} GB, {free} free")
            }
            Violation::NumaShape { vm, slot } => write!(f, "numa shape: {vm} cannot occupy slot {slot}"),
            Violation::Affinity { vm, other, pm } => {
                write!(f, "anti-affinity: {vm} conflicts with {other} hosted on {pm}")
            }
            Violation::NoOp { vm } => write!(f, "no-op: {vm} is already at that placement"),
            Violation::UnknownVm(vm) => write!(f, "unknown vm {vm}"),
            Violation::UnknownPm(pm) => write!(f, "unknown pm {pm}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible migration: {0}")]
    Infeasible(Violation),
    #[error("invalid cluster state: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("plan has {len} actions, exceeding the migration limit {mnl}")]
    PlanTooLong { len: usize, mnl: usize },
}

/// One rescheduling step: move `vm` to `dest_pm`.
///
/// `dest_numa` pins the NUMA slot; when absent the simulator picks one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MigrationAction {
    pub vm: VmId,
    pub dest_pm: PmId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dest_numa: Option<NumaSlot>,
}

impl MigrationAction {
    pub fn new(vm: VmId, dest_pm: PmId) -> Self {
        MigrationAction { vm, dest_pm, dest_numa: None }
    }

    pub fn pinned(vm: VmId, dest_pm: PmId, slot: NumaSlot) -> Self {
        MigrationAction {
            vm,
            dest_pm,
            dest_numa: Some(slot),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub actions: Vec<MigrationAction>,
}

impl MigrationPlan {
    pub fn new(actions: Vec<MigrationAction>) -> Self {
        MigrationPlan { actions }
    }

    pub fn with_limit(actions: Vec<MigrationAction>, mnl: usize) -> Result<Self, ClusterError> {
        if actions.len() > mnl {
            return Err(ClusterError::PlanTooLong { len: actions.len(), mnl });
        }
        Ok(MigrationPlan { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Number of distinct VMs the plan touches.
    pub fn distinct_vms(&self) -> usize {
        let mut ids: Vec<VmId> = self.actions.iter().map(|a| a.vm).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Full VM-to-NUMA assignment plus per-NUMA free resources.
///
/// The VM list is shared between snapshots; cloning a state copies only the
/// PM records and the placement vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterState {
    pms: Vec<PhysicalMachine>,
    vms: Arc<Vec<VirtualMachine>>,
    placement: Vec<Placement>,
}

impl ClusterState {
    /// Builds a state from PM capacities, VMs and their placements, reporting
    /// every violated constraint at once.
    pub fn new(
        capacities: Vec<[(u32, u32); 2]>,
        mut vms: Vec<VirtualMachine>,
        placement: Vec<Placement>,
    ) -> Result<Self, ClusterError> {
        let mut errors = Vec::new();
        if vms.len() != placement.len() {
            errors.push(format!(
                "{} VMs but {} placements; every VM must be placed exactly once",
                vms.len(),
                placement.len()
            ));
            return Err(ClusterError::Validation(errors));
        }
        for (i, vm) in vms.iter().enumerate() {
            if vm.id != VmId(i) {
                errors.push(format!("VM at position {i} has id {}", vm.id.0));
            }
            if let Err(e) = vm.check_shape() {
                errors.push(e);
            }
        }
        // Symmetrize conflicts.
        let n_vms = vms.len();
        let mut extra: Vec<(usize, VmId)> = Vec::new();
        for vm in &vms {
            for &c in &vm.affinity_conflicts {
                if c.0 >= n_vms {
                    errors.push(format!("{} lists unknown conflict {}", vm.id, c));
                } else if c == vm.id {
                    errors.push(format!("{} lists itself as a conflict", vm.id));
                } else {
                    extra.push((c.0, vm.id));
                }
            }
        }
        for (k, other) in extra {
            vms[k].affinity_conflicts.push(other);
        }
        for vm in &mut vms {
            vm.affinity_conflicts.sort_unstable();
            vm.affinity_conflicts.dedup();
        }

        let mut pms: Vec<PhysicalMachine> = capacities
            .iter()
            .enumerate()
            .map(|(i, c)| PhysicalMachine {
                id: PmId(i),
                numas: [NumaState::empty(c[0].0, c[0].1), NumaState::empty(c[1].0, c[1].1)],
                hosted: Vec::new(),
            })
            .collect();

        let mut used = vec![[(0u64, 0u64); 2]; pms.len()];
        for (k, p) in placement.iter().enumerate() {
            if p.pm.0 >= pms.len() {
                errors.push(format!("{} placed on unknown {}", VmId(k), p.pm));
                continue;
            }
            let vm = &vms[k];
            if !NumaSlot::candidates(vm.numa_count).contains(&p.slot) {
                errors.push(format!("numa shape: {} with numa_count {} cannot occupy slot {}", vm.id, vm.numa_count, p.slot));
                continue;
            }
            for &j in p.slot.indices() {
                used[p.pm.0][j].0 += vm.cpu_per_numa() as u64;
                used[p.pm.0][j].1 += vm.mem_per_numa() as u64;
            }
            pms[p.pm.0].hosted.push(VmId(k));
        }
        for (i, pm) in pms.iter_mut().enumerate() {
            for j in 0..2 {
                let n = &mut pm.numas[j];
                let (u_cpu, u_mem) = used[i][j];
                if u_cpu > n.capacity_cpu as u64 {
                    errors.push(format!(
                        "cpu capacity: pm{i} numa {j} hosts {u_cpu} cores but has {}",
                        n.capacity_cpu
                    ));
                } else {
                    n.free_cpu = n.capacity_cpu - u_cpu as u32;
                }
                if u_mem > n.capacity_mem as u64 {
                    errors.push(format!(
                        "memory capacity: pm{i} numa {j} hosts {u_mem} GB but has {}",
                        n.capacity_mem
                    ));
                } else {
                    n.free_mem = n.capacity_mem - u_mem as u32;
                }
            }
        }
        for pm in &pms {
            for (a_pos, &a) in pm.hosted.iter().enumerate() {
                for &b in &pm.hosted[a_pos + 1..] {
                    if vms[a.0].conflicts_with(b) {
                        errors.push(format!("anti-affinity: {a} and {b} share {}", pm.id));
                    }
                }
            }
        }
        if !errors.is_empty() {
            return Err(ClusterError::Validation(errors));
        }
        Ok(ClusterState {
            pms,
            vms: Arc::new(vms),
            placement,
        })
    }

    pub fn pms(&self) -> &[PhysicalMachine] {
        &self.pms
    }

    pub fn vms(&self) -> &[VirtualMachine] {
        &self.vms
    }

    pub fn shared_vms(&self) -> &Arc<Vec<VirtualMachine>> {
        &self.vms
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placement
    }

    pub fn num_pms(&self) -> usize {
        self.pms.len()
    }

    pub fn num_vms(&self) -> usize {
        self.vms.len()
    }

    pub fn pm(&self, id: PmId) -> &PhysicalMachine {
        &self.pms[id.0]
    }

    pub fn vm(&self, id: VmId) -> &VirtualMachine {
        &self.vms[id.0]
    }

    pub fn placement(&self, id: VmId) -> Placement {
        self.placement[id.0]
    }

    pub fn capacities(&self) -> Vec<[(u32, u32); 2]> {
        self.pms
            .iter()
            .map(|pm| {
                [
                    (pm.numas[0].capacity_cpu, pm.numas[0].capacity_mem),
                    (pm.numas[1].capacity_cpu, pm.numas[1].capacity_mem),
                ]
            })
            .collect()
    }

    pub fn total_free(&self, resource: Resource) -> u64 {
        self.pms
            .iter()
            .flat_map(|pm| pm.numas.iter())
            .map(|n| n.free(resource) as u64)
            .sum()
    }

    pub fn total_used(&self, resource: Resource) -> u64 {
        self.pms
            .iter()
            .flat_map(|pm| pm.numas.iter())
            .map(|n| (n.capacity(resource) - n.free(resource)) as u64)
            .sum()
    }

    pub fn total_capacity(&self, resource: Resource) -> u64 {
        self.pms
            .iter()
            .flat_map(|pm| pm.numas.iter())
            .map(|n| n.capacity(resource) as u64)
            .sum()
    }

    /// Total of `free mod block` over every NUMA for one resource.
    pub fn resource_fragments(&self, resource: Resource, block: u32) -> u64 {
        self.pms.iter().map(|pm| pm.fragments(resource, block) as u64).sum()
    }

    /// Checks whether `vm` could occupy `slot` on `pm`, with its current
    /// footprint already released. Does not reject the current placement.
    pub fn check_move(&self, vm: VmId, pm: PmId, slot: NumaSlot) -> Result<(), Violation> {
        let v = self.vms.get(vm.0).ok_or(Violation::UnknownVm(vm))?;
        let dest = self.pms.get(pm.0).ok_or(Violation::UnknownPm(pm))?;
        if !NumaSlot::candidates(v.numa_count).contains(&slot) {
            return Err(Violation::NumaShape { vm, slot });
        }
        let src = self.placement[vm.0];
        for &j in slot.indices() {
            let n = &dest.numas[j];
            let released = src.pm == pm && src.slot.indices().contains(&j);
            let (mut free_cpu, mut free_mem) = (n.free_cpu, n.free_mem);
            if released {
                free_cpu += v.cpu_per_numa();
                free_mem += v.mem_per_numa();
            }
            if free_cpu < v.cpu_per_numa() {
                return Err(Violation::Cpu { pm, numa: j, need: v.cpu_per_numa(), free: free_cpu });
            }
            if free_mem < v.mem_per_numa() {
                return Err(Violation::Memory { pm, numa: j, need: v.mem_per_numa(), free: free_mem });
            }
        }
        if let Some(&other) = v
            .affinity_conflicts
            .iter()
            .find(|c| self.placement[c.0].pm == pm)
        {
            return Err(Violation::Affinity { vm, other, pm });
        }
        Ok(())
    }

    /// Post-move NUMA records of source and destination, without mutating.
    /// The move must already have passed [`ClusterState::check_move`]. When
    /// source and destination coincide both fields hold the same record.
    pub fn preview_move(&self, vm: VmId, pm: PmId, slot: NumaSlot) -> MovePreview {
        let v = &self.vms[vm.0];
        let (cpu, mem) = (v.cpu_per_numa(), v.mem_per_numa());
        let src = self.placement[vm.0];
        let mut src_after = self.pms[src.pm.0].numas;
        for &j in src.slot.indices() {
            src_after[j].free_cpu += cpu;
            src_after[j].free_mem += mem;
        }
        let mut dest_after = if src.pm == pm { src_after } else { self.pms[pm.0].numas };
        for &j in slot.indices() {
            dest_after[j].free_cpu -= cpu;
            dest_after[j].free_mem -= mem;
        }
        if src.pm == pm {
            src_after = dest_after;
        }
        MovePreview {
            src: src.pm,
            dest: pm,
            src_after,
            dest_after,
        }
    }

    /// Shape-compatible slots on `pm` that `vm` could move into.
    pub fn feasible_slots(&self, vm: VmId, pm: PmId) -> impl Iterator<Item = NumaSlot> + '_ {
        NumaSlot::candidates(self.vms[vm.0].numa_count)
            .iter()
            .copied()
            .filter(move |&s| self.check_move(vm, pm, s).is_ok())
    }

    /// Moves `vm` in place, returning its previous placement.
    pub fn move_vm(&mut self, vm: VmId, pm: PmId, slot: NumaSlot) -> Result<Placement, Violation> {
        self.check_move(vm, pm, slot)?;
        let src = self.placement[vm.0];
        let (cpu, mem) = {
            let v = &self.vms[vm.0];
            (v.cpu_per_numa(), v.mem_per_numa())
        };
        {
            let src_pm = &mut self.pms[src.pm.0];
            for &j in src.slot.indices() {
                src_pm.numas[j].free_cpu += cpu;
                src_pm.numas[j].free_mem += mem;
            }
            if let Ok(pos) = src_pm.hosted.binary_search(&vm) {
                src_pm.hosted.remove(pos);
            }
        }
        let dest_pm = &mut self.pms[pm.0];
        for &j in slot.indices() {
            dest_pm.numas[j].free_cpu -= cpu;
            dest_pm.numas[j].free_mem -= mem;
        }
        if let Err(pos) = dest_pm.hosted.binary_search(&vm) {
            dest_pm.hosted.insert(pos, vm);
        }
        self.placement[vm.0] = Placement { pm, slot };
        Ok(src)
    }

    /// Returns the successor state; all PMs other than source and destination
    /// are left untouched.
    pub fn apply_migration(&self, action: &MigrationAction, dest_numa: NumaSlot) -> Result<ClusterState, ClusterError> {
        let mut next = self.clone();
        next.move_vm(action.vm, action.dest_pm, dest_numa)
            .map_err(ClusterError::Infeasible)?;
        Ok(next)
    }

    /// Re-derives every invariant from scratch; used by tests and the
    /// validator subcommand.
    pub fn revalidate(&self) -> Result<(), ClusterError> {
        let rebuilt = ClusterState::new(self.capacities(), self.vms.to_vec(), self.placement.clone())?;
        if rebuilt.pms != self.pms {
            return Err(ClusterError::Validation(vec![
                "per-NUMA bookkeeping disagrees with placement".into(),
            ]));
        }
        Ok(())
    }
}

/// `free_cpu mod x`: the part of a NUMA's free CPU that no additional
/// `x`-core VM can use.
pub fn fragment_of_numa(free_cpu: u32, x: u32) -> Result<u32, ClusterError> {
    if x == 0 {
        return Err(ClusterError::InvalidParameter("fragment block X must be positive".into()));
    }
    Ok(free_cpu % x)
}

pub fn total_fragments(state: &ClusterState, x: u32) -> Result<u64, ClusterError> {
    if x == 0 {
        return Err(ClusterError::InvalidParameter("fragment block X must be positive".into()));
    }
    Ok(state.resource_fragments(Resource::Cpu, x))
}

/// Fragments over total free CPU; zero when the cluster has no free CPU.
pub fn fragment_rate<T: Scalar>(state: &ClusterState, x: u32) -> Result<T, ClusterError> {
    let frag = total_fragments(state, x)?;
    let free = state.total_free(Resource::Cpu);
    if free == 0 {
        return Ok(T::zero());
    }
    Ok(T::from_int(frag as i64) / T::from_int(free as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_example;
    use crate::scalar::Exact;
    use num_rational::Ratio;

    #[test]
    fn numa_fragment_examples() {
        assert_eq!(fragment_of_numa(12, 16).unwrap(), 12);
        assert_eq!(fragment_of_numa(16, 16).unwrap(), 0);
        assert_eq!(fragment_of_numa(20, 16).unwrap(), 4);
        assert!(matches!(fragment_of_numa(5, 0), Err(ClusterError::InvalidParameter(_))));
    }

    #[test]
    fn worked_example_rate() {
        let s = worked_example();
        assert_eq!(total_fragments(&s, 16).unwrap(), 16);
        assert_eq!(fragment_rate::<Exact>(&s, 16).unwrap(), Ratio::new(1, 2));
        assert_eq!(fragment_rate::<f64>(&s, 16).unwrap(), 0.5);
    }

    #[test]
    fn worked_example_migration() {
        let s = worked_example();
        let next = s
            .apply_migration(&MigrationAction::new(VmId(0), PmId(1)), NumaSlot::Numa0)
            .unwrap();
        assert_eq!(next.pm(PmId(0)).numas[0].free_cpu, 16);
        assert_eq!(next.pm(PmId(1)).numas[0].free_cpu, 16);
        assert_eq!(fragment_rate::<Exact>(&next, 16).unwrap(), Ratio::from_integer(0));
        let back = next
            .apply_migration(&MigrationAction::new(VmId(0), PmId(0)), NumaSlot::Numa0)
            .unwrap();
        assert_eq!(back, s);
        next.revalidate().unwrap();
    }

    #[test]
    fn fully_fragmented_and_packed() {
        let vms = vec![VirtualMachine::custom(VmId(0), 17, 2, 1)];
        let s = ClusterState::new(
            vec![[(32, 64), (0, 0)]],
            vms,
            vec![Placement { pm: PmId(0), slot: NumaSlot::Numa0 }],
        )
        .unwrap();
        assert_eq!(fragment_rate::<f64>(&s, 16).unwrap(), 1.0);
        let vms = vec![VirtualMachine::of_type(VmId(0), VmType::X4large)];
        let packed = ClusterState::new(
            vec![[(16, 32), (0, 0)]],
            vms,
            vec![Placement { pm: PmId(0), slot: NumaSlot::Numa0 }],
        )
        .unwrap();
        assert_eq!(fragment_rate::<f64>(&packed, 16).unwrap(), 0.0);
    }

    #[test]
    fn validation_reports_every_violation() {
        let mut a = VirtualMachine::of_type(VmId(0), VmType::X4large);
        a.affinity_conflicts.push(VmId(1));
        let b = VirtualMachine::of_type(VmId(1), VmType::X4large);
        let err = ClusterState::new(
            vec![[(16, 64), (16, 16)]],
            vec![a, b],
            vec![
                Placement { pm: PmId(0), slot: NumaSlot::Numa0 },
                Placement { pm: PmId(0), slot: NumaSlot::Numa1 },
            ],
        )
        .unwrap_err();
        let ClusterError::Validation(msgs) = err else { panic!() };
        assert!(msgs.iter().any(|m| m.starts_with("memory capacity")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("anti-affinity")), "{msgs:?}");
    }

    #[test]
    fn type_shape_mismatch_rejected() {
        let mut vm = VirtualMachine::of_type(VmId(0), VmType::X4large);
        vm.cpu = 8;
        let err = ClusterState::new(
            vec![[(32, 64), (32, 64)]],
            vec![vm],
            vec![Placement { pm: PmId(0), slot: NumaSlot::Numa0 }],
        );
        assert!(err.is_err());
        let odd = VirtualMachine::custom(VmId(0), 3, 6, 2);
        assert!(ClusterState::new(
            vec![[(32, 64), (32, 64)]],
            vec![odd],
            vec![Placement { pm: PmId(0), slot: NumaSlot::Both }],
        )
        .is_err());
    }

    #[test]
    fn infeasible_moves_name_the_constraint() {
        let s = worked_example();
        // pm0 numa1 has no capacity.
        let e = s.check_move(VmId(0), PmId(0), NumaSlot::Numa1).unwrap_err();
        assert_eq!(e.constraint(), "cpu");
        let e = s.check_move(VmId(0), PmId(1), NumaSlot::Both).unwrap_err();
        assert_eq!(e.constraint(), "numa-shape");
    }
}
