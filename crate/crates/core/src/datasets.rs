//! Mapping files, synthetic cluster generation and dataset splits.
//!
//! The on-disk format is JSON:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "pms": [{"id": 0, "numas": [{"cpu": 44, "mem": 128}, {"cpu": 44, "mem": 128}]}],
//!   "vms": [{"id": 0, "type": "4xlarge", "pm": 0, "numa": "numa0", "conflicts": []},
//!           {"id": 1, "cpu": 6, "mem": 48, "numa_count": 2, "pm": 0, "numa": "both"}]
//! }
//! ```
//!
//! Ids must be `0..n` in order. A VM gives either a standard `type` or an
//! explicit `cpu`/`mem`/`numa_count`; if both are present they must agree.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterError, ClusterState, NumaSlot, Placement, PmId, VirtualMachine, VmId, VmType};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid mapping: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("cannot generate cluster: {0}")]
    Generation(String),
    #[error("cannot schedule {vm}: no PM has room")]
    Unschedulable { vm: VmId },
    #[error("invalid split: {0}")]
    Split(String),
}

impl From<ClusterError> for DatasetError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Validation(v) => DatasetError::Validation(v),
            other => DatasetError::Validation(vec![other.to_string()]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumaCapacity {
    pub cpu: u32,
    pub mem: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmRecord {
    pub id: usize,
    pub numas: [NumaCapacity; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRecord {
    pub id: usize,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub vm_type: Option<VmType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numa_count: Option<u8>,
    pub pm: usize,
    pub numa: NumaSlot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRecord {
    pub schema_version: u32,
    pub pms: Vec<PmRecord>,
    pub vms: Vec<VmRecord>,
}

impl MappingRecord {
    pub fn from_state(state: &ClusterState) -> Self {
        let pms = state
            .pms()
            .iter()
            .map(|pm| PmRecord {
                id: pm.id.0,
                numas: [
                    NumaCapacity { cpu: pm.numas[0].capacity_cpu, mem: pm.numas[0].capacity_mem },
                    NumaCapacity { cpu: pm.numas[1].capacity_cpu, mem: pm.numas[1].capacity_mem },
                ],
            })
            .collect();
        let vms = state
            .vms()
            .iter()
            .zip(state.placements())
            .map(|(vm, p)| {
                let standard = vm.vm_type != VmType::Custom;
                VmRecord {
                    id: vm.id.0,
                    vm_type: standard.then_some(vm.vm_type),
                    cpu: (!standard).then_some(vm.cpu),
                    mem: (!standard).then_some(vm.mem),
                    numa_count: (!standard).then_some(vm.numa_count),
                    pm: p.pm.0,
                    numa: p.slot,
                    conflicts: vm.affinity_conflicts.iter().map(|c| c.0).collect(),
                }
            })
            .collect();
        MappingRecord {
            schema_version: SCHEMA_VERSION,
            pms,
            vms,
        }
    }

    pub fn to_state(&self) -> Result<ClusterState, DatasetError> {
        let mut errors = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errors.push(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for (i, pm) in self.pms.iter().enumerate() {
            if pm.id != i {
                errors.push(format!("pm at position {i} has id {}", pm.id));
            }
        }
        let mut vms = Vec::with_capacity(self.vms.len());
        let mut placement = Vec::with_capacity(self.vms.len());
        for (i, r) in self.vms.iter().enumerate() {
            if r.id != i {
                errors.push(format!("vm at position {i} has id {}", r.id));
            }
            let vm = match r.vm_type {
                Some(t) if t != VmType::Custom => {
                    let (cpu, mem, numa) = t.shape().expect("standard type");
                    if r.cpu.is_some_and(|c| c != cpu)
                        || r.mem.is_some_and(|m| m != mem)
                        || r.numa_count.is_some_and(|n| n != numa)
                    {
                        errors.push(format!("vm{i}: explicit resources disagree with type {}", t.name()));
                    }
                    VirtualMachine::of_type(VmId(i), t)
                }
                _ => match (r.cpu, r.mem) {
                    (Some(cpu), Some(mem)) => VirtualMachine::custom(VmId(i), cpu, mem, r.numa_count.unwrap_or(1)),
                    _ => {
                        errors.push(format!("vm{i}: needs a standard type or explicit cpu and mem"));
                        continue;
                    }
                },
            };
            let mut vm = vm;
            vm.affinity_conflicts = r.conflicts.iter().map(|&c| VmId(c)).collect();
            vms.push(vm);
            placement.push(Placement { pm: PmId(r.pm), slot: r.numa });
        }
        if !errors.is_empty() {
            return Err(DatasetError::Validation(errors));
        }
        let caps = self
            .pms
            .iter()
            .map(|pm| [(pm.numas[0].cpu, pm.numas[0].mem), (pm.numas[1].cpu, pm.numas[1].mem)])
            .collect();
        Ok(ClusterState::new(caps, vms, placement)?)
    }
}

pub fn parse_mapping(text: &str, path: &Path) -> Result<ClusterState, DatasetError> {
    let record: MappingRecord = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    record.to_state()
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<ClusterState, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_mapping(&text, path)
}

pub fn save_mapping(state: &ClusterState, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&MappingRecord::from_state(state)).expect("mapping serializes");
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Online best-fit packer shared by initial scheduling and generation.
#[derive(Clone, Debug)]
struct Packer {
    free: Vec<[(u32, u32); 2]>,
    /// Stream ids hosted per PM.
    hosted: Vec<Vec<usize>>,
    block: u32,
}

struct Demand<'a> {
    cpu: u32,
    mem: u32,
    numa_count: u8,
    conflicts: &'a [usize],
}

impl Packer {
    fn new(caps: &[[(u32, u32); 2]], block: u32) -> Self {
        Packer {
            free: caps.to_vec(),
            hosted: vec![Vec::new(); caps.len()],
            block,
        }
    }

    /// Feasible slot leaving the fewest fragments; lowest PM then slot on ties.
    fn best(&self, d: &Demand) -> Option<Placement> {
        let w = d.numa_count as u32;
        let (c, m) = (d.cpu / w, d.mem / w);
        let mut best: Option<(i64, Placement)> = None;
        for (i, f) in self.free.iter().enumerate() {
            if !d.conflicts.is_empty() && self.hosted[i].iter().any(|h| d.conflicts.contains(h)) {
                continue;
            }
            for &slot in NumaSlot::candidates(d.numa_count) {
                if !slot.indices().iter().all(|&j| f[j].0 >= c && f[j].1 >= m) {
                    continue;
                }
                let after: u32 = (0..2)
                    .map(|j| {
                        let free = if slot.indices().contains(&j) { f[j].0 - c } else { f[j].0 };
                        free % self.block
                    })
                    .sum();
                let before = f[0].0 % self.block + f[1].0 % self.block;
                let frag = after as i64 - before as i64;
                if best.is_none_or(|(b, _)| frag < b) {
                    best = Some((frag, Placement { pm: PmId(i), slot }));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    fn place(&mut self, id: usize, d: &Demand) -> Option<Placement> {
        let p = self.best(d)?;
        let w = d.numa_count as u32;
        for &j in p.slot.indices() {
            self.free[p.pm.0][j].0 -= d.cpu / w;
            self.free[p.pm.0][j].1 -= d.mem / w;
        }
        self.hosted[p.pm.0].push(id);
        Some(p)
    }

    fn remove(&mut self, id: usize, d: &Demand, p: Placement) {
        let w = d.numa_count as u32;
        for &j in p.slot.indices() {
            self.free[p.pm.0][j].0 += d.cpu / w;
            self.free[p.pm.0][j].1 += d.mem / w;
        }
        self.hosted[p.pm.0].retain(|&h| h != id);
    }
}

/// Places `vm_stream` one VM at a time on the feasible PM whose fragment
/// rate drops the most (equivalently: fewest fragments afterwards).
///
/// `affinity_conflicts` of the stream refer to stream positions.
pub fn best_fit_initial(
    capacities: Vec<[(u32, u32); 2]>,
    vm_stream: Vec<VirtualMachine>,
    block: u32,
) -> Result<ClusterState, DatasetError> {
    if block == 0 {
        return Err(DatasetError::Generation("fragment block must be positive".into()));
    }
    let mut packer = Packer::new(&capacities, block);
    let mut placement = Vec::with_capacity(vm_stream.len());
    for (k, vm) in vm_stream.iter().enumerate() {
        let conflicts: Vec<usize> = vm.affinity_conflicts.iter().map(|c| c.0).collect();
        let d = Demand {
            cpu: vm.cpu,
            mem: vm.mem,
            numa_count: vm.numa_count,
            conflicts: &conflicts,
        };
        let p = packer.place(k, &d).ok_or(DatasetError::Unschedulable { vm: VmId(k) })?;
        placement.push(p);
    }
    Ok(ClusterState::new(capacities, vm_stream, placement)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmProfile {
    /// Whole-PM CPU, split evenly over the two NUMAs.
    pub cpu: u32,
    pub mem: u32,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub pm_count: usize,
    pub pm_profiles: Vec<PmProfile>,
    pub vm_type_mix: Vec<(VmType, f64)>,
    /// Target fraction of CPU in use.
    pub workload_level: f64,
    /// Expected fraction of other VMs each VM is in anti-affinity with.
    pub affinity_ratio: f64,
    /// Widen memory requests up to 1:8 CPU:memory on some VMs.
    pub multi_resource: bool,
    /// Generate exactly this many VMs instead of filling to `workload_level`.
    pub vm_count: Option<usize>,
    /// Departure-and-refill rounds that fragment the best-fit packing.
    pub churn_rounds: usize,
    pub churn_fraction: f64,
    pub fragment_block: u32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            pm_count: 20,
            pm_profiles: vec![PmProfile { cpu: 88, mem: 256, weight: 1.0 }],
            vm_type_mix: vec![
                (VmType::Large, 0.25),
                (VmType::Xlarge, 0.25),
                (VmType::X2large, 0.2),
                (VmType::X4large, 0.15),
                (VmType::X8large, 0.08),
                (VmType::X16large, 0.05),
                (VmType::X22large, 0.02),
            ],
            workload_level: 0.7,
            affinity_ratio: 0.0,
            multi_resource: false,
            vm_count: None,
            churn_rounds: 2,
            churn_fraction: 0.3,
            fragment_block: 16,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// 280 PMs of 88 cores / 256 GB holding roughly 2000 VMs.
    pub fn medium() -> Self {
        GeneratorConfig {
            pm_count: 280,
            vm_count: Some(2000),
            vm_type_mix: vec![
                (VmType::Large, 0.3),
                (VmType::Xlarge, 0.25),
                (VmType::X2large, 0.2),
                (VmType::X4large, 0.15),
                (VmType::X8large, 0.07),
                (VmType::X16large, 0.03),
            ],
            ..GeneratorConfig::default()
        }
    }

    /// 8 PMs of 64 cores / 128 GB with 24 VMs; small enough for the exact
    /// solver at low migration limits.
    pub fn toy() -> Self {
        GeneratorConfig {
            pm_count: 8,
            vm_count: Some(24),
            pm_profiles: vec![PmProfile { cpu: 64, mem: 128, weight: 1.0 }],
            vm_type_mix: vec![
                (VmType::Large, 0.2),
                (VmType::Xlarge, 0.25),
                (VmType::X2large, 0.25),
                (VmType::X4large, 0.2),
                (VmType::X8large, 0.1),
            ],
            ..GeneratorConfig::default()
        }
    }

    /// The two PM types of the multi-resource setting with widened memory.
    pub fn multi_resource() -> Self {
        GeneratorConfig {
            pm_profiles: vec![
                PmProfile { cpu: 88, mem: 256, weight: 1.0 },
                PmProfile { cpu: 128, mem: 364, weight: 1.0 },
            ],
            multi_resource: true,
            ..GeneratorConfig::default()
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Generation(m.to_string()));
        if self.pm_count == 0 {
            return bad("pm_count must be positive");
        }
        if self.pm_profiles.is_empty() || self.pm_profiles.iter().any(|p| p.weight < 0.0 || p.cpu % 2 != 0 || p.mem % 2 != 0) {
            return bad("pm profiles need even cpu/mem and non-negative weights");
        }
        if self.vm_type_mix.is_empty()
            || self.vm_type_mix.iter().any(|(t, w)| *w < 0.0 || *t == VmType::Custom)
            || self.vm_type_mix.iter().all(|(_, w)| *w == 0.0)
        {
            return bad("vm_type_mix needs standard types with positive total weight");
        }
        if self.vm_count.is_none() && !(self.workload_level > 0.0 && self.workload_level < 1.0) {
            return bad("workload_level must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.affinity_ratio) {
            return bad("affinity_ratio must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.churn_fraction) {
            return bad("churn_fraction must lie in [0, 1)");
        }
        if self.fragment_block == 0 {
            return bad("fragment_block must be positive");
        }
        Ok(())
    }
}

/// Tolerance on realized workload, as a fraction of total CPU.
pub const WORKLOAD_TOLERANCE: f64 = 0.05;

struct Arrival {
    cpu: u32,
    mem: u32,
    numa_count: u8,
    vm_type: VmType,
    conflicts: Vec<usize>,
    placement: Placement,
}

/// Seeded synthetic mapping: VMs arrive and are best-fit placed until the
/// target load is reached, then rounds of random departures and refills
/// scatter fragments the way a long-running cluster does.
pub fn generate_cluster(cfg: &GeneratorConfig) -> Result<ClusterState, DatasetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let caps: Vec<[(u32, u32); 2]> = (0..cfg.pm_count)
        .map(|_| {
            let p = weighted(&mut rng, &cfg.pm_profiles, |p| p.weight);
            [(p.cpu / 2, p.mem / 2), (p.cpu / 2, p.mem / 2)]
        })
        .collect();
    let total_cpu: u64 = caps.iter().map(|c| (c[0].0 + c[1].0) as u64).sum();
    let target = cfg.workload_level * total_cpu as f64;
    let ceiling = target + WORKLOAD_TOLERANCE * total_cpu as f64;

    let mut packer = Packer::new(&caps, cfg.fragment_block);
    let mut arrivals: Vec<Option<Arrival>> = Vec::new();
    let mut used: u64 = 0;
    let mut live = 0usize;

    let fill = |rng: &mut ChaCha8Rng,
                packer: &mut Packer,
                arrivals: &mut Vec<Option<Arrival>>,
                used: &mut u64,
                live: &mut usize| {
        let mut misses = 0;
        loop {
            let done = match cfg.vm_count {
                Some(n) => *live >= n,
                None => *used as f64 >= target,
            };
            if done || misses > 200 {
                break;
            }
            let ty = weighted(rng, &cfg.vm_type_mix, |(_, w)| *w).0;
            let (cpu, mut mem, numa_count) = ty.shape().expect("standard type");
            let mut vm_type = ty;
            if cfg.multi_resource && rng.gen_bool(0.3) {
                mem = cpu * rng.gen_range(3..=8);
                vm_type = VmType::Custom;
            }
            if cfg.vm_count.is_none() && (*used + cpu as u64) as f64 > ceiling {
                misses += 1;
                continue;
            }
            let id = arrivals.len();
            let conflicts: Vec<usize> = if cfg.affinity_ratio > 0.0 {
                (0..id)
                    .filter(|&o| arrivals[o].is_some() && rng.gen_bool(cfg.affinity_ratio))
                    .collect()
            } else {
                Vec::new()
            };
            let d = Demand { cpu, mem, numa_count, conflicts: &conflicts };
            match packer.place(id, &d) {
                Some(placement) => {
                    misses = 0;
                    *used += cpu as u64;
                    *live += 1;
                    arrivals.push(Some(Arrival { cpu, mem, numa_count, vm_type, conflicts, placement }));
                }
                None => misses += 1,
            }
        }
    };

    fill(&mut rng, &mut packer, &mut arrivals, &mut used, &mut live);
    for _ in 0..cfg.churn_rounds {
        for id in 0..arrivals.len() {
            if arrivals[id].is_some() && rng.gen_bool(cfg.churn_fraction) {
                let a = arrivals[id].take().expect("checked");
                packer.remove(id, &Demand { cpu: a.cpu, mem: a.mem, numa_count: a.numa_count, conflicts: &[] }, a.placement);
                used -= a.cpu as u64;
                live -= 1;
            }
        }
        fill(&mut rng, &mut packer, &mut arrivals, &mut used, &mut live);
    }

    match cfg.vm_count {
        Some(n) if live < n => {
            return Err(DatasetError::Generation(format!("could only place {live} of {n} VMs")));
        }
        None if (used as f64) < target - WORKLOAD_TOLERANCE * total_cpu as f64 => {
            return Err(DatasetError::Generation(format!(
                "reached {:.3} of CPU in use, target {:.3}",
                used as f64 / total_cpu as f64,
                cfg.workload_level
            )));
        }
        _ => {}
    }

    let mut remap = vec![usize::MAX; arrivals.len()];
    let mut next = 0;
    for (id, a) in arrivals.iter().enumerate() {
        if a.is_some() {
            remap[id] = next;
            next += 1;
        }
    }
    let mut vms = Vec::with_capacity(live);
    let mut placement = Vec::with_capacity(live);
    for a in arrivals.into_iter().flatten() {
        let id = VmId(vms.len());
        let mut vm = match a.vm_type {
            VmType::Custom => VirtualMachine::custom(id, a.cpu, a.mem, a.numa_count),
            t => VirtualMachine::of_type(id, t),
        };
        vm.affinity_conflicts = a
            .conflicts
            .iter()
            .filter(|&&c| remap[c] != usize::MAX)
            .map(|&c| VmId(remap[c]))
            .collect();
        vms.push(vm);
        placement.push(a.placement);
    }
    Ok(ClusterState::new(caps, vms, placement)?)
}

fn weighted<'a, T, R: Rng>(rng: &mut R, items: &'a [T], weight: impl Fn(&T) -> f64) -> &'a T {
    let total: f64 = items.iter().map(&weight).sum();
    let mut x = rng.gen::<f64>() * total;
    for it in items {
        x -= weight(it);
        if x < 0.0 {
            return it;
        }
    }
    items.last().expect("non-empty")
}

/// Mean over VMs of the fraction of other VMs each conflicts with.
pub fn affinity_ratio(state: &ClusterState) -> f64 {
    let m = state.num_vms();
    if m < 2 {
        return 0.0;
    }
    let total: usize = state.vms().iter().map(|v| v.affinity_conflicts.len()).sum();
    total as f64 / (m as f64 * (m - 1) as f64)
}

/// Seeded shuffle into train/validation/test. The first two sizes are
/// `round(n * ratio)`; the test split takes the remainder.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>), DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::Split("no mappings to split".into()));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-3 {
        return Err(DatasetError::Split(format!("ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = items.len();
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{fragment_rate, Resource};
    use crate::fixtures::worked_example;
    use crate::scalar::Exact;
    use num_rational::Ratio;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = GeneratorConfig {
            affinity_ratio: 0.05,
            multi_resource: true,
            ..GeneratorConfig::default()
        };
        let s = generate_cluster(&cfg).unwrap();
        save_mapping(&s, &path).unwrap();
        assert_eq!(load_mapping(&path).unwrap(), s);
    }

    #[test]
    fn hand_written_worked_example() {
        let text = r#"{
          "schema_version": 1,
          "pms": [
            {"id": 0, "numas": [{"cpu": 32, "mem": 64}, {"cpu": 0, "mem": 0}]},
            {"id": 1, "numas": [{"cpu": 32, "mem": 64}, {"cpu": 0, "mem": 0}]}
          ],
          "vms": [
            {"id": 0, "type": "xlarge", "pm": 0, "numa": "numa0"},
            {"id": 1, "type": "4xlarge", "pm": 0, "numa": "numa0"},
            {"id": 2, "type": "2xlarge", "pm": 1, "numa": "numa0"},
            {"id": 3, "cpu": 4, "mem": 8, "pm": 1, "numa": "numa0"}
          ]
        }"#;
        let s = parse_mapping(text, Path::new("inline")).unwrap();
        assert_eq!(fragment_rate::<Exact>(&s, 16).unwrap(), Ratio::new(1, 2));
        assert_eq!(s.pms(), worked_example().pms());
    }

    #[test]
    fn over_capacity_is_rejected_with_constraint_name() {
        let text = r#"{"schema_version": 1,
          "pms": [{"id": 0, "numas": [{"cpu": 8, "mem": 64}, {"cpu": 8, "mem": 64}]}],
          "vms": [{"id": 0, "type": "4xlarge", "pm": 0, "numa": "numa0"}]}"#;
        match parse_mapping(text, Path::new("x")) {
            Err(DatasetError::Validation(v)) => assert!(v[0].starts_with("cpu capacity"), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_mapping("{\n  \"schema_version\": 1,\n  \"pms\": oops", Path::new("bad.json")).unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = GeneratorConfig::default();
        assert_eq!(generate_cluster(&cfg).unwrap(), generate_cluster(&cfg).unwrap());
        let other = GeneratorConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_cluster(&cfg).unwrap(), generate_cluster(&other).unwrap());
    }

    #[test]
    fn workload_levels_are_ordered_and_within_tolerance() {
        for seed in 0..20 {
            let mut fracs = Vec::new();
            for level in [0.2, 0.8] {
                let cfg = GeneratorConfig { workload_level: level, seed, ..GeneratorConfig::default() };
                let s = generate_cluster(&cfg).unwrap();
                let frac = s.total_used(Resource::Cpu) as f64 / s.total_capacity(Resource::Cpu) as f64;
                assert!((frac - level).abs() <= WORKLOAD_TOLERANCE, "seed {seed}: {frac} vs {level}");
                fracs.push(frac);
            }
            assert!(fracs[0] < fracs[1]);
        }
    }

    #[test]
    fn cpu_memory_ratios() {
        let s = generate_cluster(&GeneratorConfig::default()).unwrap();
        assert!(s.vms().iter().all(|v| v.mem == 2 * v.cpu));
        let s = generate_cluster(&GeneratorConfig::multi_resource()).unwrap();
        assert!(s.vms().iter().all(|v| v.mem >= 2 * v.cpu && v.mem <= 8 * v.cpu));
        assert!(s.vms().iter().any(|v| v.mem > 2 * v.cpu));
    }

    #[test]
    fn affinity_ratio_tracks_target() {
        let target = 0.05;
        let mut realized = 0.0;
        for seed in 0..10 {
            let cfg = GeneratorConfig { affinity_ratio: target, seed, ..GeneratorConfig::default() };
            let s = generate_cluster(&cfg).unwrap();
            s.revalidate().unwrap();
            realized += affinity_ratio(&s);
        }
        realized /= 10.0;
        assert!((realized - target).abs() <= 0.2 * target, "{realized}");
    }

    #[test]
    fn infeasible_targets_fail() {
        let cfg = GeneratorConfig {
            pm_count: 1,
            vm_count: Some(100),
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_cluster(&cfg), Err(DatasetError::Generation(_))));
        let cfg = GeneratorConfig { workload_level: 1.2, ..GeneratorConfig::default() };
        assert!(generate_cluster(&cfg).is_err());
    }

    #[test]
    fn best_fit_prefers_zeroing_fragments() {
        // pm0 has 20 free, pm1 has 18 free; a 4-core VM zeroes pm0's fragment
        // but would turn pm1's 2 into 14.
        let caps = vec![[(20, 64), (0, 0)], [(18, 64), (0, 0)]];
        let s = best_fit_initial(caps.clone(), vec![VirtualMachine::of_type(VmId(0), VmType::Xlarge)], 16).unwrap();
        assert_eq!(s.placement(VmId(0)).pm, PmId(0));
        // Oracle: evaluate both placements explicitly.
        let fr = |pm: usize| {
            let st = ClusterState::new(
                caps.clone(),
                vec![VirtualMachine::of_type(VmId(0), VmType::Xlarge)],
                vec![Placement { pm: PmId(pm), slot: NumaSlot::Numa0 }],
            )
            .unwrap();
            fragment_rate::<Exact>(&st, 16).unwrap()
        };
        assert!(fr(0) < fr(1));
        let single = best_fit_initial(vec![[(8, 64), (0, 0)]], vec![VirtualMachine::of_type(VmId(0), VmType::Xlarge)], 16).unwrap();
        assert_eq!(single.placement(VmId(0)).pm, PmId(0));
        let err = best_fit_initial(vec![[(2, 64), (0, 0)]], vec![VirtualMachine::of_type(VmId(0), VmType::Xlarge)], 16);
        assert!(matches!(err, Err(DatasetError::Unschedulable { vm: VmId(0) })));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<usize> = (0..4400).collect();
        let (a, b, c) = split_dataset(&items, (0.909, 0.0455, 0.0455), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (4000, 200, 200));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, items);
        let small: Vec<usize> = (0..10).collect();
        let (a, b, c) = split_dataset(&small, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert_eq!(split_dataset(&small, (0.8, 0.1, 0.1), 3).unwrap().0, a);
        assert!(split_dataset::<usize>(&[], (0.8, 0.1, 0.1), 3).is_err());
    }
}
