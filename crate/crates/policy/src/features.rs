//! Per-PM and per-VM input features.
//!
//! PM rows (8): for NUMA 0 then NUMA 1, remaining CPU, remaining memory,
//! local fragment ratio and fragment size.
//!
//! VM rows (14): requested CPU per NUMA (2), requested memory per NUMA (2),
//! footprint fragment per NUMA (2), then the source PM's 8 features with
//! the NUMA the VM sits on listed first. Single-NUMA VMs carry zeros in the
//! second NUMA columns.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use vmr_core::{ClusterState, NumaSlot, NumaState};

use crate::float::Float;

pub const PM_FEATURES: usize = 8;
pub const VM_FEATURES: usize = 14;

/// Raw (unnormalized) features.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeatures {
    pub pm: Array2<f64>,
    pub vm: Array2<f64>,
    /// Host PM of every VM.
    pub tree: Vec<usize>,
}

/// Normalized network input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T> {
    pub pm: Array2<T>,
    pub vm: Array2<T>,
    pub tree: Vec<usize>,
}

fn numa_features(n: &NumaState, x: u32) -> [f64; 4] {
    let frag = n.free_cpu % x;
    let ratio = if n.free_cpu > 0 { frag as f64 / n.free_cpu as f64 } else { 0.0 };
    [n.free_cpu as f64, n.free_mem as f64, ratio, frag as f64]
}

pub fn raw_features(state: &ClusterState, x: u32) -> RawFeatures {
    let mut pm = Array2::zeros((state.num_pms(), PM_FEATURES));
    for (i, p) in state.pms().iter().enumerate() {
        for j in 0..2 {
            let f = numa_features(&p.numas[j], x);
            for c in 0..4 {
                pm[[i, 4 * j + c]] = f[c];
            }
        }
    }
    let mut vm = Array2::zeros((state.num_vms(), VM_FEATURES));
    let mut tree = Vec::with_capacity(state.num_vms());
    for (k, v) in state.vms().iter().enumerate() {
        let place = state.placements()[k];
        let (c, m) = (v.cpu_per_numa() as f64, v.mem_per_numa() as f64);
        let frag = (v.cpu_per_numa() % x) as f64;
        let both = v.numa_count == 2;
        let second = |a: f64| if both { a } else { 0.0 };
        let own = [c, second(c), m, second(m), frag, second(frag)];
        for (col, val) in own.into_iter().enumerate() {
            vm[[k, col]] = val;
        }
        let first = if place.slot == NumaSlot::Numa1 { 1 } else { 0 };
        for (n, j) in [first, 1 - first].into_iter().enumerate() {
            for c in 0..4 {
                vm[[k, 6 + 4 * n + c]] = pm[[place.pm.0, 4 * j + c]];
            }
        }
        tree.push(place.pm.0);
    }
    RawFeatures { pm, vm, tree }
}

/// Per-column min-max ranges used for normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pm_min: Vec<f64>,
    pub pm_max: Vec<f64>,
    pub vm_min: Vec<f64>,
    pub vm_max: Vec<f64>,
}

impl NormStats {
    /// Ranges observed over `states`.
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a ClusterState>, x: u32) -> Self {
        let mut s = NormStats {
            pm_min: vec![f64::INFINITY; PM_FEATURES],
            pm_max: vec![f64::NEG_INFINITY; PM_FEATURES],
            vm_min: vec![f64::INFINITY; VM_FEATURES],
            vm_max: vec![f64::NEG_INFINITY; VM_FEATURES],
        };
        for st in states {
            let f = raw_features(st, x);
            extend(&mut s.pm_min, &mut s.pm_max, &f.pm);
            extend(&mut s.vm_min, &mut s.vm_max, &f.vm);
        }
        for v in s.pm_min.iter_mut().chain(s.vm_min.iter_mut()) {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        for v in s.pm_max.iter_mut().chain(s.vm_max.iter_mut()) {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        s
    }

    /// Fixed ranges from the largest NUMA capacity, for use without data.
    pub fn from_capacity(numa_cpu: u32, numa_mem: u32, x: u32) -> Self {
        let (c, m, f) = (numa_cpu as f64, numa_mem as f64, (x - 1) as f64);
        let pm = vec![c, m, 1.0, f, c, m, 1.0, f];
        let mut vm = vec![c, c, m, m, f, f];
        vm.extend_from_slice(&pm);
        NormStats {
            pm_min: vec![0.0; PM_FEATURES],
            pm_max: pm,
            vm_min: vec![0.0; VM_FEATURES],
            vm_max: vm,
        }
    }

    pub fn apply<T: Float>(&self, raw: &RawFeatures) -> FeatureTensor<T> {
        FeatureTensor {
            pm: scale(&raw.pm, &self.pm_min, &self.pm_max),
            vm: scale(&raw.vm, &self.vm_min, &self.vm_max),
            tree: raw.tree.clone(),
        }
    }
}

fn extend(min: &mut [f64], max: &mut [f64], a: &Array2<f64>) {
    for row in a.rows() {
        for (c, &v) in row.iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
}

fn scale<T: Float>(a: &Array2<f64>, min: &[f64], max: &[f64]) -> Array2<T> {
    let mut out = Array2::zeros(a.dim());
    for ((r, c), &v) in a.indexed_iter() {
        let span = max[c] - min[c];
        let z = if span > 0.0 { ((v - min[c]) / span).clamp(0.0, 1.0) } else { 0.0 };
        out[[r, c]] = T::of(z);
    }
    out
}

/// Raw features normalized by `norm`.
pub fn encode_features<T: Float>(state: &ClusterState, norm: &NormStats, x: u32) -> FeatureTensor<T> {
    norm.apply(&raw_features(state, x))
}
