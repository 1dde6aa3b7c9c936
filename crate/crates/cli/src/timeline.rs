//! Step-by-step migration timelines.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vmr_core::{ClusterState, Episode, MigrationPlan, NumaSlot, ObjectiveSpec, PmId, Scalar, VmType};

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub step: usize,
    pub vm: usize,
    pub vm_type: VmType,
    pub cpu: u32,
    pub mem: u32,
    pub src_pm: usize,
    pub src_numa: NumaSlot,
    pub dst_pm: usize,
    pub dst_numa: NumaSlot,
    /// X-core fragments summed over the source NUMAs.
    pub src_frag_before: u32,
    pub src_frag_after: u32,
    /// X-core fragments summed over the destination NUMAs not shared with
    /// the source.
    pub dst_frag_before: u32,
    pub dst_frag_after: u32,
    pub reward: f64,
    pub reward_exact: String,
}

fn numa_frags(state: &ClusterState, pm: PmId, numas: &[usize], x: u32) -> u32 {
    numas.iter().map(|&j| state.pm(pm).numas[j].free_cpu % x).sum()
}

/// Replays `plan` and records every step. Fails at the first illegal step.
pub fn emit_timeline(mapping: &ClusterState, plan: &MigrationPlan, objective: &ObjectiveSpec) -> Result<Vec<TimelineRow>, BenchError> {
    let x = objective.cpu_block();
    let mut ep = Episode::reset(mapping, plan.len(), objective)?;
    let mut rows = Vec::with_capacity(plan.len());
    for (step, action) in plan.actions.iter().enumerate() {
        if ep.is_done() {
            break;
        }
        let before = ep.state().clone();
        let reward = ep.step(action)?;
        let rec = *ep.trace().last().expect("a step was recorded");
        let after = ep.state();
        let src: Vec<usize> = rec.from.slot.indices().to_vec();
        let dst: Vec<usize> = rec
            .to
            .slot
            .indices()
            .iter()
            .copied()
            .filter(|j| rec.from.pm != rec.to.pm || !src.contains(j))
            .collect();
        let vm = before.vm(action.vm);
        rows.push(TimelineRow {
            step: step + 1,
            vm: action.vm.0,
            vm_type: vm.vm_type,
            cpu: vm.cpu,
            mem: vm.mem,
            src_pm: rec.from.pm.0,
            src_numa: rec.from.slot,
            dst_pm: rec.to.pm.0,
            dst_numa: rec.to.slot,
            src_frag_before: numa_frags(&before, rec.from.pm, &src, x),
            src_frag_after: numa_frags(after, rec.from.pm, &src, x),
            dst_frag_before: numa_frags(&before, rec.to.pm, &dst, x),
            dst_frag_after: numa_frags(after, rec.to.pm, &dst, x),
            reward: <f64 as Scalar>::from_exact(reward),
            reward_exact: reward.to_string(),
        });
    }
    Ok(rows)
}

const HEADER: [&str; 11] = ["step", "vm", "type", "cpu", "mem", "from", "to", "src frag", "dst frag", "reward", "exact"];

/// Plot-ready CSV; an empty timeline still gets its header.
pub fn write_timeline_csv(rows: &[TimelineRow], path: impl AsRef<Path>) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "step",
        "vm",
        "vm_type",
        "cpu",
        "mem",
        "src_pm",
        "src_numa",
        "dst_pm",
        "dst_numa",
        "src_frag_before",
        "src_frag_after",
        "dst_frag_before",
        "dst_frag_after",
        "reward",
        "reward_exact",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::Csv(e.into()))?;
    Ok(())
}

fn type_name(t: VmType) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Column-aligned text table.
pub fn timeline_text(rows: &[TimelineRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        table.push(vec![
            r.step.to_string(),
            format!("vm{}", r.vm),
            type_name(r.vm_type),
            r.cpu.to_string(),
            r.mem.to_string(),
            format!("pm{}/{}", r.src_pm, r.src_numa),
            format!("pm{}/{}", r.dst_pm, r.dst_numa),
            format!("{}->{}", r.src_frag_before, r.src_frag_after),
            format!("{}->{}", r.dst_frag_before, r.dst_frag_after),
            format!("{:.4}", r.reward),
            r.reward_exact.clone(),
        ]);
    }
    let widths: Vec<usize> = (0..HEADER.len()).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
