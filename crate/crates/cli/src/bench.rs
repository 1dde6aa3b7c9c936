//! Benchmark grid over algorithms, mappings and migration limits.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vmr_core::{rollout_plan, ClusterState, Exact, Scalar};

use crate::algorithms::{solve, Algorithm, SolveContext};
use crate::BenchError;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub mnls: Vec<usize>,
    pub budget: Duration,
    /// Run cells one at a time.
    pub serial: bool,
    /// Abort on the first cell over budget.
    pub strict: bool,
}

/// One (algorithm, mapping, MNL) cell. Objectives come from replaying the
/// plan, never from the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub mapping: String,
    pub mnl: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `final_objective` as an exact fraction.
    pub final_exact: String,
    pub migrations: usize,
    pub wall_secs: f64,
    pub budget_met: bool,
    pub infeasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub mnl: usize,
    pub mappings: usize,
    pub mean_final_objective: f64,
    pub mean_wall_secs: f64,
    pub max_wall_secs: f64,
    pub budget_met: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub budget_secs: f64,
    pub serial: bool,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
}

fn to_f64(x: Exact) -> f64 {
    <f64 as Scalar>::from_exact(x)
}

fn run_cell(
    algorithm: &Algorithm,
    name: &str,
    mapping: &ClusterState,
    mnl: usize,
    cfg: &BenchConfig,
    ctx: &SolveContext,
) -> Result<BenchRow, BenchError> {
    let start = Instant::now();
    let solution = solve(algorithm, mapping, mnl, ctx)?;
    let wall = start.elapsed();
    let replay = rollout_plan(mapping, &solution.plan, &ctx.objective)
        .map_err(|e| BenchError::Validation(format!("{algorithm} on {name} (mnl {mnl}): {e}")))?;
    if solution.plan.distinct_vms() > mnl {
        return Err(BenchError::Validation(format!(
            "{algorithm} on {name}: {} migrations exceed the limit {mnl}",
            solution.plan.distinct_vms()
        )));
    }
    let budget_met = wall <= cfg.budget;
    if cfg.strict && !budget_met {
        return Err(BenchError::Budget {
            algorithm: algorithm.to_string(),
            mapping: name.to_string(),
            mnl,
            secs: wall.as_secs_f64(),
            budget: cfg.budget.as_secs_f64(),
        });
    }
    Ok(BenchRow {
        algorithm: algorithm.to_string(),
        mapping: name.to_string(),
        mnl,
        initial_objective: to_f64(ctx.objective.value(mapping)),
        final_objective: to_f64(replay.final_objective),
        final_exact: replay.final_objective.to_string(),
        migrations: solution.plan.len(),
        wall_secs: wall.as_secs_f64(),
        budget_met,
        infeasible: solution.infeasible,
    })
}

/// Runs every cell, re-validates every plan by replay and aggregates per
/// (algorithm, MNL). Rows come back in grid order whatever the schedule.
pub fn run_bench(mappings: &[(String, ClusterState)], cfg: &BenchConfig, ctx: &SolveContext) -> Result<BenchReport, BenchError> {
    if cfg.algorithms.iter().any(Algorithm::needs_policy) && ctx.policy.is_none() {
        return Err(BenchError::Config("the policy algorithm needs --checkpoint".into()));
    }
    let mut cells = Vec::new();
    for a in &cfg.algorithms {
        for (name, m) in mappings {
            for &mnl in &cfg.mnls {
                cells.push((a, name.as_str(), m, mnl));
            }
        }
    }
    let run = |&(a, name, m, mnl): &(&Algorithm, &str, &ClusterState, usize)| run_cell(a, name, m, mnl, cfg, ctx);
    let rows: Vec<BenchRow> = if cfg.serial {
        cells.iter().map(run).collect::<Result<_, _>>()?
    } else {
        cells.par_iter().map(run).collect::<Result<_, _>>()?
    };
    Ok(BenchReport {
        budget_secs: cfg.budget.as_secs_f64(),
        serial: cfg.serial,
        summary: summarize(&rows),
        rows,
    })
}

fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, usize), Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.algorithm.clone(), r.mnl);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            SummaryRow {
                algorithm: key.0.clone(),
                mnl: key.1,
                mappings: g.len(),
                mean_final_objective: g.iter().map(|r| r.final_objective).sum::<f64>() / n,
                mean_wall_secs: g.iter().map(|r| r.wall_secs).sum::<f64>() / n,
                max_wall_secs: g.iter().map(|r| r.wall_secs).fold(0.0, f64::max),
                budget_met: g.iter().filter(|r| r.budget_met).count(),
            }
        })
        .collect()
}

impl BenchReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| BenchError::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
    }
}
