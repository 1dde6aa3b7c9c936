//! Risk-seeking evaluation: sample several trajectories, keep the best.
//!
//! With a small probability `p` of picking a bad action per step, a
//! trajectory of `mnl` steps stays clean with probability at most
//! `(1 - p)^mnl <= exp(-mnl * p)`; at `p = 0.005` and `mnl = 50` roughly
//! 23% of trajectories contain at least one such step. Quantile
//! thresholding removes the low-probability tail before sampling.

use num_traits::ToPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vmr_core::{ClusterState, Exact, MigrationPlan, ObjectiveSpec};

use crate::agent::run_policy;
use crate::float::Float;
use crate::network::PolicyNet;
use crate::PolicyError;

/// Quantile values searched by default, per stage.
pub const QUANTILE_GRID: [f64; 4] = [0.95, 0.98, 0.99, 0.995];

/// Zeroes entries below the `quantile` of the nonzero entries and
/// renormalizes. The largest entry always survives.
pub fn threshold_probs(probs: &[f64], quantile: f64) -> Vec<f64> {
    if quantile <= 0.0 {
        return probs.to_vec();
    }
    let mut support: Vec<f64> = probs.iter().copied().filter(|&p| p > 0.0).collect();
    if support.is_empty() {
        return probs.to_vec();
    }
    support.sort_by(|a, b| a.total_cmp(b));
    let pos = quantile.clamp(0.0, 1.0) * (support.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let cut = support[lo] + (support[hi] - support[lo]) * (pos - lo as f64);
    let top = support[support.len() - 1];
    let cut = cut.min(top);
    let kept: Vec<f64> = probs.iter().map(|&p| if p > 0.0 && p >= cut { p } else { 0.0 }).collect();
    let total: f64 = kept.iter().sum();
    kept.into_iter().map(|p| p / total).collect()
}

/// The chosen trajectory and the objective of every sampled one.
#[derive(Clone, Debug)]
pub struct BestOfK {
    pub plan: MigrationPlan,
    pub objective: Exact,
    pub objectives: Vec<Exact>,
}

/// Random stream of trajectory `i`; independent of how many are drawn, so
/// the trajectory sets for growing `k` are nested.
pub fn trajectory_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Samples `k` trajectories and returns the one with the lowest final
/// objective (first on ties). A quantile of 0 disables thresholding.
#[allow(clippy::too_many_arguments)]
pub fn best_of_k<T: Float>(
    mapping: &ClusterState,
    net: &PolicyNet<T>,
    mnl: usize,
    objective: &ObjectiveSpec,
    k: usize,
    quantiles: (f64, f64),
    seed: u64,
) -> Result<BestOfK, PolicyError> {
    if k == 0 {
        return Err(PolicyError::Contract("k must be at least 1".into()));
    }
    let q = (quantiles.0 > 0.0 || quantiles.1 > 0.0).then_some(quantiles);
    let runs: Vec<_> = (0..k)
        .into_par_iter()
        .map(|i| run_policy(net, mapping, mnl, objective, &mut trajectory_rng(seed, i), false, q))
        .collect::<Result<_, _>>()?;
    let objectives: Vec<Exact> = runs.iter().map(|r| r.final_objective).collect();
    let best = (0..k).min_by(|&a, &b| objectives[a].cmp(&objectives[b]).then(a.cmp(&b))).expect("k >= 1");
    Ok(BestOfK {
        plan: runs[best].plan.clone(),
        objective: objectives[best],
        objectives,
    })
}

/// The default search grid: every pair from [`QUANTILE_GRID`] plus `(0, 0)`.
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut pairs = vec![(0.0, 0.0)];
    for &a in &QUANTILE_GRID {
        for &b in &QUANTILE_GRID {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Grid search over `(vm_q, pm_q)` pairs on validation mappings, minimizing
/// the mean best-of-`k` objective. Ties go to the lexicographically lower
/// pair. Returns the pair and its mean objective.
#[allow(clippy::too_many_arguments)]
pub fn tune_quantiles<T: Float>(
    net: &PolicyNet<T>,
    validation: &[ClusterState],
    mnl: usize,
    objective: &ObjectiveSpec,
    grid: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<((f64, f64), f64), PolicyError> {
    if validation.is_empty() {
        return Err(PolicyError::Contract("empty validation set".into()));
    }
    if grid.is_empty() {
        return Err(PolicyError::Contract("empty quantile grid".into()));
    }
    let mut pairs = grid.to_vec();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    pairs.dedup();
    let mut best: Option<((f64, f64), f64)> = None;
    for pair in pairs {
        let mut total = 0.0;
        for (j, m) in validation.iter().enumerate() {
            let r = best_of_k(m, net, mnl, objective, k, pair, seed.wrapping_add(j as u64))?;
            total += r.objective.to_f64().unwrap_or(f64::NAN);
        }
        let mean = total / validation.len() as f64;
        if best.as_ref().is_none_or(|b| mean < b.1) {
            best = Some((pair, mean));
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_quantile_is_identity() {
        let p = [0.1, 0.0, 0.6, 0.3];
        assert_eq!(threshold_probs(&p, 0.0), p.to_vec());
    }

    #[test]
    fn high_quantile_keeps_argmax() {
        let p = [0.25, 0.0, 0.5, 0.25];
        let t = threshold_probs(&p, 0.995);
        assert_eq!(t, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn median_cut() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let t = threshold_probs(&p, 0.5);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn nested_streams_are_stable() {
        use rand::Rng;
        let a: u64 = trajectory_rng(3, 5).gen();
        let b: u64 = trajectory_rng(3, 5).gen();
        let c: u64 = trajectory_rng(3, 6).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
