//! Registered rescheduling algorithms behind one call signature.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmr_core::baselines::{alpha_vbpp, ha_reschedule, mcts_reschedule, random_policy, MctsConfig};
use vmr_core::exact::{pop_solve, solve_exact, MipInstance, MnlSplit, Ordering, PopConfig};
use vmr_core::{ClusterState, MigrationPlan, ObjectiveKind, ObjectiveSpec};
use vmr_policy::{best_of_k, run_policy, Policy};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    Ha,
    Random,
    Vbpp { alpha: usize },
    Mcts { budget: usize },
    Pop { partitions: usize },
    Exact,
    /// Greedy when `k == 1`, otherwise best of `k` sampled trajectories.
    Policy { k: usize, quantiles: (f64, f64) },
}

/// Per-algorithm parameters given separately from the algorithm name.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlgoParams {
    pub alpha: Option<usize>,
    pub budget: Option<usize>,
    pub partitions: Option<usize>,
}

impl Algorithm {
    pub fn needs_policy(&self) -> bool {
        matches!(self, Algorithm::Policy { .. })
    }

    /// Replaces the matching parameter of `self` with any value set in `params`.
    pub fn with_params(self, params: &AlgoParams) -> Result<Self, BenchError> {
        let positive = |v: Option<usize>, current: usize, flag: &str| match v {
            Some(0) => Err(BenchError::Config(format!("--{flag} must be at least 1"))),
            Some(v) => Ok(v),
            None => Ok(current),
        };
        Ok(match self {
            Algorithm::Vbpp { alpha } => Algorithm::Vbpp { alpha: positive(params.alpha, alpha, "alpha")? },
            Algorithm::Mcts { budget } => Algorithm::Mcts { budget: positive(params.budget, budget, "budget")? },
            Algorithm::Pop { partitions } => Algorithm::Pop { partitions: positive(params.partitions, partitions, "partitions")? },
            other => other,
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Ha => write!(f, "ha"),
            Algorithm::Random => write!(f, "random"),
            Algorithm::Vbpp { alpha } => write!(f, "vbpp:{alpha}"),
            Algorithm::Mcts { budget } => write!(f, "mcts:{budget}"),
            Algorithm::Pop { partitions } => write!(f, "pop:{partitions}"),
            Algorithm::Exact => write!(f, "exact"),
            Algorithm::Policy { k, quantiles: (0.0, 0.0) } => write!(f, "policy:{k}"),
            Algorithm::Policy { k, quantiles: (a, b) } => write!(f, "policy:{k}:{a}:{b}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = BenchError;

    /// `ha`, `random`, `vbpp[:alpha]`, `mcts[:budget]`, `pop[:partitions]`,
    /// `exact`, `policy[:k[:vm_q:pm_q]]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || BenchError::Config(format!("unknown algorithm `{s}`"));
        let num = |i: usize, default: usize| -> Result<usize, BenchError> {
            parts.get(i).map_or(Ok(default), |p| p.parse().map_err(|_| bad()))
        };
        let real = |i: usize| -> Result<f64, BenchError> { parts.get(i).map_or(Ok(0.0), |p| p.parse().map_err(|_| bad())) };
        let max_parts = match parts[0] {
            "policy" => 4,
            "ha" | "random" | "exact" => 1,
            _ => 2,
        };
        if parts.len() > max_parts {
            return Err(bad());
        }
        Ok(match parts[0] {
            "ha" => Algorithm::Ha,
            "random" => Algorithm::Random,
            "vbpp" => Algorithm::Vbpp { alpha: num(1, 3)? },
            "mcts" => Algorithm::Mcts { budget: num(1, 1000)? },
            "pop" => Algorithm::Pop { partitions: num(1, 2)? },
            "exact" => Algorithm::Exact,
            "policy" => {
                if parts.len() == 3 {
                    return Err(bad());
                }
                let k = num(1, 1)?;
                if k == 0 {
                    return Err(BenchError::Config("policy needs k >= 1".into()));
                }
                Algorithm::Policy { k, quantiles: (real(2)?, real(3)?) }
            }
            _ => return Err(bad()),
        })
    }
}

/// Everything an algorithm may need besides the mapping.
#[derive(Clone, Debug)]
pub struct SolveContext {
    pub objective: ObjectiveSpec,
    pub seed: u64,
    /// Latency budget; also the exact solvers' time limit unless
    /// `time_limit` is set.
    pub budget: Duration,
    pub time_limit: Option<Duration>,
    /// How POP shares the migration limit between subproblems.
    pub split: MnlSplit,
    pub policy: Option<Arc<Policy>>,
}

impl SolveContext {
    pub fn new(objective: ObjectiveSpec, seed: u64, budget: Duration) -> Self {
        SolveContext { objective, seed, budget, time_limit: None, split: MnlSplit::Even, policy: None }
    }

    fn solver_limit(&self) -> Duration {
        self.time_limit.unwrap_or(self.budget)
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub plan: MigrationPlan,
    /// The solver found a better assignment but could not order it into
    /// legal steps.
    pub infeasible: bool,
    /// False when a time-limited solver stopped before proving optimality.
    pub proven: bool,
}

impl Solution {
    fn plain(plan: MigrationPlan) -> Self {
        Solution { plan, infeasible: false, proven: false }
    }
}

fn mip(mapping: &ClusterState, mnl: usize, ctx: &SolveContext) -> Result<MipInstance, BenchError> {
    if !matches!(ctx.objective.kind, ObjectiveKind::XCoreFr { .. }) {
        return Err(BenchError::Config("exact and pop optimize X-core fragments only".into()));
    }
    MipInstance::new(mapping.clone(), mnl, ctx.objective.cpu_block()).map_err(|e| BenchError::Validation(e.to_string()))
}

/// Runs `algorithm` on `mapping`. The plan is not validated here.
pub fn solve(algorithm: &Algorithm, mapping: &ClusterState, mnl: usize, ctx: &SolveContext) -> Result<Solution, BenchError> {
    let objective = &ctx.objective;
    Ok(match *algorithm {
        Algorithm::Ha => Solution::plain(ha_reschedule(mapping, mnl, objective)),
        Algorithm::Random => Solution::plain(random_policy(mapping, mnl, ctx.seed)),
        Algorithm::Vbpp { alpha } => Solution::plain(alpha_vbpp(mapping, mnl, alpha, objective)),
        Algorithm::Mcts { budget } => {
            let cfg = MctsConfig { budget, seed: ctx.seed, ..MctsConfig::default() };
            Solution::plain(mcts_reschedule(mapping, mnl, objective, &cfg))
        }
        Algorithm::Pop { partitions } => {
            let cfg = PopConfig { partitions, seed: ctx.seed, time_limit: ctx.solver_limit(), split: ctx.split };
            let s = pop_solve(&mip(mapping, mnl, ctx)?, &cfg);
            Solution {
                plan: s.plan,
                infeasible: s.ordering == Ordering::Infeasible,
                proven: s.all_optimal,
            }
        }
        Algorithm::Exact => {
            let s = solve_exact(&mip(mapping, mnl, ctx)?, ctx.solver_limit());
            Solution {
                plan: s.plan,
                infeasible: s.ordering == Ordering::Infeasible,
                proven: s.optimal,
            }
        }
        Algorithm::Policy { k, quantiles } => {
            let net = ctx
                .policy
                .as_deref()
                .ok_or_else(|| BenchError::Config("the policy algorithm needs --checkpoint".into()))?;
            if k == 1 && quantiles == (0.0, 0.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
                Solution::plain(run_policy(net, mapping, mnl, objective, &mut rng, true, None)?.plan)
            } else {
                Solution::plain(best_of_k(mapping, net, mnl, objective, k, quantiles, ctx.seed)?.plan)
            }
        }
    })
}
