//! Running a policy through a full episode.

use rand::Rng;
use vmr_core::{ClusterState, Episode, Exact, MigrationPlan, ObjectiveSpec};

use crate::float::Float;
use crate::network::{Masks, PolicyNet};
use crate::PolicyError;

#[derive(Clone, Debug)]
pub struct PolicyRollout {
    pub plan: MigrationPlan,
    pub final_objective: Exact,
    pub rewards: Vec<Exact>,
    /// Sum of the per-step log-probabilities of the chosen actions.
    pub log_prob: f64,
}

/// Plays one episode. Ends early when no legal action remains.
pub fn run_policy<T: Float, R: Rng>(
    net: &PolicyNet<T>,
    mapping: &ClusterState,
    mnl: usize,
    objective: &ObjectiveSpec,
    rng: &mut R,
    greedy: bool,
    quantiles: Option<(f64, f64)>,
) -> Result<PolicyRollout, PolicyError> {
    let mut ep = Episode::reset(mapping, mnl, objective)?;
    let mut rewards = Vec::new();
    let mut log_prob = 0.0;
    let mut masks = Masks::of(ep.state());
    while !ep.is_done() {
        let d = match net.decide(ep.state(), &masks, rng, greedy, quantiles) {
            Ok(d) => d,
            Err(PolicyError::NoAction) => {
                ep.finish();
                break;
            }
            Err(e) => return Err(e),
        };
        let from = ep.state().placement(d.action.vm).pm;
        rewards.push(ep.step(&d.action)?);
        masks.after_move(ep.state(), d.action.vm, from);
        log_prob += d.log_prob;
    }
    Ok(PolicyRollout {
        plan: ep.plan(),
        final_objective: objective.value(ep.state()),
        rewards,
        log_prob,
    })
}
