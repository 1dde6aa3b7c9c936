use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterState, MigrationPlan};
use crate::objectives::ObjectiveSpec;
use crate::simulator::Episode;

/// Uniformly random legal `(vm, pm)` pair at every step; the NUMA slot is
/// resolved the same way the environment does. Ends early when nothing is
/// legal.
pub fn random_policy(mapping: &ClusterState, mnl: usize, seed: u64) -> MigrationPlan {
    let objective = ObjectiveSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ep = match Episode::reset(mapping, mnl, &objective) {
        Ok(ep) => ep,
        Err(_) => return MigrationPlan::default(),
    };
    while !ep.is_done() {
        let actions = ep.legal_actions();
        let Some(a) = actions.choose(&mut rng) else { break };
        ep.step(a).expect("legal actions are accepted");
    }
    ep.plan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{NumaSlot, PmId, VirtualMachine, VmId, VmType, Placement};
    use crate::fixtures::RandomInstance;
    use crate::simulator::rollout_plan;

    #[test]
    fn seed_determinism_and_legality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = RandomInstance::tiny(4, 9).with_affinity(0.2).sample(&mut rng);
            let a = random_policy(&s, 6, 99);
            assert_eq!(a, random_policy(&s, 6, 99));
            rollout_plan(&s, &a, &ObjectiveSpec::default()).unwrap();
        }
    }

    #[test]
    fn stops_when_nothing_is_legal() {
        let caps = vec![[(8, 16), (0, 0)]];
        let vms = vec![VirtualMachine::of_type(VmId(0), VmType::X2large)];
        let s = ClusterState::new(caps, vms, vec![Placement { pm: PmId(0), slot: NumaSlot::Numa0 }]).unwrap();
        assert!(random_policy(&s, 3, 0).is_empty());
    }
}
