use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmr_core::baselines::{alpha_vbpp, ha_reschedule, mcts_reschedule, random_policy, MctsConfig};
use vmr_core::exact::{solve_exact, MipInstance};
use vmr_core::fixtures::RandomInstance;
use vmr_core::{rollout_plan, total_fragments, ClusterState, MigrationPlan, ObjectiveSpec};

fn final_fragments(s: &ClusterState, plan: &MigrationPlan) -> u64 {
    let r = rollout_plan(s, plan, &ObjectiveSpec::default()).expect("baseline plans are legal");
    total_fragments(&r.final_state, 16).unwrap()
}

#[test]
fn mcts_reaches_the_optimum_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = ObjectiveSpec::default();
    for i in 0..15 {
        let pms = rng.gen_range(2..=3);
        let vms = rng.gen_range(3..=5);
        let mnl = rng.gen_range(1..=2);
        let s = RandomInstance::tiny(pms, vms).sample(&mut rng);
        let exact = solve_exact(&MipInstance::new(s.clone(), mnl, 16).unwrap(), Duration::from_secs(10));
        let cfg = MctsConfig { budget: 10_000, seed: i, ..MctsConfig::default() };
        let plan = mcts_reschedule(&s, mnl, &spec, &cfg);
        assert_eq!(final_fragments(&s, &plan), exact.objective, "instance {i}");
    }
}

#[test]
fn mcts_beats_random_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let spec = ObjectiveSpec::default();
    for _ in 0..5 {
        let s = RandomInstance::tiny(5, 12).sample(&mut rng);
        let mcts = final_fragments(&s, &mcts_reschedule(&s, 3, &spec, &MctsConfig { budget: 300, ..MctsConfig::default() }));
        let random: f64 = (0..20).map(|seed| final_fragments(&s, &random_policy(&s, 3, seed)) as f64).sum::<f64>() / 20.0;
        assert!(mcts as f64 <= random);
    }
}

#[test]
fn exact_dominates_every_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let spec = ObjectiveSpec::default();
    for i in 0..30 {
        let s = RandomInstance::tiny(4, 6).with_affinity(0.1).sample(&mut rng);
        let mnl = 3;
        let exact = solve_exact(&MipInstance::new(s.clone(), mnl, 16).unwrap(), Duration::from_secs(10)).objective;
        for plan in [
            ha_reschedule(&s, mnl, &spec),
            alpha_vbpp(&s, mnl, 1, &spec),
            alpha_vbpp(&s, mnl, 3, &spec),
            random_policy(&s, mnl, i),
            mcts_reschedule(&s, mnl, &spec, &MctsConfig { budget: 200, seed: i, ..MctsConfig::default() }),
        ] {
            if plan.distinct_vms() == plan.len() {
                assert!(exact <= final_fragments(&s, &plan));
            }
        }
    }
}
