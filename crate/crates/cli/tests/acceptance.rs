//! End-to-end acceptance checks. Everything runs inside one test function so
//! that timing-sensitive criteria never share the machine with other tests.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmr_bench::{run_bench, Algorithm, BenchConfig, SolveContext};
use vmr_core::baselines::{alpha_vbpp, ha_reschedule, mcts_reschedule, random_policy, MctsConfig};
use vmr_core::datasets::{generate_cluster, GeneratorConfig};
use vmr_core::exact::{pop_solve, solve_exact, MipInstance, PopConfig};
use vmr_core::fixtures::{worked_example, RandomInstance};
use vmr_core::{
    fragment_rate, rollout_plan, total_fragments, ClusterState, Episode, Exact, MigrationAction, MigrationPlan, NumaSlot,
    ObjectiveSpec, Placement, PmId, Resource, VmId,
};
use vmr_policy::checkpoint::{from_bytes, to_bytes};
use vmr_policy::network::{Graph, TreeAttention};
use vmr_policy::risk::trajectory_rng;
use vmr_policy::{
    best_of_k, default_grid, run_policy, train, tune_quantiles, Masks, NetConfig, NormStats, Policy, PolicyNet, PpoConfig,
    TrainConfig, TrainData,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn final_fragments(s: &ClusterState, plan: &MigrationPlan) -> u64 {
    let r = rollout_plan(s, plan, &ObjectiveSpec::default()).expect("plan replays");
    total_fragments(&r.final_state, 16).unwrap()
}

/// Best total fragments over every set of at most `mnl` displaced VMs and
/// every placement of them.
fn exhaustive(state: &ClusterState, mnl: usize, x: u32) -> u64 {
    let caps = state.capacities();
    let vms = state.vms().to_vec();
    let initial = state.placements().to_vec();
    let mut best = total_fragments(state, x).unwrap();
    let options: Vec<Vec<Placement>> = vms
        .iter()
        .map(|v| {
            (0..state.num_pms())
                .flat_map(|i| NumaSlot::candidates(v.numa_count).iter().map(move |&slot| Placement { pm: PmId(i), slot }))
                .collect()
        })
        .collect();
    let m = vms.len();
    for mask in 1u32..(1 << m) {
        if mask.count_ones() as usize > mnl {
            continue;
        }
        let movers: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let mut idx = vec![0usize; movers.len()];
        'outer: loop {
            let mut placement = initial.clone();
            for (n, &k) in movers.iter().enumerate() {
                placement[k] = options[k][idx[n]];
            }
            if movers.iter().all(|&k| placement[k] != initial[k]) {
                if let Ok(s) = ClusterState::new(caps.clone(), vms.clone(), placement) {
                    best = best.min(total_fragments(&s, x).unwrap());
                }
            }
            for n in 0..movers.len() {
                idx[n] += 1;
                if idx[n] < options[movers[n]].len() {
                    continue 'outer;
                }
                idx[n] = 0;
            }
            break;
        }
    }
    best
}

fn oracle_instances() -> Vec<(ClusterState, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7001);
    (0..50)
        .map(|_| {
            let pms = rng.gen_range(2..=4);
            let vms = rng.gen_range(3..=6);
            let mnl = rng.gen_range(1..=3);
            (RandomInstance::tiny(pms, vms).with_affinity(0.15).sample(&mut rng), mnl)
        })
        .collect()
}

/// The learning-signal setting: 8 PMs, 24 VMs, MNL 4.
struct Toy {
    policy: Policy,
    validation: Vec<ClusterState>,
    test: Vec<ClusterState>,
    train_secs: f64,
}

const TOY_MNL: usize = 4;

fn toy_mapping(seed: u64) -> ClusterState {
    generate_cluster(&GeneratorConfig { seed, ..GeneratorConfig::toy() }).unwrap()
}

fn train_toy() -> Toy {
    let train_maps: Vec<_> = (0..400).map(toy_mapping).collect();
    let validation: Vec<_> = (500..520).map(toy_mapping).collect();
    let test: Vec<_> = (1000..1050).map(toy_mapping).collect();
    let cfg = TrainConfig {
        mnl: TOY_MNL,
        net: NetConfig { d_model: 32, ff_width: 64, critic_width: 64, ..NetConfig::default() },
        ppo: PpoConfig { lr: 1e-3, minibatch: 32, ..PpoConfig::default() },
        updates: 150,
        episodes_per_update: 32,
        eval_every: 10,
        divergence_patience: 0,
        time_limit: Some(Duration::from_secs(3600)),
        seed: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train::<f32>(&cfg, &TrainData::single(train_maps, validation.clone())).expect("training runs");
    Toy {
        policy: report.best,
        validation,
        test,
        train_secs: start.elapsed().as_secs_f64(),
    }
}

fn worked_example_exactness(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let s = worked_example();
    let spec = ObjectiveSpec::default();
    let initial: Exact = fragment_rate(&s, 16).unwrap();
    check(initial == Exact::new(1, 2), || format!("initial FR {initial}"))?;
    let plans = [
        ("ha", ha_reschedule(&s, 1, &spec)),
        ("exact", solve_exact(&MipInstance::new(s.clone(), 1, 16).unwrap(), Duration::from_secs(1)).plan),
        ("mcts", mcts_reschedule(&s, 1, &spec, &MctsConfig { budget: 100, ..MctsConfig::default() })),
        ("policy", best_of_k(&s, &toy.policy, 1, &spec, 8, (0.0, 0.0), 0).unwrap().plan),
    ];
    for (name, plan) in plans {
        let r = rollout_plan(&s, &plan, &spec).map_err(|e| format!("{name}: {e}"))?;
        let fr: Exact = fragment_rate(&r.final_state, 16).unwrap();
        check(fr == Exact::from_integer(0), || format!("{name}: final FR {fr}"))?;
        check(r.rewards == vec![Exact::new(16, 64)], || format!("{name}: rewards {:?}", r.rewards))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 1.0, || format!("took {secs:.3}s"))?;
    Ok(format!("FR 1/2 -> 0, reward 16/64 under ha, exact, mcts(100), policy best-of-8 in {secs:.3}s"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    for (i, (s, mnl)) in oracle_instances().into_iter().enumerate() {
        let sol = solve_exact(&MipInstance::new(s.clone(), mnl, 16).unwrap(), Duration::from_secs(30));
        let want = exhaustive(&s, mnl, 16);
        check(sol.objective == want, || format!("instance {i}: branch and bound {} vs enumeration {want}", sol.objective))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("50/50 instances match enumeration in {secs:.2}s"))
}

fn telescoping() -> Outcome {
    let start = Instant::now();
    let spec = ObjectiveSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7003);
    for i in 0..100 {
        let s = RandomInstance::tiny(rng.gen_range(2..=6), rng.gen_range(3..=14)).with_affinity(0.1).sample(&mut rng);
        let mnl = rng.gen_range(1..=8);
        let mut ep = Episode::reset(&s, mnl, &spec).unwrap();
        let mut sum = Exact::from_integer(0);
        while !ep.is_done() {
            let actions = ep.legal_actions();
            let Some(a) = actions.choose(&mut rng) else { break };
            sum += ep.step(a).unwrap();
        }
        let drop = total_fragments(&s, 16).unwrap() as i64 - total_fragments(ep.state(), 16).unwrap() as i64;
        check(sum * Exact::from_integer(64) == Exact::from_integer(drop), || {
            format!("episode {i}: rewards {sum} x 64 vs fragment drop {drop}")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100/100 episodes exact in {secs:.2}s"))
}

fn mask_soundness() -> Outcome {
    let start = Instant::now();
    let spec = ObjectiveSpec::default();
    let named = ["cpu", "memory", "numa-shape", "anti-affinity", "no-op"];
    let mut rng = ChaCha8Rng::seed_from_u64(7004);
    let mut checked = 0usize;
    for i in 0..20 {
        let s = RandomInstance::tiny(rng.gen_range(2..=6), rng.gen_range(3..=12)).with_affinity(0.2).sample(&mut rng);
        let mut ep = Episode::reset(&s, 3, &spec).unwrap();
        while !ep.is_done() {
            let vm_mask = ep.vm_mask();
            let policy_masks = Masks::of(ep.state());
            check(policy_masks.vm == vm_mask, || format!("instance {i}: policy VM mask differs"))?;
            for k in 0..ep.state().num_vms() {
                let pm_mask = ep.legal_pms(VmId(k));
                check(vm_mask[k] == pm_mask.iter().any(|&b| b), || format!("instance {i}: vm {k} mask inconsistent"))?;
                check(policy_masks.pm[k] == pm_mask, || format!("instance {i}: policy PM mask differs for vm {k}"))?;
                for (p, &legal) in pm_mask.iter().enumerate() {
                    let mut any = false;
                    for slot in [NumaSlot::Numa0, NumaSlot::Numa1, NumaSlot::Both] {
                        let a = MigrationAction::pinned(VmId(k), PmId(p), slot);
                        let mut probe = ep.clone();
                        match probe.step(&a) {
                            Ok(_) => any = true,
                            Err(e) => {
                                let v = ep.check_action(&a).err().ok_or_else(|| format!("instance {i}: {e} but check passes"))?;
                                check(named.contains(&v.constraint()), || format!("instance {i}: unnamed violation {v}"))?;
                            }
                        }
                        checked += 1;
                    }
                    let unpinned = ep.clone().step(&MigrationAction::new(VmId(k), PmId(p))).is_ok();
                    check(any == legal && unpinned == legal, || format!("instance {i}: mask {legal} for vm {k} pm {p}"))?;
                }
            }
            let actions = ep.legal_actions();
            match actions.choose(&mut rng) {
                Some(a) => {
                    ep.step(a).unwrap();
                }
                None => break,
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{checked} pinned actions over 20 instances in {secs:.2}s"))
}

fn eval_targets(net: &PolicyNet<f64>, s: &ClusterState, m: &Masks, vm: usize, pm: usize) -> [f64; 2] {
    let f = net.features(s);
    let mut g = Graph::new(net, false);
    let e = net.evaluate(&mut g, &f, &m.vm, &m.pm[vm], vm, pm).unwrap();
    [g.tape.scalar(e.log_prob), g.tape.scalar(e.value)]
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    let config = NetConfig { d_model: 8, heads: 2, blocks: 2, ff_width: 12, critic_width: 6, fragment_block: 16 };
    let mut rng = ChaCha8Rng::seed_from_u64(7005);
    let mut worst = 0.0f64;
    let mut coords = 0usize;
    for draw in 0..10u64 {
        let s = loop {
            let s = RandomInstance::tiny(4, 9).with_affinity(0.1).sample(&mut rng);
            if Masks::of(&s).vm.iter().any(|&b| b) {
                break s;
            }
        };
        let mut net = PolicyNet::<f64>::new(config.clone(), NormStats::from_capacity(32, 64, 16), draw);
        net.randomize(draw + 50, 1.0);
        let m = Masks::of(&s);
        let legal: Vec<usize> = (0..m.vm.len()).filter(|&k| m.vm[k]).collect();
        let vm = *legal.choose(&mut rng).unwrap();
        let dests: Vec<usize> = (0..m.pm[vm].len()).filter(|&i| m.pm[vm][i]).collect();
        let pm = *dests.choose(&mut rng).unwrap();
        let f = net.features(&s);
        let analytic: Vec<Vec<(usize, Array2<f64>)>> = (0..2)
            .map(|w| {
                let mut g = Graph::new(&net, true);
                let e = net.evaluate(&mut g, &f, &m.vm, &m.pm[vm], vm, pm).unwrap();
                g.tape.backward([e.log_prob, e.value][w])
            })
            .collect();
        for id in 0..net.params.len() {
            let (rows, cols) = net.params.values[id].dim();
            let picks: Vec<(usize, usize)> = (0..5.min(rows * cols)).map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols))).collect();
            let mut num = [Vec::new(), Vec::new()];
            let mut ana = [Vec::new(), Vec::new()];
            for &(r, c) in &picks {
                let base = net.params.values[id][[r, c]];
                net.params.values[id][[r, c]] = base + h;
                let up = eval_targets(&net, &s, &m, vm, pm);
                net.params.values[id][[r, c]] = base - h;
                let down = eval_targets(&net, &s, &m, vm, pm);
                net.params.values[id][[r, c]] = base;
                for w in 0..2 {
                    num[w].push((up[w] - down[w]) / (2.0 * h));
                    ana[w].push(analytic[w].iter().find(|(p, _)| *p == id).map_or(0.0, |(_, g)| g[[r, c]]));
                }
                coords += 1;
            }
            for w in 0..2 {
                let diff = num[w].iter().zip(&ana[w]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let rel = diff / (norm(&num[w]) + norm(&ana[w])).max(1e-7);
                worst = worst.max(rel);
                check(rel < 1e-3, || format!("draw {draw}, {}: relative error {rel:.2e}", net.params.names[id]))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("10 draws, {coords} coordinates, worst relative error {worst:.2e} in {secs:.1}s"))
}

fn sparse_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7006);
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let s = RandomInstance::tiny(rng.gen_range(3..=8), rng.gen_range(6..=20)).with_affinity(0.05).sample(&mut rng);
        let mut net = PolicyNet::<f64>::new(NetConfig::default(), NormStats::from_capacity(32, 64, 16), i);
        net.randomize(i, 1.0);
        let mut mask = Masks::of(&s).vm;
        if !mask.iter().any(|&b| b) {
            mask[0] = true;
        }
        let f = net.features(&s);
        let mut g = Graph::new(&net, false);
        let a = net.vm_actor_with(&mut g, &f, &mask, TreeAttention::Sparse).unwrap();
        let b = net.vm_actor_with(&mut g, &f, &mask, TreeAttention::DenseMasked).unwrap();
        for (x, y) in [(a.vm_emb, b.vm_emb), (a.pm_emb, b.pm_emb), (a.probs, b.probs), (a.cross, b.cross)] {
            let d = (g.tape.value(x) - g.tape.value(y)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(d);
        }
    }
    check(worst < 1e-9, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("10 instances, max abs diff {worst:.2e}"))
}

fn learning_signal(toy: &Toy) -> Outcome {
    let spec = ObjectiveSpec::default();
    let frags = |s: &ClusterState| s.resource_fragments(Resource::Cpu, 16);
    let (mut init, mut policy, mut exact) = (0u64, 0u64, 0u64);
    let mut wins = 0;
    for (i, s) in toy.test.iter().enumerate() {
        init += frags(s);
        let p = run_policy(&toy.policy, s, TOY_MNL, &spec, &mut ChaCha8Rng::seed_from_u64(0), true, None).unwrap();
        let pf = final_fragments(s, &p.plan);
        policy += pf;
        let rf = final_fragments(s, &random_policy(s, TOY_MNL, i as u64));
        if pf <= rf {
            wins += 1;
        }
        let e = solve_exact(&MipInstance::new(s.clone(), TOY_MNL, 16).unwrap(), Duration::from_secs(60));
        exact += e.objective;
    }
    let ratio = (init as f64 - policy as f64) / (init as f64 - exact as f64);
    let msg = format!(
        "trained {:.0}s; beats-or-ties random on {wins}/50; fragment reduction {} vs exact {} ({:.1}%)",
        toy.train_secs,
        init - policy.min(init),
        init - exact,
        100.0 * ratio
    );
    check(toy.train_secs < 3600.0 && wins >= 45 && ratio >= 0.6, || msg.clone())?;
    Ok(msg)
}

fn risk_seeking(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let spec = ObjectiveSpec::default();
    let mean = |k: usize, q: (f64, f64)| -> f64 {
        let mut total = 0.0;
        for (i, s) in toy.test.iter().enumerate() {
            let b = best_of_k(s, &toy.policy, TOY_MNL, &spec, k, q, 9000 + i as u64).unwrap();
            total += *b.objective.numer() as f64 / *b.objective.denom() as f64;
        }
        total / toy.test.len() as f64
    };
    let one = mean(1, (0.0, 0.0));
    let sixteen = mean(16, (0.0, 0.0));
    let (pair, _) = tune_quantiles(&toy.policy, &toy.validation, TOY_MNL, &spec, &default_grid(), 16, 123).unwrap();
    let tuned = mean(16, pair);
    let secs = start.elapsed().as_secs_f64();
    let msg = format!("best-of-1 {one:.5}, best-of-16 {sixteen:.5}, tuned {pair:?} {tuned:.5} in {secs:.1}s");
    check(sixteen <= one && tuned <= sixteen && secs < 600.0, || msg.clone())?;
    // Per-mapping nesting: the best of 16 includes the single trajectory.
    for s in toy.test.iter().take(5) {
        let b = best_of_k(s, &toy.policy, TOY_MNL, &spec, 16, (0.0, 0.0), 1).unwrap();
        let r = run_policy(&toy.policy, s, TOY_MNL, &spec, &mut trajectory_rng(1, 0), false, None).unwrap();
        check(b.objective <= r.final_objective, || "best-of-16 lost to its own first trajectory".into())?;
    }
    Ok(msg)
}

fn baseline_ordering() -> Outcome {
    let spec = ObjectiveSpec::default();
    let mut compared = 0;
    for (i, (s, mnl)) in oracle_instances().into_iter().enumerate() {
        let inst = MipInstance::new(s.clone(), mnl, 16).unwrap();
        let exact = solve_exact(&inst, Duration::from_secs(30)).objective;
        let pop = pop_solve(&inst, &PopConfig { partitions: 2, seed: i as u64, ..PopConfig::default() });
        let plans = [
            ("pop", pop.plan),
            ("mcts", mcts_reschedule(&s, mnl, &spec, &MctsConfig { budget: 10_000, seed: i as u64, ..MctsConfig::default() })),
            ("ha", ha_reschedule(&s, mnl, &spec)),
            ("vbpp", alpha_vbpp(&s, mnl, 2, &spec)),
            ("random", random_policy(&s, mnl, i as u64)),
        ];
        for (name, plan) in plans {
            if plan.distinct_vms() != plan.len() {
                continue;
            }
            let f = final_fragments(&s, &plan);
            check(exact <= f, || format!("instance {i}: {name} reached {f} below exact {exact}"))?;
            compared += 1;
        }
    }
    Ok(format!("exact no worse on {compared} comparisons over 50 instances"))
}

fn ha_monotone() -> Outcome {
    let spec = ObjectiveSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7010);
    let mut halted_early = 0;
    for run in 0..100 {
        let s = RandomInstance::tiny(rng.gen_range(3..=7), rng.gen_range(6..=18)).with_affinity(0.1).sample(&mut rng);
        let mnl = rng.gen_range(1..=10);
        let plan = ha_reschedule(&s, mnl, &spec);
        let mut cur = s.clone();
        let mut prev: Exact = fragment_rate(&cur, 16).unwrap();
        for a in &plan.actions {
            cur = cur.apply_migration(a, a.dest_numa.expect("ha pins slots")).unwrap();
            let fr: Exact = fragment_rate(&cur, 16).unwrap();
            check(fr <= prev, || format!("run {run}: FR rose from {prev} to {fr}"))?;
            prev = fr;
        }
        if plan.len() < mnl {
            halted_early += 1;
            let ep = Episode::reset(&cur, 1, &spec).unwrap();
            for a in ep.legal_actions() {
                for slot in [NumaSlot::Numa0, NumaSlot::Numa1, NumaSlot::Both] {
                    if let Ok(next) = cur.apply_migration(&a, slot) {
                        let fr: Exact = fragment_rate(&next, 16).unwrap();
                        check(fr >= prev, || format!("run {run}: HA stopped although a move reaches FR {fr} < {prev}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("100 runs monotone; {halted_early} halted with no improving move left"))
}

fn latency() -> Outcome {
    let state = generate_cluster(&GeneratorConfig { seed: 11, ..GeneratorConfig::medium() }).unwrap();
    let norm = NormStats::from_capacity(44, 128, 16);
    let net = PolicyNet::<f32>::new(NetConfig::default(), norm, 0);
    let mut ctx = SolveContext::new(ObjectiveSpec::default(), 0, Duration::from_secs(5));
    ctx.policy = Some(Arc::new(net));
    let cfg = BenchConfig {
        algorithms: vec![Algorithm::Policy { k: 1, quantiles: (0.0, 0.0) }],
        mnls: vec![50],
        budget: Duration::from_secs(5),
        serial: true,
        strict: false,
    };
    let report = run_bench(&[("medium".to_string(), state.clone())], &cfg, &ctx).map_err(|e| e.to_string())?;
    let row = &report.rows[0];
    let msg = format!(
        "{} PMs / {} VMs, {} migrations in {:.2}s (budget 5s)",
        state.num_pms(),
        state.num_vms(),
        row.migrations,
        row.wall_secs
    );
    check(row.budget_met && row.wall_secs > 0.0, || msg.clone())?;
    Ok(msg)
}

fn checkpoint_contract() -> Outcome {
    let mut net = PolicyNet::<f32>::new(NetConfig::default(), NormStats::from_capacity(44, 128, 16), 3);
    net.randomize(3, 1.0);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("policy.vmrp");
    vmr_policy::save_checkpoint(&net, &path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back: PolicyNet<f32> = vmr_policy::load_checkpoint(&path).map_err(|e| e.to_string())?;
    let same = back
        .params
        .values
        .iter()
        .zip(&net.params.values)
        .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    check(same && back.norm == net.norm, || "round trip changed parameters".into())?;
    check(to_bytes(&back).unwrap() == bytes, || "re-serialized bytes differ".into())?;
    check(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err(), || "truncated file accepted".into())?;
    check(bytes.len() < 2 * 1024 * 1024, || format!("{} bytes", bytes.len()))?;
    Ok(format!("{} parameters, {} bytes, bit-exact", net.params.count(), bytes.len()))
}

#[test]
fn acceptance() {
    let toy = train_toy();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 worked example", Box::new(|| worked_example_exactness(&toy))),
        ("2 oracle equivalence", Box::new(oracle_equivalence)),
        ("3 telescoping", Box::new(telescoping)),
        ("4 mask soundness", Box::new(mask_soundness)),
        ("5 gradient check", Box::new(gradient_check)),
        ("6 sparse attention", Box::new(sparse_attention)),
        ("7 learning signal", Box::new(|| learning_signal(&toy))),
        ("8 risk seeking", Box::new(|| risk_seeking(&toy))),
        ("9 baseline ordering", Box::new(baseline_ordering)),
        ("10 ha monotone", Box::new(ha_monotone)),
        ("11 latency", Box::new(latency)),
        ("12 checkpoint", Box::new(checkpoint_contract)),
    ];
    let mut out = std::io::stdout();
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let line = match run() {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed.push(*name);
                format!("FAIL  {name}: {detail}")
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
