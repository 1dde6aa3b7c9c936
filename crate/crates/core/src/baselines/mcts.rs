use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterState, MigrationPlan};
use crate::objectives::{FragmentScore, ObjectiveSpec};

use super::{ha_step, scored_moves, ScoredMove};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MctsConfig {
    /// Simulations per committed step.
    pub budget: usize,
    pub exploration_c: f64,
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            budget: 200,
            exploration_c: std::f64::consts::SQRT_2,
            seed: 0,
        }
    }
}

struct Child {
    mv: ScoredMove,
    node: Option<usize>,
    visits: u32,
    total: f64,
    best: f64,
}

struct Node {
    state: ClusterState,
    depth: usize,
    children: Vec<Child>,
}

/// Plain UCT over legal `(vm, pm)` pairs.
///
/// Every step runs `budget` simulations from the current state; leaves are
/// completed with the greedy heuristic and scored by the fragment reduction
/// relative to the initial mapping. The most visited root child is
/// committed. The search stops early once no child beats standing still.
pub fn mcts_reschedule(mapping: &ClusterState, mnl: usize, objective: &ObjectiveSpec, config: &MctsConfig) -> MigrationPlan {
    let score = FragmentScore::new(objective, mapping);
    let base = score.state(mapping);
    let norm = base.max(1) as f64;
    let value = |s: &ClusterState| (base - score.state(s)) as f64 / norm;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = mapping.clone();
    let mut actions = Vec::new();

    for t in 0..mnl {
        let horizon = mnl - t;
        let mut tree = vec![Node {
            children: children_of(&state, &score),
            state: state.clone(),
            depth: 0,
        }];
        if tree[0].children.is_empty() {
            break;
        }
        for _ in 0..config.budget.max(1) {
            let mut path: Vec<(usize, usize)> = Vec::new();
            let mut at = 0;
            let leaf_value = loop {
                let node = &tree[at];
                if node.depth == horizon || node.children.is_empty() {
                    break value(&node.state);
                }
                let unvisited: Vec<usize> = (0..node.children.len())
                    .filter(|&c| node.children[c].node.is_none())
                    .collect();
                if !unvisited.is_empty() {
                    let c = unvisited[rng.gen_range(0..unvisited.len())];
                    let mv = node.children[c].mv;
                    let mut next = node.state.clone();
                    next.move_vm(mv.vm, mv.pm, mv.slot).expect("children are legal");
                    let depth = node.depth + 1;
                    let children = if depth < horizon { children_of(&next, &score) } else { Vec::new() };
                    let mut rolled = next.clone();
                    for _ in depth..horizon {
                        let Some(g) = ha_step(&rolled, &score) else { break };
                        rolled.move_vm(g.vm, g.pm, g.slot).expect("greedy moves are legal");
                    }
                    tree.push(Node { state: next, depth, children });
                    let id = tree.len() - 1;
                    tree[at].children[c].node = Some(id);
                    path.push((at, c));
                    break value(&rolled);
                }
                let n: u32 = node.children.iter().map(|c| c.visits).sum();
                let ln = (n.max(1) as f64).ln();
                let mut pick = 0;
                let mut best = f64::NEG_INFINITY;
                for (i, ch) in node.children.iter().enumerate() {
                    let v = ch.visits.max(1) as f64;
                    let u = ch.total / v + config.exploration_c * (ln / v).sqrt();
                    if u > best {
                        best = u;
                        pick = i;
                    }
                }
                path.push((at, pick));
                at = node.children[pick].node.expect("visited child has a node");
            };
            for (n, c) in path {
                let ch = &mut tree[n].children[c];
                ch.visits += 1;
                ch.total += leaf_value;
                ch.best = ch.best.max(leaf_value);
            }
        }

        let root = &tree[0];
        let chosen = root
            .children
            .iter()
            .filter(|c| c.visits > 0)
            .max_by(|a, b| {
                a.visits
                    .cmp(&b.visits)
                    .then_with(|| (a.total / a.visits as f64).total_cmp(&(b.total / b.visits as f64)))
                    .then_with(|| b.mv.delta.cmp(&a.mv.delta))
            })
            .expect("root has at least one visited child");
        if chosen.best <= value(&state) {
            break;
        }
        let mv = chosen.mv;
        state.move_vm(mv.vm, mv.pm, mv.slot).expect("children are legal");
        actions.push(mv.action());
    }
    MigrationPlan::new(actions)
}

/// One child per legal `(vm, pm)` pair, using its best slot.
fn children_of(state: &ClusterState, score: &FragmentScore) -> Vec<Child> {
    let mut out: Vec<Child> = Vec::new();
    for mv in scored_moves(state, score) {
        if let Some(last) = out.last_mut() {
            if last.mv.vm == mv.vm && last.mv.pm == mv.pm {
                if mv.delta < last.mv.delta {
                    last.mv = mv;
                }
                continue;
            }
        }
        out.push(Child {
            mv,
            node: None,
            visits: 0,
            total: 0.0,
            best: f64::NEG_INFINITY,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{worked_example, RandomInstance};
    use crate::simulator::rollout_plan;
    use num_traits::Zero;

    #[test]
    fn solves_worked_example() {
        let s = worked_example();
        let spec = ObjectiveSpec::default();
        let plan = mcts_reschedule(&s, 1, &spec, &MctsConfig::default());
        let r = rollout_plan(&s, &plan, &spec).unwrap();
        assert!(r.final_objective.is_zero());
    }

    #[test]
    fn deterministic_and_legal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ObjectiveSpec::default();
        for _ in 0..10 {
            let s = RandomInstance::tiny(4, 8).sample(&mut rng);
            let cfg = MctsConfig { budget: 50, seed: 7, ..MctsConfig::default() };
            let a = mcts_reschedule(&s, 3, &spec, &cfg);
            assert_eq!(a, mcts_reschedule(&s, 3, &spec, &cfg));
            rollout_plan(&s, &a, &spec).unwrap();
        }
    }
}
