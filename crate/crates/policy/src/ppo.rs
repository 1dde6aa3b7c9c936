//! Proximal policy optimization over simulator episodes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use num_traits::{ToPrimitive, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vmr_core::{ClusterState, Episode, Exact, ObjectiveSpec};

use crate::agent::run_policy;
use crate::checkpoint::{from_bytes, save_checkpoint, to_bytes};
use crate::features::{FeatureTensor, NormStats};
use crate::float::Float;
use crate::network::{Graph, Masks, NetConfig, PolicyNet};
use crate::PolicyError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

/// Generalized advantage estimates and returns. `dones[t]` marks the last
/// step of an episode; the value after the final step is taken as 0.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PolicyError::Contract(format!(
            "length mismatch: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] || t + 1 == n { (0.0, 0.0) } else { (values[t + 1], next_adv) };
        let delta = rewards[t] + gamma * next_value - values[t];
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`, the per-sample PPO objective.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// One recorded decision.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    pub features: FeatureTensor<T>,
    pub vm_mask: Vec<bool>,
    pub pm_mask: Vec<bool>,
    pub vm: usize,
    pub pm: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer<T> {
    pub steps: Vec<Transition<T>>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<T: Float> RolloutBuffer<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fills advantages (normalized to mean 0, std 1) and returns.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<(), PolicyError> {
        let r: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let v: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let d: Vec<bool> = self.steps.iter().map(|s| s.done).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, gamma, lambda)?;
        self.advantages = normalize(&adv);
        self.returns = ret;
        Ok(())
    }
}

fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    x.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Float> Adam<T> {
    pub fn new(net: &PolicyNet<T>) -> Self {
        Adam {
            m: net.params.zeros_like(),
            v: net.params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            });
        }
    }
}

/// Mean statistics of one [`ppo_update`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

struct SampleGrad<T> {
    grads: Vec<(usize, Array2<T>)>,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    ratio: f64,
    log_ratio: f64,
}

fn sample_grad<T: Float>(
    net: &PolicyNet<T>,
    tr: &Transition<T>,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
    weight: f64,
) -> Result<SampleGrad<T>, PolicyError> {
    let mut g = Graph::new(net, true);
    let e = net.evaluate(&mut g, &tr.features, &tr.vm_mask, &tr.pm_mask, tr.vm, tr.pm)?;
    let t = &mut g.tape;
    let old = t.constant(Array2::from_elem((1, 1), T::of(tr.log_prob)));
    let log_ratio = t.sub(e.log_prob, old);
    let ratio = t.exp(log_ratio);
    let a = T::of(advantage);
    let s1 = t.scale(ratio, a);
    let clipped = t.clamp(ratio, T::of(1.0 - cfg.clip), T::of(1.0 + cfg.clip));
    let s2 = t.scale(clipped, a);
    let surrogate = t.min(s1, s2);
    let policy_loss = t.scale(surrogate, -T::one());
    let target = t.constant(Array2::from_elem((1, 1), T::of(ret)));
    let err = t.sub(e.value, target);
    let sq = t.mul(err, err);
    let value_loss = t.scale(sq, T::of(0.5));
    let v_term = t.scale(value_loss, T::of(cfg.value_coef));
    let h_term = t.scale(e.entropy, T::of(cfg.entropy_coef));
    let loss = t.add(policy_loss, v_term);
    let loss = t.sub(loss, h_term);
    let loss = t.scale(loss, T::of(weight));
    let total = t.scalar(loss).f64();
    if !total.is_finite() {
        return Err(PolicyError::Diverged(format!(
            "non-finite loss {total}: policy {}, value {}, entropy {}, log-ratio {}, advantage {advantage}, return {ret}, vm {}, pm {}",
            t.scalar(policy_loss).f64(),
            t.scalar(value_loss).f64(),
            t.scalar(e.entropy).f64(),
            t.scalar(log_ratio).f64(),
            tr.vm,
            tr.pm
        )));
    }
    Ok(SampleGrad {
        grads: t.backward(loss),
        policy_loss: t.scalar(policy_loss).f64(),
        value_loss: t.scalar(value_loss).f64(),
        entropy: t.scalar(e.entropy).f64(),
        ratio: t.scalar(ratio).f64(),
        log_ratio: t.scalar(log_ratio).f64(),
    })
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Float>(grads: &[Array2<T>]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|x| x.f64().powi(2)).sum::<f64>().sqrt()
}

/// Clipped-surrogate PPO epochs over a finished buffer.
pub fn ppo_update<T: Float, R: Rng>(
    net: &mut PolicyNet<T>,
    adam: &mut Adam<T>,
    buffer: &RolloutBuffer<T>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PolicyError> {
    if buffer.advantages.len() != buffer.len() || buffer.returns.len() != buffer.len() {
        return Err(PolicyError::Contract("buffer not finished".into()));
    }
    let mut stats = UpdateStats::default();
    let mut samples = 0usize;
    let mut batches = 0usize;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let w = 1.0 / batch.len() as f64;
            let net_ref = &*net;
            let parts: Vec<SampleGrad<T>> = batch
                .par_iter()
                .map(|&i| sample_grad(net_ref, &buffer.steps[i], buffer.advantages[i], buffer.returns[i], cfg, w))
                .collect::<Result<_, _>>()?;
            let mut grads = net.params.zeros_like();
            for p in &parts {
                for (id, g) in &p.grads {
                    grads[*id] += g;
                }
                stats.policy_loss += p.policy_loss;
                stats.value_loss += p.value_loss;
                stats.entropy += p.entropy;
                stats.approx_kl += (p.ratio - 1.0) - p.log_ratio;
                if (p.ratio - 1.0).abs() > cfg.clip {
                    stats.clip_fraction += 1.0;
                }
            }
            samples += parts.len();
            let norm = grad_norm(&grads);
            if !norm.is_finite() {
                return Err(PolicyError::Diverged(format!("non-finite gradient norm {norm}")));
            }
            if norm > cfg.max_grad_norm {
                let s = T::of(cfg.max_grad_norm / (norm + 1e-6));
                for g in &mut grads {
                    g.mapv_inplace(|x| x * s);
                }
            }
            stats.grad_norm += norm;
            batches += 1;
            adam.step(&mut net.params.values, &grads, cfg.lr);
        }
    }
    let n = samples.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.approx_kl /= n;
    stats.clip_fraction /= n;
    stats.grad_norm /= batches.max(1) as f64;
    Ok(stats)
}

/// Training mappings grouped into weighted pools (for example, high and
/// low workload), plus held-out validation mappings.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub pools: Vec<(Vec<ClusterState>, f64)>,
    pub validation: Vec<ClusterState>,
}

impl TrainData {
    pub fn single(train: Vec<ClusterState>, validation: Vec<ClusterState>) -> Self {
        TrainData {
            pools: vec![(train, 1.0)],
            validation,
        }
    }

    fn all(&self) -> impl Iterator<Item = &ClusterState> {
        self.pools.iter().flat_map(|(p, _)| p.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mnl: usize,
    pub objective: ObjectiveSpec,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub updates: usize,
    pub episodes_per_update: usize,
    /// Greedy validation every this many updates.
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations that got worse.
    pub divergence_patience: usize,
    pub time_limit: Option<Duration>,
    /// Multiplier on rewards before advantage estimation.
    pub reward_scale: f64,
    /// Collect episodes and gradients with rayon.
    pub parallel: bool,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub curves: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mnl: 4,
            objective: ObjectiveSpec::default(),
            net: NetConfig::default(),
            ppo: PpoConfig::default(),
            updates: 200,
            episodes_per_update: 16,
            eval_every: 10,
            divergence_patience: 5,
            time_limit: None,
            reward_scale: 1.0,
            parallel: true,
            seed: 0,
            checkpoint: None,
            curves: None,
        }
    }
}

/// One row of the training curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub validation_objective: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    TimeLimit,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    /// Parameters with the best validation objective seen.
    pub best: PolicyNet<T>,
    pub best_validation: f64,
    /// Final network, optimizer state and update count; resumable.
    pub trainer: Trainer<T>,
    pub curves: Vec<CurveRow>,
    pub stop: StopReason,
}

/// Deterministic per-(seed, update, episode) stream.
fn stream_rng(seed: u64, update: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((update as u64) << 20) | lane);
    rng
}

/// Fragment-weighted state total whose change, divided by the scaling
/// constant, each reward reports.
fn weighted_fragments(objective: &ObjectiveSpec, state: &ClusterState) -> Exact {
    objective
        .terms()
        .iter()
        .map(|t| t.weight * Exact::from_integer(state.resource_fragments(t.resource, t.block) as i64))
        .fold(Exact::zero(), |a, b| a + b)
}

struct Collected<T> {
    steps: Vec<Transition<T>>,
    reward: Exact,
    reduction: Exact,
}

fn collect_episode<T: Float>(
    net: &PolicyNet<T>,
    mapping: &ClusterState,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Collected<T>, PolicyError> {
    let mut ep = Episode::reset(mapping, cfg.mnl, &cfg.objective)?;
    let mut masks = Masks::of(ep.state());
    let mut steps: Vec<Transition<T>> = Vec::new();
    while !ep.is_done() {
        let d = match net.decide(ep.state(), &masks, rng, false, None) {
            Ok(d) => d,
            Err(PolicyError::NoAction) => break,
            Err(e) => return Err(e),
        };
        let (vm, pm) = (d.action.vm.0, d.action.dest_pm.0);
        let features = net.features(ep.state());
        let vm_mask = masks.vm.clone();
        let pm_mask = masks.pm[vm].clone();
        let from = ep.state().placement(d.action.vm).pm;
        let r = ep.step(&d.action)?;
        masks.after_move(ep.state(), d.action.vm, from);
        steps.push(Transition {
            features,
            vm_mask,
            pm_mask,
            vm,
            pm,
            log_prob: d.log_prob,
            reward: r.to_f64().unwrap_or(0.0) * cfg.reward_scale,
            value: d.value,
            done: false,
        });
    }
    if let Some(last) = steps.last_mut() {
        last.done = true;
    }
    let reward = ep.cumulative_reward();
    let reduction = weighted_fragments(&cfg.objective, mapping) - weighted_fragments(&cfg.objective, ep.state());
    Ok(Collected { steps, reward, reduction })
}

/// Mean greedy final objective over `mappings`.
pub fn evaluate_greedy<T: Float>(
    net: &PolicyNet<T>,
    mappings: &[ClusterState],
    mnl: usize,
    objective: &ObjectiveSpec,
) -> Result<f64, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for m in mappings {
        total += run_policy(net, m, mnl, objective, &mut rng, true, None)?
            .final_objective
            .to_f64()
            .unwrap_or(f64::NAN);
    }
    Ok(total / mappings.len().max(1) as f64)
}

/// Network, optimizer and progress; enough to resume training exactly.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub net: PolicyNet<T>,
    pub adam: Adam<T>,
    pub update: usize,
}

const TRAINER_MAGIC: &[u8; 4] = b"VMRT";

impl<T: Float> Trainer<T> {
    pub fn new(cfg: &TrainConfig, data: &TrainData) -> Self {
        let norm = NormStats::fit(data.all(), cfg.net.fragment_block);
        let net = PolicyNet::new(cfg.net.clone(), norm, cfg.seed);
        let adam = Adam::new(&net);
        Trainer { net, adam, update: 0 }
    }

    /// Collects one batch of episodes and runs one PPO update.
    pub fn step(&mut self, cfg: &TrainConfig, data: &TrainData) -> Result<(UpdateStats, f64), PolicyError> {
        let mut rng = stream_rng(cfg.seed, self.update, 0);
        let weights: Vec<f64> = data.pools.iter().map(|(p, w)| if p.is_empty() { 0.0 } else { *w }).collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| PolicyError::Contract(format!("training pools: {e}")))?;
        let chosen: Vec<&ClusterState> = (0..cfg.episodes_per_update)
            .map(|_| {
                let pool = &data.pools[pick.sample(&mut rng)].0;
                &pool[rng.gen_range(0..pool.len())]
            })
            .collect();
        let net = &self.net;
        let run = |(i, m): (usize, &&ClusterState)| collect_episode(net, m, cfg, &mut stream_rng(cfg.seed, self.update, i as u64 + 1));
        let episodes: Vec<Collected<T>> = if cfg.parallel {
            chosen.par_iter().enumerate().map(run).collect::<Result<_, _>>()?
        } else {
            chosen.iter().enumerate().map(run).collect::<Result<_, _>>()?
        };

        let c = Exact::from_integer(cfg.objective.scaling as i64);
        let mut reward_sum = Exact::zero();
        let mut reduction_sum = Exact::zero();
        let mut buffer = RolloutBuffer::default();
        for e in episodes {
            if cfg.objective.goal().is_none() && e.reward * c != e.reduction {
                return Err(PolicyError::Contract(format!(
                    "telescoping check failed: rewards {} x {c} != reduction {}",
                    e.reward, e.reduction
                )));
            }
            reward_sum += e.reward;
            reduction_sum += e.reduction;
            buffer.steps.extend(e.steps);
        }
        if cfg.objective.goal().is_none() && reward_sum * c != reduction_sum {
            return Err(PolicyError::Contract("batch telescoping check failed".into()));
        }
        let mean_reward = reward_sum.to_f64().unwrap_or(f64::NAN) / cfg.episodes_per_update.max(1) as f64;
        let stats = if buffer.is_empty() {
            UpdateStats::default()
        } else {
            buffer.finish(cfg.ppo.gamma, cfg.ppo.gae_lambda)?;
            ppo_update(&mut self.net, &mut self.adam, &buffer, &cfg.ppo, &mut rng)?
        };
        self.update += 1;
        Ok((stats, mean_reward))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PolicyError> {
        let net = to_bytes(&self.net)?;
        let mut out = Vec::new();
        out.extend_from_slice(TRAINER_MAGIC);
        out.extend_from_slice(&(self.update as u64).to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(net.len() as u64).to_le_bytes());
        out.extend_from_slice(&net);
        for m in self.adam.m.iter().chain(&self.adam.v) {
            for &x in m.iter() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let bad = |m: &str| PolicyError::Checkpoint(format!("trainer state: {m}"));
        if bytes.len() < 28 || &bytes[..4] != TRAINER_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let (update, t, len) = (word(4) as usize, word(12), word(20) as usize);
        let net_bytes = bytes.get(28..28 + len).ok_or_else(|| bad("truncated"))?;
        let net: PolicyNet<T> = from_bytes(net_bytes)?;
        let mut rest = &bytes[28 + len..];
        let mut adam = Adam::new(&net);
        adam.t = t;
        for m in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            let n = m.len() * T::BYTES;
            if rest.len() < n {
                return Err(bad("truncated moments"));
            }
            for (x, c) in m.iter_mut().zip(rest[..n].chunks_exact(T::BYTES)) {
                *x = T::read_le(c);
            }
            rest = &rest[n..];
        }
        Ok(Trainer { net, adam, update })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_curves(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<(), PolicyError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Full training run from a fresh network.
pub fn train<T: Float>(cfg: &TrainConfig, data: &TrainData) -> Result<TrainReport<T>, PolicyError> {
    train_from(Trainer::new(cfg, data), cfg, data)
}

/// Continues training from `trainer` until `cfg.updates` updates are done.
pub fn train_from<T: Float>(mut trainer: Trainer<T>, cfg: &TrainConfig, data: &TrainData) -> Result<TrainReport<T>, PolicyError> {
    if data.all().next().is_none() {
        return Err(PolicyError::Contract("no training mappings".into()));
    }
    let start = Instant::now();
    let mut curves = Vec::new();
    let mut best = trainer.net.clone();
    let mut best_val = if data.validation.is_empty() {
        f64::INFINITY
    } else {
        evaluate_greedy(&trainer.net, &data.validation, cfg.mnl, &cfg.objective)?
    };
    let mut last_val = best_val;
    let mut worse_streak = 0;
    let mut stop = StopReason::Completed;
    while trainer.update < cfg.updates {
        if cfg.time_limit.is_some_and(|l| start.elapsed() >= l) {
            stop = StopReason::TimeLimit;
            break;
        }
        let (stats, mean_reward) = trainer.step(cfg, data)?;
        let mut validation = None;
        let due = cfg.eval_every > 0 && (trainer.update.is_multiple_of(cfg.eval_every) || trainer.update == cfg.updates);
        if due && !data.validation.is_empty() {
            let v = evaluate_greedy(&trainer.net, &data.validation, cfg.mnl, &cfg.objective)?;
            validation = Some(v);
            if v < best_val {
                best_val = v;
                best = trainer.net.clone();
                if let Some(p) = &cfg.checkpoint {
                    save_checkpoint(&best, p)?;
                }
            }
            worse_streak = if v > last_val { worse_streak + 1 } else { 0 };
            last_val = v;
        }
        log::info!(
            "update {} reward {:.4} policy {:.4} value {:.4} entropy {:.3} validation {:?}",
            trainer.update,
            mean_reward,
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            validation
        );
        curves.push(CurveRow {
            update: trainer.update,
            mean_episode_reward: mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            grad_norm: stats.grad_norm,
            validation_objective: validation,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if cfg.divergence_patience > 0 && worse_streak >= cfg.divergence_patience {
            log::warn!("validation worsened {worse_streak} evaluations in a row; stopping");
            stop = StopReason::Diverged;
            break;
        }
    }
    if let Some(p) = &cfg.curves {
        write_curves(&curves, p)?;
    }
    if let Some(p) = &cfg.checkpoint {
        save_checkpoint(&best, p)?;
    }
    Ok(TrainReport {
        best,
        best_validation: best_val,
        trainer,
        curves,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_advantage() {
        let (a, r) = compute_gae(&[2.0], &[0.5], &[true], 1.0, 1.0).unwrap();
        assert_eq!(a, vec![1.5]);
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn zeros_stay_zero() {
        let (a, _) = compute_gae(&[0.0; 5], &[0.0; 5], &[false, false, true, false, true], 0.99, 0.95).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_gae(&[0.0; 2], &[0.0], &[true; 2], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalized_advantages() {
        let a = normalize(&[1.0, 2.0, 3.0, 6.0]);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
