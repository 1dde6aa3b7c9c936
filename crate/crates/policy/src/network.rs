//! VM actor, PM actor and critic.
//!
//! The VM actor embeds PMs and VMs with two small MLPs and runs a stack of
//! blocks. Each block has three attention stages: attention inside each PM
//! tree (a PM and the VMs it hosts), self-attention among PMs and among
//! VMs, and VM-to-PM cross-attention, followed by per-machine feed-forward
//! layers. All stages are residual with post layer norm.
//!
//! The PM actor encodes only the selected VM and decodes over all PMs; its
//! logits get the selected VM's head-averaged cross-attention row added,
//! scaled by a learned factor.

use std::sync::Arc;

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vmr_core::simulator::has_legal_slot;
use vmr_core::{ClusterState, MigrationAction, PmId, VmId};

use crate::features::{encode_features, FeatureTensor, NormStats, PM_FEATURES, VM_FEATURES};
use crate::float::Float;
use crate::risk::threshold_probs;
use crate::tape::{AttnPattern, Tape, Var};
use crate::PolicyError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_width: usize,
    pub critic_width: usize,
    /// Fragment block used by the input features.
    pub fragment_block: u32,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d_model: 64,
            heads: 4,
            blocks: 2,
            ff_width: 128,
            critic_width: 128,
            fragment_block: 16,
        }
    }
}

/// Named parameter matrices in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub values: Vec<Array2<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<T>> {
        self.values.iter().map(|v| Array2::zeros(v.dim())).collect()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| U::of(x.f64()))).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Mha {
    q: usize,
    k: usize,
    v: usize,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Ff {
    a: Linear,
    b: Linear,
}

#[derive(Clone, Debug)]
struct Block {
    tree: Mha,
    tree_ln: Norm,
    pm_self: Mha,
    pm_self_ln: Norm,
    vm_self: Mha,
    vm_self_ln: Norm,
    cross: Mha,
    cross_ln: Norm,
    vm_ff: Ff,
    vm_ff_ln: Norm,
    pm_ff: Ff,
    pm_ff_ln: Norm,
}

#[derive(Clone, Debug)]
struct PmActor {
    enc_attn: Mha,
    enc_ln: Norm,
    enc_ff: Ff,
    enc_ff_ln: Norm,
    dec_self: Mha,
    dec_self_ln: Norm,
    dec_cross: Mha,
    dec_cross_ln: Norm,
    dec_ff: Ff,
    dec_ff_ln: Norm,
    head: Linear,
    alpha: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    pm_embed: Ff,
    vm_embed: Ff,
    blocks: Vec<Block>,
    vm_head: Linear,
    pm_actor: PmActor,
    critic: Ff,
}

/// What to initialize a parameter with.
enum Init {
    FanIn(usize),
    Zeros,
    Ones,
}

struct Builder<T> {
    store: ParamStore<T>,
    inits: Vec<Init>,
}

impl<T: Float> Builder<T> {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.store.names.push(name);
        self.store.values.push(Array2::zeros(shape));
        self.inits.push(init);
        self.store.values.len() - 1
    }

    fn linear(&mut self, name: &str, i: usize, o: usize, zero: bool) -> Linear {
        let init = if zero { Init::Zeros } else { Init::FanIn(i) };
        Linear {
            w: self.add(format!("{name}.w"), (i, o), init),
            b: self.add(format!("{name}.b"), (1, o), if zero { Init::Zeros } else { Init::FanIn(i) }),
        }
    }

    fn mha(&mut self, name: &str, d: usize) -> Mha {
        Mha {
            q: self.add(format!("{name}.q"), (d, d), Init::FanIn(d)),
            k: self.add(format!("{name}.k"), (d, d), Init::FanIn(d)),
            v: self.add(format!("{name}.v"), (d, d), Init::FanIn(d)),
            o: self.linear(&format!("{name}.o"), d, d, false),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), (1, d), Init::Ones),
            b: self.add(format!("{name}.b"), (1, d), Init::Zeros),
        }
    }

    fn ff(&mut self, name: &str, i: usize, h: usize, o: usize, zero_out: bool) -> Ff {
        Ff {
            a: self.linear(&format!("{name}.0"), i, h, false),
            b: self.linear(&format!("{name}.1"), h, o, zero_out),
        }
    }
}

fn layout<T: Float>(c: &NetConfig) -> (Layout, Builder<T>) {
    let d = c.d_model;
    let mut b = Builder {
        store: ParamStore { names: Vec::new(), values: Vec::new() },
        inits: Vec::new(),
    };
    let pm_embed = b.ff("pm_embed", PM_FEATURES, d, d, false);
    let vm_embed = b.ff("vm_embed", VM_FEATURES, d, d, false);
    let blocks = (0..c.blocks)
        .map(|i| {
            let n = |s: &str| format!("block{i}.{s}");
            Block {
                tree: b.mha(&n("tree"), d),
                tree_ln: b.norm(&n("tree_ln"), d),
                pm_self: b.mha(&n("pm_self"), d),
                pm_self_ln: b.norm(&n("pm_self_ln"), d),
                vm_self: b.mha(&n("vm_self"), d),
                vm_self_ln: b.norm(&n("vm_self_ln"), d),
                cross: b.mha(&n("cross"), d),
                cross_ln: b.norm(&n("cross_ln"), d),
                vm_ff: b.ff(&n("vm_ff"), d, c.ff_width, d, false),
                vm_ff_ln: b.norm(&n("vm_ff_ln"), d),
                pm_ff: b.ff(&n("pm_ff"), d, c.ff_width, d, false),
                pm_ff_ln: b.norm(&n("pm_ff_ln"), d),
            }
        })
        .collect();
    let vm_head = b.linear("vm_head", d, 1, true);
    let pm_actor = PmActor {
        enc_attn: b.mha("pm_actor.enc_attn", d),
        enc_ln: b.norm("pm_actor.enc_ln", d),
        enc_ff: b.ff("pm_actor.enc_ff", d, c.ff_width, d, false),
        enc_ff_ln: b.norm("pm_actor.enc_ff_ln", d),
        dec_self: b.mha("pm_actor.dec_self", d),
        dec_self_ln: b.norm("pm_actor.dec_self_ln", d),
        dec_cross: b.mha("pm_actor.dec_cross", d),
        dec_cross_ln: b.norm("pm_actor.dec_cross_ln", d),
        dec_ff: b.ff("pm_actor.dec_ff", d, c.ff_width, d, false),
        dec_ff_ln: b.norm("pm_actor.dec_ff_ln", d),
        head: b.linear("pm_actor.head", d, 1, true),
        alpha: b.add("pm_actor.alpha".into(), (1, 1), Init::Ones),
    };
    let critic = b.ff("critic", 2 * d, c.critic_width, 1, false);
    (
        Layout {
            pm_embed,
            vm_embed,
            blocks,
            vm_head,
            pm_actor,
            critic,
        },
        b,
    )
}

/// The complete policy: configuration, parameters and input normalization.
#[derive(Clone, Debug)]
pub struct PolicyNet<T> {
    config: NetConfig,
    layout: Layout,
    pub params: ParamStore<T>,
    pub norm: NormStats,
}

/// Output of the VM actor on a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct VmActorOut {
    /// `1 x M` log-probabilities (zero where masked).
    pub log_probs: Var,
    /// `1 x M` probabilities (exactly zero where masked).
    pub probs: Var,
    pub vm_emb: Var,
    pub pm_emb: Var,
    /// `M x N` cross-attention weights of the last block, averaged over heads.
    pub cross: Var,
}

/// How stage 1 restricts attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeAttention {
    /// Attention computed tree by tree.
    Sparse,
    /// One dense attention over all machines with off-tree pairs masked.
    DenseMasked,
}

/// A forward pass in progress: the tape plus the parameters bound so far.
pub struct Graph<'a, T: Float> {
    pub tape: Tape<T>,
    net: &'a PolicyNet<T>,
    bound: Vec<Option<Var>>,
}

impl<'a, T: Float> Graph<'a, T> {
    pub fn new(net: &'a PolicyNet<T>, grad: bool) -> Self {
        Graph {
            tape: if grad { Tape::new() } else { Tape::inference() },
            net,
            bound: vec![None; net.params.len()],
        }
    }

    fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.bound[id] {
            return v;
        }
        let v = self.tape.param(id, self.net.params.values[id].clone());
        self.bound[id] = Some(v);
        v
    }

    fn linear(&mut self, l: Linear, x: Var) -> Var {
        let w = self.p(l.w);
        let b = self.p(l.b);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn ff(&mut self, f: Ff, x: Var) -> Var {
        let h = self.linear(f.a, x);
        let h = self.tape.relu(h);
        self.linear(f.b, h)
    }

    fn norm(&mut self, n: Norm, x: Var) -> Var {
        let g = self.p(n.g);
        let b = self.p(n.b);
        self.tape.layer_norm(x, g, b)
    }

    fn residual_norm(&mut self, n: Norm, x: Var, delta: Var) -> Var {
        let s = self.tape.add(x, delta);
        self.norm(n, s)
    }

    fn mha(&mut self, m: Mha, x: Var, memory: Var, pattern: AttnPattern) -> Var {
        let (wq, wk, wv) = (self.p(m.q), self.p(m.k), self.p(m.v));
        let q = self.tape.matmul(x, wq);
        let k = self.tape.matmul(memory, wk);
        let v = self.tape.matmul(memory, wv);
        let a = self.tape.attention(q, k, v, self.net.config.heads, pattern);
        self.linear(m.o, a)
    }

    /// Cross-attention built from primitive ops so the head-averaged
    /// weights stay differentiable.
    fn cross(&mut self, m: Mha, x: Var, memory: Var) -> (Var, Var) {
        let heads = self.net.config.heads;
        let dh = self.net.config.d_model / heads;
        let (wq, wk, wv) = (self.p(m.q), self.p(m.k), self.p(m.v));
        let q = self.tape.matmul(x, wq);
        let k = self.tape.matmul(memory, wk);
        let v = self.tape.matmul(memory, wv);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut avg: Option<Var> = None;
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let s = self.tape.matmul_t(qh, kh);
            let s = self.tape.scale(s, scale);
            let p = self.tape.softmax(s, None);
            outs.push(self.tape.matmul(p, vh));
            avg = Some(match avg {
                Some(a) => self.tape.add(a, p),
                None => p,
            });
        }
        let cat = self.tape.concat_cols(&outs);
        let out = self.linear(m.o, cat);
        let avg = self.tape.scale(avg.expect("at least one head"), T::one() / T::of(heads as f64));
        (out, avg)
    }
}

fn tree_groups(tree: &[usize], n_pm: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..n_pm).map(|i| vec![i]).collect();
    for (k, &pm) in tree.iter().enumerate() {
        groups[pm].push(n_pm + k);
    }
    groups
}

fn tree_mask(tree: &[usize], n_pm: usize) -> Array2<bool> {
    let n = n_pm + tree.len();
    let owner = |t: usize| if t < n_pm { t } else { tree[t - n_pm] };
    Array2::from_shape_fn((n, n), |(a, b)| owner(a) == owner(b))
}

fn mask_row(mask: &[bool]) -> Arc<Array2<bool>> {
    Arc::new(Array2::from_shape_vec((1, mask.len()), mask.to_vec()).expect("row shape"))
}

/// One sampled (or greedy) two-stage decision.
#[derive(Clone, Debug)]
pub struct Decision {
    pub action: MigrationAction,
    pub log_prob: f64,
    pub value: f64,
    pub vm_probs: Vec<f64>,
    pub pm_probs: Vec<f64>,
}

/// Legality masks of a state: which VMs can move, and where.
#[derive(Clone, Debug, PartialEq)]
pub struct Masks {
    pub vm: Vec<bool>,
    /// `pm[k]` is the destination mask of VM `k`.
    pub pm: Vec<Vec<bool>>,
}

impl Masks {
    pub fn of(state: &ClusterState) -> Self {
        let pm: Vec<Vec<bool>> = (0..state.num_vms())
            .map(|k| {
                (0..state.num_pms())
                    .map(|i| has_legal_slot(state, VmId(k), PmId(i)))
                    .collect()
            })
            .collect();
        let vm = pm.iter().map(|row| row.iter().any(|&b| b)).collect();
        Masks { vm, pm }
    }

    /// Refreshes the entries a move of `vm` off `from` can change: the
    /// source and destination columns, the row of `vm` and the rows of VMs
    /// in anti-affinity with it. `state` is the post-move state.
    pub fn after_move(&mut self, state: &ClusterState, vm: VmId, from: PmId) {
        let to = state.placement(vm).pm;
        let mut rows: Vec<usize> = state.vm(vm).affinity_conflicts.iter().map(|c| c.0).collect();
        rows.push(vm.0);
        for k in 0..state.num_vms() {
            for i in [from, to] {
                self.pm[k][i.0] = has_legal_slot(state, VmId(k), i);
            }
        }
        for &k in &rows {
            for i in 0..state.num_pms() {
                self.pm[k][i] = has_legal_slot(state, VmId(k), PmId(i));
            }
        }
        for k in 0..state.num_vms() {
            self.vm[k] = self.pm[k].iter().any(|&b| b);
        }
    }
}

impl<T: Float> PolicyNet<T> {
    pub fn new(config: NetConfig, norm: NormStats, seed: u64) -> Self {
        let (layout, mut b) = layout::<T>(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (v, init) in b.store.values.iter_mut().zip(&b.inits) {
            match init {
                Init::Zeros => {}
                Init::Ones => v.fill(T::one()),
                Init::FanIn(n) => {
                    let r = 1.0 / (*n as f64).sqrt();
                    let u = Uniform::new_inclusive(-r, r);
                    v.mapv_inplace(|_| T::of(u.sample(&mut rng)));
                }
            }
        }
        PolicyNet { config, layout, params: b.store, norm }
    }

    /// Rebuilds a network around existing parameters, checking their shapes.
    pub fn from_parts(config: NetConfig, norm: NormStats, params: ParamStore<T>) -> Result<Self, PolicyError> {
        let (layout, b) = layout::<T>(&config);
        if b.store.names != params.names {
            return Err(PolicyError::Checkpoint("parameter names do not match the configuration".into()));
        }
        for (n, (a, e)) in params.names.iter().zip(params.values.iter().zip(&b.store.values)) {
            if a.dim() != e.dim() {
                return Err(PolicyError::Checkpoint(format!("{n}: shape {:?}, expected {:?}", a.dim(), e.dim())));
            }
        }
        Ok(PolicyNet { config, layout, params, norm })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn cast<U: Float>(&self) -> PolicyNet<U> {
        PolicyNet {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
            norm: self.norm.clone(),
        }
    }

    pub fn features(&self, state: &ClusterState) -> FeatureTensor<T> {
        encode_features(state, &self.norm, self.config.fragment_block)
    }

    /// Re-draws every parameter, including the zero-initialized heads.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (n, v) in self.params.names.iter().zip(self.params.values.iter_mut()) {
            let fan = v.nrows().max(1) as f64;
            let base = if n.ends_with(".g") || n.ends_with("alpha") { 1.0 } else { 0.0 };
            v.mapv_inplace(|_| T::of(base + scale * rng.gen_range(-1.0..1.0) / fan.sqrt()));
        }
    }

    pub fn vm_actor(&self, g: &mut Graph<'_, T>, f: &FeatureTensor<T>, vm_mask: &[bool]) -> Result<VmActorOut, PolicyError> {
        self.vm_actor_with(g, f, vm_mask, TreeAttention::Sparse)
    }

    pub fn vm_actor_with(
        &self,
        g: &mut Graph<'_, T>,
        f: &FeatureTensor<T>,
        vm_mask: &[bool],
        stage1: TreeAttention,
    ) -> Result<VmActorOut, PolicyError> {
        let (n, m) = (f.pm.nrows(), f.vm.nrows());
        if vm_mask.len() != m {
            return Err(PolicyError::Contract(format!("VM mask has {} entries for {m} VMs", vm_mask.len())));
        }
        if !vm_mask.iter().any(|&b| b) {
            return Err(PolicyError::NoAction);
        }
        let pattern = match stage1 {
            TreeAttention::Sparse => AttnPattern::Groups(Arc::new(tree_groups(&f.tree, n))),
            TreeAttention::DenseMasked => AttnPattern::Masked(Arc::new(tree_mask(&f.tree, n))),
        };
        let l = &self.layout;
        let pm_x = g.tape.constant(f.pm.clone());
        let vm_x = g.tape.constant(f.vm.clone());
        let mut pm = g.ff(l.pm_embed, pm_x);
        let mut vm = g.ff(l.vm_embed, vm_x);
        let mut cross = None;
        for b in &l.blocks {
            let tokens = g.tape.concat_rows(&[pm, vm]);
            let a = g.mha(b.tree, tokens, tokens, pattern.clone());
            let tokens = g.residual_norm(b.tree_ln, tokens, a);
            pm = g.tape.slice_rows(tokens, 0, n);
            vm = g.tape.slice_rows(tokens, n, m);

            let a = g.mha(b.pm_self, pm, pm, AttnPattern::Dense);
            pm = g.residual_norm(b.pm_self_ln, pm, a);
            let a = g.mha(b.vm_self, vm, vm, AttnPattern::Dense);
            vm = g.residual_norm(b.vm_self_ln, vm, a);

            let (a, w) = g.cross(b.cross, vm, pm);
            vm = g.residual_norm(b.cross_ln, vm, a);
            cross = Some(w);

            let a = g.ff(b.vm_ff, vm);
            vm = g.residual_norm(b.vm_ff_ln, vm, a);
            let a = g.ff(b.pm_ff, pm);
            pm = g.residual_norm(b.pm_ff_ln, pm, a);
        }
        let cross = match cross {
            Some(c) => c,
            None => g.tape.constant(Array2::from_elem((m, n), T::one() / T::of(n.max(1) as f64))),
        };
        let logits = g.linear(l.vm_head, vm);
        let logits = g.tape.transpose(logits);
        let mask = mask_row(vm_mask);
        let log_probs = g.tape.log_softmax(logits, Some(mask.clone()));
        let probs = g.tape.softmax(logits, Some(mask));
        Ok(VmActorOut {
            log_probs,
            probs,
            vm_emb: vm,
            pm_emb: pm,
            cross,
        })
    }

    /// `(log_probs, probs)` over PMs, each `1 x N`, for the selected VM.
    pub fn pm_actor(&self, g: &mut Graph<'_, T>, out: &VmActorOut, vm: usize, pm_mask: &[bool]) -> Result<(Var, Var), PolicyError> {
        if !pm_mask.iter().any(|&b| b) {
            return Err(PolicyError::Contract(format!("vm{vm} has no legal destination")));
        }
        let a = &self.layout.pm_actor;
        let e = g.tape.gather_rows(out.vm_emb, &[vm]);
        let t = g.mha(a.enc_attn, e, e, AttnPattern::Dense);
        let e = g.residual_norm(a.enc_ln, e, t);
        let t = g.ff(a.enc_ff, e);
        let e = g.residual_norm(a.enc_ff_ln, e, t);

        let h = out.pm_emb;
        let t = g.mha(a.dec_self, h, h, AttnPattern::Dense);
        let h = g.residual_norm(a.dec_self_ln, h, t);
        let t = g.mha(a.dec_cross, h, e, AttnPattern::Dense);
        let h = g.residual_norm(a.dec_cross_ln, h, t);
        let t = g.ff(a.dec_ff, h);
        let h = g.residual_norm(a.dec_ff_ln, h, t);

        let logits = g.linear(a.head, h);
        let logits = g.tape.transpose(logits);
        let row = g.tape.gather_rows(out.cross, &[vm]);
        let alpha = g.p(a.alpha);
        let inject = g.tape.matmul(alpha, row);
        let logits = g.tape.add(logits, inject);
        let mask = mask_row(pm_mask);
        let log_probs = g.tape.log_softmax(logits, Some(mask.clone()));
        let probs = g.tape.softmax(logits, Some(mask));
        Ok((log_probs, probs))
    }

    /// State value from mean-pooled embeddings, `1 x 1`.
    pub fn critic(&self, g: &mut Graph<'_, T>, out: &VmActorOut) -> Var {
        let v = g.tape.mean_rows(out.vm_emb);
        let p = g.tape.mean_rows(out.pm_emb);
        let x = g.tape.concat_cols(&[v, p]);
        g.ff(self.layout.critic, x)
    }

    /// Picks a VM, then a destination PM. `quantiles` thresholds both
    /// distributions before sampling.
    pub fn decide<R: Rng>(
        &self,
        state: &ClusterState,
        masks: &Masks,
        rng: &mut R,
        greedy: bool,
        quantiles: Option<(f64, f64)>,
    ) -> Result<Decision, PolicyError> {
        let f = self.features(state);
        let mut g = Graph::new(self, false);
        let out = self.vm_actor(&mut g, &f, &masks.vm)?;
        let vm_probs: Vec<f64> = g.tape.value(out.probs).iter().map(|x| x.f64()).collect();
        let vm_pick = choose(&vm_probs, quantiles.map(|q| q.0), greedy, rng);
        let (pm_lp, pm_p) = self.pm_actor(&mut g, &out, vm_pick, &masks.pm[vm_pick])?;
        let pm_probs: Vec<f64> = g.tape.value(pm_p).iter().map(|x| x.f64()).collect();
        let pm_pick = choose(&pm_probs, quantiles.map(|q| q.1), greedy, rng);
        let value = self.critic(&mut g, &out);
        let log_prob = g.tape.value(out.log_probs)[[0, vm_pick]].f64() + g.tape.value(pm_lp)[[0, pm_pick]].f64();
        Ok(Decision {
            action: MigrationAction::new(VmId(vm_pick), PmId(pm_pick)),
            log_prob,
            value: g.tape.scalar(value).f64(),
            vm_probs,
            pm_probs,
        })
    }

    /// Log-probability of `(vm, pm)`, the entropies of both stages and the
    /// state value, all on `g`.
    pub fn evaluate(
        &self,
        g: &mut Graph<'_, T>,
        f: &FeatureTensor<T>,
        vm_mask: &[bool],
        pm_mask: &[bool],
        vm: usize,
        pm: usize,
    ) -> Result<Evaluation, PolicyError> {
        let out = self.vm_actor(g, f, vm_mask)?;
        let (pm_lp, pm_p) = self.pm_actor(g, &out, vm, pm_mask)?;
        let a = g.tape.pick(out.log_probs, 0, vm);
        let b = g.tape.pick(pm_lp, 0, pm);
        let log_prob = g.tape.add(a, b);
        let h_vm = entropy(g, out.probs, out.log_probs);
        let h_pm = entropy(g, pm_p, pm_lp);
        let entropy = g.tape.add(h_vm, h_pm);
        let value = self.critic(g, &out);
        Ok(Evaluation { log_prob, entropy, value })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Evaluation {
    pub log_prob: Var,
    pub entropy: Var,
    pub value: Var,
}

fn entropy<T: Float>(g: &mut Graph<'_, T>, p: Var, lp: Var) -> Var {
    let pl = g.tape.mul(p, lp);
    let s = g.tape.sum_all(pl);
    g.tape.scale(s, -T::one())
}

fn choose<R: Rng>(probs: &[f64], quantile: Option<f64>, greedy: bool, rng: &mut R) -> usize {
    let thresholded;
    let p = match quantile {
        Some(q) if q > 0.0 => {
            thresholded = threshold_probs(probs, q);
            &thresholded
        }
        _ => probs,
    };
    if greedy {
        return argmax(p);
    }
    sample_index(p, rng)
}

/// Lowest index attaining the maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; never returns a zero-probability index.
pub fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        acc += v;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmr_core::fixtures::RandomInstance;

    fn setup(seed: u64) -> (ClusterState, PolicyNet<f64>) {
        let s = RandomInstance::tiny(4, 10).with_affinity(0.1).sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut net = PolicyNet::new(NetConfig { d_model: 16, heads: 2, ff_width: 24, critic_width: 8, ..NetConfig::default() }, NormStats::from_capacity(32, 64, 16), seed);
        net.randomize(seed, 1.0);
        (s, net)
    }

    #[test]
    fn probabilities_respect_masks() {
        for seed in 0..10 {
            let (s, net) = setup(seed);
            let masks = Masks::of(&s);
            if !masks.vm.iter().any(|&b| b) {
                continue;
            }
            let d = net.decide(&s, &masks, &mut ChaCha8Rng::seed_from_u64(1), false, None).unwrap();
            assert!((d.vm_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((d.pm_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (p, &ok) in d.vm_probs.iter().zip(&masks.vm) {
                assert!(ok || *p == 0.0);
            }
            for (p, &ok) in d.pm_probs.iter().zip(&masks.pm[d.action.vm.0]) {
                assert!(ok || *p == 0.0);
            }
        }
    }

    #[test]
    fn parameter_count_is_scale_free() {
        let small = PolicyNet::<f32>::new(NetConfig::default(), NormStats::from_capacity(44, 128, 16), 0);
        assert!(small.params.count() > 0);
        let (s1, _) = setup(0);
        let s2 = RandomInstance::tiny(30, 90).sample(&mut ChaCha8Rng::seed_from_u64(3));
        // The same parameters serve both sizes.
        for s in [s1, s2] {
            let masks = Masks::of(&s);
            small.decide(&s, &masks, &mut ChaCha8Rng::seed_from_u64(0), true, None).unwrap();
        }
    }

    #[test]
    fn incremental_masks_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let mut s = RandomInstance::tiny(5, 12).with_affinity(0.2).sample(&mut rng);
            let mut masks = Masks::of(&s);
            for _ in 0..4 {
                let moves = vmr_core::simulator::legal_actions(&s);
                if moves.is_empty() {
                    break;
                }
                let a = moves[rng.gen_range(0..moves.len())];
                let from = s.placement(a.vm).pm;
                let slot = legal_slots_of(&s, a);
                s.move_vm(a.vm, a.dest_pm, slot).unwrap();
                masks.after_move(&s, a.vm, from);
                assert_eq!(masks, Masks::of(&s));
            }
        }
    }

    fn legal_slots_of(s: &ClusterState, a: MigrationAction) -> vmr_core::NumaSlot {
        vmr_core::simulator::legal_slots(s, a.vm, a.dest_pm)[0]
    }

    #[test]
    fn single_legal_vm_gets_all_mass() {
        let (s, net) = setup(4);
        let mut masks = Masks::of(&s);
        let keep = masks.vm.iter().position(|&b| b).unwrap();
        for (k, m) in masks.vm.iter_mut().enumerate() {
            *m = k == keep;
        }
        let d = net.decide(&s, &masks, &mut ChaCha8Rng::seed_from_u64(0), false, None).unwrap();
        assert_eq!(d.vm_probs[keep], 1.0);
        assert_eq!(d.action.vm, VmId(keep));
    }
}
