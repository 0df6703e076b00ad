//! Code construction, successive-cancellation decoding and randomized
//! rounding encoding over a tree of per-node kernels.
//!
//! Layout: a node at depth `m` owns `ℓ^{n-m}` symbols `x_P`, produced by
//! `ℓ^{n-m-1}` copies of its kernel. Copy `c` takes `u = (x_{P·1}[c], …,
//! x_{P·ℓ}[c])` and writes `(uG)_k` to `x_P[k ℓ^{n-m-1} + c]`. The root's
//! `x` is the codeword; leaves are visited in lexicographic order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::gf::{sample_invertible, FieldElement, FieldSpec, Kernel};
use crate::kernsearch::search;
use crate::params::{conditional_entropy, param_vector};
use crate::transform::{draw_use, transform_all, TransformConfig};
use crate::util::{argmax, derive_seed, inverse_cdf, rng_from};

/// How each internal node gets its kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelPolicy {
    Fixed(Kernel),
    /// Uniform over GL(ℓ, q), one draw per node.
    Random,
    /// Certified search with a per-node candidate budget.
    Search { budget: usize },
}

/// How leaf statistics are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorPolicy {
    Exact,
    MonteCarlo { samples: usize },
    /// Exact when every transform fits the guard, Monte Carlo otherwise.
    Auto { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrozenClass {
    /// Free and noisy.
    B,
    /// Dependent and reliable.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafRole {
    Info,
    Frozen(FrozenClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStat {
    pub h_w: f64,
    pub h_v: f64,
    /// MAP error of the W-leaf, or its Bhattacharyya bound when estimated.
    pub pe_w: f64,
    pub z_w: f64,
    pub t_v: f64,
    pub exact: bool,
    pub pe_exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    pub field: Arc<FieldSpec>,
    pub ell: usize,
    pub n: usize,
    pub pi: f64,
    pub theta: f64,
    pub seed: u64,
    pub input_dist: Vec<f64>,
    /// `kernels[m][r]` for the node of depth `m` and lexicographic rank `r`.
    pub kernels: Vec<Vec<Kernel>>,
    /// Leaf ranks of the information set, ascending.
    pub info_set: Vec<usize>,
    pub frozen_class: BTreeMap<usize, FrozenClass>,
    /// One entry per leaf, by rank.
    pub leaf_stats: Vec<LeafStat>,
}

/// `exp(−ℓ^{πn})`.
pub fn threshold(ell: usize, n: usize, pi: f64) -> f64 {
    (-(ell as f64).powf(pi * n as f64)).exp()
}

/// 0-based digits of a rank at the given depth, most significant first.
pub fn rank_to_path(rank: usize, ell: usize, depth: usize) -> Vec<usize> {
    let mut p = vec![0; depth];
    let mut r = rank;
    for d in p.iter_mut().rev() {
        *d = r % ell;
        r /= ell;
    }
    p
}

pub fn path_to_rank(path: &[usize], ell: usize) -> usize {
    path.iter().fold(0, |a, &k| a * ell + k)
}

impl CodeSpec {
    pub fn block_length(&self) -> usize {
        self.ell.pow(self.n as u32)
    }

    pub fn q(&self) -> usize {
        self.field.q()
    }

    pub fn rate(&self) -> f64 {
        self.info_set.len() as f64 / self.block_length() as f64
    }

    pub fn roles(&self) -> Vec<LeafRole> {
        let mut roles = vec![LeafRole::Frozen(FrozenClass::B); self.block_length()];
        for &r in &self.info_set {
            roles[r] = LeafRole::Info;
        }
        for (&r, &c) in &self.frozen_class {
            roles[r] = LeafRole::Frozen(c);
        }
        roles
    }

    pub fn kernel(&self, depth: usize, rank: usize) -> &Kernel {
        &self.kernels[depth][rank]
    }

    /// Decoder union term plus encoder variation term over the information set.
    pub fn union_bound(&self) -> f64 {
        self.info_set.iter().map(|&r| self.leaf_stats[r].pe_w + self.leaf_stats[r].t_v).sum()
    }

    pub fn union_bound_exact(&self) -> bool {
        self.info_set.iter().all(|&r| self.leaf_stats[r].pe_exact)
    }

    /// Checks internal consistency; used after parsing.
    pub fn validate(&self) -> Result<()> {
        let n_leaves = self.block_length();
        if self.ell < 2 || self.n < 1 {
            return Err(Error::InvalidArgument("need ℓ ≥ 2 and n ≥ 1".into()));
        }
        if self.kernels.len() != self.n {
            return Err(Error::Format(format!("expected {} kernel levels, found {}", self.n, self.kernels.len())));
        }
        for (m, level) in self.kernels.iter().enumerate() {
            if level.len() != self.ell.pow(m as u32) {
                return Err(Error::Format(format!("depth {m} needs {} kernels", self.ell.pow(m as u32))));
            }
            if level.iter().any(|k| k.ell() != self.ell || **k.field() != *self.field) {
                return Err(Error::Format(format!("kernel at depth {m} has the wrong shape or field")));
            }
        }
        if self.leaf_stats.len() != n_leaves {
            return Err(Error::Format("leaf statistics must cover every leaf".into()));
        }
        let mut seen = vec![false; n_leaves];
        for &r in self.info_set.iter().chain(self.frozen_class.keys()) {
            if r >= n_leaves || seen[r] {
                return Err(Error::Format(format!("leaf {r} is out of range or listed twice")));
            }
            seen[r] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("information and frozen sets must cover every leaf".into()));
        }
        if self.input_dist.len() != self.q() {
            return Err(Error::Format("input distribution has the wrong length".into()));
        }
        Ok(())
    }
}

fn classify(stat: &LeafStat, theta: f64) -> LeafRole {
    if stat.h_w < theta && 1.0 - stat.h_v < theta {
        LeafRole::Info
    } else if stat.h_v < theta && stat.h_w < theta {
        LeafRole::Frozen(FrozenClass::C)
    } else {
        LeafRole::Frozen(FrozenClass::B)
    }
}

fn node_rng(seed: u64, depth: usize, rank: usize) -> rand_chacha::ChaCha8Rng {
    rng_from(derive_seed(seed, &[0x6b65_726e, depth as u64, rank as u64]))
}

/// Builds a code over `w`, whose input law should be capacity-achieving.
#[allow(clippy::too_many_arguments)]
pub fn construct(
    w: &Channel,
    ell: usize,
    n: usize,
    pi: f64,
    kernel_policy: &KernelPolicy,
    estimator: EstimatorPolicy,
    seed: u64,
    config: &TransformConfig,
) -> Result<CodeSpec> {
    if n < 1 || ell < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and ℓ ≥ 2".into()));
    }
    if let KernelPolicy::Fixed(g) = kernel_policy {
        if g.ell() != ell || **g.field() != **w.field() {
            return Err(Error::DimensionMismatch("fixed kernel does not match ℓ or the channel field".into()));
        }
    }
    let theta = threshold(ell, n, pi);
    let (kernels, leaf_stats) = match estimator {
        EstimatorPolicy::Exact => exact_tree(w, ell, n, kernel_policy, seed, config)?,
        EstimatorPolicy::MonteCarlo { samples } => mc_tree(w, ell, n, kernel_policy, seed, samples)?,
        EstimatorPolicy::Auto { samples } => match exact_tree(w, ell, n, kernel_policy, seed, config) {
            Err(Error::GuardExceeded { .. }) => mc_tree(w, ell, n, kernel_policy, seed, samples)?,
            other => other?,
        },
    };
    let mut info_set = Vec::new();
    let mut frozen_class = BTreeMap::new();
    for (r, s) in leaf_stats.iter().enumerate() {
        match classify(s, theta) {
            LeafRole::Info => info_set.push(r),
            LeafRole::Frozen(c) => {
                frozen_class.insert(r, c);
            }
        }
    }
    Ok(CodeSpec {
        field: w.field().clone(),
        ell,
        n,
        pi,
        theta,
        seed,
        input_dist: w.input_dist().to_vec(),
        kernels,
        info_set,
        frozen_class,
        leaf_stats,
    })
}

fn fixed_or_random(policy: &KernelPolicy, field: &Arc<FieldSpec>, ell: usize, seed: u64, depth: usize, rank: usize) -> Kernel {
    match policy {
        KernelPolicy::Fixed(g) => g.clone(),
        _ => sample_invertible(field, ell, &mut node_rng(seed, depth, rank)),
    }
}

type Tree = (Vec<Vec<Kernel>>, Vec<LeafStat>);

fn exact_tree(w: &Channel, ell: usize, n: usize, policy: &KernelPolicy, seed: u64, config: &TransformConfig) -> Result<Tree> {
    let mut level: Vec<(Channel, Channel)> = vec![(w.clone(), w.flatten())];
    let mut kernels = Vec::with_capacity(n);
    for depth in 0..n {
        let step: Vec<(Kernel, Vec<(Channel, Channel)>)> = level
            .par_iter()
            .enumerate()
            .map(|(rank, (wn, vn))| {
                let g = match policy {
                    KernelPolicy::Search { budget } => {
                        search(wn, vn, ell, *budget, &mut node_rng(seed, depth, rank), config)?.kernel
                    }
                    _ => fixed_or_random(policy, w.field(), ell, seed, depth, rank),
                };
                let cw = transform_all(wn, &g, config)?;
                let cv = transform_all(vn, &g, config)?;
                let kids = cw.into_iter().zip(cv).map(|(a, b)| (a.channel, b.channel)).collect();
                Ok((g, kids))
            })
            .collect::<Result<_>>()?;
        let mut ks = Vec::with_capacity(step.len());
        let mut next = Vec::with_capacity(step.len() * ell);
        for (g, kids) in step {
            ks.push(g);
            next.extend(kids);
        }
        kernels.push(ks);
        level = next;
    }
    let stats = level
        .iter()
        .map(|(wl, vl)| {
            let pw = param_vector(wl);
            let pv = param_vector(vl);
            LeafStat {
                h_w: conditional_entropy(wl),
                h_v: conditional_entropy(vl),
                pe_w: pw.pe,
                z_w: pw.z,
                t_v: pv.t,
                exact: true,
                pe_exact: true,
            }
        })
        .collect();
    Ok((kernels, stats))
}

fn mc_tree(w: &Channel, ell: usize, n: usize, policy: &KernelPolicy, seed: u64, samples: usize) -> Result<Tree> {
    if matches!(policy, KernelPolicy::Search { .. }) {
        return Err(Error::InvalidArgument("kernel search needs exact node channels".into()));
    }
    if samples < 1 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let kernels: Vec<Vec<Kernel>> = (0..n)
        .map(|d| (0..ell.pow(d as u32)).map(|r| fixed_or_random(policy, w.field(), ell, seed, d, r)).collect())
        .collect();
    let shell = CodeSpec {
        field: w.field().clone(),
        ell,
        n,
        pi: 0.0,
        theta: 0.0,
        seed,
        input_dist: w.input_dist().to_vec(),
        kernels,
        info_set: Vec::new(),
        frozen_class: BTreeMap::new(),
        leaf_stats: Vec::new(),
    };
    let n_leaves = shell.block_length();
    let q = w.q();
    let ln_q = (q as f64).ln();
    const CHUNK: usize = 256;
    let chunks: Vec<(usize, usize)> = (0..samples).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(samples))).collect();
    // per leaf: [−log γ_W(u), −log γ_V(u), Z(γ_W), T(γ_V)]
    let partial: Vec<Vec<[f64; 4]>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![[0.0; 4]; n_leaves];
            for s in lo..hi {
                let mut rng = rng_from(derive_seed(seed, &[0x6d63, s as u64]));
                let mut x = Vec::with_capacity(n_leaves);
                let mut y = Vec::with_capacity(n_leaves);
                for _ in 0..n_leaves {
                    let (xs, ys) = draw_use(w, &mut rng);
                    x.push(FieldElement(xs as u16));
                    y.push(ys);
                }
                let u = tree_inverse(&shell, &x);
                let pins = channel_pins(w, w.input_dist(), &y);
                let mut sc = Sc::new(&shell);
                sc.run(Some(pins), &mut |leaf, gw, gv| {
                    let truth = u[leaf];
                    let gw = gw.expect("genie pass carries W pins");
                    let a = &mut acc[leaf];
                    a[0] -= gw[truth.index()].ln() / ln_q;
                    a[1] -= gv[truth.index()].ln() / ln_q;
                    a[2] += bhattacharyya(gw);
                    a[3] += gv.iter().map(|p| (p - 1.0 / q as f64).abs()).sum::<f64>();
                    truth
                });
            }
            acc
        })
        .collect();
    let mut total = vec![[0.0; 4]; n_leaves];
    for part in partial {
        for (t, p) in total.iter_mut().zip(part) {
            for k in 0..4 {
                t[k] += p[k];
            }
        }
    }
    let sf = samples as f64;
    let q1 = q as f64 - 1.0;
    let stats = total
        .into_iter()
        .map(|t| {
            let z = t[2] / sf;
            LeafStat {
                h_w: (t[0] / sf).clamp(0.0, 1.0),
                h_v: (t[1] / sf).clamp(0.0, 1.0),
                pe_w: (q1 * z / 2.0).min(1.0),
                z_w: z,
                t_v: t[3] / sf,
                exact: false,
                pe_exact: false,
            }
        })
        .collect();
    Ok((shell.kernels, stats))
}

fn bhattacharyya(post: &[f64]) -> f64 {
    let q = post.len();
    let s: f64 = post.iter().map(|p| p.sqrt()).sum();
    let sq: f64 = post.iter().sum();
    (s * s - sq) / (q as f64 - 1.0)
}

/// `table[u] = Π_j β_j[(uG)_j]` over all `u ∈ F_q^ℓ`, `u_1` most significant.
pub fn joint_table(g: &Kernel, pins: &[Vec<f64>]) -> Vec<f64> {
    let flat: Vec<f64> = pins.iter().flatten().copied().collect();
    let mut table = Vec::new();
    fill_table(g, &flat, &mut table);
    table
}

fn fill_table(g: &Kernel, pins: &[f64], table: &mut Vec<f64>) {
    let q = g.field().q();
    let ell = g.ell();
    let size = q.pow(ell as u32);
    table.clear();
    table.resize(size, 0.0);
    let mut u = vec![FieldElement::ZERO; ell];
    let mut x = vec![FieldElement::ZERO; ell];
    for (ui, slot) in table.iter_mut().enumerate() {
        crate::transform::digits_msb(ui, q, &mut u);
        g.apply(&u, &mut x);
        *slot = x.iter().enumerate().map(|(j, xj)| pins[j * q + xj.index()]).product();
    }
}

/// Posterior of `u_i` (1-based) given the first `i − 1` decisions. Returns
/// `None` if the decisions leave no mass.
pub fn block_posterior(table: &[f64], q: usize, ell: usize, decided: &[FieldElement], i: usize) -> Option<Vec<f64>> {
    let prefix = decided[..i - 1].iter().fold(0usize, |a, d| a * q + d.index());
    let tail = q.pow((ell - i) as u32);
    let mut post: Vec<f64> = (0..q)
        .map(|a| table[(prefix * q + a) * tail..][..tail].iter().sum())
        .collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    post.iter_mut().for_each(|p| *p /= total);
    Some(post)
}

/// `γ[u] ∝ Σ_{u_{i+1}^ℓ} Π_j β_j[((û_1^{i−1}, u, u_{i+1}^ℓ) G)_j]`.
pub fn node_posterior(g: &Kernel, pins: &[Vec<f64>], decided: &[FieldElement], i: usize) -> Result<Vec<f64>> {
    let ell = g.ell();
    if pins.len() != ell || i < 1 || i > ell || decided.len() + 1 < i {
        return Err(Error::DimensionMismatch("pins, decisions and index disagree".into()));
    }
    let table = joint_table(g, pins);
    block_posterior(&table, g.field().q(), ell, decided, i).ok_or(Error::ZeroMass)
}

/// Per-position posteriors `β_t[x] ∝ prior(x) W(y_t | x)`, uniform where the
/// output is unreachable.
pub fn channel_pins(w: &Channel, prior: &[f64], y: &[usize]) -> Vec<f64> {
    let q = w.q();
    let mut out = Vec::with_capacity(y.len() * q);
    for &yt in y {
        let col: Vec<f64> = (0..q).map(|x| prior[x] * w.w(x, yt)).collect();
        let s: f64 = col.iter().sum();
        if s > 0.0 {
            out.extend(col.iter().map(|c| c / s));
        } else {
            out.extend(std::iter::repeat_n(1.0 / q as f64, q));
        }
    }
    out
}

/// The SC engine shared by the decoder, the encoder and the genie estimator.
struct Sc<'a> {
    spec: &'a CodeSpec,
    prior: Vec<f64>,
    du_activations: u64,
    failure: bool,
}

type LeafFn<'b> = dyn FnMut(usize, Option<&[f64]>, &[f64]) -> FieldElement + 'b;

impl<'a> Sc<'a> {
    fn new(spec: &'a CodeSpec) -> Sc<'a> {
        Sc { spec, prior: spec.input_dist.clone(), du_activations: 0, failure: false }
    }

    /// Runs both trees; returns the root symbols `x`.
    fn run(&mut self, w_pins: Option<Vec<f64>>, leaf: &mut LeafFn<'_>) -> Vec<FieldElement> {
        let n_sym = self.spec.block_length();
        let v_pins: Vec<f64> = (0..n_sym).flat_map(|_| self.prior.iter().copied()).collect();
        self.node(0, 0, w_pins, v_pins, leaf)
    }

    fn posterior_or_uniform(&mut self, table: &[f64], decided: &[FieldElement], i: usize) -> Vec<f64> {
        let q = self.spec.q();
        match block_posterior(table, q, self.spec.ell, decided, i) {
            Some(p) => p,
            None => {
                self.failure = true;
                vec![1.0 / q as f64; q]
            }
        }
    }

    fn node(&mut self, depth: usize, rank: usize, w_pins: Option<Vec<f64>>, v_pins: Vec<f64>, leaf: &mut LeafFn<'_>) -> Vec<FieldElement> {
        let spec = self.spec;
        let q = spec.q();
        let ell = spec.ell;
        if depth == spec.n {
            return vec![leaf(rank, w_pins.as_deref(), &v_pins)];
        }
        let g = spec.kernel(depth, rank);
        let copies = ell.pow((spec.n - depth - 1) as u32);
        self.du_activations += copies as u64;
        let gather = |pins: &[f64], c: usize| -> Vec<f64> {
            (0..ell).flat_map(|k| pins[(k * copies + c) * q..][..q].iter().copied()).collect()
        };
        let mut w_tables = Vec::new();
        if let Some(wp) = &w_pins {
            w_tables = (0..copies)
                .map(|c| {
                    let mut t = Vec::new();
                    fill_table(g, &gather(wp, c), &mut t);
                    t
                })
                .collect();
        }
        let v_tables: Vec<Vec<f64>> = (0..copies)
            .map(|c| {
                let mut t = Vec::new();
                fill_table(g, &gather(&v_pins, c), &mut t);
                t
            })
            .collect();
        let mut decided = vec![vec![FieldElement::ZERO; ell]; copies];
        for j in 1..=ell {
            let mut wc = w_pins.as_ref().map(|_| Vec::with_capacity(copies * q));
            let mut vc = Vec::with_capacity(copies * q);
            for c in 0..copies {
                if let Some(wc) = wc.as_mut() {
                    let p = self.posterior_or_uniform(&w_tables[c], &decided[c], j);
                    wc.extend(p);
                }
                let p = self.posterior_or_uniform(&v_tables[c], &decided[c], j);
                vc.extend(p);
            }
            let xj = self.node(depth + 1, rank * ell + j - 1, wc, vc, leaf);
            for c in 0..copies {
                decided[c][j - 1] = xj[c];
            }
        }
        let mut out = vec![FieldElement::ZERO; copies * ell];
        let mut x = vec![FieldElement::ZERO; ell];
        for (c, u) in decided.iter().enumerate() {
            g.apply(u, &mut x);
            for k in 0..ell {
                out[k * copies + c] = x[k];
            }
        }
        out
    }
}

/// Maps leaf symbols (by rank) to the codeword.
pub fn tree_forward(spec: &CodeSpec, u: &[FieldElement]) -> Vec<FieldElement> {
    fn go(spec: &CodeSpec, depth: usize, rank: usize, u: &[FieldElement]) -> Vec<FieldElement> {
        if depth == spec.n {
            return vec![u[0]];
        }
        let ell = spec.ell;
        let copies = ell.pow((spec.n - depth - 1) as u32);
        let kids: Vec<Vec<FieldElement>> =
            (0..ell).map(|j| go(spec, depth + 1, rank * ell + j, &u[j * copies..(j + 1) * copies])).collect();
        let g = spec.kernel(depth, rank);
        let mut out = vec![FieldElement::ZERO; copies * ell];
        let mut v = vec![FieldElement::ZERO; ell];
        let mut x = vec![FieldElement::ZERO; ell];
        for c in 0..copies {
            for j in 0..ell {
                v[j] = kids[j][c];
            }
            g.apply(&v, &mut x);
            for k in 0..ell {
                out[k * copies + c] = x[k];
            }
        }
        out
    }
    go(spec, 0, 0, u)
}

/// Inverse of [`tree_forward`].
pub fn tree_inverse(spec: &CodeSpec, x: &[FieldElement]) -> Vec<FieldElement> {
    fn go(spec: &CodeSpec, depth: usize, rank: usize, x: &[FieldElement], out: &mut [FieldElement]) {
        if depth == spec.n {
            out[0] = x[0];
            return;
        }
        let ell = spec.ell;
        let copies = ell.pow((spec.n - depth - 1) as u32);
        let g = spec.kernel(depth, rank);
        let mut kids = vec![vec![FieldElement::ZERO; copies]; ell];
        let mut v = vec![FieldElement::ZERO; ell];
        let mut u = vec![FieldElement::ZERO; ell];
        for c in 0..copies {
            for k in 0..ell {
                v[k] = x[k * copies + c];
            }
            g.apply_inverse(&v, &mut u);
            for j in 0..ell {
                kids[j][c] = u[j];
            }
        }
        for (j, kid) in kids.iter().enumerate() {
            go(spec, depth + 1, rank * ell + j, kid, &mut out[j * copies..(j + 1) * copies]);
        }
    }
    let mut out = vec![FieldElement::ZERO; x.len()];
    go(spec, 0, 0, x, &mut out);
    out
}

/// Shared uniform variates, one per frozen leaf in lexicographic order.
pub fn shared_variates(spec: &CodeSpec, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let roles = spec.roles();
    roles
        .iter()
        .map(|r| match r {
            LeafRole::Info => f64::NAN,
            LeafRole::Frozen(_) => rng.gen::<f64>(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenSymbol {
    pub leaf: usize,
    pub symbol: u16,
    pub variate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutcome {
    pub codeword: Vec<FieldElement>,
    pub leaves: Vec<FieldElement>,
    pub frozen: Vec<FrozenSymbol>,
    pub du_activations: u64,
}

/// Randomized-rounding encoder.
pub fn encode(spec: &CodeSpec, message: &[FieldElement], seed: u64) -> Result<EncodeOutcome> {
    if message.len() != spec.info_set.len() {
        return Err(Error::DimensionMismatch(format!(
            "message has {} symbols, the code carries {}",
            message.len(),
            spec.info_set.len()
        )));
    }
    if let Some(m) = message.iter().find(|m| m.index() >= spec.q()) {
        return Err(Error::ElementOutOfRange { value: m.0 as u64, q: spec.q() });
    }
    let roles = spec.roles();
    let variates = shared_variates(spec, seed);
    let mut leaves = vec![FieldElement::ZERO; spec.block_length()];
    let mut frozen = Vec::new();
    let mut next = 0;
    let mut sc = Sc::new(spec);
    let codeword = sc.run(None, &mut |leaf, _, gv| {
        let sym = match roles[leaf] {
            LeafRole::Info => {
                next += 1;
                message[next - 1]
            }
            LeafRole::Frozen(_) => {
                let s = FieldElement(inverse_cdf(gv, variates[leaf]) as u16);
                frozen.push(FrozenSymbol { leaf, symbol: s.0, variate: variates[leaf] });
                s
            }
        };
        leaves[leaf] = sym;
        sym
    });
    Ok(EncodeOutcome { codeword, leaves, frozen, du_activations: sc.du_activations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub message: Vec<FieldElement>,
    pub leaves: Vec<FieldElement>,
    pub du_activations: u64,
    /// Some posterior had zero mass under the hard decisions.
    pub failure: bool,
}

/// Received block: output symbols or per-position posterior rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Symbols(Vec<usize>),
    Posteriors(Vec<Vec<f64>>),
}

/// Successive-cancellation decoder with shared-randomness frozen symbols.
pub fn decode(spec: &CodeSpec, w: Option<&Channel>, received: &Received, seed: u64) -> Result<DecodeOutcome> {
    let n_sym = spec.block_length();
    let q = spec.q();
    let pins = match received {
        Received::Symbols(y) => {
            let w = w.ok_or_else(|| Error::InvalidArgument("output symbols need a channel".into()))?;
            if y.len() != n_sym {
                return Err(Error::DimensionMismatch(format!("received {} symbols, expected {n_sym}", y.len())));
            }
            if let Some(&bad) = y.iter().find(|&&s| s >= w.output_size()) {
                return Err(Error::InvalidArgument(format!("output symbol {bad} outside the channel alphabet")));
            }
            if **w.field() != *spec.field {
                return Err(Error::DimensionMismatch("channel and code use different fields".into()));
            }
            channel_pins(w, &spec.input_dist, y)
        }
        Received::Posteriors(rows) => {
            if rows.len() != n_sym || rows.iter().any(|r| r.len() != q) {
                return Err(Error::DimensionMismatch(format!("need {n_sym} posterior rows of length {q}")));
            }
            rows.iter().flatten().copied().collect()
        }
    };
    Ok(decode_pins(spec, pins, seed))
}

fn decode_pins(spec: &CodeSpec, pins: Vec<f64>, seed: u64) -> DecodeOutcome {
    let roles = spec.roles();
    let variates = shared_variates(spec, seed);
    let mut leaves = vec![FieldElement::ZERO; spec.block_length()];
    let mut sc = Sc::new(spec);
    sc.run(Some(pins), &mut |leaf, gw, gv| {
        let sym = match roles[leaf] {
            LeafRole::Info => FieldElement(argmax(gw.expect("decoder carries W pins")) as u16),
            LeafRole::Frozen(_) => FieldElement(inverse_cdf(gv, variates[leaf]) as u16),
        };
        leaves[leaf] = sym;
        sym
    });
    let message = spec.info_set.iter().map(|&r| leaves[r]).collect();
    DecodeOutcome { message, leaves, du_activations: sc.du_activations, failure: sc.failure }
}

/// Decoder whose hard decisions are replaced by the true leaf symbols; used to
/// check that frozen symbols are reproduced under correct past decisions.
pub fn genie_frozen(spec: &CodeSpec, truth: &[FieldElement], seed: u64) -> Vec<FieldElement> {
    let roles = spec.roles();
    let variates = shared_variates(spec, seed);
    let q = spec.q();
    let flat: Vec<f64> = vec![1.0 / q as f64; spec.block_length() * q];
    let mut frozen = Vec::new();
    let mut sc = Sc::new(spec);
    sc.run(Some(flat), &mut |leaf, _, gv| {
        if let LeafRole::Frozen(_) = roles[leaf] {
            frozen.push(FieldElement(inverse_cdf(gv, variates[leaf]) as u16));
        }
        truth[leaf]
    });
    frozen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: usize,
    pub block_errors: u64,
    pub symbol_errors: u64,
    pub bler: f64,
    pub ber: f64,
    pub rate: f64,
    pub union_bound: f64,
    pub union_bound_exact: bool,
    pub capacity: f64,
    pub mdp_ratio: f64,
    pub decode_failures: u64,
    /// Codeword symbol histogram over all trials.
    pub input_counts: Vec<u64>,
    /// Total variation between that histogram and the input law.
    pub input_tv: f64,
}

/// Monte Carlo block error simulation over `w`.
pub fn simulate(spec: &CodeSpec, w: &Channel, trials: usize, seed: u64) -> Result<SimReport> {
    if trials < 1 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if **w.field() != *spec.field {
        return Err(Error::DimensionMismatch("channel and code use different fields".into()));
    }
    let q = spec.q();
    let k = spec.info_set.len();
    let results: Vec<(bool, u64, bool, Vec<u64>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(derive_seed(seed, &[t as u64]));
            let msg: Vec<FieldElement> = (0..k).map(|_| FieldElement(rng.gen_range(0..q) as u16)).collect();
            let shared = rng.gen::<u64>();
            let enc = encode(spec, &msg, shared).expect("message length matches");
            let mut hist = vec![0u64; q];
            let y: Vec<usize> = enc
                .codeword
                .iter()
                .map(|x| {
                    hist[x.index()] += 1;
                    inverse_cdf(w.row(x.index()), rng.gen::<f64>())
                })
                .collect();
            let dec = decode(spec, Some(w), &Received::Symbols(y), shared).expect("block length matches");
            let errs = msg.iter().zip(&dec.message).filter(|(a, b)| a != b).count() as u64;
            (errs > 0, errs, dec.failure, hist)
        })
        .collect();
    let mut block_errors = 0;
    let mut symbol_errors = 0;
    let mut failures = 0;
    let mut input_counts = vec![0u64; q];
    for (be, se, fail, hist) in results {
        block_errors += be as u64;
        symbol_errors += se;
        failures += fail as u64;
        for (a, b) in input_counts.iter_mut().zip(hist) {
            *a += b;
        }
    }
    let bler = block_errors as f64 / trials as f64;
    let ber = if k == 0 { 0.0 } else { symbol_errors as f64 / (trials * k) as f64 };
    let capacity = param_vector(w).i;
    let rate = spec.rate();
    let n_sym = spec.block_length() as f64;
    let gap = (capacity - rate) * (q as f64).ln();
    let mdp_ratio = n_sym * gap * gap / bler.ln().abs().max(1e-12);
    let total: u64 = input_counts.iter().sum();
    let input_tv =
        0.5 * input_counts.iter().zip(&spec.input_dist).map(|(&c, &p)| (c as f64 / total as f64 - p).abs()).sum::<f64>();
    Ok(SimReport {
        trials,
        block_errors,
        symbol_errors,
        bler,
        ber,
        rate,
        union_bound: spec.union_bound(),
        union_bound_exact: spec.union_bound_exact(),
        capacity,
        mdp_ratio,
        decode_failures: failures,
        input_counts,
        input_tv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TransformConfig {
        TransformConfig::default()
    }

    fn bec_spec() -> CodeSpec {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        construct(&w, 2, 3, 0.2, &KernelPolicy::Fixed(g), EstimatorPolicy::Exact, 1, &cfg()).unwrap()
    }

    fn fe(v: u16) -> FieldElement {
        FieldElement(v)
    }

    #[test]
    fn bec_rate_three_eighths() {
        let spec = bec_spec();
        assert!((spec.theta - (-(2f64.powf(0.6))).exp()).abs() < 1e-15);
        assert!((spec.theta - 0.2196).abs() < 1e-3);
        let hs: Vec<f64> = spec.info_set.iter().map(|&r| spec.leaf_stats[r].h_w).collect();
        for (h, e) in hs.iter().zip([0.19140625, 0.12109375, 0.00390625]) {
            assert!((h - e).abs() < 1e-12);
        }
        assert_eq!(spec.rate(), 3.0 / 8.0);
        assert!(spec.leaf_stats.iter().all(|s| (s.h_v - 1.0).abs() < 1e-12));
        assert!((spec.union_bound() - 0.158203125).abs() < 1e-12);
    }

    #[test]
    fn large_pi_gives_empty_code() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let spec = construct(&w, 2, 3, 3.0, &KernelPolicy::Fixed(g), EstimatorPolicy::Exact, 1, &cfg()).unwrap();
        assert!(spec.info_set.is_empty());
        assert_eq!(spec.rate(), 0.0);
    }

    #[test]
    fn node_posterior_examples() {
        let f = FieldSpec::new(2, 1).unwrap();
        let g = Kernel::arikan(&f);
        let p = node_posterior(&g, &[vec![0.5, 0.5], vec![0.5, 0.5]], &[], 1).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = node_posterior(&g, &[vec![1.0, 0.0], vec![0.5, 0.5]], &[], 1).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let e = node_posterior(&g, &[vec![1.0, 0.0], vec![1.0, 0.0]], &[fe(1)], 2).unwrap_err();
        assert_eq!(e, Error::ZeroMass);
    }

    #[test]
    fn tree_maps_are_inverse() {
        let w = Channel::bsc(0.1).unwrap();
        let spec = construct(&w, 2, 3, 0.2, &KernelPolicy::Random, EstimatorPolicy::Exact, 4, &cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let u: Vec<FieldElement> = (0..8).map(|_| fe(rng.gen_range(0..2))).collect();
            assert_eq!(tree_inverse(&spec, &tree_forward(&spec, &u)), u);
        }
    }

    #[test]
    fn encoder_matches_tree_forward() {
        let spec = bec_spec();
        let enc = encode(&spec, &[fe(1), fe(0), fe(1)], 9).unwrap();
        assert_eq!(tree_forward(&spec, &enc.leaves), enc.codeword);
    }

    #[test]
    fn noiseless_round_trip() {
        let f = FieldSpec::new(3, 1).unwrap();
        let w = Channel::noiseless(&f);
        let spec = construct(&w, 2, 3, 0.2, &KernelPolicy::Random, EstimatorPolicy::Exact, 3, &cfg()).unwrap();
        assert_eq!(spec.info_set.len(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in 0..20 {
            let msg: Vec<FieldElement> = (0..8).map(|_| fe(rng.gen_range(0..3))).collect();
            let enc = encode(&spec, &msg, s).unwrap();
            let y: Vec<usize> = enc.codeword.iter().map(|x| x.index()).collect();
            let dec = decode(&spec, Some(&w), &Received::Symbols(y), s).unwrap();
            assert_eq!(dec.message, msg);
            assert_eq!(dec.du_activations, 3 * 4);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let spec = bec_spec();
        let a = encode(&spec, &[fe(1), fe(1), fe(0)], 42).unwrap();
        let b = encode(&spec, &[fe(1), fe(1), fe(0)], 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_code_depends_only_on_seed() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let spec = construct(&w, 2, 3, 3.0, &KernelPolicy::Fixed(g), EstimatorPolicy::Exact, 1, &cfg()).unwrap();
        assert_eq!(encode(&spec, &[], 5).unwrap(), encode(&spec, &[], 5).unwrap());
    }

    #[test]
    fn all_erased_block() {
        let spec = bec_spec();
        let w = Channel::bec(0.5).unwrap();
        let dec = decode(&spec, Some(&w), &Received::Symbols(vec![2; 8]), 7).unwrap();
        // every information posterior is flat, so argmax returns 0
        assert!(dec.message.iter().all(|m| m.0 == 0));
    }

    #[test]
    fn uniform_marginals_on_bec_spec() {
        let spec = bec_spec();
        let trials = 10_000;
        let mut ones = vec![0usize; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in 0..trials {
            let msg: Vec<FieldElement> = (0..3).map(|_| fe(rng.gen_range(0..2))).collect();
            let enc = encode(&spec, &msg, s as u64).unwrap();
            for (o, x) in ones.iter_mut().zip(&enc.codeword) {
                *o += x.index();
            }
        }
        let slack = 4.0 * (0.25f64 / trials as f64).sqrt();
        for &o in &ones {
            assert!((o as f64 / trials as f64 - 0.5).abs() <= slack);
        }
    }

    #[test]
    fn genie_reproduces_frozen_symbols() {
        let w = Channel::z_channel(0.5).unwrap();
        let spec = construct(&w, 2, 3, 0.1, &KernelPolicy::Random, EstimatorPolicy::Exact, 2, &cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in 0..50 {
            let msg: Vec<FieldElement> = (0..spec.info_set.len()).map(|_| fe(rng.gen_range(0..2))).collect();
            let enc = encode(&spec, &msg, s).unwrap();
            let frozen: Vec<FieldElement> = enc.frozen.iter().map(|f| fe(f.symbol)).collect();
            assert_eq!(genie_frozen(&spec, &enc.leaves, s), frozen);
        }
    }

    #[test]
    fn simulation_noiseless_and_repro() {
        let f = FieldSpec::new(2, 1).unwrap();
        let w = Channel::noiseless(&f);
        let g = Kernel::arikan(&f);
        let spec = construct(&w, 2, 2, 0.2, &KernelPolicy::Fixed(g), EstimatorPolicy::Exact, 1, &cfg()).unwrap();
        assert_eq!(simulate(&spec, &w, 50, 3).unwrap().bler, 0.0);
        let b = bec_spec();
        let e = Channel::bec(0.5).unwrap();
        assert_eq!(simulate(&b, &e, 1, 7).unwrap(), simulate(&b, &e, 1, 7).unwrap());
    }

    #[test]
    fn monte_carlo_construction_tracks_exact() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let exact = bec_spec();
        let mc = construct(&w, 2, 3, 0.2, &KernelPolicy::Fixed(g), EstimatorPolicy::MonteCarlo { samples: 20_000 }, 1, &cfg())
            .unwrap();
        for (a, b) in exact.leaf_stats.iter().zip(&mc.leaf_stats) {
            assert!((a.h_w - b.h_w).abs() < 0.03, "{} vs {}", a.h_w, b.h_w);
            assert!((a.z_w - b.z_w).abs() < 0.03);
            assert!(!b.exact && !b.pe_exact);
        }
    }

    #[test]
    fn dominated_input_yields_dependent_reliable_leaves() {
        let f = FieldSpec::new(3, 1).unwrap();
        let rows = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]];
        let base = Channel::new(&f, rows, Channel::uniform_input(&f)).unwrap();
        let w = base.with_input(base.capacity_input(1e-11).unwrap()).unwrap();
        assert!(w.input_dist()[1] < 1e-9);
        let spec = construct(&w, 2, 3, 0.1, &KernelPolicy::Random, EstimatorPolicy::Exact, 6, &cfg()).unwrap();
        let c: Vec<usize> = spec.frozen_class.iter().filter(|(_, c)| **c == FrozenClass::C).map(|(r, _)| *r).collect();
        assert!(!c.is_empty());
        for r in c {
            let s = &spec.leaf_stats[r];
            assert!(s.h_v < spec.theta && s.h_w < spec.theta);
        }
    }

    #[test]
    fn binary_capacity_inputs_rule_out_class_c_at_four_leaves() {
        // leaf entropies of the flattened tree sum to N·H(X) and each is at most 1
        let w = Channel::z_channel(0.5).unwrap();
        let hx = crate::params::entropy_base(w.input_dist(), 2.0);
        let spec = construct(&w, 2, 2, 0.1, &KernelPolicy::Random, EstimatorPolicy::Exact, 1, &cfg()).unwrap();
        let floor = 4.0 * hx - 3.0;
        assert!(floor > 0.5);
        assert!(spec.leaf_stats.iter().all(|s| s.h_v >= floor - 1e-9));
        assert!(spec.frozen_class.values().all(|c| *c == FrozenClass::B));
    }

    #[test]
    fn increasing_pi_never_grows_info_set() {
        let w = Channel::bsc(0.05).unwrap();
        let g = Kernel::arikan(w.field());
        let mut prev = usize::MAX;
        for pi in [0.0, 0.1, 0.2, 0.3, 0.5, 0.8] {
            let s = construct(&w, 2, 3, pi, &KernelPolicy::Fixed(g.clone()), EstimatorPolicy::Exact, 1, &cfg()).unwrap();
            assert!(s.info_set.len() <= prev);
            prev = s.info_set.len();
        }
    }

    proptest::proptest! {
        #[test]
        fn rank_path_bijection(ell in 2usize..5, depth in 0usize..5, seed in 0u64..1000) {
            let rank = (seed as usize) % ell.pow(depth as u32);
            let p = rank_to_path(rank, ell, depth);
            proptest::prop_assert!(p.iter().all(|&k| k < ell));
            proptest::prop_assert_eq!(path_to_rank(&p, ell), rank);
        }

        #[test]
        fn node_posterior_is_normalized(seed in 0u64..500, i in 1usize..4) {
            let f = FieldSpec::new(3, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = crate::gf::sample_invertible(&f, 3, &mut rng);
            let pins: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let v: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let t: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / t).collect()
                })
                .collect();
            let decided: Vec<FieldElement> = (0..i - 1).map(|_| fe(rng.gen_range(0..3))).collect();
            let p = node_posterior(&g, &pins, &decided, i).unwrap();
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn noiseless_link_recovers_any_message(msg in proptest::collection::vec(0u16..3, 8), seed in 0u64..10_000) {
            let f = FieldSpec::new(3, 1).unwrap();
            let w = Channel::noiseless(&f);
            let spec = construct(&w, 2, 3, 0.2, &KernelPolicy::Random, EstimatorPolicy::Exact, 3, &cfg()).unwrap();
            let msg: Vec<FieldElement> = msg.into_iter().map(fe).collect();
            let enc = encode(&spec, &msg, seed).unwrap();
            let y: Vec<usize> = enc.codeword.iter().map(|x| x.index()).collect();
            let dec = decode(&spec, Some(&w), &Received::Symbols(y), seed).unwrap();
            proptest::prop_assert_eq!(dec.message, msg);
        }
    }
}
