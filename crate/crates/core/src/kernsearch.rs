//! Kernel certification and the per-node random kernel search.
//!
//! A kernel is checked at a node's measured `(Z_mad, S_max)`. For each index
//! `i` with `d_i = ⌈i²/3ℓ⌉`:
//!
//! * phase I, when `i > √(3ℓ)`: the i-th coset has minimum weight at least `d_i`;
//! * phase II: `f_GZ^{(i)}(z) ≤ ℓ(1+(q−1)z)^{ℓ−d_i}((q−1)z)^{d_i}`.
//!
//! The S side runs the same pair on the dual enumerator at index `ℓ+1−i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::ftpc::{coset_enumerator, dual_coset_enumerator, WeightEnumerator};
use crate::gf::{sample_invertible, FieldSpec, Kernel};
use crate::params::{conditional_entropy, param_vector};
use crate::transform::{estimate_entropy_mc, transform_all, TransformConfig};

/// `⌈i² / 3ℓ⌉`.
pub fn required_distance(i: usize, ell: usize) -> usize {
    (i * i).div_ceil(3 * ell)
}

/// Whether phase I applies at `i`, i.e. `i > √(3ℓ)`.
pub fn phase_one_applies(i: usize, ell: usize) -> bool {
    i * i > 3 * ell
}

/// Right side of the sufficient enumerator bound at distance `d`.
pub fn enumerator_bound(ell: usize, q: usize, d: usize, z: f64) -> f64 {
    let q1 = q as f64 - 1.0;
    ell as f64 * (1.0 + q1 * z).powi((ell - d) as i32) * (q1 * z).powi(d as i32)
}

/// Relative slack so that exact ties survive rounding.
fn le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + 1e-12) + 1e-300
}

pub fn min_coset_weight(g: &Kernel, i: usize) -> Result<usize> {
    Ok(coset_enumerator(g, i)?.min_weight())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub i: usize,
    pub d: usize,
    pub phase_one: bool,
    pub min_weight: usize,
    pub dual_min_weight: usize,
    pub ldp_z_lhs: f64,
    pub ldp_z_rhs: f64,
    pub ldp_s_lhs: f64,
    pub ldp_s_rhs: f64,
    pub phase_one_z_pass: bool,
    pub phase_one_s_pass: bool,
    pub ldp_z_pass: bool,
    pub ldp_s_pass: bool,
}

impl IndexRecord {
    pub fn pass(&self) -> bool {
        self.phase_one_z_pass && self.phase_one_s_pass && self.ldp_z_pass && self.ldp_s_pass
    }

    pub fn z_pass(&self) -> bool {
        self.phase_one_z_pass && self.ldp_z_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRecord {
    pub alpha: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// `rhs ≥ (1/2)^α`, so no channel can fail.
    pub trivial: bool,
    pub exact: bool,
    pub entropies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub ell: usize,
    pub q: usize,
    pub z: f64,
    pub s: f64,
    pub records: Vec<IndexRecord>,
    pub clt: Option<CltRecord>,
    pub overall: bool,
}

/// Phase I and II checks at `(z, s)`.
pub fn certify_ldp(g: &Kernel, z: f64, s: f64) -> Result<CertReport> {
    let ell = g.ell();
    let q = g.field().q();
    let q1 = q as f64 - 1.0;
    for (name, v) in [("z", z), ("s", s)] {
        if !(0.0..=q1 + 1e-12).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, q-1]")));
        }
    }
    let primal: Vec<WeightEnumerator> = (1..=ell).map(|i| coset_enumerator(g, i)).collect::<Result<_>>()?;
    let dual: Vec<WeightEnumerator> = (1..=ell).map(|i| dual_coset_enumerator(g, i)).collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(ell);
    for i in 1..=ell {
        let d = required_distance(i, ell);
        let phase_one = phase_one_applies(i, ell);
        let fz = &primal[i - 1];
        let fs = &dual[ell - i];
        let (zl, zr) = (fz.eval(z), enumerator_bound(ell, q, d, z));
        let (sl, sr) = (fs.eval(s), enumerator_bound(ell, q, d, s));
        records.push(IndexRecord {
            i,
            d,
            phase_one,
            min_weight: fz.min_weight(),
            dual_min_weight: fs.min_weight(),
            ldp_z_lhs: zl,
            ldp_z_rhs: zr,
            ldp_s_lhs: sl,
            ldp_s_rhs: sr,
            phase_one_z_pass: !phase_one || fz.min_weight() >= d,
            phase_one_s_pass: !phase_one || fs.min_weight() >= d,
            ldp_z_pass: le(zl, zr),
            ldp_s_pass: le(sl, sr),
        });
    }
    let overall = records.iter().all(IndexRecord::pass);
    Ok(CertReport { ell, q, z, s, records, clt: None, overall })
}

/// `α = ln(ln ℓ) / ln ℓ`.
pub fn clt_alpha(ell: usize) -> f64 {
    let l = (ell as f64).ln();
    l.ln() / l
}

/// `h_α(z) = min(z, 1 − z)^α`.
pub fn h_alpha(z: f64, alpha: f64) -> f64 {
    let m = z.min(1.0 - z).max(0.0);
    if m == 0.0 {
        0.0
    } else {
        m.powf(alpha)
    }
}

fn clt_record(ell: usize, entropies: Vec<f64>, exact: bool) -> CltRecord {
    let alpha = clt_alpha(ell);
    let lhs = entropies.iter().map(|&h| h_alpha(h, alpha)).sum::<f64>() / ell as f64;
    let rhs = 4.0 * (ell as f64).powf(-0.5 + alpha);
    CltRecord { alpha, lhs, rhs, pass: lhs < rhs, trivial: rhs >= 0.5f64.powf(alpha), exact, entropies }
}

fn require_clt_ell(ell: usize) -> Result<()> {
    if ell < 3 {
        return Err(Error::InvalidArgument(format!("the entropy check needs ℓ ≥ 3, got {ell}")));
    }
    Ok(())
}

/// `(1/ℓ) Σ h_α(H(W^{(i)})) < 4 ℓ^{−1/2+α}` from exact transforms.
pub fn certify_clt(g: &Kernel, w: &Channel, config: &TransformConfig) -> Result<CltRecord> {
    require_clt_ell(g.ell())?;
    let hs = transform_all(w, g, config)?.iter().map(|c| conditional_entropy(&c.channel)).collect();
    Ok(clt_record(g.ell(), hs, true))
}

/// As [`certify_clt`], with Monte Carlo entropies.
pub fn certify_clt_mc<R: Rng + ?Sized>(
    g: &Kernel,
    w: &Channel,
    samples: usize,
    rng: &mut R,
    config: &TransformConfig,
) -> Result<CltRecord> {
    require_clt_ell(g.ell())?;
    let hs = (1..=g.ell())
        .map(|i| estimate_entropy_mc(w, g, i, samples, rng, config).map(|e| e.mean.clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(clt_record(g.ell(), hs, false))
}

/// Which tree a rejection came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tree {
    W,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    PhaseOneZ,
    PhaseOneS,
    EnumeratorZ,
    EnumeratorS,
    Clt,
    External,
}

/// A failed inequality `lhs ≤ rhs` (or `lhs < rhs` for the entropy check).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub tree: Tree,
    pub check: CheckKind,
    /// 1-based index, absent for whole-kernel checks.
    pub i: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

/// First failing check in a report, for the given tree.
pub fn first_witness(report: &CertReport, tree: Tree) -> Option<Witness> {
    for r in &report.records {
        let cands = [
            (r.phase_one_z_pass, CheckKind::PhaseOneZ, r.d as f64, r.min_weight as f64),
            (r.ldp_z_pass, CheckKind::EnumeratorZ, r.ldp_z_lhs, r.ldp_z_rhs),
            (r.phase_one_s_pass, CheckKind::PhaseOneS, r.d as f64, r.dual_min_weight as f64),
            (r.ldp_s_pass, CheckKind::EnumeratorS, r.ldp_s_lhs, r.ldp_s_rhs),
        ];
        for (ok, check, lhs, rhs) in cands {
            if !ok {
                return Some(Witness { tree, check, i: Some(r.i), lhs, rhs });
            }
        }
    }
    if let Some(c) = &report.clt {
        if !c.pass {
            return Some(Witness { tree, check: CheckKind::Clt, i: None, lhs: c.lhs, rhs: c.rhs });
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub attempt: usize,
    pub kernel: Kernel,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub kernel: Kernel,
    pub attempts: usize,
    pub rejections: Vec<Rejection>,
    pub w_report: CertReport,
    pub v_report: CertReport,
}

/// Full certification of `g` against one node channel.
pub fn certify(g: &Kernel, w: &Channel, config: &TransformConfig) -> Result<CertReport> {
    let p = param_vector(w);
    let mut r = certify_ldp(g, p.zmad.min(p.q as f64 - 1.0), p.smax.min(p.q as f64 - 1.0))?;
    if g.ell() >= 3 {
        let c = certify_clt(g, w, config)?;
        r.overall &= c.pass;
        r.clt = Some(c);
    }
    Ok(r)
}

/// Samples kernels until one certifies against both node channels.
pub fn search<R: Rng + ?Sized>(
    w_node: &Channel,
    v_node: &Channel,
    ell: usize,
    budget: usize,
    rng: &mut R,
    config: &TransformConfig,
) -> Result<SearchOutcome> {
    search_with_hook(w_node, v_node, ell, budget, rng, config, |_| None)
}

/// [`search`] with an additional caller-supplied rejection rule.
pub fn search_with_hook<R: Rng + ?Sized>(
    w_node: &Channel,
    v_node: &Channel,
    ell: usize,
    budget: usize,
    rng: &mut R,
    config: &TransformConfig,
    extra: impl Fn(&Kernel) -> Option<Witness>,
) -> Result<SearchOutcome> {
    if ell < 2 {
        return Err(Error::InvalidArgument("kernels need ℓ ≥ 2".into()));
    }
    let field = w_node.field();
    let mut rejections = Vec::new();
    for attempt in 1..=budget {
        let g = sample_invertible(field, ell, rng);
        let wr = certify(&g, w_node, config)?;
        if let Some(witness) = first_witness(&wr, Tree::W) {
            rejections.push(Rejection { attempt, kernel: g, witness });
            continue;
        }
        let vr = certify(&g, v_node, config)?;
        if let Some(witness) = first_witness(&vr, Tree::V) {
            rejections.push(Rejection { attempt, kernel: g, witness });
            continue;
        }
        if let Some(witness) = extra(&g) {
            rejections.push(Rejection { attempt, kernel: g, witness });
            continue;
        }
        return Ok(SearchOutcome { kernel: g, attempts: attempt, rejections, w_report: wr, v_report: vr });
    }
    Err(Error::BudgetExhausted(budget))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRate {
    pub rate: f64,
    pub bound: f64,
    pub binding: bool,
    pub trials: usize,
    pub failures: usize,
    pub within_bound: Option<bool>,
    #[serde(skip)]
    pub witnesses: Vec<(Kernel, Witness)>,
}

/// `3 q^{−√ℓ/13}`.
pub fn lemma_failure_bound(ell: usize, q: usize) -> f64 {
    3.0 * (q as f64).powf(-(ell as f64).sqrt() / 13.0)
}

/// Fraction of uniform kernels that fail a Z-side check at `z`.
pub fn empirical_failure_rate<R: Rng + ?Sized>(
    field: &std::sync::Arc<FieldSpec>,
    ell: usize,
    z: f64,
    trials: usize,
    rng: &mut R,
) -> Result<FailureRate> {
    if trials < 1 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut witnesses = Vec::new();
    for _ in 0..trials {
        let g = sample_invertible(field, ell, rng);
        let mut r = certify_ldp(&g, z, 0.0)?;
        // the S side is not part of this rate
        for rec in r.records.iter_mut() {
            rec.phase_one_s_pass = true;
            rec.ldp_s_pass = true;
        }
        if let Some(w) = first_witness(&r, Tree::W) {
            witnesses.push((g, w));
        }
    }
    let bound = lemma_failure_bound(ell, field.q());
    let rate = witnesses.len() as f64 / trials as f64;
    let binding = bound < 1.0;
    Ok(FailureRate {
        rate,
        bound,
        binding,
        trials,
        failures: witnesses.len(),
        within_bound: binding.then(|| rate <= bound + 3.0 * (bound / trials as f64).sqrt()),
        witnesses,
    })
}
