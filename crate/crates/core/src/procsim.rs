//! Random-path polarization process and its exact one-step checks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::codec::KernelPolicy;
use crate::error::{Error, Result};
use crate::gf::{sample_invertible, Kernel};
use crate::io::fmt_f64;
use crate::kernsearch::{clt_alpha, h_alpha, search};
use crate::params::{conditional_entropy, param_vector, InequalityCheck, CHECK_TOL};
use crate::transform::{transform, transform_all, TransformConfig};
use crate::util::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergePolicy {
    Lossless,
    /// Posterior quantization to `resolution` cells per coordinate.
    Quantize { resolution: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub depth: usize,
    pub h: f64,
    pub zmad: f64,
    pub smax: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTrace {
    /// 1-based child indices `k_1, …, k_n`.
    pub path: Vec<usize>,
    pub steps: Vec<StepRecord>,
    /// Same path and kernels applied to the flattened channel.
    pub v_steps: Option<Vec<StepRecord>>,
}

fn record(w: &Channel, depth: usize, exact: bool) -> StepRecord {
    let pv = param_vector(w);
    StepRecord { depth, h: pv.h, zmad: pv.zmad, smax: pv.smax, exact }
}

fn step_kernel<R: Rng + ?Sized>(
    policy: &KernelPolicy,
    w: &Channel,
    v: &Channel,
    ell: usize,
    rng: &mut R,
    config: &TransformConfig,
) -> Result<Kernel> {
    Ok(match policy {
        KernelPolicy::Fixed(g) => g.clone(),
        KernelPolicy::Random => sample_invertible(w.field(), ell, rng),
        KernelPolicy::Search { budget } => search(w, v, ell, *budget, rng, config)?.kernel,
    })
}

fn apply_merge(w: Channel, merge: MergePolicy) -> Result<(Channel, bool)> {
    match merge {
        MergePolicy::Lossless => Ok((w, true)),
        MergePolicy::Quantize { resolution } => Ok((w.quantize_merge(resolution)?, false)),
    }
}

/// One trajectory `W_0 = W, W_{m+1} = W_m^{(K_{m+1})}` of depth `n`.
#[allow(clippy::too_many_arguments)]
pub fn sample_path<R: Rng + ?Sized>(
    w: &Channel,
    policy: &KernelPolicy,
    ell: usize,
    n: usize,
    with_v: bool,
    merge: MergePolicy,
    rng: &mut R,
    config: &TransformConfig,
) -> Result<ProcessTrace> {
    if let KernelPolicy::Fixed(g) = policy {
        if g.ell() != ell {
            return Err(Error::DimensionMismatch("fixed kernel size differs from ℓ".into()));
        }
    }
    let mut wn = w.clone();
    let mut vn = w.flatten();
    let mut exact = true;
    let mut steps = vec![record(&wn, 0, true)];
    let mut v_steps = with_v.then(|| vec![record(&vn, 0, true)]);
    let mut path = Vec::with_capacity(n);
    for depth in 1..=n {
        let k = rng.gen_range(1..=ell);
        let g = step_kernel(policy, &wn, &vn, ell, rng, config)?;
        let (next, ew) = apply_merge(transform(&wn, &g, k, config)?.channel, merge)?;
        exact &= ew;
        wn = next;
        steps.push(record(&wn, depth, exact));
        if let Some(vs) = v_steps.as_mut() {
            let (next, _) = apply_merge(transform(&vn, &g, k, config)?.channel, merge)?;
            vn = next;
            vs.push(record(&vn, depth, exact));
        }
        path.push(k);
    }
    Ok(ProcessTrace { path, steps, v_steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationStats {
    pub paths: usize,
    pub frac_low: f64,
    pub frac_high: f64,
    pub frac_middle: f64,
}

impl PolarizationStats {
    pub fn from_entropies(hs: &[f64], low: f64, high: f64) -> PolarizationStats {
        let n = hs.len() as f64;
        let lo = hs.iter().filter(|&&h| h < low).count() as f64;
        let hi = hs.iter().filter(|&&h| h > high).count() as f64;
        PolarizationStats { paths: hs.len(), frac_low: lo / n, frac_high: hi / n, frac_middle: (n - lo - hi) / n }
    }
}

/// Fractions of final entropies below `low`, above `high`, and between.
#[allow(clippy::too_many_arguments)]
pub fn polarization_stats(
    w: &Channel,
    policy: &KernelPolicy,
    ell: usize,
    n: usize,
    paths: usize,
    low: f64,
    high: f64,
    seed: u64,
    config: &TransformConfig,
) -> Result<PolarizationStats> {
    if paths < 1 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let hs: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng_from(derive_seed(seed, &[p as u64]));
            let t = sample_path(w, policy, ell, n, false, MergePolicy::Lossless, &mut rng, config)?;
            Ok(t.steps.last().expect("root step").h)
        })
        .collect::<Result<_>>()?;
    Ok(PolarizationStats::from_entropies(&hs, low, high))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Preconditions met, so `holds` is required.
    pub asserted: bool,
}

impl LocalCheck {
    pub fn pass(&self) -> bool {
        self.holds || !self.asserted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub parent_h: f64,
    pub child_h: Vec<f64>,
    pub martingale_residual: f64,
    pub martingale: bool,
    /// `None` when `ℓ < 3`.
    pub eigen: Option<LocalCheck>,
    pub supermartingale: LocalCheck,
    /// `1 − H(child) ≤ ℓ(1 − H(parent))` for every child.
    pub growth: Vec<InequalityCheck>,
    pub cl_satisfied: bool,
    pub pass: bool,
}

fn cl_hypothesis(ell: usize, q: usize) -> bool {
    let l = ell as f64;
    l >= 4f64.exp() && l >= (q as f64).powi(5) && l >= 3f64.powi(q as i32)
}

/// Exact one-step conditional expectations over a uniform child index.
pub fn check_local(w: &Channel, g: &Kernel, config: &TransformConfig) -> Result<LocalReport> {
    let ell = g.ell();
    let q = w.q();
    let lf = ell as f64;
    let kids = transform_all(w, g, config)?;
    let parent = param_vector(w);
    let child: Vec<_> = kids.iter().map(|c| param_vector(&c.channel)).collect();
    let parent_h = conditional_entropy(w);
    let child_h: Vec<f64> = kids.iter().map(|c| conditional_entropy(&c.channel)).collect();
    let mean_h = child_h.iter().sum::<f64>() / lf;
    let martingale_residual = (mean_h - parent_h).abs();
    let martingale = martingale_residual <= CHECK_TOL;

    let cl_satisfied = cl_hypothesis(ell, q);
    let eigen = (ell >= 3).then(|| {
        let alpha = clt_alpha(ell);
        let lhs = child_h.iter().map(|&h| h_alpha(h, alpha)).sum::<f64>() / lf;
        let rhs = 4.0 * lf.powf(-0.5 + 3.0 * alpha) * h_alpha(parent_h, alpha);
        LocalCheck { lhs, rhs, holds: lhs <= rhs + CHECK_TOL, asserted: cl_satisfied }
    });

    let clip = lf.powi(-2);
    let quartic = |z: f64| clip.min(z.max(0.0).powf(0.25));
    let lhs = child.iter().map(|c| quartic(c.zmad)).sum::<f64>() / lf;
    let rhs = quartic(parent.zmad);
    let preconditions = parent.zmad < lf.powi(-8) && lf >= 50f64.max((q as f64).powi(5));
    // with the parent clipped, each child term is at most the clip value
    let saturated = rhs >= clip;
    let supermartingale = LocalCheck { lhs, rhs, holds: lhs <= rhs + CHECK_TOL, asserted: preconditions || saturated };

    let growth: Vec<InequalityCheck> = child_h
        .iter()
        .enumerate()
        .map(|(i, &h)| InequalityCheck::new(&format!("growth_{}", i + 1), 1.0 - h, lf * (1.0 - parent_h)))
        .collect();

    let pass = martingale
        && eigen.as_ref().is_none_or(LocalCheck::pass)
        && supermartingale.pass()
        && growth.iter().all(|c| c.pass);
    Ok(LocalReport {
        parent_h,
        child_h,
        martingale_residual,
        martingale,
        eigen,
        supermartingale,
        growth,
        cl_satisfied,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GadgetReport {
    pub ell: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub required: bool,
}

impl GadgetReport {
    pub fn pass(&self) -> bool {
        self.holds || !self.required
    }
}

/// `(1/ℓ) Σ_k (⌈k²/3ℓ⌉ · 3/4)^{−1/2}` against `ℓ^{−1/2+2α}`.
pub fn gadget_bound(ell: usize) -> Result<GadgetReport> {
    if ell < 3 {
        return Err(Error::InvalidArgument("the gadget needs ℓ ≥ 3".into()));
    }
    let lf = ell as f64;
    let lhs = (1..=ell)
        .map(|k| ((k * k).div_ceil(3 * ell) as f64 * 0.75).powf(-0.5))
        .sum::<f64>()
        / lf;
    let rhs = lf.powf(-0.5 + 2.0 * clt_alpha(ell));
    Ok(GadgetReport { ell, lhs, rhs, holds: lhs < rhs, required: lf >= 4f64.exp() })
}

pub const TRACE_HEADER: &str = "depth,H,Z_mad,S_max,exact";

pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for s in steps {
        out.push_str(&format!("{},{},{},{},{}\n", s.depth, fmt_f64(s.h), fmt_f64(s.zmad), fmt_f64(s.smax), s.exact));
    }
    out
}

pub fn stats_csv(rows: &[(usize, PolarizationStats)]) -> String {
    let mut out = String::from("n,paths,frac_low,frac_high,frac_middle\n");
    for (n, s) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            n,
            s.paths,
            fmt_f64(s.frac_low),
            fmt_f64(s.frac_high),
            fmt_f64(s.frac_middle)
        ));
    }
    out
}
