//! The `verify` sweep: every checkable inequality over built-in and random channels.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use qpolar::ftpc::{verify_ftpcs, verify_ftpcz};
use qpolar::gf::sample_invertible;
use qpolar::params::{conditional_entropy, holder_report, quadratic_check, tilt_grid, CHECK_TOL};
use qpolar::procsim::{check_local, gadget_bound};
use qpolar::transform::{transform_all, TransformConfig};
use qpolar::util::{derive_seed, rng_from};
use qpolar::{Channel, FieldSpec, Kernel};

#[derive(Debug, Serialize)]
pub struct Section {
    pub name: &'static str,
    pub items: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub sections: Vec<Section>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        self.sections
            .iter()
            .map(|s| format!("{}: {}/{} {}", s.name, s.items - s.failures, s.items, if s.pass { "ok" } else { "FAILED" }))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

type Outcome = std::result::Result<(), String>;

fn section(name: &'static str, outcomes: Vec<qpolar::Result<Outcome>>) -> Result<Section> {
    let items = outcomes.len();
    let mut failures = 0;
    let mut first_failure = None;
    for o in outcomes {
        if let Err(msg) = o? {
            failures += 1;
            first_failure.get_or_insert(msg);
        }
    }
    Ok(Section { name, items, failures, first_failure, pass: failures == 0 })
}

fn built_in() -> Vec<(String, Channel)> {
    let mut v = Vec::new();
    for e in [0.1, 0.5, 0.9] {
        v.push((format!("bec({e})"), Channel::bec(e).unwrap()));
    }
    for d in [0.05, 0.11, 0.3] {
        v.push((format!("bsc({d})"), Channel::bsc(d).unwrap()));
    }
    for e in [0.3, 0.5] {
        v.push((format!("zchan({e})"), Channel::z_channel(e).unwrap()));
    }
    for q in [2u64, 3, 4] {
        v.push((format!("noiseless(q={q})"), Channel::noiseless(&FieldSpec::with_order(q).unwrap())));
    }
    v
}

fn suite(seed: u64, per_q: usize, orders: &[u64]) -> Vec<(String, Channel)> {
    let mut v = built_in();
    for &q in orders {
        let f = FieldSpec::with_order(q).unwrap();
        for k in 0..per_q {
            let mut rng = rng_from(derive_seed(seed, &[q, k as u64]));
            let w = Channel::random(&f, 2 + k % 3, k % 2 == 0, &mut rng);
            v.push((format!("random(q={q}, #{k})"), w));
        }
    }
    v
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

/// Channel–kernel pairs for the transform-based sweeps.
fn pairs(seed: u64, per_q: usize) -> Vec<(String, Channel, Kernel)> {
    let chans = suite(seed, per_q, &[2, 3]);
    let mut out = Vec::new();
    for (idx, (name, w)) in chans.into_iter().enumerate() {
        for ell in 2..=4 {
            let mut rng = rng_from(derive_seed(seed, &[0x6b, idx as u64, ell as u64]));
            let g = if ell == 2 && w.q() == 2 && idx % 2 == 0 {
                Kernel::arikan(w.field())
            } else {
                sample_invertible(w.field(), ell, &mut rng)
            };
            out.push((format!("{name}, ℓ={ell}, G={:?}", g.rows()), w.clone(), g));
        }
    }
    out
}

pub fn run(seed: u64, per_q: usize) -> Result<VerifyReport> {
    let config = TransformConfig::default();
    let mut sections = Vec::new();

    let holder_set = suite(seed, per_q, &[2, 3, 4, 5]);
    let outcomes: Vec<_> = holder_set
        .par_iter()
        .map(|(name, w)| {
            let r = holder_report(w);
            Ok(check(r.pass, || {
                let bad: Vec<_> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
                format!("{name}: {bad:?}")
            }))
        })
        .collect();
    sections.push(section("holder", outcomes)?);

    let pair_set = pairs(seed, per_q);

    let outcomes: Vec<_> = pair_set
        .par_iter()
        .map(|(name, w, g)| -> qpolar::Result<Outcome> {
            for i in 1..=g.ell() {
                let z = verify_ftpcz(w, g, i, &config)?;
                let s = verify_ftpcs(w, g, i, &config)?;
                if !z.pass || !s.pass {
                    return Ok(Err(format!("{name}, i={i}: Z {} ≤ {}, S {} ≤ {}", z.lhs, z.rhs, s.lhs, s.rhs)));
                }
            }
            Ok(Ok(()))
        })
        .collect();
    sections.push(section("ftpc", outcomes)?);

    let outcomes: Vec<_> = pair_set
        .par_iter()
        .map(|(name, w, g)| {
            let total: f64 = transform_all(w, g, &config)?.iter().map(|c| conditional_entropy(&c.channel)).sum();
            let gap = (total - g.ell() as f64 * conditional_entropy(w)).abs();
            Ok(check(gap <= CHECK_TOL, || format!("{name}: gap {gap}")))
        })
        .collect();
    sections.push(section("conservation", outcomes)?);

    let outcomes: Vec<_> = pair_set
        .par_iter()
        .map(|(name, w, g)| {
            let r = check_local(w, g, &config)?;
            Ok(check(r.pass, || format!("{name}: residual {}, report {:?}", r.martingale_residual, r.supermartingale)))
        })
        .collect();
    sections.push(section("local", outcomes)?);

    let outcomes: Vec<_> = pair_set
        .par_iter()
        .map(|(name, w, g)| {
            let ws = w.symmetrize();
            let a = transform_all(w, g, &config)?;
            let b = transform_all(&ws, g, &config)?;
            let mut gap = (conditional_entropy(w) - conditional_entropy(&ws)).abs();
            for (x, y) in a.iter().zip(&b) {
                gap = gap.max((conditional_entropy(&x.channel) - conditional_entropy(&y.channel)).abs());
            }
            Ok(check(gap <= CHECK_TOL, || format!("{name}: gap {gap}")))
        })
        .collect();
    sections.push(section("symmetrization", outcomes)?);

    let grid = tilt_grid(140);
    let uniform: Vec<_> = holder_set.iter().filter(|(_, w)| w.is_uniform_input()).collect();
    let outcomes: Vec<_> = uniform
        .par_iter()
        .map(|(name, w)| {
            let r = quadratic_check(w, &grid)?;
            Ok(check(r.pass, || format!("{name}: min slack {}", r.min_slack)))
        })
        .collect();
    sections.push(section("quadratic", outcomes)?);

    let ells: Vec<usize> = (3..=256).collect();
    let outcomes: Vec<_> = ells
        .par_iter()
        .map(|&l| {
            let g = gadget_bound(l)?;
            Ok(check(g.pass(), || format!("ℓ={l}: {} vs {}", g.lhs, g.rhs)))
        })
        .collect();
    sections.push(section("gadget", outcomes)?);

    let pass = sections.iter().all(|s| s.pass);
    Ok(VerifyReport { seed, sections, pass })
}
