//! Synthesized channels `W^{(i)}` for a kernel `G`.
//!
//! With `X_1^ℓ` i.i.d. from `W_in` and `U = X G^{-1}`, the i-th synthesized
//! channel has input `U_i` and output `(U_1^{i-1}, Y_1^ℓ)`. Output symbols are
//! indexed `prefix * M^ℓ + y`, where both the prefix and `y` are read with
//! their first coordinate as the most significant digit.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::gf::{FieldElement, FieldSpec, Kernel};
use crate::params::CHECK_TOL;
use crate::util::inverse_cdf;

/// Posterior tolerance used for the lossless merge after every transform.
pub const MERGE_TOL: f64 = 1e-12;

/// Compute caps, in table entries or enumerated words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformConfig {
    /// Largest output alphabet `q^{i-1} M^ℓ` an exact transform may build.
    pub max_symbols: u128,
    /// Largest posterior scan `q^{ℓ-i+1}` the Monte Carlo estimator may run.
    pub max_scan: u128,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig { max_symbols: 10_000_000, max_scan: 1 << 24 }
    }
}

impl TransformConfig {
    pub(crate) fn check_symbols(&self, needed: u128) -> Result<()> {
        if needed > self.max_symbols {
            return Err(Error::GuardExceeded { needed, cap: self.max_symbols });
        }
        Ok(())
    }
}

/// A channel reached by a sequence of transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthChannel {
    pub channel: Channel,
    /// 1-based child indices from the root.
    pub path: Vec<usize>,
    pub exact: bool,
}

impl SynthChannel {
    pub fn root(channel: Channel) -> SynthChannel {
        SynthChannel { channel, path: Vec::new(), exact: true }
    }
}

fn check_inputs(w: &Channel, g: &Kernel, i: usize) -> Result<()> {
    if **w.field() != **g.field() {
        return Err(Error::DimensionMismatch(format!(
            "channel field has order {} but the kernel is over order {}",
            w.q(),
            g.field().q()
        )));
    }
    if i < 1 || i > g.ell() {
        return Err(Error::InvalidArgument(format!("index {i} outside 1..={}", g.ell())));
    }
    Ok(())
}

pub(crate) fn pow_u128(base: usize, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
}

/// Decodes `index` into `len` base-`q` digits, first digit most significant.
pub fn digits_msb(mut index: usize, q: usize, out: &mut [FieldElement]) {
    for d in out.iter_mut().rev() {
        *d = FieldElement((index % q) as u16);
        index /= q;
    }
}

/// `joint[u * M^ℓ + y] = Π_j W(x_j, y_j)` summed into blocks of `q^{ℓ-depth}`
/// consecutive `u`, giving the law of `(U_1^{depth}, Y_1^ℓ)`.
fn accumulate(w: &Channel, g: &Kernel, depth: usize) -> Vec<f64> {
    let q = w.q();
    let m = w.output_size();
    let ell = g.ell();
    let my = m.pow(ell as u32);
    let joint = w.joint();
    let mut table = vec![0.0; q.pow(depth as u32) * my];
    let tail = q.pow((ell - depth) as u32);
    let mut u = vec![FieldElement::ZERO; ell];
    let mut x = vec![FieldElement::ZERO; ell];
    let mut buf = vec![0.0; my];
    let mut scratch = vec![0.0; my];
    for ui in 0..q.pow(ell as u32) {
        digits_msb(ui, q, &mut u);
        g.apply(&u, &mut x);
        // outer product of the joint columns for x_1..x_ℓ, y_1 most significant
        buf[0] = 1.0;
        let mut len = 1;
        for &xj in &x {
            let col = &joint[xj.index() * m..(xj.index() + 1) * m];
            for a in 0..len {
                for (b, &c) in col.iter().enumerate() {
                    scratch[a * m + b] = buf[a] * c;
                }
            }
            len *= m;
            buf[..len].copy_from_slice(&scratch[..len]);
        }
        let block = ui / tail;
        let dst = &mut table[block * my..(block + 1) * my];
        for (d, &v) in dst.iter_mut().zip(&buf) {
            *d += v;
        }
    }
    table
}

/// Builds `W^{(i)}` from the law of `(U_1^i, Y_1^ℓ)`.
fn synth_from_table(field: &Arc<FieldSpec>, table: &[f64], i: usize, my: usize) -> Channel {
    let q = field.q();
    let prefixes = q.pow((i - 1) as u32);
    let out = prefixes * my;
    let mut joint = vec![0.0; q * out];
    for prefix in 0..prefixes {
        for ui in 0..q {
            let src = &table[(prefix * q + ui) * my..][..my];
            joint[ui * out + prefix * my..][..my].copy_from_slice(src);
        }
    }
    Channel::from_joint(field, out, &joint).merge_outputs(MERGE_TOL)
}

/// Exact i-th synthesized channel (1-based `i`), losslessly merged.
pub fn transform(w: &Channel, g: &Kernel, i: usize, config: &TransformConfig) -> Result<SynthChannel> {
    check_inputs(w, g, i)?;
    let q = w.q();
    let ell = g.ell();
    let my = pow_u128(w.output_size(), ell);
    config.check_symbols(pow_u128(q, i - 1).saturating_mul(my))?;
    let table = accumulate(w, g, i);
    Ok(SynthChannel { channel: synth_from_table(w.field(), &table, i, my as usize), path: vec![i], exact: true })
}

/// All ℓ synthesized channels from one joint table.
pub fn transform_all(w: &Channel, g: &Kernel, config: &TransformConfig) -> Result<Vec<SynthChannel>> {
    check_inputs(w, g, 1)?;
    let q = w.q();
    let ell = g.ell();
    let my = pow_u128(w.output_size(), ell);
    config.check_symbols(pow_u128(q, ell - 1).saturating_mul(my))?;
    let my = my as usize;
    let mut table = accumulate(w, g, ell);
    let mut out = Vec::with_capacity(ell);
    for i in (1..=ell).rev() {
        out.push(SynthChannel { channel: synth_from_table(w.field(), &table, i, my), path: vec![i], exact: true });
        if i > 1 {
            let rows = table.len() / my / q;
            let mut next = vec![0.0; rows * my];
            for r in 0..rows {
                let dst = &mut next[r * my..(r + 1) * my];
                for d in 0..q {
                    let src = &table[(r * q + d) * my..][..my];
                    for (a, &b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            table = next;
        }
    }
    out.reverse();
    Ok(out)
}

/// Child of a synthesized channel, carrying its path and exactness.
pub fn child(parent: &SynthChannel, g: &Kernel, i: usize, config: &TransformConfig) -> Result<SynthChannel> {
    let mut c = transform(&parent.channel, g, i, config)?;
    let mut path = parent.path.clone();
    path.push(i);
    c.path = path;
    c.exact = parent.exact;
    Ok(c)
}

/// Monte Carlo mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(sum: f64, sum_sq: f64, n: usize) -> Estimate {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Estimate { mean, stderr: (var / nf).sqrt() }
    }

    /// Whether `value` lies within `k` standard errors, with a floor for
    /// zero-variance estimates.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr + CHECK_TOL
    }
}

/// Draws one input symbol from `W_in` and one output from its row.
pub(crate) fn draw_use<R: Rng + ?Sized>(w: &Channel, rng: &mut R) -> (usize, usize) {
    let x = inverse_cdf(w.input_dist(), rng.gen::<f64>());
    let y = inverse_cdf(w.row(x), rng.gen::<f64>());
    (x, y)
}

/// Unbiased estimate of `H(W^{(i)})` by sampling `(U, Y)` and scoring the
/// exact posterior of `U_i` given `(U_1^{i-1}, Y)`.
pub fn estimate_entropy_mc<R: Rng + ?Sized>(
    w: &Channel,
    g: &Kernel,
    i: usize,
    samples: usize,
    rng: &mut R,
    config: &TransformConfig,
) -> Result<Estimate> {
    check_inputs(w, g, i)?;
    if samples < 1 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let q = w.q();
    let ell = g.ell();
    let scan = pow_u128(q, ell - i + 1);
    if scan > config.max_scan {
        return Err(Error::GuardExceeded { needed: scan, cap: config.max_scan });
    }
    let joint = w.joint();
    let m = w.output_size();
    let ln_q = (q as f64).ln();
    let mut x = vec![FieldElement::ZERO; ell];
    let mut y = vec![0usize; ell];
    let mut u = vec![FieldElement::ZERO; ell];
    let mut cand = vec![FieldElement::ZERO; ell];
    let mut xc = vec![FieldElement::ZERO; ell];
    let mut post = vec![0.0; q];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let suffixes = q.pow((ell - i) as u32);
    for _ in 0..samples {
        for j in 0..ell {
            let (xs, ys) = draw_use(w, rng);
            x[j] = FieldElement(xs as u16);
            y[j] = ys;
        }
        g.apply_inverse(&x, &mut u);
        cand[..i - 1].copy_from_slice(&u[..i - 1]);
        for (a, p) in post.iter_mut().enumerate() {
            cand[i - 1] = FieldElement(a as u16);
            let mut acc = 0.0;
            for s in 0..suffixes {
                digits_msb(s, q, &mut cand[i..]);
                g.apply(&cand, &mut xc);
                acc += xc.iter().zip(&y).map(|(xj, &yj)| joint[xj.index() * m + yj]).product::<f64>();
            }
            *p = acc;
        }
        let total: f64 = post.iter().sum();
        let score = -(post[u[i - 1].index()] / total).ln() / ln_q;
        sum += score;
        sum_sq += score * score;
    }
    Ok(Estimate::from_samples(sum, sum_sq, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::sample_invertible;
    use crate::params::{conditional_entropy, param_vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TransformConfig {
        TransformConfig::default()
    }

    fn erasure_step(z: f64, i: usize) -> f64 {
        if i == 1 {
            2.0 * z - z * z
        } else {
            z * z
        }
    }

    #[test]
    fn bec_arikan_children() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let minus = transform(&w, &g, 1, &cfg()).unwrap();
        let plus = transform(&w, &g, 2, &cfg()).unwrap();
        assert_eq!(param_vector(&minus.channel).h, erasure_step(0.5, 1));
        assert_eq!(param_vector(&plus.channel).h, erasure_step(0.5, 2));
        assert!(minus.channel.output_size() <= 3);
        assert!(minus.exact && minus.path == vec![1]);
    }

    #[test]
    fn flattened_uniform_stays_useless() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in [2u64, 3, 4] {
            let f = FieldSpec::with_order(q).unwrap();
            let b = Channel::noiseless(&f).flatten();
            let g = sample_invertible(&f, 3, &mut rng);
            for i in 1..=3 {
                let h = conditional_entropy(&transform(&b, &g, i, &cfg()).unwrap().channel);
                assert!((h - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_all_agrees_with_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FieldSpec::new(3, 1).unwrap();
        let w = Channel::random(&f, 2, false, &mut rng);
        let g = sample_invertible(&f, 3, &mut rng);
        let all = transform_all(&w, &g, &cfg()).unwrap();
        for i in 1..=3 {
            let one = transform(&w, &g, i, &cfg()).unwrap();
            let a = param_vector(&one.channel).as_array();
            let b = param_vector(&all[i - 1].channel).as_array();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conservation_examples() {
        let w = Channel::bec(0.5).unwrap();
        let hs: Vec<f64> = transform_all(&w, &Kernel::arikan(w.field()), &cfg())
            .unwrap()
            .iter()
            .map(|c| conditional_entropy(&c.channel))
            .collect();
        assert_eq!(hs, vec![0.75, 0.25]);
        let f = FieldSpec::new(3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = sample_invertible(&f, 3, &mut rng);
        for c in transform_all(&Channel::noiseless(&f), &g, &cfg()).unwrap() {
            assert_eq!(conditional_entropy(&c.channel), 0.0);
        }
        let w = Channel::random(&f, 3, false, &mut rng);
        let sum: f64 = transform_all(&w, &g, &cfg()).unwrap().iter().map(|c| conditional_entropy(&c.channel)).sum();
        assert!((sum - 3.0 * conditional_entropy(&w)).abs() < 1e-9);
    }

    #[test]
    fn flattened_transform_matches_closed_form() {
        // W_b^{(i)}(u_1^{i-1} | u_i) = P(U_1^i = u_1^i) / P(U_i = u_i), computed here
        // by brute force over x with U = x G^{-1}
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FieldSpec::new(3, 1).unwrap();
        let w = Channel::random(&f, 2, false, &mut rng).flatten();
        let g = sample_invertible(&f, 3, &mut rng);
        let q = 3usize;
        let p = w.input_dist().to_vec();
        let mut law = vec![0.0; 27];
        let mut x = vec![FieldElement::ZERO; 3];
        let mut u = vec![FieldElement::ZERO; 3];
        for xi in 0..27 {
            digits_msb(xi, q, &mut x);
            g.apply_inverse(&x, &mut u);
            let idx = u.iter().fold(0, |a, d| a * q + d.index());
            law[idx] += x.iter().map(|d| p[d.index()]).product::<f64>();
        }
        for i in 1..=3 {
            let tail = q.pow(3 - i as u32);
            let prefixes = q.pow(i as u32 - 1);
            let mut joint = vec![0.0; q * prefixes];
            for (idx, &mass) in law.iter().enumerate() {
                let head = idx / tail;
                joint[(head % q) * prefixes + head / q] += mass;
            }
            let expect = Channel::from_joint(&f, prefixes, &joint).merge_outputs(MERGE_TOL);
            let got = transform(&w, &g, i, &cfg()).unwrap().channel;
            assert_eq!(got.output_size(), expect.output_size());
            for (a, b) in got.transition().iter().zip(expect.transition()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in got.input_dist().iter().zip(expect.input_dist()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guard_and_mismatch() {
        let w = Channel::bec(0.5).unwrap();
        let small = TransformConfig { max_symbols: 8, max_scan: 4 };
        let g = Kernel::identity(w.field(), 3);
        assert!(matches!(transform(&w, &g, 1, &small), Err(Error::GuardExceeded { .. })));
        let f3 = FieldSpec::new(3, 1).unwrap();
        let g3 = Kernel::identity(&f3, 2);
        assert!(matches!(transform(&w, &g3, 1, &cfg()), Err(Error::DimensionMismatch(_))));
        assert!(transform(&w, &Kernel::arikan(w.field()), 3, &cfg()).is_err());
    }

    #[test]
    fn mc_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = FieldSpec::new(2, 1).unwrap();
        let g = Kernel::arikan(&f);
        let e = estimate_entropy_mc(&Channel::noiseless(&f), &g, 1, 200, &mut rng, &cfg()).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
        let e = estimate_entropy_mc(&Channel::noiseless(&f).flatten(), &g, 2, 200, &mut rng, &cfg()).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-15 && e.stderr.abs() < 1e-12);
    }

    #[test]
    fn mc_bec_minus_covers_exact() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let e = estimate_entropy_mc(&w, &g, 1, 100_000, &mut ChaCha8Rng::seed_from_u64(77), &cfg()).unwrap();
        assert!(e.covers(0.75, 4.0), "{e:?}");
    }

    #[test]
    fn mc_coverage_rate() {
        let w = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(w.field());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let hits = (0..1000)
            .filter(|_| estimate_entropy_mc(&w, &g, 1, 200, &mut rng, &cfg()).unwrap().covers(0.75, 4.0))
            .count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn quantization_noop_on_erasure_recursion() {
        let mut c = Channel::bec(0.5).unwrap();
        let g = Kernel::arikan(c.field());
        for step in [1, 2, 2, 1, 2] {
            c = transform(&c, &g, step, &cfg()).unwrap().channel;
            for r in [3, 4, 17] {
                let qz = c.quantize_merge(r).unwrap();
                assert_eq!(qz.output_size(), c.output_size());
                assert!((param_vector(&qz).h - param_vector(&c).h).abs() < 1e-15);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn conservation(seed in any::<u64>(), q in prop::sample::select(vec![2u64, 3, 4]), ell in 2usize..4, m in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = FieldSpec::with_order(q).unwrap();
                let w = Channel::random(&f, m, seed % 3 != 0, &mut rng);
                let g = sample_invertible(&f, ell, &mut rng);
                let all = transform_all(&w, &g, &cfg()).unwrap();
                let sum: f64 = all.iter().map(|c| conditional_entropy(&c.channel)).sum();
                prop_assert!((sum - ell as f64 * conditional_entropy(&w)).abs() < 1e-9);
            }
        }
    }
}
