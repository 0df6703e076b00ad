//! Channel parameters, the Hölder inequality suite and E-null helpers.
//!
//! Entropies are base q unless a name ends in `_nats`. Every quantity is a
//! functional of the joint law, so non-uniform inputs are handled directly.

use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};

/// Slack allowed when an inequality is evaluated in floating point.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct ParamVector {
    #[serde(rename = "q")]
    pub q: usize,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "Pe")]
    pub pe: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "Zmad")]
    pub zmad: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "Smax")]
    pub smax: f64,
}

impl ParamVector {
    /// `[H, I, Pe, Z, Zmad, T, S, Smax]`.
    pub fn as_array(&self) -> [f64; 8] {
        [self.h, self.i, self.pe, self.z, self.zmad, self.t, self.s, self.smax]
    }
}

/// Entropy of `dist` in the given base, with 0 log 0 = 0.
pub fn entropy_base(dist: &[f64], base: f64) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>() / base.ln()
}

pub fn binary_entropy(p: f64) -> f64 {
    entropy_base(&[p, 1.0 - p], 2.0)
}

/// Conditional entropy H(X|Y) in nats from a joint law `joint[x * m + y]`.
pub fn conditional_entropy_nats(joint: &[f64], q: usize, m: usize) -> f64 {
    let mut h = 0.0;
    for y in 0..m {
        let out: f64 = (0..q).map(|x| joint[x * m + y]).sum();
        if out <= 0.0 {
            continue;
        }
        for x in 0..q {
            let j = joint[x * m + y];
            if j > 0.0 {
                h -= j * (j / out).ln();
            }
        }
    }
    h
}

pub fn conditional_entropy(w: &Channel) -> f64 {
    let h = conditional_entropy_nats(&w.joint(), w.q(), w.output_size()) / (w.q() as f64).ln();
    h.clamp(0.0, 1.0)
}

pub fn param_vector(w: &Channel) -> ParamVector {
    let f = w.field();
    let q = w.q();
    let m = w.output_size();
    let d = w.derived();
    let qf = q as f64;
    let h = conditional_entropy(w);
    let i = (entropy_base(w.input_dist(), qf) - h).max(0.0);

    let mut pe = 0.0;
    let mut t = 0.0;
    for y in 0..m {
        let post = &d.posterior[y * q..(y + 1) * q];
        let best = post.iter().cloned().fold(0.0, f64::max);
        pe += d.output[y] * (1.0 - best);
        t += d.output[y] * post.iter().map(|p| (p - 1.0 / qf).abs()).sum::<f64>();
    }

    let sqrt_joint: Vec<f64> = d.joint.iter().map(|j| j.sqrt()).collect();
    let mut per_diff = vec![0.0; q];
    for dd in f.elements().skip(1) {
        let mut acc = 0.0;
        for x in f.elements() {
            let x2 = f.add(x, dd).index();
            let (a, b) = (&sqrt_joint[x.index() * m..][..m], &sqrt_joint[x2 * m..][..m]);
            acc += a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        }
        per_diff[dd.index()] = acc;
    }
    let z = per_diff.iter().sum::<f64>() / (qf - 1.0);
    let zmad = per_diff.iter().cloned().fold(0.0, f64::max);

    let mut per_freq = vec![0.0; q];
    for wq in f.elements().skip(1) {
        let mut acc = 0.0;
        for y in 0..m {
            if d.output[y] == 0.0 {
                continue;
            }
            let post = &d.posterior[y * q..(y + 1) * q];
            let coef: num_complex::Complex64 =
                f.elements().map(|z| f.character(f.mul(wq, z)) * post[z.index()]).sum();
            acc += d.output[y] * coef.norm();
        }
        per_freq[wq.index()] = acc;
    }
    let s = per_freq.iter().sum::<f64>() / (qf - 1.0);
    let smax = per_freq.iter().cloned().fold(0.0, f64::max);

    ParamVector { q, h, i, pe, z, zmad, t, s, smax }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl InequalityCheck {
    pub fn new(name: &str, lhs: f64, rhs: f64) -> InequalityCheck {
        InequalityCheck { name: name.to_string(), lhs, rhs, pass: lhs <= rhs + CHECK_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub params: ParamVector,
    pub checks: Vec<InequalityCheck>,
    pub pass: bool,
}

/// Evaluates the inequalities tying the eight parameters together.
pub fn holder_report(w: &Channel) -> HolderReport {
    let pv = param_vector(w);
    holder_checks(&pv)
}

pub fn holder_checks(pv: &ParamVector) -> HolderReport {
    let q = pv.q as f64;
    let q1 = q - 1.0;
    let q2 = q - 2.0;
    let lg_q = q.log2();
    let ln_q = q.ln();
    let ParamVector { h, pe, z, zmad, t, s, smax, .. } = *pv;
    let gap = (1.0 + q1 * z).max(0.0).sqrt() - (1.0 - z).max(0.0).sqrt();
    let mut checks = vec![
        InequalityCheck::new("bhattacharyya_lower", q1 / (q * q) * gap * gap, pe),
        InequalityCheck::new("bhattacharyya_upper", pe, q1 * z / 2.0),
        InequalityCheck::new("variation_lower", q1 / q - pe, t / 2.0),
        InequalityCheck::new("variation_upper", t / 2.0, q1 / q - (q1 * q * pe - q1 * q2) / q),
        InequalityCheck::new("fourier_lower", 1.0 - q * pe / q1, s),
        InequalityCheck::new(
            "fourier_upper",
            s,
            q1 * q * (q1 / q - pe) * (1.0 - q * q2 / (q1 * q1)).max(0.0).sqrt(),
        ),
        InequalityCheck::new("fano_upper", h * lg_q, binary_entropy(pe.clamp(0.0, 1.0)) + pe * q1.log2()),
        InequalityCheck::new("fano_lower_small", 2.0 * pe, h * lg_q),
        InequalityCheck::new(
            "fano_lower_large",
            q1 * q * (q / q1).log2() * (pe - q2 / q1) + q1.log2(),
            h * lg_q,
        ),
        InequalityCheck::new("zmad_by_entropy", zmad, q * (h * ln_q / 4f64.ln()).max(0.0).sqrt()),
        InequalityCheck::new("entropy_by_zmad", h, (std::f64::consts::E * q1 * zmad / 2.0).sqrt()),
        InequalityCheck::new("smax_by_entropy", smax, q1 * q * ((1.0 - h).max(0.0) * ln_q / 2.0).sqrt()),
        InequalityCheck::new("entropy_by_smax", 1.0 - h, q1 * smax / ln_q),
        InequalityCheck::new("z_le_zmad", z, zmad),
        InequalityCheck::new("zmad_le_scaled_z", zmad, q1 * z),
        InequalityCheck::new("s_le_smax", s, smax),
        InequalityCheck::new("smax_le_scaled_s", smax, q1 * s),
    ];
    checks.shrink_to_fit();
    let pass = checks.iter().all(|c| c.pass);
    HolderReport { params: *pv, checks, pass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ENull {
    pub t: f64,
    pub e0: f64,
    pub e0bar: f64,
}

fn check_t(t: f64) -> Result<()> {
    if !(-0.4 - 1e-15..=1.0 + 1e-15).contains(&t) {
        return Err(Error::InvalidArgument(format!("tilt {t} outside [-0.4, 1]")));
    }
    Ok(())
}

/// Gallager's E-null function and its complement, in nats.
pub fn gallager_e0(w: &Channel, t: f64) -> Result<ENull> {
    check_t(t)?;
    if !w.is_uniform_input() {
        return Err(Error::NonUniformInput);
    }
    let q = w.q();
    let m = w.output_size();
    let rho = 1.0 / (1.0 + t);
    let mut sum_e0 = 0.0;
    let mut sum_bar = 0.0;
    let mut mass = 0.0;
    let mut mass_bar = 0.0;
    let joint = w.joint();
    for y in 0..m {
        let a: f64 = (0..q).map(|x| w.input_dist()[x] * w.w(x, y).powf(rho)).sum();
        let b: f64 = (0..q).map(|x| joint[x * m + y].powf(rho)).sum();
        sum_e0 += a.powf(1.0 + t);
        sum_bar += b.powf(1.0 + t);
        mass += (0..q).map(|x| w.input_dist()[x] * w.w(x, y)).sum::<f64>();
        mass_bar += (0..q).map(|x| joint[x * m + y]).sum::<f64>();
    }
    Ok(ENull { t, e0: -(sum_e0 / mass).ln(), e0bar: (sum_bar / mass_bar).ln() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltedChannel {
    pub base: Channel,
    pub t: f64,
    /// `joint[x * M + y]`.
    pub joint: Vec<f64>,
}

impl TiltedChannel {
    pub fn conditional_entropy_nats(&self) -> f64 {
        conditional_entropy_nats(&self.joint, self.base.q(), self.base.output_size())
    }

    /// Posterior of X given Y = y under the tilted law.
    pub fn posterior(&self, y: usize) -> Vec<f64> {
        let m = self.base.output_size();
        let col: Vec<f64> = (0..self.base.q()).map(|x| self.joint[x * m + y]).collect();
        let s: f64 = col.iter().sum();
        col.into_iter().map(|j| j / s).collect()
    }
}

/// The t-tilted joint law.
pub fn tilted(w: &Channel, t: f64) -> Result<TiltedChannel> {
    check_t(t)?;
    let q = w.q();
    let m = w.output_size();
    let rho = 1.0 / (1.0 + t);
    let joint = w.joint();
    let powered: Vec<f64> = joint.iter().map(|j| j.powf(rho)).collect();
    let col_sum: Vec<f64> = (0..m).map(|y| (0..q).map(|x| powered[x * m + y]).sum()).collect();
    let weight: Vec<f64> = col_sum.iter().map(|s| s.powf(1.0 + t)).collect();
    let total: f64 = weight.iter().sum();
    let mut tj = vec![0.0; q * m];
    for y in 0..m {
        if col_sum[y] <= 0.0 {
            continue;
        }
        for x in 0..q {
            tj[x * m + y] = weight[y] / total * powered[x * m + y] / col_sum[y];
        }
    }
    Ok(TiltedChannel { base: w.clone(), t, joint: tj })
}

/// `Σ w_i (ln w_i)^2`, with 0 (ln 0)^2 = 0.
pub fn second_moment(weights: &[f64]) -> f64 {
    weights.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln() * w.ln()).sum()
}

/// Upper bound on [`second_moment`] for a distribution on `q` points.
pub fn second_moment_bound(q: usize) -> f64 {
    if q == 2 {
        0.563
    } else {
        (q as f64).ln().powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPoint {
    pub t: f64,
    pub e0: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticReport {
    pub points: Vec<QuadraticPoint>,
    pub min_slack: f64,
    /// Smallest numerical second derivative of E0 over interior grid points.
    pub min_second_derivative: f64,
    pub second_derivative_floor: f64,
    /// Largest second difference; E0 is concave so this should not exceed 0.
    pub max_second_difference: f64,
    pub pass: bool,
}

/// Checks the quadratic lower bound on E0 and the curvature floor on a grid.
pub fn quadratic_check(w: &Channel, grid: &[f64]) -> Result<QuadraticReport> {
    let ln_q = (w.q() as f64).ln();
    let i = param_vector(w).i;
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let e0 = gallager_e0(w, t)?.e0;
        let bound = i * t * ln_q - t * t * ln_q * ln_q;
        points.push(QuadraticPoint { t, e0, bound, slack: e0 - bound });
    }
    let min_slack = points.iter().map(|p| p.slack).fold(f64::INFINITY, f64::min);
    let mut min_dd = f64::INFINITY;
    let mut max_diff = f64::NEG_INFINITY;
    for win in points.windows(3) {
        let (a, b, c) = (&win[0], &win[1], &win[2]);
        let (h1, h2) = (b.t - a.t, c.t - b.t);
        if h1 <= 0.0 || h2 <= 0.0 {
            continue;
        }
        let dd = 2.0 * ((c.e0 - b.e0) / h2 - (b.e0 - a.e0) / h1) / (h1 + h2);
        min_dd = min_dd.min(dd);
        max_diff = max_diff.max(dd * h1 * h2);
    }
    let floor = -2.0 * ln_q * ln_q;
    let pass = min_slack >= -CHECK_TOL && (min_dd.is_infinite() || min_dd >= floor - 1e-6);
    Ok(QuadraticReport {
        points,
        min_slack,
        min_second_derivative: min_dd,
        second_derivative_floor: floor,
        max_second_difference: max_diff,
        pass,
    })
}

/// `n + 1` evenly spaced points on [−2/5, 1].
pub fn tilt_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| -0.4 + 1.4 * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::FieldSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bec_half_parameters() {
        let p = param_vector(&Channel::bec(0.5).unwrap());
        // outputs 0 and 1 are clean, the erasure carries mass 1/2 with a flat posterior
        let expect = [0.5, 0.5, 0.25, 0.5, 0.5, 0.5, 0.5, 0.5];
        for (a, b) in p.as_array().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{p:?}");
        }
    }

    #[test]
    fn bsc_closed_forms() {
        for delta in [0.01, 0.11, 0.3] {
            let p = param_vector(&Channel::bsc(delta).unwrap());
            assert!((p.z - 2.0 * (delta * (1.0 - delta)).sqrt()).abs() < 1e-14);
            assert!((p.pe - delta).abs() < 1e-14);
        }
    }

    #[test]
    fn noiseless_parameters() {
        for q in [2u64, 3, 4, 5, 8] {
            let f = FieldSpec::with_order(q).unwrap();
            let p = param_vector(&Channel::noiseless(&f));
            let qf = q as f64;
            assert_eq!((p.h, p.pe, p.z, p.zmad), (0.0, 0.0, 0.0, 0.0));
            assert!((p.t - 2.0 * (qf - 1.0) / qf).abs() < 1e-14);
            assert!((p.s - 1.0).abs() < 1e-12 && (p.smax - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variation_lower_is_tight_on_bec_half() {
        let p = param_vector(&Channel::bec(0.5).unwrap());
        assert_eq!(0.5 - p.pe, 0.25);
        assert_eq!(p.t / 2.0, 0.25);
    }

    #[test]
    fn holder_examples() {
        let r = holder_report(&Channel::bec(0.25).unwrap());
        let c = r.checks.iter().find(|c| c.name == "entropy_by_zmad").unwrap();
        assert!((c.lhs - 0.25).abs() < 1e-15);
        assert!((c.rhs - (std::f64::consts::E * 0.25 / 2.0).sqrt()).abs() < 1e-15);
        assert!((c.rhs - 0.583).abs() < 1e-3);
        assert!(r.pass);
        let f = FieldSpec::new(3, 1).unwrap();
        let r = holder_report(&Channel::noiseless(&f));
        for name in ["zmad_by_entropy", "entropy_by_zmad"] {
            let c = r.checks.iter().find(|c| c.name == name).unwrap();
            assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        }
        assert!(r.pass);
    }

    #[test]
    fn holder_on_random_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for q in [2u64, 3, 4, 5] {
            let f = FieldSpec::with_order(q).unwrap();
            for k in 0..200 {
                let w = Channel::random(&f, 2 + k % 5, k % 2 == 0, &mut rng);
                let r = holder_report(&w);
                assert!(r.pass, "q={q}: {:?}", r.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn binary_fields_have_single_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FieldSpec::new(2, 1).unwrap();
        for _ in 0..50 {
            let p = param_vector(&Channel::random(&f, 4, false, &mut rng));
            assert_eq!(p.z, p.zmad);
            assert_eq!(p.s, p.smax);
        }
    }

    #[test]
    fn e0_examples() {
        let w = Channel::bec(0.5).unwrap();
        assert_eq!(gallager_e0(&w, 0.0).unwrap().e0, 0.0);
        let e = gallager_e0(&w, 1.0).unwrap();
        assert!((e.e0 - (4.0f64 / 3.0).ln()).abs() < 1e-14);
        assert!((e.e0 + e.e0bar - 2f64.ln()).abs() < 1e-12);
        let h = 1e-5;
        let d = (gallager_e0(&w, h).unwrap().e0 - gallager_e0(&w, -h).unwrap().e0) / (2.0 * h);
        assert!((d - 0.5 * 2f64.ln()).abs() < 1e-4);
        assert!(gallager_e0(&w, 1.5).is_err());
        let z = Channel::z_channel(0.5).unwrap();
        assert_eq!(gallager_e0(&z, 0.5).unwrap_err(), Error::NonUniformInput);
    }

    #[test]
    fn tilted_examples() {
        let w = Channel::bsc(0.11).unwrap();
        let t0 = tilted(&w, 0.0).unwrap();
        for (a, b) in t0.joint.iter().zip(w.joint()) {
            assert!((a - b).abs() < 1e-15);
        }
        let t1 = tilted(&w, 1.0).unwrap();
        let post = t1.posterior(0);
        let norm = 0.89f64.sqrt() + 0.11f64.sqrt();
        assert!((post[0] - 0.89f64.sqrt() / norm).abs() < 1e-14);
        assert!((post[0] - 0.7399).abs() < 1e-4);
        assert!((t1.joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_entropy_is_e0bar_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = FieldSpec::new(3, 1).unwrap();
        for _ in 0..10 {
            let w = Channel::random(&f, 4, true, &mut rng);
            for &t in &[-0.35, -0.1, 0.0, 0.3, 0.9] {
                let h = 1e-5;
                let d = (gallager_e0(&w, t + h).unwrap().e0bar - gallager_e0(&w, t - h).unwrap().e0bar) / (2.0 * h);
                let tc = tilted(&w, t).unwrap();
                assert!((tc.joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((d - tc.conditional_entropy_nats()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn second_moment_examples() {
        let v = second_moment(&[0.5, 0.5]);
        assert!((v - 2f64.ln().powi(2)).abs() < 1e-15 && v <= 0.563);
        assert_eq!(second_moment(&[1.0, 0.0]), 0.0);
        let v4 = second_moment(&[0.25; 4]);
        assert!((v4 - second_moment_bound(4)).abs() < 1e-14);
        assert!((v4 - 1.9218).abs() < 1e-4);
    }

    #[test]
    fn quadratic_examples() {
        let w = Channel::bec(0.5).unwrap();
        let r = quadratic_check(&w, &tilt_grid(140)).unwrap();
        assert_eq!(r.points.len(), 141);
        assert!(r.pass && r.min_slack >= 0.0, "{}", r.min_slack);
        assert!(r.max_second_difference <= 1e-6);
        let at0 = quadratic_check(&w, &[0.0]).unwrap();
        assert_eq!(at0.points[0].slack, 0.0);
        let f = FieldSpec::new(3, 1).unwrap();
        let u = Channel::useless(&f, &[0.3, 0.7]).unwrap();
        let r = quadratic_check(&u, &tilt_grid(14)).unwrap();
        let ln_q = 3f64.ln();
        for p in &r.points {
            assert!(p.e0.abs() < 1e-14);
            assert!((p.slack - p.t * p.t * ln_q * ln_q).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]

            #[test]
            fn parameter_ranges(seed in any::<u64>(), q in prop::sample::select(vec![2u64, 3, 4, 5, 7, 8, 9]), m in 1usize..6, uniform in any::<bool>()) {
                let f = FieldSpec::with_order(q).unwrap();
                let w = Channel::random(&f, m, uniform, &mut ChaCha8Rng::seed_from_u64(seed));
                let p = param_vector(&w);
                let q1 = q as f64 - 1.0;
                prop_assert!((0.0..=1.0).contains(&p.h));
                prop_assert!(p.z <= p.zmad + 1e-12 && p.zmad <= q1 * p.z + 1e-12 && q1 * p.z <= q1 + 1e-12);
                prop_assert!(p.s <= p.smax + 1e-12 && p.smax <= q1 * p.s + 1e-12 && q1 * p.s <= q1 + 1e-12);
                let hin = entropy_base(w.input_dist(), q as f64);
                prop_assert!((p.h + p.i - hin).abs() < 1e-12);
            }

            #[test]
            fn e0_complement_and_concavity(seed in any::<u64>(), q in prop::sample::select(vec![2u64, 3, 4])) {
                let f = FieldSpec::with_order(q).unwrap();
                let w = Channel::random(&f, 3, true, &mut ChaCha8Rng::seed_from_u64(seed));
                let ln_q = (q as f64).ln();
                for t in tilt_grid(20) {
                    let e = gallager_e0(&w, t).unwrap();
                    prop_assert!((e.e0 + e.e0bar - t * ln_q).abs() < 1e-12);
                }
                let r = quadratic_check(&w, &tilt_grid(70)).unwrap();
                prop_assert!(r.pass);
                prop_assert!(r.max_second_difference <= 1e-6);
            }

            #[test]
            fn second_moment_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..9)) {
                let s: f64 = raw.iter().sum();
                prop_assume!(s > 0.0);
                let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
                let q = w.len();
                let v = second_moment(&w);
                prop_assert!(v <= second_moment_bound(q) + 1e-12);
                prop_assert!(v <= 1.2 * (q as f64).ln().powi(2));
            }
        }
    }
}
