//! Discrete memoryless channels with an input distribution attached.
//!
//! A [`Channel`] stores `W(y|x)` as a row-major `q × M` matrix together with
//! the input law `W_in`. Joint, output and posterior laws are derived on
//! demand.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gf::FieldSpec;

/// Row sums and input masses must be within this distance of 1.
pub const VALIDATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    field: Arc<FieldSpec>,
    output_size: usize,
    transition: Vec<f64>,
    input_dist: Vec<f64>,
}

/// Joint, output and posterior laws of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    /// `joint[x * M + y] = W_in(x) W(y|x)`.
    pub joint: Vec<f64>,
    pub output: Vec<f64>,
    /// `posterior[y * q + x] = W(x|y)`, uniform on unreachable outputs.
    pub posterior: Vec<f64>,
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if let Some(k) = v.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidChannel(format!("{what}: entry {k} is negative or not finite")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > VALIDATION_TOL {
        return Err(Error::InvalidChannel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl Channel {
    /// Validates and builds a channel. `transition` has one row per input symbol.
    pub fn new(field: &Arc<FieldSpec>, transition: Vec<Vec<f64>>, input_dist: Vec<f64>) -> Result<Channel> {
        let q = field.q();
        if transition.len() != q {
            return Err(Error::InvalidChannel(format!(
                "transition has {} rows but the input alphabet has {q} symbols",
                transition.len()
            )));
        }
        let m = transition.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(Error::InvalidChannel("output alphabet is empty".into()));
        }
        for (x, row) in transition.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidChannel(format!("row {x} has {} entries, expected {m}", row.len())));
            }
            check_simplex(row, &format!("row {x}"))?;
        }
        if input_dist.len() != q {
            return Err(Error::InvalidChannel(format!(
                "input distribution has {} entries, expected {q}",
                input_dist.len()
            )));
        }
        check_simplex(&input_dist, "input distribution")?;
        Ok(Channel {
            field: field.clone(),
            output_size: m,
            transition: transition.into_iter().flatten().collect(),
            input_dist,
        })
    }

    /// Builds a channel from a flat transition matrix, renormalising rows and
    /// the input law. Used internally where inputs are correct up to rounding.
    pub(crate) fn from_parts(field: &Arc<FieldSpec>, output_size: usize, mut transition: Vec<f64>, mut input_dist: Vec<f64>) -> Channel {
        let q = field.q();
        debug_assert_eq!(transition.len(), q * output_size);
        for row in transition.chunks_mut(output_size) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|w| *w /= s);
            } else {
                row.iter_mut().for_each(|w| *w = 1.0 / output_size as f64);
            }
        }
        let s: f64 = input_dist.iter().sum();
        input_dist.iter_mut().for_each(|p| *p /= s);
        Channel { field: field.clone(), output_size, transition, input_dist }
    }

    /// Builds a channel from a joint law `joint[x * M + y]`. Inputs of zero
    /// mass get a uniform transition row.
    pub fn from_joint(field: &Arc<FieldSpec>, output_size: usize, joint: &[f64]) -> Channel {
        let q = field.q();
        let mut input = vec![0.0; q];
        let mut transition = vec![0.0; q * output_size];
        for x in 0..q {
            let row = &joint[x * output_size..(x + 1) * output_size];
            let mass: f64 = row.iter().sum();
            input[x] = mass;
            let out = &mut transition[x * output_size..(x + 1) * output_size];
            if mass > 0.0 {
                for (o, &j) in out.iter_mut().zip(row) {
                    *o = j / mass;
                }
            } else {
                out.iter_mut().for_each(|o| *o = 1.0 / output_size as f64);
            }
        }
        Channel::from_parts(field, output_size, transition, input)
    }

    pub fn uniform_input(field: &Arc<FieldSpec>) -> Vec<f64> {
        vec![1.0 / field.q() as f64; field.q()]
    }

    /// Binary erasure channel; outputs are 0, 1 and the erasure 2.
    pub fn bec(eps: f64) -> Result<Channel> {
        check_probability(eps, "erasure probability")?;
        let f = FieldSpec::new(2, 1)?;
        Channel::new(&f, vec![vec![1.0 - eps, 0.0, eps], vec![0.0, 1.0 - eps, eps]], vec![0.5, 0.5])
    }

    pub fn bsc(delta: f64) -> Result<Channel> {
        check_probability(delta, "crossover probability")?;
        let f = FieldSpec::new(2, 1)?;
        Channel::new(&f, vec![vec![1.0 - delta, delta], vec![delta, 1.0 - delta]], vec![0.5, 0.5])
    }

    /// Z-channel: input 0 is received as 0, input 1 flips to 0 with
    /// probability `eps`. The input law is capacity-achieving.
    pub fn z_channel(eps: f64) -> Result<Channel> {
        check_probability(eps, "flip probability")?;
        let f = FieldSpec::new(2, 1)?;
        let w = Channel::new(&f, vec![vec![1.0, 0.0], vec![eps, 1.0 - eps]], vec![0.5, 0.5])?;
        let cap = w.capacity_input(1e-12)?;
        w.with_input(cap)
    }

    /// Identity channel on F_q with uniform input.
    pub fn noiseless(field: &Arc<FieldSpec>) -> Channel {
        let q = field.q();
        let mut t = vec![0.0; q * q];
        for x in 0..q {
            t[x * q + x] = 1.0;
        }
        Channel::from_parts(field, q, t, Channel::uniform_input(field))
    }

    /// A channel whose output is independent of its input.
    pub fn useless(field: &Arc<FieldSpec>, row: &[f64]) -> Result<Channel> {
        let rows = vec![row.to_vec(); field.q()];
        Channel::new(field, rows, Channel::uniform_input(field))
    }

    /// A random channel with `m` outputs. Squared uniforms make rows lumpy;
    /// a non-uniform input law keeps every mass at least 0.1 before scaling.
    pub fn random<R: Rng + ?Sized>(field: &Arc<FieldSpec>, m: usize, uniform: bool, rng: &mut R) -> Channel {
        let q = field.q();
        let mut t = Vec::with_capacity(q * m);
        for _ in 0..q {
            let row: Vec<f64> = (0..m).map(|_| rng.gen::<f64>().powi(2) + 1e-9).collect();
            t.extend(row);
        }
        let input = if uniform {
            Channel::uniform_input(field)
        } else {
            (0..q).map(|_| 0.1 + rng.gen::<f64>()).collect()
        };
        Channel::from_parts(field, m, t, input)
    }

    pub fn field(&self) -> &Arc<FieldSpec> {
        &self.field
    }

    pub fn q(&self) -> usize {
        self.field.q()
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    /// Flat row-major transition matrix.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.transition[x * self.output_size..(x + 1) * self.output_size]
    }

    #[inline]
    pub fn w(&self, x: usize, y: usize) -> f64 {
        self.transition[x * self.output_size + y]
    }

    pub fn input_dist(&self) -> &[f64] {
        &self.input_dist
    }

    pub fn is_uniform_input(&self) -> bool {
        let u = 1.0 / self.q() as f64;
        self.input_dist.iter().all(|&p| (p - u).abs() <= VALIDATION_TOL)
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        self.transition.chunks(self.output_size).map(<[f64]>::to_vec).collect()
    }

    /// Same transition matrix with a different input law.
    pub fn with_input(&self, input_dist: Vec<f64>) -> Result<Channel> {
        if input_dist.len() != self.q() {
            return Err(Error::InvalidChannel(format!(
                "input distribution has {} entries, expected {}",
                input_dist.len(),
                self.q()
            )));
        }
        check_simplex(&input_dist, "input distribution")?;
        Ok(Channel { input_dist, ..self.clone() })
    }

    pub fn joint(&self) -> Vec<f64> {
        let m = self.output_size;
        let mut j = self.transition.clone();
        for (x, row) in j.chunks_mut(m).enumerate() {
            let p = self.input_dist[x];
            row.iter_mut().for_each(|w| *w *= p);
        }
        j
    }

    pub fn derived(&self) -> Derived {
        let q = self.q();
        let m = self.output_size;
        let joint = self.joint();
        let mut output = vec![0.0; m];
        for row in joint.chunks(m) {
            for (o, &j) in output.iter_mut().zip(row) {
                *o += j;
            }
        }
        let mut posterior = vec![0.0; m * q];
        for y in 0..m {
            let post = &mut posterior[y * q..(y + 1) * q];
            if output[y] > 0.0 {
                for x in 0..q {
                    post[x] = joint[x * m + y] / output[y];
                }
            } else {
                post.iter_mut().for_each(|p| *p = 1.0 / q as f64);
            }
        }
        Derived { joint, output, posterior }
    }

    /// Input law maximising I(X;Y), by Blahut–Arimoto iteration.
    ///
    /// Stops when the Kuhn–Tucker slack `max_x D(W(·|x) ‖ W_out) − I`, in base
    /// q, is at most `tol`. Inputs with identical rows are collapsed onto the
    /// lowest index before iterating, so duplicates receive zero mass.
    pub fn capacity_input(&self, tol: f64) -> Result<Vec<f64>> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("capacity tolerance must be positive".into()));
        }
        const MAX_ITER: usize = 100_000;
        let q = self.q();
        let m = self.output_size;
        let mut reps: Vec<usize> = Vec::new();
        for x in 0..q {
            if !reps.iter().any(|&r| self.row(r) == self.row(x)) {
                reps.push(x);
            }
        }
        let ln_q = (q as f64).ln();
        let k = reps.len();
        let mut p = vec![1.0 / k as f64; k];
        let mut out = vec![0.0; m];
        let mut div = vec![0.0; k];
        for _ in 0..MAX_ITER {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (a, &x) in reps.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(self.row(x)) {
                    *o += p[a] * w;
                }
            }
            for (a, &x) in reps.iter().enumerate() {
                div[a] = self
                    .row(x)
                    .iter()
                    .zip(&out)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, o)| w * (w / o).ln())
                    .sum();
            }
            let info: f64 = p.iter().zip(&div).map(|(pa, d)| pa * d).sum();
            let slack = div.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - info;
            if slack / ln_q <= tol {
                let mut dist = vec![0.0; q];
                for (a, &x) in reps.iter().enumerate() {
                    dist[x] = p[a];
                }
                return Ok(dist);
            }
            let mut z = 0.0;
            for a in 0..k {
                p[a] *= div[a].exp();
                z += p[a];
            }
            p.iter_mut().for_each(|pa| *pa /= z);
        }
        Err(Error::NoConvergence(MAX_ITER))
    }

    /// The channel with its input alphabet grown to `q_target` symbols; the
    /// new symbols reuse the last original row and carry zero input mass.
    pub fn extend_input(&self, q_target: u64) -> Result<Channel> {
        let field = FieldSpec::with_order(q_target)?;
        let s = self.q();
        let qt = field.q();
        if qt < s {
            return Err(Error::InvalidArgument(format!(
                "target alphabet {qt} is smaller than the current one {s}"
            )));
        }
        if qt == s {
            return Ok(self.clone());
        }
        let mut transition = self.transition.clone();
        for _ in s..qt {
            transition.extend_from_slice(self.row(s - 1));
        }
        let mut input = self.input_dist.clone();
        input.resize(qt, 0.0);
        Ok(Channel { field, output_size: self.output_size, transition, input_dist: input })
    }

    /// The channel that erases all output information.
    pub fn flatten(&self) -> Channel {
        Channel {
            field: self.field.clone(),
            output_size: 1,
            transition: vec![1.0; self.q()],
            input_dist: self.input_dist.clone(),
        }
    }

    /// Symmetric channel with uniform input: input `Z = X + Ξ` with `Ξ`
    /// uniform and independent, output `(Ξ, Y)` indexed `a * M + y`, so
    /// `W̄((a, y) | z) = W(z − a, y)`.
    pub fn symmetrize(&self) -> Channel {
        let f = &self.field;
        let q = self.q();
        let m = self.output_size;
        let wide = q * m;
        let joint = self.joint();
        let mut t = vec![0.0; q * wide];
        for z in f.elements() {
            for a in f.elements() {
                let x = f.sub(z, a).index();
                let src = &joint[x * m..(x + 1) * m];
                let dst = z.index() * wide + a.index() * m;
                t[dst..dst + m].copy_from_slice(src);
            }
        }
        Channel::from_parts(f, wide, t, Channel::uniform_input(f))
    }

    /// Merges outputs with equal posteriors (within `tol`, by grid cell) and
    /// drops outputs that no input can produce.
    pub fn merge_outputs(&self, tol: f64) -> Channel {
        let q = self.q();
        let d = self.derived();
        let key = |y: usize| -> Vec<i64> {
            let post = &d.posterior[y * q..(y + 1) * q];
            if tol > 0.0 {
                post.iter().map(|p| (p / tol).round() as i64).collect()
            } else {
                post.iter().map(|p| p.to_bits() as i64).collect()
            }
        };
        self.group_outputs(&d, key)
    }

    /// Bins outputs by rounding each posterior coordinate to `resolution`
    /// cells. The result is a degradation of `self`.
    pub fn quantize_merge(&self, resolution: u32) -> Result<Channel> {
        if resolution < 1 {
            return Err(Error::InvalidArgument("resolution must be at least 1".into()));
        }
        let q = self.q();
        let d = self.derived();
        let r = resolution as f64;
        let key = |y: usize| -> Vec<i64> {
            d.posterior[y * q..(y + 1) * q].iter().map(|p| (p * r).round() as i64).collect()
        };
        Ok(self.group_outputs(&d, key))
    }

    fn group_outputs(&self, d: &Derived, key: impl Fn(usize) -> Vec<i64>) -> Channel {
        let q = self.q();
        let m = self.output_size;
        // outputs of zero mass share one group, discarded when no row reaches it
        let mut groups: HashMap<Option<Vec<i64>>, usize> = HashMap::new();
        let mut assign = vec![0usize; m];
        let mut count = 0;
        for y in 0..m {
            let k = (d.output[y] > 0.0).then(|| key(y));
            let g = *groups.entry(k).or_insert_with(|| {
                count += 1;
                count - 1
            });
            assign[y] = g;
        }
        let mut t = vec![0.0; q * count];
        for x in 0..q {
            for y in 0..m {
                t[x * count + assign[y]] += self.w(x, y);
            }
        }
        if let Some(&dead) = groups.get(&None) {
            let reached = (0..q).any(|x| t[x * count + dead] > 0.0);
            if !reached && count > 1 {
                let keep: Vec<usize> = (0..count).filter(|&g| g != dead).collect();
                let mut t2 = Vec::with_capacity(q * keep.len());
                for x in 0..q {
                    t2.extend(keep.iter().map(|&g| t[x * count + g]));
                }
                return Channel::from_parts(&self.field, keep.len(), t2, self.input_dist.clone());
            }
        }
        Channel::from_parts(&self.field, count, t, self.input_dist.clone())
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{what} {p} outside [0, 1]")));
    }
    Ok(())
}
