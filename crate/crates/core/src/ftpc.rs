//! Coset and dual-coset weight enumerators, and direct checks of the Z-end
//! and S-end bounds on synthesized channels.

use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::gf::{FieldElement, FieldSpec, Kernel};
use crate::params::{param_vector, CHECK_TOL};
use crate::transform::{pow_u128, transform, TransformConfig};

/// Default cap on the number of enumerated words.
pub const DEFAULT_GUARD: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightEnumerator {
    pub ell: usize,
    /// `counts[w]` words of Hamming weight `w`, for `w = 0..=ℓ`.
    pub counts: Vec<u64>,
}

impl WeightEnumerator {
    /// Evaluates `Σ_w counts[w] z^w`.
    pub fn eval(&self, z: f64) -> f64 {
        self.counts.iter().rev().fold(0.0, |acc, &c| acc * z + c as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smallest weight present.
    pub fn min_weight(&self) -> usize {
        self.counts.iter().position(|&c| c > 0).unwrap_or(self.ell)
    }
}

fn row(mat: &[FieldElement], ell: usize, r: usize) -> Vec<FieldElement> {
    mat[r * ell..(r + 1) * ell].to_vec()
}

/// Counts weights of `base + Σ_k c_k gens[k]` over all coefficient vectors.
fn enumerate(field: &FieldSpec, base: &[FieldElement], gens: &[Vec<FieldElement>], guard: u128) -> Result<Vec<u64>> {
    let ell = base.len();
    let q = field.q();
    let needed = pow_u128(q, gens.len());
    if needed > guard {
        return Err(Error::GuardExceeded { needed, cap: guard });
    }
    let mut counts = vec![0u64; ell + 1];
    if q == 2 && ell <= 64 {
        let mask = |v: &[FieldElement]| v.iter().enumerate().fold(0u64, |a, (j, x)| a | ((x.0 as u64) << j));
        let rows: Vec<u64> = gens.iter().map(|g| mask(g)).collect();
        let mut word = mask(base);
        counts[word.count_ones() as usize] += 1;
        // binary counter: step k flips bit t, whose change adds rows[t]
        for step in 1u64..(1u64 << gens.len()) {
            let t = step.trailing_zeros() as usize;
            for &r in &rows[..=t] {
                word ^= r;
            }
            counts[word.count_ones() as usize] += 1;
        }
        return Ok(counts);
    }
    // each coefficient is spanned by p^m digits over the F_p-basis 1, x, ..., x^{m-1};
    // digit (k, t) adds x^t gens[k] on every increment
    let p = field.p() as usize;
    let m = field.m() as usize;
    let mut basis = Vec::with_capacity(m);
    let mut b = FieldElement::ONE;
    let x = FieldElement(if m > 1 { p as u16 } else { 1 });
    for _ in 0..m {
        basis.push(b);
        b = field.mul(b, x);
    }
    let steps: Vec<Vec<FieldElement>> = gens
        .iter()
        .flat_map(|g| basis.iter().map(move |&bt| g.iter().map(|&e| field.mul(bt, e)).collect::<Vec<_>>()))
        .collect();
    let mut word = base.to_vec();
    let mut weight = word.iter().filter(|e| e.0 != 0).count();
    counts[weight] += 1;
    let mut digits = vec![0usize; steps.len()];
    loop {
        let mut k = 0;
        loop {
            if k == digits.len() {
                return Ok(counts);
            }
            for (w, &s) in word.iter_mut().zip(&steps[k]) {
                if s.0 == 0 {
                    continue;
                }
                let before = w.0 != 0;
                *w = field.add(*w, s);
                match (before, w.0 != 0) {
                    (true, false) => weight -= 1,
                    (false, true) => weight += 1,
                    _ => {}
                }
            }
            digits[k] += 1;
            if digits[k] < p {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        counts[weight] += 1;
    }
}

fn check_index(g: &Kernel, i: usize) -> Result<()> {
    if i < 1 || i > g.ell() {
        return Err(Error::InvalidArgument(format!("index {i} outside 1..={}", g.ell())));
    }
    Ok(())
}

/// Enumerator of `{e_i G + Σ_{j>i} u_j g_j}` (rows `g_j` of G, 1-based `i`).
pub fn coset_enumerator(g: &Kernel, i: usize) -> Result<WeightEnumerator> {
    coset_enumerator_guarded(g, i, DEFAULT_GUARD)
}

pub fn coset_enumerator_guarded(g: &Kernel, i: usize, guard: u128) -> Result<WeightEnumerator> {
    check_index(g, i)?;
    let ell = g.ell();
    let m = g.entries();
    let gens: Vec<_> = (i..ell).map(|r| row(m, ell, r)).collect();
    let counts = enumerate(g.field(), &row(m, ell, i - 1), &gens, guard)?;
    Ok(WeightEnumerator { ell, counts })
}

/// Enumerator of `{Σ_{j<i} u_j h_j + h_i}` with `h_j` the rows of `G^{-⊤}`.
pub fn dual_coset_enumerator(g: &Kernel, i: usize) -> Result<WeightEnumerator> {
    dual_coset_enumerator_guarded(g, i, DEFAULT_GUARD)
}

pub fn dual_coset_enumerator_guarded(g: &Kernel, i: usize, guard: u128) -> Result<WeightEnumerator> {
    check_index(g, i)?;
    let ell = g.ell();
    let m = g.inv_transpose();
    let gens: Vec<_> = (0..i - 1).map(|r| row(m, ell, r)).collect();
    let counts = enumerate(g.field(), &row(m, ell, i - 1), &gens, guard)?;
    Ok(WeightEnumerator { ell, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(lhs: f64, rhs: f64) -> BoundCheck {
        BoundCheck { lhs, rhs, pass: lhs <= rhs + CHECK_TOL }
    }
}

/// `Z_mad(W^{(i)}) ≤ f_GZ^{(i)}(Z_mad(W))`.
pub fn verify_ftpcz(w: &Channel, g: &Kernel, i: usize, config: &TransformConfig) -> Result<BoundCheck> {
    let child = transform(w, g, i, config)?;
    let f = coset_enumerator(g, i)?;
    Ok(BoundCheck::new(param_vector(&child.channel).zmad, f.eval(param_vector(w).zmad)))
}

/// `S_max(W^{(i)}) ≤ f_GS^{(i)}(S_max(W))`.
pub fn verify_ftpcs(w: &Channel, g: &Kernel, i: usize, config: &TransformConfig) -> Result<BoundCheck> {
    let child = transform(w, g, i, config)?;
    let f = dual_coset_enumerator(g, i)?;
    Ok(BoundCheck::new(param_vector(&child.channel).smax, f.eval(param_vector(w).smax)))
}

/// Reverses rows and columns of `G^{-⊤}`: the primal enumerator of the
/// result at `ℓ + 1 − i` equals the dual enumerator of `G` at `i`.
pub fn reversed_dual(g: &Kernel) -> Result<Kernel> {
    let ell = g.ell();
    let h = g.inv_transpose();
    let rows: Vec<Vec<FieldElement>> =
        (0..ell).map(|r| (0..ell).map(|c| h[(ell - 1 - r) * ell + (ell - 1 - c)]).collect()).collect();
    Kernel::new(g.field(), &rows)
}
