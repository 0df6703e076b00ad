//! Arithmetic over F_q with q = p^m.
//!
//! Elements are integers in `[0, q)`. The base-p digits of an element are the
//! coefficients of its polynomial representative, constant term first, so
//! `index = c_0 + c_1 p + ... + c_{m-1} p^{m-1}`. Extension fields use the
//! lexicographically smallest monic irreducible modulus (coefficient tuples
//! compared from the constant term upward), which makes the encoding
//! reproducible.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported field order.
pub const MAX_ORDER: u64 = 1 << 16;

/// Orders up to this size get full addition and multiplication tables.
const TABLE_ORDER: usize = 256;

/// An element of F_q, stored as its integer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldElement(pub u16);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which arithmetic operation [`FieldSpec::arith`] should apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Mul,
    Neg,
    Inv,
}

/// A finite field F_q together with lookup tables for its arithmetic.
pub struct FieldSpec {
    p: u32,
    m: u32,
    q: usize,
    /// Monic modulus coefficients `c_0..=c_m`, present only when `m > 1`.
    modulus: Option<Vec<u32>>,
    add_table: Vec<u16>,
    mul_table: Vec<u16>,
    exp: Vec<u16>,
    log: Vec<u32>,
    neg: Vec<u16>,
    inv: Vec<u16>,
    trace: Vec<u16>,
    chars: Vec<Complex64>,
}

impl fmt::Debug for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSpec")
            .field("p", &self.p)
            .field("m", &self.m)
            .field("q", &self.q)
            .field("modulus", &self.modulus)
            .finish()
    }
}

impl PartialEq for FieldSpec {
    fn eq(&self, other: &Self) -> bool {
        // the modulus is canonical, so (p, m) identifies the representation
        self.p == other.p && self.m == other.m
    }
}

impl Eq for FieldSpec {}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Decomposes `q = p^m`, or reports that `q` is not a prime power.
pub fn prime_power(q: u64) -> Result<(u32, u32)> {
    if q < 2 {
        return Err(Error::NotPrimePower(q));
    }
    let mut p = 2;
    while !q.is_multiple_of(p) {
        p += 1;
    }
    let mut rest = q;
    let mut m = 0;
    while rest.is_multiple_of(p) {
        rest /= p;
        m += 1;
    }
    if rest != 1 {
        return Err(Error::NotPrimePower(q));
    }
    Ok((p as u32, m))
}

// --- polynomials over F_p, coefficient vectors with constant term first ---

fn poly_trim(a: &mut Vec<u32>) {
    while a.len() > 1 && *a.last().unwrap() == 0 {
        a.pop();
    }
}

fn poly_rem(a: &[u32], b: &[u32], p: u32) -> Vec<u32> {
    let mut r = a.to_vec();
    poly_trim(&mut r);
    let db = b.len() - 1;
    let lead_inv = mod_inv(b[db], p);
    while r.len() > db && !(r.len() == 1 && r[0] == 0) {
        let shift = r.len() - 1 - db;
        let coef = (r[r.len() - 1] as u64 * lead_inv as u64 % p as u64) as u32;
        for (j, &bj) in b.iter().enumerate() {
            let t = (coef as u64 * bj as u64 % p as u64) as u32;
            r[shift + j] = (r[shift + j] + p - t) % p;
        }
        poly_trim(&mut r);
        if r.len() - 1 < db {
            break;
        }
    }
    r
}

fn mod_inv(a: u32, p: u32) -> u32 {
    // p is prime, so a^(p-2) is the inverse
    let mut result = 1u64;
    let mut base = a as u64 % p as u64;
    let mut e = p - 2;
    while e > 0 {
        if e & 1 == 1 {
            result = result * base % p as u64;
        }
        base = base * base % p as u64;
        e >>= 1;
    }
    result as u32
}

fn digits_of(mut n: usize, p: u32, len: usize) -> Vec<u32> {
    let mut d = vec![0u32; len];
    for slot in d.iter_mut() {
        *slot = (n % p as usize) as u32;
        n /= p as usize;
    }
    d
}

fn from_digits(d: &[u32], p: u32) -> usize {
    d.iter().rev().fold(0usize, |acc, &c| acc * p as usize + c as usize)
}

/// Trial division against every monic polynomial of degree `1..=deg/2`.
fn is_irreducible(poly: &[u32], p: u32) -> bool {
    let deg = poly.len() - 1;
    for d in 1..=deg / 2 {
        let count = (p as usize).pow(d as u32);
        for low in 0..count {
            let mut cand = digits_of(low, p, d);
            cand.push(1);
            let r = poly_rem(poly, &cand, p);
            if r.iter().all(|&c| c == 0) {
                return false;
            }
        }
    }
    true
}

fn smallest_irreducible(p: u32, m: u32) -> Vec<u32> {
    let count = (p as usize).pow(m);
    // iterate tuples (c_0, c_1, ..., c_{m-1}) in lexicographic order: c_0 varies slowest
    for rank in 0..count {
        let mut coeffs = vec![0u32; m as usize];
        let mut r = rank;
        for j in (0..m as usize).rev() {
            coeffs[j] = (r % p as usize) as u32;
            r /= p as usize;
        }
        coeffs.push(1);
        if is_irreducible(&coeffs, p) {
            return coeffs;
        }
    }
    unreachable!("irreducible polynomials exist in every degree")
}

impl FieldSpec {
    /// Builds F_{p^m} with the canonical modulus.
    pub fn new(p: u32, m: u32) -> Result<Arc<FieldSpec>> {
        if !is_prime(p as u64) {
            return Err(Error::NotPrime(p as u64));
        }
        if m < 1 {
            return Err(Error::ZeroDegree);
        }
        let q = (p as u64).checked_pow(m).unwrap_or(u64::MAX);
        if q > MAX_ORDER {
            return Err(Error::FieldTooLarge(q));
        }
        let q = q as usize;
        let modulus = (m > 1).then(|| smallest_irreducible(p, m));
        let mut spec = FieldSpec {
            p,
            m,
            q,
            modulus,
            add_table: Vec::new(),
            mul_table: Vec::new(),
            exp: Vec::new(),
            log: Vec::new(),
            neg: Vec::new(),
            inv: Vec::new(),
            trace: Vec::new(),
            chars: Vec::new(),
        };
        spec.build_tables();
        Ok(Arc::new(spec))
    }

    /// Builds the field of order `q`, which must be a prime power.
    pub fn with_order(q: u64) -> Result<Arc<FieldSpec>> {
        let (p, m) = prime_power(q)?;
        FieldSpec::new(p, m)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn modulus(&self) -> Option<&[u32]> {
        self.modulus.as_deref()
    }

    pub fn elements(&self) -> impl Iterator<Item = FieldElement> {
        (0..self.q as u16).map(FieldElement)
    }

    pub fn element(&self, value: u64) -> Result<FieldElement> {
        if value as usize >= self.q || value > u16::MAX as u64 {
            return Err(Error::ElementOutOfRange { value, q: self.q });
        }
        Ok(FieldElement(value as u16))
    }

    fn slow_add(&self, a: usize, b: usize) -> usize {
        if self.p == 2 {
            return a ^ b;
        }
        let da = digits_of(a, self.p, self.m as usize);
        let db = digits_of(b, self.p, self.m as usize);
        let sum: Vec<u32> = da.iter().zip(&db).map(|(x, y)| (x + y) % self.p).collect();
        from_digits(&sum, self.p)
    }

    fn slow_mul(&self, a: usize, b: usize) -> usize {
        let p = self.p;
        match &self.modulus {
            None => a * b % p as usize,
            Some(modulus) => {
                let m = self.m as usize;
                let da = digits_of(a, p, m);
                let db = digits_of(b, p, m);
                let mut prod = vec![0u32; 2 * m - 1];
                for (i, &x) in da.iter().enumerate() {
                    if x == 0 {
                        continue;
                    }
                    for (j, &y) in db.iter().enumerate() {
                        prod[i + j] = ((prod[i + j] as u64 + x as u64 * y as u64) % p as u64) as u32;
                    }
                }
                let mut r = poly_rem(&prod, modulus, p);
                r.resize(m, 0);
                from_digits(&r, p)
            }
        }
    }

    fn build_tables(&mut self) {
        let q = self.q;
        // multiplicative group via a primitive element
        let order = q - 1;
        let factors = prime_factors(order);
        let generator = (2..q.max(3))
            .chain(std::iter::once(1))
            .find(|&g| {
                g < q
                    && factors
                        .iter()
                        .all(|&r| self.slow_pow(g, order / r) != 1)
            })
            .unwrap_or(1);
        let mut exp = vec![0u16; order.max(1)];
        let mut log = vec![0u32; q];
        let mut acc = 1usize;
        for (k, slot) in exp.iter_mut().enumerate() {
            *slot = acc as u16;
            log[acc] = k as u32;
            acc = self.slow_mul(acc, generator);
        }
        self.exp = exp;
        self.log = log;

        if q <= TABLE_ORDER {
            let mut add = vec![0u16; q * q];
            let mut mul = vec![0u16; q * q];
            for a in 0..q {
                for b in 0..q {
                    add[a * q + b] = self.slow_add(a, b) as u16;
                    mul[a * q + b] = self.mul_via_log(a, b) as u16;
                }
            }
            self.add_table = add;
            self.mul_table = mul;
        }

        self.neg = (0..q)
            .map(|a| {
                let d = digits_of(a, self.p, self.m as usize);
                let n: Vec<u32> = d.iter().map(|&c| (self.p - c) % self.p).collect();
                from_digits(&n, self.p) as u16
            })
            .collect();
        self.inv = (0..q)
            .map(|a| {
                if a == 0 {
                    0
                } else {
                    let l = self.log[a] as usize;
                    self.exp[(order - l) % order]
                }
            })
            .collect();
        self.trace = (0..q).map(|a| self.slow_trace(a) as u16).collect();
        let p = self.p as f64;
        self.chars = self
            .trace
            .iter()
            .map(|&t| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * t as f64 / p))
            .collect();
    }

    fn slow_pow(&self, a: usize, mut e: usize) -> usize {
        let mut result = 1usize;
        let mut base = a;
        while e > 0 {
            if e & 1 == 1 {
                result = self.slow_mul(result, base);
            }
            base = self.slow_mul(base, base);
            e >>= 1;
        }
        result
    }

    fn mul_via_log(&self, a: usize, b: usize) -> usize {
        if a == 0 || b == 0 {
            return 0;
        }
        let order = self.q - 1;
        self.exp[(self.log[a] as usize + self.log[b] as usize) % order] as usize
    }

    fn slow_trace(&self, a: usize) -> usize {
        // tr(a) = a + a^p + ... + a^{p^{m-1}}
        let mut sum = 0usize;
        let mut power = a;
        for _ in 0..self.m {
            sum = self.slow_add(sum, power);
            power = self.slow_pow(power, self.p as usize);
        }
        sum
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if self.add_table.is_empty() {
            FieldElement(self.slow_add(a.index(), b.index()) as u16)
        } else {
            FieldElement(self.add_table[a.index() * self.q + b.index()])
        }
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        FieldElement(self.neg[a.index()])
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if self.mul_table.is_empty() {
            FieldElement(self.mul_via_log(a.index(), b.index()) as u16)
        } else {
            FieldElement(self.mul_table[a.index() * self.q + b.index()])
        }
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement> {
        if a.0 == 0 {
            return Err(Error::ZeroInverse);
        }
        Ok(FieldElement(self.inv[a.index()]))
    }

    /// Applies `op`; `b` is required for the binary operations.
    pub fn arith(&self, op: ArithOp, a: FieldElement, b: Option<FieldElement>) -> Result<FieldElement> {
        for x in std::iter::once(a).chain(b) {
            if x.index() >= self.q {
                return Err(Error::ElementOutOfRange { value: x.0 as u64, q: self.q });
            }
        }
        let need_b = || b.ok_or_else(|| Error::InvalidArgument("binary operation needs two operands".into()));
        match op {
            ArithOp::Add => Ok(self.add(a, need_b()?)),
            ArithOp::Mul => Ok(self.mul(a, need_b()?)),
            ArithOp::Neg => Ok(self.neg(a)),
            ArithOp::Inv => self.inv(a),
        }
    }

    /// Field trace into the prime subfield, returned as an element of F_p
    /// (an index below p).
    #[inline]
    pub fn trace(&self, a: FieldElement) -> FieldElement {
        FieldElement(self.trace[a.index()])
    }

    /// Additive character exp(2 pi i tr(x) / p).
    #[inline]
    pub fn character(&self, a: FieldElement) -> Complex64 {
        self.chars[a.index()]
    }
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            out.push(d);
            while n.is_multiple_of(d) {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// An invertible ℓ×ℓ matrix over F_q with its inverse and inverse transpose.
///
/// The kernel acts on row vectors from the right: `x = u G`.
#[derive(Clone)]
pub struct Kernel {
    field: Arc<FieldSpec>,
    ell: usize,
    entries: Vec<FieldElement>,
    inverse: Vec<FieldElement>,
    inv_transpose: Vec<FieldElement>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("q", &self.field.q())
            .field("ell", &self.ell)
            .field("rows", &self.rows())
            .finish()
    }
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        *self.field == *other.field && self.ell == other.ell && self.entries == other.entries
    }
}

impl Eq for Kernel {}

impl Kernel {
    /// Inverts `rows` by Gauss-Jordan elimination.
    pub fn new(field: &Arc<FieldSpec>, rows: &[Vec<FieldElement>]) -> Result<Kernel> {
        let ell = rows.len();
        if ell == 0 || rows.iter().any(|r| r.len() != ell) {
            return Err(Error::DimensionMismatch(format!(
                "kernel must be square, got {} rows",
                ell
            )));
        }
        for &x in rows.iter().flatten() {
            if x.index() >= field.q() {
                return Err(Error::ElementOutOfRange { value: x.0 as u64, q: field.q() });
            }
        }
        let entries: Vec<FieldElement> = rows.iter().flatten().copied().collect();
        let inverse = invert(field, &entries, ell).ok_or(Error::Singular)?;
        let mut inv_transpose = vec![FieldElement::ZERO; ell * ell];
        for r in 0..ell {
            for c in 0..ell {
                inv_transpose[c * ell + r] = inverse[r * ell + c];
            }
        }
        Ok(Kernel { field: field.clone(), ell, entries, inverse, inv_transpose })
    }

    /// Convenience constructor from integer indices.
    pub fn from_indices(field: &Arc<FieldSpec>, rows: &[Vec<u64>]) -> Result<Kernel> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|&v| field.element(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Kernel::new(field, &rows)
    }

    pub fn identity(field: &Arc<FieldSpec>, ell: usize) -> Kernel {
        let rows: Vec<Vec<FieldElement>> = (0..ell)
            .map(|r| {
                (0..ell)
                    .map(|c| if r == c { FieldElement::ONE } else { FieldElement::ZERO })
                    .collect()
            })
            .collect();
        Kernel::new(field, &rows).expect("identity is invertible")
    }

    /// Arıkan's 2×2 kernel [[1,0],[1,1]].
    pub fn arikan(field: &Arc<FieldSpec>) -> Kernel {
        Kernel::from_indices(field, &[vec![1, 0], vec![1, 1]]).expect("Arıkan kernel is invertible")
    }

    pub fn field(&self) -> &Arc<FieldSpec> {
        &self.field
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> FieldElement {
        self.entries[r * self.ell + c]
    }

    pub fn entries(&self) -> &[FieldElement] {
        &self.entries
    }

    pub fn inverse(&self) -> &[FieldElement] {
        &self.inverse
    }

    pub fn inv_transpose(&self) -> &[FieldElement] {
        &self.inv_transpose
    }

    pub fn rows(&self) -> Vec<Vec<u16>> {
        self.entries.chunks(self.ell).map(|r| r.iter().map(|x| x.0).collect()).collect()
    }

    /// `x = u G`.
    pub fn apply(&self, u: &[FieldElement], x: &mut [FieldElement]) {
        vec_mat(&self.field, u, &self.entries, self.ell, x);
    }

    /// `u = x G^{-1}`.
    pub fn apply_inverse(&self, x: &[FieldElement], u: &mut [FieldElement]) {
        vec_mat(&self.field, x, &self.inverse, self.ell, u);
    }
}

/// Row vector times a flat row-major square matrix.
pub fn vec_mat(field: &FieldSpec, v: &[FieldElement], mat: &[FieldElement], ell: usize, out: &mut [FieldElement]) {
    out.iter_mut().for_each(|o| *o = FieldElement::ZERO);
    for (r, &vr) in v.iter().enumerate() {
        if vr.0 == 0 {
            continue;
        }
        let row = &mat[r * ell..(r + 1) * ell];
        for (o, &g) in out.iter_mut().zip(row) {
            *o = field.add(*o, field.mul(vr, g));
        }
    }
}

/// Matrix product of flat row-major square matrices.
pub fn mat_mul(field: &FieldSpec, a: &[FieldElement], b: &[FieldElement], ell: usize) -> Vec<FieldElement> {
    let mut out = vec![FieldElement::ZERO; ell * ell];
    for r in 0..ell {
        vec_mat(field, &a[r * ell..(r + 1) * ell], b, ell, &mut out[r * ell..(r + 1) * ell]);
    }
    out
}

fn invert(field: &FieldSpec, entries: &[FieldElement], ell: usize) -> Option<Vec<FieldElement>> {
    let width = 2 * ell;
    let mut aug = vec![FieldElement::ZERO; ell * width];
    for r in 0..ell {
        aug[r * width..r * width + ell].copy_from_slice(&entries[r * ell..(r + 1) * ell]);
        aug[r * width + ell + r] = FieldElement::ONE;
    }
    for col in 0..ell {
        let pivot = (col..ell).find(|&r| aug[r * width + col].0 != 0)?;
        if pivot != col {
            for c in 0..width {
                aug.swap(pivot * width + c, col * width + c);
            }
        }
        let inv = field.inv(aug[col * width + col]).ok()?;
        for c in 0..width {
            aug[col * width + c] = field.mul(aug[col * width + c], inv);
        }
        for r in 0..ell {
            if r == col {
                continue;
            }
            let factor = aug[r * width + col];
            if factor.0 == 0 {
                continue;
            }
            for c in 0..width {
                let t = field.mul(factor, aug[col * width + c]);
                aug[r * width + c] = field.sub(aug[r * width + c], t);
            }
        }
    }
    let mut inv = vec![FieldElement::ZERO; ell * ell];
    for r in 0..ell {
        inv[r * ell..(r + 1) * ell].copy_from_slice(&aug[r * width + ell..(r + 1) * width]);
    }
    Some(inv)
}

/// Draws a uniform element of GL(ℓ, q) by rejection sampling uniform matrices.
pub fn sample_invertible<R: Rng + ?Sized>(field: &Arc<FieldSpec>, ell: usize, rng: &mut R) -> Kernel {
    sample_invertible_counted(field, ell, rng).0
}

/// As [`sample_invertible`], also returning how many matrices were drawn.
pub fn sample_invertible_counted<R: Rng + ?Sized>(
    field: &Arc<FieldSpec>,
    ell: usize,
    rng: &mut R,
) -> (Kernel, usize) {
    let q = field.q() as u16;
    let mut draws = 0;
    loop {
        draws += 1;
        let rows: Vec<Vec<FieldElement>> = (0..ell)
            .map(|_| (0..ell).map(|_| FieldElement(rng.gen_range(0..q))).collect())
            .collect();
        if let Ok(k) = Kernel::new(field, &rows) {
            return (k, draws);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fe(v: u16) -> FieldElement {
        FieldElement(v)
    }

    #[test]
    fn prime_field_has_no_modulus() {
        let f = FieldSpec::new(2, 1).unwrap();
        assert_eq!(f.q(), 2);
        assert!(f.modulus().is_none());
    }

    #[test]
    fn f4_modulus_skips_reducible_candidate() {
        let f = FieldSpec::new(2, 2).unwrap();
        assert_eq!(f.modulus().unwrap(), &[1, 1, 1]);
    }

    #[test]
    fn rejects_composite_characteristic() {
        assert_eq!(FieldSpec::new(4, 1).unwrap_err(), Error::NotPrime(4));
        assert_eq!(FieldSpec::new(3, 0).unwrap_err(), Error::ZeroDegree);
        assert!(matches!(FieldSpec::new(2, 17), Err(Error::FieldTooLarge(_))));
    }

    #[test]
    fn modulus_is_smallest_irreducible_by_brute_force() {
        // independent check: a monic degree-m polynomial is irreducible iff it has
        // no root-free factorisation; for m <= 3 that reduces to "no roots"
        for &(p, m) in &[(2u32, 3u32), (3, 2), (3, 3), (5, 2), (2, 2)] {
            let f = FieldSpec::new(p, m).unwrap();
            let modulus = f.modulus().unwrap().to_vec();
            let has_root = |c: &[u32]| {
                (0..p).any(|x| {
                    c.iter().rev().fold(0u64, |acc, &k| (acc * x as u64 + k as u64) % p as u64) == 0
                })
            };
            assert!(!has_root(&modulus));
            // every lexicographically smaller candidate has a root
            let count = (p as usize).pow(m);
            for rank in 0..count {
                let mut c = vec![0u32; m as usize];
                let mut r = rank;
                for j in (0..m as usize).rev() {
                    c[j] = (r % p as usize) as u32;
                    r /= p as usize;
                }
                c.push(1);
                if c == modulus {
                    break;
                }
                assert!(has_root(&c), "{:?} precedes {:?} but is irreducible", c, modulus);
            }
        }
    }

    #[test]
    fn small_examples() {
        let f2 = FieldSpec::new(2, 1).unwrap();
        assert_eq!(f2.add(fe(1), fe(1)), fe(0));
        let f4 = FieldSpec::new(2, 2).unwrap();
        assert_eq!(f4.mul(fe(2), fe(2)), fe(3));
        assert_eq!(f4.inv(fe(0)), Err(Error::ZeroInverse));
        assert_eq!(f4.arith(ArithOp::Inv, fe(0), None), Err(Error::ZeroInverse));
        assert_eq!(f4.arith(ArithOp::Mul, fe(2), Some(fe(2))), Ok(fe(3)));
    }

    #[test]
    fn trace_examples() {
        let f4 = FieldSpec::new(2, 2).unwrap();
        assert_eq!(f4.trace(fe(0)), fe(0));
        assert_eq!(f4.trace(fe(2)), fe(1));
        let f5 = FieldSpec::new(5, 1).unwrap();
        for x in f5.elements() {
            assert_eq!(f5.trace(x), x);
        }
    }

    #[test]
    fn character_examples() {
        for q in [2u64, 3, 4, 5, 7, 8, 9, 16, 25, 27] {
            let f = FieldSpec::with_order(q).unwrap();
            assert!((f.character(fe(0)) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            let sum: Complex64 = f.elements().map(|x| f.character(x)).sum();
            assert!(sum.norm() < 1e-12, "q={q} sum={sum}");
        }
        let f2 = FieldSpec::new(2, 1).unwrap();
        assert!((f2.character(fe(1)) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn large_field_without_tables() {
        let f = FieldSpec::new(2, 10).unwrap();
        assert_eq!(f.q(), 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = fe(rng.gen_range(1..1024));
            let b = fe(rng.gen_range(0..1024));
            assert_eq!(f.mul(a, f.inv(a).unwrap()), FieldElement::ONE);
            assert_eq!(f.sub(f.add(a, b), b), a);
        }
    }

    #[test]
    fn invert_examples() {
        let f2 = FieldSpec::new(2, 1).unwrap();
        let id = Kernel::identity(&f2, 3);
        assert_eq!(id.inverse(), id.entries());
        let g = Kernel::arikan(&f2);
        assert_eq!(g.inverse(), g.entries());
        let expect: Vec<FieldElement> = [1, 1, 0, 1].iter().map(|&v| fe(v)).collect();
        assert_eq!(g.inv_transpose(), expect.as_slice());
        assert_eq!(
            Kernel::from_indices(&f2, &[vec![1, 1], vec![1, 1]]).unwrap_err(),
            Error::Singular
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = FieldSpec::new(3, 1).unwrap();
        let a = sample_invertible(&f, 5, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_invertible(&f, 5, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_round_trip_on_random_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in [2u64, 3, 4, 5] {
            let f = FieldSpec::with_order(q).unwrap();
            for ell in 2..=5 {
                for _ in 0..100 {
                    let k = sample_invertible(&f, ell, &mut rng);
                    let prod = mat_mul(&f, k.entries(), k.inverse(), ell);
                    assert_eq!(prod, Kernel::identity(&f, ell).entries().to_vec());
                    for r in 0..ell {
                        for c in 0..ell {
                            assert_eq!(k.inv_transpose()[r * ell + c], k.inverse()[c * ell + r]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gl_acceptance_rate_matches_group_order() {
        // |GL(8,2)| / 2^64 = prod_{k=1}^{8} (1 - 2^{-k})
        let expected: f64 = (1..=8).map(|k| 1.0 - 0.5f64.powi(k)).product();
        assert!((expected - 0.2890).abs() < 1e-3);
        let f = FieldSpec::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut accepted = 0usize;
        let draws = 100_000;
        for _ in 0..draws {
            let rows: Vec<Vec<FieldElement>> = (0..8)
                .map(|_| (0..8).map(|_| fe(rng.gen_range(0..2))).collect())
                .collect();
            if Kernel::new(&f, &rows).is_ok() {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / draws as f64;
        let se = (expected * (1.0 - expected) / draws as f64).sqrt();
        assert!((rate - expected).abs() <= 3.0 * se, "rate {rate} vs {expected}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field_and_triple() -> impl Strategy<Value = (u64, u16, u16, u16)> {
            prop::sample::select(vec![2u64, 3, 4, 5, 8, 9]).prop_flat_map(|q| {
                let e = 0..q as u16;
                (Just(q), e.clone(), e.clone(), e)
            })
        }

        proptest! {
            #[test]
            fn field_axioms((q, a, b, c) in field_and_triple()) {
                let f = FieldSpec::with_order(q).unwrap();
                let (a, b, c) = (fe(a), fe(b), fe(c));
                prop_assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                prop_assert_eq!(f.add(a, f.neg(a)), FieldElement::ZERO);
                if a.0 != 0 {
                    prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), FieldElement::ONE);
                }
            }

            #[test]
            fn trace_is_additive((q, a, b, _c) in field_and_triple()) {
                let f = FieldSpec::with_order(q).unwrap();
                let (a, b) = (fe(a), fe(b));
                let p = f.p() as u16;
                prop_assert!(f.trace(a).0 < p);
                prop_assert_eq!(f.trace(f.add(a, b)).0, (f.trace(a).0 + f.trace(b).0) % p);
            }

            #[test]
            fn character_is_multiplicative((q, a, b, _c) in field_and_triple()) {
                let f = FieldSpec::with_order(q).unwrap();
                let (a, b) = (fe(a), fe(b));
                let lhs = f.character(a) * f.character(b);
                prop_assert!((lhs - f.character(f.add(a, b))).norm() < 1e-12);
                prop_assert!((f.character(a).norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
