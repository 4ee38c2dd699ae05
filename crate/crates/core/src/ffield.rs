//! Arithmetic in a prime field `F_q` and over vectors of field elements.
//!
//! Elements are stored as canonical representatives in `[0, q)`. The modulus
//! lives in a [`Field`] context rather than in each element, so vectors stay
//! plain `Vec<u64>` underneath.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Mersenne prime 2^31 - 1.
pub const DEFAULT_PRIME: u64 = 2_147_483_647;

/// A field element in canonical form. Only meaningful together with the
/// [`Field`] that produced it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fe(u64);

impl Fe {
    pub const ZERO: Fe = Fe(0);
    pub const ONE: Fe = Fe(1);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Vector over the field.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FieldVec(Vec<Fe>);

impl FieldVec {
    pub fn new(elems: Vec<Fe>) -> Self {
        FieldVec(elems)
    }

    pub fn zeros(len: usize) -> Self {
        FieldVec(vec![Fe::ZERO; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Fe] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Fe> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<Fe> {
        self.0
    }

    pub fn values(&self) -> Vec<u64> {
        self.0.iter().map(|e| e.0).collect()
    }

    /// Splits into `parts` consecutive chunks of equal length.
    pub fn chunks(&self, parts: usize) -> Result<Vec<FieldVec>> {
        if parts == 0 || !self.0.len().is_multiple_of(parts) {
            return Err(Error::Dimension {
                expected: parts.max(1) * (self.0.len() / parts.max(1)),
                got: self.0.len(),
            });
        }
        let width = self.0.len() / parts;
        Ok((0..parts)
            .map(|r| FieldVec(self.0[r * width..(r + 1) * width].to_vec()))
            .collect())
    }

    pub fn concat(parts: &[FieldVec]) -> FieldVec {
        FieldVec(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

impl std::ops::Index<usize> for FieldVec {
    type Output = Fe;

    fn index(&self, i: usize) -> &Fe {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a FieldVec {
    type Item = &'a Fe;
    type IntoIter = std::slice::Iter<'a, Fe>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// The prime field `F_q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    q: u64,
}

impl Field {
    /// Builds the field, rejecting composite moduli.
    pub fn new(q: u64) -> Result<Self> {
        if !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(Field { q })
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    /// Reduces an arbitrary integer into the field.
    pub fn elem(&self, v: u64) -> Fe {
        Fe(v % self.q)
    }

    /// Maps a signed integer to its canonical residue, e.g. `-56 -> q - 56`.
    pub fn from_i64(&self, v: i64) -> Fe {
        Fe(v.rem_euclid(self.q as i64) as u64)
    }

    /// Canonical element from a value already known to be in range.
    pub fn checked(&self, v: u64) -> Result<Fe> {
        if v < self.q {
            Ok(Fe(v))
        } else {
            Err(Error::Parse(format!("{v} is not below the modulus {}", self.q)))
        }
    }

    pub fn add(&self, a: Fe, b: Fe) -> Fe {
        let (s, overflow) = a.0.overflowing_add(b.0);
        if overflow || s >= self.q {
            Fe(s.wrapping_sub(self.q))
        } else {
            Fe(s)
        }
    }

    pub fn sub(&self, a: Fe, b: Fe) -> Fe {
        if a.0 >= b.0 {
            Fe(a.0 - b.0)
        } else {
            Fe(self.q - (b.0 - a.0))
        }
    }

    pub fn neg(&self, a: Fe) -> Fe {
        if a.0 == 0 {
            a
        } else {
            Fe(self.q - a.0)
        }
    }

    pub fn mul(&self, a: Fe, b: Fe) -> Fe {
        Fe(mulmod(a.0, b.0, self.q))
    }

    pub fn pow(&self, a: Fe, e: u64) -> Fe {
        Fe(powmod(a.0, e, self.q))
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(&self, a: Fe) -> Result<Fe> {
        if a.0 == 0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.pow(a, self.q - 2))
    }

    pub fn div(&self, a: Fe, b: Fe) -> Result<Fe> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn sum<I: IntoIterator<Item = Fe>>(&self, it: I) -> Fe {
        it.into_iter().fold(Fe::ZERO, |acc, x| self.add(acc, x))
    }

    pub fn vec_from_u64(&self, vals: &[u64]) -> FieldVec {
        FieldVec(vals.iter().map(|&v| self.elem(v)).collect())
    }

    pub fn vec_from_i64(&self, vals: &[i64]) -> FieldVec {
        FieldVec(vals.iter().map(|&v| self.from_i64(v)).collect())
    }

    pub fn add_vec(&self, u: &FieldVec, v: &FieldVec) -> Result<FieldVec> {
        same_len(u, v)?;
        Ok(FieldVec(
            u.0.iter().zip(&v.0).map(|(&a, &b)| self.add(a, b)).collect(),
        ))
    }

    pub fn sub_vec(&self, u: &FieldVec, v: &FieldVec) -> Result<FieldVec> {
        same_len(u, v)?;
        Ok(FieldVec(
            u.0.iter().zip(&v.0).map(|(&a, &b)| self.sub(a, b)).collect(),
        ))
    }

    pub fn scale_vec(&self, c: Fe, u: &FieldVec) -> FieldVec {
        FieldVec(u.0.iter().map(|&a| self.mul(c, a)).collect())
    }

    /// `acc += c * u`, in place.
    pub fn axpy(&self, acc: &mut FieldVec, c: Fe, u: &FieldVec) -> Result<()> {
        same_len(acc, u)?;
        for (a, &b) in acc.0.iter_mut().zip(&u.0) {
            *a = self.add(*a, self.mul(c, b));
        }
        Ok(())
    }

    /// Sum of equally long vectors; `len` is the result length when `vs` is empty.
    pub fn sum_vecs<'a, I>(&self, len: usize, vs: I) -> Result<FieldVec>
    where
        I: IntoIterator<Item = &'a FieldVec>,
    {
        let mut acc = FieldVec::zeros(len);
        for v in vs {
            acc = self.add_vec(&acc, v)?;
        }
        Ok(acc)
    }

    /// Linear combination `sum_r coeffs[r] * vs[r]`.
    pub fn combine(&self, coeffs: &[Fe], vs: &[&FieldVec]) -> Result<FieldVec> {
        if coeffs.len() != vs.len() {
            return Err(Error::Dimension {
                expected: coeffs.len(),
                got: vs.len(),
            });
        }
        let len = vs.first().map_or(0, |v| v.len());
        let mut acc = FieldVec::zeros(len);
        for (&c, v) in coeffs.iter().zip(vs) {
            self.axpy(&mut acc, c, v)?;
        }
        Ok(acc)
    }

    /// A uniformly random element.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Fe {
        Fe(rng.gen_range(0..self.q))
    }

    /// `len` independent uniform elements drawn from `rng`.
    pub fn uniform_vec<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> FieldVec {
        FieldVec((0..len).map(|_| self.sample(rng)).collect())
    }
}

fn same_len(u: &FieldVec, v: &FieldVec) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(())
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    if m <= 1 << 32 {
        (a % m) * (b % m) % m
    } else {
        ((a as u128 * b as u128) % m as u128) as u64
    }
}

fn powmod(mut base: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod(acc, base, m);
        }
        base = mulmod(base, base, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin. The first twelve prime bases are exact for
/// every n < 3.3 * 10^24, which covers all of `u64`.
pub fn is_prime(n: u64) -> bool {
    thread_local! {
        static LAST: std::cell::Cell<Option<(u64, bool)>> = const { std::cell::Cell::new(None) };
    }
    LAST.with(|last| match last.get() {
        Some((m, verdict)) if m == n => verdict,
        _ => {
            let verdict = miller_rabin(n);
            last.set(Some((n, verdict)));
            verdict
        }
    })
}

fn miller_rabin(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'witness: for &a in &BASES {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
