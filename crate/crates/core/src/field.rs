//! Prime-field arithmetic over `Z/pZ` for word-sized primes, plus the
//! balanced-residue convention used to carry signed integers through circuits.
//!
//! Elements are stored as least nonnegative residues. A residue `v` decodes to
//! the signed integer `v` when `v <= (p - 1) / 2` and to `v - p` otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is outside the supported range [3, 2^63)")]
    ModulusRange(u64),
    #[error("field mismatch: {left} vs {right}")]
    Mismatch { left: u64, right: u64 },
    #[error("signed value {value} does not fit the balanced range of p = {p}")]
    OutOfRange { value: i128, p: u64 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// Runtime description of the prime field a circuit lives in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldConfig {
    p: u64,
    name: String,
}

impl FieldConfig {
    pub fn new(p: u64, name: impl Into<String>) -> Result<Self, FieldError> {
        if !(3..1 << 63).contains(&p) {
            return Err(FieldError::ModulusRange(p));
        }
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self { p, name: name.into() })
    }

    /// The default field, p = 2^61 - 1.
    pub fn mersenne61() -> Self {
        Self {
            p: MERSENNE_61,
            name: "mersenne61".into(),
        }
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Raw-residue arithmetic for this field.
    pub fn arith(&self) -> Fp {
        Fp { p: self.p }
    }
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self::mersenne61()
    }
}

/// Arithmetic on raw residues. This is the hot-path interface used by the
/// circuit evaluator and checker; callers guarantee every operand is `< p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp {
    p: u64,
}

impl Fp {
    pub fn modulus(self) -> u64 {
        self.p
    }

    /// `(p - 1) / 2`, the largest value that decodes as nonnegative.
    pub fn half(self) -> u64 {
        (self.p - 1) / 2
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        // p < 2^63 so the sum cannot overflow.
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        if self.p == MERSENNE_61 {
            reduce_mersenne61(a as u128 * b as u128)
        } else if self.p <= u32::MAX as u64 {
            a * b % self.p
        } else {
            (a as u128 * b as u128 % self.p as u128) as u64
        }
    }

    /// Reduce an unsigned 128-bit accumulator.
    #[inline]
    pub fn reduce_u128(self, x: u128) -> u64 {
        if self.p <= u32::MAX as u64 && x <= u64::MAX as u128 {
            x as u64 % self.p
        } else {
            (x % self.p as u128) as u64
        }
    }

    pub fn pow(self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat, `a^(p-2)`.
    pub fn inv(self, a: u64) -> Result<u64, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.p - 2))
    }

    /// Reduce an arbitrary signed integer into `[0, p)`.
    #[inline]
    pub fn reduce_i128(self, x: i128) -> u64 {
        x.rem_euclid(self.p as i128) as u64
    }

    /// Encode a signed integer in the balanced window.
    pub fn encode(self, x: i128) -> Result<u64, FieldError> {
        let half = self.half() as i128;
        if x > half || x < -half {
            return Err(FieldError::OutOfRange { value: x, p: self.p });
        }
        Ok(self.reduce_i128(x))
    }

    /// Balanced-residue decode.
    #[inline]
    pub fn decode(self, v: u64) -> i64 {
        if v <= self.half() {
            v as i64
        } else {
            -((self.p - v) as i64)
        }
    }
}

#[inline]
fn reduce_mersenne61(x: u128) -> u64 {
    // x < 2^122, so two folds bring it below 2^62.
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let s = lo + hi;
    let s = (s & MERSENNE_61) + (s >> 61);
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// A field element tagged with its modulus so mixed-field arithmetic is
/// caught instead of silently producing garbage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    p: u64,
}

#[allow(clippy::should_implement_trait)]
impl FieldElement {
    /// Build from any integer; the value is reduced mod p.
    pub fn from_u64(cfg: &FieldConfig, value: u64) -> Self {
        Self {
            value: value % cfg.p,
            p: cfg.p,
        }
    }

    pub fn zero(cfg: &FieldConfig) -> Self {
        Self { value: 0, p: cfg.p }
    }

    pub fn one(cfg: &FieldConfig) -> Self {
        Self { value: 1, p: cfg.p }
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> u64 {
        self.p
    }

    fn fp(self) -> Fp {
        Fp { p: self.p }
    }

    fn same_field(self, other: Self) -> Result<Fp, FieldError> {
        if self.p != other.p {
            return Err(FieldError::Mismatch {
                left: self.p,
                right: other.p,
            });
        }
        Ok(self.fp())
    }

    pub fn add(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(other)?;
        Ok(Self {
            value: f.add(self.value, other.value),
            p: self.p,
        })
    }

    pub fn sub(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(other)?;
        Ok(Self {
            value: f.sub(self.value, other.value),
            p: self.p,
        })
    }

    pub fn mul(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(other)?;
        Ok(Self {
            value: f.mul(self.value, other.value),
            p: self.p,
        })
    }

    pub fn neg(self) -> Self {
        Self {
            value: self.fp().neg(self.value),
            p: self.p,
        }
    }

    pub fn inverse(self) -> Result<Self, FieldError> {
        Ok(Self {
            value: self.fp().inv(self.value)?,
            p: self.p,
        })
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

pub fn fe_add(a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
    a.add(b)
}

pub fn fe_mul(a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
    a.mul(b)
}

/// Map a signed integer to its least nonnegative residue. Rejects values
/// outside `[-(p-1)/2, (p-1)/2]`.
pub fn encode_signed(cfg: &FieldConfig, x: i128) -> Result<FieldElement, FieldError> {
    Ok(FieldElement {
        value: cfg.arith().encode(x)?,
        p: cfg.p,
    })
}

pub fn decode_signed(v: FieldElement) -> i64 {
    v.fp().decode(v.value)
}

/// Deterministic Miller-Rabin, exact for every 64-bit input.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &q in &SMALL {
        if n.is_multiple_of(q) {
            return n == q;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for &a in &SMALL {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
