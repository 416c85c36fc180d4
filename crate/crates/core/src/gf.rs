//! Arithmetic in GF(2^m) for 3 <= m <= 64.
//!
//! Elements are the low `m` bits of a `u64`. One reduction polynomial per
//! degree is pinned in [`REDUCTION_LOW`] (the lexicographically smallest
//! irreducible of that degree, stored without its leading `x^m` term) so
//! that golden values are portable. Degrees up to [`TABLE_DEGREE_MAX`] get
//! log/exp tables for O(1) multiplication; larger degrees use the shift-xor
//! schoolbook product.

use crate::{Error, Result};

pub const DEGREE_MIN: u32 = 3;
pub const DEGREE_MAX: u32 = 64;
/// Largest degree that gets log/exp multiplication tables (2^m entries each).
pub const TABLE_DEGREE_MAX: u32 = 20;

/// Low part r of the reduction polynomial x^m + r, indexed by m - 3.
/// Smallest irreducible polynomial of each degree; verified by the
/// irreducibility test in this module's tests.
pub const REDUCTION_LOW: [u64; 62] = [
    0x3, 0x3, 0x5, 0x3, 0x3, 0x1b, 0x3, 0x9, 0x5, 0x9, 0x1b, 0x21, 0x3, 0x2b, 0x9, 0x9, 0x27,
    0x9, 0x5, 0x3, 0x21, 0x1b, 0x9, 0x1b, 0x27, 0x3, 0x5, 0x3, 0x9, 0x8d, 0x4b, 0x1b, 0x5, 0x35,
    0x3f, 0x63, 0x11, 0x39, 0x9, 0x27, 0x59, 0x21, 0x1b, 0x3, 0x21, 0x2d, 0x71, 0x1d, 0x4b, 0x9,
    0x47, 0x7d, 0x47, 0x95, 0x11, 0x63, 0x7b, 0x3, 0x27, 0x69, 0x3, 0x1b,
];

fn mask(m: u32) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

/// Schoolbook product a*b mod (x^m + red_low) over GF(2).
fn mul_schoolbook(mut a: u64, mut b: u64, m: u32, red_low: u64) -> u64 {
    let msk = mask(m);
    let top = 1u64 << (m - 1);
    let mut acc = 0u64;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        let carry = a & top != 0;
        a = (a << 1) & msk;
        if carry {
            a ^= red_low;
        }
    }
    acc
}

enum MulImpl {
    Table { log: Vec<u32>, exp: Vec<u32> },
    Schoolbook,
}

/// A GF(2^m) field with its pinned reduction polynomial.
pub struct GfContext {
    m: u32,
    red_low: u64,
    mul: MulImpl,
}

impl GfContext {
    pub fn new(m: u32) -> Result<Self> {
        if !(DEGREE_MIN..=DEGREE_MAX).contains(&m) {
            return Err(Error::invalid(format!(
                "field degree m={m} outside supported range {DEGREE_MIN}..={DEGREE_MAX}"
            )));
        }
        let red_low = REDUCTION_LOW[(m - DEGREE_MIN) as usize];
        let mul = if m <= TABLE_DEGREE_MAX {
            build_tables(m, red_low)
        } else {
            MulImpl::Schoolbook
        };
        Ok(GfContext { m, red_low, mul })
    }

    pub fn degree(&self) -> u32 {
        self.m
    }

    /// Number of field elements, saturating at u64::MAX for m = 64.
    pub fn order(&self) -> u64 {
        if self.m == 64 {
            u64::MAX
        } else {
            1u64 << self.m
        }
    }

    pub fn contains(&self, a: u64) -> bool {
        a & !mask(self.m) == 0
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        debug_assert!(self.contains(a) && self.contains(b));
        match &self.mul {
            MulImpl::Table { log, exp } => {
                if a == 0 || b == 0 {
                    return 0;
                }
                let order = (1u64 << self.m) - 1;
                let s = log[a as usize] as u64 + log[b as usize] as u64;
                let s = if s >= order { s - order } else { s };
                exp[s as usize] as u64
            }
            MulImpl::Schoolbook => mul_schoolbook(a, b, self.m, self.red_low),
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        a ^ b
    }

    /// Horner evaluation of sum_i coeffs[i] * x^i.
    #[inline]
    pub fn poly_eval(&self, coeffs: &[u64], x: u64) -> u64 {
        let mut acc = 0u64;
        for &c in coeffs.iter().rev() {
            acc = self.mul(acc, x) ^ c;
        }
        acc
    }

    /// Multiplicative inverse by exhaustive search; test-oracle use only.
    #[cfg(test)]
    fn inverse_brute(&self, a: u64) -> Option<u64> {
        (1..1u64 << self.m).find(|&b| self.mul(a, b) == 1)
    }
}

/// Build log/exp tables over a generator of the multiplicative group.
/// The generator is found by trying small candidates until one has full
/// cycle length, which simultaneously fills the exp table.
fn build_tables(m: u32, red_low: u64) -> MulImpl {
    let order = (1u64 << m) - 1;
    'cand: for g in 2..64u64 {
        let mut exp = vec![0u32; order as usize + 1];
        let mut log = vec![0u32; 1usize << m];
        let mut v = 1u64;
        for i in 0..order {
            exp[i as usize] = v as u32;
            if log[v as usize] != 0 || v == 1 && i > 0 {
                continue 'cand; // cycle shorter than the full group
            }
            log[v as usize] = i as u32;
            v = mul_schoolbook(v, g, m, red_low);
        }
        if v == 1 {
            exp[order as usize] = 1;
            log[1] = 0;
            return MulImpl::Table { log, exp };
        }
    }
    // Every field has a generator; small candidates always suffice for the
    // pinned polynomials, but fall back rather than loop forever.
    MulImpl::Schoolbook
}

/// Irreducibility of x^m + red_low over GF(2): x^(2^m) == x mod f, and
/// gcd(x^(2^(m/p)) - x, f) = 1 for each prime p dividing m.
pub fn is_irreducible(m: u32, red_low: u64) -> bool {
    let xq = |e: u32| -> u64 {
        // x^(2^e) mod f by repeated squaring of x
        let mut v = 2u64;
        for _ in 0..e {
            v = mul_schoolbook(v, v, m, red_low);
        }
        v
    };
    if xq(m) != 2 {
        return false;
    }
    let f = (1u128 << m) | red_low as u128;
    for p in prime_factors(m as u64) {
        let t = (xq(m / p as u32) ^ 2) as u128;
        if poly_gcd(f, t) != 1 {
            return false;
        }
    }
    true
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut fs = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            fs.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        fs.push(n);
    }
    fs
}

fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        while a != 0 && a.leading_zeros() <= b.leading_zeros() {
            a ^= b << (b.leading_zeros() - a.leading_zeros());
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}
