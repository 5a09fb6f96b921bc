//! Word-size modular arithmetic and NTT-friendly prime search.

/// An odd modulus below `2^62` with Barrett constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    q: u64,
    // floor(2^128 / q) as two words.
    r0: u64,
    r1: u64,
}

impl Modulus {
    pub fn new(q: u64) -> Self {
        assert!(q > 2 && q % 2 == 1 && q < 1 << 62, "modulus must be odd and below 2^62");
        let r = u128::MAX / q as u128;
        Modulus { q, r0: r as u64, r1: (r >> 64) as u64 }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.q
    }

    /// `z mod q` for `z < q * 2^64`.
    #[inline]
    pub fn reduce_wide(&self, z: u128) -> u64 {
        let (z0, z1) = (z as u64, (z >> 64) as u64);
        let t = ((z0 as u128 * self.r0 as u128) >> 64) + z0 as u128 * self.r1 as u128 + z1 as u128 * self.r0 as u128;
        let qhat = ((t >> 64) as u64).wrapping_add(z1.wrapping_mul(self.r1));
        // The quotient estimate is short by at most two.
        let r = z0.wrapping_sub(qhat.wrapping_mul(self.q));
        let r = r.min(r.wrapping_sub(self.q));
        r.min(r.wrapping_sub(self.q))
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.q {
            x
        } else {
            self.reduce_wide(x as u128)
        }
    }

    /// `x mod q` for a signed `x`.
    #[inline]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        let r = self.reduce(x.unsigned_abs());
        if x < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        s.min(s.wrapping_sub(self.q))
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.q))
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_wide(a as u128 * b as u128)
    }

    /// Precomputed `floor(w * 2^64 / q)` for [`Modulus::mul_shoup`].
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.q as u128) as u64
    }

    /// `a * w mod q` with `wp = shoup(w)`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, wp: u64) -> u64 {
        let hi = ((a as u128 * wp as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.q));
        r.min(r.wrapping_sub(self.q))
    }

    pub fn pow(&self, mut b: u64, mut e: u64) -> u64 {
        let mut r = 1;
        b = self.reduce(b);
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, b);
            }
            b = self.mul(b, b);
            e >>= 1;
        }
        r
    }

    /// Inverse modulo a prime `q`.
    pub fn inv(&self, a: u64) -> u64 {
        assert!(self.reduce(a) != 0, "zero has no inverse");
        self.pow(a, self.q - 2)
    }

    /// Centered representative of `a` in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.q / 2 {
            a as i64 - self.q as i64
        } else {
            a as i64
        }
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `count` primes `q = 1 (mod 2n)` nearest to `2^bits`, alternating above and
/// below, skipping `exclude`. `None` when the search leaves `[2^(bits-1), 2^(bits+1))`.
pub fn ntt_primes(bits: u32, n: u64, count: usize, exclude: &[u64]) -> Option<Vec<u64>> {
    if !(2..=61).contains(&bits) {
        return None;
    }
    let m = 2 * n;
    let center = 1u64 << bits;
    if m > center {
        return None;
    }
    let (lo, hi) = (center >> 1, center << 1);
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let up = center + 1 + i * m;
        let down = (center + 1).checked_sub((i + 1) * m);
        if up >= hi && down.map_or(true, |d| d < lo) {
            return None;
        }
        for c in [Some(up).filter(|&u| u < hi), down.filter(|&d| d >= lo)].into_iter().flatten() {
            if out.len() < count && !exclude.contains(&c) && is_prime(c) {
                out.push(c);
            }
        }
        i += 1;
    }
    Some(out)
}

/// A primitive `2n`-th root of unity modulo the prime `q`, the smallest one found by scanning generators.
pub fn primitive_root_2n(q: u64, n: u64) -> Option<u64> {
    let m = 2 * n;
    if (q - 1) % m != 0 {
        return None;
    }
    let md = Modulus::new(q);
    (2..q.min(1 << 20)).map(|x| md.pow(x, (q - 1) / m)).find(|&psi| md.pow(psi, n) == q - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_primality() {
        let primes: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(primes, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]);
        assert!(is_prime((1 << 61) - 1));
        assert!(!is_prime(3215031751));
    }

    #[test]
    fn ntt_primes_are_congruent_and_distinct() {
        let ps = ntt_primes(35, 1 << 14, 11, &[]).unwrap();
        let mut sorted = ps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 11);
        for p in ps {
            assert_eq!(p % (1 << 15), 1);
            assert!(is_prime(p));
            assert!((p as f64).log2() > 34.9 && (p as f64).log2() < 35.1);
        }
        assert!(ntt_primes(14, 1 << 14, 1, &[]).is_none());
    }

    #[test]
    fn root_has_order_2n() {
        let q = ntt_primes(31, 1 << 10, 1, &[]).unwrap()[0];
        let psi = primitive_root_2n(q, 1 << 10).unwrap();
        let md = Modulus::new(q);
        assert_eq!(md.pow(psi, 1 << 11), 1);
        assert_eq!(md.pow(psi, 1 << 10), q - 1);
    }

    proptest! {
        #[test]
        fn barrett_and_shoup_match_u128(a in any::<u64>(), b in any::<u64>(), bits in 20u32..62) {
            let q = (1u64 << bits) - 1 | 1;
            let md = Modulus::new(q);
            let (a, b) = (a % q, b % q);
            let want = (a as u128 * b as u128 % q as u128) as u64;
            prop_assert_eq!(md.mul(a, b), want);
            prop_assert_eq!(md.mul_shoup(a, b, md.shoup(b)), want);
            prop_assert_eq!(md.reduce_i64(-(a as i64 % (1 << 40))), md.neg(a % (1 << 40) % q));
        }
    }
}
