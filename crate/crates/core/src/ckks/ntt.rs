//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! Output index `k` holds the evaluation at `psi^(2 * brev(k) + 1)`, so a Galois
//! automorphism acts on transformed polynomials as a slot permutation.

use super::arith::{primitive_root_2n, Modulus};

pub fn bit_reverse(x: usize, log_n: u32) -> usize {
    if log_n == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - log_n)
    }
}

#[derive(Debug, Clone)]
pub struct NttTable {
    pub md: Modulus,
    n: usize,
    log_n: u32,
    psi: u64,
    // Powers of psi (and psi^-1) in bit-reversed order with Shoup companions.
    fwd: Vec<(u64, u64)>,
    inv: Vec<(u64, u64)>,
    n_inv: (u64, u64),
}

impl NttTable {
    /// `None` when `q` is not `1 mod 2n`.
    pub fn new(q: u64, n: usize) -> Option<Self> {
        assert!(n.is_power_of_two() && n >= 2);
        let md = Modulus::new(q);
        let psi = primitive_root_2n(q, n as u64)?;
        let psi_inv = md.inv(psi);
        let log_n = n.trailing_zeros();
        let mut fwd = Vec::with_capacity(n);
        let mut inv = Vec::with_capacity(n);
        for k in 0..n {
            let e = bit_reverse(k, log_n) as u64;
            let w = md.pow(psi, e);
            let wi = md.pow(psi_inv, e);
            fwd.push((w, md.shoup(w)));
            inv.push((wi, md.shoup(wi)));
        }
        let ni = md.inv(n as u64);
        Some(NttTable { md, n, log_n, psi, fwd, inv, n_inv: (ni, md.shoup(ni)) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn psi(&self) -> u64 {
        self.psi
    }

    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let md = &self.md;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let (w, wp) = self.fwd[m + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = md.mul_shoup(*y, w, wp);
                    *x = md.add(u, v);
                    *y = md.sub(u, v);
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let md = &self.md;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            for i in 0..h {
                let (w, wp) = self.inv[h + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    *x = md.add(u, v);
                    *y = md.mul_shoup(md.sub(u, v), w, wp);
                }
            }
            t <<= 1;
            m = h;
        }
        let (ni, nip) = self.n_inv;
        for x in a.iter_mut() {
            *x = md.mul_shoup(*x, ni, nip);
        }
    }

    /// Exponent `e` (odd, below `2n`) of the evaluation point of output index `k`.
    pub fn point_exponent(&self, k: usize) -> usize {
        2 * bit_reverse(k, self.log_n) + 1
    }
}

/// Permutation `perm` with `ntt(a(X^g))[k] = ntt(a)[perm[k]]`, for odd `g`.
pub fn galois_permutation(n: usize, g: usize) -> Vec<u32> {
    let log_n = n.trailing_zeros();
    let m = 2 * n;
    (0..n)
        .map(|k| {
            let e = (2 * bit_reverse(k, log_n) + 1) * g % m;
            bit_reverse((e - 1) / 2, log_n) as u32
        })
        .collect()
}

/// `a(X^g)` in coefficient form.
pub fn automorphism_coeffs(a: &[u64], g: usize, md: &Modulus) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0; n];
    for (i, &c) in a.iter().enumerate() {
        let e = i * g % (2 * n);
        if e < n {
            out[e] = c;
        } else {
            out[e - n] = md.neg(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks::arith::ntt_primes;
    use proptest::prelude::*;

    fn naive_ntt(a: &[u64], t: &NttTable) -> Vec<u64> {
        let md = &t.md;
        (0..a.len())
            .map(|k| {
                let x = md.pow(t.psi(), t.point_exponent(k) as u64);
                a.iter().rev().fold(0, |acc, &c| md.add(md.mul(acc, x), c))
            })
            .collect()
    }

    fn schoolbook(a: &[u64], b: &[u64], md: &Modulus) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0; n];
        for i in 0..n {
            for j in 0..n {
                let p = md.mul(a[i], b[j]);
                let k = i + j;
                if k < n {
                    out[k] = md.add(out[k], p);
                } else {
                    out[k - n] = md.sub(out[k - n], p);
                }
            }
        }
        out
    }

    fn table(bits: u32, n: usize) -> NttTable {
        NttTable::new(ntt_primes(bits, n as u64, 1, &[]).unwrap()[0], n).unwrap()
    }

    #[test]
    fn constant_has_flat_spectrum() {
        let t = table(31, 16);
        let mut a = vec![0u64; 16];
        a[0] = 7;
        t.forward(&mut a);
        assert!(a.iter().all(|&x| x == 7));
    }

    #[test]
    fn rejects_prime_without_root() {
        assert!(NttTable::new(1_000_003, 16).is_none());
    }

    proptest! {
        #[test]
        fn matches_naive_transform(seed in prop::collection::vec(any::<u64>(), 32), bits in 28u32..38) {
            let t = table(bits, 32);
            let a: Vec<u64> = seed.iter().map(|x| x % t.md.value()).collect();
            let mut f = a.clone();
            t.forward(&mut f);
            prop_assert_eq!(&f, &naive_ntt(&a, &t));
            t.inverse(&mut f);
            prop_assert_eq!(f, a);
        }

        #[test]
        fn galois_permutation_matches_coefficient_automorphism(seed in prop::collection::vec(any::<u64>(), 64), k in 0u32..32) {
            let t = table(31, 64);
            let g = (0..k).fold(1usize, |acc, _| acc * 5 % 128);
            let a: Vec<u64> = seed.iter().map(|x| x % t.md.value()).collect();
            let mut direct = automorphism_coeffs(&a, g, &t.md);
            t.forward(&mut direct);
            let mut f = a;
            t.forward(&mut f);
            let perm = galois_permutation(64, g);
            let permuted: Vec<u64> = perm.iter().map(|&p| f[p as usize]).collect();
            prop_assert_eq!(direct, permuted);
        }
    }

    #[test]
    fn convolution_theorem_on_every_profile_prime() {
        use crate::ckks::params::{CkksParams, Profile};
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            rng
        };
        for profile in [Profile::Hear, Profile::FastHear] {
            let p = CkksParams::generate(profile).unwrap();
            for &q in p.primes.iter().chain([&p.special]) {
                // Same prime family, degree 16.
                let t = NttTable::new(q, 16).unwrap();
                let a: Vec<u64> = (0..16).map(|_| next() % q).collect();
                let b: Vec<u64> = (0..16).map(|_| next() % q).collect();
                let (mut fa, mut fb) = (a.clone(), b.clone());
                t.forward(&mut fa);
                t.forward(&mut fb);
                let mut prod: Vec<u64> = fa.iter().zip(&fb).map(|(x, y)| t.md.mul(*x, *y)).collect();
                t.inverse(&mut prod);
                assert_eq!(prod, schoolbook(&a, &b, &t.md), "prime {q}");
            }
        }
    }
}
