//! RNS polynomials in evaluation form and the per-parameter precomputation.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::arith::Modulus;
use super::encoding::Encoder;
use super::ntt::{galois_permutation, NttTable};
use super::params::CkksParams;
use super::CkksError;

/// Residues modulo a list of primes, one limb of `N` words per prime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPoly {
    pub limbs: Vec<Vec<u64>>,
}

impl RnsPoly {
    pub fn zero(limbs: usize, n: usize) -> Self {
        RnsPoly { limbs: vec![vec![0; n]; limbs] }
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    /// The first `k` limbs.
    pub fn truncated(&self, k: usize) -> RnsPoly {
        RnsPoly { limbs: self.limbs[..k].to_vec() }
    }

    pub fn bytes(&self) -> u64 {
        self.limbs.iter().map(|l| l.len() as u64 * 8).sum()
    }
}

/// Tables for `q_0 .. q_L` followed by the special prime `P`.
#[derive(Debug)]
pub struct Context {
    pub params: CkksParams,
    n: usize,
    tables: Vec<NttTable>,
    pub encoder: Encoder,
    // q_l^-1 mod q_i for i < l.
    rescale_inv: Vec<Vec<(u64, u64)>>,
    // P^-1 and P mod q_i.
    p_inv: Vec<(u64, u64)>,
    p_mod: Vec<u64>,
}

impl Context {
    pub fn new(params: CkksParams) -> Result<Self, CkksError> {
        let n = params.n();
        let tables = params
            .primes
            .iter()
            .chain([&params.special])
            .map(|&q| NttTable::new(q, n).ok_or_else(|| CkksError::Params(format!("{q} is not 1 mod 2N"))))
            .collect::<Result<Vec<_>, _>>()?;
        let chain = params.primes.len();
        let rescale_inv = (0..chain)
            .map(|l| {
                (0..l)
                    .map(|i| {
                        let md = tables[i].md;
                        let v = md.inv(md.reduce(params.primes[l]));
                        (v, md.shoup(v))
                    })
                    .collect()
            })
            .collect();
        let p_inv = (0..chain)
            .map(|i| {
                let md = tables[i].md;
                let v = md.inv(md.reduce(params.special));
                (v, md.shoup(v))
            })
            .collect();
        let p_mod = (0..chain).map(|i| tables[i].md.reduce(params.special)).collect();
        let encoder = Encoder::new(n);
        Ok(Context { params, n, tables, encoder, rescale_inv, p_inv, p_mod })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level()
    }

    /// Table index of the special prime.
    pub fn special_index(&self) -> usize {
        self.tables.len() - 1
    }

    pub fn table(&self, idx: usize) -> &NttTable {
        &self.tables[idx]
    }

    pub fn md(&self, idx: usize) -> &Modulus {
        &self.tables[idx].md
    }

    /// Prime indices of a level-`l` polynomial, with `P` appended when `extended`.
    pub fn indices(&self, level: usize, extended: bool) -> Vec<usize> {
        let mut v: Vec<usize> = (0..=level).collect();
        if extended {
            v.push(self.special_index());
        }
        v
    }

    pub fn p_mod(&self, i: usize) -> u64 {
        self.p_mod[i]
    }

    /// Transforms signed coefficients to evaluation form over `idx`.
    pub fn from_signed(&self, coeffs: &[i64], idx: &[usize]) -> RnsPoly {
        let limbs = idx
            .par_iter()
            .map(|&i| {
                let t = &self.tables[i];
                let mut v: Vec<u64> = coeffs.iter().map(|&c| t.md.reduce_i64(c)).collect();
                t.forward(&mut v);
                v
            })
            .collect();
        RnsPoly { limbs }
    }

    pub fn sample_uniform<R: Rng>(&self, idx: &[usize], rng: &mut R) -> RnsPoly {
        let limbs = idx
            .iter()
            .map(|&i| {
                let q = self.tables[i].md.value();
                (0..self.n).map(|_| rng.gen_range(0..q)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    pub fn sample_ternary<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        (0..self.n).map(|_| rng.gen_range(-1..=1)).collect()
    }

    /// Rounded Gaussian with the configured width, cut at six deviations.
    pub fn sample_error<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        let sigma = self.params.sigma;
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        (0..self.n)
            .map(|_| loop {
                let x: f64 = normal.sample(rng);
                if x.abs() <= 6.0 * sigma {
                    break x.round() as i64;
                }
            })
            .collect()
    }

    pub fn add_assign(&self, a: &mut RnsPoly, b: &RnsPoly, idx: &[usize]) {
        for ((x, y), &i) in a.limbs.iter_mut().zip(&b.limbs).zip(idx) {
            let md = &self.tables[i].md;
            for (u, v) in x.iter_mut().zip(y) {
                *u = md.add(*u, *v);
            }
        }
    }

    pub fn sub_assign(&self, a: &mut RnsPoly, b: &RnsPoly, idx: &[usize]) {
        for ((x, y), &i) in a.limbs.iter_mut().zip(&b.limbs).zip(idx) {
            let md = &self.tables[i].md;
            for (u, v) in x.iter_mut().zip(y) {
                *u = md.sub(*u, *v);
            }
        }
    }

    pub fn neg(&self, a: &RnsPoly, idx: &[usize]) -> RnsPoly {
        let limbs = a
            .limbs
            .iter()
            .zip(idx)
            .map(|(x, &i)| {
                let md = &self.tables[i].md;
                x.iter().map(|&u| md.neg(u)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Pointwise product over the first `idx.len()` limbs of each operand.
    pub fn mul(&self, a: &RnsPoly, b: &RnsPoly, idx: &[usize]) -> RnsPoly {
        let limbs = idx
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let md = &self.tables[i].md;
                a.limbs[k].iter().zip(&b.limbs[k]).map(|(&x, &y)| md.mul(x, y)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// `acc += a * b` limbwise.
    pub fn mul_acc(&self, acc: &mut RnsPoly, a: &RnsPoly, b: &RnsPoly, idx: &[usize]) {
        acc.limbs.par_iter_mut().zip(idx.par_iter()).enumerate().for_each(|(k, (out, &i))| {
            let md = &self.tables[i].md;
            for ((o, &x), &y) in out.iter_mut().zip(&a.limbs[k]).zip(&b.limbs[k]) {
                *o = md.add(*o, md.mul(x, y));
            }
        });
    }

    /// Applies a Galois permutation to every limb.
    pub fn permute(&self, a: &RnsPoly, perm: &[u32]) -> RnsPoly {
        let limbs = a.limbs.iter().map(|x| perm.iter().map(|&p| x[p as usize]).collect()).collect();
        RnsPoly { limbs }
    }

    pub fn galois_permutation(&self, g: usize) -> Vec<u32> {
        galois_permutation(self.n, g)
    }

    /// Coefficient form of limb `k` whose prime is `i`.
    pub fn coeffs(&self, a: &RnsPoly, k: usize, i: usize) -> Vec<u64> {
        let mut v = a.limbs[k].clone();
        self.tables[i].inverse(&mut v);
        v
    }

    /// Drops the last limb (prime `q_l`) dividing by it with rounding:
    /// `(a - [a]_{q_l}) / q_l` with the centered remainder.
    pub fn rescale(&self, a: &RnsPoly, level: usize) -> RnsPoly {
        let last_md = self.tables[level].md;
        let last = self.coeffs(a, level, level);
        let limbs = (0..level)
            .into_par_iter()
            .map(|i| {
                let t = &self.tables[i];
                let mut r: Vec<u64> = last.iter().map(|&c| t.md.reduce_i64(last_md.center(c))).collect();
                t.forward(&mut r);
                let (w, wp) = self.rescale_inv[level][i];
                a.limbs[i].iter().zip(&r).map(|(&x, &y)| t.md.mul_shoup(t.md.sub(x, y), w, wp)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Divides an extended level-`l` polynomial (limbs `q_0..q_l, P`) by `P` with rounding.
    pub fn mod_down_special(&self, a: &RnsPoly, level: usize) -> RnsPoly {
        let sp = self.special_index();
        let p_md = self.tables[sp].md;
        let last = self.coeffs(a, level + 1, sp);
        let limbs = (0..=level)
            .into_par_iter()
            .map(|i| {
                let t = &self.tables[i];
                let mut r: Vec<u64> = last.iter().map(|&c| t.md.reduce_i64(p_md.center(c))).collect();
                t.forward(&mut r);
                let (w, wp) = self.p_inv[i];
                a.limbs[i].iter().zip(&r).map(|(&x, &y)| t.md.mul_shoup(t.md.sub(x, y), w, wp)).collect()
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Centered integer coefficients of a level-`l` polynomial as `f64`.
    pub fn to_centered_f64(&self, a: &RnsPoly, level: usize) -> Vec<f64> {
        let coeffs: Vec<Vec<u64>> = (0..=level).into_par_iter().map(|i| self.coeffs(a, i, i)).collect();
        if level == 0 {
            let md = self.tables[0].md;
            return coeffs[0].iter().map(|&c| md.center(c) as f64).collect();
        }
        let primes: Vec<u64> = (0..=level).map(|i| self.tables[i].md.value()).collect();
        let q: BigUint = primes.iter().fold(BigUint::one(), |acc, &p| acc * p);
        let half = &q >> 1u32;
        let basis: Vec<(u64, BigUint)> = primes
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let qi = &q / p;
                let md = self.tables[i].md;
                let r = (&qi % p).to_u64().expect("below p");
                (md.inv(r), qi)
            })
            .collect();
        let qi = BigInt::from(q.clone());
        (0..self.n)
            .into_par_iter()
            .map(|x| {
                let mut acc = BigUint::zero();
                for (i, (y, qi)) in basis.iter().enumerate() {
                    let v = self.tables[i].md.mul(coeffs[i][x], *y);
                    acc += qi * v;
                }
                acc %= &q;
                if acc > half {
                    (BigInt::from(acc) - &qi).to_f64().unwrap_or(f64::NAN)
                } else {
                    acc.to_f64().unwrap_or(f64::NAN)
                }
            })
            .collect()
    }
}
