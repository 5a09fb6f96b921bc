//! The CKKS backend: encryption, evaluation and key switching on RNS ciphertexts.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::keys::{KeyMaterial, SwitchKey};
use super::ring::{Context, RnsPoly};
use crate::backend::{BackendError, ModulusLadder, PlainVector, SlotBackend};

/// `(c0, c1)` in evaluation form over `q_0..q_l`; decrypts as `c0 + c1 s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CkksCiphertext {
    pub c0: RnsPoly,
    pub c1: RnsPoly,
}

impl CkksCiphertext {
    pub fn level(&self) -> usize {
        self.c0.limb_count() - 1
    }

    pub fn bytes(&self) -> u64 {
        self.c0.bytes() + self.c1.bytes()
    }
}

/// Encoded plaintext in evaluation form over `q_0..q_l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CkksPlaintext {
    pub poly: RnsPoly,
}

pub struct CkksEngine {
    ctx: Arc<Context>,
    keys: Arc<KeyMaterial>,
    ladder: ModulusLadder,
    perms: HashMap<usize, Vec<u32>>,
    rng: Mutex<ChaCha20Rng>,
}

impl CkksEngine {
    pub fn new(ctx: Arc<Context>, keys: Arc<KeyMaterial>) -> Self {
        Self::with_rng(ctx, keys, ChaCha20Rng::from_entropy())
    }

    /// Deterministic encryption randomness, for reproducible tests.
    pub fn with_rng(ctx: Arc<Context>, keys: Arc<KeyMaterial>, rng: ChaCha20Rng) -> Self {
        let perms = keys.rotations.values().map(|r| (r.amount, ctx.galois_permutation(r.galois))).collect();
        let ladder = ctx.params.ladder();
        CkksEngine { ctx, keys, ladder, perms, rng: Mutex::new(rng) }
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn keys(&self) -> &Arc<KeyMaterial> {
        &self.keys
    }

    fn idx(&self, level: usize) -> Vec<usize> {
        self.ctx.indices(level, false)
    }

    /// Rounds `values * scale` onto the ring and transforms over `q_0..q_level`.
    pub fn encode_values(&self, values: &[f64], level: usize, scale: f64) -> Result<RnsPoly, BackendError> {
        let coeffs = self.ctx.encoder.embed(values, scale);
        let log_q: f64 = self.ctx.params.primes[..=level].iter().map(|&p| (p as f64).log2()).sum();
        let bound = (log_q - 1.0).min(62.0).exp2();
        let mut ints = Vec::with_capacity(coeffs.len());
        for c in coeffs {
            let r = c.round();
            if !(r.abs() < bound) {
                return Err(BackendError::EncodeOverflow(level));
            }
            ints.push(r as i64);
        }
        Ok(self.ctx.from_signed(&ints, &self.idx(level)))
    }

    /// `(b u + e0 + m, a u + e1)` under the public key.
    pub fn encrypt_public(&self, values: &[f64], level: usize, scale: f64) -> Result<CkksCiphertext, BackendError> {
        let m = self.encode_values(values, level, scale)?;
        let idx = self.idx(level);
        let ctx = &self.ctx;
        let (u, e0, e1) = {
            let mut rng = self.rng.lock().map_err(|_| BackendError::Crypto("rng poisoned".into()))?;
            (ctx.sample_ternary(&mut *rng), ctx.sample_error(&mut *rng), ctx.sample_error(&mut *rng))
        };
        let u = ctx.from_signed(&u, &idx);
        let pk = &self.keys.public;
        let mut c0 = ctx.from_signed(&e0, &idx);
        ctx.mul_acc(&mut c0, &pk.b, &u, &idx);
        ctx.add_assign(&mut c0, &m, &idx);
        let mut c1 = ctx.from_signed(&e1, &idx);
        ctx.mul_acc(&mut c1, &pk.a, &u, &idx);
        Ok(CkksCiphertext { c0, c1 })
    }

    /// `(-a s + e + m, a)` with a fresh uniform `a`.
    pub fn encrypt_symmetric(&self, values: &[f64], level: usize, scale: f64) -> Result<CkksCiphertext, BackendError> {
        let sk = self.keys.secret.as_ref().ok_or(BackendError::MissingSecretKey)?;
        let m = self.encode_values(values, level, scale)?;
        let idx = self.idx(level);
        let ctx = &self.ctx;
        let (a, e) = {
            let mut rng = self.rng.lock().map_err(|_| BackendError::Crypto("rng poisoned".into()))?;
            (ctx.sample_uniform(&idx, &mut *rng), ctx.sample_error(&mut *rng))
        };
        let mut c0 = ctx.neg(&ctx.mul(&a, &sk.s, &idx), &idx);
        ctx.add_assign(&mut c0, &ctx.from_signed(&e, &idx), &idx);
        ctx.add_assign(&mut c0, &m, &idx);
        Ok(CkksCiphertext { c0, c1: a })
    }

    pub fn decode_poly(&self, p: &RnsPoly, level: usize, scale: f64) -> Vec<f64> {
        let coeffs = self.ctx.to_centered_f64(p, level);
        self.ctx.encoder.project(&coeffs, scale)
    }

    /// `c0 + c1 s` in evaluation form.
    pub fn decrypt_poly(&self, ct: &CkksCiphertext) -> Result<RnsPoly, BackendError> {
        let sk = self.keys.secret.as_ref().ok_or(BackendError::MissingSecretKey)?;
        let idx = self.idx(ct.level());
        let mut m = ct.c0.clone();
        self.ctx.mul_acc(&mut m, &ct.c1, &sk.s, &idx);
        Ok(m)
    }

    /// Centered digits of `d` (one per prime of its level), each in evaluation form over `q_0..q_l, P`.
    /// Uncentered digits carry a mean of `q_j / 2` that concentrates noise in a few slots.
    fn decompose(&self, d: &RnsPoly, level: usize) -> Vec<RnsPoly> {
        let ext = self.ctx.indices(level, true);
        (0..=level)
            .into_par_iter()
            .map(|j| {
                let mdj = *self.ctx.md(j);
                let coeffs: Vec<i64> = self.ctx.coeffs(d, j, j).into_iter().map(|c| mdj.center(c)).collect();
                let limbs = ext
                    .iter()
                    .map(|&t| {
                        if t == j {
                            return d.limbs[j].clone();
                        }
                        let tab = self.ctx.table(t);
                        let mut v: Vec<u64> = coeffs.iter().map(|&c| tab.md.reduce_i64(c)).collect();
                        tab.forward(&mut v);
                        v
                    })
                    .collect();
                RnsPoly { limbs }
            })
            .collect()
    }

    /// `sum_j digit_j * key_j` for both key components, digits optionally permuted, then divided by `P`.
    fn switch(&self, digits: &[RnsPoly], perm: Option<&[u32]>, key: &SwitchKey, level: usize) -> (RnsPoly, RnsPoly) {
        let ext = self.ctx.indices(level, true);
        let n = self.ctx.n();
        let key_limb = |k: usize| if k == level + 1 { key.level + 1 } else { k };
        let (l0, l1): (Vec<Vec<u64>>, Vec<Vec<u64>>) = ext
            .par_iter()
            .enumerate()
            .map(|(k, &t)| {
                let md = self.ctx.md(t);
                let kl = key_limb(k);
                let mut acc0 = vec![0u128; n];
                let mut acc1 = vec![0u128; n];
                for (j, dj) in digits.iter().enumerate() {
                    let d = &dj.limbs[k];
                    let (b, a) = (&key.b[j].limbs[kl], &key.a[j].limbs[kl]);
                    match perm {
                        Some(p) => {
                            for x in 0..n {
                                let v = d[p[x] as usize] as u128;
                                acc0[x] += v * b[x] as u128;
                                acc1[x] += v * a[x] as u128;
                            }
                        }
                        None => {
                            for x in 0..n {
                                let v = d[x] as u128;
                                acc0[x] += v * b[x] as u128;
                                acc1[x] += v * a[x] as u128;
                            }
                        }
                    }
                }
                (
                    acc0.into_iter().map(|z| md.reduce_wide(z)).collect(),
                    acc1.into_iter().map(|z| md.reduce_wide(z)).collect(),
                )
            })
            .unzip();
        let r0 = self.ctx.mod_down_special(&RnsPoly { limbs: l0 }, level);
        let r1 = self.ctx.mod_down_special(&RnsPoly { limbs: l1 }, level);
        (r0, r1)
    }

    fn rotation_key(&self, k: usize, level: usize) -> Result<(&SwitchKey, &[u32]), BackendError> {
        match (self.keys.rotations.get(&k), self.perms.get(&k)) {
            (Some(r), Some(p)) if r.key.level >= level => Ok((&r.key, p)),
            _ => Err(BackendError::MissingRotationKey { amount: k, level }),
        }
    }

    /// Bytes of the evaluation keys held.
    pub fn key_bytes(&self) -> u64 {
        self.keys.rotation_bytes() + self.keys.relin.as_ref().map_or(0, SwitchKey::bytes)
    }
}

impl SlotBackend for CkksEngine {
    type Handle = CkksCiphertext;
    type Plain = CkksPlaintext;

    fn slots(&self) -> usize {
        self.ctx.params.slots()
    }

    fn ladder(&self) -> &ModulusLadder {
        &self.ladder
    }

    fn encode(&self, pv: &PlainVector) -> Result<CkksPlaintext, BackendError> {
        Ok(CkksPlaintext { poly: self.encode_values(&pv.data.to_dense(), pv.level, pv.scale)? })
    }

    /// Secret-key encryption when the secret is held (noise `e` only), public-key otherwise.
    fn encrypt(&self, values: &[f64], level: usize, scale: f64) -> Result<CkksCiphertext, BackendError> {
        match self.keys.secret {
            Some(_) => self.encrypt_symmetric(values, level, scale),
            None => self.encrypt_public(values, level, scale),
        }
    }

    fn decrypt(&self, h: &CkksCiphertext, level: usize, scale: f64) -> Result<Vec<f64>, BackendError> {
        debug_assert_eq!(h.level(), level);
        let m = self.decrypt_poly(h)?;
        Ok(self.decode_poly(&m, level, scale))
    }

    fn add_assign(&self, a: &mut CkksCiphertext, b: &CkksCiphertext, level: usize) -> Result<(), BackendError> {
        let idx = self.idx(level);
        self.ctx.add_assign(&mut a.c0, &b.c0, &idx);
        self.ctx.add_assign(&mut a.c1, &b.c1, &idx);
        Ok(())
    }

    fn add_plain_assign(&self, a: &mut CkksCiphertext, p: &CkksPlaintext, level: usize) -> Result<(), BackendError> {
        self.ctx.add_assign(&mut a.c0, &p.poly, &self.idx(level));
        Ok(())
    }

    fn mult(&self, a: &CkksCiphertext, b: &CkksCiphertext, level: usize) -> Result<CkksCiphertext, BackendError> {
        let rk = self.keys.relin.as_ref().ok_or(BackendError::MissingRelinKey)?;
        if rk.level < level {
            return Err(BackendError::MissingRelinKey);
        }
        let idx = self.idx(level);
        let ctx = &self.ctx;
        let mut d0 = ctx.mul(&a.c0, &b.c0, &idx);
        let mut d1 = ctx.mul(&a.c0, &b.c1, &idx);
        ctx.mul_acc(&mut d1, &a.c1, &b.c0, &idx);
        let d2 = ctx.mul(&a.c1, &b.c1, &idx);
        let (k0, k1) = self.switch(&self.decompose(&d2, level), None, rk, level);
        ctx.add_assign(&mut d0, &k0, &idx);
        ctx.add_assign(&mut d1, &k1, &idx);
        Ok(CkksCiphertext { c0: d0, c1: d1 })
    }

    fn mult_plain(&self, a: &CkksCiphertext, p: &CkksPlaintext, level: usize) -> Result<CkksCiphertext, BackendError> {
        let idx = self.idx(level);
        Ok(CkksCiphertext { c0: self.ctx.mul(&a.c0, &p.poly, &idx), c1: self.ctx.mul(&a.c1, &p.poly, &idx) })
    }

    fn mult_plain_acc(
        &self,
        acc: &mut CkksCiphertext,
        a: &CkksCiphertext,
        p: &CkksPlaintext,
        level: usize,
    ) -> Result<(), BackendError> {
        let idx = self.idx(level);
        self.ctx.mul_acc(&mut acc.c0, &a.c0, &p.poly, &idx);
        self.ctx.mul_acc(&mut acc.c1, &a.c1, &p.poly, &idx);
        Ok(())
    }

    /// Applies the automorphism first, then switches the rotated `c1`.
    fn rotate(&self, a: &CkksCiphertext, k: usize, level: usize) -> Result<CkksCiphertext, BackendError> {
        let (key, perm) = self.rotation_key(k, level)?;
        let mut c0 = self.ctx.permute(&a.c0, perm);
        let c1 = self.ctx.permute(&a.c1, perm);
        let (k0, k1) = self.switch(&self.decompose(&c1, level), None, key, level);
        self.ctx.add_assign(&mut c0, &k0, &self.idx(level));
        Ok(CkksCiphertext { c0, c1: k1 })
    }

    /// Decomposes `c1` once; each amount permutes the shared digits before its key product.
    fn rotate_hoisted(&self, a: &CkksCiphertext, ks: &[usize], level: usize) -> Result<Vec<CkksCiphertext>, BackendError> {
        let keys = ks.iter().map(|&k| self.rotation_key(k, level)).collect::<Result<Vec<_>, _>>()?;
        let digits = self.decompose(&a.c1, level);
        let idx = self.idx(level);
        Ok(keys
            .into_iter()
            .map(|(key, perm)| {
                let (k0, k1) = self.switch(&digits, Some(perm), key, level);
                let mut c0 = self.ctx.permute(&a.c0, perm);
                self.ctx.add_assign(&mut c0, &k0, &idx);
                CkksCiphertext { c0, c1: k1 }
            })
            .collect())
    }

    fn rescale(&self, a: &CkksCiphertext, level: usize) -> Result<CkksCiphertext, BackendError> {
        if level == 0 {
            return Err(BackendError::RescaleFloor);
        }
        Ok(CkksCiphertext { c0: self.ctx.rescale(&a.c0, level), c1: self.ctx.rescale(&a.c1, level) })
    }

    fn mod_down(&self, a: &CkksCiphertext, _from: usize, to: usize) -> Result<CkksCiphertext, BackendError> {
        Ok(CkksCiphertext { c0: a.c0.truncated(to + 1), c1: a.c1.truncated(to + 1) })
    }
}
