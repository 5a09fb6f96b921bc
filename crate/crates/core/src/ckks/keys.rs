//! Secret, public, relinearization and rotation keys.
//!
//! Switching keys use one digit per chain prime and the special prime `P`.
//! Digit `j` of a key from `s'` to `s` is `(b_j, a_j)` with
//! `b_j = -a_j s + e_j + P s' [limb == j]` on the chain limbs and
//! `b_j = -a_j s + e_j` on the `P` limb. A key generated for level `l` serves
//! every lower level by dropping limbs and digits.

use std::collections::BTreeMap;

use rand::{CryptoRng, Rng};

use super::ring::{Context, RnsPoly};

/// Galois element `5^k mod 2N` of a left rotation by `k` slots.
pub fn galois_element(k: usize, n: usize) -> usize {
    let m = 2 * n as u64;
    let mut g = 1u64;
    let mut b = 5u64;
    let mut e = k as u64;
    while e > 0 {
        if e & 1 == 1 {
            g = g * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    g as usize
}

/// Ternary secret in evaluation form over all chain primes and `P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub s: RnsPoly,
}

/// `(b, a) = (-a s + e, a)` over the chain primes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub b: RnsPoly,
    pub a: RnsPoly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchKey {
    /// Highest level this key serves.
    pub level: usize,
    /// Per digit, limbs `q_0..q_level, P`.
    pub b: Vec<RnsPoly>,
    pub a: Vec<RnsPoly>,
}

impl SwitchKey {
    pub fn bytes(&self) -> u64 {
        self.b.iter().chain(&self.a).map(RnsPoly::bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RotationKey {
    pub amount: usize,
    pub galois: usize,
    pub key: SwitchKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub secret: Option<SecretKey>,
    pub public: PublicKey,
    pub relin: Option<SwitchKey>,
    pub rotations: BTreeMap<usize, RotationKey>,
}

impl KeyMaterial {
    /// Rotation amounts with the level each key serves up to.
    pub fn rotation_levels(&self) -> BTreeMap<usize, usize> {
        self.rotations.iter().map(|(&k, r)| (k, r.key.level)).collect()
    }

    /// Whether a key serves every amount in `set` at its level.
    pub fn covers(&self, set: &BTreeMap<usize, usize>) -> bool {
        set.iter().all(|(k, &l)| self.rotations.get(k).is_some_and(|r| r.key.level >= l))
    }

    /// Like [`KeyMaterial::covers`], with no keys beyond `set`.
    pub fn covers_exactly(&self, set: &BTreeMap<usize, usize>) -> bool {
        self.rotations.len() == set.len() && self.covers(set)
    }

    pub fn rotation_bytes(&self) -> u64 {
        self.rotations.values().map(|r| r.key.bytes()).sum()
    }

    /// Drops the secret key, leaving evaluation material only.
    pub fn public_only(&self) -> KeyMaterial {
        KeyMaterial { secret: None, ..self.clone() }
    }
}

pub fn gen_secret<R: Rng + CryptoRng>(ctx: &Context, rng: &mut R) -> SecretKey {
    let s = ctx.sample_ternary(rng);
    SecretKey { s: ctx.from_signed(&s, &ctx.indices(ctx.max_level(), true)) }
}

pub fn gen_public<R: Rng + CryptoRng>(ctx: &Context, sk: &SecretKey, rng: &mut R) -> PublicKey {
    let idx = ctx.indices(ctx.max_level(), false);
    let a = ctx.sample_uniform(&idx, rng);
    let e = ctx.from_signed(&ctx.sample_error(rng), &idx);
    let mut b = ctx.neg(&ctx.mul(&a, &sk.s, &idx), &idx);
    ctx.add_assign(&mut b, &e, &idx);
    PublicKey { b, a }
}

/// Key from `target` (evaluation form, all limbs) to the secret, serving levels up to `level`.
pub fn gen_switch_key<R: Rng + CryptoRng>(
    ctx: &Context,
    sk: &SecretKey,
    target: &RnsPoly,
    level: usize,
    rng: &mut R,
) -> SwitchKey {
    let idx = ctx.indices(level, true);
    let s = select(&sk.s, &idx, ctx);
    let t = select(target, &idx, ctx);
    let mut bs = Vec::with_capacity(level + 1);
    let mut as_ = Vec::with_capacity(level + 1);
    for j in 0..=level {
        let a = ctx.sample_uniform(&idx, rng);
        let e = ctx.from_signed(&ctx.sample_error(rng), &idx);
        let mut b = ctx.neg(&ctx.mul(&a, &s, &idx), &idx);
        ctx.add_assign(&mut b, &e, &idx);
        let md = ctx.md(j);
        let p = ctx.p_mod(j);
        let pp = md.shoup(p);
        for (x, &y) in b.limbs[j].iter_mut().zip(&t.limbs[j]) {
            *x = md.add(*x, md.mul_shoup(y, p, pp));
        }
        bs.push(b);
        as_.push(a);
    }
    SwitchKey { level, b: bs, a: as_ }
}

/// Limbs of a full (all chain primes plus `P`) polynomial at the given table indices.
fn select(full: &RnsPoly, idx: &[usize], ctx: &Context) -> RnsPoly {
    let sp = ctx.special_index();
    RnsPoly {
        limbs: idx.iter().map(|&i| if i == sp { full.limbs[full.limbs.len() - 1].clone() } else { full.limbs[i].clone() }).collect(),
    }
}

pub fn gen_relin<R: Rng + CryptoRng>(ctx: &Context, sk: &SecretKey, rng: &mut R) -> SwitchKey {
    let idx = ctx.indices(ctx.max_level(), true);
    let s2 = ctx.mul(&sk.s, &sk.s, &idx);
    gen_switch_key(ctx, sk, &s2, ctx.max_level(), rng)
}

pub fn gen_rotation<R: Rng + CryptoRng>(ctx: &Context, sk: &SecretKey, amount: usize, level: usize, rng: &mut R) -> RotationKey {
    let galois = galois_element(amount, ctx.n());
    let perm = ctx.galois_permutation(galois);
    let rotated = ctx.permute(&sk.s, &perm);
    RotationKey { amount, galois, key: gen_switch_key(ctx, sk, &rotated, level, rng) }
}

/// Full key material: a relinearization key and one rotation key per amount at its level.
pub fn keygen<R: Rng + CryptoRng>(ctx: &Context, rotations: &BTreeMap<usize, usize>, rng: &mut R) -> KeyMaterial {
    let sk = gen_secret(ctx, rng);
    let public = gen_public(ctx, &sk, rng);
    let relin = gen_relin(ctx, &sk, rng);
    let rotations = rotations
        .iter()
        .map(|(&k, &l)| (k, gen_rotation(ctx, &sk, k, l.min(ctx.max_level()), rng)))
        .collect();
    KeyMaterial { secret: Some(sk), public, relin: Some(relin), rotations }
}

/// Bytes of one switching key serving level `l` at ring degree `n`.
pub fn switch_key_bytes(n: usize, level: usize) -> u64 {
    (level as u64 + 1) * 2 * (level as u64 + 2) * n as u64 * 8
}
