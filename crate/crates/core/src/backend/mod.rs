//! Slot-semantics evaluation contract shared by the simulator and the CKKS engine.
//!
//! Backends implement raw operations on opaque handles ([`SlotBackend`]); the
//! [`Evaluator`] wraps a backend with the level/scale ledger, the strict add
//! contract and per-layer operation counters.

mod counters;
pub mod sim;

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counters::{Counters, OpCount, OpCountDelta};
pub use sim::{Fixed, SimBuf, Simulator, SlotScalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("level {level} out of range 0..={max}")]
    LevelRange { level: usize, max: usize },
    #[error("level mismatch: {a} vs {b}")]
    LevelMismatch { a: usize, b: usize },
    #[error("scale mismatch: {a} vs {b}")]
    ScaleMismatch { a: f64, b: f64 },
    #[error("plaintext encoded at level {plain} below ciphertext level {ct} (level-aware encoding violated)")]
    PlainLevel { plain: usize, ct: usize },
    #[error("cannot rescale a level-0 ciphertext")]
    RescaleFloor,
    #[error("cannot raise level from {from} to {to}")]
    RaiseLevel { from: usize, to: usize },
    #[error("rotation amount {0} out of range")]
    RotRange(isize),
    #[error("vector has {got} values, backend has {slots} slots")]
    Length { got: usize, slots: usize },
    #[error("non-finite slot value or scale")]
    NonFinite,
    #[error("fixed-point overflow")]
    Overflow,
    #[error("missing rotation key for amount {amount} at level {level}")]
    MissingRotationKey { amount: usize, level: usize },
    #[error("missing relinearization key")]
    MissingRelinKey,
    #[error("secret key required")]
    MissingSecretKey,
    #[error("plaintext coefficient exceeds the modulus at level {0}")]
    EncodeOverflow(usize),
    #[error("{0}")]
    Crypto(String),
}

/// Prime sizes per level; rescaling a level-`l` ciphertext divides its scale by `primes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusLadder {
    pub primes: Vec<f64>,
}

impl ModulusLadder {
    pub fn new(primes: Vec<f64>) -> Self {
        assert!(!primes.is_empty(), "ladder needs q0");
        ModulusLadder { primes }
    }

    /// Nominal powers of two with the given bit sizes, `q0` first.
    pub fn from_bits(bits: &[u32]) -> Self {
        ModulusLadder::new(bits.iter().map(|&b| (b as f64).exp2()).collect())
    }

    /// Bit sizes `q0 = 37`, ten 35-bit primes.
    pub fn hear() -> Self {
        let mut b = vec![37];
        b.extend([35; 10]);
        ModulusLadder::from_bits(&b)
    }

    /// Bit sizes `q0 = 33`, 31-bit primes with 28-bit primes at levels 5 and 9.
    pub fn fast_hear() -> Self {
        let b: Vec<u32> = (0..=12).map(|l| match l {
            0 => 33,
            5 | 9 => 28,
            _ => 31,
        }).collect();
        ModulusLadder::from_bits(&b)
    }

    pub fn top(&self) -> usize {
        self.primes.len() - 1
    }

    pub fn prime(&self, level: usize) -> f64 {
        self.primes[level]
    }
}

/// Slot values, dense or as an index/value list (all other slots zero).
#[derive(Debug, Clone, PartialEq)]
pub enum SlotData {
    Dense(Vec<f64>),
    Sparse { len: usize, idx: Vec<u32>, val: Vec<f64> },
}

impl SlotData {
    pub fn len(&self) -> usize {
        match self {
            SlotData::Dense(v) => v.len(),
            SlotData::Sparse { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        match self {
            SlotData::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            SlotData::Sparse { val, .. } => val.iter().filter(|x| **x != 0.0).count(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            SlotData::Dense(v) => v.clone(),
            SlotData::Sparse { len, idx, val } => {
                let mut out = vec![0.0; *len];
                for (i, v) in idx.iter().zip(val) {
                    out[*i as usize] += v;
                }
                out
            }
        }
    }

    /// Cyclic left rotation by `k` (negative rotates right).
    pub fn rotated(&self, k: isize) -> SlotData {
        let n = self.len();
        if n == 0 {
            return self.clone();
        }
        let k = k.rem_euclid(n as isize) as usize;
        match self {
            SlotData::Dense(v) => {
                let mut out = v.clone();
                out.rotate_left(k);
                SlotData::Dense(out)
            }
            SlotData::Sparse { len, idx, val } => SlotData::Sparse {
                len: *len,
                idx: idx.iter().map(|&i| ((i as usize + n - k) % n) as u32).collect(),
                val: val.clone(),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            SlotData::Dense(v) => v.iter().all(|x| x.is_finite()),
            SlotData::Sparse { val, .. } => val.iter().all(|x| x.is_finite()),
        }
    }
}

/// Plaintext values together with the level and scale they are encoded at.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainVector {
    pub data: SlotData,
    pub level: usize,
    pub scale: f64,
}

impl PlainVector {
    pub fn dense(values: Vec<f64>, level: usize, scale: f64) -> Self {
        PlainVector { data: SlotData::Dense(values), level, scale }
    }

    /// Storage of a CKKS encoding of this plaintext: `(level+1)` limbs of `2 * slots` words.
    pub fn rns_bytes(&self) -> u64 {
        (self.level as u64 + 1) * 2 * self.data.len() as u64 * 8
    }
}

#[derive(Debug, Clone)]
pub struct Ciphertext<H> {
    handle: H,
    level: usize,
    scale: f64,
    slots: usize,
}

impl<H> Ciphertext<H> {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn handle(&self) -> &H {
        &self.handle
    }

    pub fn from_parts(handle: H, level: usize, scale: f64, slots: usize) -> Self {
        Ciphertext { handle, level, scale, slots }
    }

    pub fn into_handle(self) -> H {
        self.handle
    }
}

#[derive(Debug, Clone)]
pub struct Plaintext<P> {
    pub inner: P,
    pub level: usize,
    pub scale: f64,
}

/// Raw operations on backend handles. Level and scale checks live in [`Evaluator`].
pub trait SlotBackend: Send + Sync {
    type Handle: Clone + Send + Sync;
    type Plain: Send + Sync;

    fn slots(&self) -> usize;
    fn ladder(&self) -> &ModulusLadder;
    fn encode(&self, pv: &PlainVector) -> Result<Self::Plain, BackendError>;
    fn encrypt(&self, values: &[f64], level: usize, scale: f64) -> Result<Self::Handle, BackendError>;
    fn decrypt(&self, h: &Self::Handle, level: usize, scale: f64) -> Result<Vec<f64>, BackendError>;
    fn add_assign(&self, a: &mut Self::Handle, b: &Self::Handle, level: usize) -> Result<(), BackendError>;
    fn add_plain_assign(&self, a: &mut Self::Handle, p: &Self::Plain, level: usize) -> Result<(), BackendError>;
    fn mult(&self, a: &Self::Handle, b: &Self::Handle, level: usize) -> Result<Self::Handle, BackendError>;
    fn mult_plain(&self, a: &Self::Handle, p: &Self::Plain, level: usize) -> Result<Self::Handle, BackendError>;
    /// `acc += a * p`.
    fn mult_plain_acc(&self, acc: &mut Self::Handle, a: &Self::Handle, p: &Self::Plain, level: usize) -> Result<(), BackendError> {
        let t = self.mult_plain(a, p, level)?;
        self.add_assign(acc, &t, level)
    }
    /// Left rotation by `k`, `0 < k < slots`.
    fn rotate(&self, a: &Self::Handle, k: usize, level: usize) -> Result<Self::Handle, BackendError>;
    fn rotate_hoisted(&self, a: &Self::Handle, ks: &[usize], level: usize) -> Result<Vec<Self::Handle>, BackendError> {
        ks.iter().map(|&k| self.rotate(a, k, level)).collect()
    }
    fn rescale(&self, a: &Self::Handle, level: usize) -> Result<Self::Handle, BackendError>;
    fn mod_down(&self, a: &Self::Handle, from: usize, to: usize) -> Result<Self::Handle, BackendError>;
}

pub fn scales_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

pub type Ct<B> = Ciphertext<<B as SlotBackend>::Handle>;
pub type Pt<B> = Plaintext<<B as SlotBackend>::Plain>;

/// Contract-enforcing, counting front end over a backend.
pub struct Evaluator<B: SlotBackend> {
    backend: B,
    counters: Counters,
    hoisting: AtomicBool,
}

impl<B: SlotBackend> Evaluator<B> {
    pub fn new(backend: B) -> Self {
        Evaluator { backend, counters: Counters::default(), hoisting: AtomicBool::new(true) }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn slots(&self) -> usize {
        self.backend.slots()
    }

    pub fn ladder(&self) -> &ModulusLadder {
        self.backend.ladder()
    }

    pub fn top_level(&self) -> usize {
        self.backend.ladder().top()
    }

    /// Attributes subsequent operations to `label`.
    pub fn set_layer(&self, label: &str) {
        self.counters.set_layer(label);
    }

    fn check_level(&self, level: usize) -> Result<(), BackendError> {
        let max = self.top_level();
        if level > max {
            return Err(BackendError::LevelRange { level, max });
        }
        Ok(())
    }

    fn wrap(&self, handle: B::Handle, level: usize, scale: f64) -> Ct<B> {
        Ciphertext { handle, level, scale, slots: self.slots() }
    }

    pub fn encode(&self, pv: &PlainVector) -> Result<Pt<B>, BackendError> {
        self.check_level(pv.level)?;
        if pv.data.len() != self.slots() {
            return Err(BackendError::Length { got: pv.data.len(), slots: self.slots() });
        }
        if !pv.data.is_finite() || !(pv.scale.is_finite() && pv.scale > 0.0) {
            return Err(BackendError::NonFinite);
        }
        Ok(Plaintext { inner: self.backend.encode(pv)?, level: pv.level, scale: pv.scale })
    }

    pub fn encrypt(&self, values: &[f64], level: usize, scale: f64) -> Result<Ct<B>, BackendError> {
        self.check_level(level)?;
        if values.len() != self.slots() {
            return Err(BackendError::Length { got: values.len(), slots: self.slots() });
        }
        if values.iter().any(|v| !v.is_finite()) || !(scale.is_finite() && scale > 0.0) {
            return Err(BackendError::NonFinite);
        }
        Ok(self.wrap(self.backend.encrypt(values, level, scale)?, level, scale))
    }

    pub fn decrypt(&self, ct: &Ct<B>) -> Result<Vec<f64>, BackendError> {
        self.backend.decrypt(&ct.handle, ct.level, ct.scale)
    }

    pub fn assert_scale(&self, ct: &Ct<B>, target: f64) -> Result<(), BackendError> {
        if scales_match(ct.scale, target) {
            Ok(())
        } else {
            Err(BackendError::ScaleMismatch { a: ct.scale, b: target })
        }
    }

    fn check_aligned(a: &Ct<B>, b: &Ct<B>) -> Result<(), BackendError> {
        if a.level != b.level {
            return Err(BackendError::LevelMismatch { a: a.level, b: b.level });
        }
        if !scales_match(a.scale, b.scale) {
            return Err(BackendError::ScaleMismatch { a: a.scale, b: b.scale });
        }
        Ok(())
    }

    pub fn add(&self, a: &Ct<B>, b: &Ct<B>) -> Result<Ct<B>, BackendError> {
        let mut out = a.clone();
        self.add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn add_assign(&self, a: &mut Ct<B>, b: &Ct<B>) -> Result<(), BackendError> {
        Self::check_aligned(a, b)?;
        self.backend.add_assign(&mut a.handle, &b.handle, a.level)?;
        self.counters.bump(|c| c.add += 1);
        Ok(())
    }

    /// `acc += term`, starting the sum when `acc` is empty.
    pub fn accumulate(&self, acc: &mut Option<Ct<B>>, term: Ct<B>) -> Result<(), BackendError> {
        match acc {
            Some(a) => self.add_assign(a, &term),
            None => {
                *acc = Some(term);
                Ok(())
            }
        }
    }

    pub fn add_plain(&self, a: &Ct<B>, p: &Pt<B>) -> Result<Ct<B>, BackendError> {
        if p.level < a.level {
            return Err(BackendError::PlainLevel { plain: p.level, ct: a.level });
        }
        if !scales_match(a.scale, p.scale) {
            return Err(BackendError::ScaleMismatch { a: a.scale, b: p.scale });
        }
        let mut out = a.clone();
        self.backend.add_plain_assign(&mut out.handle, &p.inner, a.level)?;
        self.counters.bump(|c| c.add += 1);
        Ok(out)
    }

    pub fn mult(&self, a: &Ct<B>, b: &Ct<B>) -> Result<Ct<B>, BackendError> {
        if a.level != b.level {
            return Err(BackendError::LevelMismatch { a: a.level, b: b.level });
        }
        let h = self.backend.mult(&a.handle, &b.handle, a.level)?;
        self.counters.bump(|c| c.mult += 1);
        Ok(self.wrap(h, a.level, a.scale * b.scale))
    }

    pub fn mult_plain(&self, a: &Ct<B>, p: &Pt<B>) -> Result<Ct<B>, BackendError> {
        if p.level < a.level {
            return Err(BackendError::PlainLevel { plain: p.level, ct: a.level });
        }
        let h = self.backend.mult_plain(&a.handle, &p.inner, a.level)?;
        self.counters.bump(|c| c.mult_plain += 1);
        Ok(self.wrap(h, a.level, a.scale * p.scale))
    }

    /// `acc += a * p`, counted as one plaintext multiplication and one addition.
    pub fn mult_plain_acc(&self, acc: &mut Option<Ct<B>>, a: &Ct<B>, p: &Pt<B>) -> Result<(), BackendError> {
        let Some(acc) = acc else {
            *acc = Some(self.mult_plain(a, p)?);
            return Ok(());
        };
        if p.level < a.level {
            return Err(BackendError::PlainLevel { plain: p.level, ct: a.level });
        }
        if acc.level != a.level {
            return Err(BackendError::LevelMismatch { a: acc.level, b: a.level });
        }
        let scale = a.scale * p.scale;
        if !scales_match(acc.scale, scale) {
            return Err(BackendError::ScaleMismatch { a: acc.scale, b: scale });
        }
        self.backend.mult_plain_acc(&mut acc.handle, &a.handle, &p.inner, a.level)?;
        self.counters.bump(|c| {
            c.mult_plain += 1;
            c.add += 1;
        });
        Ok(())
    }

    fn normalize_rot(&self, k: isize) -> Result<usize, BackendError> {
        let n = self.slots() as isize;
        if k.abs() >= n {
            return Err(BackendError::RotRange(k));
        }
        Ok(k.rem_euclid(n) as usize)
    }

    /// Cyclic left rotation; rotation by 0 is free.
    pub fn rot(&self, a: &Ct<B>, k: isize) -> Result<Ct<B>, BackendError> {
        let k = self.normalize_rot(k)?;
        if k == 0 {
            return Ok(a.clone());
        }
        let h = self.backend.rotate(&a.handle, k, a.level)?;
        self.counters.bump(|c| c.rot += 1);
        Ok(self.wrap(h, a.level, a.scale))
    }

    /// With hoisting off, [`Evaluator::rot_many`] performs independent rotations.
    pub fn set_hoisting(&self, on: bool) {
        self.hoisting.store(on, Ordering::Relaxed);
    }

    /// Several rotations of one ciphertext sharing a single hoisted decomposition.
    pub fn rot_many(&self, a: &Ct<B>, ks: &[isize]) -> Result<Vec<Ct<B>>, BackendError> {
        if !self.hoisting.load(Ordering::Relaxed) {
            return ks.iter().map(|&k| self.rot(a, k)).collect();
        }
        let norm: Vec<usize> = ks.iter().map(|&k| self.normalize_rot(k)).collect::<Result<_, _>>()?;
        let mut distinct: Vec<usize> = norm.iter().copied().filter(|&k| k != 0).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let rotated = if distinct.is_empty() {
            Vec::new()
        } else {
            self.backend.rotate_hoisted(&a.handle, &distinct, a.level)?
        };
        if !distinct.is_empty() {
            let n = distinct.len() as u64;
            self.counters.bump(|c| {
                c.hoisted_rot_groups += 1;
                c.hoisted_rot_total += n;
            });
        }
        let mut rotated: Vec<Option<B::Handle>> = rotated.into_iter().map(Some).collect();
        let mut out = Vec::with_capacity(norm.len());
        for (n, &k) in norm.iter().enumerate() {
            if k == 0 {
                out.push(a.clone());
                continue;
            }
            let pos = distinct.binary_search(&k).expect("amount present");
            // The last request for an amount takes the buffer, earlier ones copy it.
            let h = if norm[n + 1..].contains(&k) {
                rotated[pos].clone().expect("taken only by the last request")
            } else {
                rotated[pos].take().expect("taken only by the last request")
            };
            out.push(self.wrap(h, a.level, a.scale));
        }
        Ok(out)
    }

    pub fn rescale(&self, a: &Ct<B>) -> Result<Ct<B>, BackendError> {
        if a.level == 0 {
            return Err(BackendError::RescaleFloor);
        }
        let h = self.backend.rescale(&a.handle, a.level)?;
        self.counters.bump(|c| c.rescale += 1);
        Ok(self.wrap(h, a.level - 1, a.scale / self.ladder().prime(a.level)))
    }

    pub fn mod_down(&self, a: &Ct<B>, to: usize) -> Result<Ct<B>, BackendError> {
        if to > a.level {
            return Err(BackendError::RaiseLevel { from: a.level, to });
        }
        if to == a.level {
            return Ok(a.clone());
        }
        let h = self.backend.mod_down(&a.handle, a.level, to)?;
        Ok(self.wrap(h, to, a.scale))
    }
}

#[cfg(test)]
mod tests;
