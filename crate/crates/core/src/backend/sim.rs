//! Exact slot simulator.
//!
//! Ciphertexts hold the logical slot values; rescale and mod-down only move the
//! ledger. The scalar type is generic: `f64` mirrors cleartext double
//! arithmetic, [`Fixed`] uses exact integer addition so that results do not
//! depend on summation order.

use std::fmt::Debug;
use std::marker::PhantomData;
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{BackendError, ModulusLadder, PlainVector, SlotBackend, SlotData};

pub trait SlotScalar: Copy + Send + Sync + Debug + PartialEq + 'static {
    const ZERO: Self;
    fn from_f64(x: f64) -> Option<Self>;
    fn to_f64(self) -> f64;
    fn add(self, o: Self) -> Option<Self>;
    fn mul(self, o: Self) -> Option<Self>;
}

impl SlotScalar for f64 {
    const ZERO: f64 = 0.0;

    #[inline]
    fn from_f64(x: f64) -> Option<f64> {
        Some(x)
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn add(self, o: f64) -> Option<f64> {
        Some(self + o)
    }

    #[inline]
    fn mul(self, o: f64) -> Option<f64> {
        Some(self * o)
    }
}

/// Signed fixed point with [`Fixed::FRAC_BITS`] fractional bits.
///
/// Addition is exact and associative; multiplication rounds half up once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Fixed(pub i64);

impl Fixed {
    pub const FRAC_BITS: u32 = 44;
}

impl SlotScalar for Fixed {
    const ZERO: Fixed = Fixed(0);

    fn from_f64(x: f64) -> Option<Fixed> {
        let scaled = (x * (Fixed::FRAC_BITS as f64).exp2()).round();
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(63) {
            return None;
        }
        Some(Fixed(scaled as i64))
    }

    fn to_f64(self) -> f64 {
        self.0 as f64 / (Fixed::FRAC_BITS as f64).exp2()
    }

    #[inline]
    fn add(self, o: Fixed) -> Option<Fixed> {
        self.0.checked_add(o.0).map(Fixed)
    }

    #[inline]
    fn mul(self, o: Fixed) -> Option<Fixed> {
        let p = self.0 as i128 * o.0 as i128 + (1i128 << (Fixed::FRAC_BITS - 1));
        i64::try_from(p >> Fixed::FRAC_BITS).ok().map(Fixed)
    }
}

/// Dense slots or an index/value list with implicit zeros elsewhere.
///
/// Ciphertext buffers carry `lanes` independent slot vectors interleaved per
/// slot (`slot * lanes + lane`); plaintext buffers carry a single lane that is
/// broadcast over all lanes.
#[derive(Debug, Clone, PartialEq)]
pub enum SimBuf<S> {
    Dense(Vec<S>),
    /// `val` holds `lanes` values per index.
    Sparse { idx: Arc<[u32]>, val: Vec<S> },
}

impl<S: SlotScalar> SimBuf<S> {
    fn densify(&self, n: usize, lanes: usize) -> Result<Vec<S>, BackendError> {
        match self {
            SimBuf::Dense(v) => Ok(v.clone()),
            SimBuf::Sparse { idx, val } => {
                let mut out = vec![S::ZERO; n * lanes];
                let mut bad = false;
                for (&i, vals) in idx.iter().zip(val.chunks_exact(lanes)) {
                    let base = i as usize * lanes;
                    for (slot, &v) in out[base..base + lanes].iter_mut().zip(vals) {
                        add_to(slot, v, &mut bad);
                    }
                }
                check(bad)?;
                Ok(out)
            }
        }
    }

    /// Single-lane buffer as doubles; NaN everywhere on overflow.
    pub fn to_f64(&self, n: usize) -> Vec<f64> {
        self.densify(n, 1).map(|v| v.into_iter().map(S::to_f64).collect()).unwrap_or_else(|_| vec![f64::NAN; n])
    }
}

// The loops below record overflow in a flag instead of returning early so
// that they stay branch-free for `f64`.

#[inline]
fn add_to<S: SlotScalar>(x: &mut S, y: S, bad: &mut bool) {
    match x.add(y) {
        Some(r) => *x = r,
        None => *bad = true,
    }
}

#[inline]
fn mul<S: SlotScalar>(u: S, v: S, bad: &mut bool) -> S {
    u.mul(v).unwrap_or_else(|| {
        *bad = true;
        S::ZERO
    })
}

fn check(bad: bool) -> Result<(), BackendError> {
    if bad {
        Err(BackendError::Overflow)
    } else {
        Ok(())
    }
}

#[derive(Debug)]
pub struct Simulator<S = f64> {
    slots: usize,
    lanes: usize,
    ladder: ModulusLadder,
    permutations: AtomicU64,
    _scalar: PhantomData<S>,
}

impl<S: SlotScalar> Simulator<S> {
    pub fn new(slots: usize, ladder: ModulusLadder) -> Self {
        Simulator::with_lanes(slots, ladder, 1)
    }

    /// Simulator evaluating `lanes` inputs side by side with shared plaintexts.
    pub fn with_lanes(slots: usize, ladder: ModulusLadder, lanes: usize) -> Self {
        assert!(slots.is_power_of_two(), "slot count must be a power of two");
        assert!(lanes >= 1, "need at least one lane");
        Simulator { slots, lanes, ladder, permutations: AtomicU64::new(0), _scalar: PhantomData }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    /// Slot permutations actually performed, independent of the counters.
    pub fn permutations(&self) -> u64 {
        self.permutations.load(Ordering::Relaxed)
    }

    /// Ciphertext buffer holding one slot vector per lane.
    pub fn encrypt_lanes(&self, inputs: &[Vec<f64>]) -> Result<SimBuf<S>, BackendError> {
        if inputs.len() != self.lanes {
            return Err(BackendError::Length { got: inputs.len(), slots: self.lanes });
        }
        let mut out = Vec::with_capacity(self.slots * self.lanes);
        for s in 0..self.slots {
            for v in inputs {
                if v.len() != self.slots {
                    return Err(BackendError::Length { got: v.len(), slots: self.slots });
                }
                out.push(S::from_f64(v[s]).ok_or(BackendError::Overflow)?);
            }
        }
        Ok(SimBuf::Dense(out))
    }

    /// Every lane of a ciphertext buffer.
    pub fn decrypt_lanes(&self, h: &SimBuf<S>) -> Result<Vec<Vec<f64>>, BackendError> {
        let dense = h.densify(self.slots, self.lanes)?;
        Ok((0..self.lanes).map(|b| (0..self.slots).map(|s| dense[s * self.lanes + b].to_f64()).collect()).collect())
    }

    fn convert(&self, data: &SlotData) -> Result<SimBuf<S>, BackendError> {
        let conv = |x: f64| S::from_f64(x).ok_or(BackendError::Overflow);
        Ok(match data {
            SlotData::Dense(v) => SimBuf::Dense(v.iter().map(|&x| conv(x)).collect::<Result<_, _>>()?),
            SlotData::Sparse { idx, val, .. } => SimBuf::Sparse {
                idx: idx.as_slice().into(),
                val: val.iter().map(|&x| conv(x)).collect::<Result<_, _>>()?,
            },
        })
    }

    /// `a += b` where `b` has `wb` lanes: all of them, or one broadcast.
    fn add_into(&self, a: &mut SimBuf<S>, b: &SimBuf<S>, wb: usize) -> Result<(), BackendError> {
        let w = self.lanes;
        if let SimBuf::Sparse { .. } = a {
            *a = SimBuf::Dense(a.densify(self.slots, w)?);
        }
        let SimBuf::Dense(av) = a else { unreachable!() };
        let mut bad = false;
        match b {
            SimBuf::Dense(bv) if wb == w => {
                for (x, &y) in av.iter_mut().zip(bv) {
                    add_to(x, y, &mut bad);
                }
            }
            SimBuf::Dense(bv) => {
                for (xs, &y) in av.chunks_exact_mut(w).zip(bv) {
                    for x in xs {
                        add_to(x, y, &mut bad);
                    }
                }
            }
            SimBuf::Sparse { idx, val } if wb == w => {
                for (&i, ys) in idx.iter().zip(val.chunks_exact(w)) {
                    let base = i as usize * w;
                    for (x, &y) in av[base..base + w].iter_mut().zip(ys) {
                        add_to(x, y, &mut bad);
                    }
                }
            }
            SimBuf::Sparse { idx, val } => {
                for (&i, &y) in idx.iter().zip(val) {
                    let base = i as usize * w;
                    for x in &mut av[base..base + w] {
                        add_to(x, y, &mut bad);
                    }
                }
            }
        }
        check(bad)
    }
}

impl<S: SlotScalar> SlotBackend for Simulator<S> {
    type Handle = SimBuf<S>;
    type Plain = SimBuf<S>;

    fn slots(&self) -> usize {
        self.slots
    }

    fn ladder(&self) -> &ModulusLadder {
        &self.ladder
    }

    fn encode(&self, pv: &PlainVector) -> Result<SimBuf<S>, BackendError> {
        self.convert(&pv.data)
    }

    /// Every lane receives `values`.
    fn encrypt(&self, values: &[f64], _level: usize, _scale: f64) -> Result<SimBuf<S>, BackendError> {
        self.encrypt_lanes(&vec![values.to_vec(); self.lanes])
    }

    /// The first lane.
    fn decrypt(&self, h: &SimBuf<S>, _level: usize, _scale: f64) -> Result<Vec<f64>, BackendError> {
        let dense = h.densify(self.slots, self.lanes)?;
        Ok(dense.into_iter().step_by(self.lanes).map(S::to_f64).collect())
    }

    fn add_assign(&self, a: &mut SimBuf<S>, b: &SimBuf<S>, _level: usize) -> Result<(), BackendError> {
        self.add_into(a, b, self.lanes)
    }

    fn add_plain_assign(&self, a: &mut SimBuf<S>, p: &SimBuf<S>, _level: usize) -> Result<(), BackendError> {
        self.add_into(a, p, 1)
    }

    fn mult(&self, a: &SimBuf<S>, b: &SimBuf<S>, _level: usize) -> Result<SimBuf<S>, BackendError> {
        let (x, y) = (a.densify(self.slots, self.lanes)?, b.densify(self.slots, self.lanes)?);
        let mut bad = false;
        let out = x.iter().zip(&y).map(|(&u, &v)| mul(u, v, &mut bad)).collect();
        check(bad)?;
        Ok(SimBuf::Dense(out))
    }

    fn mult_plain(&self, a: &SimBuf<S>, p: &SimBuf<S>, level: usize) -> Result<SimBuf<S>, BackendError> {
        let w = self.lanes;
        let mut bad = false;
        let out = match (a, p) {
            (SimBuf::Dense(x), SimBuf::Dense(y)) => {
                let mut out = x.clone();
                for (us, &v) in out.chunks_exact_mut(w).zip(y) {
                    for u in us {
                        *u = mul(*u, v, &mut bad);
                    }
                }
                SimBuf::Dense(out)
            }
            (SimBuf::Dense(x), SimBuf::Sparse { idx, val }) => {
                let mut out = vec![S::ZERO; idx.len() * w];
                for ((&i, &v), os) in idx.iter().zip(val).zip(out.chunks_exact_mut(w)) {
                    let base = i as usize * w;
                    for (o, &u) in os.iter_mut().zip(&x[base..base + w]) {
                        *o = mul(u, v, &mut bad);
                    }
                }
                SimBuf::Sparse { idx: idx.clone(), val: out }
            }
            (SimBuf::Sparse { .. }, _) => {
                let x = a.densify(self.slots, w)?;
                return self.mult_plain(&SimBuf::Dense(x), p, level);
            }
        };
        check(bad)?;
        Ok(out)
    }

    fn mult_plain_acc(&self, acc: &mut SimBuf<S>, a: &SimBuf<S>, p: &SimBuf<S>, level: usize) -> Result<(), BackendError> {
        let w = self.lanes;
        let (SimBuf::Dense(x), SimBuf::Sparse { idx, val }) = (a, p) else {
            let t = self.mult_plain(a, p, level)?;
            return self.add_into(acc, &t, w);
        };
        if let SimBuf::Sparse { .. } = acc {
            *acc = SimBuf::Dense(acc.densify(self.slots, w)?);
        }
        let SimBuf::Dense(out) = acc else { unreachable!() };
        let mut bad = false;
        for (&i, &v) in idx.iter().zip(val) {
            let base = i as usize * w;
            for (o, &u) in out[base..base + w].iter_mut().zip(&x[base..base + w]) {
                add_to(o, mul(u, v, &mut bad), &mut bad);
            }
        }
        check(bad)
    }

    fn rotate(&self, a: &SimBuf<S>, k: usize, _level: usize) -> Result<SimBuf<S>, BackendError> {
        self.permutations.fetch_add(1, Ordering::Relaxed);
        let n = self.slots;
        Ok(match a {
            SimBuf::Dense(v) => {
                let mut out = v.clone();
                out.rotate_left((k % n) * self.lanes);
                SimBuf::Dense(out)
            }
            SimBuf::Sparse { idx, val } => SimBuf::Sparse {
                idx: idx.iter().map(|&i| ((i as usize + n - k % n) % n) as u32).collect::<Vec<_>>().into(),
                val: val.clone(),
            },
        })
    }

    fn rescale(&self, a: &SimBuf<S>, _level: usize) -> Result<SimBuf<S>, BackendError> {
        Ok(a.clone())
    }

    fn mod_down(&self, a: &SimBuf<S>, _from: usize, _to: usize) -> Result<SimBuf<S>, BackendError> {
        Ok(a.clone())
    }
}
