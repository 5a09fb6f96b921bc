//! Homomorphic convolution over packed slots.
//!
//! A conv layer multiplies rotated input ciphertexts by weight plaintexts. The
//! rotation amount for tap `k` and extra rotation `l` is `r_k + block * l`:
//! `r_k` moves a neighbour into place inside a channel block and `block * l`
//! aligns input channel blocks with output channel blocks.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Ct, Evaluator, PlainVector, Pt, SlotBackend, SlotData};
use crate::layout::PackedLayout;
use crate::model::ConvFilters;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("weights prepared for {weights:?} rotation, plan uses {plan:?}")]
    StrategyMismatch { weights: Strategy, plan: Strategy },
    #[error("expected {expected} input ciphertexts, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("weight table is {got:?}, plan needs {expected:?}")]
    TableShape { expected: [usize; 4], got: [usize; 4] },
    #[error("{taps} taps but {plaintexts} plaintexts")]
    MissingTap { taps: usize, plaintexts: usize },
    #[error("invalid plan: {0}")]
    Plan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Full,
    Giant,
    Baby,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Full, Strategy::Giant, Strategy::Baby];
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Strategy::Full),
            "giant" => Ok(Strategy::Giant),
            "baby" => Ok(Strategy::Baby),
            other => Err(format!("unknown strategy {other:?} (full|giant|baby)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Full => "full",
            Strategy::Giant => "giant",
            Strategy::Baby => "baby",
        })
    }
}

/// Kernel offset and the slot rotation that brings the neighbour into place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub dh: isize,
    pub dw: isize,
    pub rot: isize,
}

/// Which channel a (ciphertext, block, sub-lattice source) triple holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputArrangement {
    /// Packed input: block `b` of the single ciphertext holds channel `b mod period`.
    Replicated { period: usize },
    /// Ciphertext `i` holds channels `per_ct * i ..` one per block.
    Blocked { per_ct: usize },
    /// Merged ciphertext `g` holds sources `g * load + s`, source `s` on sub-lattice `s`.
    Merged { per_ct: usize, load: usize },
}

impl InputArrangement {
    #[inline]
    pub fn channel(&self, ct: usize, block: usize, source: usize) -> usize {
        match *self {
            InputArrangement::Replicated { period } => block % period,
            InputArrangement::Blocked { per_ct } => per_ct * ct + block,
            InputArrangement::Merged { per_ct, load } => per_ct * (ct * load + source) + block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvPlan {
    pub layer: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Input ciphertexts before any merging (`n_I`).
    pub n_in: usize,
    pub n_out: usize,
    /// Load factor `n_P`; 1 when inputs are not merged.
    pub load: usize,
    /// Extra rotations per input (`l_I`).
    pub extra: usize,
    pub l_out: usize,
    pub taps: Vec<Tap>,
    pub strategy: Strategy,
    /// Geometry the convolution reads: map extents and valid stride.
    pub layout: PackedLayout,
    /// Sub-lattice offset `(row, col)` of each merged source; `[(0, 0)]` when unmerged.
    pub subs: Vec<(usize, usize)>,
    pub arrangement: InputArrangement,
}

impl ConvPlan {
    /// Plan for a layer whose inputs are either the packed input (`layer == 1`)
    /// or one-channel-per-block ciphertexts, optionally merged `subs.len()` to one.
    pub fn new(
        layer: usize,
        filters_shape: (usize, usize, usize, usize),
        layout: &PackedLayout,
        strategy: Strategy,
        subs: Vec<(usize, usize)>,
    ) -> Result<ConvPlan, ConvError> {
        let (c_out, c_in, kh, kw) = filters_shape;
        let per_ct = layout.channels_per_ct;
        let load = subs.len().max(1);
        let subs = if subs.is_empty() { vec![(0, 0)] } else { subs };
        let (n_in, extra, arrangement) = if layer == 1 {
            if load != 1 {
                return Err(ConvError::Plan("the first layer reads the packed input and cannot merge".into()));
            }
            if c_in > per_ct {
                return Err(ConvError::Plan(format!("{c_in} input channels exceed {per_ct} blocks")));
            }
            (1, c_in, InputArrangement::Replicated { period: c_in })
        } else {
            let n_in = c_in.div_ceil(per_ct);
            if n_in % load != 0 {
                return Err(ConvError::Plan(format!("{n_in} inputs do not split into groups of {load}")));
            }
            let arrangement = if load == 1 {
                InputArrangement::Blocked { per_ct }
            } else {
                InputArrangement::Merged { per_ct, load }
            };
            (n_in, per_ct, arrangement)
        };
        let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut taps = Vec::with_capacity(kh * kw);
        for dh in -rh..=rh {
            for dw in -rw..=rw {
                let rot = dh * layout.row_step() as isize + dw * layout.col_step() as isize;
                taps.push(Tap { dh, dw, rot });
            }
        }
        Ok(ConvPlan {
            layer,
            c_in,
            c_out,
            n_in,
            n_out: c_out.div_ceil(per_ct),
            load,
            extra,
            l_out: per_ct,
            taps,
            strategy,
            layout: *layout,
            subs,
            arrangement,
        })
    }

    /// Ciphertexts entering the core convolution (`n_I / n_P`).
    pub fn conv_inputs(&self) -> usize {
        self.n_in / self.load
    }

    pub fn block_rot(&self, l: usize) -> isize {
        (self.layout.block * l) as isize
    }

    /// Amounts rotated on inputs (hoisted) and on partial sums, for this plan's strategy.
    pub fn rotation_amounts(&self) -> (Vec<isize>, Vec<isize>) {
        let blocks: Vec<isize> = (0..self.extra).map(|l| self.block_rot(l)).collect();
        let taps: Vec<isize> = self.taps.iter().map(|t| t.rot).collect();
        match self.strategy {
            Strategy::Full => {
                (taps.iter().flat_map(|r| blocks.iter().map(move |b| r + b)).collect(), Vec::new())
            }
            Strategy::Giant => (blocks, taps),
            Strategy::Baby => (taps, blocks),
        }
    }

    pub fn table_dims(&self) -> [usize; 4] {
        [self.n_out, self.conv_inputs(), self.taps.len(), self.extra]
    }
}

/// Weight plaintexts indexed by `(j, i, k, l)`, stored in the rotation form the
/// strategy consumes: plain for full-step, counter-rotated by `-r_k` for
/// giant-step and by `-block * l` for baby-step.
#[derive(Debug, Clone)]
pub struct WeightPlaintexts<P> {
    pub form: Strategy,
    pub dims: [usize; 4],
    pub table: Vec<P>,
}

impl<P> WeightPlaintexts<P> {
    #[inline]
    pub fn index(&self, j: usize, i: usize, k: usize, l: usize) -> usize {
        let [_, ni, nk, nl] = self.dims;
        ((j * ni + i) * nk + k) * nl + l
    }

    pub fn get(&self, j: usize, i: usize, k: usize, l: usize) -> &P {
        &self.table[self.index(j, i, k, l)]
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn try_map<Q, E>(&self, f: impl Fn(&P) -> Result<Q, E> + Sync + Send) -> Result<WeightPlaintexts<Q>, E>
    where
        P: Sync,
        Q: Send,
        E: Send,
    {
        Ok(WeightPlaintexts {
            form: self.form,
            dims: self.dims,
            table: self.table.par_iter().map(f).collect::<Result<_, _>>()?,
        })
    }
}

/// A weight plaintext either borrowed from a table or encoded on demand.
pub enum PtRef<'a, P> {
    Borrowed(&'a P),
    Owned(P),
}

impl<P> std::ops::Deref for PtRef<'_, P> {
    type Target = P;
    fn deref(&self) -> &P {
        match self {
            PtRef::Borrowed(p) => p,
            PtRef::Owned(p) => p,
        }
    }
}

/// Where [`hconv`] gets its weight plaintexts from.
pub trait WeightSource<B: SlotBackend>: Sync {
    fn form(&self) -> Strategy;
    fn dims(&self) -> [usize; 4];
    fn fetch(&self, ev: &Evaluator<B>, j: usize, i: usize, k: usize, l: usize) -> Result<PtRef<'_, Pt<B>>, ConvError>;
}

impl<B: SlotBackend> WeightSource<B> for WeightPlaintexts<Pt<B>> {
    fn form(&self) -> Strategy {
        self.form
    }

    fn dims(&self) -> [usize; 4] {
        self.dims
    }

    fn fetch(&self, _: &Evaluator<B>, j: usize, i: usize, k: usize, l: usize) -> Result<PtRef<'_, Pt<B>>, ConvError> {
        Ok(PtRef::Borrowed(self.get(j, i, k, l)))
    }
}

/// Encodes each weight plaintext when it is consumed instead of keeping a table.
#[derive(Debug, Clone)]
pub struct LazyWeights<'a> {
    pub filters: &'a ConvFilters,
    pub plan: &'a ConvPlan,
    pub level: usize,
    pub scale: f64,
    offsets: TapOffsets,
}

impl<'a> LazyWeights<'a> {
    pub fn new(filters: &'a ConvFilters, plan: &'a ConvPlan, level: usize, scale: f64) -> Result<Self, ConvError> {
        check_filters(filters, plan)?;
        Ok(LazyWeights { filters, plan, level, scale, offsets: TapOffsets::new(plan) })
    }
}

impl<B: SlotBackend> WeightSource<B> for LazyWeights<'_> {
    fn form(&self) -> Strategy {
        self.plan.strategy
    }

    fn dims(&self) -> [usize; 4] {
        self.plan.table_dims()
    }

    fn fetch(&self, ev: &Evaluator<B>, j: usize, i: usize, k: usize, l: usize) -> Result<PtRef<'_, Pt<B>>, ConvError> {
        let data = self.offsets.weight_slots(self.filters, self.plan, j, i, k, l);
        Ok(PtRef::Owned(ev.encode(&PlainVector { data, level: self.level, scale: self.scale })?))
    }
}

fn check_filters(filters: &ConvFilters, plan: &ConvPlan) -> Result<(), ConvError> {
    if (filters.c_out, filters.c_in) != (plan.c_out, plan.c_in) || filters.kh * filters.kw != plan.taps.len() {
        return Err(ConvError::Plan(format!(
            "filters {}x{}x{}x{} do not fit the plan",
            filters.c_out, filters.c_in, filters.kh, filters.kw
        )));
    }
    Ok(())
}

/// In-block offsets of the positions each tap reads in bounds, per tap and source.
#[derive(Debug, Clone)]
struct TapOffsets {
    table: Vec<Vec<Vec<usize>>>,
}

impl TapOffsets {
    fn new(plan: &ConvPlan) -> Self {
        let lay = &plan.layout;
        let (h, w) = (lay.map_h as isize, lay.map_w as isize);
        let table = plan
            .taps
            .iter()
            .map(|tap| {
                plan.subs
                    .iter()
                    .map(|&sub| {
                        let mut v = Vec::new();
                        for p in 0..h {
                            if !(0..h).contains(&(p + tap.dh)) {
                                continue;
                            }
                            for q in 0..w {
                                if (0..w).contains(&(q + tap.dw)) {
                                    v.push(lay.offset(p as usize, q as usize, sub));
                                }
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        TapOffsets { table }
    }

    fn weight_slots(&self, filters: &ConvFilters, plan: &ConvPlan, j: usize, i: usize, k: usize, l: usize) -> SlotData {
        let lay = &plan.layout;
        let tap = plan.taps[k];
        let n = lay.slots;
        let shift = match plan.strategy {
            Strategy::Full => 0,
            Strategy::Giant => tap.rot.rem_euclid(n as isize) as usize,
            Strategy::Baby => plan.block_rot(l).rem_euclid(n as isize) as usize,
        };
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for b in 0..plan.l_out {
            let o = plan.l_out * j + b;
            if o >= plan.c_out {
                break;
            }
            let src = (b + l) % lay.channels_per_ct;
            for (s, offs) in self.table[k].iter().enumerate() {
                let c = plan.arrangement.channel(i, src, s);
                if c >= plan.c_in {
                    continue;
                }
                let wt = filters.tap(o, c, tap.dh, tap.dw);
                if wt == 0.0 {
                    continue;
                }
                // Pre-rotating right by `shift` undoes the later left rotation.
                let base = b * lay.block + shift;
                idx.extend(offs.iter().map(|&off| ((base + off) % n) as u32));
                val.resize(idx.len(), wt);
            }
        }
        SlotData::Sparse { len: n, idx, val }
    }
}

/// Sparse weight vector for output ciphertext `j`, input `i`, tap `k`, extra rotation `l`.
///
/// Slot `s` in output block `b` carries `F[out(b), in(b + l), k]` when the tap
/// reads an in-bounds position; boundary and junk slots are zero. Giant-step
/// and baby-step forms are counter-rotated by `-r_k` and `-block * l`.
pub fn weight_slots(filters: &ConvFilters, plan: &ConvPlan, j: usize, i: usize, k: usize, l: usize) -> SlotData {
    TapOffsets::new(plan).weight_slots(filters, plan, j, i, k, l)
}

pub fn build_weight_plaintexts(
    filters: &ConvFilters,
    plan: &ConvPlan,
    level: usize,
    scale: f64,
) -> Result<WeightPlaintexts<PlainVector>, ConvError> {
    check_filters(filters, plan)?;
    let dims = plan.table_dims();
    let [nj, ni, nk, nl] = dims;
    let offsets = TapOffsets::new(plan);
    let table = (0..nj * ni * nk * nl)
        .into_par_iter()
        .map(|flat| {
            let l = flat % nl;
            let k = (flat / nl) % nk;
            let i = (flat / (nl * nk)) % ni;
            let j = flat / (nl * nk * ni);
            PlainVector { data: offsets.weight_slots(filters, plan, j, i, k, l), level, scale }
        })
        .collect();
    Ok(WeightPlaintexts { form: plan.strategy, dims, table })
}

/// Single-input convolution: `sum_k mult_plain(rot(ct, r_k), pt_k)`, not rescaled.
pub fn simple_conv<B: SlotBackend>(
    ev: &Evaluator<B>,
    ct: &Ct<B>,
    pts: &[&Pt<B>],
    taps: &[Tap],
) -> Result<Ct<B>, ConvError> {
    if pts.len() != taps.len() {
        return Err(ConvError::MissingTap { taps: taps.len(), plaintexts: pts.len() });
    }
    let mut acc = None;
    for (tap, pt) in taps.iter().zip(pts) {
        let r = ev.rot(ct, tap.rot)?;
        ev.mult_plain_acc(&mut acc, &r, pt)?;
    }
    acc.ok_or(ConvError::MissingTap { taps: 0, plaintexts: 0 })
}

/// Multi-channel convolution with one rescale per output ciphertext.
pub fn hconv<B: SlotBackend, W: WeightSource<B>>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    weights: &W,
    plan: &ConvPlan,
) -> Result<Vec<Ct<B>>, ConvError> {
    if weights.form() != plan.strategy {
        return Err(ConvError::StrategyMismatch { weights: weights.form(), plan: plan.strategy });
    }
    if weights.dims() != plan.table_dims() {
        return Err(ConvError::TableShape { expected: plan.table_dims(), got: weights.dims() });
    }
    if cts.len() != plan.conv_inputs() {
        return Err(ConvError::InputCount { expected: plan.conv_inputs(), got: cts.len() });
    }
    let (nk, nl) = (plan.taps.len(), plan.extra);
    let (pre, _) = plan.rotation_amounts();
    let outs: Vec<Ct<B>> = match plan.strategy {
        Strategy::Full => {
            let mut accs: Vec<Option<Ct<B>>> = vec![None; plan.n_out];
            for (i, ct) in cts.iter().enumerate() {
                // `pre` is tap-major: index k * nl + l.
                let rots = ev.rot_many(ct, &pre)?;
                accs.par_iter_mut().enumerate().try_for_each(|(j, acc)| -> Result<(), ConvError> {
                    for k in 0..nk {
                        for l in 0..nl {
                            ev.mult_plain_acc(acc, &rots[k * nl + l], &*weights.fetch(ev, j, i, k, l)?)?;
                        }
                    }
                    Ok(())
                })?;
            }
            accs.into_iter().map(|a| a.expect("non-empty sum")).collect()
        }
        Strategy::Giant => {
            let rots: Vec<Vec<Ct<B>>> = cts.iter().map(|ct| ev.rot_many(ct, &pre)).collect::<Result<_, _>>()?;
            (0..plan.n_out)
                .into_par_iter()
                .map(|j| -> Result<Ct<B>, ConvError> {
                    let mut out = None;
                    for (k, tap) in plan.taps.iter().enumerate() {
                        let mut inner = None;
                        for (i, ri) in rots.iter().enumerate() {
                            for (l, x) in ri.iter().enumerate() {
                                ev.mult_plain_acc(&mut inner, x, &*weights.fetch(ev, j, i, k, l)?)?;
                            }
                        }
                        let inner = inner.expect("non-empty sum");
                        ev.accumulate(&mut out, ev.rot(&inner, tap.rot)?)?;
                    }
                    Ok(out.expect("non-empty sum"))
                })
                .collect::<Result<_, _>>()?
        }
        Strategy::Baby => {
            let rots: Vec<Vec<Ct<B>>> = cts.iter().map(|ct| ev.rot_many(ct, &pre)).collect::<Result<_, _>>()?;
            (0..plan.n_out)
                .into_par_iter()
                .map(|j| -> Result<Ct<B>, ConvError> {
                    let mut out = None;
                    for l in 0..nl {
                        let mut inner = None;
                        for (i, ri) in rots.iter().enumerate() {
                            for (k, x) in ri.iter().enumerate() {
                                ev.mult_plain_acc(&mut inner, x, &*weights.fetch(ev, j, i, k, l)?)?;
                            }
                        }
                        let inner = inner.expect("non-empty sum");
                        ev.accumulate(&mut out, ev.rot(&inner, plan.block_rot(l))?)?;
                    }
                    Ok(out.expect("non-empty sum"))
                })
                .collect::<Result<_, _>>()?
        }
    };
    outs.par_iter().map(|c| ev.rescale(c).map_err(ConvError::from)).collect()
}

#[cfg(test)]
mod tests;
