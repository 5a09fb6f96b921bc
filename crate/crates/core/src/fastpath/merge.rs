//! Merge-and-conquer: pack `n_P` pooled ciphertexts into the junk lattice of
//! one, convolve the merged ciphertexts, then rotate-and-sum the partial results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FastError;
use crate::backend::{Ct, Evaluator, Pt, SlotBackend, SlotData};
use crate::convolution::{hconv, ConvPlan, WeightSource};
use crate::layout::{load_factor, PackedLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    /// Load factor `n_P`.
    pub load: usize,
    /// Sub-lattice offset `(row, col)` of each source inside a pooling patch.
    pub subs: Vec<(usize, usize)>,
    /// Source `s` is rotated by `-pre[s]` before summation.
    pub pre: Vec<isize>,
    /// Rotate-and-sum amounts applied to each convolution output.
    pub post: Vec<isize>,
    /// Pooled layout the sources arrive in.
    pub layout: PackedLayout,
}

impl MergeSpec {
    /// Spec with a single source: masking only, no rotations.
    pub fn single(layout: &PackedLayout) -> MergeSpec {
        MergeSpec { load: 1, subs: vec![(0, 0)], pre: vec![0], post: Vec::new(), layout: *layout }
    }

    /// Zero-one mask keeping the valid slots of one source.
    pub fn mask(&self) -> SlotData {
        let idx: Vec<u32> = self.layout.valid_slots().into_iter().map(|s| s as u32).collect();
        let val = vec![1.0; idx.len()];
        SlotData::Sparse { len: self.layout.slots, idx, val }
    }

    /// Slots occupied by source `s` after its pre-rotation.
    pub fn source_slots(&self, s: usize) -> Vec<usize> {
        let lay = &self.layout;
        let mut out = Vec::with_capacity(lay.channels_per_ct * lay.map_h * lay.map_w);
        for b in 0..lay.channels_per_ct {
            for p in 0..lay.map_h {
                for q in 0..lay.map_w {
                    let off = lay.offset(p, q, self.subs[s]);
                    // An offset past the block end is reported as out of range.
                    out.push(if off < lay.block { b * lay.block + off } else { usize::MAX });
                }
            }
        }
        out
    }

    /// Checks that shifted sources stay inside their blocks and never overlap.
    pub fn check_disjoint(&self) -> Result<(), FastError> {
        let lay = &self.layout;
        let mut seen = vec![false; lay.slots];
        for s in 0..self.load {
            for slot in self.source_slots(s) {
                if slot >= lay.slots {
                    return Err(FastError::Merge(format!("source {s} leaves the slot range at {slot}")));
                }
                if std::mem::replace(&mut seen[slot], true) {
                    return Err(FastError::Merge(format!("sources collide at slot {slot}")));
                }
            }
        }
        Ok(())
    }
}

/// Interleaves `load_factor(t, n_in)` sources into the junk lattice of the pooled layout.
///
/// Source `s` gets column offset `s mod 2^e_c` and row offset `s / 2^e_c`,
/// where `e_c` uses as many column bits as the column stride allows.
pub fn build_merge_spec(layout: &PackedLayout, n_in: usize, t: usize) -> Result<MergeSpec, FastError> {
    let load = load_factor(t, n_in, layout.dim);
    if !load.is_power_of_two() {
        return Err(FastError::Merge(format!("load factor {load} is not a power of two")));
    }
    if n_in % load != 0 {
        return Err(FastError::Merge(format!("{n_in} inputs do not split into groups of {load}")));
    }
    let e = load.trailing_zeros();
    let (sr, sc) = layout.valid_stride;
    let (kr, kc) = (sr.trailing_zeros(), sc.trailing_zeros());
    let ec = e.min(kc);
    let er = e - ec;
    if er > kr {
        return Err(FastError::Merge(format!(
            "load factor {load} does not fit a {sr}x{sc} pooling lattice"
        )));
    }
    let w = layout.row_width;
    let subs: Vec<(usize, usize)> = (0..load).map(|s| (s >> ec, s & ((1 << ec) - 1))).collect();
    let pre = subs.iter().map(|&(di, dj)| (di * w + dj) as isize).collect();
    let post = (0..ec).map(|b| 1isize << b).chain((0..er).map(|b| ((1usize << b) * w) as isize)).collect();
    let spec = MergeSpec { load, subs, pre, post, layout: *layout };
    spec.check_disjoint()?;
    Ok(spec)
}

/// Masks every source, shifts it onto its sub-lattice and sums groups of `load`; one rescale per group.
pub fn premerge<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    spec: &MergeSpec,
    mask: &Pt<B>,
) -> Result<Vec<Ct<B>>, FastError> {
    if cts.len() % spec.load != 0 {
        return Err(FastError::Merge(format!("{} inputs do not split into groups of {}", cts.len(), spec.load)));
    }
    cts.par_chunks(spec.load)
        .map(|group| -> Result<Ct<B>, FastError> {
            let mut acc = None;
            for (ct, &mu) in group.iter().zip(&spec.pre) {
                let masked = ev.mult_plain(ct, mask)?;
                ev.accumulate(&mut acc, ev.rot(&masked, -mu)?)?;
            }
            Ok(ev.rescale(&acc.expect("non-empty group"))?)
        })
        .collect()
}

/// Rotate-and-sum so that each valid slot collects the partial sums of all sources.
pub fn postmerge<B: SlotBackend>(ev: &Evaluator<B>, cts: Vec<Ct<B>>, spec: &MergeSpec) -> Result<Vec<Ct<B>>, FastError> {
    cts.into_par_iter()
        .map(|mut ct| -> Result<Ct<B>, FastError> {
            for &nu in &spec.post {
                let r = ev.rot(&ct, nu)?;
                ev.add_assign(&mut ct, &r)?;
            }
            Ok(ct)
        })
        .collect()
}

/// Pre-processing, convolution on merged inputs, post-processing.
pub fn fast_hconv<B: SlotBackend, W: WeightSource<B>>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    spec: &MergeSpec,
    mask: &Pt<B>,
    weights: &W,
    plan: &ConvPlan,
) -> Result<Vec<Ct<B>>, FastError> {
    check_plan(spec, plan)?;
    let merged = premerge(ev, cts, spec, mask)?;
    let out = hconv(ev, &merged, weights, plan)?;
    postmerge(ev, out, spec)
}

pub(crate) fn check_plan(spec: &MergeSpec, plan: &ConvPlan) -> Result<(), FastError> {
    if plan.load != spec.load || plan.subs != spec.subs {
        return Err(FastError::Merge(format!(
            "plan merges {} sources at {:?}, spec {} at {:?}",
            plan.load, plan.subs, spec.load, spec.subs
        )));
    }
    Ok(())
}
