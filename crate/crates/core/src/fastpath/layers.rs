//! Non-convolutional layers: average pooling, the collapsed quadratic
//! activation, global pooling and the fully connected layer.

use rayon::prelude::*;

use super::FastError;
use crate::backend::{Ct, Evaluator, Pt, SlotBackend, SlotData};
use crate::layout::{Dim, PackedLayout};

/// Sum pooling by rotate-and-add; the divisor lives in the activation coefficients.
///
/// Each patch sum lands on the patch's top-left slot.
pub fn avg_pool<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: Vec<Ct<B>>,
    layout: &PackedLayout,
) -> Result<(Vec<Ct<B>>, PackedLayout), FastError> {
    let next = layout.pooled()?;
    let (col, row) = (layout.col_step() as isize, layout.row_step() as isize);
    let out = cts
        .into_par_iter()
        .map(|mut ct| -> Result<Ct<B>, FastError> {
            let r = ev.rot(&ct, col)?;
            ev.add_assign(&mut ct, &r)?;
            if layout.dim == Dim::Two {
                let r = ev.rot(&ct, row)?;
                ev.add_assign(&mut ct, &r)?;
            }
            Ok(ct)
        })
        .collect::<Result<_, _>>()?;
    Ok((out, next))
}

/// `sq = rescale(ct * ct)` for every ciphertext.
pub fn square_all<B: SlotBackend>(ev: &Evaluator<B>, cts: &[Ct<B>]) -> Result<Vec<Ct<B>>, FastError> {
    cts.par_iter().map(|ct| Ok(ev.rescale(&ev.mult(ct, ct)?)?)).collect()
}

/// `rescale(sq * c2 + ct * c1) + c0`, with `ct` brought down to the level of `sq`.
pub fn finish_activation<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    squares: &[Ct<B>],
    coeffs: &[[Pt<B>; 3]],
) -> Result<Vec<Ct<B>>, FastError> {
    if cts.len() != squares.len() || cts.len() != coeffs.len() {
        return Err(FastError::Count { what: "activation coefficient sets", expected: cts.len(), got: coeffs.len() });
    }
    cts.par_iter()
        .zip(squares)
        .zip(coeffs)
        .map(|((ct, sq), [c0, c1, c2])| -> Result<Ct<B>, FastError> {
            let mut u = ev.mult_plain(sq, c2)?;
            let lin = ev.mult_plain(&ev.mod_down(ct, sq.level())?, c1)?;
            ev.add_assign(&mut u, &lin)?;
            Ok(ev.add_plain(&ev.rescale(&u)?, c0)?)
        })
        .collect()
}

pub fn poly_activate<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    coeffs: &[[Pt<B>; 3]],
) -> Result<Vec<Ct<B>>, FastError> {
    let squares = square_all(ev, cts)?;
    finish_activation(ev, cts, &squares, coeffs)
}

/// Dense per-block coefficient vectors `[c0, c1, c2]` for each output ciphertext.
///
/// Block `b` of ciphertext `j` carries the coefficients of channel `per_ct * j + b`
/// in every slot, so junk slots are transformed too.
pub fn coefficient_slots(coeffs: &[[f64; 3]], layout: &PackedLayout) -> Vec<[SlotData; 3]> {
    let per = layout.channels_per_ct;
    (0..coeffs.len().div_ceil(per))
        .map(|j| {
            let mut v = [vec![0.0; layout.slots], vec![0.0; layout.slots], vec![0.0; layout.slots]];
            for b in 0..per {
                let Some(c) = coeffs.get(per * j + b) else { break };
                for (d, vec) in v.iter_mut().enumerate() {
                    vec[b * layout.block..(b + 1) * layout.block].fill(c[d]);
                }
            }
            v.map(SlotData::Dense)
        })
        .collect()
}

/// Rotation amounts of a binary-decomposition rotate-and-sum over `n` entries spaced `step` apart.
///
/// Returns `(doubling, combine)`: doubling amounts build power-of-two partial
/// sums, combine amounts shift them into place. Amounts of 0 are dropped.
pub fn rotate_sum_amounts(n: usize, step: usize) -> (Vec<isize>, Vec<isize>) {
    if n <= 1 {
        return (Vec::new(), Vec::new());
    }
    let top = usize::BITS - 1 - n.leading_zeros();
    let doubling = (0..top).map(|j| ((1usize << j) * step) as isize).collect();
    let mut combine = Vec::new();
    let mut shift = 0;
    for j in 0..=top {
        if n >> j & 1 == 1 {
            if shift > 0 {
                combine.push((shift * step) as isize);
            }
            shift += 1 << j;
        }
    }
    (doubling, combine)
}

/// Slot 0 of the result holds `sum_{i<n} ct[i * step]`.
pub fn rotate_sum<B: SlotBackend>(ev: &Evaluator<B>, ct: &Ct<B>, n: usize, step: usize) -> Result<Ct<B>, FastError> {
    if n <= 1 {
        return Ok(ct.clone());
    }
    let top = usize::BITS - 1 - n.leading_zeros();
    let mut pow = ct.clone();
    let mut acc: Option<Ct<B>> = None;
    let mut shift = 0usize;
    for j in 0..=top {
        if n >> j & 1 == 1 {
            ev.accumulate(&mut acc, ev.rot(&pow, (shift * step) as isize)?)?;
            shift += 1 << j;
        }
        if j < top {
            let r = ev.rot(&pow, ((1usize << j) * step) as isize)?;
            ev.add_assign(&mut pow, &r)?;
        }
    }
    Ok(acc.expect("n >= 1"))
}

/// Sums every valid entry of each channel block into the block's first slot.
pub fn global_pool<B: SlotBackend>(ev: &Evaluator<B>, cts: Vec<Ct<B>>, layout: &PackedLayout) -> Result<Vec<Ct<B>>, FastError> {
    cts.into_par_iter()
        .map(|ct| {
            let cols = rotate_sum(ev, &ct, layout.map_w, layout.col_step())?;
            rotate_sum(ev, &cols, layout.map_h, layout.row_step())
        })
        .collect()
}

/// Diagonal plaintexts of the FC layer, index `i * c + l` for input ciphertext `i`
/// and diagonal `l`, with the rotation by `dist * l` undone in advance.
///
/// Slot `dist * m` of plaintext `(i, l)` holds `W[(m - l) mod c, c * i + m]`.
pub fn fc_slots(weight: &[f64], classes: usize, d_in: usize, layout: &PackedLayout) -> Vec<SlotData> {
    let c = layout.channels_per_ct;
    let n = d_in.div_ceil(c);
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for l in 0..c {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for m in 0..c {
                let row = (m + c - l) % c;
                let col = c * i + m;
                if row < classes && col < d_in {
                    let w = weight[row * d_in + col];
                    if w != 0.0 {
                        idx.push((layout.dist * m) as u32);
                        val.push(w);
                    }
                }
            }
            out.push(SlotData::Sparse { len: layout.slots, idx, val });
        }
    }
    out
}

/// Bias vector at the logit slots `dist * m`.
pub fn fc_bias_slots(bias: &[f64], layout: &PackedLayout) -> SlotData {
    SlotData::Sparse {
        len: layout.slots,
        idx: (0..bias.len()).map(|m| (layout.dist * m) as u32).collect(),
        val: bias.to_vec(),
    }
}

/// Slots holding the logits after [`fc`].
pub fn logit_slots(classes: usize, layout: &PackedLayout) -> Vec<usize> {
    (0..classes).map(|m| layout.dist * m).collect()
}

/// `sum_l rot(sum_i ct_i * pt_{i,l}, dist * l)`, rescaled, plus the bias.
pub fn fc<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: &[Ct<B>],
    diagonals: &[Pt<B>],
    bias: &Pt<B>,
    layout: &PackedLayout,
) -> Result<Ct<B>, FastError> {
    let c = layout.channels_per_ct;
    if diagonals.len() != cts.len() * c {
        return Err(FastError::Count { what: "FC diagonals", expected: cts.len() * c, got: diagonals.len() });
    }
    let partial: Vec<Ct<B>> = (0..c)
        .into_par_iter()
        .map(|l| -> Result<Ct<B>, FastError> {
            let mut inner = None;
            for (i, ct) in cts.iter().enumerate() {
                ev.mult_plain_acc(&mut inner, ct, &diagonals[i * c + l])?;
            }
            Ok(ev.rot(&inner.expect("at least one input"), (layout.dist * l) as isize)?)
        })
        .collect::<Result<_, _>>()?;
    let mut acc = None;
    for p in partial {
        ev.accumulate(&mut acc, p)?;
    }
    let out = ev.rescale(&acc.expect("c >= 1"))?;
    Ok(ev.add_plain(&out, bias)?)
}

/// [`global_pool`] followed by [`fc`].
pub fn global_pool_fc<B: SlotBackend>(
    ev: &Evaluator<B>,
    cts: Vec<Ct<B>>,
    diagonals: &[Pt<B>],
    bias: &Pt<B>,
    layout: &PackedLayout,
) -> Result<Ct<B>, FastError> {
    let pooled = global_pool(ev, cts, layout)?;
    fc(ev, &pooled, diagonals, bias, layout)
}
