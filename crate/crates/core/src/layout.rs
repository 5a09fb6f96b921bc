//! Slot-packing geometry: channel blocks, replicas and valid-slot lattices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::InputTensor;
use crate::model::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "1d")]
    One,
    #[serde(rename = "2d")]
    Two,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("slot count {0} is not a power of two")]
    SlotCount(usize),
    #[error("two channels of {span} slots do not fit in {slots} slots")]
    TooLarge { span: usize, slots: usize },
    #[error("matrix of {rows}x{cols} cannot hold {len} values")]
    Size { rows: usize, cols: usize, len: usize },
    #[error("feature map {h}x{w} is smaller than the pooling window")]
    Extent { h: usize, w: usize },
    #[error("malformed input tensor")]
    Tensor,
}

/// Least power of two that is at least `x` (`x = 0` maps to 1).
pub fn pot(x: usize) -> usize {
    x.max(1).next_power_of_two()
}

pub fn mat_to_vec(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn vec_to_mat(v: &[f64], rows: usize, cols: usize) -> Result<Vec<Vec<f64>>, LayoutError> {
    if rows * cols != v.len() {
        return Err(LayoutError::Size { rows, cols, len: v.len() });
    }
    Ok(v.chunks(cols.max(1)).take(rows).map(|r| r.to_vec()).collect())
}

/// How many post-pooling ciphertexts are merged before conv `t`.
pub fn load_factor(t: usize, n_in: usize, dim: Dim) -> usize {
    let cap = match (dim, t) {
        (Dim::One, 2) => 2,
        (Dim::One, 3) => 4,
        (Dim::Two, 2) => 4,
        (Dim::Two, 3) => 16,
        _ => 1,
    };
    n_in.min(cap).max(1)
}

/// Geometry of one pipeline stage.
///
/// Each channel owns a block of `block` consecutive slots. Inside a block the
/// map keeps the coordinates of the original `T x J` grid (row `r`, column `c`
/// at offset `r * row_width + c`); after pooling the valid entries sit at
/// multiples of `valid_stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedLayout {
    pub dim: Dim,
    pub slots: usize,
    pub block: usize,
    pub channels_per_ct: usize,
    pub replicas: usize,
    pub row_width: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub valid_stride: (usize, usize),
    pub dist: usize,
}

impl PackedLayout {
    /// Layout of a freshly packed input (two channels, replicated).
    pub fn input(dim: Dim, frames: usize, joints: usize, slots: usize) -> Result<Self, LayoutError> {
        if !slots.is_power_of_two() {
            return Err(LayoutError::SlotCount(slots));
        }
        let span = frames * joints;
        let block = pot(span);
        if 2 * block > slots {
            return Err(LayoutError::TooLarge { span: block, slots });
        }
        let (map_h, map_w, row_width) = match dim {
            Dim::Two => (frames, joints, joints),
            Dim::One => (1, span, span),
        };
        Ok(PackedLayout {
            dim,
            slots,
            block,
            channels_per_ct: slots / block,
            replicas: slots / (2 * block),
            row_width,
            map_h,
            map_w,
            valid_stride: (1, 1),
            dist: block,
        })
    }

    /// Layout after a conv block keeps the geometry but has one channel per block.
    pub fn unreplicated(&self) -> Self {
        PackedLayout { replicas: 1, ..*self }
    }

    /// Layout after a 2 (1D) or 2x2 (2D) stride-2 sum pool; extents use floor division.
    pub fn pooled(&self) -> Result<Self, LayoutError> {
        let (wh, ww) = self.window();
        if self.map_h < wh || self.map_w < ww {
            return Err(LayoutError::Extent { h: self.map_h, w: self.map_w });
        }
        Ok(PackedLayout {
            map_h: self.map_h / wh,
            map_w: self.map_w / ww,
            valid_stride: (self.valid_stride.0 * wh, self.valid_stride.1 * ww),
            replicas: 1,
            ..*self
        })
    }

    pub fn window(&self) -> (usize, usize) {
        match self.dim {
            Dim::One => (1, 2),
            Dim::Two => (2, 2),
        }
    }

    /// Slot distance between vertically adjacent valid entries.
    pub fn row_step(&self) -> usize {
        self.valid_stride.0 * self.row_width
    }

    pub fn col_step(&self) -> usize {
        self.valid_stride.1
    }

    /// Offset inside a block of map position `(p, q)` shifted by a sub-lattice offset.
    pub fn offset(&self, p: usize, q: usize, sub: (usize, usize)) -> usize {
        (self.valid_stride.0 * p + sub.0) * self.row_width + self.valid_stride.1 * q + sub.1
    }

    pub fn slot(&self, block: usize, p: usize, q: usize) -> usize {
        block * self.block + self.offset(p, q, (0, 0))
    }

    /// Offsets of the valid entries inside one block, row-major in map order.
    pub fn valid_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.map_h * self.map_w);
        for p in 0..self.map_h {
            for q in 0..self.map_w {
                out.push(self.offset(p, q, (0, 0)));
            }
        }
        out
    }

    pub fn valid_slots(&self) -> Vec<usize> {
        let offs = self.valid_offsets();
        (0..self.channels_per_ct)
            .flat_map(|b| offs.iter().map(move |o| b * self.block + o))
            .collect()
    }

    pub fn valid_mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.slots];
        for s in self.valid_slots() {
            m[s] = 1.0;
        }
        m
    }
}

/// Packs both channels row-major, pads each to a power-of-two block and
/// replicates the pair across all slots.
pub fn pack_input(
    x: &InputTensor,
    slots: usize,
    dim: Dim,
) -> Result<(Vec<f64>, PackedLayout), LayoutError> {
    if !x.is_well_formed() {
        return Err(LayoutError::Tensor);
    }
    let layout = PackedLayout::input(dim, x.frames, x.joints, slots)?;
    let mut pair = vec![0.0; 2 * layout.block];
    for c in 0..2 {
        let flat = x.flat_channel(c);
        pair[c * layout.block..c * layout.block + flat.len()].copy_from_slice(&flat);
    }
    let mut v = Vec::with_capacity(slots);
    for _ in 0..layout.replicas {
        v.extend_from_slice(&pair);
    }
    Ok((v, layout))
}

/// Places channel `per_ct * i + b` of `map` in block `b` of ciphertext `i` at the
/// layout's valid positions; every other slot is zero.
pub fn pack_channels(map: &FeatureMap, layout: &PackedLayout) -> Vec<Vec<f64>> {
    assert_eq!((map.h, map.w), (layout.map_h, layout.map_w), "map extents differ from layout");
    let per = layout.channels_per_ct;
    (0..map.c.div_ceil(per))
        .map(|i| {
            let mut v = vec![0.0; layout.slots];
            for b in 0..per {
                let c = per * i + b;
                if c >= map.c {
                    break;
                }
                for p in 0..map.h {
                    for q in 0..map.w {
                        v[layout.slot(b, p, q)] = map.at(c, p, q);
                    }
                }
            }
            v
        })
        .collect()
}

/// Inverse of [`pack_channels`] on valid slots.
pub fn unpack_channels(cts: &[Vec<f64>], layout: &PackedLayout, channels: usize) -> FeatureMap {
    let per = layout.channels_per_ct;
    let mut m = FeatureMap::zeros(channels, layout.map_h, layout.map_w);
    for c in 0..channels {
        for p in 0..layout.map_h {
            for q in 0..layout.map_w {
                *m.at_mut(c, p, q) = cts[c / per][layout.slot(c % per, p, q)];
            }
        }
    }
    m
}
