//! Network family, parameters, layer collapsing and the cleartext reference.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::InputTensor;
pub use crate::layout::Dim;

pub const IN_CHANNELS: usize = 2;
pub const BLOCKS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("{what}: expected {expected} values, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("block {block} channel {channel}: sigma must be positive")]
    Sigma { block: usize, channel: usize },
    #[error("non-finite parameter in {0}")]
    NonFinite(String),
    #[error("input tensor is {got:?}, expected {expected:?}")]
    Input { expected: (usize, usize), got: (usize, usize) },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub dim: Dim,
    pub frames: usize,
    pub joints: usize,
    pub widths: [usize; 3],
    pub classes: usize,
}

impl NetworkShape {
    pub fn new(dim: Dim, frames: usize, joints: usize, widths: [usize; 3], classes: usize) -> Result<Self, ModelError> {
        let s = NetworkShape { dim, frames, joints, widths, classes };
        s.validate()?;
        Ok(s)
    }

    /// `1d-w64`, `1d-w128`, `2d-w64`, `2d-w128` on 32 frames of 15 joints, 10 classes.
    pub fn preset(name: &str) -> Option<Self> {
        let (dim, w) = match name.to_ascii_lowercase().as_str() {
            "1d-w64" => (Dim::One, 64),
            "1d-w128" => (Dim::One, 128),
            "2d-w64" => (Dim::Two, 64),
            "2d-w128" => (Dim::Two, 128),
            _ => return None,
        };
        Some(NetworkShape { dim, frames: 32, joints: 15, widths: [w, 2 * w, 4 * w], classes: 10 })
    }

    pub fn preset_names() -> [&'static str; 4] {
        ["1d-w64", "1d-w128", "2d-w64", "2d-w128"]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.frames == 0 || self.joints == 0 || self.classes == 0 {
            return Err(ModelError::Shape("frames, joints and classes must be positive".into()));
        }
        if self.widths[0] == 0 {
            return Err(ModelError::Shape("widths must be positive".into()));
        }
        for t in 0..2 {
            if self.widths[t + 1] != 2 * self.widths[t] {
                return Err(ModelError::Shape(format!(
                    "width {} must double to {}, found {}",
                    self.widths[t],
                    2 * self.widths[t],
                    self.widths[t + 1]
                )));
            }
        }
        let (h, w) = self.conv_map(3);
        if h == 0 || w == 0 {
            return Err(ModelError::Shape("input too small for two pooling stages".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> (usize, usize) {
        match self.dim {
            Dim::One => (1, 3),
            Dim::Two => (3, 3),
        }
    }

    pub fn taps(&self) -> usize {
        let (a, b) = self.kernel();
        a * b
    }

    pub fn window(&self) -> (usize, usize) {
        match self.dim {
            Dim::One => (1, 2),
            Dim::Two => (2, 2),
        }
    }

    pub fn input_map(&self) -> (usize, usize) {
        match self.dim {
            Dim::One => (1, self.frames * self.joints),
            Dim::Two => (self.frames, self.joints),
        }
    }

    /// Map extents seen by conv `t` (1-based); pooling uses floor division.
    pub fn conv_map(&self, t: usize) -> (usize, usize) {
        let (mut h, mut w) = self.input_map();
        let (wh, ww) = self.window();
        for _ in 1..t {
            h /= wh;
            w /= ww;
        }
        (h, w)
    }

    pub fn in_channels(&self, t: usize) -> usize {
        if t == 1 { IN_CHANNELS } else { self.widths[t - 2] }
    }

    pub fn out_channels(&self, t: usize) -> usize {
        self.widths[t - 1]
    }

    /// Area of the pooling window that follows block `t` (1 for the last block).
    pub fn pool_area(&self, t: usize) -> usize {
        if t < BLOCKS {
            let (a, b) = self.window();
            a * b
        } else {
            1
        }
    }

    pub fn fc_inputs(&self) -> usize {
        self.widths[2]
    }
}

/// Filters of one conv layer, `[c_out][c_in][kh][kw]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvFilters {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f64>,
}

impl ConvFilters {
    pub fn zeros(c_out: usize, c_in: usize, kh: usize, kw: usize) -> Self {
        ConvFilters { c_out, c_in, kh, kw, weights: vec![0.0; c_out * c_in * kh * kw] }
    }

    #[inline]
    pub fn index(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.c_in + c) * self.kh + i) * self.kw + j
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, i: usize, j: usize) -> f64 {
        self.weights[self.index(o, c, i, j)]
    }

    pub fn set(&mut self, o: usize, c: usize, i: usize, j: usize, v: f64) {
        let k = self.index(o, c, i, j);
        self.weights[k] = v;
    }

    /// Tap at signed offset `(dh, dw)` around the centre.
    #[inline]
    pub fn tap(&self, o: usize, c: usize, dh: isize, dw: isize) -> f64 {
        let i = (dh + (self.kh as isize) / 2) as usize;
        let j = (dw + (self.kw as isize) / 2) as usize;
        self.at(o, c, i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBlock {
    pub filters: ConvFilters,
    pub bias: Vec<f64>,
    pub bn_mean: Vec<f64>,
    pub bn_std: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub act: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLayerParams {
    pub shape: NetworkShape,
    pub blocks: Vec<RawBlock>,
    /// `classes x fc_inputs`, row-major.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedBlock {
    pub filters: ConvFilters,
    /// Per output channel `(c0, c1, c2)`.
    pub coeffs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedParams {
    pub shape: NetworkShape,
    pub blocks: Vec<CollapsedBlock>,
    /// Global-average divisor already folded in.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

fn check_len(what: String, v: &[f64], expected: usize) -> Result<(), ModelError> {
    if v.len() != expected {
        return Err(ModelError::Dimension { what, expected, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(what));
    }
    Ok(())
}

impl RawLayerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let s = &self.shape;
        s.validate()?;
        if self.blocks.len() != BLOCKS {
            return Err(ModelError::Dimension { what: "blocks".into(), expected: BLOCKS, got: self.blocks.len() });
        }
        let (kh, kw) = s.kernel();
        for (i, b) in self.blocks.iter().enumerate() {
            let t = i + 1;
            let (co, ci) = (s.out_channels(t), s.in_channels(t));
            let f = &b.filters;
            if (f.c_out, f.c_in, f.kh, f.kw) != (co, ci, kh, kw) {
                return Err(ModelError::Shape(format!(
                    "block {t} filters are {}x{}x{}x{}, expected {co}x{ci}x{kh}x{kw}",
                    f.c_out, f.c_in, f.kh, f.kw
                )));
            }
            check_len(format!("block{t}.filters"), &f.weights, co * ci * kh * kw)?;
            check_len(format!("block{t}.bias"), &b.bias, co)?;
            check_len(format!("block{t}.bn_mean"), &b.bn_mean, co)?;
            check_len(format!("block{t}.bn_std"), &b.bn_std, co)?;
            check_len(format!("block{t}.bn_gamma"), &b.bn_gamma, co)?;
            check_len(format!("block{t}.bn_beta"), &b.bn_beta, co)?;
            check_len(format!("block{t}.act"), &b.act, 3)?;
            if let Some(ch) = b.bn_std.iter().position(|&x| x <= 0.0) {
                return Err(ModelError::Sigma { block: t, channel: ch });
            }
        }
        check_len("fc_weight".into(), &self.fc_weight, s.classes * s.fc_inputs())?;
        check_len("fc_bias".into(), &self.fc_bias, s.classes)?;
        Ok(())
    }

    /// Random model whose activations stay in a moderate range for unit-range inputs.
    pub fn random<R: Rng>(shape: NetworkShape, rng: &mut R) -> Self {
        let (kh, kw) = shape.kernel();
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let mut blocks = Vec::with_capacity(BLOCKS);
        for t in 1..=BLOCKS {
            let (co, ci) = (shape.out_channels(t), shape.in_channels(t));
            let bound = (3.0 / (ci * kh * kw) as f64).sqrt();
            let weights = (0..co * ci * kh * kw).map(|_| u(-bound, bound)).collect();
            blocks.push(RawBlock {
                filters: ConvFilters { c_out: co, c_in: ci, kh, kw, weights },
                bias: (0..co).map(|_| u(-0.1, 0.1)).collect(),
                bn_mean: (0..co).map(|_| u(-0.2, 0.2)).collect(),
                bn_std: (0..co).map(|_| u(0.8, 1.5)).collect(),
                bn_gamma: (0..co).map(|_| u(0.5, 1.0)).collect(),
                bn_beta: (0..co).map(|_| u(-0.2, 0.2)).collect(),
                act: [u(-0.1, 0.1), u(0.5, 1.0), u(0.05, 0.2)],
            });
        }
        let d_in = shape.fc_inputs();
        let bound = 0.5 / (d_in as f64).sqrt();
        RawLayerParams {
            shape,
            blocks,
            fc_weight: (0..shape.classes * d_in).map(|_| u(-bound, bound)).collect(),
            fc_bias: (0..shape.classes).map(|_| u(-0.1, 0.1)).collect(),
        }
    }
}

/// Folds conv bias, batch norm, the quadratic activation and the pooling
/// divisor into one degree-2 polynomial per channel.
pub fn collapse_layers(raw: &RawLayerParams) -> Result<CollapsedParams, ModelError> {
    raw.validate()?;
    let s = raw.shape;
    let blocks = raw
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let area = s.pool_area(i + 1) as f64;
            let [a0, a1, a2] = b.act;
            let coeffs = (0..b.filters.c_out)
                .map(|n| {
                    let d1 = b.bn_gamma[n] / b.bn_std[n];
                    let d0 = b.bn_beta[n] + d1 * (b.bias[n] - b.bn_mean[n]);
                    [
                        (a0 + a1 * d0 + a2 * d0 * d0) / area,
                        (a1 * d1 + 2.0 * a2 * d0 * d1) / area,
                        (a2 * d1 * d1) / area,
                    ]
                })
                .collect();
            CollapsedBlock { filters: b.filters.clone(), coeffs }
        })
        .collect();
    let (h, w) = s.conv_map(BLOCKS);
    let g = 1.0 / (h * w) as f64;
    Ok(CollapsedParams {
        shape: s,
        blocks,
        fc_weight: raw.fc_weight.iter().map(|x| x * g).collect(),
        fc_bias: raw.fc_bias.clone(),
    })
}

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    pub fn at(&self, c: usize, p: usize, q: usize) -> f64 {
        self.data[(c * self.h + p) * self.w + q]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, p: usize, q: usize) -> &mut f64 {
        &mut self.data[(c * self.h + p) * self.w + q]
    }

    pub fn from_input(x: &InputTensor, dim: Dim) -> Self {
        let (h, w) = match dim {
            Dim::One => (1, x.frames * x.joints),
            Dim::Two => (x.frames, x.joints),
        };
        let mut data = x.flat_channel(0);
        data.extend(x.flat_channel(1));
        FeatureMap { c: 2, h, w, data }
    }

    pub fn channel_sums(&self) -> Vec<f64> {
        self.data.chunks(self.h * self.w).map(|ch| ch.iter().sum()).collect()
    }
}

/// Zero-padded "same" cross-correlation.
pub fn conv_same(x: &FeatureMap, f: &ConvFilters) -> FeatureMap {
    assert_eq!(x.c, f.c_in, "channel mismatch");
    let (rh, rw) = ((f.kh / 2) as isize, (f.kw / 2) as isize);
    let mut y = FeatureMap::zeros(f.c_out, x.h, x.w);
    for o in 0..f.c_out {
        for p in 0..x.h {
            for q in 0..x.w {
                let mut acc = 0.0;
                for c in 0..f.c_in {
                    for dh in -rh..=rh {
                        let pp = p as isize + dh;
                        if pp < 0 || pp >= x.h as isize {
                            continue;
                        }
                        for dw in -rw..=rw {
                            let qq = q as isize + dw;
                            if qq < 0 || qq >= x.w as isize {
                                continue;
                            }
                            acc += f.tap(o, c, dh, dw) * x.at(c, pp as usize, qq as usize);
                        }
                    }
                }
                *y.at_mut(o, p, q) = acc;
            }
        }
    }
    y
}

pub fn poly_per_channel(x: &FeatureMap, coeffs: &[[f64; 3]]) -> FeatureMap {
    let mut y = x.clone();
    let hw = x.h * x.w;
    for (c, chunk) in y.data.chunks_mut(hw).enumerate() {
        let [c0, c1, c2] = coeffs[c];
        for v in chunk {
            *v = c0 + c1 * *v + c2 * *v * *v;
        }
    }
    y
}

/// Stride-`window` sum pooling with floor division of the extents.
pub fn sum_pool(x: &FeatureMap, window: (usize, usize)) -> FeatureMap {
    let (wh, ww) = window;
    let mut y = FeatureMap::zeros(x.c, x.h / wh, x.w / ww);
    for c in 0..x.c {
        for p in 0..y.h {
            for q in 0..y.w {
                let mut s = 0.0;
                for i in 0..wh {
                    for j in 0..ww {
                        s += x.at(c, p * wh + i, q * ww + j);
                    }
                }
                *y.at_mut(c, p, q) = s;
            }
        }
    }
    y
}

fn check_input(shape: &NetworkShape, x: &InputTensor) -> Result<(), ModelError> {
    if !x.is_well_formed() || (x.frames, x.joints) != (shape.frames, shape.joints) {
        return Err(ModelError::Input { expected: (shape.frames, shape.joints), got: (x.frames, x.joints) });
    }
    Ok(())
}

fn dense(w: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    b.iter()
        .enumerate()
        .map(|(o, bias)| bias + w[o * d..(o + 1) * d].iter().zip(v).map(|(a, x)| a * x).sum::<f64>())
        .collect()
}

/// Logits of the collapsed network.
pub fn infer_clear(params: &CollapsedParams, x: &InputTensor) -> Result<Vec<f64>, ModelError> {
    let s = &params.shape;
    check_input(s, x)?;
    let mut m = FeatureMap::from_input(x, s.dim);
    for (i, b) in params.blocks.iter().enumerate() {
        m = poly_per_channel(&conv_same(&m, &b.filters), &b.coeffs);
        if i + 1 < BLOCKS {
            m = sum_pool(&m, s.window());
        }
    }
    Ok(dense(&params.fc_weight, &params.fc_bias, &m.channel_sums()))
}

/// Uncollapsed forward pass: conv + bias, batch norm, activation, average pool.
pub fn forward_raw(raw: &RawLayerParams, x: &InputTensor) -> Result<Vec<f64>, ModelError> {
    raw.validate()?;
    let s = &raw.shape;
    check_input(s, x)?;
    let mut m = FeatureMap::from_input(x, s.dim);
    for (i, b) in raw.blocks.iter().enumerate() {
        let mut y = conv_same(&m, &b.filters);
        let hw = y.h * y.w;
        let [a0, a1, a2] = b.act;
        for (n, chunk) in y.data.chunks_mut(hw).enumerate() {
            for v in chunk {
                let z = b.bn_gamma[n] * ((*v + b.bias[n]) - b.bn_mean[n]) / b.bn_std[n] + b.bn_beta[n];
                *v = a0 + a1 * z + a2 * z * z;
            }
        }
        if i + 1 < BLOCKS {
            let area = s.pool_area(i + 1) as f64;
            y = sum_pool(&y, s.window());
            y.data.iter_mut().for_each(|v| *v /= area);
        }
        m = y;
    }
    let hw = (m.h * m.w) as f64;
    let avg: Vec<f64> = m.channel_sums().iter().map(|v| v / hw).collect();
    Ok(dense(&raw.fc_weight, &raw.fc_bias, &avg))
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

// ---------------------------------------------------------------------------
// Model container: magic, version, JSON header, little-endian f64 payload.

const MAGIC: &[u8; 8] = b"AHEMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub shape: NetworkShape,
    pub tensors: Vec<TensorEntry>,
}

fn tensors_of(raw: &RawLayerParams) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for (i, b) in raw.blocks.iter().enumerate() {
        let t = i + 1;
        let f = &b.filters;
        out.push((format!("block{t}.filters"), vec![f.c_out, f.c_in, f.kh, f.kw], &f.weights));
        out.push((format!("block{t}.bias"), vec![f.c_out], &b.bias));
        out.push((format!("block{t}.bn_mean"), vec![f.c_out], &b.bn_mean));
        out.push((format!("block{t}.bn_std"), vec![f.c_out], &b.bn_std));
        out.push((format!("block{t}.bn_gamma"), vec![f.c_out], &b.bn_gamma));
        out.push((format!("block{t}.bn_beta"), vec![f.c_out], &b.bn_beta));
        out.push((format!("block{t}.act"), vec![3], &b.act));
    }
    out.push(("fc.weight".into(), vec![raw.shape.classes, raw.shape.fc_inputs()], &raw.fc_weight));
    out.push(("fc.bias".into(), vec![raw.shape.classes], &raw.fc_bias));
    out
}

fn le_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn model_header(raw: &RawLayerParams) -> ModelHeader {
    let mut offset = 0;
    let tensors = tensors_of(raw)
        .into_iter()
        .map(|(name, dims, data)| {
            let e = TensorEntry {
                name,
                dims,
                offset,
                len: data.len(),
                sha256: hex::encode(Sha256::digest(le_bytes(data))),
            };
            offset += data.len();
            e
        })
        .collect();
    ModelHeader { version: VERSION, shape: raw.shape, tensors }
}

pub fn write_model<W: Write>(raw: &RawLayerParams, mut out: W) -> Result<(), ModelError> {
    raw.validate()?;
    let header = serde_json::to_vec(&model_header(raw)).map_err(|e| ModelError::Format(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, _, data) in tensors_of(raw) {
        out.write_all(&le_bytes(data))?;
    }
    Ok(())
}

pub fn read_model_header<R: Read>(input: &mut R) -> Result<ModelHeader, ModelError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    serde_json::from_slice(&header).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn read_model<R: Read>(mut input: R) -> Result<RawLayerParams, ModelError> {
    let header = read_model_header(&mut input)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let get = |name: &str| -> Result<Vec<f64>, ModelError> {
        let e = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
        let data = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| ModelError::Format(format!("truncated tensor {name}")))?
            .to_vec();
        if hex::encode(Sha256::digest(le_bytes(&data))) != e.sha256 {
            return Err(ModelError::Format(format!("digest mismatch in {name}")));
        }
        Ok(data)
    };
    let s = header.shape;
    s.validate()?;
    let (kh, kw) = s.kernel();
    let mut blocks = Vec::new();
    for t in 1..=BLOCKS {
        let act = get(&format!("block{t}.act"))?;
        if act.len() != 3 {
            return Err(ModelError::Format("activation needs 3 coefficients".into()));
        }
        blocks.push(RawBlock {
            filters: ConvFilters {
                c_out: s.out_channels(t),
                c_in: s.in_channels(t),
                kh,
                kw,
                weights: get(&format!("block{t}.filters"))?,
            },
            bias: get(&format!("block{t}.bias"))?,
            bn_mean: get(&format!("block{t}.bn_mean"))?,
            bn_std: get(&format!("block{t}.bn_std"))?,
            bn_gamma: get(&format!("block{t}.bn_gamma"))?,
            bn_beta: get(&format!("block{t}.bn_beta"))?,
            act: [act[0], act[1], act[2]],
        });
    }
    let raw = RawLayerParams { shape: s, blocks, fc_weight: get("fc.weight")?, fc_bias: get("fc.bias")? };
    raw.validate()?;
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_shape(dim: Dim) -> NetworkShape {
        NetworkShape::new(dim, 6, 5, [2, 4, 8], 3).unwrap()
    }

    fn random_input(shape: &NetworkShape, rng: &mut ChaCha8Rng) -> InputTensor {
        let mut x = InputTensor::zeros(shape.frames, shape.joints);
        for c in 0..2 {
            for row in x.channels[c].iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(0.0..1.0);
                }
            }
        }
        x
    }

    fn identity_block(co: usize, ci: usize, kh: usize, kw: usize) -> RawBlock {
        RawBlock {
            filters: ConvFilters::zeros(co, ci, kh, kw),
            bias: vec![0.0; co],
            bn_mean: vec![0.0; co],
            bn_std: vec![1.0; co],
            bn_gamma: vec![1.0; co],
            bn_beta: vec![0.0; co],
            act: [0.0, 1.0, 0.0],
        }
    }

    #[test]
    fn collapse_examples() {
        let shape = tiny_shape(Dim::Two);
        let mut raw = RawLayerParams::random(shape, &mut ChaCha8Rng::seed_from_u64(1));
        // Block 3 has no pooling after it, so its area is 1.
        let b = &mut raw.blocks[2];
        for n in 0..b.bias.len() {
            b.bias[n] = 0.0;
            b.bn_mean[n] = 0.0;
            b.bn_std[n] = 1.0;
            b.bn_gamma[n] = 1.0;
            b.bn_beta[n] = 0.0;
        }
        b.act = [0.0, 1.0, 0.0];
        let c = collapse_layers(&raw).unwrap();
        assert!(c.blocks[2].coeffs.iter().all(|k| *k == [0.0, 1.0, 0.0]));

        // Block 1 pools over a 2x2 window.
        let b = &mut raw.blocks[0];
        b.bn_gamma[0] = 2.0;
        b.bn_std[0] = 1.0;
        b.bn_beta[0] = 0.0;
        b.bn_mean[0] = 0.0;
        b.bias[0] = 1.0;
        b.act = [0.0, 0.0, 1.0];
        let c = collapse_layers(&raw).unwrap();
        assert_eq!(c.blocks[0].coeffs[0], [1.0, 2.0, 1.0]);
    }

    #[test]
    fn collapsed_polynomial_matches_composition() {
        let shape = tiny_shape(Dim::Two);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = RawLayerParams::random(shape, &mut rng);
        let c = collapse_layers(&raw).unwrap();
        for (t, (rb, cb)) in raw.blocks.iter().zip(&c.blocks).enumerate() {
            let area = shape.pool_area(t + 1) as f64;
            for n in 0..rb.bias.len() {
                for _ in 0..100 {
                    let x: f64 = rng.gen_range(-3.0..3.0);
                    let z = rb.bn_gamma[n] * ((x + rb.bias[n]) - rb.bn_mean[n]) / rb.bn_std[n] + rb.bn_beta[n];
                    let want = (rb.act[0] + rb.act[1] * z + rb.act[2] * z * z) / area;
                    let [c0, c1, c2] = cb.coeffs[n];
                    let got = c0 + c1 * x + c2 * x * x;
                    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn collapsed_equals_uncollapsed_forward() {
        for seed in 0..100 {
            let dim = if seed % 2 == 0 { Dim::Two } else { Dim::One };
            let shape = tiny_shape(dim);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = RawLayerParams::random(shape, &mut rng);
            let x = random_input(&shape, &mut rng);
            let a = infer_clear(&collapse_layers(&raw).unwrap(), &x).unwrap();
            let b = forward_raw(&raw, &x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-10, "seed {seed}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let shape = tiny_shape(Dim::Two);
        let mut raw = RawLayerParams::random(shape, &mut ChaCha8Rng::seed_from_u64(3));
        for b in raw.blocks.iter_mut() {
            b.filters.weights.iter_mut().for_each(|w| *w = 0.0);
            b.act = [0.0, 1.0, 1.0];
            b.bias.iter_mut().for_each(|w| *w = 0.0);
            b.bn_mean.iter_mut().for_each(|w| *w = 0.0);
            b.bn_beta.iter_mut().for_each(|w| *w = 0.0);
        }
        raw.fc_weight.iter_mut().for_each(|w| *w = 0.0);
        raw.fc_bias.iter_mut().for_each(|w| *w = 0.0);
        let x = random_input(&shape, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(infer_clear(&collapse_layers(&raw).unwrap(), &x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_returns_channel_sums() {
        // Delta kernels route input channel 0 to output channel 0 at every block.
        let shape = NetworkShape::new(Dim::Two, 4, 4, [2, 4, 8], 8).unwrap();
        let mut blocks = Vec::new();
        for t in 1..=3 {
            let (co, ci) = (shape.out_channels(t), shape.in_channels(t));
            let mut b = identity_block(co, ci, 3, 3);
            for c in 0..ci.min(co) {
                b.filters.set(c, c, 1, 1, 1.0);
            }
            blocks.push(b);
        }
        let mut fc = vec![0.0; 8 * 8];
        for i in 0..8 {
            fc[i * 8 + i] = 1.0;
        }
        let raw = RawLayerParams { shape, blocks, fc_weight: fc, fc_bias: vec![0.0; 8] };
        let c = collapse_layers(&raw).unwrap();
        let x = random_input(&shape, &mut ChaCha8Rng::seed_from_u64(9));
        let logits = infer_clear(&c, &x).unwrap();
        // Two average pools then a 1x1 global average: the result is the mean of
        // each 4x4 channel (the folded divisors are exact powers of two).
        for ch in 0..2 {
            let sum: f64 = x.flat_channel(ch).iter().sum();
            assert!((logits[ch] - sum / 16.0).abs() < 1e-12);
        }
        assert!(logits[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let shape = tiny_shape(Dim::One);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = RawLayerParams::random(shape, &mut rng);
        let mut shifted = raw.clone();
        shifted.fc_bias.iter_mut().for_each(|b| *b += 0.75);
        let x = random_input(&shape, &mut rng);
        let a = infer_clear(&collapse_layers(&raw).unwrap(), &x).unwrap();
        let b = infer_clear(&collapse_layers(&shifted).unwrap(), &x).unwrap();
        assert_eq!(argmax(&a), argmax(&b));
        assert_eq!(a, infer_clear(&collapse_layers(&raw).unwrap(), &x).unwrap());
    }

    #[test]
    fn validation_errors() {
        assert!(NetworkShape::new(Dim::Two, 32, 15, [64, 128, 200], 10).is_err());
        let shape = tiny_shape(Dim::Two);
        let mut raw = RawLayerParams::random(shape, &mut ChaCha8Rng::seed_from_u64(2));
        raw.blocks[1].bn_std[3] = 0.0;
        assert!(matches!(collapse_layers(&raw), Err(ModelError::Sigma { block: 2, channel: 3 })));
        let mut raw = RawLayerParams::random(shape, &mut ChaCha8Rng::seed_from_u64(2));
        raw.fc_bias.pop();
        assert!(matches!(collapse_layers(&raw), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn preset_map_sizes() {
        let s = NetworkShape::preset("2d-w128").unwrap();
        assert_eq!([s.conv_map(1), s.conv_map(2), s.conv_map(3)], [(32, 15), (16, 7), (8, 3)]);
        let s = NetworkShape::preset("1d-w64").unwrap();
        assert_eq!([s.conv_map(1), s.conv_map(2), s.conv_map(3)], [(1, 480), (1, 240), (1, 120)]);
        assert_eq!(s.widths, [64, 128, 256]);
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let shape = tiny_shape(Dim::Two);
        let raw = RawLayerParams::random(shape, &mut ChaCha8Rng::seed_from_u64(5));
        let mut buf = Vec::new();
        write_model(&raw, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, raw);
        let n = buf.len();
        buf[n - 1] ^= 1;
        assert!(matches!(read_model(buf.as_slice()), Err(ModelError::Format(_))));
    }
}
