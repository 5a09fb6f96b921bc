//! Raw joint coordinates to the normalized `T x J x 2` input tensor.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("sequence has {have} frames, need at least {need}")]
    TooFewFrames { have: usize, need: usize },
    #[error("frame {frame} has {have} joints, expected {expected}")]
    JointCount { frame: usize, have: usize, expected: usize },
    #[error("non-finite coordinate in frame {0}")]
    NonFinite(usize),
    #[error("negative threshold")]
    NegativeThreshold,
    #[error("expected {expected} frames, got {have}")]
    FrameCount { have: usize, expected: usize },
    #[error("empty sequence")]
    Empty,
}

/// Ordered frames of `(x, y)` joint coordinates; `0` marks an undetected joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointSequence {
    pub frames: Vec<Vec<[f64; 2]>>,
}

impl JointSequence {
    pub fn new(frames: Vec<Vec<[f64; 2]>>) -> Result<Self, IngestError> {
        let seq = JointSequence { frames };
        seq.validate()?;
        Ok(seq)
    }

    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let j = self.joints();
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != j {
                return Err(IngestError::JointCount { frame: t, have: frame.len(), expected: j });
            }
            if frame.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(IngestError::NonFinite(t));
            }
        }
        Ok(())
    }
}

/// `T x J x 2` tensor; `channels[0]` holds x, `channels[1]` holds y, rows are frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTensor {
    pub frames: usize,
    pub joints: usize,
    pub channels: [Vec<Vec<f64>>; 2],
}

impl InputTensor {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        let plane = vec![vec![0.0; joints]; frames];
        InputTensor { frames, joints, channels: [plane.clone(), plane] }
    }

    /// Uniform values in `[0, 1)`.
    pub fn random<R: Rng>(frames: usize, joints: usize, rng: &mut R) -> Self {
        let mut plane = || (0..frames).map(|_| (0..joints).map(|_| rng.gen::<f64>()).collect()).collect();
        InputTensor { frames, joints, channels: [plane(), plane()] }
    }

    /// Row-major flattening of one channel.
    pub fn flat_channel(&self, c: usize) -> Vec<f64> {
        self.channels[c].iter().flatten().copied().collect()
    }

    pub fn is_well_formed(&self) -> bool {
        self.channels.iter().all(|ch| {
            ch.len() == self.frames && ch.iter().all(|row| row.len() == self.joints)
        })
    }
}

fn motion_score(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    total / a.len().max(1) as f64
}

/// Drops low-motion frames until `target` remain.
///
/// A frame's score is the mean joint distance to its current predecessor; the
/// first frame has no predecessor and is never dropped. Frames scoring below
/// `threshold` go first, earliest first. When none qualifies, the lowest-score
/// frame is dropped (earliest index on ties).
pub fn select_frames(
    seq: &JointSequence,
    target: usize,
    threshold: f64,
) -> Result<JointSequence, IngestError> {
    seq.validate()?;
    if threshold < 0.0 || threshold.is_nan() {
        return Err(IngestError::NegativeThreshold);
    }
    if seq.len() < target {
        return Err(IngestError::TooFewFrames { have: seq.len(), need: target });
    }
    let mut kept: Vec<usize> = (0..seq.len()).collect();
    while kept.len() > target {
        let scores: Vec<(usize, f64)> = (1..kept.len())
            .map(|p| (p, motion_score(&seq.frames[kept[p]], &seq.frames[kept[p - 1]])))
            .collect();
        let victim = scores
            .iter()
            .find(|(_, s)| *s < threshold)
            .or_else(|| {
                scores.iter().fold(None, |best: Option<&(usize, f64)>, cur| match best {
                    Some(b) if b.1 <= cur.1 => Some(b),
                    _ => Some(cur),
                })
            })
            .map(|(p, _)| *p);
        match victim {
            Some(p) => {
                kept.remove(p);
            }
            // Only the first frame is left to drop.
            None => {
                kept.remove(0);
            }
        }
    }
    Ok(JointSequence { frames: kept.into_iter().map(|i| seq.frames[i].clone()).collect() })
}

/// Per-frame, per-axis min-max scaling over all joints; constant axes become 0.
pub fn normalize(seq: &JointSequence) -> Result<JointSequence, IngestError> {
    seq.validate()?;
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            let mut out = frame.clone();
            for axis in 0..2 {
                let lo = frame.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
                let hi = frame.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                for (o, p) in out.iter_mut().zip(frame) {
                    o[axis] = if span > 0.0 { ((p[axis] - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
                }
            }
            out
        })
        .collect();
    Ok(JointSequence { frames })
}

pub fn assemble(
    seq: &JointSequence,
    frames: usize,
    joints: usize,
) -> Result<InputTensor, IngestError> {
    seq.validate()?;
    if seq.len() != frames {
        return Err(IngestError::FrameCount { have: seq.len(), expected: frames });
    }
    if seq.joints() != joints && frames > 0 {
        return Err(IngestError::JointCount { frame: 0, have: seq.joints(), expected: joints });
    }
    let plane = |axis: usize| -> Vec<Vec<f64>> {
        seq.frames.iter().map(|f| f.iter().map(|p| p[axis]).collect()).collect()
    };
    Ok(InputTensor { frames, joints, channels: [plane(0), plane(1)] })
}

/// Full pre-processing: selection, normalization, assembly.
pub fn preprocess(
    seq: &JointSequence,
    frames: usize,
    threshold: f64,
) -> Result<InputTensor, IngestError> {
    if seq.is_empty() {
        return Err(IngestError::Empty);
    }
    let picked = select_frames(seq, frames, threshold)?;
    let normed = normalize(&picked)?;
    assemble(&normed, frames, seq.joints())
}
