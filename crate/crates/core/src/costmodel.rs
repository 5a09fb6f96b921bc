//! Closed-form operation counts per layer and a comparator against measured counters.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::{OpCount, OpCountDelta};
use crate::convolution::{ConvPlan, Strategy};
use crate::fastpath::merge::MergeSpec;
use crate::fastpath::CompiledPipeline;
use crate::layout::{Dim, PackedLayout};

fn ceil_log2(n: usize) -> u64 {
    n.next_power_of_two().trailing_zeros() as u64
}

/// Counts of one convolution split into merge pre-processing, core and post-processing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCost {
    pub pre: OpCount,
    pub core: OpCount,
    pub post: OpCount,
}

impl ConvCost {
    pub fn total(&self) -> OpCount {
        self.pre + self.core + self.post
    }
}

/// Closed-form counts for `plan` evaluated with `strategy`, merged according to `spec`.
///
/// `f` is the tap count, `l_I` the extra rotations per input, `n_P = 1` without a spec.
/// Assumes the `f * l_I` tap and block rotation amounts are distinct modulo the slot count.
pub fn predict(plan: &ConvPlan, spec: Option<&MergeSpec>, strategy: Strategy) -> ConvCost {
    let n_p = spec.map_or(1, |s| s.load) as u64;
    let n_i = plan.n_in as u64;
    let m = n_i / n_p;
    let n_o = plan.n_out as u64;
    let f = plan.taps.len() as u64;
    let l_i = plan.extra as u64;
    // Rotations applied to each merged input in one hoisted group, and to each output's partial sums.
    let (hoisted, partial) = match strategy {
        Strategy::Full => (f * l_i - 1, 0),
        Strategy::Giant => (l_i - 1, f - 1),
        Strategy::Baby => (f - 1, l_i - 1),
    };
    let core = OpCount {
        rot: n_o * partial,
        hoisted_rot_groups: if hoisted > 0 { m } else { 0 },
        hoisted_rot_total: m * hoisted,
        mult: 0,
        mult_plain: n_o * f * l_i * m,
        rescale: n_o,
        add: n_o * (f * l_i * m - 1),
    };
    let (pre, post) = match spec {
        None => (OpCount::default(), OpCount::default()),
        Some(_) => {
            let steps = ceil_log2(n_p as usize);
            (
                OpCount { rot: (n_p - 1) * m, mult_plain: n_i, rescale: m, add: (n_p - 1) * m, ..OpCount::default() },
                OpCount { rot: n_o * steps, add: n_o * steps, ..OpCount::default() },
            )
        }
    };
    ConvCost { pre, core, post }
}

/// Rotations (equal to additions) of a rotate-and-sum over `n` entries.
pub fn rotate_sum_cost(n: usize) -> u64 {
    if n <= 1 {
        return 0;
    }
    (usize::BITS - 1 - n.leading_zeros()) as u64 + n.count_ones() as u64 - 1
}

/// Per ciphertext: one square, two plaintext products, two rescales, two additions.
pub fn activation_cost(cts: usize) -> OpCount {
    let n = cts as u64;
    OpCount { mult: n, mult_plain: 2 * n, rescale: 2 * n, add: 2 * n, ..OpCount::default() }
}

/// One rotate-add per pooled axis and ciphertext.
pub fn pool_cost(cts: usize, dim: Dim) -> OpCount {
    let axes = match dim {
        Dim::One => 1,
        Dim::Two => 2,
    };
    let n = cts as u64 * axes;
    OpCount { rot: n, add: n, ..OpCount::default() }
}

pub fn global_pool_cost(cts: usize, layout: &PackedLayout) -> OpCount {
    let n = cts as u64 * (rotate_sum_cost(layout.map_w) + rotate_sum_cost(layout.map_h));
    OpCount { rot: n, add: n, ..OpCount::default() }
}

/// Diagonal FC over `cts` inputs with `c` diagonals: `c - 1` nonzero rotations, bias addition, one rescale.
pub fn fc_cost(cts: usize, c: usize) -> OpCount {
    let (n, c) = (cts as u64, c as u64);
    OpCount { rot: c - 1, mult_plain: c * n, rescale: 1, add: (n - 1) * c + (c - 1) + 1, ..OpCount::default() }
}

/// Predicted counts of one pipeline step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPrediction {
    pub label: String,
    pub counts: OpCount,
    /// Layers outside the convolution core.
    pub extended: bool,
}

/// Per-label predictions in evaluation order, using the compiled strategy.
pub fn predict_pipeline(compiled: &CompiledPipeline) -> Vec<LayerPrediction> {
    predict_pipeline_as(compiled, compiled.strategy)
}

/// Like [`predict_pipeline`] but assuming the convolutions run `strategy`.
pub fn predict_pipeline_as(compiled: &CompiledPipeline, strategy: Strategy) -> Vec<LayerPrediction> {
    let mut out = Vec::new();
    let mut push = |label: String, counts: OpCount, extended: bool| out.push(LayerPrediction { label, counts, extended });
    for b in &compiled.blocks {
        let t = b.t;
        let cost = predict(&b.conv, b.merge.as_ref(), strategy);
        if b.merge.is_some() {
            push(format!("pre{t}"), cost.pre, false);
        }
        push(format!("conv{t}"), cost.core, false);
        if b.merge.is_some() {
            push(format!("post{t}"), cost.post, false);
        }
        push(format!("act{t}"), activation_cost(b.outputs()), true);
        if b.pooled {
            push(format!("pool{t}"), pool_cost(b.outputs(), compiled.shape.dim), true);
        }
    }
    let fc = &compiled.fc;
    push("gpool".into(), global_pool_cost(fc.inputs, &fc.layout), true);
    push("fc".into(), fc_cost(fc.inputs, fc.layout.channels_per_ct), true);
    out
}

/// `(layer, n_I, n_O, n_P)` for every convolution.
pub fn packing_params(compiled: &CompiledPipeline) -> Vec<(usize, usize, usize, usize)> {
    compiled.blocks.iter().map(|b| (b.t, b.conv.n_in, b.conv.n_out, b.conv.load)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub extended: bool,
    pub predicted: OpCount,
    pub measured: OpCount,
    pub delta: OpCountDelta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub predicted: OpCount,
    pub measured: OpCount,
    pub delta: OpCountDelta,
}

impl CostReport {
    /// Joins predictions with measured per-label counters; labels present on only one side count as zero on the other.
    pub fn new(predicted: &[LayerPrediction], measured: &IndexMap<String, OpCount>) -> CostReport {
        let mut rows: Vec<CostRow> = predicted
            .iter()
            .map(|p| {
                let m = measured.get(&p.label).copied().unwrap_or_default();
                CostRow { label: p.label.clone(), extended: p.extended, predicted: p.counts, measured: m, delta: m.delta(&p.counts) }
            })
            .collect();
        for (label, &m) in measured {
            if !predicted.iter().any(|p| &p.label == label) {
                rows.push(CostRow {
                    label: label.clone(),
                    extended: true,
                    predicted: OpCount::default(),
                    measured: m,
                    delta: m.delta(&OpCount::default()),
                });
            }
        }
        let predicted: OpCount = rows.iter().map(|r| r.predicted).sum();
        let measured: OpCount = rows.iter().map(|r| r.measured).sum();
        CostReport { rows, predicted, measured, delta: measured.delta(&predicted) }
    }

    pub fn row(&self, label: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width table: one line per layer plus a total, deltas shown as `measured-predicted`.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8} {:>8} {:>6} {:>9} {:>8} {:>8}  delta",
            "layer", "rot", "h.groups", "h.total", "mult", "multplain", "rescale", "add"
        );
        let line = |s: &mut String, label: &str, c: &OpCount, d: &OpCountDelta, ext: bool| {
            let flag = if d.is_zero() { "ok".to_string() } else { format!("{d:?}") };
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>8} {:>8} {:>6} {:>9} {:>8} {:>8}  {}{}",
                label,
                c.rot,
                c.hoisted_rot_groups,
                c.hoisted_rot_total,
                c.mult,
                c.mult_plain,
                c.rescale,
                c.add,
                flag,
                if ext { " (extended)" } else { "" }
            );
        };
        for r in &self.rows {
            line(&mut s, &r.label, &r.measured, &r.delta, r.extended);
        }
        line(&mut s, "total", &self.measured, &self.delta, false);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Layers whose measured counts differ from the prediction.
    pub flagged: Vec<(String, OpCountDelta)>,
}

pub fn compare(report: &CostReport) -> Verdict {
    let flagged: Vec<_> = report.rows.iter().filter(|r| !r.delta.is_zero()).map(|r| (r.label.clone(), r.delta)).collect();
    Verdict { pass: flagged.is_empty(), flagged }
}
