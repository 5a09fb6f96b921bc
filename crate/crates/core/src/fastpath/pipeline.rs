//! Compiled HEAR / Fast-HEAR pipelines: per-layer plans, the level and scale
//! schedule, model plaintexts and the evaluation loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool, coefficient_slots, fc, fc_bias_slots, fc_slots, finish_activation, global_pool, logit_slots,
    rotate_sum_amounts, square_all,
};
use super::merge::{build_merge_spec, check_plan, postmerge, premerge, MergeSpec};
use super::FastError;
use crate::backend::{
    scales_match, Ciphertext, Ct, Evaluator, ModulusLadder, PlainVector, Pt, Simulator, SlotBackend, SlotData, SlotScalar,
};
use crate::convolution::{build_weight_plaintexts, hconv, ConvPlan, LazyWeights, Strategy, WeightPlaintexts};
use crate::layout::{pack_input, Dim, PackedLayout};
use crate::model::{CollapsedParams, NetworkShape, BLOCKS};
use crate::ingest::InputTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hear,
    Fast,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Hear, Mode::Fast];

    /// Levels consumed by the whole network.
    pub fn top_level(self) -> usize {
        match self {
            Mode::Hear => 10,
            Mode::Fast => 12,
        }
    }

    /// Ladder with the nominal prime sizes of the mode's parameter set.
    pub fn ladder(self) -> ModulusLadder {
        match self {
            Mode::Hear => ModulusLadder::hear(),
            Mode::Fast => ModulusLadder::fast_hear(),
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hear" => Ok(Mode::Hear),
            "fast" | "fast-hear" => Ok(Mode::Fast),
            other => Err(format!("unknown mode {other:?} (hear|fast)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Hear => "hear",
            Mode::Fast => "fast",
        })
    }
}

/// Expected level and scale of every ciphertext after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub label: String,
    pub level: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSchedule {
    pub mode: Mode,
    pub top: usize,
    pub steps: Vec<StepSpec>,
}

impl PipelineSchedule {
    pub fn step(&self, label: &str) -> Option<&StepSpec> {
        self.steps.iter().find(|s| s.label == label)
    }

    pub fn levels(&self) -> Vec<(String, usize)> {
        self.steps.iter().map(|s| (s.label.clone(), s.level)).collect()
    }

    /// Rescales the schedule implies for `shape`'s ciphertext counts.
    pub fn rescale_steps(&self) -> usize {
        self.steps.windows(2).filter(|w| w[1].level < w[0].level).count()
    }
}

/// Scales used by the activation of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActScales {
    /// Level of the conv output entering the activation.
    pub level: usize,
    pub input: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub t: usize,
    pub conv: ConvPlan,
    /// Fast mode only: merge performed before the convolution.
    pub merge: Option<MergeSpec>,
    /// Level of the ciphertexts entering the block.
    pub in_level: usize,
    pub mask_scale: f64,
    /// Level at which the weights are applied.
    pub conv_level: usize,
    pub weight_scale: f64,
    pub act: ActScales,
    /// Layout after the block's pooling (the conv layout for the last block).
    pub out_layout: PackedLayout,
    pub pooled: bool,
}

impl BlockPlan {
    /// Ciphertexts entering the block before any merge.
    pub fn inputs(&self) -> usize {
        self.conv.n_in
    }

    pub fn outputs(&self) -> usize {
        self.conv.n_out
    }

    /// Layout of the conv output, which is also what pooling reads.
    pub fn conv_layout(&self) -> PackedLayout {
        self.conv.layout.unreplicated()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcPlan {
    pub level: usize,
    pub weight_scale: f64,
    pub bias_scale: f64,
    pub layout: PackedLayout,
    pub inputs: usize,
    pub classes: usize,
}

/// Everything about an inference that does not depend on the model values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPipeline {
    pub shape: NetworkShape,
    pub mode: Mode,
    pub strategy: Strategy,
    pub slots: usize,
    pub ladder: ModulusLadder,
    pub input_scale: f64,
    pub input_layout: PackedLayout,
    pub blocks: Vec<BlockPlan>,
    pub fc: FcPlan,
    pub schedule: PipelineSchedule,
}

/// Count of plaintexts of one kind at one encoding level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub kind: String,
    pub level: usize,
    pub count: usize,
}

impl CompiledPipeline {
    /// Plans every layer and walks the level/scale ledger. The input is
    /// encrypted at the top level with scale `ladder.prime(top)`.
    pub fn compile(
        shape: &NetworkShape,
        mode: Mode,
        strategy: Strategy,
        slots: usize,
        ladder: ModulusLadder,
    ) -> Result<CompiledPipeline, FastError> {
        shape.validate()?;
        let top = mode.top_level();
        if ladder.top() != top {
            return Err(FastError::Config(format!("{mode} needs a ladder with top level {top}, got {}", ladder.top())));
        }
        let p = |l: usize| ladder.prime(l);
        let input_layout = PackedLayout::input(shape.dim, shape.frames, shape.joints, slots)?;
        if shape.classes > input_layout.channels_per_ct {
            return Err(FastError::Config(format!(
                "{} classes exceed {} channels per ciphertext",
                shape.classes, input_layout.channels_per_ct
            )));
        }
        let (kh, kw) = shape.kernel();
        let input_scale = p(top);
        let mut steps = vec![StepSpec { label: "input".into(), level: top, scale: input_scale }];
        let (mut level, mut scale) = (top, input_scale);
        let mut layout = input_layout;
        let mut n_cts = 1;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for t in 1..=BLOCKS {
            let (c_in, c_out) = (shape.in_channels(t), shape.out_channels(t));
            let in_level = level;
            let mut mask_scale = 0.0;
            let merge = if mode == Mode::Fast && t > 1 {
                let spec = build_merge_spec(&layout, n_cts, t)?;
                mask_scale = p(level);
                scale = scale * mask_scale / p(level);
                level -= 1;
                steps.push(StepSpec { label: format!("pre{t}"), level, scale });
                Some(spec)
            } else {
                None
            };
            let subs = merge.as_ref().map(|m| m.subs.clone()).unwrap_or_default();
            let conv = ConvPlan::new(t, (c_out, c_in, kh, kw), &layout, strategy, subs)?;
            if let Some(m) = &merge {
                check_plan(m, &conv)?;
            }
            let conv_level = level;
            if conv_level < 4 {
                return Err(FastError::Config(format!("block {t} starts at level {conv_level}, needs 4")));
            }
            let weight_scale = p(level);
            scale = scale * weight_scale / p(level);
            level -= 1;
            steps.push(StepSpec { label: format!("conv{t}"), level, scale });
            if merge.is_some() {
                steps.push(StepSpec { label: format!("post{t}"), level, scale });
            }
            let input = scale;
            let sq = scale * scale / p(level);
            let c2 = p(level - 1);
            let c1 = sq * c2 / scale;
            let act = ActScales { level, input, c0: sq * c2 / p(level - 1), c1, c2 };
            level -= 1;
            steps.push(StepSpec { label: format!("act{t}.sqr"), level, scale: sq });
            scale = act.c0;
            level -= 1;
            steps.push(StepSpec { label: format!("act{t}.res"), level, scale });
            let conv_layout = layout.unreplicated();
            let pooled = t < BLOCKS;
            layout = if pooled { conv_layout.pooled()? } else { conv_layout };
            if pooled {
                steps.push(StepSpec { label: format!("pool{t}"), level, scale });
            }
            n_cts = conv.n_out;
            blocks.push(BlockPlan {
                t,
                conv,
                merge,
                in_level,
                mask_scale,
                conv_level,
                weight_scale,
                act,
                out_layout: layout,
                pooled,
            });
        }
        steps.push(StepSpec { label: "gpool".into(), level, scale });
        if level != 1 {
            return Err(FastError::Config(format!("FC would start at level {level}, expected 1")));
        }
        let weight_scale = p(level);
        let fc_scale = scale * weight_scale / p(level);
        let fc = FcPlan {
            level,
            weight_scale,
            bias_scale: fc_scale,
            layout,
            inputs: n_cts,
            classes: shape.classes,
        };
        steps.push(StepSpec { label: "fc".into(), level: 0, scale: fc_scale });
        Ok(CompiledPipeline {
            shape: *shape,
            mode,
            strategy,
            slots,
            ladder,
            input_scale,
            input_layout,
            blocks,
            fc,
            schedule: PipelineSchedule { mode, top, steps },
        })
    }

    /// Every rotation amount the pipeline performs, normalized to `0..slots`,
    /// with the highest level it is applied at.
    pub fn rotation_set(&self) -> BTreeMap<usize, usize> {
        let mut set = BTreeMap::new();
        let n = self.slots as isize;
        let mut add = |amounts: &[isize], level: usize| {
            for &a in amounts {
                let k = a.rem_euclid(n) as usize;
                if k != 0 {
                    let e = set.entry(k).or_insert(level);
                    *e = (*e).max(level);
                }
            }
        };
        for b in &self.blocks {
            if let Some(m) = &b.merge {
                let pre: Vec<isize> = m.pre.iter().map(|&mu| -mu).collect();
                add(&pre, b.in_level);
                add(&m.post, b.conv_level - 1);
            }
            let (hoisted, partial) = b.conv.rotation_amounts();
            add(&hoisted, b.conv_level);
            add(&partial, b.conv_level);
            if b.pooled {
                let lay = b.conv_layout();
                let mut amounts = vec![lay.col_step() as isize];
                if lay.dim == Dim::Two {
                    amounts.push(lay.row_step() as isize);
                }
                add(&amounts, b.act.level - 2);
            }
        }
        let lay = &self.fc.layout;
        for (count, step) in [(lay.map_w, lay.col_step()), (lay.map_h, lay.row_step())] {
            let (d, c) = rotate_sum_amounts(count, step);
            add(&d, self.fc.level);
            add(&c, self.fc.level);
        }
        let diag: Vec<isize> = (1..lay.channels_per_ct).map(|l| (lay.dist * l) as isize).collect();
        add(&diag, self.fc.level);
        set
    }

    /// Plaintexts the model needs, grouped by kind and encoding level.
    pub fn plaintext_inventory(&self, level_aware: bool) -> Vec<InventoryEntry> {
        let top = self.schedule.top;
        let lv = |l: usize| if level_aware { l } else { top };
        let mut inv = Vec::new();
        for b in &self.blocks {
            let t = b.t;
            if b.merge.is_some() {
                inv.push(InventoryEntry { kind: format!("mask{t}"), level: lv(b.in_level), count: 1 });
            }
            let [nj, ni, nk, nl] = b.conv.table_dims();
            inv.push(InventoryEntry { kind: format!("conv{t}"), level: lv(b.conv_level), count: nj * ni * nk * nl });
            let n = b.outputs();
            inv.push(InventoryEntry { kind: format!("act{t}.c2"), level: lv(b.act.level - 1), count: n });
            inv.push(InventoryEntry { kind: format!("act{t}.c1"), level: lv(b.act.level - 1), count: n });
            inv.push(InventoryEntry { kind: format!("act{t}.c0"), level: lv(b.act.level - 2), count: n });
        }
        let c = self.fc.layout.channels_per_ct;
        inv.push(InventoryEntry { kind: "fc".into(), level: lv(self.fc.level), count: self.fc.inputs * c });
        inv.push(InventoryEntry { kind: "fc.bias".into(), level: lv(0), count: 1 });
        inv
    }

    /// Bytes of the CKKS encodings in the inventory: `(level + 1)` limbs of `N` words each.
    pub fn storage_bytes(&self, level_aware: bool) -> u64 {
        let ring = 2 * self.slots as u64;
        self.plaintext_inventory(level_aware)
            .iter()
            .map(|e| e.count as u64 * (e.level as u64 + 1) * ring * 8)
            .sum()
    }

    /// Packs an input tensor into slot values for encryption at the top level.
    pub fn pack(&self, x: &InputTensor) -> Result<Vec<f64>, FastError> {
        let (v, layout) = pack_input(x, self.slots, self.shape.dim)?;
        if layout != self.input_layout {
            return Err(FastError::Config("input layout differs from the compiled one".into()));
        }
        Ok(v)
    }

    pub fn encrypt_input<B: SlotBackend>(&self, ev: &Evaluator<B>, x: &InputTensor) -> Result<Ct<B>, FastError> {
        Ok(ev.encrypt(&self.pack(x)?, self.schedule.top, self.input_scale)?)
    }

    /// Reads the logits from a decrypted output vector.
    pub fn logits(&self, decrypted: &[f64]) -> Vec<f64> {
        logit_slots(self.fc.classes, &self.fc.layout).into_iter().map(|s| decrypted[s]).collect()
    }
}

/// Model-dependent plaintexts other than conv weights.
#[derive(Debug, Clone)]
pub struct ModelPlaintexts<P> {
    pub masks: Vec<Option<P>>,
    /// Per block, per output ciphertext: `[c0, c1, c2]`.
    pub coeffs: Vec<Vec<[P; 3]>>,
    /// Index `i * c + l`.
    pub fc: Vec<P>,
    pub fc_bias: P,
}

impl<P> ModelPlaintexts<P> {
    pub fn try_map<Q, E>(&self, f: impl Fn(&P) -> Result<Q, E>) -> Result<ModelPlaintexts<Q>, E> {
        Ok(ModelPlaintexts {
            masks: self.masks.iter().map(|m| m.as_ref().map(&f).transpose()).collect::<Result<_, _>>()?,
            coeffs: self
                .coeffs
                .iter()
                .map(|blk| blk.iter().map(|[a, b, c]| Ok([f(a)?, f(b)?, f(c)?])).collect::<Result<Vec<_>, E>>())
                .collect::<Result<_, _>>()?,
            fc: self.fc.iter().map(&f).collect::<Result<_, _>>()?,
            fc_bias: f(&self.fc_bias)?,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.iter().flatten().count() + 3 * self.coeffs.iter().map(Vec::len).sum::<usize>() + self.fc.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_params(params: &CollapsedParams, compiled: &CompiledPipeline) -> Result<(), FastError> {
    if params.shape != compiled.shape {
        return Err(FastError::Config("model shape differs from the compiled pipeline".into()));
    }
    Ok(())
}

/// Builds masks, activation coefficients and FC diagonals at their scheduled
/// levels, or at the top level when `level_aware` is off.
pub fn model_plaintexts(
    params: &CollapsedParams,
    compiled: &CompiledPipeline,
    level_aware: bool,
) -> Result<ModelPlaintexts<PlainVector>, FastError> {
    check_params(params, compiled)?;
    let top = compiled.schedule.top;
    let lv = |l: usize| if level_aware { l } else { top };
    let pv = |data: SlotData, level: usize, scale: f64| PlainVector { data, level: lv(level), scale };
    let masks = compiled
        .blocks
        .iter()
        .map(|b| b.merge.as_ref().map(|m| pv(m.mask(), b.in_level, b.mask_scale)))
        .collect();
    let coeffs = compiled
        .blocks
        .iter()
        .zip(&params.blocks)
        .map(|(b, cb)| {
            let a = &b.act;
            coefficient_slots(&cb.coeffs, &b.conv_layout())
                .into_iter()
                .map(|[c0, c1, c2]| [pv(c0, a.level - 2, a.c0), pv(c1, a.level - 1, a.c1), pv(c2, a.level - 1, a.c2)])
                .collect()
        })
        .collect();
    let f = &compiled.fc;
    let d_in = compiled.shape.fc_inputs();
    let fc = fc_slots(&params.fc_weight, f.classes, d_in, &f.layout)
        .into_iter()
        .map(|d| pv(d, f.level, f.weight_scale))
        .collect();
    let fc_bias = pv(fc_bias_slots(&params.fc_bias, &f.layout), 0, f.bias_scale);
    Ok(ModelPlaintexts { masks, coeffs, fc, fc_bias })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub level_aware: bool,
    /// Keep every conv weight plaintext in memory instead of encoding at use.
    pub eager_weights: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { level_aware: true, eager_weights: false }
    }
}

/// A model encoded for one backend and one compiled pipeline.
pub struct EncodedModel<'a, B: SlotBackend> {
    pub params: &'a CollapsedParams,
    pub compiled: &'a CompiledPipeline,
    pub plain: ModelPlaintexts<Pt<B>>,
    pub weights: Option<Vec<WeightPlaintexts<Pt<B>>>>,
    pub options: EncodeOptions,
}

impl<'a, B: SlotBackend> EncodedModel<'a, B> {
    pub fn new(
        ev: &Evaluator<B>,
        params: &'a CollapsedParams,
        compiled: &'a CompiledPipeline,
        options: EncodeOptions,
    ) -> Result<Self, FastError> {
        let plain = model_plaintexts(params, compiled, options.level_aware)?.try_map(|p| ev.encode(p))?;
        let weights = if options.eager_weights {
            Some(
                compiled
                    .blocks
                    .iter()
                    .zip(&params.blocks)
                    .map(|(b, cb)| {
                        let level = weight_level(compiled, b, options.level_aware);
                        build_weight_plaintexts(&cb.filters, &b.conv, level, b.weight_scale)?
                            .try_map(|p| ev.encode(p))
                            .map_err(FastError::from)
                    })
                    .collect::<Result<_, _>>()?,
            )
        } else {
            None
        };
        Ok(EncodedModel { params, compiled, plain, weights, options })
    }
}

fn weight_level(compiled: &CompiledPipeline, b: &BlockPlan, level_aware: bool) -> usize {
    if level_aware { b.conv_level } else { compiled.schedule.top }
}

/// Actual level and scale after each step, plus the number of ciphertexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub label: String,
    pub level: usize,
    pub scale: f64,
    pub ciphertexts: usize,
}

pub struct PipelineRun<B: SlotBackend> {
    pub output: Ct<B>,
    pub trace: Vec<TraceEntry>,
}

fn check_step<B: SlotBackend>(
    schedule: &PipelineSchedule,
    label: &str,
    cts: &[Ct<B>],
    trace: &mut Vec<TraceEntry>,
) -> Result<(), FastError> {
    let spec = schedule.step(label).ok_or_else(|| FastError::Schedule {
        step: label.to_string(),
        detail: "step missing from the schedule".into(),
    })?;
    for ct in cts {
        if ct.level() != spec.level || !scales_match(ct.scale(), spec.scale) {
            return Err(FastError::Schedule {
                step: label.to_string(),
                detail: format!(
                    "expected level {} scale {:e}, got level {} scale {:e}",
                    spec.level,
                    spec.scale,
                    ct.level(),
                    ct.scale()
                ),
            });
        }
    }
    let (level, scale) = cts.first().map(|c| (c.level(), c.scale())).unwrap_or((spec.level, spec.scale));
    trace.push(TraceEntry { label: label.to_string(), level, scale, ciphertexts: cts.len() });
    Ok(())
}

/// Evaluates the network on an encrypted input, checking every step against the schedule.
pub fn run_pipeline<B: SlotBackend>(
    ev: &Evaluator<B>,
    model: &EncodedModel<'_, B>,
    input: &Ct<B>,
) -> Result<PipelineRun<B>, FastError> {
    let compiled = model.compiled;
    let sched = &compiled.schedule;
    if ev.slots() != compiled.slots {
        return Err(FastError::Config(format!("backend has {} slots, pipeline {}", ev.slots(), compiled.slots)));
    }
    let mut trace = Vec::new();
    check_step::<B>(sched, "input", std::slice::from_ref(input), &mut trace)?;
    let mut cts = vec![input.clone()];
    for (bi, b) in compiled.blocks.iter().enumerate() {
        let t = b.t;
        if let Some(spec) = &b.merge {
            ev.set_layer(&format!("pre{t}"));
            let mask = model.plain.masks[bi].as_ref().ok_or_else(|| FastError::Config(format!("mask {t} missing")))?;
            cts = premerge(ev, &cts, spec, mask)?;
            check_step::<B>(sched, &format!("pre{t}"), &cts, &mut trace)?;
        }
        ev.set_layer(&format!("conv{t}"));
        cts = match &model.weights {
            Some(w) => hconv(ev, &cts, &w[bi], &b.conv)?,
            None => {
                let level = weight_level(compiled, b, model.options.level_aware);
                let lazy = LazyWeights::new(&model.params.blocks[bi].filters, &b.conv, level, b.weight_scale)?;
                hconv(ev, &cts, &lazy, &b.conv)?
            }
        };
        check_step::<B>(sched, &format!("conv{t}"), &cts, &mut trace)?;
        if let Some(spec) = &b.merge {
            ev.set_layer(&format!("post{t}"));
            cts = postmerge(ev, cts, spec)?;
            check_step::<B>(sched, &format!("post{t}"), &cts, &mut trace)?;
        }
        ev.set_layer(&format!("act{t}"));
        let squares = square_all(ev, &cts)?;
        check_step::<B>(sched, &format!("act{t}.sqr"), &squares, &mut trace)?;
        cts = finish_activation(ev, &cts, &squares, &model.plain.coeffs[bi])?;
        check_step::<B>(sched, &format!("act{t}.res"), &cts, &mut trace)?;
        if b.pooled {
            ev.set_layer(&format!("pool{t}"));
            cts = avg_pool(ev, cts, &b.conv_layout())?.0;
            check_step::<B>(sched, &format!("pool{t}"), &cts, &mut trace)?;
        }
    }
    ev.set_layer("gpool");
    cts = global_pool(ev, cts, &compiled.fc.layout)?;
    check_step::<B>(sched, "gpool", &cts, &mut trace)?;
    ev.set_layer("fc");
    let out = fc(ev, &cts, &model.plain.fc, &model.plain.fc_bias, &compiled.fc.layout)?;
    check_step::<B>(sched, "fc", std::slice::from_ref(&out), &mut trace)?;
    Ok(PipelineRun { output: out, trace })
}

/// Encrypts, evaluates and decrypts; returns the logits and the run.
pub fn infer_encrypted<B: SlotBackend>(
    ev: &Evaluator<B>,
    model: &EncodedModel<'_, B>,
    x: &InputTensor,
) -> Result<(Vec<f64>, PipelineRun<B>), FastError> {
    let ct = model.compiled.encrypt_input(ev, x)?;
    let run = run_pipeline(ev, model, &ct)?;
    let dec = ev.decrypt(&run.output)?;
    Ok((model.compiled.logits(&dec), run))
}

/// Runs every input through one lane of a batched simulator, sharing the plaintexts.
pub fn infer_lanes<S: SlotScalar>(
    ev: &Evaluator<Simulator<S>>,
    model: &EncodedModel<'_, Simulator<S>>,
    xs: &[InputTensor],
) -> Result<Vec<Vec<f64>>, FastError> {
    let compiled = model.compiled;
    let packed: Vec<Vec<f64>> = xs.iter().map(|x| compiled.pack(x)).collect::<Result<_, _>>()?;
    let handle = ev.backend().encrypt_lanes(&packed)?;
    let ct = Ciphertext::from_parts(handle, compiled.schedule.top, compiled.input_scale, compiled.slots);
    let run = run_pipeline(ev, model, &ct)?;
    let lanes = ev.backend().decrypt_lanes(run.output.handle())?;
    Ok(lanes.iter().map(|d| compiled.logits(d)).collect())
}
