//! Command implementations. Every report is JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use actionhe_core::backend::{Ciphertext, Evaluator, SlotBackend, Simulator};
use actionhe_core::ckks::keys::keygen;
use actionhe_core::ckks::serial::{read_ciphertext, read_keys, write_ciphertext, write_keys, MAGIC};
use actionhe_core::ckks::{CkksEngine, Context, KeyMaterial};
use actionhe_core::convolution::build_weight_plaintexts;
use actionhe_core::costmodel::{compare, packing_params, predict_pipeline, CostReport};
use actionhe_core::fastpath::{
    infer_encrypted, model_plaintexts, run_pipeline, CompiledPipeline, EncodeOptions, EncodedModel, Mode,
};
use actionhe_core::ingest::{preprocess, InputTensor, JointSequence};
use actionhe_core::model::{
    argmax, collapse_layers, infer_clear, model_header, read_model, read_model_header, write_model, CollapsedParams,
    RawLayerParams,
};
use anyhow::{anyhow, bail, Context as _, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Backend, FileConfig, NetArgs, RunConfig};
use crate::{
    Command, CompareArgs, CountOpsArgs, CryptoFailure, DecryptArgs, EncodeModelArgs, EncryptArgs, InferArgs, IngestArgs,
    LayoutCommand, ModelCommand, PlanCommand,
};

pub fn dispatch(cmd: Command, file: &FileConfig) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(&a),
        Command::Model(ModelCommand::Inspect { model }) => emit(&inspect_model(&model)?, None),
        Command::Model(ModelCommand::Random { net, out }) => random_model(&net.resolve(file)?, &out),
        Command::Layout(LayoutCommand::Describe { net }) => emit(&describe_layout(&net.resolve(file)?)?, None),
        Command::Plan(PlanCommand::Show { net }) => emit(&show_plan(&net.resolve(file)?)?, None),
        Command::CountOps(a) => count_ops(&a, file),
        Command::Keygen(a) => {
            let report = cmd_keygen(&a.net.resolve(file)?, &a.out, a.public_out.as_deref())?;
            emit(&report, a.report.as_deref())
        }
        Command::EncodeModel(a) => encode_model(&a, file),
        Command::Encrypt(a) => encrypt(&a, file),
        Command::Infer(a) => infer(&a, file),
        Command::Decrypt(a) => decrypt(&a, file),
        Command::Compare(a) => cmd_compare(&a, file),
    }
}

fn emit(v: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => print_out(&(text + "\n")),
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn print_out(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn rng_for(seed: Option<u64>) -> ChaCha20Rng {
    seed.map_or_else(ChaCha20Rng::from_entropy, ChaCha20Rng::seed_from_u64)
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    serde_json::from_reader(open(p)?).with_context(|| format!("parsing {}", p.display()))
}

fn read_tensor(p: &Path) -> Result<InputTensor> {
    let x: InputTensor = read_json(p)?;
    if !x.is_well_formed() {
        bail!("{}: malformed input tensor", p.display());
    }
    Ok(x)
}

pub fn load_model(p: &Path) -> Result<RawLayerParams> {
    let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    if bytes.is_empty() {
        bail!("{}: empty model", p.display());
    }
    let raw = read_model(&bytes[..]).with_context(|| format!("reading model {}", p.display()))?;
    raw.validate()?;
    Ok(raw)
}

/// Takes the network from the model unless one was requested explicitly, in which case they must agree.
fn adopt_model_shape(cfg: &mut RunConfig, args: &NetArgs, file: &FileConfig, raw: &RawLayerParams) -> Result<()> {
    if (args.net.is_some() || file.get("net").is_some()) && cfg.shape != raw.shape {
        bail!("model shape {:?} differs from network {}", raw.shape, cfg.net);
    }
    cfg.shape = raw.shape;
    Ok(())
}

fn backend_of(flag: &Option<String>, file: &FileConfig) -> Result<Backend> {
    flag.clone().or_else(|| file.get("backend")).unwrap_or_else(|| "sim".into()).parse().map_err(|e: String| anyhow!(e))
}

/// Pipeline against the nominal ladder, for the simulator and for counting.
pub fn compile_nominal(cfg: &RunConfig) -> Result<CompiledPipeline> {
    Ok(CompiledPipeline::compile(&cfg.shape, cfg.mode, cfg.strategy, cfg.slots(), cfg.mode.ladder())?)
}

/// Pipeline against the exact primes of the parameter set.
pub fn compile_exact(cfg: &RunConfig) -> Result<CompiledPipeline> {
    Ok(CompiledPipeline::compile(&cfg.shape, cfg.mode, cfg.strategy, cfg.slots(), cfg.params.ladder())?)
}

fn rotation_list(set: &BTreeMap<usize, usize>) -> Value {
    set.iter().map(|(a, l)| json!({ "amount": a, "level": l })).collect()
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let frames: Vec<Vec<[f64; 2]>> = read_json(&a.input)?;
    let seq = JointSequence::new(frames)?;
    let x = preprocess(&seq, a.frames, a.threshold)?;
    serde_json::to_writer(create(&a.out)?, &x)?;
    emit(&json!({ "frames_in": seq.len(), "frames_out": x.frames, "joints": x.joints }), None)
}

fn inspect_model(p: &Path) -> Result<Value> {
    let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    if bytes.is_empty() {
        bail!("{}: empty model", p.display());
    }
    let header = read_model_header(&mut &bytes[..])?;
    Ok(json!({
        "file_sha256": hex::encode(Sha256::digest(&bytes)),
        "header": header,
    }))
}

fn random_model(cfg: &RunConfig, out: &Path) -> Result<()> {
    let raw = RawLayerParams::random(cfg.shape, &mut rng_for(cfg.seed.or(Some(0))));
    let mut w = create(out)?;
    write_model(&raw, &mut w)?;
    w.flush()?;
    emit(&json!({ "written": out, "header": model_header(&raw) }), None)
}

fn describe_layout(cfg: &RunConfig) -> Result<Value> {
    let c = compile_nominal(cfg)?;
    let blocks: Vec<Value> = c
        .blocks
        .iter()
        .map(|b| {
            json!({
                "layer": b.t,
                "n_in": b.conv.n_in,
                "n_out": b.conv.n_out,
                "n_p": b.conv.load,
                "merged": b.merge.is_some(),
                "conv_input": b.conv.layout,
                "conv_output": b.conv_layout(),
                "block_output": b.out_layout,
            })
        })
        .collect();
    Ok(json!({
        "net": cfg.net,
        "shape": cfg.shape,
        "mode": cfg.mode,
        "slots": c.slots,
        "input": c.input_layout,
        "blocks": blocks,
        "fc_input": c.fc.layout,
    }))
}

fn show_plan(cfg: &RunConfig) -> Result<Value> {
    let c = compile_exact(cfg)?;
    let set = c.rotation_set();
    Ok(json!({
        "net": cfg.net,
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "params": cfg.params.profile,
        "slots": c.slots,
        "schedule": c.schedule.steps,
        "packing": packing_params(&c).iter().map(|&(t, ni, no, np)| json!({"layer": t, "n_in": ni, "n_out": no, "n_p": np})).collect::<Vec<_>>(),
        "rotations": rotation_list(&set),
        "rotation_count": set.len(),
        "inventory": c.plaintext_inventory(true),
    }))
}

fn count_ops(a: &CountOpsArgs, file: &FileConfig) -> Result<()> {
    let cfg = a.net.resolve(file)?;
    let c = compile_nominal(&cfg)?;
    let mut rng = rng_for(cfg.seed.or(Some(0)));
    let raw = RawLayerParams::random(cfg.shape, &mut rng);
    let params = collapse_layers(&raw)?;
    let x = InputTensor::random(cfg.shape.frames, cfg.shape.joints, &mut rng);
    let ev = Evaluator::new(Simulator::<f64>::new(c.slots, c.ladder.clone()));
    let model = EncodedModel::new(&ev, &params, &c, EncodeOptions::default())?;
    infer_encrypted(&ev, &model, &x)?;
    let report = CostReport::new(&predict_pipeline(&c), &ev.counters().snapshot());
    match a.format.as_str() {
        "json" => emit(
            &json!({
                "net": cfg.net,
                "mode": cfg.mode,
                "strategy": cfg.strategy,
                "packing": packing_params(&c),
                "report": report,
                "verdict": compare(&report),
            }),
            None,
        ),
        "table" => {
            print_out(&format!("{} {} {}\n{}", cfg.net, cfg.mode, cfg.strategy, report.table()))
        }
        f => bail!("unknown format {f:?} (json|table)"),
    }
}

pub fn cmd_keygen(cfg: &RunConfig, out: &Path, public_out: Option<&Path>) -> Result<Value> {
    let c = compile_exact(cfg)?;
    let set = c.rotation_set();
    let ctx = Context::new(cfg.params.clone())?;
    let keys = keygen(&ctx, &set, &mut rng_for(cfg.seed));
    let mut w = create(out)?;
    write_keys(&mut w, &cfg.params, &keys)?;
    w.flush()?;
    if let Some(p) = public_out {
        let mut w = create(p)?;
        write_keys(&mut w, &cfg.params, &keys.public_only())?;
        w.flush()?;
    }
    let p = &cfg.params;
    Ok(json!({
        "params": p.profile,
        "log_n": p.log_n,
        "slots": p.slots(),
        "max_level": p.max_level(),
        "log_q": p.log_q(),
        "primes": p.primes,
        "special": p.special,
        "insecure": p.insecure,
        "digest": p.digest_hex(),
        "net": cfg.net,
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "rotations": rotation_list(&keys.rotation_levels()),
        "rotation_keys": keys.rotations.len(),
        "rotation_key_bytes": keys.rotation_bytes(),
        "relin_key_bytes": keys.relin.as_ref().map_or(0, |k| k.bytes()),
        "matches_plan": keys.covers_exactly(&set),
    }))
}

fn encode_model(a: &EncodeModelArgs, file: &FileConfig) -> Result<()> {
    let raw = load_model(&a.model)?;
    let mut cfg = a.net.resolve(file)?;
    adopt_model_shape(&mut cfg, &a.net, file, &raw)?;
    let params = collapse_layers(&raw)?;
    emit(&encode_report(&cfg, &params, &a.model)?, a.out.as_deref())
}

/// Builds every plaintext at its scheduled level and reports counts and CKKS bytes.
pub fn encode_report(cfg: &RunConfig, params: &CollapsedParams, model_path: &Path) -> Result<Value> {
    let c = compile_nominal(cfg)?;
    let hear = CompiledPipeline::compile(&cfg.shape, Mode::Hear, cfg.strategy, cfg.slots(), Mode::Hear.ladder())?;
    let others = model_plaintexts(params, &c, true)?;
    let mut conv = Vec::new();
    let mut conv_total = 0;
    for ((b, cb), hb) in c.blocks.iter().zip(&params.blocks).zip(&hear.blocks) {
        let w = build_weight_plaintexts(&cb.filters, &b.conv, b.conv_level, b.weight_scale)?;
        let hear_count: usize = hb.conv.table_dims().iter().product();
        conv_total += w.len();
        conv.push(json!({
            "layer": b.t,
            "n_in": b.conv.n_in,
            "n_out": b.conv.n_out,
            "n_p": b.conv.load,
            "merged": b.merge.is_some(),
            "level": b.conv_level,
            "plaintexts": w.len(),
            "hear_plaintexts": hear_count,
        }));
    }
    let count = |level_aware: bool| c.plaintext_inventory(level_aware).iter().map(|e| e.count).sum::<usize>();
    let encoded = conv_total + others.len();
    if encoded != count(true) {
        bail!("encoded {encoded} plaintexts, inventory lists {}", count(true));
    }
    let (aware, full) = (c.storage_bytes(true), c.storage_bytes(false));
    let model_bytes = std::fs::read(model_path)?;
    Ok(json!({
        "model_sha256": hex::encode(Sha256::digest(&model_bytes)),
        "shape": cfg.shape,
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "slots": c.slots,
        "plaintexts": encoded,
        "conv": conv,
        "bytes": { "level_aware": aware, "full_level": full, "ratio": aware as f64 / full as f64 },
        "inventory": { "level_aware": c.plaintext_inventory(true), "full_level": c.plaintext_inventory(false) },
    }))
}

fn load_keys(cfg: &RunConfig, p: &Path) -> Result<KeyMaterial> {
    read_keys(open(p)?, &cfg.params).with_context(|| format!("reading keys {}", p.display()))
}

fn engine(cfg: &RunConfig, keys: KeyMaterial) -> Result<CkksEngine> {
    let ctx = Arc::new(Context::new(cfg.params.clone())?);
    Ok(CkksEngine::with_rng(ctx, Arc::new(keys), rng_for(cfg.seed)))
}

fn checked_engine(cfg: &RunConfig, keys: KeyMaterial, c: &CompiledPipeline) -> Result<CkksEngine> {
    if !keys.covers(&c.rotation_set()) {
        return Err(CryptoFailure("rotation keys do not cover the plan's rotation set".into()).into());
    }
    if keys.relin.is_none() {
        return Err(CryptoFailure("key file has no relinearization key".into()).into());
    }
    engine(cfg, keys)
}

fn encrypt(a: &EncryptArgs, file: &FileConfig) -> Result<()> {
    let cfg = a.net.resolve(file)?;
    let c = compile_exact(&cfg)?;
    let x = read_tensor(&a.input)?;
    let ev = Evaluator::new(engine(&cfg, load_keys(&cfg, &a.keys)?)?);
    let ct = c.encrypt_input(&ev, &x)?;
    let mut w = create(&a.out)?;
    write_ciphertext(&mut w, &cfg.params, ct.handle(), ct.scale())?;
    w.flush()?;
    emit(&json!({ "level": ct.level(), "scale": ct.scale(), "bytes": ct.handle().bytes() }), None)
}

fn is_ciphertext(p: &Path) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut f = open(p)?;
    Ok(f.read(&mut head)? == 4 && head == MAGIC)
}

fn logits_report<B: SlotBackend>(ev: &Evaluator<B>, logits: &[f64], trace: Value, backend: &str) -> Value {
    json!({
        "backend": backend,
        "logits": logits,
        "argmax": argmax(logits),
        "trace": trace,
        "counters_total": ev.counters().total(),
    })
}

fn infer(a: &InferArgs, file: &FileConfig) -> Result<()> {
    let raw = load_model(&a.model)?;
    let mut cfg = a.net.resolve(file)?;
    adopt_model_shape(&mut cfg, &a.net, file, &raw)?;
    let params = collapse_layers(&raw)?;
    let write_counters = |counters: Value| -> Result<()> {
        match &a.counters {
            Some(p) => emit(&counters, Some(p)),
            None => Ok(()),
        }
    };
    match backend_of(&a.backend, file)? {
        Backend::Sim => {
            let c = compile_nominal(&cfg)?;
            let x = read_tensor(&a.input)?;
            let ev = Evaluator::new(Simulator::<f64>::new(c.slots, c.ladder.clone()));
            let model = EncodedModel::new(&ev, &params, &c, EncodeOptions::default())?;
            let (logits, run) = infer_encrypted(&ev, &model, &x)?;
            write_counters(ev.counters().to_json())?;
            emit(&logits_report(&ev, &logits, serde_json::to_value(&run.trace)?, "sim"), Some(&a.out))
        }
        Backend::Ckks => {
            let c = compile_exact(&cfg)?;
            let keys_path = a.keys.as_ref().ok_or_else(|| anyhow!("--keys is required with the ckks backend"))?;
            let ev = Evaluator::new(checked_engine(&cfg, load_keys(&cfg, keys_path)?, &c)?);
            let model = EncodedModel::new(&ev, &params, &c, EncodeOptions::default())?;
            if is_ciphertext(&a.input)? {
                let (ct, level, scale) = read_ciphertext(open(&a.input)?, &cfg.params)?;
                let input = Ciphertext::from_parts(ct, level, scale, c.slots);
                let run = run_pipeline(&ev, &model, &input)?;
                write_counters(ev.counters().to_json())?;
                let mut w = create(&a.out)?;
                write_ciphertext(&mut w, &cfg.params, run.output.handle(), run.output.scale())?;
                w.flush()?;
                emit(&json!({ "backend": "ckks", "output_level": run.output.level(), "trace": run.trace }), None)
            } else {
                if ev.backend().keys().secret.is_none() {
                    return Err(CryptoFailure("a tensor input needs the secret key; encrypt it first".into()).into());
                }
                let x = read_tensor(&a.input)?;
                let (logits, run) = infer_encrypted(&ev, &model, &x)?;
                write_counters(ev.counters().to_json())?;
                emit(&logits_report(&ev, &logits, serde_json::to_value(&run.trace)?, "ckks"), Some(&a.out))
            }
        }
    }
}

fn decrypt(a: &DecryptArgs, file: &FileConfig) -> Result<()> {
    let cfg = a.net.resolve(file)?;
    let c = compile_exact(&cfg)?;
    let ev = Evaluator::new(engine(&cfg, load_keys(&cfg, &a.keys)?)?);
    let (ct, level, scale) = read_ciphertext(open(&a.input)?, &cfg.params)?;
    if level != 0 {
        return Err(CryptoFailure(format!("output ciphertext at level {level}, expected 0")).into());
    }
    let dec = ev.decrypt(&Ciphertext::from_parts(ct, level, scale, c.slots))?;
    let logits = c.logits(&dec);
    emit(&json!({ "logits": logits, "argmax": argmax(&logits) }), a.out.as_deref())
}

fn top_two_margin(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.len() < 2 {
        f64::INFINITY
    } else {
        s[0] - s[1]
    }
}

/// Clear and encrypted logits for each input, and the counters of the first run.
fn compare_with<B: SlotBackend>(
    ev: &Evaluator<B>,
    params: &CollapsedParams,
    c: &CompiledPipeline,
    inputs: &[InputTensor],
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, CostReport)> {
    let model = EncodedModel::new(ev, params, c, EncodeOptions::default())?;
    let mut out = Vec::new();
    let mut report = None;
    for x in inputs {
        let clear = infer_clear(params, x)?;
        let (enc, _) = infer_encrypted(ev, &model, x)?;
        if report.is_none() {
            report = Some(CostReport::new(&predict_pipeline(c), &ev.counters().snapshot()));
        }
        out.push((clear, enc));
    }
    Ok((out, report.ok_or_else(|| anyhow!("no inputs"))?))
}

fn cmd_compare(a: &CompareArgs, file: &FileConfig) -> Result<()> {
    let raw = load_model(&a.model)?;
    let mut cfg = a.net.resolve(file)?;
    adopt_model_shape(&mut cfg, &a.net, file, &raw)?;
    let params = collapse_layers(&raw)?;
    let inputs = match &a.input {
        Some(p) => vec![read_tensor(p)?],
        None => {
            let mut rng = rng_for(cfg.seed.map(|s| s ^ 0x5eed));
            (0..a.inputs.max(1)).map(|_| InputTensor::random(cfg.shape.frames, cfg.shape.joints, &mut rng)).collect()
        }
    };
    let backend = backend_of(&a.backend, file)?;
    let (pairs, report) = match backend {
        Backend::Sim => {
            let c = compile_nominal(&cfg)?;
            let ev = Evaluator::new(Simulator::<f64>::new(c.slots, c.ladder.clone()));
            compare_with(&ev, &params, &c, &inputs)?
        }
        Backend::Ckks => {
            let c = compile_exact(&cfg)?;
            let keys = match &a.keys {
                Some(p) => load_keys(&cfg, p)?,
                None => keygen(&Context::new(cfg.params.clone())?, &c.rotation_set(), &mut rng_for(cfg.seed)),
            };
            let ev = Evaluator::new(checked_engine(&cfg, keys, &c)?);
            compare_with(&ev, &params, &c, &inputs)?
        }
    };
    let mut max_delta = 0.0f64;
    let mut agree = 0;
    let (mut filtered, mut filtered_agree) = (0, 0);
    let runs: Vec<Value> = pairs
        .iter()
        .map(|(clear, enc)| {
            let delta = clear.iter().zip(enc).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            max_delta = max_delta.max(delta);
            let same = argmax(clear) == argmax(enc);
            agree += same as usize;
            if top_two_margin(clear) > 2.0 * delta {
                filtered += 1;
                filtered_agree += same as usize;
            }
            json!({ "clear": clear, "encrypted": enc, "max_abs_delta": delta, "argmax_clear": argmax(clear), "argmax_encrypted": argmax(enc) })
        })
        .collect();
    let n = pairs.len();
    let verdict = compare(&report);
    let out = json!({
        "backend": match backend { Backend::Sim => "sim", Backend::Ckks => "ckks" },
        "params": cfg.params.profile,
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "inputs": n,
        "max_abs_delta": max_delta,
        "log2_max_abs_delta": max_delta.log2(),
        "argmax_agreement": agree as f64 / n as f64,
        "margin_filtered": { "inputs": filtered, "argmax_agreement": if filtered == 0 { 1.0 } else { filtered_agree as f64 / filtered as f64 } },
        "runs": runs,
        "counters": report,
        "counts_match_prediction": verdict.pass,
    });
    emit(&out, a.out.as_deref())?;
    if let Some(tol) = a.tolerance {
        if !(max_delta <= tol) {
            bail!("max |delta| {max_delta:e} exceeds tolerance {tol:e}");
        }
    }
    Ok(())
}
