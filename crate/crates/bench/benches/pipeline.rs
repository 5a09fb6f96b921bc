use actionhe_core::backend::{Evaluator, Simulator};
use actionhe_core::convolution::Strategy;
use actionhe_core::fastpath::{infer_encrypted, CompiledPipeline, EncodeOptions, EncodedModel, Mode};
use actionhe_core::ingest::InputTensor;
use actionhe_core::model::{collapse_layers, infer_clear, NetworkShape, RawLayerParams};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SLOTS: usize = 8192;

fn simulated_inference(c: &mut Criterion) {
    let shape = NetworkShape::preset("2d-w64").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = collapse_layers(&RawLayerParams::random(shape, &mut rng)).unwrap();
    let x = InputTensor::random(shape.frames, shape.joints, &mut rng);

    c.bench_function("clear/2d-w64", |b| b.iter(|| infer_clear(&p, &x).unwrap()));

    let mut g = c.benchmark_group("sim/2d-w64");
    g.sample_size(10);
    for mode in [Mode::Hear, Mode::Fast] {
        for s in [Strategy::Full, Strategy::Giant] {
            let cp = CompiledPipeline::compile(&shape, mode, s, SLOTS, mode.ladder()).unwrap();
            let ev = Evaluator::new(Simulator::<f64>::new(SLOTS, mode.ladder()));
            let model = EncodedModel::new(&ev, &p, &cp, EncodeOptions::default()).unwrap();
            g.bench_function(format!("{mode}/{s}"), |b| b.iter(|| infer_encrypted(&ev, &model, &x).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, simulated_inference);
criterion_main!(benches);
