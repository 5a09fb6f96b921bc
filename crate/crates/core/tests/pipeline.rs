use std::sync::Arc;

use actionhe_core::backend::{Evaluator, Fixed, Simulator};
use actionhe_core::ckks::keys::keygen;
use actionhe_core::ckks::{CkksEngine, CkksParams, Context, Profile};
use actionhe_core::convolution::Strategy;
use actionhe_core::fastpath::{infer_encrypted, CompiledPipeline, EncodeOptions, EncodedModel, Mode};
use actionhe_core::ingest::InputTensor;
use actionhe_core::layout::Dim;
use actionhe_core::model::{collapse_layers, infer_clear, read_model, write_model, NetworkShape, RawLayerParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn small() -> NetworkShape {
    NetworkShape::new(Dim::Two, 16, 8, [16, 32, 64], 3).unwrap()
}

#[test]
fn encrypted_inference_tracks_clear_on_toy_chains() {
    let shape = small();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw = RawLayerParams::random(shape, &mut rng);

    // The model survives a file round trip before it is used.
    let mut buf = Vec::new();
    write_model(&raw, &mut buf).unwrap();
    let p = collapse_layers(&read_model(&mut &buf[..]).unwrap()).unwrap();
    let x = InputTensor::random(shape.frames, shape.joints, &mut rng);
    let clear = infer_clear(&p, &x).unwrap();

    for (mode, profile, tol) in [(Mode::Fast, Profile::ToyFast, 2f64.powi(-5)), (Mode::Hear, Profile::ToyHear, 2f64.powi(-9))] {
        let params = CkksParams::generate(profile).unwrap();
        let c = CompiledPipeline::compile(&shape, mode, Strategy::Giant, params.slots(), params.ladder()).unwrap();
        let ctx = Arc::new(Context::new(params).unwrap());
        let keys = keygen(&ctx, &c.rotation_set(), &mut ChaCha20Rng::seed_from_u64(9));
        let ev = Evaluator::new(CkksEngine::with_rng(ctx, Arc::new(keys), ChaCha20Rng::seed_from_u64(10)));
        let model = EncodedModel::new(&ev, &p, &c, EncodeOptions::default()).unwrap();
        let (got, run) = infer_encrypted(&ev, &model, &x).unwrap();
        let d = max_abs(&got, &clear);
        assert!(d <= tol, "{mode}: |delta| {d:e}");
        assert_eq!(run.output.level(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn simulator_matches_clear_for_any_model(seed in any::<u64>(), mode_fast in any::<bool>(), s in 0usize..3) {
        let shape = NetworkShape::preset("1d-w64").unwrap();
        let mode = if mode_fast { Mode::Fast } else { Mode::Hear };
        let strategy = Strategy::ALL[s];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = collapse_layers(&RawLayerParams::random(shape, &mut rng)).unwrap();
        let x = InputTensor::random(shape.frames, shape.joints, &mut rng);
        let c = CompiledPipeline::compile(&shape, mode, strategy, 8192, mode.ladder()).unwrap();
        let ev = Evaluator::new(Simulator::<Fixed>::new(8192, mode.ladder()));
        let model = EncodedModel::new(&ev, &p, &c, EncodeOptions::default()).unwrap();
        let (got, _) = infer_encrypted(&ev, &model, &x).unwrap();
        prop_assert!(max_abs(&got, &infer_clear(&p, &x).unwrap()) <= 1e-9);
    }
}
