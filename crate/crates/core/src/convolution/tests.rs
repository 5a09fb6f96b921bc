use super::*;
use super::Strategy;
use crate::backend::{Fixed, ModulusLadder, Simulator, SlotScalar};
use crate::layout::{pack_channels, unpack_channels, Dim, PackedLayout};
use crate::model::{conv_same, FeatureMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sim<S: SlotScalar>(slots: usize) -> Evaluator<Simulator<S>> {
    Evaluator::new(Simulator::new(slots, ModulusLadder::hear()))
}

fn random_filters(rng: &mut ChaCha8Rng, co: usize, ci: usize, kh: usize, kw: usize) -> ConvFilters {
    let mut f = ConvFilters::zeros(co, ci, kh, kw);
    f.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    f
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut m = FeatureMap::zeros(c, h, w);
    m.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    m
}

fn run_layer<S: SlotScalar>(
    layout: &PackedLayout,
    filters: &ConvFilters,
    input: &FeatureMap,
    strategy: Strategy,
) -> (Vec<Vec<f64>>, crate::backend::OpCount) {
    let ev = sim::<S>(layout.slots);
    let plan = ConvPlan::new(2, (filters.c_out, filters.c_in, filters.kh, filters.kw), layout, strategy, vec![]).unwrap();
    let w = build_weight_plaintexts(filters, &plan, 7, 1.0).unwrap();
    let w = w.try_map(|pv| ev.encode(pv)).unwrap();
    let cts: Vec<_> = pack_channels(input, layout).iter().map(|v| ev.encrypt(v, 7, 1.0).unwrap()).collect();
    let out = hconv(&ev, &cts, &w, &plan).unwrap();
    assert!(out.iter().all(|c| c.level() == 6));
    (out.iter().map(|c| ev.decrypt(c).unwrap()).collect(), ev.counters().total())
}

#[test]
fn one_dimensional_simple_conv() {
    let layout = PackedLayout::input(Dim::One, 1, 4, 8).unwrap().unreplicated();
    let mut f = ConvFilters::zeros(1, 1, 1, 3);
    f.weights = vec![1.0, 1.0, 1.0];
    let plan = ConvPlan::new(2, (1, 1, 1, 3), &layout, Strategy::Full, vec![]).unwrap();
    let ev = sim::<f64>(8);
    let pts: Vec<_> = (0..3).map(|k| ev.encode(&PlainVector { data: weight_slots(&f, &plan, 0, 0, k, 0), level: 3, scale: 1.0 }).unwrap()).collect();
    let ct = ev.encrypt(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0], 3, 1.0).unwrap();
    let out = simple_conv(&ev, &ct, &pts.iter().collect::<Vec<_>>(), &plan.taps).unwrap();
    assert_eq!(&ev.decrypt(&out).unwrap()[..4], &[3.0, 6.0, 9.0, 7.0]);

    f.weights = vec![0.0, 1.0, 0.0];
    let pts: Vec<_> = (0..3).map(|k| ev.encode(&PlainVector { data: weight_slots(&f, &plan, 0, 0, k, 0), level: 3, scale: 1.0 }).unwrap()).collect();
    let out = simple_conv(&ev, &ct, &pts.iter().collect::<Vec<_>>(), &plan.taps).unwrap();
    assert_eq!(&ev.decrypt(&out).unwrap()[..4], &[1.0, 2.0, 3.0, 4.0]);
    assert!(matches!(simple_conv(&ev, &ct, &[&pts[0]], &plan.taps), Err(ConvError::MissingTap { .. })));
}

#[test]
fn two_dimensional_ones_kernel() {
    let layout = PackedLayout::input(Dim::Two, 3, 3, 32).unwrap().unreplicated();
    let mut f = ConvFilters::zeros(1, 1, 3, 3);
    f.weights = vec![1.0; 9];
    let plan = ConvPlan::new(2, (1, 1, 3, 3), &layout, Strategy::Full, vec![]).unwrap();
    let ev = sim::<f64>(32);
    let pts: Vec<_> = (0..9).map(|k| ev.encode(&PlainVector { data: weight_slots(&f, &plan, 0, 0, k, 0), level: 3, scale: 1.0 }).unwrap()).collect();
    let mut v = vec![0.0; 32];
    v[..9].iter_mut().for_each(|x| *x = 1.0);
    let ct = ev.encrypt(&v, 3, 1.0).unwrap();
    let out = ev.decrypt(&simple_conv(&ev, &ct, &pts.iter().collect::<Vec<_>>(), &plan.taps).unwrap()).unwrap();
    assert_eq!(out[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(out[corner], 4.0);
    }
}

#[test]
fn left_boundary_tap_is_zero() {
    let layout = PackedLayout::input(Dim::Two, 4, 5, 64).unwrap().unreplicated();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_filters(&mut rng, 2, 2, 3, 3);
    let plan = ConvPlan::new(2, (2, 2, 3, 3), &layout, Strategy::Full, vec![]).unwrap();
    let k = plan.taps.iter().position(|t| (t.dh, t.dw) == (0, -1)).unwrap();
    let dense = weight_slots(&f, &plan, 0, 0, k, 0).to_dense();
    for b in 0..2 {
        for p in 0..4 {
            assert_eq!(dense[layout.slot(b, p, 0)], 0.0);
            assert_ne!(dense[layout.slot(b, p, 1)], 0.0);
        }
    }
}

#[test]
fn first_layer_assigns_distinct_kernels_per_replica() {
    let layout = PackedLayout::input(Dim::Two, 2, 2, 32).unwrap();
    assert_eq!((layout.replicas, layout.channels_per_ct), (4, 8));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_filters(&mut rng, 8, 2, 3, 3);
    let plan = ConvPlan::new(1, (8, 2, 3, 3), &layout, Strategy::Full, vec![]).unwrap();
    assert_eq!((plan.n_in, plan.extra, plan.n_out), (1, 2, 1));
    let centre = plan.taps.iter().position(|t| (t.dh, t.dw) == (0, 0)).unwrap();
    for l in 0..2 {
        let dense = weight_slots(&f, &plan, 0, 0, centre, l).to_dense();
        for b in 0..8 {
            // Block b reads block b + l, which holds input channel (b + l) mod 2.
            assert_eq!(dense[layout.slot(b, 0, 0)], f.tap(b, (b + l) % 2, 0, 0));
        }
    }

    // End to end against the clear convolution.
    let ev = sim::<f64>(32);
    let x = random_map(&mut rng, 2, 2, 2);
    let mut packed = vec![0.0; 32];
    for r in 0..4 {
        for c in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    packed[(2 * r + c) * 4 + p * 2 + q] = x.at(c, p, q);
                }
            }
        }
    }
    let w = build_weight_plaintexts(&f, &plan, 5, 1.0).unwrap().try_map(|pv| ev.encode(pv)).unwrap();
    let ct = ev.encrypt(&packed, 5, 1.0).unwrap();
    let out = hconv(&ev, &[ct], &w, &plan).unwrap();
    let got = unpack_channels(&[ev.decrypt(&out[0]).unwrap()], &layout, 8);
    let want = conv_same(&x, &f);
    for (a, b) in got.data.iter().zip(&want.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn strategies_match_clear_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dim in [Dim::Two, Dim::One] {
        let layout = PackedLayout::input(dim, 4, 5, 128).unwrap().unreplicated();
        let (kh, kw) = if dim == Dim::Two { (3, 3) } else { (1, 3) };
        let f = random_filters(&mut rng, 8, 8, kh, kw);
        let x = random_map(&mut rng, 8, layout.map_h, layout.map_w);
        let want = conv_same(&x, &f);
        for s in Strategy::ALL {
            let (out, _) = run_layer::<f64>(&layout, &f, &x, s);
            let got = unpack_channels(&out, &layout, 8);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12, "{s}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn strategies_agree_bit_for_bit_in_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layout = PackedLayout::input(Dim::Two, 4, 5, 128).unwrap().unreplicated();
    for _ in 0..5 {
        let f = random_filters(&mut rng, 8, 8, 3, 3);
        let x = random_map(&mut rng, 8, 4, 5);
        let full = run_layer::<Fixed>(&layout, &f, &x, Strategy::Full).0;
        assert_eq!(full, run_layer::<Fixed>(&layout, &f, &x, Strategy::Giant).0);
        assert_eq!(full, run_layer::<Fixed>(&layout, &f, &x, Strategy::Baby).0);
    }
}

#[test]
fn identity_kernels_permute_blocks() {
    let layout = PackedLayout::input(Dim::Two, 2, 3, 16).unwrap().unreplicated();
    let mut f = ConvFilters::zeros(2, 2, 3, 3);
    f.set(0, 1, 1, 1, 1.0);
    f.set(1, 0, 1, 1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_map(&mut rng, 2, 2, 3);
    let (out, _) = run_layer::<f64>(&layout, &f, &x, Strategy::Giant);
    let got = unpack_channels(&out, &layout, 2);
    for p in 0..2 {
        for q in 0..3 {
            assert_eq!(got.at(0, p, q), x.at(1, p, q));
            assert_eq!(got.at(1, p, q), x.at(0, p, q));
        }
    }
}

#[test]
fn weights_must_match_strategy() {
    let layout = PackedLayout::input(Dim::Two, 2, 3, 16).unwrap().unreplicated();
    let f = ConvFilters::zeros(2, 2, 3, 3);
    let ev = sim::<f64>(16);
    let giant = ConvPlan::new(2, (2, 2, 3, 3), &layout, Strategy::Giant, vec![]).unwrap();
    let baby = ConvPlan { strategy: Strategy::Baby, ..giant.clone() };
    let w = build_weight_plaintexts(&f, &giant, 3, 1.0).unwrap().try_map(|pv| ev.encode(pv)).unwrap();
    let ct = ev.encrypt(&[0.0; 16], 3, 1.0).unwrap();
    assert!(matches!(hconv(&ev, &[ct.clone()], &w, &baby), Err(ConvError::StrategyMismatch { .. })));
    assert!(matches!(hconv(&ev, &[ct.clone(), ct], &w, &giant), Err(ConvError::InputCount { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_mass_leaks_across_blocks(seed in any::<u64>(), block in 0usize..4, s in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = PackedLayout::input(Dim::Two, 3, 5, 64).unwrap().unreplicated();
        // Single-channel filters: output channel c only reads input channel c.
        let mut f = ConvFilters::zeros(4, 4, 3, 3);
        for c in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    f.set(c, c, i, j, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let mut x = FeatureMap::zeros(4, 3, 5);
        for p in 0..3 {
            for q in 0..5 {
                *x.at_mut(block, p, q) = rng.gen_range(0.5..1.0);
            }
        }
        let (out, _) = run_layer::<f64>(&layout, &f, &x, Strategy::ALL[s]);
        for (slot, v) in out[0].iter().enumerate() {
            if slot / layout.block != block {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn single_channel_simple_conv_matches_clear(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = PackedLayout::input(Dim::Two, 5, 6, 64).unwrap().unreplicated();
        let f = random_filters(&mut rng, 1, 1, 3, 3);
        let plan = ConvPlan::new(2, (1, 1, 3, 3), &layout, Strategy::Full, vec![]).unwrap();
        let ev = sim::<f64>(64);
        let pts: Vec<_> = (0..9).map(|k| ev.encode(&PlainVector { data: weight_slots(&f, &plan, 0, 0, k, 0), level: 2, scale: 1.0 }).unwrap()).collect();
        let x = random_map(&mut rng, 1, 5, 6);
        let ct = ev.encrypt(&pack_channels(&x, &layout)[0], 2, 1.0).unwrap();
        let out = ev.decrypt(&simple_conv(&ev, &ct, &pts.iter().collect::<Vec<_>>(), &plan.taps).unwrap()).unwrap();
        let got = unpack_channels(&[out], &layout, 1);
        let want = conv_same(&x, &f);
        for (a, b) in got.data.iter().zip(&want.data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
