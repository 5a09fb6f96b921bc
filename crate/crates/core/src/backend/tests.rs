use super::*;
use proptest::prelude::*;

fn sim(slots: usize) -> Evaluator<Simulator<f64>> {
    Evaluator::new(Simulator::new(slots, ModulusLadder::fast_hear()))
}

fn pad(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(n, 0.0);
    out
}

const S: f64 = 2147483648.0;

#[test]
fn encrypt_decrypt_is_identity() {
    let ev = sim(8);
    let v = vec![0.5, -1.0, 3.25, 0.0, 7.0, 1e-9, -2.0, 4.0];
    let ct = ev.encrypt(&v, 12, S).unwrap();
    assert_eq!(ev.decrypt(&ct).unwrap(), v);
    let z = ev.encrypt(&[0.0; 8], 12, S).unwrap();
    assert_eq!(ev.decrypt(&z).unwrap(), vec![0.0; 8]);
    assert!(matches!(ev.encrypt(&v, 13, S), Err(BackendError::LevelRange { level: 13, max: 12 })));
}

#[test]
fn slot_arithmetic() {
    let ev = sim(4);
    let a = ev.encrypt(&pad(&[1.0, 2.0], 4), 5, S).unwrap();
    let b = ev.encrypt(&pad(&[3.0, 4.0], 4), 5, S).unwrap();
    assert_eq!(ev.decrypt(&ev.add(&a, &b).unwrap()).unwrap(), pad(&[4.0, 6.0], 4));
    let a = ev.encrypt(&pad(&[2.0, 3.0], 4), 5, S).unwrap();
    let b = ev.encrypt(&pad(&[4.0, 5.0], 4), 5, S).unwrap();
    let p = ev.mult(&a, &b).unwrap();
    assert_eq!(ev.decrypt(&p).unwrap(), pad(&[8.0, 15.0], 4));
    assert_eq!((p.level(), p.scale()), (5, S * S));
    let r = ev.encrypt(&[1.0, 2.0, 3.0, 4.0], 5, S).unwrap();
    assert_eq!(ev.decrypt(&ev.rot(&r, 1).unwrap()).unwrap(), vec![2.0, 3.0, 4.0, 1.0]);
    assert_eq!(ev.decrypt(&ev.rot(&r, -1).unwrap()).unwrap(), vec![4.0, 1.0, 2.0, 3.0]);
    assert!(ev.rot(&r, 4).is_err());
}

#[test]
fn strict_add_contract() {
    let ev = sim(4);
    let a = ev.encrypt(&[1.0; 4], 5, S).unwrap();
    let b = ev.encrypt(&[1.0; 4], 4, S).unwrap();
    assert!(matches!(ev.add(&a, &b), Err(BackendError::LevelMismatch { .. })));
    let c = ev.encrypt(&[1.0; 4], 5, 2.0 * S).unwrap();
    assert!(matches!(ev.add(&a, &c), Err(BackendError::ScaleMismatch { .. })));
    let d = ev.mod_down(&a, 4).unwrap();
    assert_eq!(ev.decrypt(&ev.add(&d, &b).unwrap()).unwrap(), vec![2.0; 4]);
    assert!(matches!(ev.mod_down(&b, 5), Err(BackendError::RaiseLevel { .. })));
}

#[test]
fn mult_plain_and_levels() {
    let ev = sim(4);
    let a = ev.encrypt(&[1.0, 2.0, 3.0, 4.0], 6, S).unwrap();
    let ones = ev.encode(&PlainVector::dense(vec![1.0; 4], 6, 1.0)).unwrap();
    assert_eq!(ev.decrypt(&ev.mult_plain(&a, &ones).unwrap()).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    let zero = ev.encode(&PlainVector::dense(vec![0.0; 4], 8, 1.0)).unwrap();
    assert_eq!(ev.decrypt(&ev.mult_plain(&a, &zero).unwrap()).unwrap(), vec![0.0; 4]);
    let low = ev.encode(&PlainVector::dense(vec![1.0; 4], 5, 1.0)).unwrap();
    assert!(matches!(ev.mult_plain(&a, &low), Err(BackendError::PlainLevel { plain: 5, ct: 6 })));
    assert_eq!(ev.counters().total().mult_plain, 2);
}

#[test]
fn rescale_moves_the_ledger() {
    let ev = sim(4);
    let a = ev.encrypt(&[1.0; 4], 12, S).unwrap();
    let r = ev.rescale(&a).unwrap();
    assert_eq!(r.level(), 11);
    assert_eq!(r.scale(), S / ev.ladder().prime(12));
    let r2 = ev.rescale(&ev.rescale(&a).unwrap()).unwrap();
    assert_eq!(r2.level(), 10);
    assert_eq!(ev.decrypt(&r2).unwrap(), vec![1.0; 4]);
    assert_eq!(ev.counters().total().rescale, 3);
    let z = ev.encrypt(&[1.0; 4], 0, S).unwrap();
    assert!(matches!(ev.rescale(&z), Err(BackendError::RescaleFloor)));
    let before = ev.counters().total();
    ev.mod_down(&a, 3).unwrap();
    assert_eq!(ev.counters().total(), before);
}

#[test]
fn hoisted_rotation_counters() {
    let ev = sim(8);
    let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let a = ev.encrypt(&v, 3, S).unwrap();
    let out = ev.rot_many(&a, &[0, 1]).unwrap();
    assert_eq!(ev.decrypt(&out[0]).unwrap(), v);
    assert_eq!(ev.decrypt(&out[1]).unwrap(), ev.decrypt(&ev.rot(&a, 1).unwrap()).unwrap());
    let c = ev.counters().total();
    assert_eq!((c.hoisted_rot_groups, c.hoisted_rot_total, c.rot), (1, 1, 1));
    let before = ev.counters().total();
    ev.rot_many(&a, &[0]).unwrap();
    assert_eq!(ev.counters().total(), before);
}

#[test]
fn layer_labels_partition_counts() {
    let ev = sim(4);
    let a = ev.encrypt(&[1.0; 4], 3, S).unwrap();
    ev.set_layer("conv1");
    ev.rot(&a, 1).unwrap();
    ev.set_layer("pool1");
    ev.add(&a, &a).unwrap();
    ev.rot(&a, 2).unwrap();
    let snap = ev.counters().snapshot();
    assert_eq!(snap["conv1"].rot, 1);
    assert_eq!(snap["pool1"], OpCount { rot: 1, add: 1, ..Default::default() });
    let json = ev.counters().to_json();
    assert_eq!(json["pool1"]["add"], 1);
}

#[test]
fn sparse_plaintexts_match_dense() {
    let ev = sim(8);
    let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
    let a = ev.encrypt(&v, 2, S).unwrap();
    let sparse = SlotData::Sparse { len: 8, idx: vec![1, 6, 3], val: vec![2.0, -1.0, 0.25] };
    let dense = sparse.to_dense();
    let ps = ev.encode(&PlainVector { data: sparse.clone(), level: 2, scale: 1.0 }).unwrap();
    let pd = ev.encode(&PlainVector::dense(dense, 2, 1.0)).unwrap();
    let xs = ev.mult_plain(&a, &ps).unwrap();
    let xd = ev.mult_plain(&a, &pd).unwrap();
    assert_eq!(ev.decrypt(&xs).unwrap(), ev.decrypt(&xd).unwrap());
    let rs = ev.rot(&xs, 3).unwrap();
    let rd = ev.rot(&xd, 3).unwrap();
    assert_eq!(ev.decrypt(&rs).unwrap(), ev.decrypt(&rd).unwrap());
    assert_eq!(sparse.rotated(3).to_dense(), {
        let mut d = sparse.to_dense();
        d.rotate_left(3);
        d
    });
}

#[test]
fn fixed_point_addition_is_order_independent() {
    let ev: Evaluator<Simulator<Fixed>> = Evaluator::new(Simulator::new(4, ModulusLadder::hear()));
    let xs: Vec<Vec<f64>> = vec![vec![1e-3, 0.1, 7.0, -3.3], vec![0.3, 4e5, -0.7, 2.2], vec![-4e5, 0.2, 0.1, 0.1]];
    let cts: Vec<_> = xs.iter().map(|x| ev.encrypt(x, 3, S).unwrap()).collect();
    let fwd = ev.add(&ev.add(&cts[0], &cts[1]).unwrap(), &cts[2]).unwrap();
    let rev = ev.add(&ev.add(&cts[2], &cts[1]).unwrap(), &cts[0]).unwrap();
    assert_eq!(ev.decrypt(&fwd).unwrap(), ev.decrypt(&rev).unwrap());
    let half = ev.encrypt(&[0.5; 4], 3, S).unwrap();
    let sq = ev.decrypt(&ev.mult(&half, &half).unwrap()).unwrap();
    assert_eq!(sq, vec![0.25; 4]);
    assert_eq!(ev.encrypt(&[1e8; 4], 3, S).unwrap_err(), BackendError::Overflow);
    let big = ev.encrypt(&[3e5; 4], 3, S).unwrap();
    assert_eq!(ev.add(&big, &big).unwrap_err(), BackendError::Overflow);
}

#[derive(Debug, Clone)]
enum Op {
    Add(usize, usize),
    Mult(usize, usize),
    MultPlain(usize, usize),
    Rot(usize, isize),
    Rescale(usize),
}

fn op_strategy(n: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..n, 0..n).prop_map(|(a, b)| Op::Add(a, b)),
        (0..n, 0..n).prop_map(|(a, b)| Op::Mult(a, b)),
        (0..n, 0..4usize).prop_map(|(a, p)| Op::MultPlain(a, p)),
        (0..n, -15isize..16).prop_map(|(a, k)| Op::Rot(a, k)),
        (0..n).prop_map(Op::Rescale),
    ]
}

proptest! {
    #[test]
    fn simulator_is_an_exact_homomorphism(
        inputs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 16), 3),
        plains in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 16), 4),
        ops in prop::collection::vec(op_strategy(3), 1..25),
    ) {
        let ev = sim(16);
        let mut cts: Vec<_> = inputs.iter().map(|v| ev.encrypt(v, 12, 1.0).unwrap()).collect();
        let mut raw = inputs.clone();
        let pts: Vec<_> = plains.iter().map(|p| ev.encode(&PlainVector::dense(p.clone(), 12, 1.0)).unwrap()).collect();
        for op in ops {
            // Keep every ciphertext at the same level and scale so that any op is legal.
            match op {
                Op::Add(a, b) => {
                    cts[a] = ev.add(&cts[a], &cts[b]).unwrap();
                    raw[a] = raw[a].iter().zip(&raw[b]).map(|(x, y)| x + y).collect();
                }
                Op::Mult(a, b) => {
                    cts[a] = ev.mult(&cts[a], &cts[b]).unwrap();
                    raw[a] = raw[a].iter().zip(&raw[b]).map(|(x, y)| x * y).collect();
                }
                Op::MultPlain(a, p) => {
                    cts[a] = ev.mult_plain(&cts[a], &pts[p]).unwrap();
                    raw[a] = raw[a].iter().zip(&plains[p]).map(|(x, y)| x * y).collect();
                }
                Op::Rot(a, k) => {
                    cts[a] = ev.rot(&cts[a], k).unwrap();
                    raw[a].rotate_left(k.rem_euclid(16) as usize);
                }
                Op::Rescale(a) => {
                    let r = ev.rescale(&cts[a]).unwrap();
                    prop_assert_eq!(r.level(), 11);
                    prop_assert_eq!(ev.decrypt(&r).unwrap(), ev.decrypt(&cts[a]).unwrap());
                }
            }
        }
        for (ct, r) in cts.iter().zip(&raw) {
            let d = ev.decrypt(ct).unwrap();
            for (x, y) in d.iter().zip(r) {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
        prop_assert_eq!(ev.counters().total().rotations(), ev.backend().permutations());
    }

    #[test]
    fn rot_many_equals_individual_rotations(
        v in prop::collection::vec(-1.0f64..1.0, 32),
        ks in prop::collection::vec(-31isize..32, 1..8),
    ) {
        let ev = sim(32);
        let a = ev.encrypt(&v, 4, S).unwrap();
        let many = ev.rot_many(&a, &ks).unwrap();
        for (k, m) in ks.iter().zip(&many) {
            prop_assert_eq!(ev.decrypt(m).unwrap(), ev.decrypt(&ev.rot(&a, *k).unwrap()).unwrap());
        }
        let c = ev.counters().total();
        prop_assert_eq!(c.rotations(), ev.backend().permutations());
        let mut distinct: Vec<isize> = ks.iter().map(|k| k.rem_euclid(32)).filter(|&k| k != 0).collect();
        distinct.sort();
        distinct.dedup();
        prop_assert_eq!(c.hoisted_rot_total as usize, distinct.len());
    }

    #[test]
    fn add_commutes(a in prop::collection::vec(-1e3f64..1e3, 8), b in prop::collection::vec(-1e3f64..1e3, 8)) {
        let ev = sim(8);
        let x = ev.encrypt(&a, 1, S).unwrap();
        let y = ev.encrypt(&b, 1, S).unwrap();
        prop_assert_eq!(ev.decrypt(&ev.add(&x, &y).unwrap()).unwrap(), ev.decrypt(&ev.add(&y, &x).unwrap()).unwrap());
        let sq = ev.decrypt(&ev.mult(&x, &x).unwrap()).unwrap();
        prop_assert!(sq.iter().all(|&s| s >= 0.0));
    }
}

proptest! {
    #[test]
    fn fused_multiply_accumulate_matches_separate_ops(
        a in prop::collection::vec(-10f64..10.0, 8),
        b in prop::collection::vec(-10f64..10.0, 8),
        w in prop::collection::vec(-2f64..2.0, 8),
        mask in prop::collection::vec(any::<bool>(), 8),
        lanes in 1usize..4,
    ) {
        let ev: Evaluator<Simulator<Fixed>> = Evaluator::new(Simulator::with_lanes(8, ModulusLadder::hear(), lanes));
        let idx: Vec<u32> = (0..8u32).filter(|&i| mask[i as usize]).collect();
        let val: Vec<f64> = idx.iter().map(|&i| w[i as usize]).collect();
        for data in [SlotData::Dense(w.clone()), SlotData::Sparse { len: 8, idx, val }] {
            let p = ev.encode(&PlainVector { data, level: 4, scale: 2.0 }).unwrap();
            let x = ev.encrypt(&a, 4, 3.0).unwrap();
            let y = ev.encrypt(&b, 4, 6.0).unwrap();
            let separate = ev.add(&y, &ev.mult_plain(&x, &p).unwrap()).unwrap();
            let before = ev.counters().total();
            let mut acc = Some(y.clone());
            ev.mult_plain_acc(&mut acc, &x, &p).unwrap();
            let used = ev.counters().total().delta(&before);
            prop_assert_eq!((used.mult_plain, used.add), (1, 1));
            let fused = acc.unwrap();
            prop_assert_eq!(ev.decrypt(&fused).unwrap(), ev.decrypt(&separate).unwrap());
            prop_assert_eq!(ev.backend().decrypt_lanes(fused.handle()).unwrap(), ev.backend().decrypt_lanes(separate.handle()).unwrap());
            let mut bad = Some(ev.encrypt(&b, 4, 5.0).unwrap());
            let err = ev.mult_plain_acc(&mut bad, &x, &p).unwrap_err();
            prop_assert!(matches!(err, BackendError::ScaleMismatch { .. }), "{:?}", err);
        }
    }
}
