use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::keys::galois_element;
use super::serial;
use super::*;
use crate::backend::{BackendError, Evaluator, PlainVector, SlotBackend};

fn engine(profile: Profile, rotations: &[(usize, usize)]) -> CkksEngine {
    let params = CkksParams::generate(profile).unwrap();
    let ctx = Arc::new(Context::new(params).unwrap());
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let set: BTreeMap<usize, usize> = rotations.iter().copied().collect();
    let keys = Arc::new(keygen(&ctx, &set, &mut rng));
    CkksEngine::with_rng(ctx, keys, ChaCha20Rng::seed_from_u64(8))
}

fn unit_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encode_decode_without_noise() {
    let e = engine(Profile::ToyFast, &[]);
    let v = unit_vector(e.slots(), 1);
    let p = e.encode_values(&v, 3, 2f64.powi(31)).unwrap();
    assert_eq!(p.limb_count(), 4);
    assert!(max_err(&e.decode_poly(&p, 3, 2f64.powi(31)), &v) < 2f64.powi(-20));
    let z = e.encode_values(&vec![0.0; e.slots()], 2, 2f64.powi(31)).unwrap();
    assert!(z.limbs.iter().all(|l| l.iter().all(|&x| x == 0)));
}

#[test]
fn encode_rejects_coefficients_beyond_the_modulus() {
    let e = engine(Profile::ToyFast, &[]);
    let v = vec![4.0; e.slots()];
    assert_eq!(e.encode_values(&v, 0, 2f64.powi(31)), Err(BackendError::EncodeOverflow(0)));
}

#[test]
fn round_trip_secret_and_public_key() {
    let e = engine(Profile::ToyFast, &[]);
    let top = e.ladder().top();
    let scale = e.ladder().prime(top);
    let v = unit_vector(e.slots(), 2);
    let ct = e.encrypt(&v, top, scale).unwrap();
    assert!(max_err(&e.decrypt(&ct, top, scale).unwrap(), &v) < 2f64.powi(-20));
    let ct = e.encrypt_public(&v, top, scale).unwrap();
    assert!(max_err(&e.decrypt(&ct, top, scale).unwrap(), &v) < 2f64.powi(-12));
}

#[test]
fn decrypt_needs_the_secret() {
    let e = engine(Profile::ToyFast, &[]);
    let public = CkksEngine::new(e.context().clone(), Arc::new(e.keys().public_only()));
    let ct = public.encrypt(&vec![0.5; e.slots()], 2, 2f64.powi(30)).unwrap();
    assert_eq!(public.decrypt(&ct, 2, 2f64.powi(30)), Err(BackendError::MissingSecretKey));
    assert!(max_err(&e.decrypt(&ct, 2, 2f64.powi(30)).unwrap(), &vec![0.5; e.slots()]) < 2f64.powi(-12));
}

#[test]
fn mult_then_rescale_matches_product() {
    let ev = Evaluator::new(engine(Profile::ToyFast, &[]));
    let top = ev.top_level();
    let s = ev.ladder().prime(top);
    let (u, v) = (unit_vector(ev.slots(), 3), unit_vector(ev.slots(), 4));
    let (cu, cv) = (ev.encrypt(&u, top, s).unwrap(), ev.encrypt(&v, top, s).unwrap());
    let prod = ev.rescale(&ev.mult(&cu, &cv).unwrap()).unwrap();
    assert_eq!(prod.level(), top - 1);
    let want: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    assert!(max_err(&ev.decrypt(&prod).unwrap(), &want) < 2f64.powi(-15));
}

#[test]
fn plaintext_ops_and_fused_accumulate() {
    let ev = Evaluator::new(engine(Profile::ToyHear, &[]));
    let top = ev.top_level();
    let s = ev.ladder().prime(top);
    let (u, w, b) = (unit_vector(ev.slots(), 5), unit_vector(ev.slots(), 6), unit_vector(ev.slots(), 7));
    let cu = ev.encrypt(&u, top, s).unwrap();
    let pw = ev.encode(&PlainVector::dense(w.clone(), top, s)).unwrap();
    let mut acc = None;
    ev.mult_plain_acc(&mut acc, &cu, &pw).unwrap();
    ev.mult_plain_acc(&mut acc, &cu, &pw).unwrap();
    let out = ev.rescale(&acc.unwrap()).unwrap();
    let pb = ev.encode(&PlainVector::dense(b.clone(), top - 1, out.scale())).unwrap();
    let out = ev.add_plain(&out, &pb).unwrap();
    let want: Vec<f64> = (0..u.len()).map(|i| 2.0 * u[i] * w[i] + b[i]).collect();
    assert!(max_err(&ev.decrypt(&out).unwrap(), &want) < 2f64.powi(-15));
}

#[test]
fn rotation_is_left_slot_shift() {
    let ev = Evaluator::new(engine(Profile::ToyFast, &[(1, 12), (5, 12), (2047, 12)]));
    let top = ev.top_level();
    let s = ev.ladder().prime(top);
    let v = unit_vector(ev.slots(), 9);
    let ct = ev.encrypt(&v, top, s).unwrap();
    for k in [1isize, 5, -1] {
        let r = ev.rot(&ct, k).unwrap();
        let mut want = v.clone();
        want.rotate_left(k.rem_euclid(v.len() as isize) as usize);
        assert!(max_err(&ev.decrypt(&r).unwrap(), &want) < 2f64.powi(-15), "k = {k}");
    }
}

#[test]
fn hoisted_rotations_match_independent_ones() {
    let ev = Evaluator::new(engine(Profile::ToyFast, &[(1, 12), (2, 12), (3, 12)]));
    let top = ev.top_level();
    let s = ev.ladder().prime(top);
    let v = unit_vector(ev.slots(), 10);
    let ct = ev.encrypt(&v, top, s).unwrap();
    let hoisted = ev.rot_many(&ct, &[1, 2, 3]).unwrap();
    for (h, k) in hoisted.iter().zip(1..) {
        let single = ev.rot(&ct, k).unwrap();
        let (a, b) = (ev.decrypt(h).unwrap(), ev.decrypt(&single).unwrap());
        assert!(max_err(&a, &b) < 2f64.powi(-15));
    }
}

#[test]
fn keys_serve_lower_levels_only() {
    let ev = Evaluator::new(engine(Profile::ToyFast, &[(4, 6)]));
    let s = 2f64.powi(31);
    let v = unit_vector(ev.slots(), 11);
    let hi = ev.encrypt(&v, 7, s).unwrap();
    assert_eq!(ev.rot(&hi, 4).unwrap_err(), BackendError::MissingRotationKey { amount: 4, level: 7 });
    assert_eq!(ev.rot(&hi, 3).unwrap_err(), BackendError::MissingRotationKey { amount: 3, level: 7 });
    for level in [6, 2, 0] {
        let ct = ev.encrypt(&v, level, s).unwrap();
        let mut want = v.clone();
        want.rotate_left(4);
        assert!(max_err(&ev.decrypt(&ev.rot(&ct, 4).unwrap()).unwrap(), &want) < 2f64.powi(-12), "level {level}");
    }
}

#[test]
fn rescale_drops_one_level_with_the_configured_prime() {
    let ev = Evaluator::new(engine(Profile::ToyHear, &[]));
    let top = ev.top_level();
    let q_top = ev.backend().context().params.primes[top] as f64;
    let s = 2f64.powi(35);
    let v = unit_vector(ev.slots(), 12);
    let ct = ev.encrypt(&v, top, s).unwrap();
    let ones = ev.encode(&PlainVector::dense(vec![1.0; ev.slots()], top, q_top)).unwrap();
    let r = ev.rescale(&ev.mult_plain(&ct, &ones).unwrap()).unwrap();
    assert_eq!(r.level(), top - 1);
    assert_eq!(r.handle().c0.limb_count(), top);
    assert_eq!(r.scale(), s * q_top / q_top);
    assert!(max_err(&ev.decrypt(&r).unwrap(), &v) < 2f64.powi(-15));
    let d = ev.mod_down(&r, 3).unwrap();
    assert_eq!((d.level(), d.handle().c0.limb_count()), (3, 4));
    assert!(max_err(&ev.decrypt(&d).unwrap(), &v) < 2f64.powi(-15));
}

#[test]
fn missing_relin_key() {
    let e = engine(Profile::ToyFast, &[]);
    let mut keys = (**e.keys()).clone();
    keys.relin = None;
    let ev = Evaluator::new(CkksEngine::new(e.context().clone(), Arc::new(keys)));
    let ct = ev.encrypt(&vec![0.1; ev.slots()], 3, 2f64.powi(31)).unwrap();
    assert_eq!(ev.mult(&ct, &ct).unwrap_err(), BackendError::MissingRelinKey);
}

#[test]
fn galois_elements() {
    assert_eq!(galois_element(0, 16), 1);
    assert_eq!(galois_element(1, 16), 5);
    assert_eq!(galois_element(3, 16), 125 % 32);
}

#[test]
fn key_sizes_follow_levels() {
    let e = engine(Profile::ToyFast, &[(1, 3), (2, 12)]);
    let n = e.context().n();
    let r = &e.keys().rotations;
    assert_eq!(r[&1].key.bytes(), keys::switch_key_bytes(n, 3));
    assert_eq!(r[&2].key.bytes(), keys::switch_key_bytes(n, 12));
    let set: BTreeMap<usize, usize> = [(1, 3), (2, 12)].into();
    assert!(e.keys().covers_exactly(&set));
    let more: BTreeMap<usize, usize> = [(1, 3), (2, 12), (3, 1)].into();
    assert!(!e.keys().covers_exactly(&more));
}

#[test]
fn containers_round_trip_and_check_parameters() {
    let e = engine(Profile::ToyFast, &[(1, 4)]);
    let params = &e.context().params;
    let v = unit_vector(e.slots(), 13);
    let ct = e.encrypt(&v, 4, 2f64.powi(31)).unwrap();
    let mut buf = Vec::new();
    serial::write_ciphertext(&mut buf, params, &ct, 2f64.powi(31)).unwrap();
    assert_eq!(&buf[..4], b"AHEC");
    let (back, level, scale) = serial::read_ciphertext(&buf[..], params).unwrap();
    assert_eq!((back == ct, level, scale), (true, 4, 2f64.powi(31)));

    let other = CkksParams::generate(Profile::ToyHear).unwrap();
    assert_eq!(serial::read_ciphertext(&buf[..], &other).unwrap_err(), CkksError::ParamsMismatch);
    assert!(matches!(serial::read_ciphertext(&buf[..buf.len() - 3], params), Err(CkksError::Format(_))));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(serial::read_ciphertext(&bad[..], params), Err(CkksError::Format(_))));

    let mut kb = Vec::new();
    serial::write_keys(&mut kb, params, e.keys()).unwrap();
    assert_eq!(&serial::read_keys(&kb[..], params).unwrap(), e.keys().as_ref());
    let mut kb = Vec::new();
    serial::write_keys(&mut kb, params, &e.keys().public_only()).unwrap();
    assert!(serial::read_keys(&kb[..], params).unwrap().secret.is_none());

    let p = e.encode(&PlainVector::dense(v, 2, 2f64.powi(28))).unwrap();
    let mut pb = Vec::new();
    serial::write_plaintext(&mut pb, params, &p, 2f64.powi(28)).unwrap();
    assert_eq!(pb.len() as u64, 4 + 2 + 2 + 32 + 4 + 8 + 4 + 4 + PlainVector::dense(vec![0.0; e.slots()], 2, 1.0).rns_bytes());
    assert_eq!(serial::read_plaintext(&pb[..], params).unwrap().0, p);
}
