//! Canonical-embedding encoder: slot vectors to integer coefficient vectors and back.
//!
//! Slot `j` is the evaluation at `zeta^(5^j)` with `zeta = exp(i*pi/N)`, so the
//! automorphism `X -> X^(5^k)` rotates slots left by `k`.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct Encoder {
    n: usize,
    slots: usize,
    rot_group: Vec<usize>,
    // exp(2 pi i j / 2N) for j in 0..=2N.
    ksi: Vec<Complex64>,
}

fn bit_reverse_in_place<T>(v: &mut [T]) {
    let n = v.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            v.swap(i, j);
        }
    }
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let m = 2 * n;
        let slots = n / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi = (0..=m).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64)).collect();
        Encoder { n, slots, rot_group, ksi }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Evaluates the slot polynomial: coefficient space to slot space.
    fn fft_special(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.n;
        bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let (lenh, lenq) = (len >> 1, len << 2);
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * m / lenq;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len <<= 1;
        }
    }

    fn fft_special_inv(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.n;
        let mut len = size;
        while len >= 2 {
            let (lenh, lenq) = (len >> 1, len << 2);
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - self.rot_group[j] % lenq) * m / lenq;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    /// Real coefficients (before rounding) of the polynomial carrying `values * scale`.
    pub fn embed(&self, values: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(values.len(), self.slots);
        let mut u: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_special_inv(&mut u);
        let mut out = vec![0.0; self.n];
        for (i, z) in u.iter().enumerate() {
            out[i] = z.re * scale;
            out[i + self.slots] = z.im * scale;
        }
        out
    }

    /// Real parts of the slots of a real coefficient vector, divided by `scale`.
    pub fn project(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let mut u: Vec<Complex64> =
            (0..self.slots).map(|i| Complex64::new(coeffs[i], coeffs[i + self.slots]) / scale).collect();
        self.fft_special(&mut u);
        u.into_iter().map(|z| z.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_encode_to_zero() {
        let e = Encoder::new(64);
        assert!(e.embed(&[0.0; 32], 1e9).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn embed_project_round_trip() {
        let e = Encoder::new(256);
        let v: Vec<f64> = (0..128).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let back = e.project(&e.embed(&v, 2f64.powi(30)), 2f64.powi(30));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn slot_is_evaluation_at_five_power_roots() {
        // Direct evaluation of the coefficient polynomial at zeta^(5^j).
        let n = 32;
        let e = Encoder::new(n);
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.7).collect();
        let c = e.embed(&v, 1.0);
        let mut g = 1usize;
        for &want in &v {
            let z = Complex64::from_polar(1.0, PI * g as f64 / n as f64);
            let val: Complex64 = c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &x| acc * z + x);
            assert!((val.re - want).abs() < 1e-9 && val.im.abs() < 1e-9);
            g = g * 5 % (2 * n);
        }
    }
}
