//! Real trigonometric basis of the cutoff state space.
//!
//! A field with cutoff `M` is stored as `2M+1` real coefficients: `cos 0` at
//! index 0, then `cos n` at `2n-1` and `sin n` at `2n` for `n = 1..=M`. The full
//! state is `(phi, pi, r1, r2)`, so it has dimension `4M+4`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

/// Which component a state index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Phi(usize, Trig),
    Pi(usize, Trig),
    R(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Basis {
    m: usize,
}

impl Basis {
    pub fn new(m: usize) -> Self {
        Self { m }
    }

    /// Recovers the cutoff from a state length, if it has the form `4M+4`.
    pub fn from_dim(dim: usize) -> Option<Self> {
        (dim >= 4 && dim.is_multiple_of(4)).then(|| Self::new(dim / 4 - 1))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        4 * self.m + 4
    }

    /// Number of real coefficients of one field.
    pub fn field_len(&self) -> usize {
        2 * self.m + 1
    }

    /// Field index of `cos n` or `sin n`. `sin 0` does not exist.
    pub fn field_index(&self, n: usize, trig: Trig) -> usize {
        assert!(n <= self.m, "wave number {n} above cutoff {}", self.m);
        match (n, trig) {
            (0, Trig::Cos) => 0,
            (0, Trig::Sin) => panic!("sin 0 is not a basis element"),
            (n, Trig::Cos) => 2 * n - 1,
            (n, Trig::Sin) => 2 * n,
        }
    }

    pub fn wave_number(&self, k: usize) -> usize {
        k.div_ceil(2)
    }

    pub fn trig(&self, k: usize) -> Trig {
        if k == 0 || k % 2 == 1 {
            Trig::Cos
        } else {
            Trig::Sin
        }
    }

    pub fn phi(&self, k: usize) -> usize {
        k
    }

    pub fn pi(&self, k: usize) -> usize {
        self.field_len() + k
    }

    pub fn r(&self, i: usize) -> usize {
        assert!(i < 2);
        2 * self.field_len() + i
    }

    pub fn slot(&self, idx: usize) -> Slot {
        let p = self.field_len();
        if idx < p {
            Slot::Phi(self.wave_number(idx), self.trig(idx))
        } else if idx < 2 * p {
            Slot::Pi(self.wave_number(idx - p), self.trig(idx - p))
        } else {
            Slot::R(idx - 2 * p)
        }
    }

    /// `∫ b_k² dx` for the field basis function at index `k`.
    pub fn l2_weight(&self, k: usize) -> f64 {
        if k == 0 {
            2.0 * PI
        } else {
            PI
        }
    }

    /// Weights of the bilinear pairing on full states: `<f, X> = Σ w_k f_k X_k`.
    pub fn pairing_weights(&self) -> Vec<f64> {
        let p = self.field_len();
        let mut w = Vec::with_capacity(self.dim());
        for _ in 0..2 {
            w.extend((0..p).map(|k| self.l2_weight(k)));
        }
        w.extend([1.0, 1.0]);
        w
    }

    /// Diagonal of the energy inner product in this basis.
    pub fn energy_weights(&self) -> Vec<f64> {
        self.sobolev_weights(1.0)
    }

    /// Diagonal of the `H_s ⊕ H_{s-1} ⊕ C ⊕ C` inner product.
    pub fn sobolev_weights(&self, s: f64) -> Vec<f64> {
        let p = self.field_len();
        let mut w = Vec::with_capacity(self.dim());
        for k in 0..p {
            let n = self.wave_number(k) as f64;
            w.push(self.l2_weight(k) * (n * n + 1.0).powf(s));
        }
        for k in 0..p {
            let n = self.wave_number(k) as f64;
            w.push(self.l2_weight(k) * (n * n + 1.0).powf(s - 1.0));
        }
        w.extend([1.0, 1.0]);
        w
    }

    /// Real field coefficients to the complex table `c[n + M]`, `n ∈ [-M, M]`.
    pub fn to_complex<T>(&self, real: &[T]) -> Vec<Complex64>
    where
        T: Copy + Into<Complex64>,
    {
        assert_eq!(real.len(), self.field_len());
        let m = self.m;
        let mut c = vec![Complex64::new(0.0, 0.0); 2 * m + 1];
        c[m] = real[0].into();
        let i = Complex64::i();
        for n in 1..=m {
            let a: Complex64 = real[2 * n - 1].into();
            let b: Complex64 = real[2 * n].into();
            c[m + n] = (a - i * b) * 0.5;
            c[m - n] = (a + i * b) * 0.5;
        }
        c
    }

    /// Inverse of [`Basis::to_complex`] for tables satisfying the reality constraint.
    pub fn from_complex(&self, c: &[Complex64]) -> Vec<f64> {
        assert_eq!(c.len(), 2 * self.m + 1);
        let m = self.m;
        let mut out = vec![0.0; self.field_len()];
        out[0] = c[m].re;
        for n in 1..=m {
            out[2 * n - 1] = 2.0 * c[m + n].re;
            out[2 * n] = -2.0 * c[m + n].im;
        }
        out
    }

    /// `(c(n), c(-n))` of a possibly complex field coefficient vector.
    pub fn fourier_pair(&self, field: &[Complex64], n: usize) -> (Complex64, Complex64) {
        if n == 0 {
            return (field[0], field[0]);
        }
        let i = Complex64::i();
        let a = field[2 * n - 1];
        let b = field[2 * n];
        ((a - i * b) * 0.5, (a + i * b) * 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_layout() {
        let b = Basis::new(3);
        assert_eq!(b.dim(), 16);
        assert_eq!(b.field_index(0, Trig::Cos), 0);
        assert_eq!(b.field_index(2, Trig::Cos), 3);
        assert_eq!(b.field_index(2, Trig::Sin), 4);
        assert_eq!(b.pi(0), 7);
        assert_eq!(b.r(1), 15);
        assert_eq!(b.slot(4), Slot::Phi(2, Trig::Sin));
        assert_eq!(b.slot(8), Slot::Pi(1, Trig::Cos));
        assert_eq!(b.slot(14), Slot::R(0));
        assert_eq!(Basis::from_dim(16), Some(b));
        assert_eq!(Basis::from_dim(15), None);
    }

    #[test]
    fn complex_round_trip() {
        let b = Basis::new(4);
        let real: Vec<f64> = (0..9).map(|k| (k as f64 * 0.7).sin()).collect();
        let c = b.to_complex(&real);
        for n in 1..=4 {
            assert!((c[4 + n] - c[4 - n].conj()).norm() < 1e-15);
        }
        let back = b.from_complex(&c);
        for (x, y) in real.iter().zip(&back) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn parseval_weights() {
        // ∫ u² = 2π Σ |c(n)|²
        let b = Basis::new(3);
        let real = [0.3, -1.0, 0.5, 2.0, 0.1, -0.4, 0.9];
        let c = b.to_complex(&real);
        let lhs: f64 = real
            .iter()
            .enumerate()
            .map(|(k, x)| b.l2_weight(k) * x * x)
            .sum();
        let rhs: f64 = 2.0 * PI * c.iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
