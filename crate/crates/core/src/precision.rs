//! Double-double kernels for quantities below the resolution of `f64`.
//!
//! Products use Dekker splitting rather than fused multiply-add, so the cost
//! does not depend on the target's FMA support or on operand magnitudes.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

pub(crate) fn dd(x: f64) -> Dd {
    Dd { hi: x, lo: 0.0 }
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    Dd { hi: p, lo: ((ah * bh - p) + ah * bl + al * bh) + al * bl }
}

impl Dd {
    pub fn hi(self) -> f64 {
        self.hi
    }

    #[cfg(test)]
    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return dd(0.0);
        }
        let y = dd(self.hi.sqrt());
        // One Newton step: y + (x - y²) / (2y).
        y + (self - y * y) * (0.5 / y.hi)
    }
}

impl From<Dd> for f64 {
    fn from(x: Dd) -> f64 {
        x.hi + x.lo
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let s = two_sum(self.hi, b.hi);
        let t = two_sum(self.lo, b.lo);
        let v = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(v.hi, v.lo + t.lo)
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    fn add(self, b: f64) -> Dd {
        self + dd(b)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + -b
    }
}

impl Sub<f64> for Dd {
    type Output = Dd;
    fn sub(self, b: f64) -> Dd {
        self + dd(-b)
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    fn div(self, b: f64) -> Dd {
        div(self, dd(b))
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = two_prod(self.hi, b.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, b: Dd) {
        *self = *self - b;
    }
}

pub(crate) fn recip(x: Dd) -> Dd {
    let r = dd(1.0 / x.hi);
    r + r * (dd(1.0) - x * r)
}

pub(crate) fn div(a: Dd, b: Dd) -> Dd {
    let q = a * recip(b);
    // Refine against the remainder.
    q + (a - b * q) * (1.0 / b.hi)
}

/// Gauss–Legendre rule on `[-1, 1]`, nodes polished by Newton steps in double-double.
pub(crate) fn gauss_legendre_dd(k: usize) -> (Vec<Dd>, Vec<Dd>) {
    let (x0, _) = crate::linalg::gauss_legendre(k);
    let legendre = |x: Dd| {
        let (mut p0, mut p1) = (dd(1.0), x);
        for j in 2..=k {
            let j = j as f64;
            let p2 = (x * p1 * (2.0 * j - 1.0) - p0 * (j - 1.0)) / j;
            p0 = p1;
            p1 = p2;
        }
        // P_k and P_k' from the derivative identity.
        let deriv = div((x * p1 - p0) * (k as f64), x * x - 1.0);
        (p1, deriv)
    };
    let mut nodes = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for &guess in &x0 {
        let mut x = dd(guess);
        for _ in 0..3 {
            let (p, dp) = legendre(x);
            x -= div(p, dp);
        }
        let (_, dp) = legendre(x);
        nodes.push(x);
        weights.push(div(dd(2.0), (dd(1.0) - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Dense row-major square matrix.
#[derive(Clone)]
pub(crate) struct DdMatrix {
    pub n: usize,
    pub data: Vec<Dd>,
}

impl DdMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Dd) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn mul_vec(&self, x: &[Dd], out: &mut [Dd]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut acc = dd(0.0);
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            *o = acc;
        }
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().map(|a| a.hi().abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `e^{τN} x` by a Taylor series; requires `|τ| ‖N‖ ≲ 1`.
pub(crate) fn exp_times(n: &DdMatrix, tau: Dd, x: &[Dd]) -> Vec<Dd> {
    let mut term = x.to_vec();
    let mut sum = x.to_vec();
    let mut next = vec![dd(0.0); x.len()];
    for k in 1..200 {
        n.mul_vec(&term, &mut next);
        let scale = div(tau, dd(k as f64));
        let mut size = 0.0f64;
        for (t, v) in term.iter_mut().zip(&next) {
            *t = *v * scale;
            size = size.max(t.hi().abs());
        }
        for (s, t) in sum.iter_mut().zip(term.iter_mut()) {
            if t.hi().abs() < 1e-80 {
                *t = dd(0.0);
            }
            *s += *t;
        }
        let total = sum.iter().map(|s| s.hi().abs()).fold(0.0, f64::max);
        if size <= 1e-34 * total {
            break;
        }
    }
    sum
}

/// Upper-triangular `R` of a Householder QR of the tall matrix whose columns are `cols`.
pub(crate) fn householder_r(mut cols: Vec<Vec<Dd>>) -> Vec<Vec<Dd>> {
    let n = cols.len();
    let rows = cols.first().map_or(0, Vec::len);
    for k in 0..n.min(rows) {
        let norm = cols[k][k..].iter().fold(dd(0.0), |acc, v| acc + *v * *v).sqrt();
        if norm.hi() == 0.0 {
            continue;
        }
        let alpha = if cols[k][k].hi() > 0.0 { -norm } else { norm };
        let mut v: Vec<Dd> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vv = v.iter().fold(dd(0.0), |acc, x| acc + *x * *x);
        if vv.hi() == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(k) {
            let dot = v.iter().zip(&col[k..]).fold(dd(0.0), |acc, (a, b)| acc + *a * *b);
            let f = div(dot * 2.0, vv);
            for (c, a) in col[k..].iter_mut().zip(&v) {
                *c -= f * *a;
            }
        }
    }
    cols.into_iter().map(|c| c[..n].to_vec()).collect()
}

/// Inverse of an upper-triangular matrix given by columns, returned row-major in `f64`.
pub(crate) fn upper_inverse(r_cols: &[Vec<Dd>]) -> Vec<Vec<f64>> {
    let n = r_cols.len();
    let r = |i: usize, j: usize| r_cols[j][i];
    let mut inv = vec![vec![dd(0.0); n]; n];
    for j in 0..n {
        inv[j][j] = recip(r(j, j));
        for i in (0..j).rev() {
            let mut acc = dd(0.0);
            for k in i + 1..=j {
                acc += r(i, k) * inv[k][j];
            }
            inv[i][j] = -div(acc, r(i, i));
        }
    }
    inv.into_iter().map(|row| row.into_iter().map(f64::from).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre_dd(6);
        // ∫ x^10 over [-1, 1] = 2/11.
        let s = x.iter().zip(&w).fold(dd(0.0), |acc, (x, w)| acc + *w * (0..10).fold(dd(1.0), |p, _| p * *x));
        let err = f64::from(s - div(dd(2.0), dd(11.0))).abs();
        assert!(err < 1e-30, "{err:e} {:?}", w);
    }

    #[test]
    fn division_is_double_double() {
        let third = div(dd(1.0), dd(3.0));
        assert!((third * 3.0 - dd(1.0)).abs().hi() < 1e-31);
    }

    #[test]
    fn exponential_of_rotation() {
        let n = DdMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 1) => dd(1.0),
            (1, 0) => dd(-1.0),
            _ => dd(0.0),
        });
        let y = exp_times(&n, dd(0.5), &[dd(1.0), dd(0.0)]);
        assert!((f64::from(y[0]) - 0.5f64.cos()).abs() < 1e-15);
        assert!((y[0] * y[0] + y[1] * y[1] - dd(1.0)).abs().hi() < 1e-30);
    }

    #[test]
    fn triangular_inverse() {
        let cols = vec![vec![dd(2.0), dd(0.0)], vec![dd(1.0), dd(4.0)]];
        let inv = upper_inverse(&cols);
        assert_eq!(inv, vec![vec![0.5, -0.125], vec![0.0, 0.25]]);
    }
}
