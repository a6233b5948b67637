//! Independent reference computations for the linear algebra behind the
//! stationary law and the one-step kernel.

use cutoff_wave::sde::{self, eigenbasis_covariance};
use cutoff_wave::stationary::lyapunov_stationary;
use cutoff_wave::{assemble, decompose, make_coupling, CutoffOperator, GSpec, ModelConfig};
use ndarray::{Array1, Array2};

fn op(m: usize, theta: f64) -> CutoffOperator {
    let c = ModelConfig::new(m, theta, 1.0, 2.0, GSpec::Zero);
    assemble(&c, &make_coupling(&c).unwrap()).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[[i, k]].abs().total_cmp(&a[[j, k]].abs())).unwrap();
        for j in 0..n {
            a.swap([k, j], [p, j]);
        }
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[[i, k]] / a[[k, k]];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[[i, j]] -= f * a[[k, j]];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[[i, j]] * x[j]).sum();
        x[i] = (b[i] - s) / a[[i, i]];
    }
    x
}

fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale
}

#[test]
fn lyapunov_matches_kronecker_solve() {
    for m in [1, 2] {
        let o = op(m, 0.25);
        let dec = decompose(&o).unwrap();
        let n = o.dim();
        // vec(AΣ + ΣAᵀ) = (I ⊗ A + A ⊗ I) vec(Σ), row-major vec.
        let mut k = Array2::zeros((n * n, n * n));
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    k[[i * n + j, l * n + j]] += o.a[[i, l]];
                    k[[i * n + j, i * n + l]] += o.a[[j, l]];
                }
            }
        }
        let t = o.tmat();
        let rhs = Array1::from_iter(t.iter().map(|x| -x));
        let sigma = solve(k, rhs).into_shape_with_order((n, n)).unwrap();
        let report = lyapunov_stationary(&o, &dec).unwrap();
        let err = max_rel(&report.sigma, &sigma);
        assert!(err < 1e-9, "M={m}: {err:e}");
    }
}

/// `Q' = AQ + QAᵀ + T`, `Q(0) = 0`, by classical RK4.
fn rk4_covariance(a: &Array2<f64>, t: &Array2<f64>, h: f64, steps: usize) -> Array2<f64> {
    let f = |q: &Array2<f64>| a.dot(q) + q.dot(&a.t()) + t;
    let dt = h / steps as f64;
    let mut q = Array2::zeros(a.raw_dim());
    for _ in 0..steps {
        let k1 = f(&q);
        let k2 = f(&(&q + &(&k1 * (dt / 2.0))));
        let k3 = f(&(&q + &(&k2 * (dt / 2.0))));
        let k4 = f(&(&q + &(&k3 * dt)));
        q = q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    q
}

#[test]
fn step_covariance_matches_rk4() {
    let o = op(3, 0.25);
    let dec = decompose(&o).unwrap();
    let h = 0.05;
    let reference = rk4_covariance(&o.a, &o.tmat(), h, 400);
    let q = eigenbasis_covariance(&o, &dec, h);
    assert!(max_rel(&q, &reference) < 1e-9, "{:e}", max_rel(&q, &reference));
    let kernel = sde::make_kernel(&o, &dec, h).unwrap();
    let l = &kernel.noise_factor;
    assert!(max_rel(&l.dot(&l.t()), &reference) < 1e-8);
}

#[test]
fn quadrature_and_eigenbasis_covariances_agree() {
    let o = op(4, 0.4);
    let dec = decompose(&o).unwrap();
    let a = eigenbasis_covariance(&o, &dec, 0.02);
    let b = sde::quadrature_covariance(&o, 0.02);
    assert!(max_rel(&a, &b) < 1e-9);
}

#[test]
fn propagator_matches_rk4() {
    let o = op(3, 0.25);
    let dec = decompose(&o).unwrap();
    let h = 0.05;
    let kernel = sde::make_kernel(&o, &dec, h).unwrap();
    let mut x: Array1<f64> = (0..o.dim()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
    let x0 = x.clone();
    let dt = h / 400.0;
    for _ in 0..400 {
        let k1 = o.a.dot(&x);
        let k2 = o.a.dot(&(&x + &(&k1 * (dt / 2.0))));
        let k3 = o.a.dot(&(&x + &(&k2 * (dt / 2.0))));
        let k4 = o.a.dot(&(&x + &(&k3 * dt)));
        x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    let y = kernel.propagator.dot(&x0);
    let err = (&y - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-11, "{err:e}");
}
