use cutoff_wave::control;
use cutoff_wave::model::apply_nonlinearity;
use cutoff_wave::perturbation::{mu_pair, resolvent_coupling_norm};
use cutoff_wave::stationary::lyapunov_stationary;
use cutoff_wave::{assemble, decompose, make_coupling, CouplingSpec, GSpec, ModelConfig};
use num_complex::Complex64;
use std::f64::consts::PI;

fn c64(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[test]
fn pseudo_spectral_tanh_of_cosine_matches_quadrature() {
    let m = 8;
    let mut phi = vec![c64(0.0); 2 * m + 1];
    phi[m + 1] = c64(0.5);
    phi[m - 1] = c64(0.5);
    let got = apply_nonlinearity(&GSpec::ScaledTanh { gamma: 1.0 }, &phi, 4);
    // Periodic trapezoid rule on a fine grid converges geometrically here.
    let grid = 4096;
    for n in -(m as i64)..=(m as i64) {
        let want: Complex64 = (0..grid)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / grid as f64;
                Complex64::from_polar(x.cos().tanh(), -(n as f64) * x)
            })
            .sum::<Complex64>()
            / grid as f64;
        let err = (got[(n + m as i64) as usize] - want).norm();
        assert!(err < 1e-6, "n={n}: {err:e}");
    }
}

#[test]
fn mu_matches_projection_by_quadrature() {
    let config = ModelConfig::new(8, 0.25, 1.0, 2.0, GSpec::Zero);
    let coupling = make_coupling(&config).unwrap();
    let n = 4i64;
    let grid = 512;
    let xs: Vec<f64> = (0..grid).map(|j| 2.0 * PI * j as f64 / grid as f64).collect();
    let alpha = |i: usize, x: f64| -> f64 {
        (-8i64..=8)
            .map(|k| coupling.alpha(i, k) * Complex64::from_polar(1.0, k as f64 * x))
            .sum::<Complex64>()
            .re
    };
    let dx = 2.0 * PI / grid as f64;
    let waves = [n, -n];
    let mut mat = [[c64(0.0); 2]; 2];
    for (a, &p) in waves.iter().enumerate() {
        for (b, &q) in waves.iter().enumerate() {
            for i in 0..2 {
                let pair: Complex64 = xs.iter().map(|&y| alpha(i, y) * Complex64::from_polar(dx, q as f64 * y)).sum();
                let proj: Complex64 = xs
                    .iter()
                    .map(|&x| alpha(i, x) * Complex64::from_polar(dx / (2.0 * PI), -(p as f64) * x))
                    .sum();
                mat[a][b] -= proj * pair;
            }
        }
    }
    let tr = mat[0][0] + mat[1][1];
    let det = mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0];
    let disc = (tr * tr - det * 4.0).sqrt();
    let mut ev = [((tr + disc) / 2.0).re, ((tr - disc) / 2.0).re];
    ev.sort_by(|a, b| b.total_cmp(a));
    let p = mu_pair(4, &coupling);
    for (a, b) in ev.iter().zip(&p.mu) {
        assert!((a - b).abs() < 1e-10 * p.mu[1].abs(), "{ev:?} {:?}", p.mu);
    }
}

#[test]
fn reservoir_components_follow_field_momentum() {
    let config = ModelConfig::new(4, 0.25, 1.0, 2.0, GSpec::Zero);
    let coupling = make_coupling(&config).unwrap();
    let op = assemble(&config, &coupling).unwrap();
    let dec = decompose(&op).unwrap();
    let b = op.basis();
    for mode in &dec.modes {
        let e_pi = mode.e_pi(&b);
        for i in 0..2 {
            let a = coupling.real_coeffs(i);
            let proj: Complex64 = e_pi.iter().enumerate().map(|(k, z)| z * a[k] * b.l2_weight(k)).sum();
            let want = proj / (1.0 + mode.lambda);
            let err = (mode.e_r(&b)[i] - want).norm();
            assert!(err < 1e-8 * (1.0 + want.norm()), "{:?}: {err:e}", mode.label);
        }
    }
}

#[test]
fn single_mode_resolvent_is_closed_form() {
    let m = 12;
    for n in [4usize, 8, 12] {
        let mut a1 = vec![c64(0.0); 2 * m + 1];
        a1[m + n] = c64(1.0);
        a1[m - n] = c64(1.0);
        let spec = CouplingSpec::from_tables(m, 0.0, a1, vec![c64(0.0); 2 * m + 1]).unwrap();
        let got = resolvent_coupling_norm(n, &spec).unwrap();
        let want = 8.0 * PI / n as f64;
        assert!((got / want - 1.0).abs() < 1e-12, "n={n}: {got} {want}");
    }
}

#[test]
fn identical_components_lose_controllability() {
    let config = ModelConfig::new(2, 0.25, 1.0, 1.0, GSpec::Zero);
    let coupling = make_coupling(&config).unwrap();
    let good = assemble(&config, &coupling).unwrap();
    let bad = assemble(&config, &coupling.with_identical_components()).unwrap();
    assert!(control::krylov_rank(&bad).unwrap().rank < bad.dim());
    let g = control::gramian_extended(&good, 2.0).unwrap();
    let d = control::gramian_extended(&bad, 2.0).unwrap();
    assert!(g.min_eig_resolved());
    assert!(d.min_eig < 1e-6 * g.min_eig, "{} vs {}", d.min_eig, g.min_eig);
}

#[test]
fn equal_temperatures_give_equipartition() {
    let config = ModelConfig::new(4, 0.25, 1.5, 1.5, GSpec::Zero);
    let op = assemble(&config, &make_coupling(&config).unwrap()).unwrap();
    let dec = decompose(&op).unwrap();
    let sigma = lyapunov_stationary(&op, &dec).unwrap().sigma;
    let w = op.basis().energy_weights();
    for i in 0..op.dim() {
        for j in 0..op.dim() {
            // Energy-coordinate covariance is T/2 times the identity.
            let e = sigma[[i, j]] * (w[i] * w[j]).sqrt();
            let want = if i == j { 0.75 } else { 0.0 };
            assert!((e - want).abs() < 1e-8, "({i},{j}): {e}");
        }
    }
}
