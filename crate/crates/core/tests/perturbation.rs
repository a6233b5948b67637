use cutoff_wave::operator::Branch;
use cutoff_wave::perturbation::{eigenvalue_approx, mu_pair, ShiftPairing};
use cutoff_wave::{assemble, decompose, make_coupling, GSpec, ModeLabel, ModelConfig};
use num_complex::Complex64;

fn shift_error(eps: f64, n: usize, sigma: i8) -> (Complex64, Complex64) {
    let mut c = ModelConfig::new(4, 0.25, 1.0, 2.0, GSpec::Zero);
    c.coupling_scale = eps;
    let coupling = make_coupling(&c).unwrap();
    let dec = decompose(&assemble(&c, &coupling).unwrap()).unwrap();
    let exact = dec.find(&ModeLabel::wave(n, sigma, Branch::Plus)).unwrap().lambda;
    let approx = eigenvalue_approx(n, sigma, Branch::Plus, &coupling, ShiftPairing::Derived);
    let free = Complex64::new(0.0, ((n * n + 1) as f64).sqrt());
    (exact - free, approx - exact)
}

#[test]
fn coupling_shift_is_quadratic_in_scale() {
    for (n, sigma) in [(2, 1), (2, -1), (3, -1), (4, 1)] {
        let (a, _) = shift_error(0.05, n, sigma);
        let (b, _) = shift_error(0.025, n, sigma);
        let r = a.norm() / b.norm();
        assert!((r - 4.0).abs() < 0.1, "n={n} σ={sigma}: {r}");
    }
}

#[test]
fn relative_shift_error_falls_with_wave_number() {
    for sigma in [1, -1] {
        let rel = |n| {
            let (s, e) = shift_error(0.05, n, sigma);
            e.norm() / s.norm()
        };
        let (low, high) = (rel(2), rel(4));
        assert!(high < 0.5 * low && high < 0.2, "σ={sigma}: {low} {high}");
    }
}

#[test]
fn mu_values_are_matrix_eigenvalues() {
    let c = ModelConfig::new(6, 0.25, 1.0, 2.0, GSpec::Zero);
    let coupling = make_coupling(&c).unwrap();
    for n in 1..=6 {
        let p = mu_pair(n, &coupling);
        let m = p.matrix;
        let trace = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        assert!((Complex64::from(p.mu[0] + p.mu[1]) - trace).norm() < 1e-12);
        assert!((Complex64::from(p.mu[0] * p.mu[1]) - det).norm() < 1e-12);
        assert!(p.mu[1] <= p.mu[0] && p.mu[0] <= 1e-14);
    }
}


#[test]
fn first_order_eigenvalue_at_moderate_wave_number() {
    let c = ModelConfig::new(128, 0.0, 1.0, 2.0, GSpec::Zero);
    let coupling = make_coupling(&c).unwrap();
    let dec = decompose(&assemble(&c, &coupling).unwrap()).unwrap();
    for sigma in [1, -1] {
        let exact = dec.find(&ModeLabel::wave(16, sigma, Branch::Plus)).unwrap().lambda;
        let approx = eigenvalue_approx(16, sigma, Branch::Plus, &coupling, ShiftPairing::Derived);
        let scale = exact.re.abs();
        assert!((approx.re - exact.re).abs() <= 0.05 * scale, "σ={sigma}: {approx} vs {exact}");
        // The imaginary error at this n is a few percent of |Re λ| on its own.
        assert!((approx - exact).norm() <= 0.1 * scale, "σ={sigma}: {approx} vs {exact}");
    }
}
