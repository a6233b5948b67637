//! Physical model: configuration, coupling profiles, the nonlinearity and the
//! state norms shared by every other module.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use ndarray::Array1;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Basis;

pub const DEFAULT_PHASE_OFFSET: f64 = FRAC_PI_4;
pub const DEFAULT_COUPLING_SCALE: f64 = 0.3;
pub const DEFAULT_AMPLITUDE_RATIO: f64 = 0.7;
pub const DEFAULT_DEALIAS_FACTOR: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("theta = {0} must lie in (-1/2, 1/2)")]
    Theta(f64),
    #[error("temperatures must be finite and nonnegative, got ({0}, {1})")]
    Temperature(f64, f64),
    #[error("phase offset {0} must lie strictly inside (0, pi/2)")]
    PhaseOffset(f64),
    #[error("coupling scale {0} must be positive and finite")]
    CouplingScale(f64),
    #[error("amplitude ratio {0} must be positive and finite")]
    AmplitudeRatio(f64),
    #[error("dealias factor {0} must be at least 2")]
    DealiasFactor(usize),
    #[error("nonlinearity amplitude gamma = {0} must be positive and finite")]
    Gamma(f64),
    #[error("coupling profile violates the norm condition: realized c1 = {0:e}")]
    NormCondition(f64),
    #[error("coupling table has length {found}, expected {expected}")]
    TableLength { expected: usize, found: usize },
    #[error("coupling component {component} violates the reality constraint at n = {n}")]
    Reality { component: usize, n: i64 },
}

/// Bounded odd nonlinearity `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GSpec {
    Zero,
    ScaledTanh { gamma: f64 },
    ScaledSin { gamma: f64 },
}

impl GSpec {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GSpec::Zero => 0.0,
            GSpec::ScaledTanh { gamma } => gamma * x.tanh(),
            GSpec::ScaledSin { gamma } => gamma * x.sin(),
        }
    }

    /// `sup |g|`, which is also the Lipschitz constant for both families.
    pub fn gamma(&self) -> f64 {
        match *self {
            GSpec::Zero => 0.0,
            GSpec::ScaledTanh { gamma } | GSpec::ScaledSin { gamma } => gamma,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, GSpec::Zero)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let g = self.gamma();
        if !self.is_zero() && !(g.is_finite() && g > 0.0) {
            return Err(ModelError::Gamma(g));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Cutoff: modes `|n| <= m` are kept.
    pub m: usize,
    pub theta: f64,
    pub t1: f64,
    pub t2: f64,
    /// Relative phase of the second coupling function.
    pub phase_offset: f64,
    /// Overall amplitude of both coupling functions.
    pub coupling_scale: f64,
    /// `|alpha2_hat(n)| / |alpha1_hat(n)|`.
    pub amplitude_ratio: f64,
    pub g_spec: GSpec,
    pub dealias_factor: usize,
}

impl ModelConfig {
    pub fn new(m: usize, theta: f64, t1: f64, t2: f64, g_spec: GSpec) -> Self {
        Self {
            m,
            theta,
            t1,
            t2,
            phase_offset: DEFAULT_PHASE_OFFSET,
            coupling_scale: DEFAULT_COUPLING_SCALE,
            amplitude_ratio: DEFAULT_AMPLITUDE_RATIO,
            g_spec,
            dealias_factor: DEFAULT_DEALIAS_FACTOR,
        }
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.theta > -0.5 && self.theta < 0.5) {
            return Err(ModelError::Theta(self.theta));
        }
        let temp_ok = |t: f64| t.is_finite() && t >= 0.0;
        if !temp_ok(self.t1) || !temp_ok(self.t2) {
            return Err(ModelError::Temperature(self.t1, self.t2));
        }
        if !(self.phase_offset > 0.0 && self.phase_offset < FRAC_PI_2) {
            return Err(ModelError::PhaseOffset(self.phase_offset));
        }
        if !(self.coupling_scale.is_finite() && self.coupling_scale > 0.0) {
            return Err(ModelError::CouplingScale(self.coupling_scale));
        }
        if !(self.amplitude_ratio.is_finite() && self.amplitude_ratio > 0.0) {
            return Err(ModelError::AmplitudeRatio(self.amplitude_ratio));
        }
        if self.dealias_factor < 2 {
            return Err(ModelError::DealiasFactor(self.dealias_factor));
        }
        self.g_spec.validate()
    }

    /// Both temperatures zero: the dynamics is deterministic.
    pub fn is_noiseless(&self) -> bool {
        self.t1 == 0.0 && self.t2 == 0.0
    }

    pub fn mean_temperature(&self) -> f64 {
        0.5 * (self.t1 + self.t2)
    }
}

/// Ways a coupling table can fail the standing assumptions.
#[derive(Debug, Clone, PartialEq)]
pub enum AssumptionViolation {
    ZeroCoefficient { component: usize, n: i64 },
    NormCondition { n: i64, ratio: f64 },
    Dependent { m: i64 },
}

/// Fourier tables of the two coupling functions, indexed `n + M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    m: usize,
    theta: f64,
    alpha_hat: [Vec<Complex64>; 2],
    pub c1_realized: f64,
    pub c2_realized: f64,
}

fn rho(n: i64, theta: f64) -> f64 {
    ((n * n) as f64 + 1.0).powf(0.5 * theta)
}

impl CouplingSpec {
    /// Builds a spec from explicit tables; checks length and reality only.
    pub fn from_tables(
        m: usize,
        theta: f64,
        alpha1_hat: Vec<Complex64>,
        alpha2_hat: Vec<Complex64>,
    ) -> Result<Self, ModelError> {
        let expected = 2 * m + 1;
        for (component, t) in [&alpha1_hat, &alpha2_hat].into_iter().enumerate() {
            if t.len() != expected {
                return Err(ModelError::TableLength {
                    expected,
                    found: t.len(),
                });
            }
            for n in 0..=m {
                let tol = 1e-12 * (1.0 + t[m + n].norm());
                if (t[m + n] - t[m - n].conj()).norm() > tol {
                    return Err(ModelError::Reality {
                        component,
                        n: n as i64,
                    });
                }
            }
        }
        let mut spec = Self {
            m,
            theta,
            alpha_hat: [alpha1_hat, alpha2_hat],
            c1_realized: 0.0,
            c2_realized: 0.0,
        };
        spec.realize_constants();
        Ok(spec)
    }

    pub fn zero(m: usize, theta: f64) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); 2 * m + 1];
        Self::from_tables(m, theta, z.clone(), z).expect("zero table is real")
    }

    fn realize_constants(&mut self) {
        let mut c1 = f64::INFINITY;
        let mut c2 = f64::INFINITY;
        for n in -(self.m as i64)..=(self.m as i64) {
            let a1 = self.alpha(0, n);
            let a2 = self.alpha(1, n);
            let denom = a1.norm_sqr() + a2.norm_sqr();
            let ratio = if denom > 0.0 {
                (a1 * a1 + a2 * a2).norm() / denom
            } else {
                0.0
            };
            c1 = c1.min(ratio);
            let r = rho(n, self.theta);
            for a in [a1, a2] {
                let q = a.norm() / r;
                c2 = c2.min(if q > 0.0 { q.min(1.0 / q) } else { 0.0 });
            }
        }
        self.c1_realized = c1;
        self.c2_realized = c2;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `alpha_hat_i(n)` for `i ∈ {0, 1}`.
    #[inline]
    pub fn alpha(&self, i: usize, n: i64) -> Complex64 {
        self.alpha_hat[i][(n + self.m as i64) as usize]
    }

    pub fn table(&self, i: usize) -> &[Complex64] {
        &self.alpha_hat[i]
    }

    /// `max_i |alpha_hat_i(n)|`.
    pub fn max_abs(&self, n: i64) -> f64 {
        self.alpha(0, n).norm().max(self.alpha(1, n).norm())
    }

    /// Real trigonometric coefficients of component `i`.
    pub fn real_coeffs(&self, i: usize) -> Vec<f64> {
        Basis::new(self.m).from_complex(&self.alpha_hat[i])
    }

    pub fn scaled(&self, eps: f64) -> Self {
        let t = |v: &Vec<Complex64>| v.iter().map(|z| z * eps).collect::<Vec<_>>();
        Self::from_tables(self.m, self.theta, t(&self.alpha_hat[0]), t(&self.alpha_hat[1]))
            .expect("scaling preserves reality")
    }

    /// Copy with the wave numbers `±n` removed from both components.
    /// Wave numbers above the cutoff are already absent.
    pub fn without_mode(&self, n: usize) -> Self {
        let mut tables = self.alpha_hat.clone();
        if n > self.m {
            return self.clone();
        }
        for t in &mut tables {
            t[self.m + n] = Complex64::new(0.0, 0.0);
            t[self.m - n] = Complex64::new(0.0, 0.0);
        }
        let [a1, a2] = tables;
        Self::from_tables(self.m, self.theta, a1, a2).expect("reality preserved")
    }

    /// Copy with the second component replaced by the first.
    pub fn with_identical_components(&self) -> Self {
        let a = self.alpha_hat[0].clone();
        Self::from_tables(self.m, self.theta, a.clone(), a).expect("reality preserved")
    }

    /// Every failure of the nonvanishing, norm and independence conditions.
    pub fn violations(&self) -> Vec<AssumptionViolation> {
        let mut out = Vec::new();
        let m = self.m as i64;
        for n in -m..=m {
            for component in 0..2 {
                if self.alpha(component, n).norm() == 0.0 {
                    out.push(AssumptionViolation::ZeroCoefficient { component, n });
                }
            }
            let a1 = self.alpha(0, n);
            let a2 = self.alpha(1, n);
            let denom = a1.norm_sqr() + a2.norm_sqr();
            let ratio = (a1 * a1 + a2 * a2).norm() / denom;
            if !(ratio > 1e-12) {
                out.push(AssumptionViolation::NormCondition { n, ratio });
            }
            if n != 0 {
                let cross = (a1 * a2.conj()).im;
                if !(cross.abs() > 1e-12 * a1.norm() * a2.norm()) {
                    out.push(AssumptionViolation::Dependent { m: n });
                }
            }
        }
        out
    }

    pub fn is_compliant(&self) -> bool {
        self.violations().is_empty()
    }
}

/// Default profile `alpha1_hat = eps rho`, `alpha2_hat = kappa eps rho e^{i phi sgn n}`.
pub fn make_coupling(config: &ModelConfig) -> Result<CouplingSpec, ModelError> {
    config.validate()?;
    let m = config.m as i64;
    let eps = config.coupling_scale;
    let kappa = config.amplitude_ratio;
    let phi = config.phase_offset;
    let mut a1 = Vec::with_capacity(2 * config.m + 1);
    let mut a2 = Vec::with_capacity(2 * config.m + 1);
    for n in -m..=m {
        let r = eps * rho(n, config.theta);
        a1.push(Complex64::new(r, 0.0));
        a2.push(Complex64::from_polar(kappa * r, phi * n.signum() as f64));
    }
    let spec = CouplingSpec::from_tables(config.m, config.theta, a1, a2)?;
    // |1 + kappa^2 e^{2 i phi}| vanishes only for kappa = 1, phi = pi/2; guard anyway.
    let c1_closed = (Complex64::new(1.0, 0.0) + Complex64::from_polar(kappa * kappa, 2.0 * phi))
        .norm()
        / (1.0 + kappa * kappa);
    if !(c1_closed > 1e-9) || spec.c1_realized <= 1e-9 {
        return Err(ModelError::NormCondition(spec.c1_realized.min(c1_closed)));
    }
    Ok(spec)
}

/// Pseudo-spectral evaluator of `P g(phi)` with cached FFT plans.
pub struct PseudoSpectral {
    basis: Basis,
    n_grid: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl PseudoSpectral {
    pub fn new(m: usize, dealias_factor: usize) -> Self {
        let basis = Basis::new(m);
        let n_grid = dealias_factor.max(1) * basis.field_len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_grid);
        let inverse = planner.plan_fft_inverse(n_grid);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            basis,
            n_grid,
            forward,
            inverse,
            buf: vec![Complex64::new(0.0, 0.0); n_grid],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn grid_len(&self) -> usize {
        self.n_grid
    }

    fn load_real(&mut self, phi: &[f64]) {
        let m = self.basis.m();
        let n = self.n_grid;
        self.buf.fill(Complex64::new(0.0, 0.0));
        self.buf[0] = Complex64::new(phi[0], 0.0);
        for k in 1..=m {
            let c = Complex64::new(0.5 * phi[2 * k - 1], -0.5 * phi[2 * k]);
            self.buf[k] = c;
            self.buf[n - k] = c.conj();
        }
    }

    fn load_complex(&mut self, modes: &[Complex64]) {
        let m = self.basis.m();
        let n = self.n_grid;
        self.buf.fill(Complex64::new(0.0, 0.0));
        self.buf[0] = modes[m];
        for k in 1..=m {
            self.buf[k] = modes[m + k];
            self.buf[n - k] = modes[m - k];
        }
    }

    /// Values of `g(phi)` on the grid, for a field given in real coefficients.
    fn pointwise(&mut self, g: &GSpec) {
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for z in self.buf.iter_mut() {
            *z = Complex64::new(g.eval(z.re), 0.0);
        }
    }

    fn analyze(&mut self) {
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv = 1.0 / self.n_grid as f64;
        for z in self.buf.iter_mut() {
            *z *= inv;
        }
    }

    /// Real coefficients of `P g(phi)` written to `out`.
    pub fn force_real(&mut self, g: &GSpec, phi: &[f64], out: &mut [f64]) {
        if g.is_zero() {
            out.fill(0.0);
            return;
        }
        self.load_real(phi);
        self.pointwise(g);
        self.analyze();
        let m = self.basis.m();
        out[0] = self.buf[0].re;
        for k in 1..=m {
            out[2 * k - 1] = 2.0 * self.buf[k].re;
            out[2 * k] = -2.0 * self.buf[k].im;
        }
    }

    /// Complex table of `P g(phi)` from a complex table of `phi`.
    pub fn transform(&mut self, g: &GSpec, phi_modes: &[Complex64]) -> Vec<Complex64> {
        let m = self.basis.m();
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * m + 1];
        if g.is_zero() {
            return out;
        }
        self.load_complex(phi_modes);
        self.pointwise(g);
        self.analyze();
        let n = self.n_grid;
        out[m] = self.buf[0];
        for k in 1..=m {
            out[m + k] = self.buf[k];
            out[m - k] = self.buf[n - k];
        }
        out
    }

    /// `g(phi)` on the grid (before projection).
    pub fn grid_values(&mut self, g: &GSpec, phi_modes: &[Complex64]) -> Vec<f64> {
        self.load_complex(phi_modes);
        self.pointwise(g);
        self.buf.iter().map(|z| z.re).collect()
    }
}

/// Fourier coefficients (`|n| <= M`) of `g(phi)`, computed pseudo-spectrally.
pub fn apply_nonlinearity(
    g_spec: &GSpec,
    phi_modes: &[Complex64],
    dealias_factor: usize,
) -> Vec<Complex64> {
    assert!(phi_modes.len() % 2 == 1, "table must cover [-M, M]");
    let m = phi_modes.len() / 2;
    PseudoSpectral::new(m, dealias_factor).transform(g_spec, phi_modes)
}

/// Point of the cutoff state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub coeffs: Array1<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn zeros(basis: Basis) -> Self {
        Self {
            coeffs: Array1::zeros(basis.dim()),
            time: 0.0,
        }
    }

    pub fn from_coeffs(coeffs: Array1<f64>) -> Self {
        Self { coeffs, time: 0.0 }
    }

    pub fn basis(&self) -> Basis {
        Basis::from_dim(self.coeffs.len()).expect("state length must be 4M+4")
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|x| x.is_finite())
    }

    pub fn r(&self) -> [f64; 2] {
        let b = self.basis();
        [self.coeffs[b.r(0)], self.coeffs[b.r(1)]]
    }
}

pub fn h_norm(state: &FieldState) -> f64 {
    hs_norm(state, 1.0)
}

pub fn hs_norm(state: &FieldState, s: f64) -> f64 {
    let w = state.basis().sobolev_weights(s);
    state
        .coeffs
        .iter()
        .zip(&w)
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Grid spacing helper used by tests and the nonlinearity oracle.
pub fn grid_point(j: usize, n_grid: usize) -> f64 {
    2.0 * PI * j as f64 / n_grid as f64
}
