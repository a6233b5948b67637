//! Stochastic dynamics: exact Gaussian stepping of the linear part, a
//! left-point exponential Euler scheme, an Euler–Maruyama cross-check and
//! the ensemble driver.

use std::io::Write;

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expm, frobenius, gauss_legendre, psd_lower_factor, rescale, symmetrize, LinalgError};
use crate::model::{FieldState, GSpec, PseudoSpectral, DEFAULT_DEALIAS_FACTOR};
use crate::operator::{CutoffOperator, SpectralDecomposition};
use crate::stationary::{lyapunov_stationary, ModalFrame, StationaryError};
use crate::stats::integrated_autocorrelation_time;

/// Below this `|λ_j + λ̄_k|` the kernel entry uses its Taylor expansion.
pub const RESONANCE_TOL: f64 = 1e-8;
pub const FACTOR_TOL: f64 = 1e-10;
pub const BLOWUP_NORM: f64 = 1e6;
pub const DEFAULT_BLOCKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Instability {
    /// `h ρ(A) ≥ 1` for the explicit scheme.
    StepTooLarge { h: f64, spectral_radius: f64 },
    NormExceeded { norm: f64 },
}

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("step size {0} must be positive and finite")]
    InvalidStep(f64),
    #[error("noise covariance has eigenvalue {value:e} below -{tol:e}")]
    FactorizationFailure { value: f64, tol: f64 },
    #[error("explicit step is unstable: {0:?}")]
    StepUnstable(Instability),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseSource {
    Eigenbasis,
    Quadrature,
}

/// Exact one-step transition of the linear dynamics.
#[derive(Debug, Clone)]
pub struct StepKernel {
    pub h: f64,
    /// `e^{hA}`.
    pub propagator: Array2<f64>,
    /// Lower triangular `L` with `L Lᵀ = Q_h`.
    pub noise_factor: Array2<f64>,
    pub q: Array2<f64>,
    pub source: NoiseSource,
}

fn inverse_scale(op: &CutoffOperator) -> (Vec<f64>, Vec<f64>) {
    let s = op.energy_scale();
    let inv = s.iter().map(|x| 1.0 / x).collect();
    (s, inv)
}

/// `(e^{zh} - 1)/z`, with the series near `z = 0`.
fn phi1(z: C64, h: f64) -> C64 {
    if z.norm() < RESONANCE_TOL {
        C64::new(h, 0.0) + z * (h * h / 2.0) + z * z * (h * h * h / 6.0)
    } else {
        ((z * h).exp() - 1.0) / z
    }
}

/// `Q_h` assembled in the eigenbasis and brought back to the state basis.
pub fn eigenbasis_covariance(op: &CutoffOperator, decomposition: &SpectralDecomposition, h: f64) -> Array2<f64> {
    let frame = ModalFrame::new(op, decomposition);
    let n = frame.lambdas.len();
    let modal = Array2::from_shape_fn((n, n), |(j, k)| {
        frame.t_tilde[[j, k]] * phi1(frame.lambdas[j] + frame.lambdas[k].conj(), h)
    });
    frame.to_state(&modal)
}

/// `Q_h` by composite Gauss–Legendre quadrature with panel doubling.
pub fn quadrature_covariance(op: &CutoffOperator, h: f64) -> Array2<f64> {
    let (s, inv) = inverse_scale(op);
    let n = op.to_energy(&op.a);
    let t = op.tmat();
    let (nodes, weights) = gauss_legendre(8);
    let eval = |panels: usize| {
        let w = h / panels as f64;
        let mut acc = Array2::<f64>::zeros(t.raw_dim());
        for p in 0..panels {
            for (x, wt) in nodes.iter().zip(&weights) {
                let tau = w * (p as f64 + 0.5 * (x + 1.0));
                let e = expm(&(&n * tau));
                acc = acc + e.dot(&t).dot(&e.t()) * (0.5 * w * wt);
            }
        }
        acc
    };
    let nrm = crate::linalg::inf_norm(&n.view());
    let mut panels = ((h * nrm).ceil() as usize).max(1);
    let mut coarse = eval(panels);
    loop {
        panels *= 2;
        let fine = eval(panels);
        let scale = frobenius(&fine.view()).max(f64::MIN_POSITIVE);
        let err = frobenius(&(&fine - &coarse).view()) / scale;
        coarse = fine;
        if err < 1e-13 || panels >= 256 {
            break;
        }
    }
    symmetrize(&rescale(&coarse, &inv, &s))
}

/// Factors a state-basis covariance through energy coordinates, where it is
/// well scaled: `L = S⁻¹ chol(S Q S)`.
fn noise_factor(op: &CutoffOperator, q: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let (s, inv) = inverse_scale(op);
    let qe = rescale(q, &s, &inv);
    let le = psd_lower_factor(&qe, FACTOR_TOL)?;
    let ones = vec![1.0; s.len()];
    Ok(rescale(&le, &inv, &ones))
}

/// Assembles the exact linear transition over one step.
///
/// `Q_h` comes from the eigenbasis; if it fails the semidefiniteness check it
/// is recomputed by quadrature.
pub fn make_kernel(op: &CutoffOperator, decomposition: &SpectralDecomposition, h: f64) -> Result<StepKernel, SdeError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SdeError::InvalidStep(h));
    }
    let (_, inv) = inverse_scale(op);
    let pe = expm(&(op.to_energy(&op.a) * h));
    let propagator = rescale(&pe, &inv, &inv);
    let q = eigenbasis_covariance(op, decomposition, h);
    let (q, noise_factor, source) = match noise_factor(op, &q) {
        Ok(l) => (q, l, NoiseSource::Eigenbasis),
        Err(LinalgError::NotPositive { .. }) => {
            let q = quadrature_covariance(op, h);
            let l = noise_factor(op, &q).map_err(|e| match e {
                LinalgError::NotPositive { value, tol } => SdeError::FactorizationFailure { value, tol },
                other => SdeError::Linalg(other),
            })?;
            (q, l, NoiseSource::Quadrature)
        }
        Err(e) => return Err(e.into()),
    };
    Ok(StepKernel {
        h,
        propagator,
        noise_factor,
        q,
        source,
    })
}

/// Checks the eigenbasis `Q_h` for semidefiniteness without falling back.
pub fn check_eigenbasis_factor(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    h: f64,
) -> Result<(), SdeError> {
    let q = eigenbasis_covariance(op, decomposition, h);
    noise_factor(op, &q).map(|_| ()).map_err(|e| match e {
        LinalgError::NotPositive { value, tol } => SdeError::FactorizationFailure { value, tol },
        other => SdeError::Linalg(other),
    })
}

/// Left-point exponential Euler integrator with preallocated buffers.
pub struct ExpEuler<'a> {
    kernel: &'a StepKernel,
    g: GSpec,
    spectral: PseudoSpectral,
    p: usize,
    force: Vec<f64>,
    work: Array1<f64>,
    out: Array1<f64>,
    noise: Array1<f64>,
}

impl<'a> ExpEuler<'a> {
    pub fn new(kernel: &'a StepKernel, g: GSpec, dealias_factor: usize) -> Self {
        let dim = kernel.propagator.nrows();
        let m = (dim - 4) / 4;
        let p = 2 * m + 1;
        Self {
            kernel,
            g,
            spectral: PseudoSpectral::new(m, dealias_factor),
            p,
            force: vec![0.0; p],
            work: Array1::zeros(dim),
            out: Array1::zeros(dim),
            noise: Array1::zeros(dim),
        }
    }

    /// Evaluates `P g(φ)` at `x`; the next [`ExpEuler::update`] uses it.
    pub fn eval_force(&mut self, x: &Array1<f64>) -> &[f64] {
        let phi = x.as_slice().expect("contiguous state");
        self.spectral.force_real(&self.g, &phi[..self.p], &mut self.force);
        &self.force
    }

    /// `x ← e^{hA}(x - h G) + L noise` with the cached force.
    pub fn update(&mut self, x: &mut Array1<f64>, noise: &Array1<f64>) {
        self.work.assign(x);
        let h = self.kernel.h;
        for (k, f) in self.force.iter().enumerate() {
            self.work[self.p + k] -= h * f;
        }
        general_mat_vec_mul(1.0, &self.kernel.propagator, &self.work, 0.0, &mut self.out);
        general_mat_vec_mul(1.0, &self.kernel.noise_factor, noise, 1.0, &mut self.out);
        x.assign(&self.out);
    }

    pub fn step(&mut self, x: &mut Array1<f64>, noise: &Array1<f64>) {
        self.eval_force(x);
        self.update(x, noise);
    }

    /// One step with freshly drawn noise.
    pub fn step_random(&mut self, x: &mut Array1<f64>, rng: &mut ChaCha8Rng) {
        let mut noise = std::mem::take(&mut self.noise);
        fill_normal(&mut noise, rng);
        self.step(x, &noise);
        self.noise = noise;
    }
}

fn fill_normal(v: &mut Array1<f64>, rng: &mut ChaCha8Rng) {
    for x in v.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}

pub fn exp_euler_step(kernel: &StepKernel, state: &FieldState, g_spec: &GSpec, noise: &Array1<f64>) -> FieldState {
    let mut stepper = ExpEuler::new(kernel, *g_spec, DEFAULT_DEALIAS_FACTOR);
    let mut x = state.coeffs.clone();
    stepper.step(&mut x, noise);
    FieldState {
        coeffs: x,
        time: state.time + kernel.h,
    }
}

/// Explicit Euler–Maruyama stepper for cross-checks.
pub struct EmStepper {
    a: Array2<f64>,
    sqrt_t: [f64; 2],
    r: [usize; 2],
    h: f64,
    g: GSpec,
    spectral: PseudoSpectral,
    p: usize,
    force: Vec<f64>,
}

impl EmStepper {
    /// Rejects `h ρ(A) ≥ 1`.
    pub fn new(op: &CutoffOperator, decomposition: &SpectralDecomposition, g: GSpec, h: f64) -> Result<Self, SdeError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SdeError::InvalidStep(h));
        }
        let rho = decomposition.lambdas().iter().map(|l| l.norm()).fold(0.0, f64::max);
        if h * rho >= 1.0 {
            return Err(SdeError::StepUnstable(Instability::StepTooLarge { h, spectral_radius: rho }));
        }
        let b = op.basis();
        let t = op.temperatures();
        Ok(Self {
            a: op.a.clone(),
            sqrt_t: [t[0].sqrt(), t[1].sqrt()],
            r: [b.r(0), b.r(1)],
            h,
            g,
            spectral: PseudoSpectral::new(b.m(), DEFAULT_DEALIAS_FACTOR),
            p: b.field_len(),
            force: vec![0.0; b.field_len()],
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `x + h(Ax - G(x)) + √h √T ξ`, where only the reservoir entries of
    /// `noise` are used.
    pub fn step(&mut self, x: &mut Array1<f64>, noise: &Array1<f64>) -> Result<(), SdeError> {
        let phi = x.as_slice().expect("contiguous state");
        self.spectral.force_real(&self.g, &phi[..self.p], &mut self.force);
        let mut drift = self.a.dot(&*x);
        for (k, f) in self.force.iter().enumerate() {
            drift[self.p + k] -= f;
        }
        x.scaled_add(self.h, &drift);
        let sh = self.h.sqrt();
        for i in 0..2 {
            x[self.r[i]] += sh * self.sqrt_t[i] * noise[self.r[i]];
        }
        let norm = crate::linalg::vec_norm(x);
        if !(norm <= BLOWUP_NORM) {
            return Err(SdeError::StepUnstable(Instability::NormExceeded { norm }));
        }
        Ok(())
    }
}

pub fn em_step(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    state: &FieldState,
    g_spec: &GSpec,
    h: f64,
    noise: &Array1<f64>,
) -> Result<FieldState, SdeError> {
    let mut stepper = EmStepper::new(op, decomposition, *g_spec, h)?;
    let mut x = state.coeffs.clone();
    stepper.step(&mut x, noise)?;
    Ok(FieldState {
        coeffs: x,
        time: state.time + h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub h: f64,
    /// Discarded initial span; `None` means `50 / |max Re λ|`.
    pub t_burn: Option<f64>,
    pub t_sample: f64,
    pub n_ensemble: usize,
    pub seed: u64,
    /// Moments are accumulated every `sample_every` steps.
    pub sample_every: usize,
    /// Number of equal time blocks for the autocorrelation estimate and series.
    pub blocks: usize,
    pub dealias_factor: usize,
}

impl SimulationParams {
    pub fn new(h: f64, t_sample: f64, n_ensemble: usize, seed: u64) -> Self {
        Self {
            h,
            t_burn: None,
            t_sample,
            n_ensemble,
            seed,
            sample_every: 1,
            blocks: DEFAULT_BLOCKS,
            dealias_factor: DEFAULT_DEALIAS_FACTOR,
        }
    }

    fn validate(&self) -> Result<(), SdeError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SdeError::InvalidStep(self.h));
        }
        if !(self.t_sample > 0.0) || self.n_ensemble == 0 || self.sample_every == 0 || self.blocks == 0 {
            return Err(SdeError::InvalidParams(format!(
                "t_sample = {}, n_ensemble = {}, sample_every = {}, blocks = {}",
                self.t_sample, self.n_ensemble, self.sample_every, self.blocks
            )));
        }
        if let Some(tb) = self.t_burn {
            if !(tb >= 0.0) {
                return Err(SdeError::InvalidParams(format!("t_burn = {tb}")));
            }
        }
        Ok(())
    }
}

/// Time-averaged moments of one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMoments {
    pub samples: usize,
    /// Mean of `x xᵀ`.
    pub xx: Array2<f64>,
    /// Mean of `x (P g(φ))ᵀ`, `dim × (2M+1)`.
    pub xg: Option<Array2<f64>>,
    pub mean: Array1<f64>,
    /// Block means of `r₁² + r₂²`.
    pub r_energy_blocks: Vec<f64>,
    /// Block means of `‖(φ, π)‖²_H`.
    pub field_energy_blocks: Vec<f64>,
    pub final_state: Array1<f64>,
}

impl TrajectoryMoments {
    pub fn r_energy(&self) -> f64 {
        self.r_energy_blocks.iter().sum::<f64>() / self.r_energy_blocks.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationStats {
    pub params: SimulationParams,
    pub g_spec: GSpec,
    pub m: usize,
    pub t_burn: f64,
    pub steps_burn: usize,
    pub steps_sample: usize,
    pub trajectories: Vec<TrajectoryMoments>,
}

impl SimulationStats {
    /// Integrated autocorrelation time of the `r`-energy block series, in blocks,
    /// averaged over trajectories.
    pub fn block_autocorrelation(&self) -> f64 {
        let taus: Vec<f64> = self
            .trajectories
            .iter()
            .map(|t| integrated_autocorrelation_time(&t.r_energy_blocks))
            .collect();
        taus.iter().sum::<f64>() / taus.len() as f64
    }

    /// Effective number of independent `r`-energy samples across the ensemble.
    pub fn effective_sample_size(&self) -> f64 {
        self.trajectories.len() as f64 * self.params.blocks as f64 / self.block_autocorrelation()
    }

    /// Ensemble mean and stderr of `r₁² + r₂²` at the final time.
    pub fn final_r_energy(&self, basis: crate::basis::Basis) -> (f64, f64) {
        let xs: Vec<f64> = self
            .trajectories
            .iter()
            .map(|t| t.final_state[basis.r(0)].powi(2) + t.final_state[basis.r(1)].powi(2))
            .collect();
        crate::stats::mean_stderr(&xs)
    }

    /// Ensemble-averaged block series `(t_end, r_energy, field_energy)`.
    pub fn write_series<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r_energy", "field_energy"])?;
        let nb = self.params.blocks;
        let n = self.trajectories.len() as f64;
        let span = self.steps_sample as f64 * self.params.h / nb as f64;
        for b in 0..nb {
            let r: f64 = self.trajectories.iter().map(|t| t.r_energy_blocks[b]).sum::<f64>() / n;
            let f: f64 = self.trajectories.iter().map(|t| t.field_energy_blocks[b]).sum::<f64>() / n;
            w.write_record([
                (self.t_burn + span * (b + 1) as f64).to_string(),
                r.to_string(),
                f.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Shared<'a> {
    kernel: &'a StepKernel,
    init: Array2<f64>,
    g: GSpec,
    params: &'a SimulationParams,
    steps_burn: usize,
    steps_sample: usize,
    energy_weights: Vec<f64>,
    r: [usize; 2],
}

fn run_trajectory(ctx: &Shared<'_>, index: usize) -> Result<TrajectoryMoments, SdeError> {
    let dim = ctx.kernel.propagator.nrows();
    let p_field = (dim - 2) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.params.seed);
    rng.set_stream(index as u64);
    let mut noise = Array1::zeros(dim);
    fill_normal(&mut noise, &mut rng);
    let mut x = ctx.init.dot(&noise);
    let mut stepper = ExpEuler::new(ctx.kernel, ctx.g, ctx.params.dealias_factor);
    for _ in 0..ctx.steps_burn {
        stepper.step_random(&mut x, &mut rng);
    }
    let track_g = !ctx.g.is_zero();
    let mut xx = Array2::<f64>::zeros((dim, dim));
    let mut xg = Array2::<f64>::zeros((dim, if track_g { p_field } else { 0 }));
    let mut mean = Array1::<f64>::zeros(dim);
    let nb = ctx.params.blocks;
    let mut r_blocks = vec![0.0; nb];
    let mut f_blocks = vec![0.0; nb];
    let mut block_counts = vec![0usize; nb];
    let mut samples = 0usize;
    let every = ctx.params.sample_every;
    for step in 0..ctx.steps_sample {
        fill_normal(&mut noise, &mut rng);
        let force = stepper.eval_force(&x);
        if step % every == 0 {
            let xs = x.as_slice().expect("contiguous");
            for i in 0..dim {
                let xi = xs[i];
                if xi == 0.0 {
                    continue;
                }
                let mut row = xx.row_mut(i);
                let row = row.as_slice_mut().expect("row-major");
                for j in i..dim {
                    row[j] += xi * xs[j];
                }
                if track_g {
                    let mut grow = xg.row_mut(i);
                    for (g, f) in grow.iter_mut().zip(force) {
                        *g += xi * f;
                    }
                }
            }
            mean += &x;
            let b = (step * nb / ctx.steps_sample).min(nb - 1);
            r_blocks[b] += xs[ctx.r[0]].powi(2) + xs[ctx.r[1]].powi(2);
            f_blocks[b] += xs[..2 * p_field]
                .iter()
                .zip(&ctx.energy_weights)
                .map(|(v, w)| w * v * v)
                .sum::<f64>();
            block_counts[b] += 1;
            samples += 1;
        }
        stepper.update(&mut x, &noise);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SdeError::StepUnstable(Instability::NormExceeded { norm: f64::INFINITY }));
        }
    }
    let n = samples as f64;
    for i in 0..dim {
        for j in 0..i {
            xx[[i, j]] = xx[[j, i]];
        }
    }
    xx /= n;
    mean /= n;
    for b in 0..nb {
        let c = block_counts[b].max(1) as f64;
        r_blocks[b] /= c;
        f_blocks[b] /= c;
    }
    Ok(TrajectoryMoments {
        samples,
        xx,
        xg: Some(if track_g { xg / n } else { Array2::zeros((dim, p_field)) }),
        mean,
        r_energy_blocks: r_blocks,
        field_energy_blocks: f_blocks,
        final_state: x,
    })
}

/// Runs the ensemble: each trajectory starts from the exact `g = 0` stationary
/// law, discards the burn-in, then accumulates time averages.
pub fn simulate(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    g: &GSpec,
    params: &SimulationParams,
) -> Result<SimulationStats, SdeError> {
    params.validate()?;
    let kernel = make_kernel(op, decomposition, params.h)?;
    let lyap = lyapunov_stationary(op, decomposition)?;
    let init = noise_factor(op, &lyap.sigma).map_err(|e| match e {
        LinalgError::NotPositive { value, tol } => SdeError::FactorizationFailure { value, tol },
        other => SdeError::Linalg(other),
    })?;
    let t_burn = params
        .t_burn
        .unwrap_or_else(|| 50.0 / decomposition.max_real_part().abs());
    let steps_burn = (t_burn / params.h).round() as usize;
    let steps_sample = ((params.t_sample / params.h).round() as usize).max(params.blocks);
    let basis = op.basis();
    let ctx = Shared {
        kernel: &kernel,
        init,
        g: *g,
        params,
        steps_burn,
        steps_sample,
        energy_weights: basis.energy_weights()[..2 * basis.field_len()].to_vec(),
        r: [basis.r(0), basis.r(1)],
    };
    let trajectories = (0..params.n_ensemble)
        .into_par_iter()
        .map(|i| run_trajectory(&ctx, i))
        .collect::<Result<Vec<_>, SdeError>>()?;
    Ok(SimulationStats {
        params: params.clone(),
        g_spec: *g,
        m: basis.m(),
        t_burn,
        steps_burn,
        steps_sample,
        trajectories,
    })
}

/// Standardized reservoir increments `ξ_k = ΔW_k / √dt` of one Brownian path.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub dt: f64,
    pub xi: Vec<[f64; 2]>,
}

impl NoisePath {
    pub fn sample(dt: f64, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = (0..steps)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        Self { dt, xi }
    }

    /// The same path at step `2 dt`.
    pub fn coarsen(&self) -> Self {
        let xi = self
            .xi
            .chunks_exact(2)
            .map(|c| {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                [(c[0][0] + c[1][0]) * s, (c[0][1] + c[1][1]) * s]
            })
            .collect();
        Self { dt: 2.0 * self.dt, xi }
    }
}

/// Endpoints `(exponential Euler, Euler–Maruyama)` driven by one Brownian path.
///
/// The exponential scheme takes the same increments before propagation,
/// `x ← e^{hA}(x − hG + √(hT) ξ)`.
pub fn matched_endpoints(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    g: &GSpec,
    x0: &Array1<f64>,
    path: &NoisePath,
) -> Result<(Array1<f64>, Array1<f64>), SdeError> {
    let h = path.dt;
    let mut em = EmStepper::new(op, decomposition, *g, h)?;
    let basis = op.basis();
    let temps = op.temperatures();
    let dim = op.dim();
    let (_, inv) = inverse_scale(op);
    let prop = rescale(&expm(&(op.to_energy(&op.a) * h)), &inv, &inv);
    let mut spectral = PseudoSpectral::new(basis.m(), DEFAULT_DEALIAS_FACTOR);
    let p = basis.field_len();
    let mut force = vec![0.0; p];
    let mut x_em = x0.clone();
    let mut x_ee = x0.clone();
    let mut noise = Array1::zeros(dim);
    for xi in &path.xi {
        noise[basis.r(0)] = xi[0];
        noise[basis.r(1)] = xi[1];
        em.step(&mut x_em, &noise)?;
        let phi = x_ee.as_slice().expect("contiguous");
        spectral.force_real(g, &phi[..p], &mut force);
        let mut y = x_ee.clone();
        for (k, f) in force.iter().enumerate() {
            y[p + k] -= h * f;
        }
        for i in 0..2 {
            y[basis.r(i)] += (h * temps[i]).sqrt() * xi[i];
        }
        x_ee = prop.dot(&y);
    }
    Ok((x_ee, x_em))
}

/// Ensemble mean of `n_ensemble` linear trajectories started at `x0`, after each step.
pub fn mean_decay(
    kernel: &StepKernel,
    x0: &Array1<f64>,
    steps: usize,
    n_ensemble: usize,
    seed: u64,
) -> Vec<(f64, Array1<f64>)> {
    let dim = x0.len();
    let runs: Vec<Vec<Array1<f64>>> = (0..n_ensemble)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut st = ExpEuler::new(kernel, GSpec::Zero, DEFAULT_DEALIAS_FACTOR);
            let mut x = x0.clone();
            let mut path = Vec::with_capacity(steps);
            for _ in 0..steps {
                st.step_random(&mut x, &mut rng);
                path.push(x.clone());
            }
            path
        })
        .collect();
    (0..steps)
        .map(|k| {
            let mut m = Array1::zeros(dim);
            for r in &runs {
                m += &r[k];
            }
            ((k + 1) as f64 * kernel.h, m / n_ensemble as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_coupling, ModelConfig};
    use crate::operator::{assemble, decompose};

    fn setup(m: usize, t: (f64, f64)) -> (CutoffOperator, SpectralDecomposition) {
        let config = ModelConfig::new(m, 0.25, t.0, t.1, GSpec::Zero);
        let op = assemble(&config, &make_coupling(&config).unwrap()).unwrap();
        let dec = decompose(&op).unwrap();
        (op, dec)
    }

    #[test]
    fn small_step_covariance_is_temperature() {
        let (op, dec) = setup(3, (1.0, 2.0));
        let h = 1e-6;
        let q = eigenbasis_covariance(&op, &dec, h) / h;
        let t = op.tmat();
        assert!(crate::linalg::max_abs(&(&q - &t)) < 1e-4);
    }

    #[test]
    fn cold_kernel_is_deterministic() {
        let (op, dec) = setup(2, (0.0, 0.0));
        let k = make_kernel(&op, &dec, 0.1).unwrap();
        assert_eq!(crate::linalg::max_abs(&k.noise_factor), 0.0);
    }

    #[test]
    fn explicit_scheme_rejects_stiff_step() {
        let (op, dec) = setup(4, (1.0, 2.0));
        let err = EmStepper::new(&op, &dec, GSpec::Zero, 1.0).err().unwrap();
        assert!(matches!(err, SdeError::StepUnstable(Instability::StepTooLarge { .. })));
    }
}
