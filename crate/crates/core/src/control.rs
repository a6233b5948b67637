//! Controllability: Gramian, Krylov rank, the explicit control and two-point
//! steering by damped Picard iteration.
//!
//! Everything is computed in energy coordinates `x_e = S x`, where the
//! energy-adjoint of a matrix is its transpose. Inputs and outputs are in the
//! state basis.

use std::io::Write;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expm, frobenius, gauss_legendre, qr_thin, solve_upper_transposed, svd_left, symmetrize, LinalgError};
use crate::model::{FieldState, GSpec, PseudoSpectral, DEFAULT_DEALIAS_FACTOR};
use crate::operator::CutoffOperator;

/// Bound on the condition number of the Gramian's square-root factor.
pub const MAX_CONDITION: f64 = 1e12;
pub const DEFAULT_GRID_INTERVALS: usize = 1024;
pub const KRYLOV_REL_TOL: f64 = 1e-10;
pub const NODES_PER_INTERVAL: usize = 8;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("time horizon {0} must lie in (0, 10]")]
    InvalidTime(f64),
    #[error("Gramian condition number {0:e} exceeds the square of {MAX_CONDITION:e}")]
    GramianSingular(f64),
    #[error("fixed-point iteration stopped after {} iterations, last change {:e}", .0.iterations, .0.residual_history.last().copied().unwrap_or(f64::NAN))]
    NotConverged(Box<SteeringResult>),
    #[error("control equivalence needs T1, T2 > 0")]
    ZeroTemperature,
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramianResult {
    pub t: f64,
    /// `D_t` in energy coordinates.
    pub d: Array2<f64>,
    /// Extreme eigenvalues, from the singular values of the quadrature factor.
    pub min_eig: f64,
    pub max_eig: f64,
    /// Relative change of `D_t` under one halving of the panel width.
    pub quadrature_error_estimate: f64,
    /// Eigenvalues below this are not resolved in double precision.
    pub resolution_floor: f64,
}

impl GramianResult {
    pub fn condition(&self) -> f64 {
        self.max_eig / self.min_eig
    }

    pub fn min_eig_resolved(&self) -> bool {
        self.min_eig > self.resolution_floor
    }
}

fn energy_drift(op: &CutoffOperator) -> Array2<f64> {
    op.to_energy(&op.a_tilde)
}

/// Quadrature factor of `∫ e^{-sN} T e^{-sNᵀ} ds` over consecutive intervals
/// of width `h`: one `dim × 2K` block per interval, columns ordered (node, input).
fn factor_blocks(n: &Array2<f64>, sqrt_t: &Array2<f64>, backward: &[Array2<f64>], h: f64) -> Vec<Array2<f64>> {
    let (nodes, weights) = gauss_legendre(NODES_PER_INTERVAL);
    let dim = n.nrows();
    let mut local = Array2::zeros((dim, 2 * NODES_PER_INTERVAL));
    for (q, (x, w)) in nodes.iter().zip(&weights).enumerate() {
        let tau = 0.5 * h * (x + 1.0);
        let col = expm(&(n * -tau)).dot(sqrt_t) * (0.5 * h * w).sqrt();
        local.slice_mut(s![.., 2 * q..2 * q + 2]).assign(&col);
    }
    backward[..backward.len() - 1].iter().map(|b| b.dot(&local)).collect()
}

/// `e^{±t_k N}` on the grid, each from its own exponential: repeated products
/// would accumulate roundoff that the large steering controls amplify.
fn propagators(n: &Array2<f64>, h: f64, intervals: usize) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    (0..=intervals)
        .map(|k| {
            let t = k as f64 * h;
            (expm(&(n * t)), expm(&(n * -t)))
        })
        .unzip()
}

fn stack(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("blocks share a row count")
}

struct FactorSpectrum {
    d: Array2<f64>,
    sv_min: f64,
    sv_max: f64,
}

fn factor_spectrum(f: &Array2<f64>) -> Result<FactorSpectrum, ControlError> {
    let (_, r) = qr_thin(&f.t().to_owned());
    let (_, sv) = svd_left(&r)?;
    Ok(FactorSpectrum {
        d: symmetrize(&f.dot(&f.t())),
        sv_min: sv.last().copied().unwrap_or(0.0),
        sv_max: sv.first().copied().unwrap_or(0.0),
    })
}

/// Controllability Gramian `D_t` with step-halving error control.
///
/// The eigenvalues come from the square-root factor, which resolves them
/// down to about `(ε σ_max)²` instead of `ε ‖D‖`.
pub fn gramian(op: &CutoffOperator, t: f64) -> Result<GramianResult, ControlError> {
    if !(t > 0.0 && t <= 10.0) {
        return Err(ControlError::InvalidTime(t));
    }
    let n = energy_drift(op);
    let sqrt_t = op.sqrt_t();
    let norm = crate::linalg::inf_norm(&n.view());
    let build = |panels: usize| {
        let h = t / panels as f64;
        let (_, backward) = propagators(&n, h, panels);
        stack(&factor_blocks(&n, &sqrt_t, &backward, h))
    };
    let mut panels = ((t * norm).ceil() as usize).max(1);
    let mut coarse = factor_spectrum(&build(panels))?;
    let mut err;
    loop {
        panels *= 2;
        let fine = factor_spectrum(&build(panels))?;
        let scale = frobenius(&fine.d.view()).max(f64::MIN_POSITIVE);
        err = frobenius(&(&fine.d - &coarse.d).view()) / scale;
        coarse = fine;
        if err < 1e-13 || panels >= 1 << 10 {
            break;
        }
    }
    let dim = n.nrows() as f64;
    Ok(GramianResult {
        t,
        d: coarse.d,
        min_eig: coarse.sv_min.powi(2),
        max_eig: coarse.sv_max.powi(2),
        quadrature_error_estimate: err,
        resolution_floor: (10.0 * f64::EPSILON * dim.sqrt() * coarse.sv_max).powi(2),
    })
}

/// Extreme eigenvalues of `D_t` from a double-double quadrature factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedGramian {
    pub t: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub panels: usize,
    /// Relative change of `min_eig` under the last panel doubling.
    pub min_eig_change: f64,
    /// Eigenvalues below this are not resolved in double-double arithmetic.
    pub resolution_floor: f64,
}

impl ExtendedGramian {
    pub fn min_eig_resolved(&self) -> bool {
        self.min_eig > self.resolution_floor && self.min_eig_change < 1e-3
    }
}

const EXTENDED_NODES: usize = 16;
const NEGLIGIBLE: f64 = 1e-80;

/// `D_t` eigenvalues for Gramians whose smallest eigenvalue lies below the
/// `f64` resolution floor. The drift is rebuilt from the state-basis matrix
/// in double-double; the factor `F` with `D = F Fᵀ` is triangularized in the
/// same arithmetic, and `σ_min(R)` comes from `1 / ‖R⁻¹‖₂`.
pub fn gramian_extended(op: &CutoffOperator, t: f64) -> Result<ExtendedGramian, ControlError> {
    use crate::precision::{dd, div, exp_times, gauss_legendre_dd, householder_r, upper_inverse, DdMatrix};
    if !(t > 0.0 && t <= 10.0) {
        return Err(ControlError::InvalidTime(t));
    }
    let basis = op.basis();
    let dim = basis.dim();
    let scale: Vec<_> = basis.energy_weights().iter().map(|&w| dd(w).sqrt()).collect();
    let n = DdMatrix::from_fn(dim, |i, j| div(dd(op.a_tilde[[i, j]]) * scale[i], scale[j]));
    let [t1, t2] = op.temperatures();
    let inputs = [(basis.r(0), dd(t1).sqrt()), (basis.r(1), dd(t2).sqrt())];
    let (nodes, weights) = gauss_legendre_dd(EXTENDED_NODES);
    let sigma = |panels: usize| -> Result<(f64, f64), ControlError> {
        let h = dd(t) / panels as f64;
        // Rows of F: one vector over all (panel, node, input) samples per state index.
        let mut rows = vec![Vec::with_capacity(2 * EXTENDED_NODES * panels); dim];
        for (idx, val) in inputs {
            let mut start = vec![dd(0.0); dim];
            start[idx] = val;
            for _ in 0..panels {
                for (x, w) in nodes.iter().zip(&weights) {
                    let tau = h * (*x + 1.0) * 0.5;
                    let col = exp_times(&n, -tau, &start);
                    let sw = (h * *w * 0.5).sqrt();
                    for (row, c) in rows.iter_mut().zip(&col) {
                        // Far below the double-double floor; kept out of subnormal range.
                        let v = if c.hi().abs() < NEGLIGIBLE { dd(0.0) } else { *c * sw };
                        row.push(v);
                    }
                }
                start = exp_times(&n, -h, &start);
            }
        }
        let r = householder_r(rows);
        let r_f64 = Array2::from_shape_fn((dim, dim), |(i, j)| f64::from(r[j][i]));
        let inv = upper_inverse(&r);
        let inv_f64 = Array2::from_shape_fn((dim, dim), |(i, j)| inv[i][j]);
        let (_, sv) = svd_left(&r_f64)?;
        if !inv_f64.iter().all(|x| x.is_finite()) {
            return Ok((0.0, sv[0]));
        }
        let (_, sv_inv) = svd_left(&inv_f64)?;
        Ok((1.0 / sv_inv[0], sv[0]))
    };
    let mut panels = ((2.0 * t * n.inf_norm()).ceil() as usize).max(1);
    let mut prev = sigma(panels)?;
    let mut change;
    loop {
        panels *= 2;
        let next = sigma(panels)?;
        change = if next.0 > 0.0 {
            (next.0.powi(2) - prev.0.powi(2)).abs() / next.0.powi(2)
        } else {
            0.0
        };
        prev = next;
        if change < 1e-6 || panels >= 1 << 8 {
            break;
        }
    }
    let dd_eps = f64::EPSILON * f64::EPSILON;
    Ok(ExtendedGramian {
        t,
        min_eig: prev.0.powi(2),
        max_eig: prev.1.powi(2),
        panels,
        min_eig_change: change,
        resolution_floor: (10.0 * dd_eps * (dim as f64).sqrt() * prev.1).powi(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovRank {
    pub rank: usize,
    /// Smallest retained singular value relative to the block it came from.
    pub smallest_retained: f64,
}

/// Numerical rank of `span{Ãᵏ √T}` by block Arnoldi with re-orthonormalization.
pub fn krylov_rank(op: &CutoffOperator) -> Result<KrylovRank, ControlError> {
    let n = energy_drift(op);
    let dim = n.nrows();
    let mut basis: Array2<f64> = Array2::zeros((dim, 0));
    let mut block = op.sqrt_t();
    let mut smallest = f64::INFINITY;
    for _ in 0..=dim {
        let scale = block
            .axis_iter(Axis(1))
            .map(|c| c.dot(&c).sqrt())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            break;
        }
        for _ in 0..2 {
            if basis.ncols() > 0 {
                let proj = basis.dot(&basis.t().dot(&block));
                block = block - proj;
            }
        }
        let (u, sv) = svd_left(&block)?;
        let keep: Vec<usize> = (0..sv.len())
            .filter(|&i| sv[i] > KRYLOV_REL_TOL * scale)
            .collect();
        if keep.is_empty() {
            break;
        }
        for &i in &keep {
            smallest = smallest.min(sv[i] / scale);
        }
        let fresh = u.select(Axis(1), &keep);
        basis = ndarray::concatenate![Axis(1), basis, fresh];
        if basis.ncols() >= dim {
            break;
        }
        block = n.dot(&fresh);
    }
    Ok(KrylovRank {
        rank: basis.ncols(),
        smallest_retained: smallest,
    })
}

/// Control signal sampled at Gauss nodes inside each grid interval and
/// evaluated anywhere by per-interval polynomial interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSignal {
    pub t1: f64,
    pub intervals: usize,
    /// Node positions as fractions of an interval.
    pub offsets: Vec<f64>,
    /// Interval-major node values.
    pub values: Vec<[f64; 2]>,
}

impl ControlSignal {
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let h = self.t1 / self.intervals as f64;
        let k = ((t / h).floor().max(0.0) as usize).min(self.intervals - 1);
        self.eval_in(k, t)
    }

    /// Evaluates the polynomial of interval `k` at `t` (which may sit on
    /// either end of the interval).
    pub fn eval_in(&self, k: usize, t: f64) -> [f64; 2] {
        let h = self.t1 / self.intervals as f64;
        let x = t / h - k as f64;
        let width = self.offsets.len();
        let vals = &self.values[k * width..(k + 1) * width];
        let mut out = [0.0; 2];
        for (q, xq) in self.offsets.iter().enumerate() {
            let mut l = 1.0;
            for (p, xp) in self.offsets.iter().enumerate() {
                if p != q {
                    l *= (x - xp) / (xq - xp);
                }
            }
            out[0] += l * vals[q][0];
            out[1] += l * vals[q][1];
        }
        out
    }

    /// Values on the uniform grid `t_k = k t1 / intervals`.
    pub fn grid_samples(&self) -> Vec<[f64; 2]> {
        (0..=self.intervals)
            .map(|k| self.eval(self.t1 * k as f64 / self.intervals as f64))
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|u| u[0].abs().max(u[1].abs()))
            .fold(0.0, f64::max)
    }

    /// Largest componentwise difference at the nodes.
    pub fn distance(&self, other: &ControlSignal) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Propagators and the Gramian's square-root factor on a uniform time grid.
///
/// `D_{t1} = F Fᵀ` with `Fᵀ = Q R`. The minimum-norm control reaching `y` is
/// `-Q R⁻ᵀ y`, which stays accurate when `D_{t1}` itself is too ill-conditioned
/// to invert.
pub struct ControlSystem {
    n: Array2<f64>,
    a_full: Array2<f64>,
    scale: Array1<f64>,
    sqrt_t: [f64; 2],
    r_index: [usize; 2],
    pi_range: (usize, usize),
    m: usize,
    pub t1: f64,
    pub intervals: usize,
    forward: Vec<Array2<f64>>,
    backward: Vec<Array2<f64>>,
    blocks: Vec<Array2<f64>>,
    q: Array2<f64>,
    r: Array2<f64>,
    node_weights: Vec<f64>,
    offsets: Vec<f64>,
    /// Condition number of `D_{t1}`.
    pub condition: f64,
    /// Smallest eigenvalue of `D_{t1}`.
    pub min_eig: f64,
}

impl ControlSystem {
    pub fn new(op: &CutoffOperator, t1: f64, intervals: usize) -> Result<Self, ControlError> {
        if !(t1 > 0.0 && t1 <= 10.0) {
            return Err(ControlError::InvalidTime(t1));
        }
        let n = energy_drift(op);
        let h = t1 / intervals as f64;
        let (forward, backward) = propagators(&n, h, intervals);
        let blocks = factor_blocks(&n, &op.sqrt_t(), &backward, h);
        let (q, r) = qr_thin(&stack(&blocks).t().to_owned());
        let (_, sv) = svd_left(&r)?;
        let (lo, hi) = (sv[sv.len() - 1], sv[0]);
        let factor_condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(factor_condition <= MAX_CONDITION) {
            return Err(ControlError::GramianSingular(factor_condition.powi(2)));
        }
        let (nodes, weights) = gauss_legendre(NODES_PER_INTERVAL);
        let basis = op.basis();
        let [t1_, t2_] = op.temperatures();
        Ok(Self {
            a_full: op.to_energy(&op.a),
            n,
            scale: Array1::from(op.energy_scale()),
            sqrt_t: [t1_.sqrt(), t2_.sqrt()],
            r_index: [basis.r(0), basis.r(1)],
            pi_range: (basis.pi(0), basis.pi(0) + basis.field_len()),
            m: basis.m(),
            t1,
            intervals,
            forward,
            backward,
            blocks,
            q,
            r,
            node_weights: weights.iter().map(|w| 0.5 * h * w).collect(),
            offsets: nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            condition: factor_condition.powi(2),
            min_eig: lo * lo,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.intervals)
            .map(|k| self.t1 * k as f64 / self.intervals as f64)
            .collect()
    }

    pub fn step(&self) -> f64 {
        self.t1 / self.intervals as f64
    }

    pub fn to_energy(&self, x: &Array1<f64>) -> Array1<f64> {
        x * &self.scale
    }

    pub fn from_energy(&self, x: &Array1<f64>) -> Array1<f64> {
        x / &self.scale
    }

    fn pseudo(&self, dealias: usize) -> PseudoSpectral {
        PseudoSpectral::new(self.m, dealias)
    }

    /// `G(x)` in energy coordinates for an energy-coordinate state.
    fn nonlinear(&self, g: &GSpec, ps: &mut PseudoSpectral, x: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.len());
        if g.is_zero() {
            return out;
        }
        let (lo, hi) = self.pi_range;
        let p = hi - lo;
        let phi: Vec<f64> = (0..p).map(|k| x[k] / self.scale[k]).collect();
        let mut force = vec![0.0; p];
        ps.force_real(g, &phi, &mut force);
        for k in 0..p {
            out[lo + k] = force[k] * self.scale[lo + k];
        }
        out
    }

    /// `J(t_k) = ∫_0^{t_k} e^{-sN} G(Z(s)) ds`, fourth-order cumulative rule.
    fn forcing_integral(&self, g: &GSpec, ps: &mut PseudoSpectral, z: &[Array1<f64>]) -> Vec<Array1<f64>> {
        let dim = self.n.nrows();
        if g.is_zero() || z.is_empty() {
            return vec![Array1::zeros(dim); self.intervals + 1];
        }
        let h = self.step();
        let vals: Vec<Array1<f64>> = z
            .iter()
            .zip(&self.backward)
            .map(|(zk, eb)| eb.dot(&self.nonlinear(g, ps, zk)))
            .collect();
        let n = self.intervals;
        let mut j = vec![Array1::zeros(dim)];
        for k in 0..n {
            // Integral of the cubic through four neighbouring samples.
            let inc = if n < 3 {
                (&vals[k] + &vals[k + 1]) * 0.5
            } else if k == 0 {
                (&vals[0] * 9.0 + &vals[1] * 19.0 - &vals[2] * 5.0 + &vals[3]) / 24.0
            } else if k == n - 1 {
                (&vals[n - 3] - &vals[n - 2] * 5.0 + &vals[n - 1] * 19.0 + &vals[n] * 9.0) / 24.0
            } else {
                ((&vals[k] + &vals[k + 1]) * 13.0 - &vals[k - 1] - &vals[k + 2]) / 24.0
            };
            let next = &j[k] + &(inc * h);
            j.push(next);
        }
        j
    }

    /// Factor-space control `û` with `F û = -y` and minimum norm.
    fn solve_control(&self, y: &Array1<f64>) -> Array1<f64> {
        -self.q.dot(&solve_upper_transposed(&self.r, y))
    }

    fn steering_target(&self, x0: &Array1<f64>, x1: &Array1<f64>, j_end: &Array1<f64>) -> Array1<f64> {
        x0 - j_end - self.backward[self.intervals].dot(x1)
    }

    fn signal(&self, u_hat: &Array1<f64>) -> ControlSignal {
        let k = NODES_PER_INTERVAL;
        let mut values = Vec::with_capacity(self.intervals * k);
        for iv in 0..self.intervals {
            for q in 0..k {
                let base = iv * 2 * k + 2 * q;
                let sw = self.node_weights[q].sqrt();
                values.push([u_hat[base] / sw, u_hat[base + 1] / sw]);
            }
        }
        ControlSignal {
            t1: self.t1,
            intervals: self.intervals,
            offsets: self.offsets.clone(),
            values,
        }
    }

    /// The map `K(Z)` on the grid (energy coordinates).
    fn fixed_point_map(
        &self,
        g: &GSpec,
        ps: &mut PseudoSpectral,
        x0: &Array1<f64>,
        x1: &Array1<f64>,
        z: &[Array1<f64>],
    ) -> Vec<Array1<f64>> {
        let j = self.forcing_integral(g, ps, z);
        let u_hat = self.solve_control(&self.steering_target(x0, x1, &j[self.intervals]));
        let width = 2 * NODES_PER_INTERVAL;
        let mut reached: Array1<f64> = Array1::zeros(self.n.nrows());
        let mut out = Vec::with_capacity(self.intervals + 1);
        for k in 0..=self.intervals {
            out.push(self.forward[k].dot(&(x0 - &j[k] + &reached)));
            if k < self.intervals {
                reached = reached + self.blocks[k].dot(&u_hat.slice(s![k * width..(k + 1) * width]));
            }
        }
        out
    }

    /// RK4 with `substeps` steps per grid interval for `ẋ = rhs(t, k, x)`,
    /// where `k` is the grid interval the step belongs to. Steps never straddle
    /// intervals, so the piecewise control is integrated without jump errors.
    fn rk4<F>(&self, x0: &Array1<f64>, substeps: usize, mut rhs: F) -> Array1<f64>
    where
        F: FnMut(f64, usize, &Array1<f64>) -> Array1<f64>,
    {
        let total = self.intervals * substeps;
        let h = self.t1 / total as f64;
        let mut x = x0.clone();
        for step in 0..total {
            let t = step as f64 * h;
            let k = step / substeps;
            let k1 = rhs(t, k, &x);
            let k2 = rhs(t + 0.5 * h, k, &(&x + &(&k1 * (0.5 * h))));
            let k3 = rhs(t + 0.5 * h, k, &(&x + &(&k2 * (0.5 * h))));
            let k4 = rhs(t + h, k, &(&x + &(&k3 * h)));
            x = &x + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (h / 6.0));
        }
        x
    }

    fn drive(&self, dx: &mut Array1<f64>, u: [f64; 2]) {
        for i in 0..2 {
            dx[self.r_index[i]] += self.sqrt_t[i] * u[i];
        }
    }

    /// Endpoint of `ẋ = Ãx - G(x) + √T u(t)` from an independent RK4 run.
    pub fn integrate(&self, g: &GSpec, x0: &FieldState, signal: &ControlSignal, substeps: usize) -> FieldState {
        let mut ps = self.pseudo(DEFAULT_DEALIAS_FACTOR);
        let a = self.to_energy(&x0.coeffs);
        let end = self.rk4(&a, substeps, |t, k, x| {
            let mut dx = self.n.dot(x) - self.nonlinear(g, &mut ps, x);
            self.drive(&mut dx, signal.eval_in(k, t));
            dx
        });
        FieldState {
            coeffs: self.from_energy(&end),
            time: self.t1,
        }
    }

    /// `Lip(g) ‖D⁻¹‖ t1 e^{‖Ã‖ t1}`, a bound on the sensitivity of `u` to `Z`.
    pub fn continuity_bound(&self, g: &GSpec) -> f64 {
        let n = crate::linalg::inf_norm(&self.n.view());
        g.gamma() / self.min_eig * self.t1 * (n * self.t1).exp()
    }

    fn check_state(&self, x: &FieldState) {
        assert_eq!(x.coeffs.len(), self.n.nrows(), "state dimension mismatch");
    }

    /// `‖a - b‖_H / max(1, ‖b‖_H)`.
    pub fn relative_error(&self, a: &FieldState, b: &FieldState) -> f64 {
        let ae = self.to_energy(&a.coeffs);
        let be = self.to_energy(&b.coeffs);
        let d = &ae - &be;
        d.dot(&d).sqrt() / be.dot(&be).sqrt().max(1.0)
    }
}

/// The control of the explicit formula for a given trajectory `Z` on the grid.
pub fn explicit_control(
    sys: &ControlSystem,
    g: &GSpec,
    z: &[FieldState],
    x0: &FieldState,
    x1: &FieldState,
) -> ControlSignal {
    sys.check_state(x0);
    sys.check_state(x1);
    assert_eq!(z.len(), sys.intervals + 1, "trajectory must be sampled on the grid");
    let mut ps = sys.pseudo(DEFAULT_DEALIAS_FACTOR);
    let ze: Vec<Array1<f64>> = z.iter().map(|s| sys.to_energy(&s.coeffs)).collect();
    let j = sys.forcing_integral(g, &mut ps, &ze);
    let y = sys.steering_target(&sys.to_energy(&x0.coeffs), &sys.to_energy(&x1.coeffs), &j[sys.intervals]);
    sys.signal(&sys.solve_control(&y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringOptions {
    pub relaxation: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub grid_intervals: usize,
    pub substeps: usize,
    pub dealias_factor: usize,
}

impl Default for SteeringOptions {
    fn default() -> Self {
        Self {
            relaxation: 1.0,
            max_iter: 200,
            tolerance: 1e-8,
            grid_intervals: DEFAULT_GRID_INTERVALS,
            substeps: 16,
            dealias_factor: DEFAULT_DEALIAS_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringResult {
    pub x0: FieldState,
    pub x1: FieldState,
    pub t1: f64,
    pub times: Vec<f64>,
    /// Control on the uniform grid.
    pub control: Vec<[f64; 2]>,
    pub signal: ControlSignal,
    /// Final iterate `Z` on the grid, state basis.
    pub trajectory: Vec<FieldState>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// `‖X(t1) - X1‖_H / max(1, ‖X1‖_H)` from an independent RK4 run.
    pub endpoint_error: f64,
    pub converged: bool,
    /// Non-monotone residual history at relaxation ≤ 0.1.
    pub flagged: bool,
    pub gramian_condition: f64,
}

impl SteeringResult {
    /// CSV `t,u1,u2`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let rows: Vec<Vec<f64>> = self
            .times
            .iter()
            .zip(&self.control)
            .map(|(t, u)| vec![*t, u[0], u[1]])
            .collect();
        crate::report::write_table(out, &["t", "u1", "u2"], &rows)
    }
}

fn sup_distance(a: &[Array1<f64>], b: &[Array1<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d.dot(&d).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Two-point steering `X0 → X1` in time `t1` by damped Picard iteration of `K`.
pub fn steer(
    op: &CutoffOperator,
    g: &GSpec,
    x0: &FieldState,
    x1: &FieldState,
    t1: f64,
    opts: &SteeringOptions,
) -> Result<SteeringResult, ControlError> {
    let sys = ControlSystem::new(op, t1, opts.grid_intervals)?;
    steer_with(&sys, g, x0, x1, opts)
}

pub fn steer_with(
    sys: &ControlSystem,
    g: &GSpec,
    x0: &FieldState,
    x1: &FieldState,
    opts: &SteeringOptions,
) -> Result<SteeringResult, ControlError> {
    sys.check_state(x0);
    sys.check_state(x1);
    let mut ps = sys.pseudo(opts.dealias_factor);
    let a = sys.to_energy(&x0.coeffs);
    let b = sys.to_energy(&x1.coeffs);
    let mut z = sys.fixed_point_map(&GSpec::Zero, &mut ps, &a, &b, &[]);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let kz = sys.fixed_point_map(g, &mut ps, &a, &b, &z);
        let next: Vec<Array1<f64>> = z
            .iter()
            .zip(&kz)
            .map(|(zi, ki)| zi * (1.0 - opts.relaxation) + ki * opts.relaxation)
            .collect();
        let change = sup_distance(&next, &z);
        history.push(change);
        z = next;
        if !change.is_finite() {
            break;
        }
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    let j = sys.forcing_integral(g, &mut ps, &z);
    let signal = sys.signal(&sys.solve_control(&sys.steering_target(&a, &b, &j[sys.intervals])));
    let end = sys.integrate(g, x0, &signal, opts.substeps);
    let monotone = history.windows(2).all(|w| w[1] <= w[0]);
    let result = SteeringResult {
        x0: x0.clone(),
        x1: x1.clone(),
        t1: sys.t1,
        times: sys.times(),
        control: signal.grid_samples(),
        endpoint_error: sys.relative_error(&end, x1),
        signal,
        trajectory: z
            .iter()
            .map(|ze| FieldState::from_coeffs(sys.from_energy(ze)))
            .collect(),
        iterations,
        residual_history: history,
        converged,
        flagged: opts.relaxation <= 0.1 && !monotone,
        gramian_condition: sys.condition,
    };
    if converged {
        Ok(result)
    } else {
        Err(ControlError::NotConverged(Box::new(result)))
    }
}

/// Control of the original system along the grid iterate:
/// `√T u' = √T u - (<α, π> - r)`.
pub fn original_control(sys: &ControlSystem, result: &SteeringResult) -> Result<Vec<[f64; 2]>, ControlError> {
    if sys.sqrt_t.contains(&0.0) {
        return Err(ControlError::ZeroTemperature);
    }
    Ok(result
        .trajectory
        .iter()
        .zip(&result.control)
        .map(|(z, u)| {
            let ze = sys.to_energy(&z.coeffs);
            let mut out = *u;
            for i in 0..2 {
                out[i] -= sys.a_full.row(sys.r_index[i]).dot(&ze) / sys.sqrt_t[i];
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    /// Relative distance of the original-system endpoint from `X1`.
    pub endpoint_error: f64,
    /// Relative distance between the two systems' endpoints.
    pub trajectory_gap: f64,
}

/// Drives the original system with `u'` reconstructed from the control
/// system's trajectory, both advanced by the same RK4 stages.
pub fn check_equivalence(
    sys: &ControlSystem,
    g: &GSpec,
    result: &SteeringResult,
    substeps: usize,
) -> Result<EquivalenceCheck, ControlError> {
    if sys.sqrt_t.contains(&0.0) {
        return Err(ControlError::ZeroTemperature);
    }
    let dim = sys.n.nrows();
    let mut ps = sys.pseudo(DEFAULT_DEALIAS_FACTOR);
    let a = sys.to_energy(&result.x0.coeffs);
    let joint0 = ndarray::concatenate![Axis(0), a, a];
    let end = sys.rk4(&joint0, substeps, |t, k, x| {
        let xt = x.slice(s![..dim]).to_owned();
        let xa = x.slice(s![dim..]).to_owned();
        let u = result.signal.eval_in(k, t);
        let mut dt = sys.n.dot(&xt) - sys.nonlinear(g, &mut ps, &xt);
        sys.drive(&mut dt, u);
        let mut da = sys.a_full.dot(&xa) - sys.nonlinear(g, &mut ps, &xa);
        let mut up = u;
        for i in 0..2 {
            up[i] -= sys.a_full.row(sys.r_index[i]).dot(&xt) / sys.sqrt_t[i];
        }
        sys.drive(&mut da, up);
        ndarray::concatenate![Axis(0), dt, da]
    });
    let xt = FieldState::from_coeffs(sys.from_energy(&end.slice(s![..dim]).to_owned()));
    let xa = FieldState::from_coeffs(sys.from_energy(&end.slice(s![dim..]).to_owned()));
    Ok(EquivalenceCheck {
        endpoint_error: sys.relative_error(&xa, &result.x1),
        trajectory_gap: sys.relative_error(&xa, &xt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_coupling, ModelConfig};
    use crate::operator::assemble;

    fn op(m: usize) -> CutoffOperator {
        let c = ModelConfig::new(m, 0.25, 1.0, 2.0, GSpec::Zero);
        assemble(&c, &make_coupling(&c).unwrap()).unwrap()
    }

    #[test]
    fn short_time_gramian_is_t_times_temperature() {
        let o = op(2);
        let t = 1e-4;
        let g = gramian(&o, t).unwrap();
        let diff = &g.d / t - &o.tmat();
        assert!(crate::linalg::max_abs(&diff) < 1e-3);
    }

    #[test]
    fn rank_of_smallest_cutoff() {
        assert_eq!(krylov_rank(&op(0)).unwrap().rank, 4);
    }

    #[test]
    fn zero_targets_give_zero_control() {
        let o = op(2);
        let sys = ControlSystem::new(&o, 2.0, 64).unwrap();
        let zero = FieldState::zeros(o.basis());
        let z = vec![zero.clone(); 65];
        let u = explicit_control(&sys, &GSpec::Zero, &z, &zero, &zero);
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn extended_gramian_matches_f64_where_resolved() {
        let o = op(2);
        let g = gramian(&o, 1.0).unwrap();
        let e = gramian_extended(&o, 1.0).unwrap();
        assert!(e.min_eig_resolved());
        assert!((e.min_eig / g.min_eig - 1.0).abs() < 1e-6, "{} {}", e.min_eig, g.min_eig);
        assert!((e.max_eig / g.max_eig - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_long_horizon() {
        assert!(matches!(gramian(&op(1), 11.0), Err(ControlError::InvalidTime(_))));
    }
}
