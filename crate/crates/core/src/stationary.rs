//! Stationary second moments: the exact linear (g = 0) covariance from the
//! Lyapunov equation, Monte Carlo reports built from simulation streams, and
//! the stationary identities and weighted sums evaluated on either.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{s, Array1, Array2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Basis;
use crate::linalg::{frobenius, symmetrize};
use crate::model::{make_coupling, ModelConfig, ModelError};
use crate::operator::{assemble, decompose, CutoffOperator, ModeLabel, OperatorError, SpectralDecomposition};
use crate::perturbation::free_left_eigenvector;
use crate::sde::{SimulationParams, SimulationStats, TrajectoryMoments};
use crate::stats::{loglog_fit, mean_stderr, mean_stderr_complex};

pub const LYAPUNOV_TOL: f64 = 1e-8;
pub const RESONANCE_FLOOR: f64 = 1e-12;
/// Highest wave number kept in Monte Carlo pair tables.
/// Sampling tolerance on the covariance bound, in standard errors.
pub const BOUND_SIGMAS: f64 = 3.0;
pub const MC_PAIR_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum StationaryError {
    #[error("drift is not stable: max Re λ = {0:e}")]
    NotStable(f64),
    #[error("|λ_j + conj(λ_k)| = {value:e} for modes {j} and {k}")]
    ResonanceDegeneracy { j: ModeLabel, k: ModeLabel, value: f64 },
    #[error("Lyapunov residual {0:e} exceeds {LYAPUNOV_TOL:e}")]
    LyapunovResidual(f64),
    #[error("report carries no nonlinearity moments")]
    MissingMoments,
    #[error("extrapolation needs equal ensembles at steps h and h/2")]
    MismatchedRuns,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Eigenbasis quantities shared by the Lyapunov solve and the step kernel.
pub(crate) struct ModalFrame {
    pub e: Array2<C64>,
    pub fw: Array2<C64>,
    pub lambdas: Vec<C64>,
    /// `T̃ = F_w T F_wᴴ`, i.e. `⟨f_j, T f_k†⟩`.
    pub t_tilde: Array2<C64>,
}

impl ModalFrame {
    pub fn new(op: &CutoffOperator, decomposition: &SpectralDecomposition) -> Self {
        let basis = op.basis();
        let fw = decomposition.weighted_left_matrix();
        let temps = op.temperatures();
        let n = fw.nrows();
        let t_tilde = Array2::from_shape_fn((n, n), |(j, k)| {
            (0..2)
                .map(|i| fw[[j, basis.r(i)]] * fw[[k, basis.r(i)]].conj() * temps[i])
                .sum()
        });
        Self {
            e: decomposition.right_matrix(),
            fw,
            lambdas: decomposition.lambdas(),
            t_tilde,
        }
    }

    /// `Re(E m Eᴴ)`, symmetrized: a modal second-moment table in the state basis.
    pub fn to_state(&self, m: &Array2<C64>) -> Array2<f64> {
        let eh = self.e.t().mapv(|z| z.conj());
        symmetrize(&self.e.dot(m).dot(&eh).mapv(|z| z.re))
    }

    /// `F_w σ F_wᴴ` for a real second-moment matrix.
    pub fn to_modes(&self, sigma: &Array2<f64>) -> Array2<C64> {
        let fh = self.fw.t().mapv(|z| z.conj());
        self.fw.dot(&sigma.mapv(|x| C64::new(x, 0.0))).dot(&fh)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CovarianceSource {
    LyapunovExact,
    MonteCarlo(SimulationParams),
    /// `2 · fine − coarse` from runs at `h` and `h/2`.
    Extrapolated { coarse: SimulationParams, fine: SimulationParams },
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub source: CovarianceSource,
    pub m: usize,
    pub temperatures: [f64; 2],
    pub labels: Vec<ModeLabel>,
    /// `E[X Xᵀ]` in the state basis.
    pub sigma: Array2<f64>,
    pub sigma_stderr: Array2<f64>,
    /// `E[Φ(f_j) Φ(f_k)*]`.
    pub mode_moments: Array2<C64>,
    pub stderr: Array2<f64>,
    /// `E[Φ(f_j) ⟨f_{k,π}, g⟩*]`; identically zero for the exact source.
    pub g_moments: Option<Array2<C64>>,
    pub g_sup: f64,
    /// `‖AΣ + ΣAᵀ + T‖ / ‖T‖` for the exact source.
    pub residual: Option<f64>,
    pub per_trajectory: Vec<TrajectoryMoments>,
}

impl CovarianceReport {
    pub fn is_exact(&self) -> bool {
        matches!(self.source, CovarianceSource::LyapunovExact)
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.m)
    }

    /// Evaluates a linear functional of the second moments, with a standard
    /// error across trajectories (zero for the exact source).
    pub fn estimate<F>(&self, f: F) -> (f64, f64)
    where
        F: Fn(&Array2<f64>) -> f64,
    {
        if self.per_trajectory.is_empty() {
            return (f(&self.sigma), 0.0);
        }
        let xs: Vec<f64> = self.per_trajectory.iter().map(|t| f(&t.xx)).collect();
        mean_stderr(&xs)
    }
}

/// Exact stationary covariance of the linear dynamics, solved in the eigenbasis.
pub fn lyapunov_stationary(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
) -> Result<CovarianceReport, StationaryError> {
    let frame = ModalFrame::new(op, decomposition);
    let n = frame.lambdas.len();
    let labels = decomposition.labels();
    // Modes the noise never reaches carry no variance, whatever their rate.
    let reached: Vec<bool> = (0..n).map(|j| frame.t_tilde[[j, j]].re > 0.0).collect();
    let max_re = (0..n)
        .filter(|&j| reached[j])
        .map(|j| frame.lambdas[j].re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(StationaryError::NotStable(max_re));
    }
    let mut modal = Array2::zeros((n, n));
    for j in 0..n {
        for k in 0..n {
            if !(reached[j] && reached[k]) {
                continue;
            }
            let d = frame.lambdas[j] + frame.lambdas[k].conj();
            if d.norm() < RESONANCE_FLOOR {
                return Err(StationaryError::ResonanceDegeneracy {
                    j: labels[j],
                    k: labels[k],
                    value: d.norm(),
                });
            }
            modal[[j, k]] = -frame.t_tilde[[j, k]] / d;
        }
    }
    let sigma = frame.to_state(&modal);
    let residual = lyapunov_residual(op, &sigma);
    if residual > LYAPUNOV_TOL {
        return Err(StationaryError::LyapunovResidual(residual));
    }
    let dim = op.dim();
    Ok(CovarianceReport {
        source: CovarianceSource::LyapunovExact,
        m: op.basis().m(),
        temperatures: op.temperatures(),
        labels,
        sigma,
        sigma_stderr: Array2::zeros((dim, dim)),
        mode_moments: modal,
        stderr: Array2::zeros((n, n)),
        g_moments: Some(Array2::zeros((n, n))),
        g_sup: 0.0,
        residual: Some(residual),
        per_trajectory: Vec::new(),
    })
}

/// `‖AΣ + ΣAᵀ + T‖_F / ‖T‖_F` in energy coordinates.
pub fn lyapunov_residual(op: &CutoffOperator, sigma: &Array2<f64>) -> f64 {
    let s = op.energy_scale();
    let n = op.to_energy(&op.a);
    let se = crate::linalg::rescale(sigma, &s, &s.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
    let t = op.tmat();
    let r = n.dot(&se) + se.dot(&n.t()) + &t;
    let scale = frobenius(&t.view());
    if scale == 0.0 {
        frobenius(&r.view())
    } else {
        frobenius(&r.view()) / scale
    }
}

fn g_moments_of(frame: &ModalFrame, basis: &Basis, xg: &Array2<f64>) -> Array2<C64> {
    let p = basis.field_len();
    let fpi = frame.fw.slice(s![.., p..2 * p]).t().mapv(|z| z.conj());
    frame.fw.dot(&xg.mapv(|x| C64::new(x, 0.0))).dot(&fpi)
}

/// Report built from a simulation stream.
pub fn from_simulation(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    stats: &SimulationStats,
) -> CovarianceReport {
    from_trajectories(
        op,
        decomposition,
        &stats.trajectories,
        CovarianceSource::MonteCarlo(stats.params.clone()),
        stats.g_spec.gamma(),
    )
}

/// Richardson extrapolation of two runs at steps `h` and `h/2`.
///
/// Trajectory `i` of one run is paired with trajectory `i` of the other, so
/// standard errors come from the paired combinations `2 F_i − C_i`.
pub fn richardson(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    coarse: &SimulationStats,
    fine: &SimulationStats,
) -> Result<CovarianceReport, StationaryError> {
    let ratio = coarse.params.h / fine.params.h;
    if (ratio - 2.0).abs() > 1e-9 || coarse.trajectories.len() != fine.trajectories.len() {
        return Err(StationaryError::MismatchedRuns);
    }
    let combine = |c: &Array2<f64>, f: &Array2<f64>| f * 2.0 - c;
    let trajs: Vec<TrajectoryMoments> = coarse
        .trajectories
        .iter()
        .zip(&fine.trajectories)
        .map(|(c, f)| TrajectoryMoments {
            samples: c.samples + f.samples,
            xx: combine(&c.xx, &f.xx),
            xg: match (&c.xg, &f.xg) {
                (Some(a), Some(b)) => Some(combine(a, b)),
                _ => None,
            },
            mean: &f.mean * 2.0 - &c.mean,
            r_energy_blocks: c
                .r_energy_blocks
                .iter()
                .zip(&f.r_energy_blocks)
                .map(|(a, b)| 2.0 * b - a)
                .collect(),
            field_energy_blocks: c
                .field_energy_blocks
                .iter()
                .zip(&f.field_energy_blocks)
                .map(|(a, b)| 2.0 * b - a)
                .collect(),
            final_state: f.final_state.clone(),
        })
        .collect();
    Ok(from_trajectories(
        op,
        decomposition,
        &trajs,
        CovarianceSource::Extrapolated {
            coarse: coarse.params.clone(),
            fine: fine.params.clone(),
        },
        fine.g_spec.gamma(),
    ))
}

fn from_trajectories(
    op: &CutoffOperator,
    decomposition: &SpectralDecomposition,
    trajs: &[TrajectoryMoments],
    source: CovarianceSource,
    g_sup: f64,
) -> CovarianceReport {
    let frame = ModalFrame::new(op, decomposition);
    let basis = op.basis();
    let dim = op.dim();
    let n = frame.lambdas.len();
    let count = trajs.len() as f64;
    let mut sigma = Array2::zeros((dim, dim));
    for t in trajs {
        sigma += &t.xx;
    }
    sigma /= count;
    let sigma_stderr = Array2::from_shape_fn((dim, dim), |(i, j)| {
        let xs: Vec<f64> = trajs.iter().map(|t| t.xx[[i, j]]).collect();
        mean_stderr(&xs).1
    });
    let per_modes: Vec<Array2<C64>> = trajs.iter().map(|t| frame.to_modes(&t.xx)).collect();
    let (mode_moments, stderr) = complex_mean_table(&per_modes, n);
    let g_moments = if trajs.iter().all(|t| t.xg.is_some()) {
        let per_g: Vec<Array2<C64>> = trajs
            .iter()
            .map(|t| g_moments_of(&frame, &basis, t.xg.as_ref().expect("checked")))
            .collect();
        Some(complex_mean_table(&per_g, n).0)
    } else {
        None
    };
    CovarianceReport {
        source,
        m: basis.m(),
        temperatures: op.temperatures(),
        labels: decomposition.labels(),
        sigma,
        sigma_stderr,
        mode_moments,
        stderr,
        g_moments,
        g_sup,
        residual: None,
        per_trajectory: trajs.to_vec(),
    }
}

fn complex_mean_table(samples: &[Array2<C64>], n: usize) -> (Array2<C64>, Array2<f64>) {
    let mut mean = Array2::zeros((n, n));
    let mut err = Array2::zeros((n, n));
    for j in 0..n {
        for k in 0..n {
            let xs: Vec<C64> = samples.iter().map(|m| m[[j, k]]).collect();
            let (m, e) = mean_stderr_complex(&xs);
            mean[[j, k]] = m;
            err[[j, k]] = e;
        }
    }
    (mean, err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyResidual {
    pub value: f64,
    pub target: f64,
    pub residual: f64,
    pub stderr: f64,
}

impl EnergyResidual {
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.residual == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.residual.abs() / self.stderr
        }
    }
}

/// `E[r₁² + r₂²] - (T₁ + T₂)/2`.
pub fn r_energy_check(report: &CovarianceReport) -> EnergyResidual {
    let b = report.basis();
    let (r1, r2) = (b.r(0), b.r(1));
    let (value, stderr) = report.estimate(|s| s[[r1, r1]] + s[[r2, r2]]);
    let target = 0.5 * (report.temperatures[0] + report.temperatures[1]);
    EnergyResidual {
        value,
        target,
        residual: value - target,
        stderr,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRow {
    pub j: ModeLabel,
    pub k: ModeLabel,
    pub residual: C64,
    pub stderr: f64,
    pub moment: C64,
    pub moment_stderr: f64,
    /// Right side of the covariance bound with `‖g‖∞` in place of `‖g‖₂`.
    pub bound: f64,
    /// Same bound with `‖g‖₂ ≤ √(2π) ‖g‖∞`.
    pub bound_with_length: f64,
}

impl PairRow {
    /// `|R| / stderr`; zero residual with zero stderr counts as 0.
    pub fn ratio(&self) -> f64 {
        let r = self.residual.norm();
        if self.stderr > 0.0 {
            r / self.stderr
        } else if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `|E[Φ_jΦ̄_k]| ≤ bound` up to sampling error (`3 stderr`) or round-off.
    pub fn bound_holds(&self) -> bool {
        self.moment.norm() <= self.bound + self.slack()
    }

    pub fn length_bound_holds(&self) -> bool {
        self.moment.norm() <= self.bound_with_length + self.slack()
    }

    fn slack(&self) -> f64 {
        BOUND_SIGMAS * self.moment_stderr + 1e-9 * self.bound
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairTable {
    pub max_n: usize,
    pub rows: Vec<PairRow>,
}

impl PairTable {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(PairRow::ratio).fold(0.0, f64::max)
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual.norm()).fold(0.0, f64::max)
    }

    pub fn bound_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.bound_holds()).count()
    }

    pub fn length_bound_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.length_bound_holds()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "j", "k", "re_r", "im_r", "stderr", "ratio", "abs_moment", "bound", "bound_with_length",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.j.to_string(),
                r.k.to_string(),
                r.residual.re.to_string(),
                r.residual.im.to_string(),
                r.stderr.to_string(),
                r.ratio().to_string(),
                r.moment.norm().to_string(),
                r.bound.to_string(),
                r.bound_with_length.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pair table with the default truncation: all modes for exact reports,
/// `n ≤ min(M/2, 16)` for Monte Carlo reports.
pub fn pair_identity_residual(
    report: &CovarianceReport,
    decomposition: &SpectralDecomposition,
) -> Result<PairTable, StationaryError> {
    let max_n = if report.is_exact() {
        report.m
    } else {
        (report.m / 2).min(MC_PAIR_CAP)
    };
    pair_identity_table(report, decomposition, max_n)
}

/// Stationarity identity `R_jk = (λ_j + λ̄_k) E[Φ_jΦ̄_k] - E[Φ_j γ̄_k] - E[γ_j Φ̄_k] + T̃_jk`
/// over distinct labels with `n ≤ max_n` (reservoir modes included), where
/// `γ_k = ⟨f_{k,π}, g(φ)⟩`. `R_kj = conj(R_jk)`, so each unordered pair is listed once.
pub fn pair_identity_table(
    report: &CovarianceReport,
    decomposition: &SpectralDecomposition,
    max_n: usize,
) -> Result<PairTable, StationaryError> {
    let g_mean = report.g_moments.as_ref().ok_or(StationaryError::MissingMoments)?;
    let basis = report.basis();
    let temps = report.temperatures;
    let frame_fw = decomposition.weighted_left_matrix();
    let lambdas = decomposition.lambdas();
    let t_tilde = |j: usize, k: usize| -> C64 {
        (0..2)
            .map(|i| frame_fw[[j, basis.r(i)]] * frame_fw[[k, basis.r(i)]].conj() * temps[i])
            .sum()
    };
    let fpi_norm: Vec<f64> = decomposition
        .modes
        .iter()
        .map(|m| crate::operator::field_norm_sqr(&basis, m.f_pi(&basis)).sqrt())
        .collect();
    let selected: Vec<usize> = (0..lambdas.len())
        .filter(|&j| report.labels[j].n <= max_n as i32)
        .collect();

    // Per-trajectory residuals for the standard errors.
    let per_traj: Vec<(Array2<C64>, Array2<C64>)> = if report.is_exact() {
        Vec::new()
    } else {
        let frame = ModalFrame {
            e: decomposition.right_matrix(),
            fw: frame_fw.clone(),
            lambdas: lambdas.clone(),
            t_tilde: Array2::zeros((0, 0)),
        };
        report
            .per_trajectory
            .iter()
            .map(|t| {
                let xg = t.xg.as_ref().ok_or(StationaryError::MissingMoments)?;
                Ok((frame.to_modes(&t.xx), g_moments_of(&frame, &basis, xg)))
            })
            .collect::<Result<_, StationaryError>>()?
    };
    let residual_of = |mm: &Array2<C64>, gm: &Array2<C64>, j: usize, k: usize| -> C64 {
        (lambdas[j] + lambdas[k].conj()) * mm[[j, k]] - gm[[j, k]] - gm[[k, j]].conj() + t_tilde(j, k)
    };
    let mut rows = Vec::new();
    for (a, &j) in selected.iter().enumerate() {
        for &k in &selected[a + 1..] {
            let residual = residual_of(&report.mode_moments, g_mean, j, k);
            let (stderr, moment_stderr) = if per_traj.is_empty() {
                (0.0, 0.0)
            } else {
                let xs: Vec<C64> = per_traj.iter().map(|(mm, gm)| residual_of(mm, gm, j, k)).collect();
                let ms: Vec<C64> = per_traj.iter().map(|(mm, _)| mm[[j, k]]).collect();
                (mean_stderr_complex(&xs).1, mean_stderr_complex(&ms).1)
            };
            let denom = (lambdas[j] + lambdas[k].conj()).norm();
            let sj = report.mode_moments[[j, j]].re.max(0.0).sqrt();
            let sk = report.mode_moments[[k, k]].re.max(0.0).sqrt();
            let g_term = (sj * fpi_norm[k] + sk * fpi_norm[j]) * report.g_sup;
            let t_term = t_tilde(j, k).norm();
            rows.push(PairRow {
                j: report.labels[j],
                k: report.labels[k],
                residual,
                stderr,
                moment: report.mode_moments[[j, k]],
                moment_stderr,
                bound: (g_term + t_term) / denom,
                bound_with_length: (g_term * (2.0 * PI).sqrt() + t_term) / denom,
            });
        }
    }
    Ok(PairTable { max_n, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Whether two estimates are consistent within `k` combined standard errors.
    pub fn overlaps(&self, other: &Estimate, k: f64) -> bool {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.value - other.value).abs() <= k * se
    }
}

impl From<(f64, f64)> for Estimate {
    fn from((value, stderr): (f64, f64)) -> Self {
        Self { value, stderr }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeVariance {
    pub n: usize,
    pub var_phi: f64,
    pub var_pi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSums {
    pub m: usize,
    pub theta: f64,
    /// `Σ |e_r|² E|Φ(f)|²` over all modes.
    pub s1: Estimate,
    /// `Σ (n²+1)^{θ-1} E|Φ(f(0))|²` over the free left eigenvectors.
    pub s2: Estimate,
    /// `Σ_{|n| ≤ M} (n²+1)^θ E|φ̂(n)|²`.
    pub s3: Estimate,
    pub hs_exponent: f64,
    pub hs: Estimate,
    pub per_mode: Vec<ModeVariance>,
    /// Fitted log-log slope of `var φ̂(n)` against `n`; reported only.
    pub tail_slope: f64,
    /// Global two-sided constant for `|e_r|² / (n²+1)^{θ-1}`.
    pub weight_constant: f64,
}

/// `E|φ̂(n)|²` and `E|π̂(n)|²` for `n = 0..=M`.
pub fn mode_variances(basis: &Basis, sigma: &Array2<f64>) -> Vec<ModeVariance> {
    let p = basis.field_len();
    (0..=basis.m())
        .map(|n| {
            let v = |off: usize| {
                if n == 0 {
                    sigma[[off, off]]
                } else {
                    let (a, b) = (off + 2 * n - 1, off + 2 * n);
                    0.25 * (sigma[[a, a]] + sigma[[b, b]])
                }
            };
            ModeVariance {
                n,
                var_phi: v(0),
                var_pi: v(p),
            }
        })
        .collect()
}

fn quadratic_form(row: &Array1<C64>, sigma: &Array2<f64>) -> f64 {
    let n = row.len();
    let mut acc = 0.0;
    for a in 0..n {
        if row[a] == C64::new(0.0, 0.0) {
            continue;
        }
        let mut inner = C64::new(0.0, 0.0);
        for b in 0..n {
            inner += row[b].conj() * sigma[[a, b]];
        }
        acc += (row[a] * inner).re;
    }
    acc
}

/// The `s` used for the `H_s` check.
pub fn hs_exponent(theta: f64) -> f64 {
    theta - 1.5 - 0.1
}

/// `E‖Φ‖²_{H_s}`.
pub fn hs_expectation(report: &CovarianceReport, s: f64) -> Estimate {
    let w = report.basis().sobolev_weights(s);
    report
        .estimate(|sig| w.iter().enumerate().map(|(i, w)| w * sig[[i, i]]).sum())
        .into()
}

pub fn weighted_sums(report: &CovarianceReport, decomposition: &SpectralDecomposition, theta: f64) -> WeightedSums {
    let basis = report.basis();
    let weights = basis.pairing_weights();
    let weight_rows = |f: &Array1<C64>| -> Array1<C64> {
        f.iter().zip(&weights).map(|(z, w)| z * *w).collect()
    };
    let s1_rows: Vec<(f64, Array1<C64>)> = decomposition
        .modes
        .iter()
        .map(|m| (m.e_r_norm(&basis).powi(2), weight_rows(&m.f_left)))
        .collect();
    let s2_rows: Vec<(f64, Array1<C64>)> = decomposition
        .modes
        .iter()
        .map(|m| {
            let n2 = if m.label.n < 0 { 1.0 } else { (m.label.n as f64).powi(2) };
            let f0 = free_left_eigenvector(&basis, &m.label);
            ((n2 + 1.0).powf(theta - 1.0), weight_rows(&f0))
        })
        .collect();
    let sum_rows = |rows: &[(f64, Array1<C64>)], sig: &Array2<f64>| -> f64 {
        rows.iter().map(|(w, f)| w * quadratic_form(f, sig)).sum()
    };
    let s1 = report.estimate(|sig| sum_rows(&s1_rows, sig)).into();
    let s2 = report.estimate(|sig| sum_rows(&s2_rows, sig)).into();
    let s3 = report
        .estimate(|sig| {
            mode_variances(&basis, sig)
                .iter()
                .map(|v| {
                    let w = ((v.n * v.n) as f64 + 1.0).powf(theta);
                    if v.n == 0 { w * v.var_phi } else { 2.0 * w * v.var_phi }
                })
                .sum()
        })
        .into();
    let s = hs_exponent(theta);
    let per_mode = mode_variances(&basis, &report.sigma);
    let tail: Vec<(f64, f64)> = per_mode
        .iter()
        .filter(|v| v.n >= 1 && v.var_phi > 0.0)
        .map(|v| (v.n as f64, v.var_phi))
        .collect();
    let tail_slope = loglog_fit(&tail).map(|f| f.slope).unwrap_or(f64::NAN);
    WeightedSums {
        m: basis.m(),
        theta,
        s1,
        s2,
        s3,
        hs_exponent: s,
        hs: hs_expectation(report, s),
        per_mode,
        tail_slope,
        weight_constant: weight_constant(decomposition, theta),
    }
}

/// Largest `c` with `c ≤ |e_r|² / (n²+1)^{θ-1} ≤ 1/c` over all wave modes `n ≥ 1`.
pub fn weight_constant(decomposition: &SpectralDecomposition, theta: f64) -> f64 {
    let basis = decomposition.basis();
    let (lo, hi) = decomposition
        .modes
        .iter()
        .filter(|m| m.label.n >= 1)
        .map(|m| {
            let n = m.label.n as f64;
            m.e_r_norm(&basis).powi(2) / (n * n + 1.0).powf(theta - 1.0)
        })
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    lo.min(1.0 / hi)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<WeightedSums>,
}

impl SweepTable {
    fn spread(&self, pick: impl Fn(&WeightedSums) -> f64) -> f64 {
        let (lo, hi) = self
            .rows
            .iter()
            .map(pick)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        hi / lo
    }

    /// Max/min ratios of `S₁, S₂, S₃` and `E‖Φ‖²_{H_s}` across the sweep.
    pub fn ratios(&self) -> [f64; 4] {
        [
            self.spread(|r| r.s1.value),
            self.spread(|r| r.s2.value),
            self.spread(|r| r.s3.value),
            self.spread(|r| r.hs.value),
        ]
    }

    /// Global weight constant: the minimum over all sweep members.
    pub fn weight_constant(&self) -> f64 {
        self.rows.iter().map(|r| r.weight_constant).fold(f64::INFINITY, f64::min)
    }

    /// Whether every pair of rows agrees on `S₁, S₂, S₃` within `k` combined stderrs.
    pub fn mutually_consistent(&self, k: f64) -> bool {
        self.rows.iter().enumerate().all(|(a, x)| {
            self.rows[a + 1..]
                .iter()
                .all(|y| x.s1.overlaps(&y.s1, k) && x.s2.overlaps(&y.s2, k) && x.s3.overlaps(&y.s3, k))
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "m", "s1", "s1_stderr", "s2", "s2_stderr", "s3", "s3_stderr", "hs", "hs_stderr", "tail_slope",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                r.s1.value.to_string(),
                r.s1.stderr.to_string(),
                r.s2.value.to_string(),
                r.s2.stderr.to_string(),
                r.s3.value.to_string(),
                r.s3.stderr.to_string(),
                r.hs.value.to_string(),
                r.hs.stderr.to_string(),
                r.tail_slope.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_mode_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "n", "var_phi", "var_pi"])?;
        for r in &self.rows {
            for v in &r.per_mode {
                w.write_record([r.m.to_string(), v.n.to_string(), v.var_phi.to_string(), v.var_pi.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Operator, decomposition and exact report for one cutoff.
pub fn exact_chain(
    config: &ModelConfig,
) -> Result<(CutoffOperator, SpectralDecomposition, CovarianceReport), StationaryError> {
    let coupling = make_coupling(config)?;
    let op = assemble(config, &coupling)?;
    let dec = decompose(&op)?;
    let report = lyapunov_stationary(&op, &dec)?;
    Ok((op, dec, report))
}

/// Exact (g = 0) sweep over cutoffs, run in parallel.
pub fn exact_sweep(base: &ModelConfig, ms: &[usize]) -> Result<SweepTable, StationaryError> {
    let rows = ms
        .par_iter()
        .map(|&m| {
            let config = ModelConfig { m, ..base.clone() };
            let (_, dec, report) = exact_chain(&config)?;
            Ok(weighted_sums(&report, &dec, config.theta))
        })
        .collect::<Result<Vec<_>, StationaryError>>()?;
    Ok(SweepTable { rows })
}

/// Largest relative error of `r ≈ Σ_j e_{j,r} Φ(f_j)` over the given states.
pub fn completeness_defect(decomposition: &SpectralDecomposition, states: &[Array1<f64>]) -> f64 {
    let basis = decomposition.basis();
    let e = decomposition.right_matrix();
    let fw = decomposition.weighted_left_matrix();
    let er = e.slice(s![2 * basis.field_len().., ..]).to_owned();
    states
        .iter()
        .map(|x| {
            let phi = fw.dot(&x.mapv(|v| C64::new(v, 0.0)));
            let r = er.dot(&phi);
            let scale = crate::linalg::vec_norm(x).max(f64::MIN_POSITIVE);
            (0..2)
                .map(|i| (r[i] - x[basis.r(i)]).norm())
                .fold(0.0, f64::max)
                / scale
        })
        .fold(0.0, f64::max)
}

/// `E‖Φ‖²_{H_s}` over a grid of exponents.
pub fn hs_profile(report: &CovarianceReport, exponents: &[f64]) -> Vec<(f64, Estimate)> {
    exponents.iter().map(|&s| (s, hs_expectation(report, s))).collect()
}

/// Entry-wise comparison of a Monte Carlo covariance with an exact one:
/// fraction of upper-triangle entries within `k` standard errors, and the worst z-score.
pub fn covariance_coverage(mc: &CovarianceReport, exact: &CovarianceReport, k: f64) -> (f64, f64) {
    let dim = mc.sigma.nrows();
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in i..dim {
            let diff = (mc.sigma[[i, j]] - exact.sigma[[i, j]]).abs();
            let se = mc.sigma_stderr[[i, j]];
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            if z <= k {
                inside += 1;
            }
            total += 1;
        }
    }
    (inside as f64 / total as f64, worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingSpec, GSpec};

    fn chain(m: usize, theta: f64) -> (CutoffOperator, SpectralDecomposition, CovarianceReport) {
        exact_chain(&ModelConfig::new(m, theta, 1.0, 2.0, GSpec::Zero)).unwrap()
    }

    #[test]
    fn reservoir_energy_is_mean_temperature() {
        let (_, _, rep) = chain(6, 0.25);
        let e = r_energy_check(&rep);
        assert!(e.residual.abs() < 1e-10, "{e:?}");
        assert!(rep.residual.unwrap() < 1e-10);
    }

    #[test]
    fn zero_coupling_leaves_field_cold() {
        let config = ModelConfig::new(3, 0.0, 1.0, 2.0, GSpec::Zero);
        let op = assemble(&config, &CouplingSpec::zero(3, 0.0)).unwrap();
        let dec = decompose(&op).unwrap();
        let rep = lyapunov_stationary(&op, &dec).unwrap();
        let b = op.basis();
        let p = b.field_len();
        assert!(rep.sigma.slice(s![..2 * p, ..]).iter().all(|x| x.abs() < 1e-14));
        assert!((rep.sigma[[b.r(0), b.r(0)]] - 0.5).abs() < 1e-14);
        assert!((rep.sigma[[b.r(1), b.r(1)]] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_pair_identity_vanishes() {
        let (_, dec, rep) = chain(4, 0.25);
        let t = pair_identity_residual(&rep, &dec).unwrap();
        assert!(t.max_abs_residual() < 1e-10, "{}", t.max_abs_residual());
    }

    #[test]
    fn expansion_reconstructs_reservoirs() {
        let (_, dec, _) = chain(5, 0.25);
        let dim = dec.basis().dim();
        let states: Vec<Array1<f64>> = (0..4)
            .map(|s| Array1::from_shape_fn(dim, |i| ((i * 7 + s * 13) as f64).sin()))
            .collect();
        assert!(completeness_defect(&dec, &states) < 1e-10);
    }
}
