//! Batch driver: a flat TOML manifest selects a pipeline, every output lands
//! under `output_dir/<manifest hash>/`, and the exit status reflects the verdicts.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{self, ControlError, SteeringOptions};
use crate::model::{make_coupling, FieldState, GSpec, ModelConfig, ModelError};
use crate::operator::{assemble, decompose, CutoffOperator, OperatorError, SpectralDecomposition};
use crate::perturbation::{self, PerturbationError};
use crate::report::Verdict;
use crate::sde::{self, SdeError, SimulationParams};
use crate::stationary::{self, StationaryError};

pub const WORKERS_ENV: &str = "CUTOFF_WAVE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Eig,
    Perturb,
    Gramian,
    Rank,
    Steer,
    Simulate,
    Stationary,
    Sweep,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Zero,
    Tanh,
    Sin,
}

fn default_t1() -> f64 {
    2.0
}
fn default_gramian_t() -> f64 {
    1.0
}
fn default_h() -> f64 {
    0.01
}
fn default_t_sample() -> f64 {
    2000.0
}
fn default_n_ensemble() -> usize {
    64
}
fn default_sample_every() -> usize {
    1
}
fn default_m_sweep() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_n_range() -> [usize; 2] {
    [8, 64]
}
fn default_dealias() -> usize {
    crate::model::DEFAULT_DEALIAS_FACTOR
}

/// Experiment description. Physics parameters have no defaults; grids,
/// horizons and ensemble sizes do. All quantities are dimensionless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub command: Command,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Ultraviolet cutoff.
    pub m: usize,
    pub theta: f64,
    pub temperature1: f64,
    pub temperature2: f64,
    pub nonlinearity: Nonlinearity,
    /// Amplitude of the nonlinearity (`sup |g|`); must be 0 for `zero`.
    pub gamma: f64,
    pub coupling_scale: f64,
    pub amplitude_ratio: f64,
    /// Relative phase of the second coupling function, radians.
    pub phase_offset: f64,
    #[serde(default = "default_dealias")]
    pub dealias_factor: usize,
    /// Steering horizon.
    #[serde(default = "default_t1")]
    pub t1: f64,
    /// Gramian horizon.
    #[serde(default = "default_gramian_t")]
    pub gramian_t: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// Burn-in time; absent means `50 / |max Re λ|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_burn: Option<f64>,
    #[serde(default = "default_t_sample")]
    pub t_sample: f64,
    #[serde(default = "default_n_ensemble")]
    pub n_ensemble: usize,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_m_sweep")]
    pub m_sweep: Vec<usize>,
    #[serde(default = "default_n_range")]
    pub n_range: [usize; 2],
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Exit status: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. }
            | CliError::Parse(_)
            | CliError::Invalid(_)
            | CliError::Model(_)
            | CliError::Perturbation(PerturbationError::InvalidRange { .. })
            | CliError::Perturbation(PerturbationError::InsufficientRange(..))
            | CliError::Control(ControlError::InvalidTime(_))
            | CliError::Sde(SdeError::InvalidStep(_))
            | CliError::Sde(SdeError::InvalidParams(_))
            | CliError::Sde(SdeError::StepUnstable(sde::Instability::StepTooLarge { .. })) => 2,
            CliError::Operator(OperatorError::CutoffMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let m: Self = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Hex SHA-256 of the canonical serialization, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn g_spec(&self) -> GSpec {
        match self.nonlinearity {
            Nonlinearity::Zero => GSpec::Zero,
            Nonlinearity::Tanh => GSpec::ScaledTanh { gamma: self.gamma },
            Nonlinearity::Sin => GSpec::ScaledSin { gamma: self.gamma },
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.config_at(self.m)
    }

    fn config_at(&self, m: usize) -> ModelConfig {
        ModelConfig {
            m,
            theta: self.theta,
            t1: self.temperature1,
            t2: self.temperature2,
            phase_offset: self.phase_offset,
            coupling_scale: self.coupling_scale,
            amplitude_ratio: self.amplitude_ratio,
            g_spec: self.g_spec(),
            dealias_factor: self.dealias_factor,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.nonlinearity == Nonlinearity::Zero && self.gamma != 0.0 {
            return Err(CliError::Invalid("gamma must be 0 when nonlinearity = \"zero\"".into()));
        }
        self.model_config().validate()?;
        for &m in &self.m_sweep {
            self.config_at(m).validate()?;
        }
        if self.m_sweep.is_empty() {
            return Err(CliError::Invalid("m_sweep is empty".into()));
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(CliError::Invalid(format!("{name} = {x} must be positive")))
            }
        };
        positive("h", self.h)?;
        positive("t_sample", self.t_sample)?;
        positive("t1", self.t1)?;
        positive("gramian_t", self.gramian_t)?;
        if let Some(tb) = self.t_burn {
            if !(tb >= 0.0 && tb.is_finite()) {
                return Err(CliError::Invalid(format!("t_burn = {tb} must be non-negative")));
            }
        }
        if self.n_ensemble == 0 || self.sample_every == 0 {
            return Err(CliError::Invalid("n_ensemble and sample_every must be at least 1".into()));
        }
        if self.n_range[0] > self.n_range[1] {
            return Err(CliError::Invalid(format!("n_range {:?} is reversed", self.n_range)));
        }
        Ok(())
    }

    pub fn simulation_params(&self) -> SimulationParams {
        SimulationParams {
            h: self.h,
            t_burn: self.t_burn,
            t_sample: self.t_sample,
            n_ensemble: self.n_ensemble,
            seed: self.seed,
            sample_every: self.sample_every,
            blocks: sde::DEFAULT_BLOCKS,
            dealias_factor: self.dealias_factor,
        }
    }
}

/// Command-line flags; each overrides the manifest field of the same name.
#[derive(Debug, Parser)]
#[command(name = "cutoff-wave", version, about = "Cutoff wave system verification driver")]
pub struct Cli {
    pub command: Command,
    /// TOML manifest; flags below override its fields.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub temperature1: Option<f64>,
    #[arg(long)]
    pub temperature2: Option<f64>,
    #[arg(long)]
    pub nonlinearity: Option<Nonlinearity>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub coupling_scale: Option<f64>,
    #[arg(long)]
    pub amplitude_ratio: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phase_offset: Option<f64>,
    #[arg(long)]
    pub dealias_factor: Option<usize>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub gramian_t: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub t_burn: Option<f64>,
    #[arg(long)]
    pub t_sample: Option<f64>,
    #[arg(long)]
    pub n_ensemble: Option<usize>,
    #[arg(long)]
    pub sample_every: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub m_sweep: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub n_range: Option<Vec<usize>>,
}

impl Cli {
    /// Merges the manifest file (if any) with the flags.
    pub fn manifest(&self) -> Result<ExperimentManifest, CliError> {
        let mut table: toml::Table = match &self.manifest {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Read {
                    path: path.clone(),
                    source,
                })?;
                text.parse()?
            }
            None => toml::Table::new(),
        };
        let command = toml::Value::try_from(self.command).expect("command serializes");
        table.insert("command".into(), command);
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    table.insert(
                        stringify!($field).into(),
                        toml::Value::try_from(v.clone())
                            .map_err(|e| CliError::Invalid(format!("{}: {e}", stringify!($field))))?,
                    );
                }
            };
        }
        if let Some(seed) = self.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(m) = self.m {
            table.insert("m".into(), toml::Value::Integer(m as i64));
        }
        set!(output_dir);
        set!(theta);
        set!(temperature1);
        set!(temperature2);
        set!(nonlinearity);
        set!(gamma);
        set!(coupling_scale);
        set!(amplitude_ratio);
        set!(phase_offset);
        set!(t1);
        set!(gramian_t);
        set!(h);
        set!(t_burn);
        set!(t_sample);
        if let Some(v) = self.dealias_factor {
            table.insert("dealias_factor".into(), toml::Value::Integer(v as i64));
        }
        if let Some(v) = self.n_ensemble {
            table.insert("n_ensemble".into(), toml::Value::Integer(v as i64));
        }
        if let Some(v) = self.sample_every {
            table.insert("sample_every".into(), toml::Value::Integer(v as i64));
        }
        if let Some(v) = &self.m_sweep {
            table.insert(
                "m_sweep".into(),
                toml::Value::Array(v.iter().map(|&m| toml::Value::Integer(m as i64)).collect()),
            );
        }
        if let Some(v) = &self.n_range {
            table.insert(
                "n_range".into(),
                toml::Value::Array(v.iter().map(|&m| toml::Value::Integer(m as i64)).collect()),
            );
        }
        ExperimentManifest::from_toml(&toml::to_string(&table).expect("table serializes"))
    }
}

/// Output directory for one manifest; files carry the hash in a header line
/// (CSV) or field (JSON).
pub struct Artifacts {
    pub dir: PathBuf,
    pub hash: String,
    pub seed: u64,
}

impl Artifacts {
    pub fn create(manifest: &ExperimentManifest) -> Result<Self, CliError> {
        let hash = manifest.hash();
        let dir = manifest.output_dir.join(&hash);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
        Ok(Self {
            dir,
            hash,
            seed: manifest.seed,
        })
    }

    /// Writes a CSV whose first line is `# manifest <hash> seed <seed>`.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut buf = format!("# manifest {} seed {}\n", self.hash, self.seed).into_bytes();
        body(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let wrapped = serde_json::json!({
            "manifest_hash": self.hash,
            "seed": self.seed,
            "data": value,
        });
        let path = self.dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(&wrapped)?)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub manifest_hash: String,
    pub command: Command,
    pub seed: u64,
    pub timestamp: u64,
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
}

struct Chain {
    op: CutoffOperator,
    dec: SpectralDecomposition,
}

fn chain(config: &ModelConfig) -> Result<Chain, CliError> {
    let coupling = make_coupling(config)?;
    let op = assemble(config, &coupling)?;
    let dec = decompose(&op)?;
    Ok(Chain { op, dec })
}

fn run_eig(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let c = chain(&man.model_config())?;
    out.csv("eig.csv", |w| c.dec.write_csv(w))?;
    let norm = c.op.norm_a();
    Ok(vec![
        Verdict::below(
            "spectral_stability",
            "every eigenvalue of the cutoff drift has negative real part",
            c.dec.max_real_part(),
            0.0,
        ),
        Verdict::at_most(
            "eigen_residual",
            "eigenpair residuals are small relative to the drift norm",
            c.dec.max_residual() / norm,
            0.0,
            crate::operator::RESIDUAL_TOL,
        ),
    ])
}

fn run_perturb(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let config = man.model_config();
    let coupling = make_coupling(&config)?;
    let op = assemble(&config, &coupling)?;
    let dec = decompose(&op)?;
    let range = (man.n_range[0], man.n_range[1]);
    let scan = perturbation::error_scaling_scan(&dec, &coupling, range)?;
    let orth = perturbation::r_orthogonality_scan(&dec, range, config.theta)?;
    out.csv("eigen_error_imag.csv", |w| scan.imag.write_csv(w))?;
    out.csv("eigen_error_real.csv", |w| scan.real.write_csv(w))?;
    out.csv("eigen_error_real_other_pairing.csv", |w| scan.literal_real.write_csv(w))?;
    out.csv("r_overlap.csv", |w| orth.overlap.write_csv(w))?;
    out.csv("r_weights.csv", |w| {
        let rows: Vec<Vec<f64>> = orth
            .weights
            .iter()
            .map(|&(n, s, r)| vec![n as f64, s as f64, r])
            .collect();
        crate::report::write_table(w, &["n", "sigma", "ratio"], &rows)
    })?;
    out.json(
        "r_weight_band.json",
        &serde_json::json!({
            "band": [orth.weight_band.0, orth.weight_band.1],
            "band_constant": orth.band_constant(),
            "slope_plus": orth.weight_slopes[0],
            "slope_minus": orth.weight_slopes[1],
        }),
    )?;
    let mut v = vec![scan.imag.verdict(), scan.real.verdict(), orth.overlap.verdict()];
    v.push(Verdict::exceeds(
        "r_weight_band",
        "normalized reservoir weights admit a two-sided constant",
        orth.band_constant(),
        0.0,
    ));
    Ok(v)
}

fn run_gramian(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let c = chain(&man.model_config())?;
    let g = control::gramian(&c.op, man.gramian_t)?;
    let e = control::gramian_extended(&c.op, man.gramian_t)?;
    out.json(
        "gramian.json",
        &serde_json::json!({
            "t": g.t,
            "min_eig": g.min_eig,
            "max_eig": g.max_eig,
            "resolution_floor": g.resolution_floor,
            "quadrature_error_estimate": g.quadrature_error_estimate,
            "extended": e,
        }),
    )?;
    let mut v = vec![Verdict::exceeds(
        "gramian_positive",
        "the controllability Gramian is positive definite, resolved above round-off",
        e.min_eig,
        e.resolution_floor,
    )];
    v.push(Verdict::below(
        "gramian_converged",
        "the smallest Gramian eigenvalue is stable under quadrature refinement",
        e.min_eig_change,
        1e-3,
    ));
    Ok(v)
}

fn run_rank(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let config = man.model_config();
    let coupling = make_coupling(&config)?;
    let op = assemble(&config, &coupling)?;
    let dim = op.dim() as f64;
    let full = control::krylov_rank(&op)?;
    let knocked = assemble(&config, &coupling.without_mode(3.min(config.m)))?;
    let reduced = control::krylov_rank(&knocked)?;
    out.json(
        "rank.json",
        &serde_json::json!({
            "dim": op.dim(),
            "rank": full.rank,
            "smallest_retained": full.smallest_retained,
            "rank_without_mode_3": reduced.rank,
        }),
    )?;
    Ok(vec![
        Verdict::within("krylov_rank", "the noise columns and their drift images span the state space", full.rank as f64, dim, 0.0),
        Verdict::at_most(
            "krylov_rank_negative_control",
            "switching off one coupling mode loses controllability",
            reduced.rank as f64,
            dim - 1.0,
            0.0,
        ),
    ])
}

fn random_unit_state(dim: usize, rng: &mut ChaCha8Rng) -> FieldState {
    let v: Array1<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let n = v.dot(&v).sqrt();
    FieldState::from_coeffs(v / n)
}

fn run_steer(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let c = chain(&man.model_config())?;
    let g = man.g_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(man.seed);
    let x0 = random_unit_state(c.op.dim(), &mut rng);
    let x1 = random_unit_state(c.op.dim(), &mut rng);
    let opts = SteeringOptions::default();
    let result = match control::steer(&c.op, &g, &x0, &x1, man.t1, &opts) {
        Ok(r) => r,
        Err(ControlError::NotConverged(r)) => *r,
        Err(e) => return Err(e.into()),
    };
    out.csv("control.csv", |w| result.write_csv(w))?;
    out.json(
        "steer.json",
        &serde_json::json!({
            "iterations": result.iterations,
            "converged": result.converged,
            "flagged": result.flagged,
            "endpoint_error": result.endpoint_error,
            "gramian_condition": result.gramian_condition,
            "residual_history": result.residual_history,
        }),
    )?;
    let tol = if g.is_zero() { 1e-6 } else { 1e-4 };
    Ok(vec![
        Verdict::within("steering_converged", "the fixed-point iteration for the control converges", result.converged as u8 as f64, 1.0, 0.0),
        Verdict::at_most(
            "steering_endpoint",
            "the computed control steers the start state to the target",
            result.endpoint_error,
            0.0,
            tol,
        ),
    ])
}

fn simulate_report(
    man: &ExperimentManifest,
    config: &ModelConfig,
    out: Option<&Artifacts>,
) -> Result<(Chain, stationary::CovarianceReport, sde::SimulationStats), CliError> {
    let c = chain(config)?;
    let stats = sde::simulate(&c.op, &c.dec, &config.g_spec, &man.simulation_params())?;
    if let Some(out) = out {
        out.csv(&format!("series_m{}.csv", config.m), |w| stats.write_series(w))?;
    }
    let report = stationary::from_simulation(&c.op, &c.dec, &stats);
    Ok((c, report, stats))
}

fn energy_verdicts(report: &stationary::CovarianceReport) -> Vec<Verdict> {
    let e = stationary::r_energy_check(report);
    if report.is_exact() {
        vec![Verdict::within(
            "r_energy",
            "mean reservoir energy equals the mean temperature",
            e.value,
            e.target,
            1e-8,
        )]
    } else {
        vec![Verdict::within(
            "r_energy",
            "mean reservoir energy equals the mean temperature (within 3 standard errors)",
            e.value,
            e.target,
            3.0 * e.stderr,
        )]
    }
}

fn run_simulate(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let config = man.model_config();
    let (c, report, stats) = simulate_report(man, &config, Some(out))?;
    let e = stationary::r_energy_check(&report);
    let (final_mean, final_se) = stats.final_r_energy(c.op.basis());
    out.json(
        "simulate.json",
        &serde_json::json!({
            "t_burn": stats.t_burn,
            "steps_burn": stats.steps_burn,
            "steps_sample": stats.steps_sample,
            "n_ensemble": stats.trajectories.len(),
            "r_energy": e.value,
            "r_energy_stderr": e.stderr,
            "r_energy_final_time": final_mean,
            "r_energy_final_time_stderr": final_se,
            "block_autocorrelation": stats.block_autocorrelation(),
            "effective_sample_size": stats.effective_sample_size(),
        }),
    )?;
    let mut v = energy_verdicts(&report);
    if config.g_spec.is_zero() {
        let exact = stationary::lyapunov_stationary(&c.op, &c.dec)?;
        let (coverage, _) = stationary::covariance_coverage(&report, &exact, 3.0);
        v.push(Verdict::at_least(
            "covariance_coverage",
            "sample covariance entries match the exact stationary covariance within 3 standard errors",
            coverage,
            0.99,
            0.0,
        ));
    }
    Ok(v)
}

fn pair_verdicts(table: &stationary::PairTable, exact: bool) -> Vec<Verdict> {
    let identity = if exact {
        Verdict::at_most(
            "pair_identity",
            "the equal-time stationarity identity holds for every mode pair",
            table.max_abs_residual(),
            0.0,
            stationary::LYAPUNOV_TOL,
        )
    } else {
        Verdict::at_most(
            "pair_identity",
            "the equal-time stationarity identity holds for every mode pair (within 3 standard errors)",
            table.max_ratio(),
            3.0,
            0.0,
        )
    };
    vec![
        identity,
        Verdict::at_most(
            "pair_bound",
            "each equal-time mode covariance obeys the a priori bound",
            table.bound_violations() as f64,
            0.0,
            0.0,
        ),
    ]
}

fn run_stationary(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let config = man.model_config();
    let (dec, report) = if config.g_spec.is_zero() {
        let c = chain(&config)?;
        let report = stationary::lyapunov_stationary(&c.op, &c.dec)?;
        (c.dec, report)
    } else {
        let (c, _, fine) = simulate_report(man, &config, Some(out))?;
        let mut params = man.simulation_params();
        params.h *= 2.0;
        let coarse = sde::simulate(&c.op, &c.dec, &config.g_spec, &params)?;
        let report = stationary::richardson(&c.op, &c.dec, &coarse, &fine)?;
        (c.dec, report)
    };
    let table = stationary::pair_identity_residual(&report, &dec)?;
    out.csv("pairs.csv", |w| table.write_csv(w))?;
    let e = stationary::r_energy_check(&report);
    out.json("stationary.json", &serde_json::json!({
        "exact": report.is_exact(),
        "lyapunov_residual": report.residual,
        "r_energy": e.value,
        "r_energy_stderr": e.stderr,
        "pair_table_max_n": table.max_n,
        "pair_max_ratio": table.max_ratio(),
        "pair_bound_violations": table.bound_violations(),
        "pair_bound_with_length_violations": table.length_bound_violations(),
    }))?;
    let mut v = energy_verdicts(&report);
    if let Some(r) = report.residual {
        v.push(Verdict::at_most("lyapunov_residual", "the exact covariance solves the Lyapunov equation", r, 0.0, stationary::LYAPUNOV_TOL));
    }
    v.extend(pair_verdicts(&table, report.is_exact()));
    Ok(v)
}

fn run_sweep(man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    let base = man.model_config();
    let table = if base.g_spec.is_zero() {
        stationary::exact_sweep(&base, &man.m_sweep)?
    } else {
        let mut rows = Vec::new();
        for &m in &man.m_sweep {
            let config = man.config_at(m);
            let (c, report, _) = simulate_report(man, &config, Some(out))?;
            rows.push(stationary::weighted_sums(&report, &c.dec, config.theta));
        }
        stationary::SweepTable { rows }
    };
    out.csv("sweep.csv", |w| table.write_csv(w))?;
    out.csv("modes.csv", |w| table.write_mode_csv(w))?;
    let ratios = table.ratios();
    out.json("sweep.json", &serde_json::json!({
        "ratios": {"s1": ratios[0], "s2": ratios[1], "s3": ratios[2], "hs": ratios[3]},
        "weight_constant": table.weight_constant(),
        "tail_slopes": table.rows.iter().map(|r| (r.m, r.tail_slope)).collect::<Vec<_>>(),
    }))?;
    let mut v = Vec::new();
    if base.g_spec.is_zero() {
        for (name, r) in ["s1", "s2", "s3"].iter().zip(ratios) {
            v.push(Verdict::at_most(
                &format!("uniform_{name}"),
                "the weighted stationary sum does not depend on the cutoff (at most 10% spread)",
                r,
                1.1,
                0.0,
            ));
        }
    } else {
        v.push(Verdict::within(
            "uniform_mc",
            "weighted sums at different cutoffs agree within mutual confidence intervals",
            table.mutually_consistent(3.0) as u8 as f64,
            1.0,
            0.0,
        ));
    }
    v.push(Verdict::exceeds(
        "weight_comparability",
        "reservoir weights are comparable to the power law with one constant across cutoffs",
        table.weight_constant(),
        0.0,
    ));
    Ok(v)
}

fn run_command(cmd: Command, man: &ExperimentManifest, out: &Artifacts) -> Result<Vec<Verdict>, CliError> {
    match cmd {
        Command::Eig => run_eig(man, out),
        Command::Perturb => run_perturb(man, out),
        Command::Gramian => run_gramian(man, out),
        Command::Rank => run_rank(man, out),
        Command::Steer => run_steer(man, out),
        Command::Simulate => run_simulate(man, out),
        Command::Stationary => run_stationary(man, out),
        Command::Sweep => run_sweep(man, out),
        Command::All => {
            let mut v = Vec::new();
            for c in [
                Command::Eig,
                Command::Perturb,
                Command::Gramian,
                Command::Rank,
                Command::Steer,
                Command::Simulate,
                Command::Stationary,
                Command::Sweep,
            ] {
                for mut verdict in run_command(c, man, out)? {
                    verdict.name = format!("{}/{}", command_name(c), verdict.name);
                    v.push(verdict);
                }
            }
            Ok(v)
        }
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Eig => "eig",
        Command::Perturb => "perturb",
        Command::Gramian => "gramian",
        Command::Rank => "rank",
        Command::Steer => "steer",
        Command::Simulate => "simulate",
        Command::Stationary => "stationary",
        Command::Sweep => "sweep",
        Command::All => "all",
    }
}

/// Runs a manifest and writes `summary.json`; returns the summary.
pub fn run(manifest: &ExperimentManifest) -> Result<Summary, CliError> {
    let out = Artifacts::create(manifest)?;
    let verdicts = run_command(manifest.command, manifest, &out)?;
    let summary = Summary {
        manifest_hash: out.hash.clone(),
        command: manifest.command,
        seed: manifest.seed,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        pass: verdicts.iter().all(|v| v.pass),
        verdicts,
    };
    fs::write(out.dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Sets the global worker count from the environment, if given.
pub fn configure_workers() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Invalid(format!("{WORKERS_ENV}={v} is not a worker count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = configure_workers().and_then(|_| cli.manifest()).and_then(|m| run(&m));
    match result {
        Ok(summary) => {
            for v in &summary.verdicts {
                println!("{}", v.to_json_line());
            }
            if summary.pass {
                0
            } else {
                let failed: Vec<&str> = summary.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.as_str()).collect();
                eprintln!("failed verdicts: {}", failed.join(", "));
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn output_dir_for(manifest: &ExperimentManifest) -> PathBuf {
    manifest.output_dir.join(manifest.hash())
}
