//! The cutoff drift matrix, its uncoupled and control variants, and the
//! labeled biorthogonal eigensystem.

use std::fmt;
use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Basis;
use crate::linalg::inf_norm;
use crate::model::{CouplingSpec, ModelConfig};
use crate::perturbation::mu_pair;

/// Eigen-residual bound relative to `‖A‖`.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("eigensolver failure: {0}")]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("mode {index}: residual {residual:e} exceeds {bound:e}")]
    Residual {
        index: usize,
        residual: f64,
        bound: f64,
    },
    #[error("labeling ambiguity at level {level}: {found} eigenvalues, expected {expected}")]
    LabelingAmbiguity {
        level: String,
        found: usize,
        expected: usize,
    },
    #[error("normalization failure for mode {label}")]
    NormalizationFailure { label: ModeLabel },
    #[error("coupling cutoff {coupling} does not match configured cutoff {config}")]
    CutoffMismatch { coupling: usize, config: usize },
}

#[derive(Debug, Clone)]
pub struct CutoffOperator {
    basis: Basis,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub a_tilde: Array2<f64>,
    temperatures: [f64; 2],
    coupling: CouplingSpec,
}

pub fn assemble(config: &ModelConfig, coupling: &CouplingSpec) -> Result<CutoffOperator, OperatorError> {
    if coupling.m() != config.m {
        return Err(OperatorError::CutoffMismatch {
            coupling: coupling.m(),
            config: config.m,
        });
    }
    let basis = config.basis();
    let dim = basis.dim();
    let p = basis.field_len();
    let mut b = Array2::<f64>::zeros((dim, dim));
    for k in 0..p {
        let n = basis.wave_number(k) as f64;
        b[[basis.phi(k), basis.pi(k)]] = 1.0;
        b[[basis.pi(k), basis.phi(k)]] = -(n * n + 1.0);
    }
    b[[basis.r(0), basis.r(0)]] = -1.0;
    b[[basis.r(1), basis.r(1)]] = -1.0;
    let mut a = b.clone();
    for i in 0..2 {
        let c = coupling.real_coeffs(i);
        for k in 0..p {
            a[[basis.pi(k), basis.r(i)]] = -c[k];
            a[[basis.r(i), basis.pi(k)]] = basis.l2_weight(k) * c[k];
        }
    }
    let mut a_tilde = a.clone();
    a_tilde.slice_mut(s![2 * p.., ..]).fill(0.0);
    Ok(CutoffOperator {
        basis,
        a,
        b,
        a_tilde,
        temperatures: [config.t1, config.t2],
        coupling: coupling.clone(),
    })
}

impl CutoffOperator {
    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn temperatures(&self) -> [f64; 2] {
        self.temperatures
    }

    pub fn with_temperatures(&self, t1: f64, t2: f64) -> Self {
        let mut out = self.clone();
        out.temperatures = [t1, t2];
        out
    }

    pub fn tmat(&self) -> Array2<f64> {
        let mut t = Array2::zeros((self.dim(), self.dim()));
        t[[self.basis.r(0), self.basis.r(0)]] = self.temperatures[0];
        t[[self.basis.r(1), self.basis.r(1)]] = self.temperatures[1];
        t
    }

    /// The two noise columns `√T`, as a `dim × 2` matrix.
    pub fn sqrt_t(&self) -> Array2<f64> {
        let mut q = Array2::zeros((self.dim(), 2));
        q[[self.basis.r(0), 0]] = self.temperatures[0].sqrt();
        q[[self.basis.r(1), 1]] = self.temperatures[1].sqrt();
        q
    }

    /// `S` with `‖X‖_H = |S X|`.
    pub fn energy_scale(&self) -> Vec<f64> {
        self.basis.energy_weights().iter().map(|w| w.sqrt()).collect()
    }

    /// Similarity transform `S m S⁻¹` into energy coordinates.
    pub fn to_energy(&self, m: &Array2<f64>) -> Array2<f64> {
        let s = self.energy_scale();
        crate::linalg::rescale(m, &s, &s)
    }

    pub fn from_energy(&self, m: &Array2<f64>) -> Array2<f64> {
        let s = self.energy_scale();
        let inv: Vec<f64> = s.iter().map(|x| 1.0 / x).collect();
        crate::linalg::rescale(m, &inv, &inv)
    }

    /// `‖A‖` measured in energy coordinates (maximum row sum).
    pub fn norm_a(&self) -> f64 {
        inf_norm(&self.to_energy(&self.a).view())
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.a.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }
}

/// `(n, σ, ±)` label. Reservoir modes carry `n = -1`, a `σ` and no branch;
/// the `n = 0` pair carries a branch and no `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeLabel {
    pub n: i32,
    pub sigma: Option<i8>,
    pub branch: Option<Branch>,
}

impl ModeLabel {
    pub fn reservoir(sigma: i8) -> Self {
        Self {
            n: -1,
            sigma: Some(sigma),
            branch: None,
        }
    }

    pub fn zero(branch: Branch) -> Self {
        Self {
            n: 0,
            sigma: None,
            branch: Some(branch),
        }
    }

    pub fn wave(n: usize, sigma: i8, branch: Branch) -> Self {
        Self {
            n: n as i32,
            sigma: Some(sigma),
            branch: Some(branch),
        }
    }

    /// Eigenvalue at zero coupling.
    pub fn unperturbed(&self) -> Complex64 {
        match self.branch {
            None => Complex64::new(-1.0, 0.0),
            Some(b) => {
                let n = self.n as f64;
                Complex64::new(0.0, b.sign() * (n * n + 1.0).sqrt())
            }
        }
    }

    fn sort_key(&self) -> (i32, i8, i8) {
        let s = -self.sigma.unwrap_or(0);
        let b = match self.branch {
            Some(Branch::Plus) | None => 0,
            Some(Branch::Minus) => 1,
        };
        (self.n, s, b)
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sigma {
            Some(1) => "+",
            Some(_) => "-",
            None => ".",
        };
        let b = match self.branch {
            Some(Branch::Plus) => "+",
            Some(Branch::Minus) => "-",
            None => ".",
        };
        write!(f, "({},{},{})", self.n, s, b)
    }
}

/// Unlabeled eigensystem in the state basis.
///
/// `right` holds eigenvectors as columns; `left` holds the coefficient
/// vectors `f_j` as rows, paired with `right` by the weighted bilinear form.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub lambdas: Vec<Complex64>,
    pub right: Array2<Complex64>,
    pub left: Array2<Complex64>,
    pub residuals: Vec<f64>,
    pub norm_a: f64,
}

pub fn eigensystem(op: &CutoffOperator) -> Result<Eigensystem, OperatorError> {
    let basis = op.basis();
    let dim = basis.dim();
    let s = op.energy_scale();
    let w = basis.pairing_weights();
    let n = op.to_energy(&op.a);
    let norm_a = inf_norm(&n.view());
    let nc = n.mapv(|x| Complex64::new(x, 0.0));
    let (vals, v) = crate::linalg::eig(&n)?;
    let vinv = crate::linalg::inverse_complex(&v);
    let nv = nc.dot(&v);
    let mut residuals = Vec::with_capacity(dim);
    for j in 0..dim {
        let col = v.column(j);
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let res = nv
            .column(j)
            .iter()
            .zip(col.iter())
            .map(|(a, b)| (a - vals[j] * b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm;
        residuals.push(res);
    }
    let mut right = v;
    for ((k, _), z) in right.indexed_iter_mut() {
        *z /= s[k];
    }
    let mut left = vinv;
    for ((_, k), z) in left.indexed_iter_mut() {
        *z *= s[k] / w[k];
    }
    Ok(Eigensystem {
        lambdas: vals.to_vec(),
        right,
        left,
        residuals,
        norm_a,
    })
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub label: ModeLabel,
    pub lambda: Complex64,
    pub e_right: Array1<Complex64>,
    pub f_left: Array1<Complex64>,
    pub residual: f64,
}

impl Mode {
    pub fn e_phi(&self, b: &Basis) -> ArrayView1<'_, Complex64> {
        self.e_right.slice(s![..b.field_len()])
    }

    pub fn e_pi(&self, b: &Basis) -> ArrayView1<'_, Complex64> {
        self.e_right.slice(s![b.field_len()..2 * b.field_len()])
    }

    pub fn e_r(&self, b: &Basis) -> [Complex64; 2] {
        [self.e_right[b.r(0)], self.e_right[b.r(1)]]
    }

    pub fn f_phi(&self, b: &Basis) -> ArrayView1<'_, Complex64> {
        self.f_left.slice(s![..b.field_len()])
    }

    pub fn f_pi(&self, b: &Basis) -> ArrayView1<'_, Complex64> {
        self.f_left.slice(s![b.field_len()..2 * b.field_len()])
    }

    pub fn f_r(&self, b: &Basis) -> [Complex64; 2] {
        [self.f_left[b.r(0)], self.f_left[b.r(1)]]
    }

    pub fn e_r_norm(&self, b: &Basis) -> f64 {
        self.e_r(b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Bilinear pairing `<f, e> = Σ w_k f_k e_k` (no conjugation).
pub fn pairing(basis: &Basis, f: ArrayView1<Complex64>, e: ArrayView1<Complex64>) -> Complex64 {
    let w = basis.pairing_weights();
    f.iter().zip(e.iter()).zip(&w).map(|((a, b), w)| a * b * *w).sum()
}

/// `∫ u v̄ dx`-type squared L² norm of a field coefficient vector.
pub fn field_norm_sqr(basis: &Basis, field: ArrayView1<Complex64>) -> f64 {
    field
        .iter()
        .enumerate()
        .map(|(k, z)| basis.l2_weight(k) * z.norm_sqr())
        .sum()
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    basis: Basis,
    pub modes: Vec<Mode>,
    pub condition_report: f64,
    pub norm_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Level {
    Reservoir,
    Zero(Branch),
    Wave(usize, Branch),
}

impl Level {
    fn value(self) -> Complex64 {
        match self {
            Level::Reservoir => Complex64::new(-1.0, 0.0),
            Level::Zero(b) => Complex64::new(0.0, b.sign()),
            Level::Wave(n, b) => Complex64::new(0.0, b.sign() * ((n * n) as f64 + 1.0).sqrt()),
        }
    }

    fn multiplicity(self) -> usize {
        match self {
            Level::Zero(_) => 1,
            _ => 2,
        }
    }
}

fn nearest_level(lambda: Complex64, m: usize) -> Level {
    let mut best = Level::Reservoir;
    let mut dist = (lambda - best.value()).norm();
    let branch = if lambda.im >= 0.0 {
        Branch::Plus
    } else {
        Branch::Minus
    };
    let consider = |lvl: Level, best: &mut Level, dist: &mut f64| {
        let d = (lambda - lvl.value()).norm();
        if d < *dist {
            *dist = d;
            *best = lvl;
        }
    };
    consider(Level::Zero(branch), &mut best, &mut dist);
    let guess = (lambda.im * lambda.im - 1.0).max(0.0).sqrt().round() as i64;
    for n in (guess - 2).max(1)..=(guess + 2).min(m as i64) {
        consider(Level::Wave(n as usize, branch), &mut best, &mut dist);
    }
    best
}

/// Normalizes `(f, e)` by `f ← c f`, `e ← e / c`.
fn rescale_pair(f: &mut Array1<Complex64>, e: &mut Array1<Complex64>, c: Complex64) {
    f.mapv_inplace(|z| z * c);
    e.mapv_inplace(|z| z / c);
}

/// Labeled, normalized eigensystem.
pub fn decompose(op: &CutoffOperator) -> Result<SpectralDecomposition, OperatorError> {
    let es = eigensystem(op)?;
    let basis = op.basis();
    let m = basis.m();
    let bound = RESIDUAL_TOL * es.norm_a;
    for (index, &residual) in es.residuals.iter().enumerate() {
        if residual > bound {
            return Err(OperatorError::Residual {
                index,
                residual,
                bound,
            });
        }
    }

    let levels: Vec<Level> = es.lambdas.iter().map(|&l| nearest_level(l, m)).collect();
    let members = |lvl: Level| -> Vec<usize> {
        (0..levels.len()).filter(|&j| levels[j] == lvl).collect()
    };
    let mut all_levels = vec![
        Level::Reservoir,
        Level::Zero(Branch::Plus),
        Level::Zero(Branch::Minus),
    ];
    for n in 1..=m {
        all_levels.push(Level::Wave(n, Branch::Plus));
        all_levels.push(Level::Wave(n, Branch::Minus));
    }
    for &lvl in &all_levels {
        let found = members(lvl).len();
        if found != lvl.multiplicity() {
            return Err(OperatorError::LabelingAmbiguity {
                level: format!("{lvl:?}"),
                found,
                expected: lvl.multiplicity(),
            });
        }
    }

    let mut labels: Vec<Option<ModeLabel>> = vec![None; es.lambdas.len()];
    // Reservoir pair: σ = +1 carries the larger share of r1.
    {
        let js = members(Level::Reservoir);
        let share = |j: usize| {
            let a = es.right[[basis.r(0), j]].norm_sqr();
            let b = es.right[[basis.r(1), j]].norm_sqr();
            a / (a + b)
        };
        let (p, q) = if share(js[0]) >= share(js[1]) {
            (js[0], js[1])
        } else {
            (js[1], js[0])
        };
        labels[p] = Some(ModeLabel::reservoir(1));
        labels[q] = Some(ModeLabel::reservoir(-1));
    }
    for b in [Branch::Plus, Branch::Minus] {
        labels[members(Level::Zero(b))[0]] = Some(ModeLabel::zero(b));
    }
    let pi_block = |j: usize| -> Vec<Complex64> {
        (0..basis.field_len())
            .map(|k| es.right[[basis.pi(k), j]])
            .collect()
    };
    for n in 1..=m {
        let plus = members(Level::Wave(n, Branch::Plus));
        let mu = mu_pair(n, op.coupling());
        let overlap = |j: usize, sigma_idx: usize| -> f64 {
            let (cp, cm) = basis.fourier_pair(&pi_block(j), n);
            let u = mu.eigvecs[sigma_idx];
            let ip = u[0].conj() * cp + u[1].conj() * cm;
            ip.norm_sqr() / (cp.norm_sqr() + cm.norm_sqr()).max(f64::MIN_POSITIVE)
        };
        let straight = overlap(plus[0], 0) + overlap(plus[1], 1);
        let crossed = overlap(plus[0], 1) + overlap(plus[1], 0);
        let (jp, jm) = if straight >= crossed {
            (plus[0], plus[1])
        } else {
            (plus[1], plus[0])
        };
        labels[jp] = Some(ModeLabel::wave(n, 1, Branch::Plus));
        labels[jm] = Some(ModeLabel::wave(n, -1, Branch::Plus));
        // The conjugate partner of each + mode carries the same σ.
        let minus = members(Level::Wave(n, Branch::Minus));
        let d = |a: usize, b: usize| (es.lambdas[a] - es.lambdas[b].conj()).norm();
        let (kp, km) = if d(minus[0], jp) + d(minus[1], jm) <= d(minus[0], jm) + d(minus[1], jp) {
            (minus[0], minus[1])
        } else {
            (minus[1], minus[0])
        };
        labels[kp] = Some(ModeLabel::wave(n, 1, Branch::Minus));
        labels[km] = Some(ModeLabel::wave(n, -1, Branch::Minus));
    }

    let mut modes = Vec::with_capacity(es.lambdas.len());
    let p = basis.field_len();
    for (j, label) in labels.into_iter().enumerate() {
        let label = label.expect("every mode labeled");
        let mut e = es.right.column(j).to_owned();
        let mut f = es.left.row(j).to_owned();
        let (block, target) = if label.n >= 0 {
            (p..2 * p, 0.5f64.sqrt())
        } else {
            (2 * p..2 * p + 2, 1.0)
        };
        let norm = if label.n >= 0 {
            field_norm_sqr(&basis, f.slice(s![p..2 * p])).sqrt()
        } else {
            f.slice(s![2 * p..]).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        };
        let total = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 1e-13 * total) || !norm.is_finite() {
            return Err(OperatorError::NormalizationFailure { label });
        }
        let (mut kmax, mut vmax) = (block.start, 0.0);
        for k in block {
            if f[k].norm() > vmax {
                vmax = f[k].norm();
                kmax = k;
            }
        }
        let phase = f[kmax].conj() / f[kmax].norm();
        rescale_pair(&mut f, &mut e, phase * (target / norm));
        let pair = pairing(&basis, f.view(), e.view());
        if !((pair - 1.0).norm() < 1e-6) {
            return Err(OperatorError::NormalizationFailure { label });
        }
        modes.push(Mode {
            label,
            lambda: es.lambdas[j],
            e_right: e,
            f_left: f,
            residual: es.residuals[j],
        });
    }
    modes.sort_by_key(|m| m.label.sort_key());

    let mut decomposition = SpectralDecomposition {
        basis,
        modes,
        condition_report: 0.0,
        norm_a: es.norm_a,
    };
    decomposition.condition_report = decomposition.biorthogonality_defect();
    Ok(decomposition)
}

impl SpectralDecomposition {
    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn find(&self, label: &ModeLabel) -> Option<&Mode> {
        self.modes.iter().find(|m| &m.label == label)
    }

    pub fn index_of(&self, label: &ModeLabel) -> Option<usize> {
        self.modes.iter().position(|m| &m.label == label)
    }

    pub fn labels(&self) -> Vec<ModeLabel> {
        self.modes.iter().map(|m| m.label).collect()
    }

    pub fn lambdas(&self) -> Vec<Complex64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn max_real_part(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.lambda.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.modes.iter().map(|m| m.residual).fold(0.0, f64::max)
    }

    /// Right eigenvectors as columns, in mode order.
    pub fn right_matrix(&self) -> Array2<Complex64> {
        let dim = self.basis.dim();
        let mut v = Array2::zeros((dim, self.modes.len()));
        for (j, m) in self.modes.iter().enumerate() {
            v.column_mut(j).assign(&m.e_right);
        }
        v
    }

    /// Rows `w ∘ f_j`, so that `Φ(f_j) = row_j · X` for a real state `X`.
    pub fn weighted_left_matrix(&self) -> Array2<Complex64> {
        let dim = self.basis.dim();
        let w = self.basis.pairing_weights();
        let mut f = Array2::zeros((self.modes.len(), dim));
        for (j, m) in self.modes.iter().enumerate() {
            for k in 0..dim {
                f[[j, k]] = m.f_left[k] * w[k];
            }
        }
        f
    }

    /// `max |<f_j, e_k> - δ_jk|`.
    pub fn biorthogonality_defect(&self) -> f64 {
        let g = self.weighted_left_matrix().dot(&self.right_matrix());
        g.indexed_iter()
            .map(|((i, j), z)| {
                let d = if i == j { 1.0 } else { 0.0 };
                (z - d).norm()
            })
            .fold(0.0, f64::max)
    }

    /// CSV table `n,sigma,branch,re,im,residual,e_r_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "sigma", "branch", "re", "im", "residual", "e_r_norm"])?;
        for m in &self.modes {
            let sigma = m.label.sigma.map(|s| s.to_string()).unwrap_or_default();
            let branch = match m.label.branch {
                Some(Branch::Plus) => "+",
                Some(Branch::Minus) => "-",
                None => "",
            };
            w.write_record([
                m.label.n.to_string(),
                sigma,
                branch.to_string(),
                m.lambda.re.to_string(),
                m.lambda.im.to_string(),
                m.residual.to_string(),
                m.e_r_norm(&self.basis).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_coupling, GSpec};

    fn config(m: usize) -> ModelConfig {
        ModelConfig::new(m, 0.25, 1.0, 2.0, GSpec::Zero)
    }

    #[test]
    fn r_column_action() {
        let c = config(3);
        let coupling = make_coupling(&c).unwrap();
        let op = assemble(&c, &coupling).unwrap();
        let b = op.basis();
        let mut x = Array1::zeros(b.dim());
        x[b.r(0)] = 1.0;
        let y = op.apply(&x);
        let a1 = coupling.real_coeffs(0);
        for k in 0..b.field_len() {
            assert_eq!(y[b.pi(k)], -a1[k]);
            assert_eq!(y[b.phi(k)], 0.0);
        }
        assert_eq!(y[b.r(0)], -1.0);
        assert_eq!(y[b.r(1)], 0.0);
    }

    #[test]
    fn trace_is_minus_two() {
        let c = config(5);
        let op = assemble(&c, &make_coupling(&c).unwrap()).unwrap();
        let tr: f64 = op.a.diag().sum();
        assert_eq!(tr, -2.0);
        assert_eq!(op.b.diag().sum(), -2.0);
    }

    #[test]
    fn difference_lives_in_coupling_blocks() {
        let c = config(4);
        let op = assemble(&c, &make_coupling(&c).unwrap()).unwrap();
        let b = op.basis();
        let d = &op.a - &op.b;
        for ((i, j), x) in d.indexed_iter() {
            if *x != 0.0 {
                let pi_r = matches!(b.slot(i), crate::basis::Slot::Pi(..))
                    && matches!(b.slot(j), crate::basis::Slot::R(_));
                let r_pi = matches!(b.slot(i), crate::basis::Slot::R(_))
                    && matches!(b.slot(j), crate::basis::Slot::Pi(..));
                assert!(pi_r || r_pi, "entry ({i},{j})");
            }
        }
        let p = b.field_len();
        for i in 0..2 * p {
            assert_eq!(op.a_tilde.row(i), op.a.row(i));
        }
        for i in 2 * p..b.dim() {
            assert!(op.a_tilde.row(i).iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn smallest_cutoff() {
        let c = config(0);
        let op = assemble(&c, &CouplingSpec::zero(0, 0.25)).unwrap();
        assert_eq!(op.dim(), 4);
        let d = decompose(&op).unwrap();
        let mut l = d.lambdas();
        l.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((l[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((l[3] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }
}
