//! Dense linear-algebra helpers: ndarray in and out, faer decompositions inside.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("matrix has eigenvalue {value:e} below -{tol:e}")]
    NotPositive { value: f64, tol: f64 },
}

fn to_faer<T: Copy>(a: &ArrayView2<T>) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_faer<T: Copy>(a: MatRef<'_, T>) -> Array2<T> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Eigenvalues and right eigenvectors (columns) of a real square matrix.
pub fn eig(a: &Array2<f64>) -> Result<(Vec<Complex64>, Array2<Complex64>), LinalgError> {
    let evd = to_faer(&a.view())
        .eigen()
        .map_err(|_| LinalgError::NoConvergence("eigendecomposition"))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, from_faer(evd.U())))
}

/// Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix
/// (lower triangle is read).
pub fn eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), LinalgError> {
    let evd = to_faer(&a.view())
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::NoConvergence("symmetric eigendecomposition"))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, from_faer(evd.U())))
}

/// Inverse by LU with partial pivoting.
pub fn inverse(a: &Array2<f64>) -> Array2<f64> {
    from_faer(to_faer(&a.view()).partial_piv_lu().inverse().as_ref())
}

pub fn inverse_complex(a: &Array2<Complex64>) -> Array2<Complex64> {
    from_faer(to_faer(&a.view()).partial_piv_lu().inverse().as_ref())
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = to_faer(&a.view()).partial_piv_lu().solve(rhs);
    Array1::from_shape_fn(b.len(), |i| x[(i, 0)])
}

/// Upper-triangular factor `R` of a thin QR decomposition.
pub fn qr_r(a: &Array2<f64>) -> Array2<f64> {
    let qr = to_faer(&a.view()).qr();
    let k = a.nrows().min(a.ncols());
    let r = from_faer(qr.R());
    r.slice(ndarray::s![..k, ..]).to_owned()
}

/// Thin QR decomposition `a = Q R` with `Q` of shape `m × min(m, n)`.
pub fn qr_thin(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let qr = to_faer(&a.view()).qr();
    let k = a.nrows().min(a.ncols());
    let q = from_faer(qr.compute_thin_Q().as_ref());
    let r = from_faer(qr.R());
    (q, r.slice(ndarray::s![..k, ..]).to_owned())
}

/// Solves `rᵀ x = b` for upper-triangular `r` by forward substitution.
pub fn solve_upper_transposed(r: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= r[[k, i]] * x[k];
        }
        x[i] = acc / r[[i, i]];
    }
    x
}

/// Left singular vectors and singular values (descending) of a thin SVD.
pub fn svd_left(a: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>), LinalgError> {
    let svd = to_faer(&a.view())
        .thin_svd()
        .map_err(|_| LinalgError::NoConvergence("singular value decomposition"))?;
    let s = svd.S().column_vector().iter().copied().collect();
    Ok((from_faer(svd.U()), s))
}

pub fn complexify(a: &Array2<f64>) -> Array2<Complex64> {
    a.mapv(|x| Complex64::new(x, 0.0))
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &ArrayView2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn one_norm(a: &ArrayView2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Largest `|a_ij - a_ji|` relative to the largest entry.
pub fn asymmetry(a: &Array2<f64>) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let d = a - &a.t();
    d.iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale
}

/// `diag(d) a diag(d)^{-1}`-style rescaling: `a_ij * l_i / r_j`.
pub fn rescale(a: &Array2<f64>, left: &[f64], right: &[f64]) -> Array2<f64> {
    let mut out = a.clone();
    for ((i, j), x) in out.indexed_iter_mut() {
        *x *= left[i] / right[j];
    }
    out
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by degree-13 Padé with scaling and squaring.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let norm = one_norm(&a.view());
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let ident = Array2::<f64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let b = &PADE13;
    let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a.dot(&(a6.dot(&u_inner) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]));
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = a6.dot(&v_inner) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = inverse(&q).dot(&p);
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if k == 0 { 1.0 } else { p1 };
            let pm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Lower-triangular `L` with `L Lᵀ = q` for symmetric positive semidefinite `q`.
///
/// Eigenvalues in `[-tol·‖q‖, 0)` are clipped; anything more negative is an error.
pub fn psd_lower_factor(q: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>, LinalgError> {
    let n = q.nrows();
    let sym = symmetrize(q);
    let (vals, vecs) = eigh(&sym)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(Array2::zeros((n, n)));
    }
    let tol = rel_tol * scale;
    if let Some(&v) = vals.iter().find(|&&v| v < -tol) {
        return Err(LinalgError::NotPositive { value: v, tol });
    }
    let mut half = vecs;
    for (mut col, v) in half.axis_iter_mut(Axis(1)).zip(vals.iter()) {
        col *= v.max(0.0).sqrt();
    }
    // q = (U√D)(U√D)ᵀ; with (U√D)ᵀ = Q R we get q = Rᵀ R.
    let r = qr_r(&half.t().to_owned());
    let mut l = r.t().to_owned();
    for j in 0..n {
        if l[[j, j]] < 0.0 {
            l.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(l)
}

/// Largest absolute entry.
pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn vec_norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}
