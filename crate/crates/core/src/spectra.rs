//! Desk-scale verification oracles.
//!
//! Everything here is deliberately independent of the solver path: dense
//! materialization, a one-sided Jacobi SVD (high relative accuracy for
//! small singular values), a power-iteration spectral norm for cases where
//! only the top singular value is needed, cofactor normal vectors at tiny
//! scale, and the adversarial input suite used by the conditioning
//! experiments.

use serde::Serialize;

use crate::dense::{dot, norm2, DenseMatrix};
use crate::operator::LinearOperator;
use crate::pattern::PatternMatrix;
use crate::rng::BitSource;
use crate::{Error, Result};

/// Default cap on dense-oracle dimensions; override per call or via the
/// CLI's `--oracle-cap` / `OBLIV_ORACLE_CAP`.
pub const DEFAULT_ORACLE_CAP: usize = 2048;

/// Singular values and condition number of a dense matrix.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub method: String,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub s_max: f64,
    pub s_min: f64,
    /// `s_max / s_min`; infinite when `s_min` is exactly zero.
    pub kappa: f64,
    pub sweeps: u32,
}

/// Materialize an operator column by column through its matvec.
pub fn materialize(op: &LinearOperator, cap: usize) -> Result<DenseMatrix> {
    let (r, c) = (op.rows(), op.cols());
    if r > cap || c > cap {
        return Err(Error::Capability(format!(
            "materialize: {r}x{c} exceeds oracle cap {cap}"
        )));
    }
    let mut m = DenseMatrix::zeros(r, c);
    let mut e = vec![0.0; c];
    for j in 0..c {
        e[j] = 1.0;
        let col = op.apply(&e);
        e[j] = 0.0;
        for i in 0..r {
            m[(i, j)] = col[i];
        }
    }
    Ok(m)
}

const JACOBI_PAIR_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: u32 = 60;

/// Singular values by one-sided Jacobi, without accumulating vectors.
pub fn svd_values(m: &DenseMatrix) -> Result<SpectralReport> {
    let work = if m.rows() < m.cols() { m.transpose() } else { m.clone() };
    let (mut cols, mut sq) = to_columns(&work);
    let sweeps = jacobi_sweeps(&mut cols, &mut sq, None)?;
    let mut sv: Vec<f64> = sq.iter().map(|&s| s.sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(report_from(sv, sweeps))
}

/// Full SVD `M = U diag(s) Vᵀ` with `U` of shape r×min(r,c), `V` of shape
/// c×min(r,c), singular values descending.
pub fn svd_full(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix, SpectralReport)> {
    if m.rows() < m.cols() {
        let (u, s, v, rep) = svd_full(&m.transpose())?;
        return Ok((v, s, u, rep));
    }
    let (mut cols, mut sq) = to_columns(m);
    let n = cols.len();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let sweeps = jacobi_sweeps(&mut cols, &mut sq, Some(&mut vcols))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sq[b].partial_cmp(&sq[a]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&j| sq[j].sqrt()).collect();
    let mut u = DenseMatrix::zeros(m.rows(), n);
    let mut v = DenseMatrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        if sv[k] > 0.0 {
            for i in 0..m.rows() {
                u[(i, k)] = cols[j][i] / sv[k];
            }
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
    }
    let rep = report_from(sv.clone(), sweeps);
    Ok((u, sv, v, rep))
}

fn to_columns(m: &DenseMatrix) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cols: Vec<Vec<f64>> = (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| m[(i, j)]).collect())
        .collect();
    let sq = cols.iter().map(|c| dot(c, c)).collect();
    (cols, sq)
}

fn report_from(sv: Vec<f64>, sweeps: u32) -> SpectralReport {
    let s_max = sv.first().copied().unwrap_or(0.0);
    let s_min = sv.last().copied().unwrap_or(0.0);
    let kappa = if s_min == 0.0 { f64::INFINITY } else { s_max / s_min };
    SpectralReport {
        method: "jacobi-one-sided".to_string(),
        singular_values: sv,
        s_max,
        s_min,
        kappa,
        sweeps,
    }
}

/// Hestenes one-sided Jacobi: orthogonalize column pairs until every pair
/// satisfies |<a_i,a_j>| <= tol * ||a_i|| ||a_j||.
fn jacobi_sweeps(
    cols: &mut [Vec<f64>],
    sq: &mut [f64],
    mut vcols: Option<&mut Vec<Vec<f64>>>,
) -> Result<u32> {
    let n = cols.len();
    for sweep in 1..=JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dot(&cols[i], &cols[j]);
                if d == 0.0 || d * d <= JACOBI_PAIR_TOL * JACOBI_PAIR_TOL * sq[i] * sq[j] {
                    continue;
                }
                rotated = true;
                let tau = (sq[j] - sq[i]) / (2.0 * d);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(cols, i, j, c, s);
                if let Some(v) = vcols.as_deref_mut() {
                    rotate_pair(v, i, j, c, s);
                }
                sq[i] -= t * d;
                sq[j] += t * d;
            }
        }
        // Recompute squared norms once per sweep to stop update drift.
        for (k, col) in cols.iter().enumerate() {
            sq[k] = dot(col, col);
        }
        if !rotated {
            return Ok(sweep);
        }
    }
    Err(Error::NonConvergence(format!(
        "one-sided Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let (a, b) = cols.split_at_mut(hi);
    let (ci, cj) = (&mut a[lo], &mut b[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Spectral norm of a dense matrix by power iteration on MᵀM with a
/// monotone Rayleigh-quotient stop. Used where only the top singular value
/// is needed and a full Jacobi pass would be wasteful.
pub fn spectral_norm_dense(m: &DenseMatrix, seed: u64, max_iter: usize) -> f64 {
    let n = m.cols();
    let mut src = BitSource::new(seed);
    let mut v: Vec<f64> = (0..n).map(|_| src.uniform_f64() - 0.5).collect();
    let nv = norm2(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let mut sigma = 0.0f64;
    let mut stable = 0;
    for _ in 0..max_iter {
        let mv = m.matvec(&v);
        let s = norm2(&mv);
        if s == 0.0 {
            return 0.0;
        }
        let mut w = m.matvec_transpose(&mv);
        let nw = norm2(&w);
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        if (s - sigma).abs() <= 1e-13 * s {
            stable += 1;
            if stable >= 3 {
                return s;
            }
        } else {
            stable = 0;
        }
        sigma = s;
    }
    sigma
}

/// Normal vector by the cofactor formula: given n-1 columns of length n,
/// the r-th coordinate is (-1)^(r+1) times the determinant of the columns
/// with row r deleted. Exactly orthogonal to every input column; may be
/// zero when the columns are rank deficient.
pub fn cofactor_normal(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = columns.len();
    let n = k + 1;
    if n > 12 {
        return Err(Error::Capability(format!(
            "cofactor_normal supports n <= 12, got n = {n}"
        )));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("cofactor_normal needs n-1 columns of length n"));
    }
    let mut zeta = vec![0.0; n];
    for r in 0..n {
        let minor = DenseMatrix::from_fn(n - 1, k, |i, j| {
            let row = if i < r { i } else { i + 1 };
            columns[j][row]
        });
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        zeta[r] = sign * det(&minor);
    }
    Ok(zeta)
}

/// Determinant by LU with partial pivoting; tiny-scale helper.
fn det(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    assert_eq!(n, m.cols());
    let mut a = m.clone();
    let mut d = 1.0;
    for k in 0..n {
        let mut p = k;
        for i in (k + 1)..n {
            if a[(i, k)].abs() > a[(p, k)].abs() {
                p = i;
            }
        }
        if a[(p, k)] == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            d = -d;
        }
        d *= a[(k, k)];
        for i in (k + 1)..n {
            let f = a[(i, k)] / a[(k, k)];
            for j in k..n {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    d
}

/// One member of the adversarial input suite, normalized to unit norm.
pub struct AdversarialMatrix {
    pub name: &'static str,
    pub matrix: DenseMatrix,
}

/// The ill-conditioned test inputs for the conditioning experiments:
/// a rank-one projector, a scaled Jordan block, a rotated near-singular
/// diagonal, and (when a pattern matrix is supplied) the null-vector
/// construction that defeats the dense perturbation alone.
pub fn adversarial_suite(
    n: usize,
    pattern: Option<&PatternMatrix>,
    src: &mut BitSource,
) -> Result<Vec<AdversarialMatrix>> {
    let mut suite = Vec::new();

    let mut rank_one = DenseMatrix::zeros(n, n);
    rank_one[(0, 0)] = 1.0;
    suite.push(AdversarialMatrix { name: "rank_one", matrix: rank_one });

    let mut jordan = DenseMatrix::zeros(n, n);
    for i in 0..n {
        jordan[(i, i)] = 0.5;
        if i + 1 < n {
            jordan[(i, i + 1)] = 1.0;
        }
    }
    let norm = svd_values(&jordan)?.s_max;
    suite.push(AdversarialMatrix { name: "jordan", matrix: jordan.scale(1.0 / norm) });

    let q1 = random_rotation(n, src);
    let q2 = random_rotation(n, src);
    let mut d = DenseMatrix::identity(n);
    d[(n - 1, n - 1)] = 1e-14;
    let near_singular = q1.matmul(&d).matmul(&q2);
    suite.push(AdversarialMatrix { name: "near_singular", matrix: near_singular });

    if let Some(v) = pattern {
        let (a, _, _) = dense_null_attack(v)?;
        let norm = a.max_abs(); // rank one: spectral norm = |c|
        let matrix = if norm > 0.0 { a.scale(1.0 / norm) } else { a };
        suite.push(AdversarialMatrix { name: "pattern_null", matrix });
    }

    Ok(suite)
}

/// The construction that makes the dense part alone fail: a rank-one matrix
/// aligned with a left null vector of the pattern's trailing columns, so
/// that `A + (1/sqrt(n)) R1` is singular whenever two independent signs
/// collide. Returns the matrix, the row index used, and the inner product
/// of the pattern's first column with the null vector.
pub fn dense_null_attack(v: &PatternMatrix) -> Result<(DenseMatrix, usize, f64)> {
    let n = v.n();
    let cols: Vec<Vec<f64>> = (1..n)
        .map(|j| (0..n).map(|i| v.entry(i, j) as f64).collect())
        .collect();
    let u = orthogonal_complement_vector(&cols, n)?;
    let (j, uj) = u
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap();
    debug_assert!(uj.abs() >= 1.0 / (n as f64).sqrt() - 1e-9);
    let col1: Vec<f64> = (0..n).map(|i| v.entry(i, 0) as f64).collect();
    let c = dot(&col1, &u) / (v.rho() * n as f64 * uj);
    let mut a = DenseMatrix::zeros(n, n);
    a[(j, 0)] = c;
    Ok((a, j, dot(&col1, &u)))
}

/// Unit vector orthogonal to the span of `cols`, by modified Gram-Schmidt
/// with reorthogonalization. Columns that are numerically dependent are
/// dropped; the complement is seeded from the best coordinate vector.
fn orthogonal_complement_vector(cols: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for col in cols {
        let mut w = col.clone();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= p * bi;
                }
            }
        }
        let nw = norm2(&w);
        if nw > 1e-10 * norm2(col) {
            w.iter_mut().for_each(|x| *x /= nw);
            basis.push(w);
        }
    }
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = -1.0;
    for k in 0..n {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= p * bi;
                }
            }
        }
        let nw = norm2(&w);
        if nw > best_norm {
            best_norm = nw;
            best = Some(w);
        }
        if nw > 0.5 {
            break;
        }
    }
    let mut u = best.ok_or_else(|| Error::invalid("empty complement search"))?;
    if best_norm <= 1e-12 {
        return Err(Error::NonConvergence(
            "no orthogonal complement direction found".into(),
        ));
    }
    u.iter_mut().for_each(|x| *x /= best_norm);
    Ok(u)
}

/// Haar-ish random rotation from Gram-Schmidt on a Gaussian matrix.
/// Experiment-grade randomness; orthogonality is what matters here.
pub fn random_rotation(n: usize, src: &mut BitSource) -> DenseMatrix {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut w: Vec<f64> = (0..n).map(|_| src.gauss()).collect();
        for _ in 0..2 {
            for b in &q {
                let p = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= p * bi;
                }
            }
        }
        let nw = norm2(&w);
        if nw > 1e-8 {
            w.iter_mut().for_each(|x| *x /= nw);
            q.push(w);
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| q[j][i])
}
