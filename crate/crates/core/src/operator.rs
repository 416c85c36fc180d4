//! Matvec-only linear operators with accuracy tags and query counting.
//!
//! An operator is an immutable node (dense matrix, sparse matrix,
//! perturbation, or a composition) with a declared relative accuracy
//! `eps_mach` (0 means exact up to working precision) and an atomic counter
//! of apply/apply-transpose calls. Compositions propagate the accuracy tags
//! of the finite-precision model: a sum is a 9ε-matvec for the sum, a
//! composed transpose-times-self is a 3ε-matvec for AᵀA.
//!
//! [`inexact_wrap`](LinearOperator::inexact_wrap) simulates an ε-matvec by
//! injecting bounded noise under one of three policies, so solver tests can
//! probe average and near-worst-case behavior.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::dense::{norm2, DenseMatrix};
use crate::perturb::ObliviousPerturbation;
use crate::rng::{split_seed, BitSource};
use crate::{Error, Result};

/// How [`LinearOperator::inexact_wrap`] perturbs its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisePolicy {
    /// Noise aligned with the output direction, deterministic; near worst case.
    AdversarialDirection,
    /// Random direction, random magnitude within the budget.
    RandomDirection,
    /// Per-entry relative jitter `(1+δ)`, `|δ| <= eps`, mirroring the
    /// floating-point model's per-operation rounding.
    RoundingEmulation,
}

impl FromStr for NoisePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversarial-direction" => Ok(NoisePolicy::AdversarialDirection),
            "random-direction" => Ok(NoisePolicy::RandomDirection),
            "rounding-emulation" => Ok(NoisePolicy::RoundingEmulation),
            other => Err(Error::invalid(format!("unknown noise policy `{other}`"))),
        }
    }
}

/// Sparse matrix in coordinate form; the operator backend for sparse files.
#[derive(Clone, Debug)]
pub struct SparseCoo {
    pub n: usize,
    /// (row, col, value), 0-based.
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseCoo {
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i as usize] += v * x[j as usize];
        }
        y
    }

    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[j as usize] += v * x[i as usize];
        }
        y
    }
}

enum OpKind {
    Dense(DenseMatrix),
    Sparse(SparseCoo),
    Perturbation(Arc<ObliviousPerturbation>),
    Scaled { child: LinearOperator, factor: f64 },
    Sum { a: LinearOperator, b: LinearOperator },
    NormalEquations { a: LinearOperator },
    RankOneShift { child: LinearOperator, sigma: f64 },
    Inexact {
        child: LinearOperator,
        eps: f64,
        norm_hint: f64,
        policy: NoisePolicy,
        seed: u64,
        draws: AtomicU64,
    },
}

struct OpNode {
    rows: usize,
    cols: usize,
    eps_mach: f64,
    queries: AtomicU64,
    kind: OpKind,
}

/// Shared, immutable, concurrently applicable linear operator.
#[derive(Clone)]
pub struct LinearOperator {
    node: Arc<OpNode>,
}

impl LinearOperator {
    fn new(rows: usize, cols: usize, eps_mach: f64, kind: OpKind) -> Self {
        LinearOperator {
            node: Arc::new(OpNode { rows, cols, eps_mach, queries: AtomicU64::new(0), kind }),
        }
    }

    pub fn exact_from_dense(m: DenseMatrix) -> Self {
        let (r, c) = (m.rows(), m.cols());
        Self::new(r, c, 0.0, OpKind::Dense(m))
    }

    pub fn from_sparse_coo(m: SparseCoo) -> Self {
        let n = m.n;
        Self::new(n, n, 0.0, OpKind::Sparse(m))
    }

    pub fn from_perturbation(p: Arc<ObliviousPerturbation>) -> Self {
        let n = p.n();
        Self::new(n, n, 0.0, OpKind::Perturbation(p))
    }

    /// `c * A` as an operator; the accuracy tag carries over.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.rows(),
            self.cols(),
            self.eps_mach(),
            OpKind::Scaled { child: self.clone(), factor },
        )
    }

    /// Floating-point sum of two matvec oracles: a 9ε-matvec for `A + E`
    /// when both children are ε-matvecs and `‖E‖ <= ‖A‖/2` (caller's
    /// contract).
    pub fn sum(a: &LinearOperator, b: &LinearOperator) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::invalid(format!(
                "sum_op dimension mismatch: {}x{} vs {}x{}",
                a.rows(),
                b.rows(),
                a.cols(),
                b.cols()
            )));
        }
        let eps = 9.0 * a.eps_mach().max(b.eps_mach());
        Ok(Self::new(
            a.rows(),
            a.cols(),
            eps,
            OpKind::Sum { a: a.clone(), b: b.clone() },
        ))
    }

    /// `AᵀA` through the child's two matvec directions: a 3ε-matvec,
    /// symmetric by construction up to the tag.
    pub fn normal_equations(a: &LinearOperator) -> Self {
        Self::new(
            a.cols(),
            a.cols(),
            3.0 * a.eps_mach(),
            OpKind::NormalEquations { a: a.clone() },
        )
    }

    /// `A + sigma * 1 1ᵀ` with O(n) extra work per apply.
    pub fn rank_one_shifted(a: &LinearOperator, sigma: f64) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::invalid("rank_one_shifted needs a square operator"));
        }
        if !sigma.is_finite() {
            return Err(Error::invalid("rank_one_shifted needs a finite shift"));
        }
        Ok(Self::new(
            a.rows(),
            a.cols(),
            a.eps_mach(),
            OpKind::RankOneShift { child: a.clone(), sigma },
        ))
    }

    /// Declare-and-simulate an ε-matvec: output is the child's output plus
    /// noise of 2-norm at most `eps * norm_hint * ‖w‖`. `eps = 0` is an
    /// exact pass-through. Replay is deterministic for single-threaded use;
    /// parallel call interleaving changes which call sees which draw.
    pub fn inexact_wrap(
        &self,
        eps: f64,
        norm_hint: f64,
        policy: NoisePolicy,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::invalid("inexact_wrap needs eps in [0, 1)"));
        }
        if !(norm_hint > 0.0) {
            return Err(Error::invalid("inexact_wrap needs a positive norm hint"));
        }
        Ok(Self::new(
            self.rows(),
            self.cols(),
            eps.max(self.eps_mach()),
            OpKind::Inexact {
                child: self.clone(),
                eps,
                norm_hint,
                policy,
                seed,
                draws: AtomicU64::new(0),
            },
        ))
    }

    pub fn rows(&self) -> usize {
        self.node.rows
    }

    pub fn cols(&self) -> usize {
        self.node.cols
    }

    /// Declared relative accuracy; 0 means exact up to working precision.
    pub fn eps_mach(&self) -> f64 {
        self.node.eps_mach
    }

    /// Apply/apply-transpose calls made directly to this node.
    pub fn queries(&self) -> u64 {
        self.node.queries.load(Ordering::Relaxed)
    }

    /// Sum of query counts over the leaf operators under this node.
    pub fn leaf_queries(&self) -> u64 {
        match &self.node.kind {
            OpKind::Dense(_) | OpKind::Sparse(_) | OpKind::Perturbation(_) => self.queries(),
            OpKind::Scaled { child, .. } | OpKind::RankOneShift { child, .. } => {
                child.leaf_queries()
            }
            OpKind::Inexact { child, .. } => child.leaf_queries(),
            OpKind::Sum { a, b } => a.leaf_queries() + b.leaf_queries(),
            OpKind::NormalEquations { a } => a.leaf_queries(),
        }
    }

    /// Structural bound on length-n vectors simultaneously live inside one
    /// apply of this node (the O(1)-vector memory contract).
    pub fn transient_vec_bound(&self) -> usize {
        match &self.node.kind {
            OpKind::Dense(_) | OpKind::Sparse(_) => 1,
            OpKind::Perturbation(_) => 2,
            OpKind::Scaled { child, .. } | OpKind::RankOneShift { child, .. } => {
                child.transient_vec_bound()
            }
            OpKind::Inexact { child, policy, .. } => match policy {
                NoisePolicy::RandomDirection => child.transient_vec_bound().max(2),
                _ => child.transient_vec_bound(),
            },
            OpKind::Sum { a, b } => a.transient_vec_bound().max(1 + b.transient_vec_bound()),
            OpKind::NormalEquations { a } => 1 + a.transient_vec_bound(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols(), "operator apply dimension mismatch");
        self.node.queries.fetch_add(1, Ordering::Relaxed);
        match &self.node.kind {
            OpKind::Dense(m) => m.matvec(x),
            OpKind::Sparse(m) => m.matvec(x),
            OpKind::Perturbation(p) => p.apply(x),
            OpKind::Scaled { child, factor } => {
                let mut y = child.apply(x);
                y.iter_mut().for_each(|v| *v *= factor);
                y
            }
            OpKind::Sum { a, b } => {
                let mut y = a.apply(x);
                let yb = b.apply(x);
                for (u, v) in y.iter_mut().zip(yb) {
                    *u += v;
                }
                y
            }
            OpKind::NormalEquations { a } => {
                let t = a.apply(x);
                a.apply_transpose(&t)
            }
            OpKind::RankOneShift { child, sigma } => {
                let mut y = child.apply(x);
                let s: f64 = sigma * x.iter().sum::<f64>();
                y.iter_mut().for_each(|v| *v += s);
                y
            }
            OpKind::Inexact { child, eps, norm_hint, policy, seed, draws } => {
                let y = child.apply(x);
                let key = draws.fetch_add(1, Ordering::Relaxed);
                inject_noise(y, x, *eps, *norm_hint, *policy, split_seed(*seed, key))
            }
        }
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows(), "operator apply_transpose dimension mismatch");
        self.node.queries.fetch_add(1, Ordering::Relaxed);
        match &self.node.kind {
            OpKind::Dense(m) => m.matvec_transpose(x),
            OpKind::Sparse(m) => m.matvec_transpose(x),
            OpKind::Perturbation(p) => p.apply_transpose(x),
            OpKind::Scaled { child, factor } => {
                let mut y = child.apply_transpose(x);
                y.iter_mut().for_each(|v| *v *= factor);
                y
            }
            OpKind::Sum { a, b } => {
                let mut y = a.apply_transpose(x);
                let yb = b.apply_transpose(x);
                for (u, v) in y.iter_mut().zip(yb) {
                    *u += v;
                }
                y
            }
            // AᵀA is symmetric; the tag covers the asymmetry of the noise.
            OpKind::NormalEquations { a } => {
                let t = a.apply(x);
                a.apply_transpose(&t)
            }
            OpKind::RankOneShift { child, sigma } => {
                let mut y = child.apply_transpose(x);
                let s: f64 = sigma * x.iter().sum::<f64>();
                y.iter_mut().for_each(|v| *v += s);
                y
            }
            OpKind::Inexact { child, eps, norm_hint, policy, seed, draws } => {
                let y = child.apply_transpose(x);
                let key = draws.fetch_add(1, Ordering::Relaxed);
                inject_noise(y, x, *eps, *norm_hint, *policy, split_seed(*seed, key))
            }
        }
    }
}

fn inject_noise(
    mut y: Vec<f64>,
    x: &[f64],
    eps: f64,
    norm_hint: f64,
    policy: NoisePolicy,
    seed: u64,
) -> Vec<f64> {
    if eps == 0.0 {
        return y;
    }
    let budget = eps * norm_hint * norm2(x);
    if budget == 0.0 {
        return y;
    }
    match policy {
        NoisePolicy::AdversarialDirection => {
            let ny = norm2(&y);
            if ny > 0.0 {
                let c = budget / ny;
                y.iter_mut().for_each(|v| *v += c * *v);
            }
        }
        NoisePolicy::RandomDirection => {
            let mut src = BitSource::new(seed);
            let dir: Vec<f64> = (0..y.len()).map(|_| 2.0 * src.uniform_f64() - 1.0).collect();
            let nd = norm2(&dir);
            if nd > 0.0 {
                let c = budget * src.uniform_f64() / nd;
                for (v, d) in y.iter_mut().zip(dir) {
                    *v += c * d;
                }
            }
        }
        NoisePolicy::RoundingEmulation => {
            // Per-entry (1+δ) with |δ| <= eps: ‖e‖ <= eps ‖y‖ <= budget
            // whenever the child already respects its norm hint.
            let mut src = BitSource::new(seed);
            for v in y.iter_mut() {
                let delta = eps * (2.0 * src.uniform_f64() - 1.0);
                *v *= 1.0 + delta;
            }
        }
    }
    y
}

/// The grid-valued random shift scale of the away-from-zero lemma: uniform
/// over two mirrored grids of `ceil(n²/(2 delta))` points covering
/// `±[D/2, D]` with `D = 4 sqrt(n/(delta L))`; requires `L >= 4n³/delta`.
pub fn draw_gamma(n: usize, delta: f64, l: f64, src: &mut BitSource) -> Result<f64> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::invalid("draw_gamma needs delta in (0,1)"));
    }
    let nf = n as f64;
    if l < 4.0 * nf.powi(3) / delta {
        return Err(Error::invalid(format!(
            "draw_gamma needs L >= 4n^3/delta = {}",
            4.0 * nf.powi(3) / delta
        )));
    }
    let d = 4.0 * (nf / (delta * l)).sqrt();
    let points = ((nf * nf) / (2.0 * delta)).ceil() as u64;
    let idx = src.uniform_int(2 * points);
    let (side, t) = if idx < points { (-1.0, idx) } else { (1.0, idx - points) };
    let step = if points > 1 { (d / 2.0) / (points - 1) as f64 } else { 0.0 };
    Ok(side * (d / 2.0 + t as f64 * step))
}
