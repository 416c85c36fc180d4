//! The oblivious perturbation `R = (R1 + R2)/2` with full bit accounting.
//!
//! `R1 = diag(d1) V diag(d2) / (rho sqrt(n))` reuses a pattern matrix and
//! 2n fresh sign bits. `R2` places `K` signs per column at a uniform
//! `K`-subset of rows, zeroes every row that ended up with more than `L`
//! nonzeros across all columns, and scales by `1/L`; the Schur test then
//! gives `‖R2‖ <= 1` unconditionally. Matvecs run in O(n²) (dense part,
//! streamed) plus O(nK) (sparse part) time with O(1) extra vectors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::pattern::{PatternData, PatternMatrix, PatternParams};
use crate::rng::BitSource;
use crate::{Error, Result};

/// Desk-scale default for signs per column.
pub const DEFAULT_K: u64 = 8;

/// Row-trim threshold for a given K: the smallest L the theory pairs with
/// it, `ceil(2 e K)`.
pub fn trim_threshold_for(k: u64) -> u64 {
    (2.0 * std::f64::consts::E * k as f64).ceil() as u64
}

/// The paper's parameter rule `K = ceil(S / (delta^2 alpha^3))`,
/// `L = ceil(2 e K)`. With the constants the analysis needs (`S` in the
/// thousands) this is far outside desk scale; it is exposed for reporting,
/// while builds default to explicit desk-scale values.
pub fn paper_rule_k_l(s: f64, delta: f64, alpha: f64) -> Result<(u64, u64)> {
    if !(0.0 < delta && delta < 1.0) || !(0.0 < alpha && alpha < 1.0) || s <= 0.0 {
        return Err(Error::invalid("paper_rule_k_l needs s > 0 and delta, alpha in (0,1)"));
    }
    let k = (s / (delta * delta * alpha.powi(3))).ceil();
    if k > 2f64.powi(52) {
        return Err(Error::invalid("paper rule K overflows; constants are impractical"));
    }
    let k = k as u64;
    Ok((k, trim_threshold_for(k)))
}

/// Dense part: sign diagonals around the pattern matrix.
pub struct DensePerturbation {
    n: usize,
    d1: Vec<i8>,
    d2: Vec<i8>,
    pattern: Arc<PatternMatrix>,
}

impl DensePerturbation {
    /// Draw the two sign diagonals, consuming exactly 2n bits.
    pub fn build(pattern: Arc<PatternMatrix>, src: &mut BitSource) -> Self {
        let n = pattern.n();
        let d1 = (0..n).map(|_| src.next_sign()).collect();
        let d2 = (0..n).map(|_| src.next_sign()).collect();
        DensePerturbation { n, d1, d2, pattern }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.pattern.rho() * (self.n as f64).sqrt())
    }

    pub fn pattern(&self) -> &PatternMatrix {
        &self.pattern
    }

    pub fn d1(&self) -> &[i8] {
        &self.d1
    }

    pub fn d2(&self) -> &[i8] {
        &self.d2
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in dense perturbation");
        let scaled: Vec<f64> = x.iter().zip(&self.d2).map(|(xi, &s)| xi * s as f64).collect();
        let mut y = self.pattern.apply(&scaled);
        let c = self.scale();
        for (yi, &s) in y.iter_mut().zip(&self.d1) {
            *yi *= c * s as f64;
        }
        y
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in dense perturbation");
        let scaled: Vec<f64> = x.iter().zip(&self.d1).map(|(xi, &s)| xi * s as f64).collect();
        let mut y = self.pattern.apply_transpose(&scaled);
        let c = self.scale();
        for (yi, &s) in y.iter_mut().zip(&self.d2) {
            *yi *= c * s as f64;
        }
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let c = self.scale();
        DenseMatrix::from_fn(self.n, self.n, |i, j| {
            c * self.d1[i] as f64 * self.pattern.entry(i, j) as f64 * self.d2[j] as f64
        })
    }

    fn from_parts(pattern: Arc<PatternMatrix>, d1: Vec<i8>, d2: Vec<i8>) -> Result<Self> {
        let n = pattern.n();
        if d1.len() != n || d2.len() != n {
            return Err(Error::invalid("sign diagonal length mismatch"));
        }
        if d1.iter().chain(&d2).any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("sign diagonals must be ±1"));
        }
        Ok(DensePerturbation { n, d1, d2, pattern })
    }
}

/// One column of the sparse part: `K` sorted row indices (0-based) and the
/// sign bound to each sorted position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSupport {
    pub rows: Vec<u32>,
    pub signs: Vec<i8>,
}

/// Statistics of the row-trimming step.
#[derive(Clone, Debug, Serialize)]
pub struct HeavyRowStats {
    /// Rows zeroed by the build rule: more than L nonzeros across all n columns.
    pub trimmed_rows: usize,
    /// The theoretical mean bound `n e^{-K} (eK/L)^L`, evaluated in logs.
    pub mean_bound: f64,
    /// The proof-side variant: rows with at least L nonzeros among the
    /// first n-1 columns. Kept distinct from the build rule on purpose.
    pub proof_variant_rows: usize,
}

/// Sparse part: column K-subsets with signs, heavy rows zeroed, 1/L scale.
pub struct SparsePerturbation {
    n: usize,
    k: u64,
    l: u64,
    columns: Vec<ColumnSupport>,
    heavy_mask: Vec<bool>,
}

impl SparsePerturbation {
    /// Draw supports and signs. Per column, the K-subset is sampled first
    /// and then K sign bits, sign `l` binding to the l-th smallest row.
    pub fn build(n: usize, k: u64, l: u64, src: &mut BitSource) -> Result<Self> {
        validate_k_l(n, k, l)?;
        let mut columns = Vec::with_capacity(n);
        for _ in 0..n {
            let rows: Vec<u32> = src
                .sample_k_subset(n as u64, k)?
                .into_iter()
                .map(|r| (r - 1) as u32)
                .collect();
            let signs: Vec<i8> = (0..k).map(|_| src.next_sign()).collect();
            columns.push(ColumnSupport { rows, signs });
        }
        Ok(Self::assemble(n, k, l, columns))
    }

    /// Build from explicit supports (the "forced tape" path used by tests
    /// and deserialization). Row indices are 0-based and must be sorted,
    /// distinct, and of length K.
    pub fn from_parts(n: usize, k: u64, l: u64, columns: Vec<ColumnSupport>) -> Result<Self> {
        validate_k_l(n, k, l)?;
        if columns.len() != n {
            return Err(Error::invalid("sparse perturbation needs one support per column"));
        }
        for col in &columns {
            if col.rows.len() != k as usize || col.signs.len() != k as usize {
                return Err(Error::invalid("column support size must equal K"));
            }
            if !col.rows.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::invalid("column rows must be sorted and distinct"));
            }
            if col.rows.iter().any(|&r| r as usize >= n) {
                return Err(Error::invalid("row index out of range"));
            }
            if col.signs.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::invalid("signs must be ±1"));
            }
        }
        Ok(Self::assemble(n, k, l, columns))
    }

    fn assemble(n: usize, k: u64, l: u64, columns: Vec<ColumnSupport>) -> Self {
        let mut counts = vec![0u64; n];
        for col in &columns {
            for &r in &col.rows {
                counts[r as usize] += 1;
            }
        }
        let heavy_mask = counts.iter().map(|&c| c > l).collect();
        SparsePerturbation { n, k, l, columns, heavy_mask }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn l(&self) -> u64 {
        self.l
    }

    pub fn columns(&self) -> &[ColumnSupport] {
        &self.columns
    }

    pub fn heavy_mask(&self) -> &[bool] {
        &self.heavy_mask
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in sparse perturbation");
        let inv_l = 1.0 / self.l as f64;
        let mut y = vec![0.0; self.n];
        for (i, col) in self.columns.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (&r, &s) in col.rows.iter().zip(&col.signs) {
                if !self.heavy_mask[r as usize] {
                    y[r as usize] += s as f64 * inv_l * xi;
                }
            }
        }
        y
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in sparse perturbation");
        let inv_l = 1.0 / self.l as f64;
        self.columns
            .iter()
            .map(|col| {
                col.rows
                    .iter()
                    .zip(&col.signs)
                    .filter(|(&r, _)| !self.heavy_mask[r as usize])
                    .map(|(&r, &s)| s as f64 * inv_l * x[r as usize])
                    .sum()
            })
            .collect()
    }

    /// Nonzero count per row of the realized (trimmed) matrix.
    pub fn realized_row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n];
        for col in &self.columns {
            for &r in &col.rows {
                if !self.heavy_mask[r as usize] {
                    counts[r as usize] += 1;
                }
            }
        }
        counts
    }

    /// Nonzero count per column of the realized matrix.
    pub fn realized_col_counts(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|col| {
                col.rows
                    .iter()
                    .filter(|&&r| !self.heavy_mask[r as usize])
                    .count()
            })
            .collect()
    }

    pub fn heavy_row_stats(&self) -> HeavyRowStats {
        let trimmed_rows = self.heavy_mask.iter().filter(|&&h| h).count();
        let proof_variant_rows = {
            let mut counts = vec![0u64; self.n];
            for col in &self.columns[..self.n.saturating_sub(1)] {
                for &r in &col.rows {
                    counts[r as usize] += 1;
                }
            }
            counts.iter().filter(|&&c| c >= self.l).count()
        };
        HeavyRowStats {
            trimmed_rows,
            mean_bound: heavy_row_mean_bound(self.n, self.k, self.l),
            proof_variant_rows,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let inv_l = 1.0 / self.l as f64;
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (i, col) in self.columns.iter().enumerate() {
            for (&r, &s) in col.rows.iter().zip(&col.signs) {
                if !self.heavy_mask[r as usize] {
                    m[(r as usize, i)] = s as f64 * inv_l;
                }
            }
        }
        m
    }
}

fn validate_k_l(n: usize, k: u64, l: u64) -> Result<()> {
    if k < 1 || k >= l || l > n as u64 {
        return Err(Error::invalid(format!(
            "sparse perturbation needs 1 <= K < L <= n, got K={k}, L={l}, n={n}"
        )));
    }
    Ok(())
}

/// `n e^{-K} (eK/L)^L` evaluated through logarithms.
pub fn heavy_row_mean_bound(n: usize, k: u64, l: u64) -> f64 {
    let (n, k, l) = (n as f64, k as f64, l as f64);
    (n.ln() - k + l * (1.0 + k.ln() - l.ln())).exp()
}

/// Bit accounting per component, the `{component -> bits}` audit payload.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BitReport {
    pub pattern: u64,
    pub dense_signs: u64,
    pub sparse_support: u64,
    pub sparse_signs: u64,
    pub total: u64,
}

/// Build-time parameters for the combined perturbation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub pattern: PatternParams,
    /// Signs per column of the sparse part; defaults to [`DEFAULT_K`].
    pub k: Option<u64>,
    /// Row-trim threshold; defaults to `ceil(2eK)`.
    pub l: Option<u64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { pattern: PatternParams::default(), k: None, l: None }
    }
}

impl PerturbConfig {
    pub fn resolve_k_l(&self, n: usize) -> Result<(u64, u64)> {
        let k = self.k.unwrap_or(DEFAULT_K);
        let l = self.l.unwrap_or_else(|| trim_threshold_for(k));
        validate_k_l(n, k, l)?;
        Ok((k, l))
    }
}

/// The combined perturbation `R = (R1 + R2)/2`, guaranteed `‖R‖ <= 1`
/// whenever the pattern norm stays within its `rho sqrt(n)` budget (the
/// sparse part is unconditional).
pub struct ObliviousPerturbation {
    n: usize,
    eps: f64,
    delta: f64,
    config: PerturbConfig,
    r1: DensePerturbation,
    r2: SparsePerturbation,
    bit_report: BitReport,
}

impl ObliviousPerturbation {
    /// Draw everything from `src` in a documented order: pattern families,
    /// then the two dense sign diagonals, then per-column sparse supports
    /// and signs.
    pub fn build(
        n: usize,
        eps: f64,
        delta: f64,
        config: PerturbConfig,
        src: &mut BitSource,
    ) -> Result<Self> {
        if !(0.0 < eps && eps < 1.0) {
            return Err(Error::invalid("build_perturbation needs 0 < eps < 1"));
        }
        if !(0.0 < delta && delta < 1.0) {
            return Err(Error::invalid("build_perturbation needs 0 < delta < 1"));
        }
        let (k, l) = config.resolve_k_l(n)?;

        let t0 = src.bits_consumed();
        let pattern = Arc::new(PatternMatrix::build_with_params(n, config.pattern, src)?);
        let t1 = src.bits_consumed();
        let r1 = DensePerturbation::build(pattern, src);
        let t2 = src.bits_consumed();

        // Sparse part with split support/sign accounting.
        let mut columns = Vec::with_capacity(n);
        let mut support_bits = 0;
        let mut sign_bits = 0;
        for _ in 0..n {
            let s0 = src.bits_consumed();
            let rows: Vec<u32> = src
                .sample_k_subset(n as u64, k)?
                .into_iter()
                .map(|r| (r - 1) as u32)
                .collect();
            support_bits += src.bits_consumed() - s0;
            let s1 = src.bits_consumed();
            let signs: Vec<i8> = (0..k).map(|_| src.next_sign()).collect();
            sign_bits += src.bits_consumed() - s1;
            columns.push(ColumnSupport { rows, signs });
        }
        let r2 = SparsePerturbation::from_parts(n, k, l, columns)?;

        let bit_report = BitReport {
            pattern: t1 - t0,
            dense_signs: t2 - t1,
            sparse_support: support_bits,
            sparse_signs: sign_bits,
            total: src.bits_consumed() - t0,
        };
        Ok(ObliviousPerturbation { n, eps, delta, config, r1, r2, bit_report })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn config(&self) -> &PerturbConfig {
        &self.config
    }

    pub fn r1(&self) -> &DensePerturbation {
        &self.r1
    }

    pub fn r2(&self) -> &SparsePerturbation {
        &self.r2
    }

    pub fn bit_report(&self) -> &BitReport {
        &self.bit_report
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.r1.apply(x);
        let y2 = self.r2.apply(x);
        for (a, b) in y.iter_mut().zip(y2) {
            *a = 0.5 * (*a + b);
        }
        y
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.r1.apply_transpose(x);
        let y2 = self.r2.apply_transpose(x);
        for (a, b) in y.iter_mut().zip(y2) {
            *a = 0.5 * (*a + b);
        }
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.r1.to_dense().add(&self.r2.to_dense()).scale(0.5)
    }

    pub fn to_file(&self) -> PerturbationFile {
        PerturbationFile {
            schema_version: 1,
            n: self.n,
            eps: self.eps,
            delta: self.delta,
            config: self.config,
            pattern: self.r1.pattern.to_data(),
            d1: self.r1.d1.clone(),
            d2: self.r1.d2.clone(),
            k: self.r2.k,
            l: self.r2.l,
            columns: self.r2.columns.clone(),
            heavy_mask: self.r2.heavy_mask.clone(),
            bit_report: self.bit_report.clone(),
        }
    }

    pub fn from_file(file: PerturbationFile) -> Result<Self> {
        if file.schema_version != 1 {
            return Err(Error::invalid(format!(
                "unsupported perturbation schema version {}",
                file.schema_version
            )));
        }
        let pattern = Arc::new(PatternMatrix::from_data(file.pattern)?);
        if pattern.n() != file.n {
            return Err(Error::invalid("pattern dimension mismatch"));
        }
        let r1 = DensePerturbation::from_parts(pattern, file.d1, file.d2)?;
        let r2 = SparsePerturbation::from_parts(file.n, file.k, file.l, file.columns)?;
        if r2.heavy_mask != file.heavy_mask {
            return Err(Error::invalid("stored heavy mask disagrees with recomputed mask"));
        }
        Ok(ObliviousPerturbation {
            n: file.n,
            eps: file.eps,
            delta: file.delta,
            config: file.config,
            r1,
            r2,
            bit_report: file.bit_report,
        })
    }
}

/// Versioned serialization container; round-trips bit-exactly.
#[derive(Serialize, Deserialize)]
pub struct PerturbationFile {
    pub schema_version: u32,
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub config: PerturbConfig,
    pub pattern: PatternData,
    pub d1: Vec<i8>,
    pub d2: Vec<i8>,
    pub k: u64,
    pub l: u64,
    pub columns: Vec<ColumnSupport>,
    pub heavy_mask: Vec<bool>,
    pub bit_report: BitReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::dot;

    fn pattern(n: usize, seed: u64) -> Arc<PatternMatrix> {
        let mut src = BitSource::new(seed);
        Arc::new(PatternMatrix::build(n, 3.0, &mut src).unwrap())
    }

    #[test]
    fn forced_plus_one_diagonals_reduce_to_scaled_pattern() {
        let n = 8;
        let pat = pattern(n, 3);
        // bit 0 maps to sign +1, so an all-zero tape forces d1 = d2 = +1
        let mut tape = BitSource::from_tape(vec![0; 2 * n]);
        let r1 = DensePerturbation::build(pat.clone(), &mut tape);
        let dense = r1.to_dense();
        let c = 1.0 / (3.0 * (n as f64).sqrt());
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense[(i, j)], c * pat.entry(i, j) as f64);
            }
        }
    }

    #[test]
    fn dense_part_entries_factor_pointwise() {
        let n = 8;
        let pat = pattern(n, 4);
        let mut src = BitSource::new(9);
        let before = src.bits_consumed();
        let r1 = DensePerturbation::build(pat.clone(), &mut src);
        assert_eq!(src.bits_consumed() - before, 2 * n as u64);
        let dense = r1.to_dense();
        let c = r1.scale();
        for i in 0..n {
            for j in 0..n {
                let expect =
                    c * r1.d1()[i] as f64 * pat.entry(i, j) as f64 * r1.d2()[j] as f64;
                assert_eq!(dense[(i, j)], expect);
            }
        }
    }

    fn figure3_columns() -> Vec<ColumnSupport> {
        // J_1..J_8 = {1,5},{1,6},{1,7},{1,8},{2,5},{3,6},{4,7},{2,8}, 1-based.
        let sets: [[u32; 2]; 8] = [
            [1, 5],
            [1, 6],
            [1, 7],
            [1, 8],
            [2, 5],
            [3, 6],
            [4, 7],
            [2, 8],
        ];
        sets.iter()
            .map(|s| ColumnSupport {
                rows: vec![s[0] - 1, s[1] - 1],
                signs: vec![1, -1],
            })
            .collect()
    }

    #[test]
    fn figure3_configuration_trims_exactly_row_one() {
        let sp = SparsePerturbation::from_parts(8, 2, 3, figure3_columns()).unwrap();
        // Row 1 (index 0) collected 4 ones > L = 3 and is zeroed.
        assert_eq!(
            sp.heavy_mask(),
            &[true, false, false, false, false, false, false, false]
        );
        let dense = sp.to_dense();
        for j in 0..8 {
            assert_eq!(dense[(0, j)], 0.0, "row 1 must be zero");
        }
        // Every other listed nonzero survives with magnitude 1/L.
        let expected_nonzeros: [(usize, usize, i8); 12] = [
            (4, 0, -1),
            (5, 1, -1),
            (6, 2, -1),
            (7, 3, -1),
            (1, 4, 1),
            (4, 4, -1),
            (2, 5, 1),
            (5, 5, -1),
            (3, 6, 1),
            (6, 6, -1),
            (1, 7, 1),
            (7, 7, -1),
        ];
        let mut nnz = 0;
        for i in 0..8 {
            for j in 0..8 {
                if dense[(i, j)] != 0.0 {
                    nnz += 1;
                    assert!(
                        expected_nonzeros.contains(&(i, j, dense[(i, j)].signum() as i8)),
                        "unexpected nonzero at ({i},{j})"
                    );
                    assert_eq!(dense[(i, j)].abs(), 1.0 / 3.0);
                }
            }
        }
        assert_eq!(nnz, expected_nonzeros.len());
        let stats = sp.heavy_row_stats();
        assert_eq!(stats.trimmed_rows, 1);
        let expect_bound = 8.0 * (-2.0f64).exp()
            * (2.0 * std::f64::consts::E / 3.0).powi(3);
        assert!((stats.mean_bound - expect_bound).abs() <= 1e-12 * expect_bound);
    }

    #[test]
    fn minimal_k_never_trims() {
        let n = 16;
        let mut src = BitSource::new(5);
        let sp = SparsePerturbation::build(n, 1, n as u64, &mut src).unwrap();
        assert!(sp.heavy_mask().iter().all(|&h| !h));
        assert_eq!(sp.heavy_row_stats().trimmed_rows, 0);
        for c in sp.realized_col_counts() {
            assert_eq!(c, 1);
        }
        let dense = sp.to_dense();
        for j in 0..n {
            let col_abs: f64 = (0..n).map(|i| dense[(i, j)].abs()).sum();
            assert!((col_abs - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn parameter_validation() {
        let mut src = BitSource::new(1);
        assert!(SparsePerturbation::build(8, 3, 3, &mut src).is_err());
        assert!(SparsePerturbation::build(8, 0, 3, &mut src).is_err());
        assert!(SparsePerturbation::build(8, 2, 9, &mut src).is_err());
        assert!(SparsePerturbation::build(8, 2, 3, &mut src).is_ok());
    }

    #[test]
    fn sparsity_caps_hold_over_random_builds() {
        let n = 64;
        for seed in 0..50 {
            let mut src = BitSource::new(seed);
            let sp = SparsePerturbation::build(n, 4, 22, &mut src).unwrap();
            for &c in &sp.realized_col_counts() {
                assert!(c <= 4);
            }
            for (&rc, &heavy) in sp.realized_row_counts().iter().zip(sp.heavy_mask()) {
                assert!(rc <= 22);
                if heavy {
                    assert_eq!(rc, 0, "trimmed row must be empty");
                }
            }
        }
    }

    #[test]
    fn heavy_rows_match_expectation_bound_at_scale() {
        // With K=8, L=44 a heavy row needs 45 hits of a Bin(1000, 0.008);
        // the bound is ~1e-14 and the empirical mean must respect it.
        let (n, k, l) = (1000, 8, 44);
        let trials = 200;
        let mut total = 0usize;
        for seed in 0..trials {
            let mut src = BitSource::new(crate::rng::split_seed(0xbeef, seed));
            let sp = SparsePerturbation::build(n, k, l, &mut src).unwrap();
            total += sp.heavy_row_stats().trimmed_rows;
        }
        let mean = total as f64 / trials as f64;
        assert!(mean <= 1.1 * heavy_row_mean_bound(n, k, l) + f64::EPSILON);
    }

    fn build_default(n: usize, seed: u64) -> ObliviousPerturbation {
        let mut src = BitSource::new(seed);
        ObliviousPerturbation::build(n, 0.5, 0.1, PerturbConfig::default(), &mut src).unwrap()
    }

    #[test]
    fn combined_apply_is_linear_and_matches_dense() {
        let n = 64;
        let r = build_default(n, 77);
        assert!(r.apply(&vec![0.0; n]).iter().all(|&v| v == 0.0));
        let dense = r.to_dense();
        for j in [0usize, 13, 63] {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = r.apply(&e);
            for i in 0..n {
                assert!((col[i] - dense[(i, j)]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        let n = 128;
        let r = build_default(n, 5);
        let mut src = BitSource::new(1);
        let x: Vec<f64> = (0..n).map(|_| src.gauss()).collect();
        let y: Vec<f64> = (0..n).map(|_| src.gauss()).collect();
        let lhs = dot(&r.apply(&x), &y);
        let rhs = dot(&x, &r.apply_transpose(&y));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn scaling_by_two_is_exact() {
        let n = 32;
        let r = build_default(n, 6);
        let mut src = BitSource::new(2);
        let x: Vec<f64> = (0..n).map(|_| src.gauss()).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y = r.apply(&x);
        let y2 = r.apply(&x2);
        for (a, b) in y.iter().zip(y2) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn norm_within_one_at_desk_scale() {
        let n = 256;
        let r = build_default(n, 4242);
        let norm = crate::spectra::svd_values(&r.to_dense()).unwrap().s_max;
        assert!(norm <= 1.0 + 1e-10, "norm = {norm}");
    }

    #[test]
    fn bit_budget_tracks_n_log_n() {
        let bits = |n: usize| build_default(n, 9).bit_report().total as f64;
        let model = |n: usize| n as f64 * (n as f64).log2();
        for n in [256usize, 512] {
            let ratio = bits(n) / bits(2 * n);
            let expected = model(n) / model(2 * n);
            assert!(
                (ratio / expected - 1.0).abs() <= 0.2,
                "n={n}: ratio {ratio} vs model {expected}"
            );
        }
    }

    #[test]
    fn bit_report_components_sum_to_total() {
        let r = build_default(128, 3);
        let b = r.bit_report();
        assert_eq!(
            b.pattern + b.dense_signs + b.sparse_support + b.sparse_signs,
            b.total
        );
        assert_eq!(b.dense_signs, 256);
        assert_eq!(b.sparse_signs, 128 * 8);
    }

    #[test]
    fn serialization_round_trip_is_bit_exact_and_compact() {
        let n = 200;
        let mut src = BitSource::new(31);
        let r = ObliviousPerturbation::build(n, 0.5, 0.1, PerturbConfig::default(), &mut src)
            .unwrap();
        let json = serde_json::to_string(&r.to_file()).unwrap();
        let back: PerturbationFile = serde_json::from_str(&json).unwrap();
        let r2 = ObliviousPerturbation::from_file(back).unwrap();
        let a = r.to_dense();
        let b = r2.to_dense();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a[(i, j)].to_bits(), b[(i, j)].to_bits());
            }
        }
        // O(nK)-sized container: generous constant, right growth law.
        let budget = 64.0 * n as f64 * (8.0 + (n as f64).log2());
        assert!((json.len() as f64) < budget, "{} bytes", json.len());
    }

    #[test]
    fn paper_rule_matches_formula() {
        let (k, l) = paper_rule_k_l(2240.0, 0.5, 0.5).unwrap();
        assert_eq!(k, (2240.0f64 / (0.25 * 0.125)).ceil() as u64);
        assert_eq!(l, trim_threshold_for(k));
        assert!(paper_rule_k_l(-1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn build_rejects_bad_eps_delta() {
        let mut src = BitSource::new(1);
        let cfg = PerturbConfig::default();
        assert!(ObliviousPerturbation::build(64, 0.0, 0.1, cfg, &mut src).is_err());
        assert!(ObliviousPerturbation::build(64, 0.5, 1.0, cfg, &mut src).is_err());
        let bad = PerturbConfig { k: Some(9), l: Some(9), ..cfg };
        assert!(ObliviousPerturbation::build(64, 0.5, 0.1, bad, &mut src).is_err());
    }
}
