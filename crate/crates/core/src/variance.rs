//! Empirical validation of the probe estimator's covariance.
//!
//! For a unit vector `w` and a single probe `r`, the componentwise variance
//! of the estimate `L r r^T w` has the closed form
//!
//! ```text
//! diag[ L w w^T L^T + (1/p - 3) L diag(diag(w w^T)) L^T + L L^T ]
//! ```
//!
//! This module evaluates that form exactly, estimates the same quantity by
//! Monte Carlo with one-pass (Welford) moment accumulation, and compares the
//! two. It also evaluates the two upper bounds used to reason about the
//! mini-batch parameters: the single-probe bound
//! `diag[G G^T] + (1/p) diag[L L^T]` and its mini-batch form
//! `(1/N_r) diag[G G^T] + (n / (l N_r)) diag[L L^T]`, whose first term only
//! shrinks with the probe count. That is why many small probes beat few
//! large ones at a fixed column budget.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::LaplacianProvider;
use crate::linalg::{DenseMatrix, DenseVector};
use crate::probes::{draw_probe, ProbeConfig};

/// One-pass per-component accumulator of mean and 2nd/3rd/4th central
/// moments. The fourth moment feeds the standard error of the sample
/// variance, which the bound checks use as Monte Carlo slack.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            m3: vec![0.0; dim],
            m4: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for (i, &x) in sample.iter().enumerate() {
            let delta = x - self.mean[i];
            let delta_n = delta / n;
            let delta_n2 = delta_n * delta_n;
            let term1 = delta * delta_n * (n - 1.0);
            self.m4[i] += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2[i]
                - 4.0 * delta_n * self.m3[i];
            self.m3[i] += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2[i];
            self.m2[i] += term1;
            self.mean[i] += delta_n;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per component.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }

    /// Standard error of the sample variance per component,
    /// `sqrt((m4 - var^2) / count)`.
    pub fn variance_std_err(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        let var = self.variance();
        self.m4
            .iter()
            .zip(&var)
            .map(|(m4, v)| ((m4 / n - v * v).max(0.0) / n).sqrt())
            .collect()
    }
}

fn check_unit_w(l: &DenseMatrix, w: &DenseVector) -> Result<()> {
    let n = l.rows();
    if l.cols() != n || w.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} matrix with length-{n} vector"),
            got: format!("{}x{} with length {}", l.rows(), l.cols(), w.len()),
        });
    }
    let norm = w.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::ContractViolation(format!(
            "w must be a unit vector (norm {norm})"
        )));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "probe sparsity p must be in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Exact componentwise variance of the single-probe estimate `L r r^T w`.
pub fn analytic_diag_cov(l: &DenseMatrix, w: &DenseVector, p: f64) -> Result<DenseVector> {
    check_unit_w(l, w)?;
    check_p(p)?;
    let n = l.rows();
    let coef = 1.0 / p - 3.0;

    // g = L w
    let mut g = vec![0.0f64; n];
    for j in 0..n {
        let wj = w.get(j);
        if wj == 0.0 {
            continue;
        }
        let col = l.col(j);
        for (acc, &v) in g.iter_mut().zip(col) {
            *acc += v * wj;
        }
    }

    let mut out = DenseVector::zeros(n);
    for (i, &gi) in g.iter().enumerate() {
        // row_sq = sum_j L_ij^2, weighted = sum_j L_ij^2 w_j^2
        let mut row_sq = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            let v = l.get(i, j);
            let sq = v * v;
            row_sq += sq;
            weighted += sq * w.get(j) * w.get(j);
        }
        out.set(i, gi * gi + coef * weighted + row_sq);
    }
    Ok(out)
}

/// Single-probe upper bound `diag[G G^T] + (1/p) diag[L L^T]`.
pub fn bound_single_probe(l: &DenseMatrix, w: &DenseVector, p: f64) -> Result<DenseVector> {
    check_unit_w(l, w)?;
    check_p(p)?;
    let n = l.rows();
    let mut g = vec![0.0f64; n];
    for j in 0..n {
        let wj = w.get(j);
        if wj == 0.0 {
            continue;
        }
        let col = l.col(j);
        for (acc, &v) in g.iter_mut().zip(col) {
            *acc += v * wj;
        }
    }
    let mut out = DenseVector::zeros(n);
    for (i, &gi) in g.iter().enumerate() {
        let mut row_sq = 0.0;
        for j in 0..n {
            let v = l.get(i, j);
            row_sq += v * v;
        }
        out.set(i, gi * gi + row_sq / p);
    }
    Ok(out)
}

/// Mini-batch bound `(1/N_r) diag[G G^T] + (n/(l N_r)) diag[L L^T]` for the
/// mean of `n_r` probes at `p = l/n`.
pub fn bound_minibatch(
    l: &DenseMatrix,
    w: &DenseVector,
    batch_len: usize,
    n_r: usize,
) -> Result<DenseVector> {
    let n = l.rows();
    if batch_len == 0 || batch_len > n || n_r == 0 {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= l <= {n} and n_r >= 1, got l = {batch_len}, n_r = {n_r}"
        )));
    }
    check_unit_w(l, w)?;
    let g_weight = 1.0 / n_r as f64;
    let l_weight = n as f64 / (batch_len * n_r) as f64;
    let mut g = vec![0.0f64; n];
    for j in 0..n {
        let wj = w.get(j);
        if wj == 0.0 {
            continue;
        }
        let col = l.col(j);
        for (acc, &v) in g.iter_mut().zip(col) {
            *acc += v * wj;
        }
    }
    let mut out = DenseVector::zeros(n);
    for (i, &gi) in g.iter().enumerate() {
        let mut row_sq = 0.0;
        for j in 0..n {
            let v = l.get(i, j);
            row_sq += v * v;
        }
        out.set(i, g_weight * gi * gi + l_weight * row_sq);
    }
    Ok(out)
}

/// Monte Carlo estimate of the componentwise variance of `L r r^T w` over
/// independent single probes drawn from `probe_cfg`'s streams.
pub fn empirical_diag_cov(
    l: &DenseMatrix,
    w: &DenseVector,
    probe_cfg: &ProbeConfig,
    samples: usize,
) -> Result<DenseVector> {
    Ok(DenseVector::from_vec(
        empirical_moments(l, w, probe_cfg, samples)?.variance(),
    ))
}

/// Full moment accumulator for the same estimator, when the caller needs
/// standard errors as well.
pub fn empirical_moments(
    l: &DenseMatrix,
    w: &DenseVector,
    probe_cfg: &ProbeConfig,
    samples: usize,
) -> Result<MomentAccumulator> {
    let n = l.rows();
    if l.cols() != n || w.len() != n || probe_cfg.n != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} matrix, length-{n} vector, probes of dimension {n}"),
            got: format!(
                "{}x{}, length {}, probe dim {}",
                l.rows(),
                l.cols(),
                w.len(),
                probe_cfg.n
            ),
        });
    }
    // Partition-mode draws within an epoch are disjoint, not independent,
    // and would bias the variance estimate.
    if probe_cfg.mode != crate::probes::ProbeMode::Iid {
        return Err(Error::ContractViolation(
            "covariance validation needs independent probes (iid mode)".into(),
        ));
    }
    let mut acc = MomentAccumulator::new(n);
    let mut sample = vec![0.0f64; n];
    for sid in 0..samples {
        let r = draw_probe(probe_cfg, sid as u64);
        // s = r^T w over the nonzero support.
        let mut s = 0.0;
        for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
            s += sign * r.scale * w.get(idx);
        }
        // sample = (L r) * s, reading only the touched columns.
        sample.iter_mut().for_each(|v| *v = 0.0);
        for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
            let coef = sign * r.scale * s;
            let col = l.col(idx);
            for (slot, &v) in sample.iter_mut().zip(col) {
                *slot += coef * v;
            }
        }
        acc.push(&sample);
    }
    Ok(acc)
}

/// Variance validation summary, serialized as JSON by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub n: usize,
    pub p: f64,
    pub samples: usize,
    pub empirical_diag_cov: Vec<f64>,
    pub analytic_diag_cov: Vec<f64>,
    pub bound_single_probe: Vec<f64>,
    pub bound_minibatch: Vec<f64>,
    /// `||empirical - analytic|| / ||analytic||`.
    pub rel_error: f64,
}

/// Runs the Monte Carlo comparison against the closed form on the provider's
/// Laplacian.
pub fn variance_report(
    provider: &LaplacianProvider,
    w: &DenseVector,
    probe_cfg: &ProbeConfig,
    samples: usize,
) -> Result<VarianceReport> {
    let l = provider.to_dense();
    variance_report_matrix(&l, w, probe_cfg, samples)
}

pub fn variance_report_matrix(
    l: &DenseMatrix,
    w: &DenseVector,
    probe_cfg: &ProbeConfig,
    samples: usize,
) -> Result<VarianceReport> {
    let analytic = analytic_diag_cov(l, w, probe_cfg.p)?;
    let empirical = empirical_diag_cov(l, w, probe_cfg, samples)?;
    let single = bound_single_probe(l, w, probe_cfg.p)?;
    let batch = bound_minibatch(l, w, probe_cfg.batch_len(), probe_cfg.n_r)?;

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..l.rows() {
        let d = empirical.get(i) - analytic.get(i);
        num += d * d;
        den += analytic.get(i) * analytic.get(i);
    }
    let rel_error = if den > 0.0 {
        (num / den).sqrt()
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };

    Ok(VarianceReport {
        n: l.rows(),
        p: probe_cfg.p,
        samples,
        empirical_diag_cov: empirical.data().to_vec(),
        analytic_diag_cov: analytic.data().to_vec(),
        bound_single_probe: single.data().to_vec(),
        bound_minibatch: batch.data().to_vec(),
        rel_error,
    })
}

/// Variance of one mini-batch split at a fixed column budget.
#[derive(Debug, Clone, Serialize)]
pub struct SplitVariance {
    pub batch_len: usize,
    pub n_r: usize,
    /// Sum over all n*k components of the empirical variance of the averaged
    /// gradient estimate.
    pub empirical_total: f64,
    /// Same total from the closed form (single-probe variance / n_r).
    pub analytic_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymmetryReport {
    pub minibatch_size: usize,
    /// Splits ordered by increasing empirical variance.
    pub splits: Vec<SplitVariance>,
}

/// Compares mini-batch splits `(l, n_r)` with the same column budget
/// `m = l * n_r`: replicates the averaged gradient estimate, accumulates
/// per-component variances, and reports totals next to their closed-form
/// predictions.
pub fn asymmetry_experiment(
    l: &DenseMatrix,
    w: &DenseMatrix,
    m: usize,
    splits: &[(usize, usize)],
    replications: usize,
    seed: u64,
) -> Result<AsymmetryReport> {
    let n = l.rows();
    if l.cols() != n || w.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} matrix and {n}x* basis"),
            got: format!("{}x{} and {}x{}", l.rows(), l.cols(), w.rows(), w.cols()),
        });
    }
    let k = w.cols();
    let mut report = AsymmetryReport {
        minibatch_size: m,
        splits: Vec::with_capacity(splits.len()),
    };

    for &(batch_len, n_r) in splits {
        if batch_len * n_r != m {
            return Err(Error::InvalidConfig(format!(
                "split ({batch_len}, {n_r}) does not multiply to the budget {m}"
            )));
        }
        // Seed derived from the split values: identical splits replay the
        // same probes, distinct splits get decorrelated streams.
        let split_seed =
            crate::rng::StreamRng::from_key(seed, &[batch_len as u64, n_r as u64]).next_u64();
        let cfg = ProbeConfig::from_batch(n, batch_len, n_r, split_seed, Default::default())?;

        let mut acc = MomentAccumulator::new(n * k);
        let mut gtilde = vec![0.0f64; n * k];
        let weight = 1.0 / n_r as f64;
        for rep in 0..replications {
            gtilde.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n_r {
                let stream = rep as u64 * n_r as u64 + i as u64;
                let r = draw_probe(&cfg, stream);
                // Accumulate L r r^T W into the flattened buffer.
                let mut s = vec![0.0f64; k];
                for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
                    let coef = sign * r.scale;
                    for (c, slot) in s.iter_mut().enumerate() {
                        *slot += coef * w.get(idx, c);
                    }
                }
                let mut lr = vec![0.0f64; n];
                for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
                    let coef = sign * r.scale;
                    let col = l.col(idx);
                    for (slot, &v) in lr.iter_mut().zip(col) {
                        *slot += coef * v;
                    }
                }
                for c in 0..k {
                    let sc = s[c] * weight;
                    for row in 0..n {
                        gtilde[c * n + row] += lr[row] * sc;
                    }
                }
            }
            acc.push(&gtilde);
        }
        let empirical_total: f64 = acc.variance().iter().sum();

        let mut analytic_total = 0.0;
        let p = batch_len as f64 / n as f64;
        for c in 0..k {
            let col = DenseVector::from_vec(w.col(c).to_vec());
            let single = analytic_diag_cov(l, &col, p)?;
            analytic_total += single.data().iter().sum::<f64>() / n_r as f64;
        }

        report.splits.push(SplitVariance {
            batch_len,
            n_r,
            empirical_total,
            analytic_total,
        });
    }
    report
        .splits
        .sort_by(|a, b| a.empirical_total.total_cmp(&b.empirical_total));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::graph::{AffinityConfig, LaplacianProvider};
    use crate::linalg::qr_orthonormal_factor;
    use crate::rng::StreamRng;

    fn unit_vector(n: usize, seed: u64) -> DenseVector {
        let mut rng = StreamRng::from_key(seed, &[]);
        let mut v: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        DenseVector::from_vec(v)
    }

    #[test]
    fn one_dimensional_case_collapses_to_c_squared_times_inv_p_minus_one() {
        // L = (c), w = (1): all three terms are powers of c and the total is
        // exactly c^2 (1/p - 1). Cross-checked by enumerating r^2 in {0, 1/p}.
        for (c, p) in [(2.0f64, 0.25f64), (0.7, 0.5), (3.0, 1.0 / 3.0)] {
            let l = DenseMatrix::from_rows(&[vec![c]]);
            let w = DenseVector::from_vec(vec![1.0]);
            let out = analytic_diag_cov(&l, &w, p).unwrap();
            let expect = c * c * (1.0 / p - 1.0);
            assert!(
                (out.get(0) - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                "got {} want {expect}",
                out.get(0)
            );
            // Distribution oracle: c r^2 takes value c/p w.p. p, else 0.
            let mean = c; // p * c/p
            let second = c * c / p; // p * (c/p)^2
            assert!(((second - mean * mean) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn middle_term_vanishes_at_p_one_third() {
        let mut rng = StreamRng::from_key(3, &[]);
        let g = DenseMatrix::gaussian(6, 6, &mut rng);
        let w = unit_vector(6, 5);
        let p = 1.0 / 3.0;
        let full = analytic_diag_cov(&g, &w, p).unwrap();
        // With the middle coefficient zero the result is diag[Lww^TL^T + LL^T].
        for i in 0..6 {
            let mut gi = 0.0;
            let mut row_sq = 0.0;
            for j in 0..6 {
                gi += g.get(i, j) * w.get(j);
                row_sq += g.get(i, j) * g.get(i, j);
            }
            let expect = gi * gi + row_sq;
            assert!((full.get(i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_is_nonnegative() {
        let mut rng = StreamRng::from_key(9, &[]);
        for trial in 0..10 {
            let g = DenseMatrix::gaussian(7, 7, &mut rng);
            let w = unit_vector(7, trial);
            for p in [0.05, 0.2, 0.5, 1.0] {
                let out = analytic_diag_cov(&g, &w, p).unwrap();
                for i in 0..7 {
                    assert!(out.get(i) >= -1e-12, "negative variance {}", out.get(i));
                }
            }
        }
    }

    #[test]
    fn rejects_non_unit_w() {
        let l = DenseMatrix::identity(3);
        let w = DenseVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!(matches!(
            analytic_diag_cov(&l, &w, 0.5),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn zero_matrix_zero_variance() {
        let l = DenseMatrix::zeros(4, 4);
        let w = unit_vector(4, 2);
        let cfg = ProbeConfig::iid(4, 0.5, 1, 3).unwrap();
        let emp = empirical_diag_cov(&l, &w, &cfg, 2000).unwrap();
        for i in 0..4 {
            assert_eq!(emp.get(i), 0.0);
        }
    }

    #[test]
    fn degenerate_distribution_at_p_one_n_one() {
        // With p = 1 and n = 1, r^2 = 1 always, so the estimator is constant.
        let l = DenseMatrix::from_rows(&[vec![2.5]]);
        let w = DenseVector::from_vec(vec![1.0]);
        let cfg = ProbeConfig::iid(1, 1.0, 1, 7).unwrap();
        let emp = empirical_diag_cov(&l, &w, &cfg, 5000).unwrap();
        assert_eq!(emp.get(0), 0.0);
        let analytic = analytic_diag_cov(&l, &w, 1.0).unwrap();
        assert!(analytic.get(0).abs() < 1e-12);
    }

    #[test]
    fn empirical_matches_analytic_on_laplacian() {
        let ds = gen_blobs(2, 4, 2, 0.3, 17);
        let p = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let l = p.to_dense();
        let n = l.rows();
        let w = unit_vector(n, 4);
        let cfg = ProbeConfig::iid(n, 0.25, 1, 11).unwrap();
        let report = variance_report(&p, &w, &cfg, 200_000).unwrap();
        assert!(report.rel_error <= 0.05, "rel error {}", report.rel_error);
        assert_eq!(report.analytic_diag_cov.len(), n);
        // Analytic sits below the single-probe bound componentwise.
        for i in 0..n {
            assert!(report.analytic_diag_cov[i] <= report.bound_single_probe[i] + 1e-12);
        }
    }

    #[test]
    fn averaging_divides_variance_by_n_r() {
        let ds = gen_blobs(2, 4, 2, 0.3, 23);
        let prov = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let l = prov.to_dense();
        let n = l.rows();
        let mut rng = StreamRng::from_key(6, &[]);
        let w = qr_orthonormal_factor(&DenseMatrix::gaussian(n, 1, &mut rng)).unwrap();
        let w_vec = DenseVector::from_vec(w.col(0).to_vec());

        // Single-probe variance at p = 4/8, then the mean of 4 such probes:
        // totals should differ by a factor of 4.
        let cfg = ProbeConfig::from_batch(n, 4, 1, 5, Default::default()).unwrap();
        let single_total: f64 = empirical_diag_cov(&l, &w_vec, &cfg, 60_000)
            .unwrap()
            .data()
            .iter()
            .sum();
        let report = asymmetry_experiment(&l, &w, 16, &[(4, 4)], 40_000, 5).unwrap();
        let averaged = &report.splits[0];
        let ratio = single_total / averaged.empirical_total;
        assert!(
            (ratio - 4.0).abs() < 0.4,
            "expected ~4x variance reduction, got {ratio}"
        );
        let rel =
            (averaged.empirical_total - averaged.analytic_total).abs() / averaged.analytic_total;
        assert!(rel < 0.08, "split off its closed form by {rel}");
    }

    #[test]
    fn identical_splits_are_identical() {
        let ds = gen_blobs(2, 4, 2, 0.3, 29);
        let prov = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let l = prov.to_dense();
        let n = l.rows();
        let mut rng = StreamRng::from_key(8, &[]);
        let w = qr_orthonormal_factor(&DenseMatrix::gaussian(n, 2, &mut rng)).unwrap();
        let report = asymmetry_experiment(&l, &w, 4, &[(4, 1), (4, 1)], 2000, 9).unwrap();
        assert_eq!(
            report.splits[0].empirical_total,
            report.splits[1].empirical_total
        );
        assert_eq!(
            report.splits[0].analytic_total,
            report.splits[1].analytic_total
        );
    }

    #[test]
    fn split_budget_validated() {
        let l = DenseMatrix::identity(8);
        let w = DenseMatrix::from_fn(8, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert!(matches!(
            asymmetry_experiment(&l, &w, 8, &[(3, 2)], 10, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn welford_matches_two_pass_moments() {
        let mut rng = StreamRng::from_key(44, &[]);
        let samples: Vec<f64> = (0..5000).map(|_| rng.next_gaussian() * 2.0 + 1.0).collect();
        let mut acc = MomentAccumulator::new(1);
        for &s in &samples {
            acc.push(&[s]);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (samples.len() - 1) as f64;
        assert!((acc.mean()[0] - mean).abs() < 1e-12);
        assert!((acc.variance()[0] - var).abs() < 1e-10);
        let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / samples.len() as f64;
        let expected_se = ((m4 - var * var) / samples.len() as f64).sqrt();
        assert!((acc.variance_std_err()[0] - expected_se).abs() / expected_se < 1e-6);
    }
}
