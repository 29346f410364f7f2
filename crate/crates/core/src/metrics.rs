//! Clustering evaluation and floating-point-operation accounting.
//!
//! NMI is computed from the contingency table with natural logs and the
//! geometric-mean normalization `I(a;b) / sqrt(H(a) H(b))`; the arithmetic
//! mean is available behind a flag. FLOP counts are analytic closed forms in
//! the problem sizes, evaluated in exact integer arithmetic, so comparisons
//! across methods do not depend on instrumentation overhead.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Normalization applied to mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmiNorm {
    /// `I / sqrt(H(a) H(b))`.
    #[default]
    Geometric,
    /// `I / ((H(a) + H(b)) / 2)`.
    Arithmetic,
}

/// Normalized mutual information between two labelings, in [0, 1].
///
/// Equals 1 exactly when the partitions are identical up to relabeling.
/// When both entropies are zero (both sides one cluster) the score is 1;
/// when exactly one entropy is zero it is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    nmi_with(a, b, NmiNorm::Geometric)
}

pub fn nmi_with(a: &[usize], b: &[usize], norm: NmiNorm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ContractViolation(format!(
            "label slices differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::ContractViolation("empty labelings".into()));
    }
    let n = a.len() as f64;

    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut count_a: BTreeMap<usize, f64> = BTreeMap::new();
    let mut count_b: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *count_a.entry(x).or_insert(0.0) += 1.0;
        *count_b.entry(y).or_insert(0.0) += 1.0;
    }

    let entropy = |counts: &BTreeMap<usize, f64>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);

    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let p_xy = c / n;
        let p_x = count_a[&x] / n;
        let p_y = count_b[&y] / n;
        mi += p_xy * (p_xy / (p_x * p_y)).ln();
    }
    let mi = mi.max(0.0);

    if h_a <= 0.0 && h_b <= 0.0 {
        return Ok(1.0);
    }
    if h_a <= 0.0 || h_b <= 0.0 {
        return Ok(0.0);
    }
    let denom = match norm {
        NmiNorm::Geometric => (h_a * h_b).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (h_a + h_b),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// FLOPs per optimizer iteration: `2nkm + 6nk^2 - k^2`, where `m` is the
/// mini-batch size (expected Laplacian columns touched).
pub fn mbsc_iter_flops(n: usize, k: usize, m: usize) -> u64 {
    let (n, k, m) = (n as u128, k as u128, m as u128);
    let total = 2 * n * k * m + 6 * n * k * k - k * k;
    total as u64
}

/// The iteration cost split by phase; the three parts sum to
/// [`mbsc_iter_flops`] exactly.
pub fn mbsc_iter_flops_by_phase(n: usize, k: usize, m: usize) -> (u64, u64, u64) {
    let (n_u, k_u, m_u) = (n as u128, k as u128, m as u128);
    let gradient = 2 * n_u * k_u * m_u;
    let projection = 4 * n_u * k_u * k_u - k_u * k_u;
    let retraction = 2 * n_u * k_u * k_u;
    (gradient as u64, projection as u64, retraction as u64)
}

/// One round of the power method multiplies the n-by-n matrix into an
/// n-by-k block: `2n^2 k - nk` FLOPs.
pub fn power_round_flops(n: usize, k: usize) -> u64 {
    let (n, k) = (n as u128, k as u128);
    (2 * n * n * k - n * k) as u64
}

/// Tall-skinny SVD estimate for the power method's postprocessing:
/// `2nk^2 + 2k^3`.
pub fn power_svd_flops(n: usize, k: usize) -> u64 {
    let (n, k) = (n as u128, k as u128);
    (2 * n * k * k + 2 * k * k * k) as u64
}

/// Drawing the n-by-k Gaussian start block.
pub fn power_init_flops(n: usize, k: usize) -> u64 {
    (n * k) as u64
}

/// Leading-order Householder QR cost (factor + thin Q formation), reported
/// separately from the power method's headline count.
pub fn qr_flops(n: usize, k: usize) -> u64 {
    let (n, k) = (n as u128, k as u128);
    (4 * n * k * k) as u64
}

/// Nystrom approximation total with m landmark samples:
/// `6nk + 8k^3 - 3k^2 + 4nk^2 - 3k + 2nkm + nm + 2nm^2 + m^2 + m^3 - n`.
pub fn nystrom_flops(n: usize, k: usize, m: usize) -> u64 {
    let (n, k, m) = (n as i128, k as i128, m as i128);
    let total = 6 * n * k + 8 * k * k * k - 3 * k * k + 4 * n * k * k - 3 * k
        + 2 * n * k * m
        + n * m
        + 2 * n * m * m
        + m * m
        + m * m * m
        - n;
    debug_assert!(total >= 0);
    total as u64
}

/// Per-phase FLOP counters for one solver run. Counters only ever increase;
/// the total is their sum. k-means cost is excluded by convention: every
/// method pays the same k-means bill, so it would not change comparisons.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FlopLedger {
    pub gradient: u64,
    pub projection: u64,
    pub retraction: u64,
    pub eig_svd: u64,
}

impl FlopLedger {
    pub fn new() -> Self {
        FlopLedger::default()
    }

    pub fn add_gradient(&mut self, flops: u64) {
        self.gradient += flops;
    }

    pub fn add_projection(&mut self, flops: u64) {
        self.projection += flops;
    }

    pub fn add_retraction(&mut self, flops: u64) {
        self.retraction += flops;
    }

    pub fn add_eig_svd(&mut self, flops: u64) {
        self.eig_svd += flops;
    }

    pub fn total(&self) -> u64 {
        self.gradient + self.projection + self.retraction + self.eig_svd
    }
}

/// One benchmark result row. `params` carries the full parameter set needed
/// to reproduce the run bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub n: usize,
    pub k: usize,
    /// Mini-batch size for the optimizer, landmark count for Nystrom,
    /// rounds for the power method; absent for the exact baseline.
    pub m_or_q: Option<usize>,
    pub nmi: Option<f64>,
    pub flops: u64,
    pub wall_ms: f64,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
}
