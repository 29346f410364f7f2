//! Sparse random probe vectors with `E[r r^T] = I`.
//!
//! Each probe component is 0 with probability `1 - p` and otherwise
//! `+p^{-1/2}` or `-p^{-1/2}` with equal probability. Averaging
//! `L r r^T W` over probes gives an unbiased estimate of `L W` that only
//! touches the Laplacian columns where the probe is nonzero.
//!
//! Probes are drawn from counter-based streams keyed by
//! `(seed, iteration, probe index)`, so a run is reproducible regardless of
//! how probe evaluations are scheduled.

use crate::error::{Error, Result};
use crate::graph::LaplacianProvider;
use crate::linalg::DenseMatrix;
use crate::rng::{tag, StreamRng};

/// How probe nonzero positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeMode {
    /// Every component is independently zero or `±p^{-1/2}`. Matches the
    /// variance analysis exactly; the default.
    #[default]
    Iid,
    /// Column indices are partitioned into batches of `l = round(p n)` after
    /// an epoch shuffle; each draw takes the next batch with random signs.
    /// The reshuffle restores `E[r r^T] = I` across draws.
    ShuffledPartition,
}

impl ProbeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(ProbeMode::Iid),
            "shuffled" | "shuffled-partition" => Ok(ProbeMode::ShuffledPartition),
            other => Err(Error::InvalidConfig(format!(
                "unknown probe mode `{other}` (expected `iid` or `shuffled`)"
            ))),
        }
    }
}

/// Probe distribution parameters.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub n: usize,
    /// Per-component nonzero probability, in (0, 1].
    pub p: f64,
    /// Number of probes averaged per gradient estimate.
    pub n_r: usize,
    pub seed: u64,
    pub mode: ProbeMode,
}

impl ProbeConfig {
    pub fn iid(n: usize, p: f64, n_r: usize, seed: u64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "probe sparsity p must be in (0, 1], got {p}"
            )));
        }
        if n == 0 || n_r == 0 {
            return Err(Error::InvalidConfig(
                "probe dimension and count must be positive".into(),
            ));
        }
        Ok(ProbeConfig {
            n,
            p,
            n_r,
            seed,
            mode: ProbeMode::Iid,
        })
    }

    /// Builds from the batch view: `l` expected columns per probe, so
    /// `p = l / n` and the mini-batch size is `m = l * n_r`.
    pub fn from_batch(n: usize, l: usize, n_r: usize, seed: u64, mode: ProbeMode) -> Result<Self> {
        if l == 0 || l > n {
            return Err(Error::InvalidConfig(format!(
                "batch length l must be in 1..={n}, got {l}"
            )));
        }
        let mut cfg = Self::iid(n, l as f64 / n as f64, n_r, seed)?;
        cfg.mode = mode;
        Ok(cfg)
    }

    /// Expected columns touched per probe, `l = round(p n)`, at least 1.
    pub fn batch_len(&self) -> usize {
        ((self.p * self.n as f64).round() as usize).clamp(1, self.n)
    }

    /// Mini-batch size `m = l * n_r`: expected Laplacian columns touched per
    /// gradient estimate.
    pub fn minibatch_size(&self) -> usize {
        self.batch_len() * self.n_r
    }
}

/// One drawn probe: nonzero positions with signs, implicit magnitude
/// `p^{-1/2}`.
#[derive(Debug, Clone)]
pub struct SparseProbe {
    /// Strictly increasing nonzero indices.
    pub indices: Vec<usize>,
    /// Sign per index, +1.0 or -1.0.
    pub signs: Vec<f64>,
    /// `p^{-1/2}`.
    pub scale: f64,
}

impl SparseProbe {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Dense view, mostly for diagnostics and tests.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (&i, &s) in self.indices.iter().zip(&self.signs) {
            v[i] = s * self.scale;
        }
        v
    }
}

/// Draws the probe for stream `stream_id`. In mini-batch terms the stream id
/// is the global draw counter `t * n_r + i`.
pub fn draw_probe(cfg: &ProbeConfig, stream_id: u64) -> SparseProbe {
    let scale = 1.0 / cfg.p.sqrt();
    match cfg.mode {
        ProbeMode::Iid => {
            let mut rng = StreamRng::from_key(cfg.seed, &[tag::PROBE, stream_id]);
            let mut indices = Vec::new();
            let mut signs = Vec::new();
            for i in 0..cfg.n {
                let u = rng.next_f64();
                if u < cfg.p {
                    indices.push(i);
                    signs.push(if u < cfg.p * 0.5 { 1.0 } else { -1.0 });
                }
            }
            SparseProbe {
                indices,
                signs,
                scale,
            }
        }
        ProbeMode::ShuffledPartition => {
            let l = cfg.batch_len();
            let batches_per_epoch = (cfg.n / l).max(1) as u64;
            let epoch = stream_id / batches_per_epoch;
            let slot = (stream_id % batches_per_epoch) as usize;

            let mut perm_rng = StreamRng::from_key(cfg.seed, &[tag::PARTITION_EPOCH, epoch]);
            let mut perm: Vec<usize> = (0..cfg.n).collect();
            perm_rng.shuffle(&mut perm);
            let mut indices: Vec<usize> = perm[slot * l..(slot + 1) * l].to_vec();
            indices.sort_unstable();

            let mut sign_rng = StreamRng::from_key(cfg.seed, &[tag::PROBE, stream_id]);
            let signs = indices
                .iter()
                .map(|_| if sign_rng.next_f64() < 0.5 { 1.0 } else { -1.0 })
                .collect();
            SparseProbe {
                indices,
                signs,
                scale,
            }
        }
    }
}

/// `L r r^T W` for one probe: computes `s = r^T W` from the nonzero rows,
/// then accumulates `(L r) s` reading only the Laplacian columns at the
/// probe's nonzero indices. Never materializes L on a streaming backing.
pub fn probe_product(p: &LaplacianProvider, r: &SparseProbe, w: &DenseMatrix) -> DenseMatrix {
    let n = p.n();
    let k = w.cols();
    assert_eq!(w.rows(), n, "probe_product shape mismatch");

    // s = r^T W, touching only the nonzero rows of r.
    let mut s = vec![0.0f64; k];
    for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
        let coef = sign * r.scale;
        for (c, slot) in s.iter_mut().enumerate() {
            *slot += coef * w.get(idx, c);
        }
    }

    // lr = L r, one column at a time in ascending index order.
    let mut lr = vec![0.0f64; n];
    let mut column = vec![0.0f64; n];
    for (&idx, &sign) in r.indices.iter().zip(&r.signs) {
        let coef = sign * r.scale;
        p.column_into(idx, &mut column);
        for (acc, &v) in lr.iter_mut().zip(&column) {
            *acc += coef * v;
        }
    }

    // outer product (L r) s
    let mut out = DenseMatrix::zeros(n, k);
    for (c, &sc) in s.iter().enumerate() {
        let col = out.col_mut(c);
        for i in 0..n {
            col[i] = lr[i] * sc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::graph::{AffinityConfig, LaplacianProvider};

    #[test]
    fn p_one_has_no_zeros_unit_magnitude() {
        let cfg = ProbeConfig::iid(64, 1.0, 1, 5).unwrap();
        let r = draw_probe(&cfg, 0);
        assert_eq!(r.nnz(), 64);
        assert_eq!(r.scale, 1.0);
        for &s in &r.signs {
            assert!(s == 1.0 || s == -1.0);
        }
    }

    #[test]
    fn deterministic_per_stream() {
        let cfg = ProbeConfig::iid(100, 0.3, 1, 42).unwrap();
        let a = draw_probe(&cfg, 17);
        let b = draw_probe(&cfg, 17);
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.signs, b.signs);
        let c = draw_probe(&cfg, 18);
        assert_ne!(
            (a.indices.clone(), a.signs.clone()),
            (c.indices, c.signs),
            "distinct streams should differ"
        );
    }

    #[test]
    fn indices_strictly_increasing() {
        let cfg = ProbeConfig::iid(200, 0.2, 1, 7).unwrap();
        for sid in 0..20 {
            let r = draw_probe(&cfg, sid);
            assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
        }
        let cfg = ProbeConfig::from_batch(100, 10, 1, 7, ProbeMode::ShuffledPartition).unwrap();
        for sid in 0..20 {
            let r = draw_probe(&cfg, sid);
            assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(r.nnz(), 10);
        }
    }

    #[test]
    fn empirical_nonzero_fraction() {
        let cfg = ProbeConfig::iid(100, 0.1, 1, 11).unwrap();
        let draws = 100_000usize;
        let mut nonzeros = 0usize;
        for sid in 0..draws {
            nonzeros += draw_probe(&cfg, sid as u64).nnz();
        }
        let fraction = nonzeros as f64 / (draws * 100) as f64;
        // 3 binomial sigmas around p = 0.1.
        let sigma = (0.1 * 0.9 / (draws as f64 * 100.0)).sqrt();
        assert!(
            (fraction - 0.1).abs() <= 3.0 * sigma.max(0.001),
            "fraction {fraction}"
        );
    }

    #[test]
    fn second_moment_is_identity() {
        // E[r r^T] = I: diagonal near 1, off-diagonal near 0.
        let n = 20;
        let cfg = ProbeConfig::iid(n, 0.25, 1, 23).unwrap();
        let draws = 100_000usize;
        let mut moment = vec![0.0f64; n * n];
        for sid in 0..draws {
            let r = draw_probe(&cfg, sid as u64);
            for (&i, &si) in r.indices.iter().zip(&r.signs) {
                let vi = si * r.scale;
                for (&j, &sj) in r.indices.iter().zip(&r.signs) {
                    moment[i * n + j] += vi * sj * r.scale;
                }
            }
        }
        for v in moment.iter_mut() {
            *v /= draws as f64;
        }
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (moment[i * n + j] - expect).abs() < 0.05,
                    "moment[{i},{j}] = {}",
                    moment[i * n + j]
                );
            }
        }
    }

    #[test]
    fn partition_mode_covers_every_index_each_epoch() {
        let n = 60;
        let l = 12;
        let cfg = ProbeConfig::from_batch(n, l, 1, 3, ProbeMode::ShuffledPartition).unwrap();
        let batches = n / l;
        let mut seen = vec![false; n];
        for sid in 0..batches {
            for &i in &draw_probe(&cfg, sid as u64).indices {
                assert!(!seen[i], "index {i} repeated within epoch");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn probe_product_zero_w() {
        let ds = gen_blobs(2, 8, 2, 0.3, 1);
        let p = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let cfg = ProbeConfig::iid(ds.n(), 0.5, 1, 2).unwrap();
        let r = draw_probe(&cfg, 0);
        let out = probe_product(&p, &r, &DenseMatrix::zeros(ds.n(), 2));
        assert_eq!(out.frobenius_norm(), 0.0);
    }

    #[test]
    fn probe_product_single_column_selection() {
        // A probe with one nonzero at j selects scale^2 * L_col_j * W_row_j.
        let ds = gen_blobs(2, 6, 2, 0.3, 5);
        let p = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let n = ds.n();
        let mut rng = crate::rng::StreamRng::from_key(9, &[]);
        let w = DenseMatrix::gaussian(n, 2, &mut rng);
        let j = 4;
        let probe = SparseProbe {
            indices: vec![j],
            signs: vec![1.0],
            scale: 3.0,
        };
        let out = probe_product(&p, &probe, &w);
        let col = p.columns(&[j]);
        for c in 0..2 {
            for i in 0..n {
                let expect = 9.0 * col.get(i, 0) * w.get(j, c);
                assert!((out.get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probe_product_matches_dense_evaluation() {
        let ds = gen_blobs(2, 10, 2, 0.25, 8);
        let p = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let n = ds.n();
        let l = p.to_dense();
        let mut rng = crate::rng::StreamRng::from_key(4, &[]);
        let w = DenseMatrix::gaussian(n, 3, &mut rng);
        let cfg = ProbeConfig::iid(n, 0.4, 1, 6).unwrap();
        for sid in 0..5 {
            let r = draw_probe(&cfg, sid);
            let fast = probe_product(&p, &r, &w);
            // Dense route: L * (r (r^T W)).
            let dense_r = DenseMatrix::from_fn(n, 1, |i, _| r.to_dense(n)[i]);
            let rt_w = dense_r.t_matmul(&w);
            let rrt_w = dense_r.matmul(&rt_w);
            let slow = l.matmul(&rrt_w);
            assert!(fast.sub(&slow).frobenius_norm() < 1e-10);
        }
    }

    #[test]
    fn mean_probe_product_approaches_full_matvec() {
        let ds = gen_blobs(2, 5, 2, 0.3, 13);
        let p = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0)).unwrap();
        let n = ds.n();
        let mut rng = crate::rng::StreamRng::from_key(31, &[]);
        let w = DenseMatrix::gaussian(n, 2, &mut rng);
        let exact = p.full_matvec(&w);
        let cfg = ProbeConfig::iid(n, 0.5, 1, 77).unwrap();
        let draws = 20_000usize;
        let mut mean = DenseMatrix::zeros(n, 2);
        for sid in 0..draws {
            mean.axpy(
                1.0 / draws as f64,
                &probe_product(&p, &draw_probe(&cfg, sid as u64), &w),
            );
        }
        let err = mean.sub(&exact).frobenius_norm() / exact.frobenius_norm();
        assert!(err < 0.05, "relative error {err}");
    }

    #[test]
    fn invalid_p_rejected() {
        assert!(ProbeConfig::iid(10, 0.0, 1, 1).is_err());
        assert!(ProbeConfig::iid(10, 1.5, 1, 1).is_err());
        assert!(ProbeConfig::from_batch(10, 0, 1, 1, ProbeMode::Iid).is_err());
        assert!(ProbeConfig::from_batch(10, 11, 1, 1, ProbeMode::Iid).is_err());
    }
}
