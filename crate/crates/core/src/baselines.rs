//! Exact, power-method, and Nystrom baselines.
//!
//! All three produce an n-by-k orthonormal embedding comparable with the
//! optimizer's output. FLOP counts follow the standard closed forms in
//! [`crate::metrics`] so methods can be compared on equal footing.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{AffinityConfig, LaplacianProvider};
use crate::linalg::{qr_orthonormal_factor, svd_tall, sym_eig_topk, DenseMatrix};
use crate::metrics::{
    nystrom_flops, power_init_flops, power_round_flops, power_svd_flops, qr_flops,
};
use crate::rng::{tag, StreamRng};

/// Default size guard for the dense eigendecomposition.
pub const EXACT_GUARD_DEFAULT: usize = 5000;

/// Relative cutoff below which a landmark eigenvalue counts as degenerate.
const LANDMARK_EIG_TOL: f64 = 1e-10;

/// Top-k eigenvectors by dense symmetric eigendecomposition.
///
/// Refuses to run above `guard` samples: the cost grows as n^3.
pub fn exact_topk(p: &LaplacianProvider, k: usize, guard: usize) -> Result<DenseMatrix> {
    let n = p.n();
    if n > guard {
        return Err(Error::GuardExceeded { n, guard });
    }
    let l = p.to_dense();
    let (_, vectors) = sym_eig_topk(&l, k)?;
    Ok(vectors)
}

#[derive(Debug, Clone, Copy)]
pub struct PowerParams {
    pub k: usize,
    /// Multiplication rounds.
    pub q: usize,
    pub seed: u64,
}

/// FLOP breakdown of one power-method run. The headline total matches the
/// usual accounting (Gaussian init + multiplications + final SVD); the QR
/// re-orthonormalizations inserted between rounds for numerical sanity are
/// tallied separately.
#[derive(Debug, Clone, Copy)]
pub struct PowerFlops {
    pub init: u64,
    pub multiply: u64,
    pub svd: u64,
    pub reorth: u64,
}

impl PowerFlops {
    pub fn headline(&self) -> u64 {
        self.init + self.multiply + self.svd
    }
}

/// Power (subspace) iteration: start from a Gaussian n-by-k block, multiply
/// by L for `q` rounds with QR re-orthonormalization in between, then take
/// the left factor of the final SVD.
pub fn power_topk(
    p: &LaplacianProvider,
    params: &PowerParams,
) -> Result<(DenseMatrix, PowerFlops)> {
    power_core(p.n(), |s| p.full_matvec(s), params)
}

/// Same iteration over an explicit symmetric matrix.
pub fn power_topk_matrix(
    l: &DenseMatrix,
    params: &PowerParams,
) -> Result<(DenseMatrix, PowerFlops)> {
    assert_eq!(l.rows(), l.cols(), "power iteration needs a square matrix");
    power_core(l.rows(), |s| l.matmul(s), params)
}

fn power_core(
    n: usize,
    matvec: impl Fn(&DenseMatrix) -> DenseMatrix,
    params: &PowerParams,
) -> Result<(DenseMatrix, PowerFlops)> {
    let k = params.k;
    assert!(params.q >= 1, "at least one multiplication round");
    assert!(k <= n, "k must not exceed n");

    let mut rng = StreamRng::from_key(params.seed, &[tag::POWER_INIT]);
    let mut s = DenseMatrix::gaussian(n, k, &mut rng);
    let mut flops = PowerFlops {
        init: power_init_flops(n, k),
        multiply: 0,
        svd: 0,
        reorth: 0,
    };

    for round in 0..params.q {
        s = matvec(&s);
        flops.multiply += power_round_flops(n, k);
        if round + 1 < params.q {
            s = qr_orthonormal_factor(&s).map_err(|e| Error::StepFailure {
                reason: format!("power-iterate collapsed: {e}"),
            })?;
            flops.reorth += qr_flops(n, k);
        }
    }

    let (u, _, _) = svd_tall(&s)?;
    flops.svd += power_svd_flops(n, k);
    Ok((u, flops))
}

#[derive(Debug, Clone, Copy)]
pub struct NystromParams {
    /// Landmark (inducing) sample count.
    pub m: usize,
    pub k: usize,
    pub seed: u64,
}

/// Nystrom spectral embedding from `m` uniformly sampled landmarks.
///
/// The landmark-landmark affinity block is eigendecomposed after degree
/// normalization, the eigenvectors are extended to all points through the
/// cross block (`v_rest = B^T u / lambda`), and the extended block is
/// orthonormalized. Degrees of non-landmark points use the standard
/// completion through the landmark block. FLOPs are reported by the closed
/// form in [`nystrom_flops`].
pub fn nystrom_embed(
    ds: &Dataset,
    cfg: &AffinityConfig,
    params: &NystromParams,
) -> Result<(DenseMatrix, u64)> {
    let n = ds.n();
    let m = params.m;
    let k = params.k;
    if k > m || m > n {
        return Err(Error::InvalidConfig(format!(
            "need k <= m <= n, got k = {k}, m = {m}, n = {n}"
        )));
    }

    // Landmark selection: uniform without replacement.
    let mut rng = StreamRng::from_key(params.seed, &[tag::LANDMARKS]);
    let landmarks = rng.sample_indices(n, m);
    let mut is_landmark = vec![false; n];
    for &i in &landmarks {
        is_landmark[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !is_landmark[i]).collect();
    let r = rest.len();

    let affinity = |i: usize, j: usize| -> f64 {
        if i == j {
            0.0
        } else {
            let dist = ds.distance(i, j);
            let arg = match cfg.exponent_mode {
                crate::graph::ExponentMode::Distance => dist,
                crate::graph::ExponentMode::SquaredDistance => dist * dist,
            };
            (-arg / (cfg.sigma * cfg.sigma)).exp()
        }
    };

    // Observed affinity blocks.
    let a_block = DenseMatrix::from_fn(m, m, |x, y| affinity(landmarks[x], landmarks[y]));
    let b_block = DenseMatrix::from_fn(m, r, |x, y| affinity(landmarks[x], rest[y]));

    // Landmark degrees are exact over the observed row; non-landmark degrees
    // complete the unobserved block as B^T A^{-1} B.
    let ones_m = DenseMatrix::from_fn(m, 1, |_, _| 1.0);
    let ones_r = DenseMatrix::from_fn(r, 1, |_, _| 1.0);
    let mut d_landmark = a_block.matmul(&ones_m);
    if r > 0 {
        d_landmark.axpy(1.0, &b_block.matmul(&ones_r));
    }

    let d_rest = if r > 0 {
        let mut d = b_block.t_matmul(&ones_m);
        let b_ones = b_block.matmul(&ones_r);
        let a_inv_b_ones = pinv_apply(&a_block, &b_ones)?;
        d.axpy(1.0, &b_block.t_matmul(&a_inv_b_ones));
        d
    } else {
        DenseMatrix::zeros(0, 1)
    };

    let mut degree = vec![0.0f64; n];
    for (x, &i) in landmarks.iter().enumerate() {
        degree[i] = d_landmark.get(x, 0);
    }
    for (y, &j) in rest.iter().enumerate() {
        degree[j] = d_rest.get(y, 0);
    }
    for (i, &d) in degree.iter().enumerate() {
        if !(d.is_finite() && d > crate::graph::ISOLATED_DEGREE_TOL) {
            return Err(Error::IsolatedVertex {
                index: i,
                degree: d,
            });
        }
    }
    let isd: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

    // Normalize observed blocks by the estimated degrees.
    let a_norm = DenseMatrix::from_fn(m, m, |x, y| {
        a_block.get(x, y) * isd[landmarks[x]] * isd[landmarks[y]]
    });
    let b_norm = DenseMatrix::from_fn(m, r, |x, y| {
        b_block.get(x, y) * isd[landmarks[x]] * isd[rest[y]]
    });

    // Landmark eigenbasis, extended through the cross block.
    let (vals, vecs) = sym_eig_topk(&a_norm, m)?;
    let max_abs = (0..m).fold(0.0f64, |acc, i| acc.max(vals.get(i).abs()));
    let threshold = LANDMARK_EIG_TOL * max_abs.max(f64::MIN_POSITIVE);
    for i in 0..k {
        let v = vals.get(i);
        if v.abs() <= threshold {
            return Err(Error::DegenerateLandmark {
                value: v,
                threshold,
            });
        }
    }

    let mut extended = DenseMatrix::zeros(n, k);
    for c in 0..k {
        let inv_lambda = 1.0 / vals.get(c);
        // Landmark rows: A_norm u / lambda = u.
        for (x, &i) in landmarks.iter().enumerate() {
            extended.set(i, c, vecs.get(x, c));
        }
        // Remaining rows:  (B^T u) / lambda.
        for (y, &j) in rest.iter().enumerate() {
            let mut acc = 0.0;
            for x in 0..m {
                acc += b_norm.get(x, y) * vecs.get(x, c);
            }
            extended.set(j, c, acc * inv_lambda);
        }
    }

    let q = qr_orthonormal_factor(&extended).map_err(|_| Error::DegenerateLandmark {
        value: 0.0,
        threshold,
    })?;
    Ok((q, nystrom_flops(n, k, m)))
}

/// Applies the pseudo-inverse of a symmetric matrix through its
/// eigendecomposition, dropping near-null directions.
fn pinv_apply(sym: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let m = sym.rows();
    let (vals, vecs) = sym_eig_topk(sym, m)?;
    let max_abs = (0..m).fold(0.0f64, |acc, i| acc.max(vals.get(i).abs()));
    let cutoff = 1e-12 * max_abs.max(f64::MIN_POSITIVE);
    let vt_rhs = vecs.t_matmul(rhs);
    let mut scaled = vt_rhs.clone();
    for i in 0..m {
        let v = vals.get(i);
        let inv = if v.abs() > cutoff { 1.0 / v } else { 0.0 };
        for c in 0..scaled.cols() {
            scaled.set(i, c, vt_rhs.get(i, c) * inv);
        }
    }
    Ok(vecs.matmul(&scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::kmeans::{kmeans, KmeansParams};
    use crate::linalg::subspace_distance;
    use crate::metrics::nmi;

    fn provider(ds: &Dataset) -> LaplacianProvider {
        LaplacianProvider::build_materialized(ds, AffinityConfig::new(1.0)).unwrap()
    }

    #[test]
    fn exact_two_point_graph() {
        let ds = Dataset {
            name: "two".into(),
            points: DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]),
            labels: None,
            sigma_hint: None,
        };
        let p = provider(&ds);
        let w = exact_topk(&p, 1, EXACT_GUARD_DEFAULT).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((w.get(0, 0).abs() - inv_sqrt2).abs() < 1e-10);
        assert!((w.get(1, 0).abs() - inv_sqrt2).abs() < 1e-10);
        assert!(w.get(0, 0) * w.get(1, 0) > 0.0);
    }

    #[test]
    fn exact_three_equidistant_top_vector_is_uniform() {
        let h = 3.0f64.sqrt() / 2.0;
        let ds = Dataset {
            name: "tri".into(),
            points: DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]),
            labels: None,
            sigma_hint: None,
        };
        let p = provider(&ds);
        let w = exact_topk(&p, 1, EXACT_GUARD_DEFAULT).unwrap();
        let u = 1.0 / 3.0f64.sqrt();
        for i in 0..3 {
            assert!((w.get(i, 0).abs() - u).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_guard_refuses_large_n() {
        let ds = gen_blobs(2, 6, 2, 0.3, 1);
        let p = provider(&ds);
        match exact_topk(&p, 2, 5) {
            Err(Error::GuardExceeded { n: 12, guard: 5 }) => {}
            other => panic!("expected guard refusal, got {other:?}"),
        }
    }

    #[test]
    fn power_on_diagonal_matrix_finds_dominant_axis() {
        let l = DenseMatrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let (u, _) = power_topk_matrix(
            &l,
            &PowerParams {
                k: 1,
                q: 30,
                seed: 3,
            },
        )
        .unwrap();
        assert!((u.get(0, 0).abs() - 1.0).abs() < 1e-10);
        assert!(u.get(1, 0).abs() < 1e-8);
        assert!(u.get(2, 0).abs() < 1e-8);
    }

    #[test]
    fn power_agrees_with_exact_on_clustered_graph() {
        let ds = gen_blobs(4, 10, 2, 0.15, 7);
        let p = provider(&ds);
        let exact = exact_topk(&p, 4, EXACT_GUARD_DEFAULT).unwrap();
        let (u, _) = power_topk(
            &p,
            &PowerParams {
                k: 4,
                q: 50,
                seed: 5,
            },
        )
        .unwrap();
        let dist = subspace_distance(&u, &exact).unwrap();
        assert!(dist < 1e-6, "subspace distance {dist}");
    }

    #[test]
    fn power_subspace_distance_shrinks_with_rounds() {
        let ds = gen_blobs(3, 10, 2, 0.2, 9);
        let p = provider(&ds);
        let exact = exact_topk(&p, 3, EXACT_GUARD_DEFAULT).unwrap();
        let mut last = f64::INFINITY;
        for q in [1, 2, 5, 10, 50] {
            let (u, _) = power_topk(&p, &PowerParams { k: 3, q, seed: 2 }).unwrap();
            let dist = subspace_distance(&u, &exact).unwrap();
            assert!(
                dist <= last + 1e-9,
                "distance rose from {last} to {dist} at q = {q}"
            );
            last = dist;
        }
        assert!(last < 1e-6, "final distance {last}");
    }

    #[test]
    fn power_flop_breakdown() {
        let ds = gen_blobs(2, 7, 2, 0.3, 4);
        let p = provider(&ds);
        let n = p.n();
        let (_, flops) = power_topk(
            &p,
            &PowerParams {
                k: 3,
                q: 2,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(flops.multiply, 2 * power_round_flops(n, 3));
        assert_eq!(flops.svd, power_svd_flops(n, 3));
        assert_eq!(flops.init, power_init_flops(n, 3));
        assert_eq!(flops.reorth, qr_flops(n, 3));
        assert_eq!(
            flops.headline(),
            power_init_flops(n, 3) + 2 * power_round_flops(n, 3) + power_svd_flops(n, 3)
        );
    }

    #[test]
    fn nystrom_two_points_full_sampling_is_exact() {
        let ds = Dataset {
            name: "two".into(),
            points: DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]),
            labels: None,
            sigma_hint: None,
        };
        let cfg = AffinityConfig::new(1.0);
        let (w, _) = nystrom_embed(
            &ds,
            &cfg,
            &NystromParams {
                m: 2,
                k: 1,
                seed: 1,
            },
        )
        .unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((w.get(0, 0).abs() - inv_sqrt2).abs() < 1e-10);
        assert!((w.get(1, 0).abs() - inv_sqrt2).abs() < 1e-10);
    }

    #[test]
    fn nystrom_full_sampling_matches_exact_pipeline() {
        let ds = gen_blobs(3, 10, 2, 0.15, 21);
        let cfg = AffinityConfig::new(1.0);
        let p = LaplacianProvider::build_materialized(&ds, cfg).unwrap();
        let truth = ds.class_ids().unwrap();

        let exact = exact_topk(&p, 3, EXACT_GUARD_DEFAULT).unwrap();
        let (exact_labels, _) = kmeans(&exact, &KmeansParams::new(3, 5)).unwrap();
        let exact_nmi = nmi(&exact_labels, &truth).unwrap();

        let (w, _) = nystrom_embed(
            &ds,
            &cfg,
            &NystromParams {
                m: ds.n(),
                k: 3,
                seed: 9,
            },
        )
        .unwrap();
        let (labels, _) = kmeans(&w, &KmeansParams::new(3, 5)).unwrap();
        let approx_nmi = nmi(&labels, &truth).unwrap();
        assert!(
            (approx_nmi - exact_nmi).abs() <= 0.02,
            "nmi gap {} vs {}",
            approx_nmi,
            exact_nmi
        );
        // Full sampling reproduces the exact eigenspace too.
        let dist = subspace_distance(&w, &exact).unwrap();
        assert!(dist < 1e-8, "subspace distance {dist}");
    }

    #[test]
    fn nystrom_flop_counter_matches_closed_form() {
        let ds = gen_blobs(2, 20, 2, 0.2, 30);
        let cfg = AffinityConfig::new(1.0);
        let (_, flops) = nystrom_embed(
            &ds,
            &cfg,
            &NystromParams {
                m: 10,
                k: 2,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(flops, nystrom_flops(40, 2, 10));
    }

    #[test]
    fn nystrom_rejects_bad_counts() {
        let ds = gen_blobs(2, 5, 2, 0.3, 2);
        let cfg = AffinityConfig::new(1.0);
        assert!(nystrom_embed(
            &ds,
            &cfg,
            &NystromParams {
                m: 3,
                k: 4,
                seed: 1
            }
        )
        .is_err());
        assert!(nystrom_embed(
            &ds,
            &cfg,
            &NystromParams {
                m: 11,
                k: 2,
                seed: 1
            }
        )
        .is_err());
    }
}
