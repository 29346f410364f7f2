//! k-means on the spectral embedding.
//!
//! k-means++ seeding, Lloyd iterations to an assignment fixed point, best of
//! several restarts by inertia. Fully deterministic for a fixed seed; ties
//! between restarts break toward the earlier restart index.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{tag, StreamRng};

#[derive(Debug, Clone, Copy)]
pub struct KmeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_lloyd_iters: usize,
    pub seed: u64,
    /// Scale every row to unit norm before clustering (zero rows are left
    /// alone). Off by default.
    pub row_normalize: bool,
}

impl KmeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansParams {
            k,
            restarts: 10,
            max_lloyd_iters: 300,
            seed,
            row_normalize: false,
        }
    }
}

/// Cluster labels plus the within-cluster sum of squared distances.
pub fn kmeans(points: &DenseMatrix, params: &KmeansParams) -> Result<(Vec<usize>, f64)> {
    let n = points.rows();
    let d = points.cols();
    let k = params.k;
    if k == 0 || params.restarts == 0 {
        return Err(Error::InvalidConfig(
            "k and restarts must be positive".into(),
        ));
    }
    if n < k {
        return Err(Error::ContractViolation(format!(
            "cannot split {n} points into {k} clusters"
        )));
    }

    // Row-major copy of the (optionally row-normalized) points.
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|j| points.get(i, j)).collect())
        .collect();
    if params.row_normalize {
        for row in rows.iter_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }

    let distinct = count_distinct(&rows);
    if distinct < k {
        return Err(Error::DuplicateCentroids { k });
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..params.restarts {
        let mut rng = StreamRng::from_key(params.seed, &[tag::KMEANS, restart as u64]);
        let (labels, inertia) = lloyd(&rows, k, params.max_lloyd_iters, &mut rng);
        let better = match &best {
            None => true,
            Some((_, best_inertia)) => inertia < *best_inertia,
        };
        if better {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("at least one restart ran"))
}

fn count_distinct(rows: &[Vec<f64>]) -> usize {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for row in rows {
        if !distinct.contains(&row) {
            distinct.push(row);
        }
    }
    distinct.len()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++ seeding: first centroid uniform, the rest D^2-weighted.
fn seed_centroids(rows: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.next_below(n as u64) as usize].clone());
    let mut dist_sq: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist_sq.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass at existing centroids; fall back to uniform.
            rng.next_below(n as u64) as usize
        };
        centroids.push(rows[next].clone());
        for (i, row) in rows.iter().enumerate() {
            let d = sq_dist(row, centroids.last().expect("just pushed"));
            if d < dist_sq[i] {
                dist_sq[i] = d;
            }
        }
    }
    centroids
}

fn lloyd(rows: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut StreamRng) -> (Vec<usize>, f64) {
    let n = rows.len();
    let d = rows[0].len();
    let mut centroids = seed_centroids(rows, k, rng);
    let mut labels = vec![0usize; n];

    for _ in 0..max_iters {
        // Assign.
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let mut best_c = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_dist(row, centroid);
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }

        // Update.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in rows.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (slot, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *slot = s / counts[c] as f64;
                }
            } else {
                // Empty cluster: reseed at the point farthest from its own
                // centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&rows[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(&rows[b], &centroids[labels[b]]))
                    })
                    .expect("nonempty rows");
                centroids[c] = rows[far].clone();
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }

    let inertia = rows
        .iter()
        .zip(&labels)
        .map(|(row, &c)| sq_dist(row, &centroids[c]))
        .sum();
    (labels, inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_orthonormal_factor;
    use crate::metrics::nmi;
    use crate::rng::StreamRng;

    #[test]
    fn splits_two_separated_1d_groups() {
        let pts = DenseMatrix::from_rows(&[vec![0.0], vec![0.1], vec![10.0], vec![10.1]]);
        let (labels, inertia) = kmeans(&pts, &KmeansParams::new(2, 1)).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
        assert!((inertia - 0.01).abs() < 1e-12, "inertia {inertia}");
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]);
        let (labels, inertia) = kmeans(&pts, &KmeansParams::new(3, 3)).unwrap();
        assert_eq!(inertia, 0.0);
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
    }

    #[test]
    fn too_few_distinct_points_is_an_error() {
        let pts = DenseMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]);
        assert!(matches!(
            kmeans(&pts, &KmeansParams::new(2, 1)),
            Err(Error::DuplicateCentroids { k: 2 })
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = crate::data::gen_blobs(3, 40, 2, 0.2, 6);
        let (a, ia) = kmeans(&ds.points, &KmeansParams::new(3, 9)).unwrap();
        let (b, ib) = kmeans(&ds.points, &KmeansParams::new(3, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ia, ib);
    }

    #[test]
    fn recovers_blobs_against_ground_truth() {
        let ds = crate::data::gen_blobs(3, 60, 2, 0.1, 12);
        let (labels, _) = kmeans(&ds.points, &KmeansParams::new(3, 2)).unwrap();
        let truth = ds.class_ids().unwrap();
        let score = nmi(&labels, &truth).unwrap();
        assert!(score >= 0.98, "nmi {score}");
    }

    #[test]
    fn labels_invariant_under_rotation() {
        // Pairwise geometry is rotation-invariant, so a fixed seed gives the
        // same partition before and after an orthogonal map.
        let ds = crate::data::gen_blobs(3, 30, 2, 0.15, 20);
        let mut rng = StreamRng::from_key(31, &[]);
        let rot = qr_orthonormal_factor(&DenseMatrix::gaussian(2, 2, &mut rng)).unwrap();
        let rotated = ds.points.matmul(&rot);
        let params = KmeansParams::new(3, 5);
        let (labels, _) = kmeans(&ds.points, &params).unwrap();
        let (labels_rot, _) = kmeans(&rotated, &params).unwrap();
        assert_eq!(nmi(&labels, &labels_rot).unwrap(), 1.0);
    }

    #[test]
    fn row_normalize_scales_rows() {
        // Two directions, different magnitudes; normalized they collapse to
        // two tight angular groups.
        let pts = DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![100.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 50.0],
        ]);
        let mut params = KmeansParams::new(2, 4);
        params.row_normalize = true;
        let (labels, inertia) = kmeans(&pts, &params).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert!(inertia < 1e-20);
    }

    #[test]
    fn inertia_nonincreasing_across_lloyd_iterations() {
        // Re-run Lloyd with increasing iteration caps; inertia must not rise.
        let ds = crate::data::gen_blobs(4, 25, 3, 0.4, 33);
        let rows: Vec<Vec<f64>> = (0..ds.n())
            .map(|i| (0..3).map(|j| ds.points.get(i, j)).collect())
            .collect();
        let mut prev = f64::INFINITY;
        for iters in [1, 2, 4, 8, 32] {
            let mut rng = StreamRng::from_key(2, &[tag::KMEANS, 0]);
            let (_, inertia) = lloyd(&rows, 4, iters, &mut rng);
            assert!(
                inertia <= prev + 1e-9,
                "inertia rose from {prev} to {inertia} at cap {iters}"
            );
            prev = inertia;
        }
    }
}
