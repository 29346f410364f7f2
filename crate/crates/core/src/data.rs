//! Dataset ingestion and synthetic generators.
//!
//! LibSVM sparse text is the on-disk format (`<label> <index>:<value> ...`,
//! 1-based strictly increasing indices). The generators produce desk-scale
//! datasets with known cluster structure; both are pure functions of their
//! parameters and seed. A small registry carries per-dataset RBF bandwidths
//! for the standard benchmark sets.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{tag, StreamRng};

/// A point cloud with optional ground-truth labels.
///
/// Labels are kept exactly as parsed or generated; [`Dataset::class_ids`]
/// maps them to contiguous ids by first appearance when a pipeline needs
/// integer classes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// n-by-d feature matrix, one row per sample.
    pub points: DenseMatrix,
    /// Raw label values as they appeared in the source, if any.
    pub labels: Option<Vec<f64>>,
    /// Suggested RBF bandwidth, if known for this dataset.
    pub sigma_hint: Option<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Ground-truth class ids, labels mapped to 0..c by first appearance.
    pub fn class_ids(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut seen: Vec<f64> = Vec::new();
        let ids = labels
            .iter()
            .map(|&v| {
                if let Some(pos) = seen.iter().position(|&s| s == v) {
                    pos
                } else {
                    seen.push(v);
                    seen.len() - 1
                }
            })
            .collect();
        Some(ids)
    }

    /// Euclidean distance between samples i and j, summed in feature order.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for t in 0..d {
            let diff = self.points.get(i, t) - self.points.get(j, t);
            acc += diff * diff;
        }
        acc.sqrt()
    }
}

/// Parses LibSVM sparse text into a dense dataset.
///
/// Feature dimension is the largest index seen; omitted indices are zero.
/// Malformed tokens and non-increasing indices are reported with their line
/// number.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut labels: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label `{label_tok}` is not a number"),
        })?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut prev_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("feature `{tok}` is not index:value"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("index `{idx_str}` is not a positive integer"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "indices are 1-based; found 0".into(),
                });
            }
            let val: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("value `{val_str}` is not a number"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("value `{val_str}` is not finite"),
                });
            }
            if idx <= prev_index {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("index {idx} not strictly increasing after {prev_index}"),
                });
            }
            prev_index = idx;
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        labels.push(label);
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let n = rows.len();
    let mut points = DenseMatrix::zeros(n, max_index);
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            points.set(i, j, v);
        }
    }
    Ok(Dataset {
        name: "libsvm".into(),
        points,
        labels: Some(labels),
        sigma_hint: None,
    })
}

/// Writes a dataset back to LibSVM text. Zero features are omitted; values
/// use shortest round-trippable formatting, so parse(serialize(ds)) is the
/// identity for finite data.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    let n = ds.n();
    let d = ds.dim();
    for i in 0..n {
        let label = ds.labels.as_ref().map_or(0.0, |l| l[i]);
        out.push_str(&format_f64(label));
        for j in 0..d {
            let v = ds.points.get(i, j);
            if v != 0.0 {
                out.push(' ');
                out.push_str(&format!("{}:{}", j + 1, format_f64(v)));
            }
        }
        out.push('\n');
    }
    out
}

fn format_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:.17e}");
    }
    s
}

/// k isotropic Gaussian clusters in d dimensions with centers spaced far
/// apart relative to the cluster spread; labels are cluster indices.
pub fn gen_blobs(k: usize, per_cluster: usize, d: usize, spread: f64, seed: u64) -> Dataset {
    assert!(k > 0 && per_cluster > 0 && d > 0, "counts must be positive");
    assert!(spread > 0.0, "spread must be positive");
    let n = k * per_cluster;
    let mut points = DenseMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);

    // Centers on a circle in the first two coordinates; the radius keeps
    // every pair of centers at least 10 spreads apart.
    let radius = 10.0 * spread * k as f64;
    let mut rng = StreamRng::from_key(seed, &[tag::BLOBS]);
    for c in 0..k {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
        let mut center = vec![0.0; d];
        center[0] = radius * angle.cos();
        if d > 1 {
            center[1] = radius * angle.sin();
        }
        for p in 0..per_cluster {
            let i = c * per_cluster + p;
            for (t, &c) in center.iter().enumerate() {
                points.set(i, t, c + spread * rng.next_gaussian());
            }
            labels.push(c as f64);
        }
    }
    Dataset {
        name: format!("blobs-k{k}-per{per_cluster}-d{d}"),
        points,
        labels: Some(labels),
        sigma_hint: None,
    }
}

/// Concentric noisy circles in 2D; labels are ring indices. `n` points are
/// split as evenly as possible across the rings.
pub fn gen_circles(n: usize, radii: &[f64], noise: f64, seed: u64) -> Dataset {
    assert!(n > 0 && !radii.is_empty(), "counts must be positive");
    assert!(
        radii.windows(2).all(|w| w[0] < w[1]),
        "radii must be strictly increasing"
    );
    if radii.len() > 1 {
        let min_gap = radii
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        assert!(
            noise < min_gap / 2.0,
            "noise must be below half the radial gap"
        );
    }
    let rings = radii.len();
    let mut points = DenseMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    let mut rng = StreamRng::from_key(seed, &[tag::CIRCLES]);
    for i in 0..n {
        let ring = i % rings;
        let r = radii[ring];
        let angle = 2.0 * std::f64::consts::PI * rng.next_f64();
        let (dx, dy) = if noise > 0.0 {
            let (a, b) = rng.next_gaussian_pair();
            (noise * a, noise * b)
        } else {
            (0.0, 0.0)
        };
        points.set(i, 0, r * angle.cos() + dx);
        points.set(i, 1, r * angle.sin() + dy);
        labels.push(ring as f64);
    }
    Dataset {
        name: format!("circles-n{n}-r{rings}"),
        points,
        labels: Some(labels),
        sigma_hint: None,
    }
}

/// Median pairwise Euclidean distance over a seeded subsample of
/// `min(sample, n)` points. The usual quick bandwidth heuristic.
pub fn median_sigma(ds: &Dataset, sample: usize, seed: u64) -> Result<f64> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::ContractViolation(
            "median_sigma needs at least two points".into(),
        ));
    }
    let take = sample.max(2).min(n);
    let mut rng = StreamRng::from_key(seed, &[tag::SUBSAMPLE]);
    let idx = rng.sample_indices(n, take);
    let mut dists = Vec::with_capacity(take * (take - 1) / 2);
    for a in 0..take {
        for b in (a + 1)..take {
            dists.push(ds.distance(idx[a], idx[b]));
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::ZeroDistance);
    }
    Ok(median)
}

/// Metadata for the standard benchmark datasets: sample count, feature
/// count, class count, and the RBF bandwidth conventionally used with them.
/// Files themselves are always user-supplied paths.
#[derive(Debug, Clone, Copy)]
pub struct DatasetInfo {
    pub name: &'static str,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub sigma: f64,
}

pub const DATASET_REGISTRY: &[DatasetInfo] = &[
    DatasetInfo {
        name: "pendigits",
        n: 10992,
        dim: 16,
        classes: 10,
        sigma: 223.61,
    },
    DatasetInfo {
        name: "shuttle",
        n: 58000,
        dim: 9,
        classes: 7,
        sigma: 0.45,
    },
    DatasetInfo {
        name: "mnist",
        n: 60000,
        dim: 780,
        classes: 10,
        sigma: 4.08,
    },
    DatasetInfo {
        name: "covtype-1",
        n: 100000,
        dim: 54,
        classes: 5,
        sigma: 1.15,
    },
    DatasetInfo {
        name: "covtype-2",
        n: 581012,
        dim: 54,
        classes: 7,
        sigma: 1.15,
    },
];

pub fn registry_lookup(name: &str) -> Option<&'static DatasetInfo> {
    DATASET_REGISTRY
        .iter()
        .find(|d| d.name.eq_ignore_ascii_case(name))
}
