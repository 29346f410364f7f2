//! Affinity and normalized-Laplacian construction.
//!
//! The Laplacian is `L = D^{-1/2} A D^{-1/2}` with RBF affinities
//! `a_ij = exp(-dist(x_i, x_j) / sigma^2)` and `a_ii = 0`. Two backings
//! implement the same column-access contract:
//!
//! - materialized: the full n-by-n matrix is stored;
//! - streaming: one O(n)-memory pass precomputes the degree vector, then
//!   every requested column is recomputed from the points on demand.
//!
//! Both backings run the identical column kernel in the identical order, so
//! a streaming provider returns bit-for-bit the same columns, matvecs and
//! degrees as a materialized one over the same dataset.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Degree below this is treated as an isolated vertex.
pub const ISOLATED_DEGREE_TOL: f64 = 1e-300;
/// Columns per block in the streaming degree pass.
pub const DEGREE_PASS_BLOCK: usize = 4096;

const DEGREE_CACHE_MAGIC: &[u8; 8] = b"MBSCDEG1";

/// How the RBF exponent consumes the pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentMode {
    /// `exp(-||x_i - x_j|| / sigma^2)`.
    #[default]
    Distance,
    /// `exp(-||x_i - x_j||^2 / sigma^2)`, the conventional squared form.
    SquaredDistance,
}

impl ExponentMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(ExponentMode::Distance),
            "squared-distance" => Ok(ExponentMode::SquaredDistance),
            other => Err(Error::InvalidConfig(format!(
                "unknown exponent mode `{other}` (expected `distance` or `squared-distance`)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExponentMode::Distance => "distance",
            ExponentMode::SquaredDistance => "squared-distance",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AffinityConfig {
    pub sigma: f64,
    pub exponent_mode: ExponentMode,
}

impl AffinityConfig {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        AffinityConfig {
            sigma,
            exponent_mode: ExponentMode::Distance,
        }
    }

    pub fn with_mode(sigma: f64, exponent_mode: ExponentMode) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        AffinityConfig {
            sigma,
            exponent_mode,
        }
    }

    #[inline]
    fn affinity(&self, dist: f64) -> f64 {
        let arg = match self.exponent_mode {
            ExponentMode::Distance => dist,
            ExponentMode::SquaredDistance => dist * dist,
        };
        (-arg / (self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug)]
enum Backing {
    /// Full normalized Laplacian, column-major.
    Materialized(DenseMatrix),
    /// Points plus affinity parameters; columns recomputed on demand.
    Streaming { dataset: Dataset },
}

/// Column-access view of a normalized Laplacian.
#[derive(Debug)]
pub struct LaplacianProvider {
    n: usize,
    degree: Vec<f64>,
    inv_sqrt_degree: Vec<f64>,
    cfg: AffinityConfig,
    backing: Backing,
}

/// Affinity column j of the dataset into `out` (a_ii = 0 on the diagonal).
fn affinity_column(ds: &Dataset, cfg: &AffinityConfig, j: usize, out: &mut [f64]) {
    let n = ds.n();
    debug_assert_eq!(out.len(), n);
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if i == j {
            0.0
        } else {
            cfg.affinity(ds.distance(i, j))
        };
    }
}

/// One pass over all columns accumulating degrees; O(n) memory, blocked for
/// locality. Summation per entry runs in ascending row order so both
/// backings agree bitwise.
fn degree_pass(ds: &Dataset, cfg: &AffinityConfig) -> Result<Vec<f64>> {
    let n = ds.n();
    let mut degree = vec![0.0f64; n];
    let mut column = vec![0.0f64; n];
    let mut start = 0;
    while start < n {
        let end = (start + DEGREE_PASS_BLOCK).min(n);
        for (j, slot) in degree.iter_mut().enumerate().take(end).skip(start) {
            affinity_column(ds, cfg, j, &mut column);
            let mut acc = 0.0;
            for &v in column.iter() {
                acc += v;
            }
            *slot = acc;
        }
        start = end;
    }
    for (i, &d) in degree.iter().enumerate() {
        if !(d.is_finite() && d > ISOLATED_DEGREE_TOL) {
            return Err(Error::IsolatedVertex {
                index: i,
                degree: d,
            });
        }
    }
    Ok(degree)
}

impl LaplacianProvider {
    /// Builds the fully materialized provider; needs n^2 memory.
    pub fn build_materialized(ds: &Dataset, cfg: AffinityConfig) -> Result<Self> {
        let n = ds.n();
        if n < 2 {
            return Err(Error::ContractViolation(
                "laplacian needs at least two points".into(),
            ));
        }
        let degree = degree_pass(ds, &cfg)?;
        let inv_sqrt_degree: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

        let mut l = DenseMatrix::zeros(n, n);
        let mut column = vec![0.0f64; n];
        for j in 0..n {
            affinity_column(ds, &cfg, j, &mut column);
            let isd_j = inv_sqrt_degree[j];
            let out = l.col_mut(j);
            for i in 0..n {
                out[i] = column[i] * inv_sqrt_degree[i] * isd_j;
            }
        }
        Ok(LaplacianProvider {
            n,
            degree,
            inv_sqrt_degree,
            cfg,
            backing: Backing::Materialized(l),
        })
    }

    /// Builds the streaming provider: one O(n)-memory degree pass up front,
    /// columns recomputed on every query.
    pub fn build_streaming(ds: &Dataset, cfg: AffinityConfig) -> Result<Self> {
        let n = ds.n();
        if n < 2 {
            return Err(Error::ContractViolation(
                "laplacian needs at least two points".into(),
            ));
        }
        let degree = degree_pass(ds, &cfg)?;
        let inv_sqrt_degree: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        Ok(LaplacianProvider {
            n,
            degree,
            inv_sqrt_degree,
            cfg,
            backing: Backing::Streaming {
                dataset: ds.clone(),
            },
        })
    }

    /// Streaming provider with the degree pass skipped when `cache` holds a
    /// previously saved degree vector of the right length; computes and
    /// writes the cache otherwise.
    pub fn build_streaming_cached(ds: &Dataset, cfg: AffinityConfig, cache: &Path) -> Result<Self> {
        let n = ds.n();
        if n < 2 {
            return Err(Error::ContractViolation(
                "laplacian needs at least two points".into(),
            ));
        }
        let degree = match read_degree_cache(cache) {
            Ok(cached) if cached.len() == n => cached,
            Ok(cached) => {
                return Err(Error::CorruptCache(format!(
                    "cache holds {} degrees but dataset has {n} points",
                    cached.len()
                )))
            }
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                let degree = degree_pass(ds, &cfg)?;
                write_degree_cache(cache, &degree)?;
                degree
            }
            Err(e) => return Err(e),
        };
        for (i, &d) in degree.iter().enumerate() {
            if !(d.is_finite() && d > ISOLATED_DEGREE_TOL) {
                return Err(Error::IsolatedVertex {
                    index: i,
                    degree: d,
                });
            }
        }
        let inv_sqrt_degree: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        Ok(LaplacianProvider {
            n,
            degree,
            inv_sqrt_degree,
            cfg,
            backing: Backing::Streaming {
                dataset: ds.clone(),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn affinity_config(&self) -> &AffinityConfig {
        &self.cfg
    }

    pub fn is_streaming(&self) -> bool {
        matches!(self.backing, Backing::Streaming { .. })
    }

    /// Laplacian column j written into `out`.
    pub fn column_into(&self, j: usize, out: &mut [f64]) {
        assert!(j < self.n, "column index {j} out of range 0..{}", self.n);
        assert_eq!(out.len(), self.n);
        match &self.backing {
            Backing::Materialized(l) => out.copy_from_slice(l.col(j)),
            Backing::Streaming { dataset } => {
                affinity_column(dataset, &self.cfg, j, out);
                let isd_j = self.inv_sqrt_degree[j];
                for (i, v) in out.iter_mut().enumerate() {
                    *v = *v * self.inv_sqrt_degree[i] * isd_j;
                }
            }
        }
    }

    /// Columns of L at the requested indices, in request order.
    pub fn columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, idx.len());
        for (c, &j) in idx.iter().enumerate() {
            self.column_into(j, out.col_mut(c));
        }
        out
    }

    /// Exact product `L w`, accumulated column by column in ascending index
    /// order; O(n) extra memory on the streaming backing.
    pub fn full_matvec(&self, w: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            w.rows(),
            self.n,
            "matvec shape mismatch: L is {0}x{0}, w is {1}x{2}",
            self.n,
            w.rows(),
            w.cols()
        );
        let k = w.cols();
        let mut out = DenseMatrix::zeros(self.n, k);
        let mut column = vec![0.0f64; self.n];
        for j in 0..self.n {
            self.column_into(j, &mut column);
            for c in 0..k {
                let weight = w.get(j, c);
                if weight == 0.0 {
                    continue;
                }
                let out_col = out.col_mut(c);
                for i in 0..self.n {
                    out_col[i] += column[i] * weight;
                }
            }
        }
        out
    }

    /// The full materialized matrix; O(n^2). Handy for desk-scale baselines
    /// and diagnostics.
    pub fn to_dense(&self) -> DenseMatrix {
        let idx: Vec<usize> = (0..self.n).collect();
        self.columns(&idx)
    }
}

/// Writes the degree vector as `magic | n as u64 LE | n f64 LE`.
pub fn write_degree_cache(path: &Path, degree: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + degree.len() * 8);
    buf.extend_from_slice(DEGREE_CACHE_MAGIC);
    buf.extend_from_slice(&(degree.len() as u64).to_le_bytes());
    for &d in degree {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_degree_cache(path: &Path) -> Result<Vec<f64>> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != DEGREE_CACHE_MAGIC {
        return Err(Error::CorruptCache("bad magic or truncated header".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * n {
        return Err(Error::CorruptCache(format!(
            "expected {} bytes for {n} degrees, found {}",
            16 + 8 * n,
            bytes.len()
        )));
    }
    let mut degree = Vec::with_capacity(n);
    for chunk in bytes[16..].chunks_exact(8) {
        degree.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(degree)
}
