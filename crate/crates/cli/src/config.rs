//! Argument definitions, generator specs, and TOML config merging.
//!
//! Precedence: command-line flags, then the `--config` TOML file, then
//! built-in defaults. The default output directory can also come from the
//! `MBSC_OUT_DIR` environment variable.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use mbsc_core::data::{gen_blobs, gen_circles, median_sigma, parse_libsvm, Dataset};
use mbsc_core::graph::{AffinityConfig, ExponentMode};
use mbsc_core::probes::ProbeMode;
use mbsc_core::solver::MethodParams;

use crate::Failure;

pub const OUT_DIR_ENV: &str = "MBSC_OUT_DIR";

#[derive(Debug, Args, Clone, Default)]
pub struct ClusterArgs {
    /// LibSVM dataset path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic dataset spec, e.g. `blobs:k=3,per=100` or
    /// `circles:n=400,radii=1.0:3.0,noise=0.05`.
    #[arg(long)]
    pub gen: Option<String>,
    /// One of: mbsc, mbsc-e, exact, power, nystrom.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of clusters / eigenvectors.
    #[arg(long)]
    pub k: Option<usize>,
    /// RBF bandwidth, or `median` for the subsampled median heuristic.
    #[arg(long)]
    pub sigma: Option<String>,
    /// `distance` (default) or `squared-distance`.
    #[arg(long)]
    pub exponent_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repetitions with distinct derived seeds.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output directory (also settable via MBSC_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Landmark count (nystrom).
    #[arg(long)]
    pub m: Option<usize>,
    /// Multiplication rounds (power).
    #[arg(long)]
    pub q: Option<usize>,
    /// Columns per probe (optimizer).
    #[arg(long)]
    pub batch_l: Option<usize>,
    /// Probes per iteration (optimizer).
    #[arg(long)]
    pub n_r: Option<usize>,
    /// Probe sparsity, alternative to --batch-l.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub check_every: Option<usize>,
    /// `iid` (default) or `shuffled`.
    #[arg(long)]
    pub probe_mode: Option<String>,
    /// Disable the per-coordinate Adagrad scaling.
    #[arg(long)]
    pub plain_sgd: bool,
    /// Stop on the raw Frobenius difference instead of subspace distance.
    #[arg(long)]
    pub frobenius_stop: bool,
    /// Degree-vector cache path for mbsc-e.
    #[arg(long)]
    pub degree_cache: Option<PathBuf>,
    /// Size guard override for the exact baseline.
    #[arg(long)]
    pub exact_guard: Option<usize>,
    #[arg(long)]
    pub kmeans_restarts: Option<usize>,
    /// Normalize embedding rows before k-means.
    #[arg(long)]
    pub row_normalize: bool,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub cluster: Option<ClusterFileConfig>,
    pub bench: Option<BenchFileConfig>,
}

#[derive(Debug, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct ClusterFileConfig {
    pub data: Option<PathBuf>,
    pub gen: Option<String>,
    pub method: Option<String>,
    pub k: Option<usize>,
    pub sigma: Option<String>,
    pub exponent_mode: Option<String>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub m: Option<usize>,
    pub q: Option<usize>,
    pub batch_l: Option<usize>,
    pub n_r: Option<usize>,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub check_every: Option<usize>,
    pub probe_mode: Option<String>,
    pub kmeans_restarts: Option<usize>,
}

#[derive(Debug, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct BenchFileConfig {
    pub methods: Option<Vec<String>>,
    pub reps: Option<usize>,
    pub m_grid: Option<Vec<usize>>,
    pub q_grid: Option<Vec<usize>>,
    pub batch_grid: Option<Vec<String>>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BenchArgs {
    #[command(flatten)]
    pub base: ClusterArgs,
    /// Comma-separated method list, e.g. `mbsc,nystrom,power`.
    #[arg(long)]
    pub methods: Option<String>,
    /// Landmark counts for nystrom cells, e.g. `10,50,100`.
    #[arg(long)]
    pub m_grid: Option<String>,
    /// Round counts for power cells, e.g. `2,3`.
    #[arg(long)]
    pub q_grid: Option<String>,
    /// `l:n_r` pairs for optimizer cells, e.g. `20:4,10:8`.
    #[arg(long)]
    pub batch_grid: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct VarianceArgs {
    /// Problem size for the synthetic check (even, two equal groups).
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Probe sparsity in (0, 1].
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    /// Probes per averaged estimate, for the mini-batch bound.
    #[arg(long, default_value_t = 2)]
    pub n_r: usize,
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved cluster configuration after flag/file/default merging.
#[derive(Debug, Clone)]
pub struct ResolvedCluster {
    pub source: DataSource,
    pub method: String,
    pub k: usize,
    pub sigma_spec: String,
    pub exponent_mode: ExponentMode,
    pub seed: u64,
    pub reps: usize,
    pub out: PathBuf,
    pub method_params: MethodParams,
    pub degree_cache: Option<PathBuf>,
    pub kmeans_restarts: usize,
    pub row_normalize: bool,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    File(PathBuf),
    Generator(String),
}

fn merge<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn merge_opt<T: Clone>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, Failure> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Failure::config(format!("invalid config {}: {e}", p.display())))
        }
    }
}

pub fn resolve_cluster(args: &ClusterArgs) -> Result<ResolvedCluster, Failure> {
    resolve_cluster_impl(args, None)
}

/// Bench resolution: the method slot may stay empty because the sweep list
/// comes from `--methods`.
pub fn resolve_cluster_for_bench(args: &ClusterArgs) -> Result<ResolvedCluster, Failure> {
    resolve_cluster_impl(args, Some("mbsc"))
}

fn resolve_cluster_impl(
    args: &ClusterArgs,
    fallback_method: Option<&str>,
) -> Result<ResolvedCluster, Failure> {
    let file = load_file_config(&args.config)?;
    let fc = file.cluster.unwrap_or_default();

    let source = match (
        merge_opt(args.data.clone(), fc.data.clone()),
        merge_opt(args.gen.clone(), fc.gen.clone()),
    ) {
        (Some(_), Some(_)) => return Err(Failure::config("give either --data or --gen, not both")),
        (Some(path), None) => DataSource::File(path),
        (None, Some(spec)) => DataSource::Generator(spec),
        (None, None) => {
            return Err(Failure::config(
                "a dataset is required: --data <path> or --gen <spec>",
            ))
        }
    };

    let method = merge_opt(args.method.clone(), fc.method)
        .or_else(|| fallback_method.map(str::to_string))
        .ok_or_else(|| Failure::config("--method is required"))?;
    let k = merge_opt(args.k, fc.k).ok_or_else(|| Failure::config("--k is required"))?;
    if k == 0 {
        return Err(Failure::config("k must be positive"));
    }

    let out = merge(
        args.out.clone(),
        fc.out,
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("mbsc-out")),
    );

    let probe_mode = match merge_opt(args.probe_mode.clone(), fc.probe_mode) {
        Some(s) => Some(ProbeMode::parse(&s).map_err(|e| Failure::config(e.to_string()))?),
        None => None,
    };
    let exponent_mode = match merge_opt(args.exponent_mode.clone(), fc.exponent_mode) {
        Some(s) => ExponentMode::parse(&s).map_err(|e| Failure::config(e.to_string()))?,
        None => ExponentMode::Distance,
    };

    let method_params = MethodParams {
        batch_l: merge_opt(args.batch_l, fc.batch_l),
        n_r: merge_opt(args.n_r, fc.n_r),
        p: merge_opt(args.p, fc.p),
        lambda: merge_opt(args.lambda, fc.lambda),
        epsilon: merge_opt(args.epsilon, fc.epsilon),
        max_iters: merge_opt(args.iters, fc.iters),
        stop_tol: merge_opt(args.stop_tol, fc.stop_tol),
        check_every: merge_opt(args.check_every, fc.check_every),
        probe_mode,
        adagrad: if args.plain_sgd { Some(false) } else { None },
        frobenius_stop: if args.frobenius_stop {
            Some(true)
        } else {
            None
        },
        q: merge_opt(args.q, fc.q),
        m: merge_opt(args.m, fc.m),
        guard: args.exact_guard,
    };

    Ok(ResolvedCluster {
        source,
        method,
        k,
        sigma_spec: merge(args.sigma.clone(), fc.sigma, "median".into()),
        exponent_mode,
        seed: merge(args.seed, fc.seed, 42),
        reps: merge(args.reps, fc.reps, 1),
        out,
        method_params,
        degree_cache: args.degree_cache.clone(),
        kmeans_restarts: merge(args.kmeans_restarts, fc.kmeans_restarts, 10),
        row_normalize: args.row_normalize,
    })
}

/// Parses `blobs:...` / `circles:...` generator specs.
pub fn build_dataset(source: &DataSource, default_seed: u64) -> Result<Dataset, Failure> {
    match source {
        DataSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read dataset {}: {e}", path.display()))
            })?;
            parse_libsvm(&text).map_err(crate::classify)
        }
        DataSource::Generator(spec) => parse_generator(spec, default_seed),
    }
}

fn parse_generator(spec: &str, default_seed: u64) -> Result<Dataset, Failure> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut pairs = std::collections::BTreeMap::new();
    if !rest.is_empty() {
        for item in rest.split(',') {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Failure::config(format!("generator item `{item}` is not key=value"))
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get_usize = |pairs: &std::collections::BTreeMap<String, String>,
                     key: &str,
                     default: usize|
     -> Result<usize, Failure> {
        match pairs.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::config(format!("generator {key}=`{v}` is not an integer"))),
        }
    };
    let get_f64 = |pairs: &std::collections::BTreeMap<String, String>,
                   key: &str,
                   default: f64|
     -> Result<f64, Failure> {
        match pairs.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::config(format!("generator {key}=`{v}` is not a number"))),
        }
    };
    let seed = pairs
        .get("seed")
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| Failure::config(format!("generator seed=`{v}` is not an integer")))
        })
        .transpose()?
        .unwrap_or(default_seed);

    match kind {
        "blobs" => {
            let k = get_usize(&pairs, "k", 3)?;
            let per = get_usize(&pairs, "per", 100)?;
            let d = get_usize(&pairs, "d", 2)?;
            let spread = get_f64(&pairs, "spread", 0.1)?;
            if k == 0 || per == 0 || d == 0 || spread <= 0.0 {
                return Err(Failure::config("blobs parameters must be positive"));
            }
            Ok(gen_blobs(k, per, d, spread, seed))
        }
        "circles" => {
            let n = get_usize(&pairs, "n", 400)?;
            let noise = get_f64(&pairs, "noise", 0.05)?;
            let radii: Vec<f64> = match pairs.get("radii") {
                None => vec![1.0, 3.0],
                Some(v) => v
                    .split(':')
                    .map(|r| {
                        r.parse::<f64>()
                            .map_err(|_| Failure::config(format!("bad radius `{r}`")))
                    })
                    .collect::<Result<_, _>>()?,
            };
            if n == 0 || radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Failure::config(
                    "circles need n > 0 and strictly increasing radii",
                ));
            }
            if radii.len() > 1 {
                let min_gap = radii
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                if noise >= min_gap / 2.0 {
                    return Err(Failure::config(
                        "circles noise must be below half the smallest radial gap",
                    ));
                }
            }
            Ok(gen_circles(n, &radii, noise, seed))
        }
        other => Err(Failure::config(format!(
            "unknown generator `{other}` (expected `blobs` or `circles`)"
        ))),
    }
}

/// Resolves the sigma spec to a concrete bandwidth.
pub fn resolve_sigma(
    spec: &str,
    ds: &Dataset,
    seed: u64,
    mode: ExponentMode,
) -> Result<AffinityConfig, Failure> {
    let sigma = if spec == "median" {
        median_sigma(ds, 500, seed).map_err(crate::classify)?
    } else {
        let v: f64 = spec.parse().map_err(|_| {
            Failure::config(format!("sigma `{spec}` is neither a number nor `median`"))
        })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Failure::config("sigma must be positive"));
        }
        v
    };
    Ok(AffinityConfig::with_mode(sigma, mode))
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|_| Failure::config(format!("bad {what} entry `{item}`")))
        })
        .collect()
}

/// Parses `l:n_r` pairs.
pub fn parse_batch_grid(s: &str) -> Result<Vec<(usize, usize)>, Failure> {
    s.split(',')
        .map(|item| {
            let (l, r) = item.trim().split_once(':').ok_or_else(|| {
                Failure::config(format!("batch grid entry `{item}` is not l:n_r"))
            })?;
            let l = l
                .parse()
                .map_err(|_| Failure::config(format!("bad batch length `{l}`")))?;
            let r = r
                .parse()
                .map_err(|_| Failure::config(format!("bad probe count `{r}`")))?;
            Ok((l, r))
        })
        .collect()
}
