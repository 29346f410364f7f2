//! Solver strategies behind a common trait.
//!
//! Every embedding method (the optimizer in its stored and streaming
//! variants, the exact eigensolver, the power method, and the Nystrom
//! approximation) implements [`SpectralSolver`] and is registered by name
//! in [`SolverRegistry`]. Callers pick a strategy at runtime from its name
//! plus a [`MethodParams`] bag; each builder validates its own parameter
//! requirements before any compute starts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use crate::baselines::{
    exact_topk, nystrom_embed, power_topk, NystromParams, PowerParams, EXACT_GUARD_DEFAULT,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{AffinityConfig, LaplacianProvider};
use crate::kmeans::{kmeans, KmeansParams};
use crate::linalg::DenseMatrix;
use crate::mbsc::{run_mbsc, ConvergenceTrace, GradientMode, MbscParams, StopCriterion};
use crate::metrics::{nmi, RunRecord};
use crate::probes::{ProbeConfig, ProbeMode};

/// Everything a solver needs to produce an embedding.
#[derive(Debug, Clone)]
pub struct SolveRequest<'a> {
    pub dataset: &'a Dataset,
    pub affinity: AffinityConfig,
    pub k: usize,
    pub seed: u64,
    /// Optional degree-vector cache for the streaming variant.
    pub degree_cache: Option<PathBuf>,
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub embedding: DenseMatrix,
    pub flops: u64,
    /// Mini-batch size, landmark count, or round count, depending on method.
    pub m_or_q: Option<usize>,
    pub wall_ms: f64,
    pub trace: Option<ConvergenceTrace>,
}

pub trait SpectralSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome>;
    /// Key-value view of the effective parameters, for reproducible records.
    fn describe(&self) -> BTreeMap<String, String>;
}

/// Free-form method parameters; each builder takes what it needs and
/// validates the combination up front.
#[derive(Debug, Clone, Default)]
pub struct MethodParams {
    /// Columns per probe (optimizer); `p = l / n`.
    pub batch_l: Option<usize>,
    /// Probes averaged per iteration (optimizer).
    pub n_r: Option<usize>,
    /// Direct sparsity override; mutually exclusive with `batch_l`.
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub check_every: Option<usize>,
    pub probe_mode: Option<ProbeMode>,
    pub adagrad: Option<bool>,
    pub frobenius_stop: Option<bool>,
    /// Rounds for the power method. Required there.
    pub q: Option<usize>,
    /// Landmark count for Nystrom. Required there.
    pub m: Option<usize>,
    /// Size guard override for the exact baseline.
    pub guard: Option<usize>,
}

impl MethodParams {
    fn mbsc_options(&self) -> Result<MbscOptions> {
        if self.p.is_some() && self.batch_l.is_some() {
            return Err(Error::InvalidConfig(
                "give either a probe sparsity p or a batch length l, not both".into(),
            ));
        }
        Ok(MbscOptions {
            batch_l: self.batch_l,
            p: self.p,
            n_r: self.n_r.unwrap_or(2),
            lambda: self.lambda.unwrap_or(0.1),
            epsilon: self.epsilon.unwrap_or(1e-8),
            max_iters: self.max_iters.unwrap_or(200),
            stop_tol: self.stop_tol.unwrap_or(1e-4),
            check_every: self.check_every.unwrap_or(10),
            probe_mode: self.probe_mode.unwrap_or_default(),
            adagrad: self.adagrad.unwrap_or(true),
            criterion: if self.frobenius_stop.unwrap_or(false) {
                StopCriterion::Frobenius
            } else {
                StopCriterion::Subspace
            },
        })
    }
}

#[derive(Debug, Clone)]
struct MbscOptions {
    batch_l: Option<usize>,
    p: Option<f64>,
    n_r: usize,
    lambda: f64,
    epsilon: f64,
    max_iters: usize,
    stop_tol: f64,
    check_every: usize,
    probe_mode: ProbeMode,
    adagrad: bool,
    criterion: StopCriterion,
}

impl MbscOptions {
    fn probe_config(&self, n: usize, seed: u64) -> Result<ProbeConfig> {
        let mut cfg = match (self.p, self.batch_l) {
            (Some(p), None) => ProbeConfig::iid(n, p, self.n_r, seed)?,
            (None, Some(l)) => ProbeConfig::from_batch(n, l, self.n_r, seed, self.probe_mode)?,
            (None, None) => {
                // Default mini-batch: 5% of the columns per probe.
                let l = (n / 20).max(1);
                ProbeConfig::from_batch(n, l, self.n_r, seed, self.probe_mode)?
            }
            (Some(_), Some(_)) => unreachable!("validated in mbsc_options"),
        };
        cfg.mode = self.probe_mode;
        Ok(cfg)
    }

    fn mbsc_params(&self, probe: ProbeConfig, seed: u64) -> MbscParams {
        MbscParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            gradient: GradientMode::Stochastic(probe),
            stop_tol: self.stop_tol,
            check_every: self.check_every,
            adagrad: self.adagrad,
            init_seed: seed,
            criterion: self.criterion,
        }
    }

    fn describe(&self, name: &str) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("method".into(), name.to_string());
        if let Some(l) = self.batch_l {
            map.insert("batch_l".into(), l.to_string());
        }
        if let Some(p) = self.p {
            map.insert("p".into(), p.to_string());
        }
        map.insert("n_r".into(), self.n_r.to_string());
        map.insert("lambda".into(), self.lambda.to_string());
        map.insert("epsilon".into(), self.epsilon.to_string());
        map.insert("max_iters".into(), self.max_iters.to_string());
        map.insert("stop_tol".into(), self.stop_tol.to_string());
        map.insert("check_every".into(), self.check_every.to_string());
        map.insert(
            "probe_mode".into(),
            match self.probe_mode {
                ProbeMode::Iid => "iid".into(),
                ProbeMode::ShuffledPartition => "shuffled".to_string(),
            },
        );
        map.insert("adagrad".into(), self.adagrad.to_string());
        map
    }
}

struct MbscSolver {
    options: MbscOptions,
    streaming: bool,
}

impl SpectralSolver for MbscSolver {
    fn name(&self) -> &'static str {
        if self.streaming {
            "mbsc-e"
        } else {
            "mbsc"
        }
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome> {
        let started = Instant::now();
        let provider = if self.streaming {
            match &req.degree_cache {
                Some(path) => {
                    LaplacianProvider::build_streaming_cached(req.dataset, req.affinity, path)?
                }
                None => LaplacianProvider::build_streaming(req.dataset, req.affinity)?,
            }
        } else {
            LaplacianProvider::build_materialized(req.dataset, req.affinity)?
        };
        let n = provider.n();
        let probe = self.options.probe_config(n, req.seed)?;
        let m = probe.minibatch_size();
        let params = self.options.mbsc_params(probe, req.seed);
        let (embedding, trace) = run_mbsc(&provider, req.k, &params, None)?;
        Ok(SolveOutcome {
            embedding,
            flops: trace.ledger.total(),
            m_or_q: Some(m),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            trace: Some(trace),
        })
    }

    fn describe(&self) -> BTreeMap<String, String> {
        self.options.describe(self.name())
    }
}

struct ExactSolver {
    guard: usize,
}

impl SpectralSolver for ExactSolver {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome> {
        let started = Instant::now();
        let provider = LaplacianProvider::build_materialized(req.dataset, req.affinity)?;
        let embedding = exact_topk(&provider, req.k, self.guard)?;
        let n = provider.n() as u128;
        // Dense symmetric eigendecomposition leading-order cost.
        let flops = (9 * n * n * n) as u64;
        Ok(SolveOutcome {
            embedding,
            flops,
            m_or_q: None,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            trace: None,
        })
    }

    fn describe(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("method".into(), "exact".into());
        map.insert("guard".into(), self.guard.to_string());
        map
    }
}

struct PowerSolver {
    q: usize,
}

impl SpectralSolver for PowerSolver {
    fn name(&self) -> &'static str {
        "power"
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome> {
        let started = Instant::now();
        let provider = LaplacianProvider::build_materialized(req.dataset, req.affinity)?;
        let (embedding, flops) = power_topk(
            &provider,
            &PowerParams {
                k: req.k,
                q: self.q,
                seed: req.seed,
            },
        )?;
        Ok(SolveOutcome {
            embedding,
            flops: flops.headline(),
            m_or_q: Some(self.q),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            trace: None,
        })
    }

    fn describe(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("method".into(), "power".into());
        map.insert("q".into(), self.q.to_string());
        map
    }
}

struct NystromSolver {
    m: usize,
}

impl SpectralSolver for NystromSolver {
    fn name(&self) -> &'static str {
        "nystrom"
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome> {
        let started = Instant::now();
        let (embedding, flops) = nystrom_embed(
            req.dataset,
            &req.affinity,
            &NystromParams {
                m: self.m,
                k: req.k,
                seed: req.seed,
            },
        )?;
        Ok(SolveOutcome {
            embedding,
            flops,
            m_or_q: Some(self.m),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            trace: None,
        })
    }

    fn describe(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("method".into(), "nystrom".into());
        map.insert("m".into(), self.m.to_string());
        map
    }
}

type SolverBuilder = fn(&MethodParams) -> Result<Box<dyn SpectralSolver>>;

/// Name-keyed registry of embedding strategies.
pub struct SolverRegistry {
    entries: Vec<(&'static str, SolverBuilder)>,
}

impl SolverRegistry {
    /// All built-in strategies.
    pub fn builtin() -> Self {
        SolverRegistry {
            entries: vec![
                ("mbsc", build_mbsc as SolverBuilder),
                ("mbsc-e", build_mbsc_e),
                ("exact", build_exact),
                ("power", build_power),
                ("nystrom", build_nystrom),
            ],
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(name, _)| *name).collect()
    }

    pub fn build(&self, name: &str, params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
        match self.entries.iter().find(|(n, _)| *n == name) {
            Some((_, builder)) => builder(params),
            None => Err(Error::InvalidConfig(format!(
                "unknown method `{name}`; available: {}",
                self.names().join(", ")
            ))),
        }
    }
}

fn build_mbsc(params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
    Ok(Box::new(MbscSolver {
        options: params.mbsc_options()?,
        streaming: false,
    }))
}

fn build_mbsc_e(params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
    Ok(Box::new(MbscSolver {
        options: params.mbsc_options()?,
        streaming: true,
    }))
}

fn build_exact(params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
    Ok(Box::new(ExactSolver {
        guard: params.guard.unwrap_or(EXACT_GUARD_DEFAULT),
    }))
}

fn build_power(params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
    match params.q {
        Some(q) if q >= 1 => Ok(Box::new(PowerSolver { q })),
        Some(q) => Err(Error::InvalidConfig(format!(
            "power method needs q >= 1, got {q}"
        ))),
        None => Err(Error::InvalidConfig(
            "power method requires the round count q".into(),
        )),
    }
}

fn build_nystrom(params: &MethodParams) -> Result<Box<dyn SpectralSolver>> {
    match params.m {
        Some(m) if m >= 1 => Ok(Box::new(NystromSolver { m })),
        Some(_) => Err(Error::InvalidConfig(
            "nystrom needs at least one landmark".into(),
        )),
        None => Err(Error::InvalidConfig(
            "nystrom requires the landmark count m".into(),
        )),
    }
}

/// Final clustering outcome: labels, quality, and the solve it came from.
#[derive(Debug)]
pub struct ClusterOutcome {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub nmi: Option<f64>,
    pub solve: SolveOutcome,
}

/// Full pipeline: embed, cluster with k-means, score against ground truth
/// when the dataset has labels.
pub fn run_pipeline(
    solver: &dyn SpectralSolver,
    req: &SolveRequest,
    kmeans_params: &KmeansParams,
) -> Result<ClusterOutcome> {
    let solve = solver.solve(req)?;
    let (labels, inertia) = kmeans(&solve.embedding, kmeans_params)?;
    let score = match req.dataset.class_ids() {
        Some(truth) => Some(nmi(&labels, &truth)?),
        None => None,
    };
    Ok(ClusterOutcome {
        labels,
        inertia,
        nmi: score,
        solve,
    })
}

/// Flattens an outcome into the serializable record shape.
pub fn make_record(
    solver: &dyn SpectralSolver,
    req: &SolveRequest,
    outcome: &ClusterOutcome,
) -> RunRecord {
    let mut params = solver.describe();
    params.insert("sigma".into(), req.affinity.sigma.to_string());
    params.insert(
        "exponent_mode".into(),
        req.affinity.exponent_mode.as_str().into(),
    );
    params.insert("k".into(), req.k.to_string());
    params.insert("seed".into(), req.seed.to_string());
    RunRecord {
        method: solver.name().to_string(),
        n: req.dataset.n(),
        k: req.k,
        m_or_q: outcome.solve.m_or_q,
        nmi: outcome.nmi,
        flops: outcome.solve.flops,
        wall_ms: outcome.solve.wall_ms,
        seed: req.seed,
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    fn request(ds: &Dataset) -> SolveRequest<'_> {
        SolveRequest {
            dataset: ds,
            affinity: AffinityConfig::new(1.0),
            k: 3,
            seed: 7,
            degree_cache: None,
        }
    }

    #[test]
    fn registry_lists_all_methods() {
        let names = SolverRegistry::builtin().names();
        assert_eq!(names, vec!["mbsc", "mbsc-e", "exact", "power", "nystrom"]);
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let reg = SolverRegistry::builtin();
        assert!(matches!(
            reg.build("lanczos", &MethodParams::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn power_requires_q_and_nystrom_requires_m() {
        let reg = SolverRegistry::builtin();
        assert!(matches!(
            reg.build("power", &MethodParams::default()),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            reg.build("nystrom", &MethodParams::default()),
            Err(Error::InvalidConfig(_))
        ));
        let with_q = MethodParams {
            q: Some(3),
            ..Default::default()
        };
        assert!(reg.build("power", &with_q).is_ok());
    }

    #[test]
    fn conflicting_probe_parameters_rejected() {
        let reg = SolverRegistry::builtin();
        let params = MethodParams {
            p: Some(0.2),
            batch_l: Some(3),
            ..Default::default()
        };
        assert!(matches!(
            reg.build("mbsc", &params),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn exact_pipeline_recovers_blobs() {
        let ds = gen_blobs(3, 30, 2, 0.1, 5);
        let reg = SolverRegistry::builtin();
        let solver = reg.build("exact", &MethodParams::default()).unwrap();
        let req = request(&ds);
        let outcome = run_pipeline(&*solver, &req, &KmeansParams::new(3, req.seed)).unwrap();
        assert!(outcome.nmi.unwrap() >= 0.98);
        let record = make_record(&*solver, &req, &outcome);
        assert_eq!(record.method, "exact");
        assert_eq!(record.n, 90);
        assert!(record.params.contains_key("sigma"));
    }

    #[test]
    fn every_strategy_produces_an_orthonormal_embedding() {
        let ds = gen_blobs(3, 15, 2, 0.15, 11);
        let reg = SolverRegistry::builtin();
        let power_params = MethodParams {
            q: Some(10),
            ..Default::default()
        };
        let nystrom_params = MethodParams {
            m: Some(20),
            ..Default::default()
        };
        let mbsc_params = MethodParams {
            max_iters: Some(50),
            ..Default::default()
        };

        let cases: Vec<(&str, MethodParams)> = vec![
            ("mbsc", mbsc_params.clone()),
            ("mbsc-e", mbsc_params),
            ("exact", MethodParams::default()),
            ("power", power_params),
            ("nystrom", nystrom_params),
        ];
        for (name, params) in cases {
            let solver = reg.build(name, &params).unwrap();
            let req = request(&ds);
            let outcome = solver.solve(&req).unwrap();
            assert_eq!(outcome.embedding.rows(), 45);
            assert_eq!(outcome.embedding.cols(), 3);
            assert!(
                outcome.embedding.ortho_defect() < 1e-8,
                "{name} embedding not orthonormal"
            );
            assert!(outcome.flops > 0, "{name} reported zero flops");
        }
    }

    #[test]
    fn mbsc_and_streaming_variant_agree_bitwise() {
        let ds = gen_blobs(2, 20, 2, 0.2, 3);
        let reg = SolverRegistry::builtin();
        let params = MethodParams {
            max_iters: Some(40),
            batch_l: Some(4),
            n_r: Some(2),
            ..Default::default()
        };
        let stored = reg.build("mbsc", &params).unwrap();
        let streaming = reg.build("mbsc-e", &params).unwrap();
        let req = request(&ds);
        let a = stored.solve(&req).unwrap();
        let b = streaming.solve(&req).unwrap();
        assert_eq!(a.embedding.data(), b.embedding.data());
        assert_eq!(a.flops, b.flops);
    }
}
