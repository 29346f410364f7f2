//! The `variance-check` subcommand: Monte Carlo vs closed-form covariance
//! of the probe gradient estimator on a synthetic Laplacian.

use std::path::PathBuf;

use mbsc_core::data::gen_blobs;
use mbsc_core::graph::{AffinityConfig, LaplacianProvider};
use mbsc_core::linalg::DenseVector;
use mbsc_core::probes::ProbeConfig;
use mbsc_core::rng::StreamRng;
use mbsc_core::variance::variance_report;

use crate::config::{VarianceArgs, OUT_DIR_ENV};
use crate::Failure;

const REL_ERROR_GATE: f64 = 0.05;

pub fn run(args: VarianceArgs) -> Result<(), Failure> {
    if !(args.p > 0.0 && args.p <= 1.0) {
        return Err(Failure::config(format!(
            "probe sparsity p must be in (0, 1], got {}",
            args.p
        )));
    }
    if args.n < 2 || args.n % 2 != 0 {
        return Err(Failure::config(
            "n must be an even number of at least 2 (two equal synthetic groups)",
        ));
    }
    if args.samples < 10_000 {
        return Err(Failure::config("at least 10000 samples are required"));
    }

    let out = args.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("mbsc-out"))
    });

    // Synthetic Laplacian with two groups, plus a random unit test vector.
    let per = args.n / 2;
    let ds = gen_blobs(2, per, 2, 0.3, args.seed);
    let provider = LaplacianProvider::build_materialized(&ds, AffinityConfig::new(1.0))
        .map_err(crate::classify)?;
    let n = provider.n();
    let mut rng = StreamRng::from_key(args.seed, &[1]);
    let mut w: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);

    let probe = ProbeConfig::iid(n, args.p, args.n_r, args.seed).map_err(crate::classify)?;
    let report = variance_report(&provider, &DenseVector::from_vec(w), &probe, args.samples)
        .map_err(crate::classify)?;

    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::config(format!("cannot create output dir: {e}")))?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::config(format!("serialization failed: {e}")))?;
    let path = out.join("variance_report.json");
    std::fs::write(&path, &json)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;

    println!(
        "n={} p={} samples={} rel_error={:.4}",
        report.n, report.p, report.samples, report.rel_error
    );
    if report.rel_error > REL_ERROR_GATE {
        return Err(Failure {
            code: 1,
            message: format!(
                "empirical covariance deviates from the closed form: rel_error {:.4} > {REL_ERROR_GATE}",
                report.rel_error
            ),
        });
    }
    Ok(())
}
