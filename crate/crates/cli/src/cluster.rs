//! The `cluster` subcommand: one pipeline run per repetition.

use std::fs;
use std::path::Path;

use serde::Serialize;

use mbsc_core::kmeans::KmeansParams;
use mbsc_core::metrics::RunRecord;
use mbsc_core::solver::{make_record, run_pipeline, SolveRequest, SolverRegistry};

use crate::config::{build_dataset, resolve_cluster, resolve_sigma, ClusterArgs, ResolvedCluster};
use crate::Failure;

#[derive(Serialize)]
struct ClusterSummary {
    records: Vec<RunRecord>,
    nmi_mean: Option<f64>,
    nmi_std: Option<f64>,
}

pub fn run(args: ClusterArgs) -> Result<(), Failure> {
    let cfg = resolve_cluster(&args)?;

    // Validate the method and its parameters before any compute.
    let registry = SolverRegistry::builtin();
    let solver = registry
        .build(&cfg.method, &cfg.method_params)
        .map_err(crate::classify)?;

    let dataset = build_dataset(&cfg.source, cfg.seed)?;
    if cfg.k > dataset.n() {
        return Err(Failure::config(format!(
            "k = {} exceeds the number of samples {}",
            cfg.k,
            dataset.n()
        )));
    }
    let affinity = resolve_sigma(&cfg.sigma_spec, &dataset, cfg.seed, cfg.exponent_mode)?;

    fs::create_dir_all(&cfg.out)
        .map_err(|e| Failure::config(format!("cannot create output dir: {e}")))?;

    let mut records = Vec::with_capacity(cfg.reps);
    for rep in 0..cfg.reps {
        let seed = cfg.seed.wrapping_add(rep as u64);
        let req = SolveRequest {
            dataset: &dataset,
            affinity,
            k: cfg.k,
            seed,
            degree_cache: cfg.degree_cache.clone(),
        };
        let mut kparams = KmeansParams::new(cfg.k, seed);
        kparams.restarts = cfg.kmeans_restarts;
        kparams.row_normalize = cfg.row_normalize;

        let outcome = run_pipeline(&*solver, &req, &kparams).map_err(crate::classify)?;
        write_labels(&cfg, rep, &outcome.labels)?;
        if let Some(trace) = &outcome.solve.trace {
            write_text(
                &cfg.out.join(rep_name("trace", rep, "csv")),
                &trace.to_csv(),
            )?;
        }
        let record = make_record(&*solver, &req, &outcome);
        println!(
            "rep {rep}: method={} n={} k={} nmi={} flops={} wall_ms={:.1}",
            record.method,
            record.n,
            record.k,
            record.nmi.map_or("n/a".into(), |v| format!("{v:.4}")),
            record.flops,
            record.wall_ms
        );
        records.push(record);
    }

    let scores: Vec<f64> = records.iter().filter_map(|r| r.nmi).collect();
    let (nmi_mean, nmi_std) = mean_std(&scores);
    let summary = ClusterSummary {
        records,
        nmi_mean,
        nmi_std,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Failure::config(format!("serialization failed: {e}")))?;
    write_text(&cfg.out.join("summary.json"), &json)?;
    Ok(())
}

fn rep_name(stem: &str, rep: usize, ext: &str) -> String {
    if rep == 0 {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_rep{rep}.{ext}")
    }
}

fn write_labels(cfg: &ResolvedCluster, rep: usize, labels: &[usize]) -> Result<(), Failure> {
    let mut text = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    write_text(&cfg.out.join(rep_name("labels", rep, "csv")), &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}
