//! The `bench` subcommand: method/parameter sweeps with repetitions,
//! aggregated into an accuracy-versus-FLOPs CSV plus per-run JSON records.

use std::fs;

use rayon::prelude::*;
use serde::Serialize;

use mbsc_core::kmeans::KmeansParams;
use mbsc_core::metrics::RunRecord;
use mbsc_core::solver::{make_record, run_pipeline, MethodParams, SolveRequest, SolverRegistry};

use crate::cluster::mean_std;
use crate::config::{
    build_dataset, load_file_config, parse_batch_grid, parse_list, resolve_cluster_for_bench,
    resolve_sigma, BenchArgs,
};
use crate::Failure;

/// One sweep cell: a method with one grid point of its parameters.
#[derive(Debug, Clone)]
struct Cell {
    id: usize,
    method: String,
    params: MethodParams,
    label: String,
}

#[derive(Serialize)]
struct BenchOutput {
    records: Vec<RunRecord>,
    failures: Vec<CellFailure>,
}

#[derive(Serialize, Clone)]
struct CellFailure {
    cell: usize,
    method: String,
    rep: usize,
    message: String,
}

pub fn run(args: BenchArgs) -> Result<(), Failure> {
    let cfg = resolve_cluster_for_bench(&args.base)?;
    let file = load_file_config(&args.base.config)?;
    let bench_file = file.bench.unwrap_or_default();

    let methods: Vec<String> = match (&args.methods, &bench_file.methods) {
        (Some(list), _) => parse_list::<String>(list, "method")?,
        (None, Some(list)) => list.clone(),
        (None, None) => vec![cfg.method.clone()],
    };
    let m_grid: Vec<usize> = match (&args.m_grid, &bench_file.m_grid) {
        (Some(s), _) => parse_list(s, "landmark count")?,
        (None, Some(v)) => v.clone(),
        (None, None) => Vec::new(),
    };
    let q_grid: Vec<usize> = match (&args.q_grid, &bench_file.q_grid) {
        (Some(s), _) => parse_list(s, "round count")?,
        (None, Some(v)) => v.clone(),
        (None, None) => Vec::new(),
    };
    let batch_grid: Vec<(usize, usize)> = match (&args.batch_grid, &bench_file.batch_grid) {
        (Some(s), _) => parse_batch_grid(s)?,
        (None, Some(v)) => parse_batch_grid(&v.join(","))?,
        (None, None) => Vec::new(),
    };

    let registry = SolverRegistry::builtin();
    let mut cells: Vec<Cell> = Vec::new();
    for method in &methods {
        let grid_points: Vec<(MethodParams, String)> = match method.as_str() {
            "nystrom" => {
                if m_grid.is_empty() {
                    return Err(Failure::config("nystrom in the sweep needs --m-grid"));
                }
                m_grid
                    .iter()
                    .map(|&m| {
                        let mut p = cfg.method_params.clone();
                        p.m = Some(m);
                        (p, format!("m={m}"))
                    })
                    .collect()
            }
            "power" => {
                if q_grid.is_empty() {
                    return Err(Failure::config("power in the sweep needs --q-grid"));
                }
                q_grid
                    .iter()
                    .map(|&q| {
                        let mut p = cfg.method_params.clone();
                        p.q = Some(q);
                        (p, format!("q={q}"))
                    })
                    .collect()
            }
            "mbsc" | "mbsc-e" => {
                if batch_grid.is_empty() {
                    vec![(cfg.method_params.clone(), "default".to_string())]
                } else {
                    batch_grid
                        .iter()
                        .map(|&(l, n_r)| {
                            let mut p = cfg.method_params.clone();
                            p.batch_l = Some(l);
                            p.n_r = Some(n_r);
                            p.p = None;
                            (p, format!("l={l},n_r={n_r}"))
                        })
                        .collect()
                }
            }
            "exact" => vec![(cfg.method_params.clone(), "exact".to_string())],
            other => {
                return Err(Failure::config(format!(
                    "unknown method `{other}` in sweep; available: {}",
                    registry.names().join(", ")
                )))
            }
        };
        for (params, label) in grid_points {
            // Validate now so bad combinations fail before compute.
            registry.build(method, &params).map_err(crate::classify)?;
            cells.push(Cell {
                id: cells.len(),
                method: method.clone(),
                params,
                label,
            });
        }
    }

    let dataset = build_dataset(&cfg.source, cfg.seed)?;
    let affinity = resolve_sigma(&cfg.sigma_spec, &dataset, cfg.seed, cfg.exponent_mode)?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Failure::config(format!("cannot create output dir: {e}")))?;

    let reps = args.base.reps.or(bench_file.reps).unwrap_or(10).max(1);
    // Every (cell, rep) pair runs independently in the worker pool; results
    // are keyed so aggregation does not depend on completion order.
    let work: Vec<(usize, usize)> = cells
        .iter()
        .flat_map(|c| (0..reps).map(move |r| (c.id, r)))
        .collect();
    let results: Vec<(usize, usize, Result<RunRecord, String>)> = work
        .par_iter()
        .map(|&(cell_id, rep)| {
            let cell = &cells[cell_id];
            let seed = cfg.seed.wrapping_add(rep as u64);
            let solver = match SolverRegistry::builtin().build(&cell.method, &cell.params) {
                Ok(s) => s,
                Err(e) => return (cell_id, rep, Err(e.to_string())),
            };
            let req = SolveRequest {
                dataset: &dataset,
                affinity,
                k: cfg.k,
                seed,
                degree_cache: None,
            };
            let mut kparams = KmeansParams::new(cfg.k, seed);
            kparams.restarts = cfg.kmeans_restarts;
            kparams.row_normalize = cfg.row_normalize;
            match run_pipeline(&*solver, &req, &kparams) {
                Ok(outcome) => {
                    let mut record = make_record(&*solver, &req, &outcome);
                    record.params.insert("cell".into(), cell.label.clone());
                    (cell_id, rep, Ok(record))
                }
                Err(e) => (cell_id, rep, Err(e.to_string())),
            }
        })
        .collect();

    let mut by_key: Vec<(usize, usize, Result<RunRecord, String>)> = results;
    by_key.sort_by_key(|(cell, rep, _)| (*cell, *rep));

    let mut csv =
        String::from("cell,method,params,rep,seed,n,k,m_or_q,nmi,nmi_std,flops,wall_ms\n");
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for cell in &cells {
        let mut cell_scores = Vec::new();
        let mut cell_flops = Vec::new();
        for (cell_id, rep, result) in by_key.iter().filter(|(c, _, _)| *c == cell.id) {
            match result {
                Ok(record) => {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},,{},{:.1}\n",
                        cell_id,
                        record.method,
                        cell.label,
                        rep,
                        record.seed,
                        record.n,
                        record.k,
                        record.m_or_q.map_or(String::new(), |v| v.to_string()),
                        record.nmi.map_or(String::new(), |v| format!("{v:.6}")),
                        record.flops,
                        record.wall_ms,
                    ));
                    if let Some(score) = record.nmi {
                        cell_scores.push(score);
                    }
                    cell_flops.push(record.flops);
                    records.push(record.clone());
                }
                Err(message) => {
                    failures.push(CellFailure {
                        cell: *cell_id,
                        method: cell.method.clone(),
                        rep: *rep,
                        message: message.clone(),
                    });
                }
            }
        }
        let (mean, std) = mean_std(&cell_scores);
        if let (Some(mean), Some(std)) = (mean, std) {
            let flops_mean = if cell_flops.is_empty() {
                0
            } else {
                cell_flops.iter().sum::<u64>() / cell_flops.len() as u64
            };
            csv.push_str(&format!(
                "{},{},{},agg,,,,,{mean:.6},{std:.6},{flops_mean},\n",
                cell.id, cell.method, cell.label,
            ));
        }
    }

    std::fs::write(cfg.out.join("bench.csv"), &csv)
        .map_err(|e| Failure::config(format!("cannot write bench.csv: {e}")))?;
    let output = BenchOutput { records, failures };
    let json = serde_json::to_string_pretty(&output)
        .map_err(|e| Failure::config(format!("serialization failed: {e}")))?;
    std::fs::write(cfg.out.join("bench.json"), &json)
        .map_err(|e| Failure::config(format!("cannot write bench.json: {e}")))?;

    println!(
        "{} cells x {} reps -> {} records, {} failures",
        cells.len(),
        reps,
        output.records.len(),
        output.failures.len()
    );
    Ok(())
}
