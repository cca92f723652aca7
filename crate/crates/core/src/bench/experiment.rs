use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AlgorithmSpec, ExperimentConfig, MetricKind};
use super::{schedule_manifest, write_json};
use crate::baselines::{ground_truth, run_ula, UlaConfig};
use crate::diffuser::{read_points_csv, run_zodmc, write_points_csv, SampleBatch, ZodmcConfig};
use crate::error::{Error, Result};
use crate::metrics::{compare, shell_mass, MetricsOptions, MetricsReport};
use crate::rng::{self, domain};
use crate::schedule::ScheduleSpec;
use crate::score::SampleCountPolicy;
use crate::target::{QueryLedger, Target, TargetSpec};

/// Step count used to size ULA budgets when no ZOD-MC entry is configured.
const NOMINAL_STEPS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub sweep_value: Option<String>,
    pub budget: u64,
    pub algorithm: String,
    /// `ok`, or the failure message.
    pub status: String,
    pub n_points: usize,
    /// Total oracle budget the cell was sized for.
    pub budget_total: u64,
    pub ledger_total: u64,
    /// `ledger_total - budget_total`; positive values are the overshoot of the last step.
    pub slack: i64,
    pub truncated: bool,
    pub diverged: usize,
    pub metrics: Option<MetricsReport>,
    pub shell_mass: Option<f64>,
    pub reference_shell_mass: Option<f64>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
}

impl ExperimentOutcome {
    pub fn all_failed(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(|c| !c.ok())
    }

    pub fn curves_path(&self) -> PathBuf {
        self.out_dir.join("curves.csv")
    }
}

struct SweepPoint {
    value: Option<String>,
    spec: TargetSpec,
    target: Target,
    reference: Option<Vec<Vec<f64>>>,
    reference_key: Option<String>,
}

/// Cache key of a ground-truth batch: the target definition, seed and size.
pub fn ground_truth_key(spec: &TargetSpec, seed: u64, n: usize) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("target specs serialize"));
    h.update(seed.to_le_bytes());
    h.update((n as u64).to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Loads the ground-truth batch from the cache directory or generates and stores it.
pub fn cached_ground_truth(
    spec: &TargetSpec,
    target: &Target,
    seed: u64,
    n: usize,
    cache_dir: &Path,
) -> Result<Option<(String, Vec<Vec<f64>>)>> {
    if target.dominating_proposal().is_none() {
        return Ok(None);
    }
    let key = ground_truth_key(spec, seed, n);
    let path = cache_dir.join(format!("{key}.csv"));
    if path.exists() {
        let pts = read_points_csv(&path)?;
        if pts.len() == n {
            return Ok(Some((key, pts)));
        }
    }
    let batch = ground_truth(target, n, &QueryLedger::new(), seed)?;
    fs::create_dir_all(cache_dir)?;
    write_points_csv(&path, &batch.points, batch.dim)?;
    Ok(Some((key, batch.points)))
}

fn first_zodmc_schedule(cfg: &ExperimentConfig) -> Option<ScheduleSpec> {
    cfg.algorithms.iter().find_map(|a| match a {
        AlgorithmSpec::Zodmc { schedule, .. } => Some(*schedule),
        _ => None,
    })
}

/// Total queries a cell at per-estimate budget `b` is allowed.
pub fn matched_total(cfg: &ExperimentConfig, budget: u64) -> u64 {
    let steps = first_zodmc_schedule(cfg).map_or(NOMINAL_STEPS, |s| s.steps);
    budget * steps as u64 * cfg.n_output_samples as u64
}

/// Runs every (sweep value, budget, algorithm) cell and writes samples, metrics,
/// manifests and the combined curves file under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if cfg.algorithms.is_empty() {
        return Err(Error::config("experiment lists no algorithms"));
    }
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;

    let specs: Vec<(Option<String>, TargetSpec)> = match &cfg.sweep {
        Some(s) => (0..s.len())
            .map(|i| Ok((Some(s.value_string(i)), s.apply(&cfg.target, i)?)))
            .collect::<Result<_>>()?,
        None => vec![(None, cfg.target.clone())],
    };
    let cache_dir = out_dir.join("ground_truth");
    let mut points = Vec::with_capacity(specs.len());
    for (value, spec) in specs {
        let target = spec.build(cfg.seed)?;
        let gt = pool.install(|| cached_ground_truth(&spec, &target, cfg.seed, cfg.ground_truth_samples, &cache_dir))?;
        let (reference_key, reference) = gt.map_or((None, None), |(k, p)| (Some(k), Some(p)));
        points.push(SweepPoint {
            value,
            spec,
            target,
            reference,
            reference_key,
        });
    }

    let budgets = cfg.oracle_budget.values();
    let mut jobs = Vec::new();
    for (si, _) in points.iter().enumerate() {
        for &b in &budgets {
            for (ai, _) in cfg.algorithms.iter().enumerate() {
                jobs.push((si, b, ai));
            }
        }
    }
    let cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(ci, &(si, b, ai))| run_cell(cfg, &points[si], b, &cfg.algorithms[ai], ci as u64, out_dir))
            .collect()
    });

    write_curves(&out_dir.join("curves.csv"), cfg, &cells)?;
    let manifest = serde_json::json!({
        "name": cfg.name,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "config": cfg,
        "ground_truth": points
            .iter()
            .map(|p| serde_json::json!({
                "sweep_value": p.value,
                "target": p.target.name(),
                "key": p.reference_key,
                "n": p.reference.as_ref().map(Vec::len),
            }))
            .collect::<Vec<_>>(),
        "schedules": cfg
            .algorithms
            .iter()
            .filter_map(|a| match a {
                AlgorithmSpec::Zodmc { schedule, .. } => schedule.build().ok().map(|s| (a.label(), schedule_manifest(&s))),
                _ => None,
            })
            .collect::<BTreeMap<_, _>>(),
        "cells": cells,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutcome {
        out_dir: out_dir.to_path_buf(),
        cells,
    })
}

fn cell_id(point: &SweepPoint, budget: u64, label: &str, sweep: Option<&str>) -> String {
    match (&point.value, sweep) {
        (Some(v), Some(name)) => format!("{name}{v}-b{budget}-{label}"),
        _ => format!("b{budget}-{label}"),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    budget: u64,
    algo: &AlgorithmSpec,
    index: u64,
    out_dir: &Path,
) -> CellResult {
    let label = algo.label();
    let id = cell_id(point, budget, &label, cfg.sweep.as_ref().map(|s| s.name()));
    let budget_total = matched_total(cfg, budget);
    let ledger = QueryLedger::new();
    let seed = rng::child_seed(cfg.seed, domain::CELL, index);
    let mut result = CellResult {
        id: id.clone(),
        sweep_value: point.value.clone(),
        budget,
        algorithm: label,
        status: "ok".into(),
        n_points: 0,
        budget_total,
        ledger_total: 0,
        slack: 0,
        truncated: false,
        diverged: 0,
        metrics: None,
        shell_mass: None,
        reference_shell_mass: None,
    };
    let outcome = execute(cfg, point, budget, budget_total, algo, seed, &ledger)
        .and_then(|(batch, extra)| {
            let dir = out_dir.join(&id);
            fs::create_dir_all(&dir)?;
            batch.write_csv(&dir.join("samples.csv"))?;
            let mut manifest = batch.manifest();
            manifest["cell"] = serde_json::json!(id);
            manifest["budget_per_estimate"] = serde_json::json!(budget);
            manifest["budget_total"] = serde_json::json!(budget_total);
            manifest["algorithm_config"] = serde_json::to_value(algo).expect("configs serialize");
            manifest["target"] = serde_json::json!(point.target.name());
            manifest["extra"] = extra;
            write_json(&dir.join("manifest.json"), &manifest)?;
            let metrics = match &point.reference {
                Some(reference) if batch.points.len() >= 2 => {
                    let opts = MetricsOptions {
                        seed,
                        ..cfg.metric_options.clone()
                    };
                    let rep = compare(&batch.points, reference, point.target.mode_centers(), &opts)?;
                    write_json(&dir.join("metrics.json"), &rep)?;
                    Some(rep)
                }
                _ => None,
            };
            Ok((batch, metrics))
        });
    result.ledger_total = ledger.zeroth_order_count();
    result.slack = result.ledger_total as i64 - budget_total as i64;
    match outcome {
        Ok((batch, metrics)) => {
            result.n_points = batch.points.len();
            result.truncated = batch.truncated;
            result.diverged = batch.diverged;
            result.metrics = metrics;
            if let (true, TargetSpec::GmmAnnulus { inner, outer, .. }) =
                (cfg.metrics.contains(&MetricKind::ShellMass), &point.spec)
            {
                result.shell_mass = Some(shell_mass(&batch.points, *inner, *outer));
                result.reference_shell_mass = point.reference.as_ref().map(|r| shell_mass(r, *inner, *outer));
            }
        }
        Err(e) => result.status = format!("failed: {e}"),
    }
    result
}

fn execute(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    budget: u64,
    budget_total: u64,
    algo: &AlgorithmSpec,
    seed: u64,
    ledger: &QueryLedger,
) -> Result<(SampleBatch, serde_json::Value)> {
    match algo {
        AlgorithmSpec::Zodmc {
            schedule,
            policy,
            score,
            ..
        } => {
            let schedule = schedule.build()?;
            let extra = schedule_manifest(&schedule);
            let mut zc = ZodmcConfig::new(
                schedule,
                policy.unwrap_or(SampleCountPolicy::ProposalBudget { proposals: budget }),
                cfg.n_output_samples,
                seed,
            );
            zc.score = *score;
            if policy.is_none() {
                zc.max_total_queries = Some(budget_total);
            }
            Ok((run_zodmc(&point.target, &zc, ledger)?, extra))
        }
        AlgorithmSpec::Ula { step, init, fd_step, .. } => {
            let n_steps = UlaConfig::steps_for_budget(budget_total, cfg.n_output_samples, point.target.dim());
            if n_steps == 0 {
                return Err(Error::config(format!(
                    "budget {budget_total} does not cover one ULA step for {} chains",
                    cfg.n_output_samples
                )));
            }
            let uc = UlaConfig {
                step: *step,
                n_steps,
                n_chains: cfg.n_output_samples,
                init: *init,
                fd_step: *fd_step,
                workers: 0,
            };
            let extra = serde_json::json!({ "ula": uc, "queries_per_step": UlaConfig::queries_per_step(point.target.dim()) });
            Ok((run_ula(&point.target, &uc, ledger, seed)?, extra))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

fn write_curves(path: &Path, cfg: &ExperimentConfig, cells: &[CellResult]) -> Result<()> {
    let mut cols = vec![
        "cell",
        "sweep",
        "sweep_value",
        "budget",
        "algorithm",
        "status",
        "n_points",
        "budget_total",
        "ledger_total",
        "slack",
        "truncated",
        "diverged",
    ];
    let want = |m: MetricKind| cfg.metrics.contains(&m);
    if want(MetricKind::Mmd) {
        cols.extend(["mmd", "bandwidth"]);
    }
    if want(MetricKind::W2) {
        cols.push("w2");
    }
    if want(MetricKind::ModeWeights) {
        cols.extend(["mode_tv", "mode_weights", "reference_mode_weights", "unassigned"]);
    }
    if want(MetricKind::Moments) {
        cols.extend(["mean_error", "cov_error"]);
    }
    if want(MetricKind::ShellMass) {
        cols.extend(["shell_mass", "reference_shell_mass"]);
    }
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", cols.join(","))?;
    let sweep = cfg.sweep.as_ref().map_or("", |s| s.name());
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";");
    for c in cells {
        let m = c.metrics.as_ref();
        let mut row = vec![
            c.id.clone(),
            sweep.to_string(),
            c.sweep_value.clone().unwrap_or_default(),
            c.budget.to_string(),
            c.algorithm.clone(),
            // keep the field CSV-safe
            c.status.replace([',', '\n'], ";"),
            c.n_points.to_string(),
            c.budget_total.to_string(),
            c.ledger_total.to_string(),
            c.slack.to_string(),
            c.truncated.to_string(),
            c.diverged.to_string(),
        ];
        if want(MetricKind::Mmd) {
            row.push(fmt_opt(m.map(|m| m.mmd)));
            row.push(fmt_opt(m.map(|m| m.bandwidth)));
        }
        if want(MetricKind::W2) {
            row.push(fmt_opt(m.map(|m| m.w2)));
        }
        if want(MetricKind::ModeWeights) {
            row.push(fmt_opt(m.map(|m| m.mode_tv)));
            row.push(m.map_or(String::new(), |m| join(&m.mode_weights)));
            row.push(m.map_or(String::new(), |m| join(&m.reference_mode_weights)));
            row.push(fmt_opt(m.map(|m| m.unassigned)));
        }
        if want(MetricKind::Moments) {
            row.push(fmt_opt(m.map(|m| m.mean_error)));
            row.push(fmt_opt(m.map(|m| m.cov_error)));
        }
        if want(MetricKind::ShellMass) {
            row.push(fmt_opt(c.shell_mass));
            row.push(fmt_opt(c.reference_shell_mass));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
