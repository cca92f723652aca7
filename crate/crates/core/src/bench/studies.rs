use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::diffuser::{default_minimizer_starts, minimize_from_starts, run_zodmc, ZodmcConfig};
use crate::error::{Error, Result};
use crate::optim::MinimizeOptions;
use crate::rgo::{expected_proposals, rgo_budget};
use crate::rng::{self, domain};
use crate::score::{score_l2_error, SampleCountPolicy, ScoreSource};
use crate::target::{QueryLedger, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreErrorRow {
    pub n: usize,
    pub step: usize,
    pub t: f64,
    pub mean: f64,
    pub std: f64,
    /// `e^{-2t} tr Cov(p) / ((1 - e^{-2t})^2 n)`.
    pub bound: f64,
}

fn covariance_trace(target: &Target) -> Option<f64> {
    target.mixture().map(|(spec, _)| spec.covariance_trace())
}

/// Mean squared score error against the closed form at every grid time,
/// one curve per configured sample count.
pub fn score_error_study(cfg: &ExperimentConfig) -> Result<Vec<ScoreErrorRow>> {
    cfg.validate()?;
    let study = cfg
        .score_error
        .as_ref()
        .ok_or_else(|| Error::config("config has no [score_error] section"))?;
    let target = cfg.target.build(cfg.seed)?;
    if !target.has_analytic_score() {
        return Err(Error::UnsupportedTarget(format!(
            "{} has no closed-form score to compare against",
            target.name()
        )));
    }
    let schedule = study.schedule.build()?;
    let trace = covariance_trace(&target).unwrap_or(f64::NAN);
    let ledger = QueryLedger::new();
    let mut starts = target.mode_centers().to_vec();
    starts.extend(default_minimizer_starts(target.dim(), cfg.seed));
    let tracker = minimize_from_starts(&target, &starts, &MinimizeOptions::default(), &ledger)?;

    let jobs: Vec<(usize, usize)> = study
        .n
        .iter()
        .flat_map(|&n| (0..schedule.steps()).map(move |k| (n, k)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(j, &(n, k))| {
            let t = schedule.score_time(k);
            let mut local = tracker.clone();
            let mut r = rng::stream(cfg.seed, domain::STUDY, j as u64);
            let source = ScoreSource::MonteCarlo {
                policy: SampleCountPolicy::Fixed { n },
                opts: study.score,
            };
            let (mean, std) = score_l2_error(&target, &mut local, t, &source, study.n_eval, &ledger, &mut r)?;
            let e2 = (-2.0 * t).exp();
            let a = -(-2.0 * t).exp_m1();
            Ok(ScoreErrorRow {
                n,
                step: k,
                t,
                mean,
                std,
                bound: e2 / (a * a) * trace / n as f64,
            })
        })
        .collect()
}

pub fn write_score_error_csv(path: &Path, rows: &[ScoreErrorRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "n,step,t,mean_sq_error,std,bound")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.n, r.step, r.t, r.mean, r.std, r.bound)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub step: usize,
    pub t: f64,
    /// Mean accepted count per `proposals` fired, over trajectories.
    pub mean_accepted: f64,
    pub std_error: f64,
    /// Closed-form prediction, for single isotropic Gaussian targets.
    pub predicted: Option<f64>,
    /// Binomial standard error of the observed mean under the prediction.
    pub predicted_se: Option<f64>,
}

/// `(L, x*)` when `V` is exactly `L |x - x*|^2 / 2` plus a constant.
fn isotropic_quadratic(target: &Target) -> Option<(f64, Vec<f64>)> {
    let (spec, _) = target.mixture()?;
    if spec.weights.len() != 1 || !target.has_analytic_score() {
        return None;
    }
    let cov = &spec.covariances[0];
    let s = cov[0][0];
    let iso = cov
        .iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| v == if i == j { s } else { 0.0 }));
    iso.then(|| (1.0 / s, spec.means[0].clone()))
}

/// Runs sampler trajectories, then at each grid time fires a fixed number of
/// proposals from every trajectory's current state and counts acceptances.
pub fn acceptance_study(cfg: &ExperimentConfig) -> Result<Vec<AcceptanceRow>> {
    cfg.validate()?;
    let study = cfg
        .acceptance
        .as_ref()
        .ok_or_else(|| Error::config("config has no [acceptance] section"))?;
    let target = cfg.target.build(cfg.seed)?;
    let schedule = study.schedule.build()?;
    let mut zc = ZodmcConfig::new(schedule.clone(), study.policy, study.trajectories, cfg.seed);
    zc.score = study.score;
    zc.record_trace = true;
    let ledger = QueryLedger::new();
    let run = run_zodmc(&target, &zc, &ledger)?;
    let trace = run.trace.expect("trace was requested");
    let tracker = run.tracker.expect("sampler runs record their minimizer");
    let quad = isotropic_quadratic(&target);
    let m = study.trajectories;

    (0..schedule.steps())
        .map(|k| {
            let t = schedule.score_time(k);
            let counts: Vec<f64> = trace[k]
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut local = tracker.clone();
                    let mut r = rng::stream(cfg.seed, domain::STUDY, (k * m + i) as u64);
                    let res = rgo_budget(
                        &target,
                        &mut local,
                        t,
                        x,
                        study.proposals,
                        study.score.batch_size,
                        &ledger,
                        &mut r,
                    )?;
                    Ok(res.samples.len() as f64)
                })
                .collect::<Result<_>>()?;
            let mf = m as f64;
            let mean = counts.iter().sum::<f64>() / mf;
            let var = if m > 1 {
                counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (mf - 1.0)
            } else {
                0.0
            };
            let (predicted, predicted_se) = match &quad {
                Some((l, xstar)) => {
                    let k_prop = study.proposals as f64;
                    let ps: Vec<f64> = trace[k]
                        .iter()
                        .map(|x| 1.0 / expected_proposals(*l, t, x, xstar, 1))
                        .collect();
                    let p_mean = k_prop * ps.iter().sum::<f64>() / mf;
                    let se = (ps.iter().map(|p| k_prop * p * (1.0 - p)).sum::<f64>()).sqrt() / mf;
                    (Some(p_mean), Some(se))
                }
                None => (None, None),
            };
            Ok(AcceptanceRow {
                step: k,
                t,
                mean_accepted: mean,
                std_error: (var / mf).sqrt(),
                predicted,
                predicted_se,
            })
        })
        .collect()
}

pub fn write_acceptance_csv(path: &Path, rows: &[AcceptanceRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "step,t,mean_accepted,std_error,predicted,predicted_se")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step,
            r.t,
            r.mean_accepted,
            r.std_error,
            opt(r.predicted),
            opt(r.predicted_se)
        )?;
    }
    w.flush()?;
    Ok(())
}
