//! Reverse-diffusion driver: exponential-integrator steps along a schedule,
//! with scores estimated from rejection-sampled conditional draws.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::MinimizeOptions;
use crate::rgo::{find_potential_min, MinTracker};
use crate::rng::{self, domain, StreamRng};
use crate::schedule::{validate_schedule, Schedule};
use crate::score::{estimate_score, SampleCountPolicy, ScoreOptions};
use crate::target::{LedgerSnapshot, Phase, QueryLedger, Target};

/// `x' = e^g x + 2 (e^g - 1) s + sqrt(e^{2g} - 1) xi`.
pub fn ei_step(x: &[f64], s: &[f64], gamma: f64, xi: &[f64]) -> Vec<f64> {
    let grow = gamma.exp();
    let drift = 2.0 * gamma.exp_m1();
    let noise = (2.0 * gamma).exp_m1().sqrt();
    x.iter()
        .zip(s)
        .zip(xi)
        .map(|((x, s), z)| grow * x + drift * s + noise * z)
        .collect()
}

/// Number of Gaussian minimizer seeds added to the origin by default.
pub const DEFAULT_RANDOM_STARTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZodmcConfig {
    pub schedule: Schedule,
    pub policy: SampleCountPolicy,
    #[serde(default)]
    pub score: ScoreOptions,
    /// Number of independent trajectories.
    pub batch_size: usize,
    pub seed: u64,
    /// Minimizer seeds; the origin plus Gaussian draws when absent.
    #[serde(default)]
    pub opt_starts: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub minimize: MinimizeOptions,
    #[serde(default)]
    pub record_trace: bool,
    /// Stop after the step during which the ledger total reaches this.
    #[serde(default)]
    pub max_total_queries: Option<u64>,
    /// Thread count; 0 uses the global pool. Output does not depend on it.
    #[serde(default)]
    pub workers: usize,
}

impl ZodmcConfig {
    pub fn new(schedule: Schedule, policy: SampleCountPolicy, batch_size: usize, seed: u64) -> Self {
        Self {
            schedule,
            policy,
            score: ScoreOptions::default(),
            batch_size,
            seed,
            opt_starts: None,
            minimize: MinimizeOptions::default(),
            record_trace: false,
            max_total_queries: None,
            workers: 0,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let v = validate_schedule(&self.schedule);
        if !v.is_empty() {
            return Err(Error::config(format!("invalid schedule: {}", v[0])));
        }
        self.policy.validate()?;
        if self.score.batch_size == 0 {
            return Err(Error::config("proposal batch size must be positive"));
        }
        if let Some(starts) = &self.opt_starts {
            if starts.is_empty() {
                return Err(Error::config("opt_starts must not be empty"));
            }
            if let Some(bad) = starts.iter().find(|s| s.len() != dim) {
                return Err(Error::config(format!(
                    "minimizer start {bad:?} does not have the target dimension {dim}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Forward time `T - t_k` of the score evaluations.
    pub t: f64,
    pub gamma: f64,
    /// Mean over trajectories of accepted / proposed.
    pub mean_acceptance: f64,
    pub proposals: u64,
    pub accepted: u64,
    pub envelope_violations: u64,
    /// Trajectories whose estimate fell back to the best proposal.
    pub fallbacks: u64,
    /// `V*` after merging this step's improvements.
    pub vstar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub algorithm: String,
    pub seed: u64,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub ledger_snapshot: LedgerSnapshot,
    pub optimization_queries: u64,
    pub score_proposals: u64,
    pub per_step: Vec<StepStats>,
    /// States after each completed step, starting with the initial draws.
    pub trace: Option<Vec<Vec<Vec<f64>>>>,
    pub truncated: bool,
    pub steps_completed: usize,
    pub tracker: Option<MinTracker>,
    /// Chains dropped from `points` after diverging.
    #[serde(default)]
    pub diverged: usize,
}

impl SampleBatch {
    pub fn per_step_acceptance(&self) -> Vec<f64> {
        self.per_step.iter().map(|s| s.mean_acceptance).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_points_csv(path, &self.points, self.dim)
    }

    /// Run manifest: everything but the points and trace.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "algorithm": self.algorithm,
            "seed": self.seed,
            "dim": self.dim,
            "n_points": self.points.len(),
            "ledger": self.ledger_snapshot,
            "optimization_queries": self.optimization_queries,
            "score_proposals": self.score_proposals,
            "per_step": self.per_step,
            "truncated": self.truncated,
            "steps_completed": self.steps_completed,
            "diverged": self.diverged,
            "vstar": self.tracker.as_ref().map(|t| t.best_value),
            "vstar_point": self.tracker.as_ref().map(|t| t.best_point.clone()),
        })
    }
}

/// One row per point, header `x0,...,x{d-1}`.
pub fn write_points_csv(path: &Path, points: &[Vec<f64>], dim: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_points_csv`].
pub fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let dim = lines.next().map(|h| h.split(',').count()).unwrap_or(0);
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: std::result::Result<Vec<f64>, _> = l.split(',').map(|v| v.trim().parse::<f64>()).collect();
            match row {
                Ok(r) if r.len() == dim => Ok(r),
                Ok(r) => Err(Error::Parse(format!("row has {} values, header has {dim}", r.len()))),
                Err(e) => Err(Error::Parse(format!("{}: {e}", path.display()))),
            }
        })
        .collect()
}

/// The origin followed by Gaussian draws from the seed's start stream.
pub fn default_minimizer_starts(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, domain::OPT_STARTS, 0);
    std::iter::once(vec![0.0; dim])
        .chain((0..DEFAULT_RANDOM_STARTS).map(|_| (0..dim).map(|_| r.sample(StandardNormal)).collect()))
        .collect()
}

/// Best local minimum over all starts; starts where `V` is not finite are skipped.
pub fn minimize_from_starts(
    target: &Target,
    starts: &[Vec<f64>],
    opts: &MinimizeOptions,
    ledger: &QueryLedger,
) -> Result<MinTracker> {
    let mut best: Option<MinTracker> = None;
    let mut last_err = None;
    for s in starts {
        match find_potential_min(target, s, opts, ledger) {
            Ok(tr) => match &mut best {
                Some(b) => {
                    b.merge(&tr);
                }
                None => best = Some(tr),
            },
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::config("no minimizer starts")))
}

struct Trajectory {
    x: Vec<f64>,
    rng: StreamRng,
}

#[derive(Default)]
struct StepOut {
    proposals: u64,
    accepted: u64,
    violations: u64,
    fallback: bool,
    acceptance: f64,
    improved: Option<MinTracker>,
}

enum Scorer<'a> {
    MonteCarlo,
    Given(&'a (dyn Fn(f64, &[f64]) -> Vec<f64> + Sync)),
}

/// Runs the sampler with scores estimated by rejection sampling.
pub fn run_zodmc(target: &Target, config: &ZodmcConfig, ledger: &QueryLedger) -> Result<SampleBatch> {
    drive(target, config, ledger, Scorer::MonteCarlo)
}

/// Runs the same recursion with a caller-supplied score `s(t, x)`; no oracle queries are made.
pub fn run_with_score(
    target: &Target,
    config: &ZodmcConfig,
    score: &(dyn Fn(f64, &[f64]) -> Vec<f64> + Sync),
) -> Result<SampleBatch> {
    drive(target, config, &QueryLedger::new(), Scorer::Given(score))
}

fn drive(target: &Target, config: &ZodmcConfig, ledger: &QueryLedger, scorer: Scorer<'_>) -> Result<SampleBatch> {
    let d = target.dim();
    config.validate(d)?;
    let pool = if config.workers > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?,
        )
    } else {
        None
    };

    let opt_before = ledger.count(Phase::Optimization);
    let mut tracker = match scorer {
        Scorer::MonteCarlo => {
            let starts = config.opt_starts.clone().unwrap_or_else(|| default_minimizer_starts(d, config.seed));
            Some(minimize_from_starts(target, &starts, &config.minimize, ledger)?)
        }
        Scorer::Given(_) => None,
    };
    let optimization_queries = ledger.count(Phase::Optimization) - opt_before;

    let mut trajs: Vec<Trajectory> = (0..config.batch_size)
        .map(|i| {
            let mut rng = rng::stream(config.seed, domain::TRAJECTORY, i as u64);
            let x = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            Trajectory { x, rng }
        })
        .collect();

    let schedule = &config.schedule;
    let gammas = schedule.gammas();
    let mut trace = config.record_trace.then(|| vec![trajs.iter().map(|t| t.x.clone()).collect::<Vec<_>>()]);
    let mut per_step = Vec::with_capacity(gammas.len());
    let mut score_proposals = 0u64;
    let mut truncated = false;

    let snapshot_batch = |trajs: &[Trajectory],
                          per_step: &Vec<StepStats>,
                          trace: &Option<Vec<Vec<Vec<f64>>>>,
                          tracker: &Option<MinTracker>,
                          score_proposals: u64,
                          truncated: bool| SampleBatch {
        algorithm: match scorer {
            Scorer::MonteCarlo => "zodmc".into(),
            Scorer::Given(_) => "given-score".into(),
        },
        seed: config.seed,
        dim: d,
        points: trajs.iter().map(|t| t.x.clone()).collect(),
        ledger_snapshot: ledger.snapshot(),
        optimization_queries,
        score_proposals,
        per_step: per_step.clone(),
        trace: trace.clone(),
        truncated,
        steps_completed: per_step.len(),
        tracker: tracker.clone(),
        diverged: 0,
    };

    for (k, &gamma) in gammas.iter().enumerate() {
        let t = schedule.score_time(k);
        let shared = tracker.clone();
        let step = |traj: &mut Trajectory| -> Result<StepOut> {
            let mut out = StepOut::default();
            let s = match &scorer {
                Scorer::Given(f) => f(t, &traj.x),
                Scorer::MonteCarlo => {
                    let mut local = shared.clone().expect("minimized before the loop");
                    let est = estimate_score(
                        target,
                        &mut local,
                        t,
                        &traj.x,
                        &config.policy,
                        &config.score,
                        ledger,
                        &mut traj.rng,
                    )?;
                    out.proposals = est.proposals_used;
                    out.fallback = est.fallback;
                    out.accepted = if est.fallback { 0 } else { est.n_used as u64 };
                    out.acceptance = out.accepted as f64 / est.proposals_used.max(1) as f64;
                    out.violations = est.envelope_violations;
                    if est.vstar_improved {
                        out.improved = Some(local);
                    }
                    est.value
                }
            };
            let xi: Vec<f64> = (0..d).map(|_| traj.rng.sample(StandardNormal)).collect();
            traj.x = ei_step(&traj.x, &s, gamma, &xi);
            Ok(out)
        };
        let results: Vec<Result<StepOut>> = match &pool {
            Some(p) => p.install(|| trajs.par_iter_mut().map(step).collect()),
            None => trajs.par_iter_mut().map(step).collect(),
        };

        let mut stats = StepStats {
            step: k,
            t,
            gamma,
            mean_acceptance: 0.0,
            proposals: 0,
            accepted: 0,
            envelope_violations: 0,
            fallbacks: 0,
            vstar: f64::NAN,
        };
        let mut failure = None;
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(o) => {
                    stats.proposals += o.proposals;
                    stats.accepted += o.accepted;
                    stats.envelope_violations += o.violations;
                    stats.fallbacks += o.fallback as u64;
                    stats.mean_acceptance += o.acceptance / config.batch_size as f64;
                    if let (Some(tr), Some(better)) = (tracker.as_mut(), o.improved.as_ref()) {
                        tr.merge(better);
                    }
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some((i, e));
                    }
                }
            }
        }
        score_proposals += stats.proposals;
        stats.vstar = tracker.as_ref().map_or(f64::NAN, |t| t.best_value);

        if let Some((i, e)) = failure {
            let used = match &e {
                Error::RgoStarved { proposals_used, .. } => *proposals_used,
                _ => 0,
            };
            // the failing trajectory's state was not advanced
            let state = trajs[i].x.clone();
            let partial = snapshot_batch(&trajs, &per_step, &trace, &tracker, score_proposals, true);
            return Err(Error::RunAborted {
                step: k,
                t,
                state,
                proposals_used: used,
                source: Box::new(e),
                partial: Box::new(partial),
            });
        }
        per_step.push(stats);
        if let Some(tr) = trace.as_mut() {
            tr.push(trajs.iter().map(|t| t.x.clone()).collect());
        }
        if let Some(cap) = config.max_total_queries {
            if ledger.zeroth_order_count() >= cap && k + 1 < gammas.len() {
                truncated = true;
                break;
            }
        }
    }

    let batch = snapshot_batch(&trajs, &per_step, &trace, &tracker, score_proposals, truncated);
    if let Some(bad) = batch.points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::argument(format!("trajectory diverged to {bad:?}")));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_step_substitutions() {
        let x = [1.5, -2.0];
        let out = ei_step(&x, &[0.0, 0.0], 0.3, &[0.0, 0.0]);
        assert!((out[0] - 1.5 * 0.3f64.exp()).abs() < 1e-15);
        let out = ei_step(&[0.0, 0.0, 0.0], &[0.0; 3], 2f64.ln(), &[1.0, 0.0, 0.0]);
        assert!((out[0] - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(&out[1..], &[0.0, 0.0]);
        let out = ei_step(&[0.0], &[1.0], 2f64.ln(), &[0.0]);
        assert!((out[0] - 2.0).abs() < 1e-12);
    }
}
