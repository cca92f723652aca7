//! Reference samplers: unadjusted Langevin with finite-difference gradients,
//! and plain rejection sampling against the full target for ground truth.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffuser::SampleBatch;
use crate::error::{Error, Result};
use crate::gmm::{Gmm, GmmSpec};
use crate::rng::{self, domain};
use crate::target::{Phase, QueryLedger, Target};

/// Chains farther than this from the origin are dropped as diverged.
pub const DIVERGENCE_RADIUS: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UlaInit {
    Origin,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UlaConfig {
    pub step: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub init: UlaInit,
    /// Absolute central-difference step.
    pub fd_step: f64,
    pub workers: usize,
}

impl Default for UlaConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            n_steps: 1000,
            n_chains: 1000,
            init: UlaInit::Origin,
            fd_step: 1e-4,
            workers: 0,
        }
    }
}

impl UlaConfig {
    /// Queries spent per chain step.
    pub fn queries_per_step(dim: usize) -> u64 {
        2 * dim as u64
    }

    /// Largest step count whose total cost stays within `budget`.
    pub fn steps_for_budget(budget: u64, n_chains: usize, dim: usize) -> usize {
        (budget / (Self::queries_per_step(dim) * n_chains.max(1) as u64)) as usize
    }
}

/// Central-difference gradient of `V`, charged as `2d` baseline queries.
pub fn fd_gradient(target: &Target, x: &[f64], h: f64, ledger: &QueryLedger) -> Result<Vec<f64>> {
    let d = x.len();
    let mut probe = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let start = probe.len();
            probe.extend_from_slice(x);
            probe[start + i] += sign * h;
        }
    }
    let mut vals = vec![0.0; 2 * d];
    target.eval_batch(&probe, &mut vals, ledger, Phase::Baseline)?;
    Ok(vals.chunks_exact(2).map(|v| (v[0] - v[1]) / (2.0 * h)).collect())
}

/// `x <- x - step * grad V(x) + sqrt(2 step) xi`, gradients by central differences.
pub fn run_ula(target: &Target, config: &UlaConfig, ledger: &QueryLedger, seed: u64) -> Result<SampleBatch> {
    if !(config.step > 0.0) || !(config.fd_step > 0.0) {
        return Err(Error::config(format!(
            "ULA needs positive step and fd_step, got {} and {}",
            config.step, config.fd_step
        )));
    }
    if config.n_chains == 0 {
        return Err(Error::config("ULA needs at least one chain"));
    }
    let d = target.dim();
    let before = ledger.snapshot();
    let noise = (2.0 * config.step).sqrt();

    let chain = |c: usize| -> Result<Option<Vec<f64>>> {
        let mut r = rng::stream(seed, domain::ULA_CHAIN, c as u64);
        let mut x: Vec<f64> = match config.init {
            UlaInit::Origin => vec![0.0; d],
            UlaInit::Gaussian => (0..d).map(|_| r.sample(StandardNormal)).collect(),
        };
        for _ in 0..config.n_steps {
            let g = fd_gradient(target, &x, config.fd_step, ledger)?;
            for (xi, gi) in x.iter_mut().zip(&g) {
                let z: f64 = r.sample(StandardNormal);
                *xi += -config.step * gi + noise * z;
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= DIVERGENCE_RADIUS) {
                return Ok(None);
            }
        }
        Ok(Some(x))
    };

    let results: Vec<Result<Option<Vec<f64>>>> = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?
            .install(|| (0..config.n_chains).into_par_iter().map(chain).collect())
    } else {
        (0..config.n_chains).into_par_iter().map(chain).collect()
    };
    let mut points = Vec::with_capacity(config.n_chains);
    let mut diverged = 0;
    for r in results {
        match r? {
            Some(x) => points.push(x),
            None => diverged += 1,
        }
    }
    let after = ledger.snapshot();
    Ok(SampleBatch {
        algorithm: "ula".into(),
        seed,
        dim: d,
        points,
        ledger_snapshot: after.clone(),
        optimization_queries: 0,
        score_proposals: after.phase(Phase::Baseline) - before.phase(Phase::Baseline),
        per_step: Vec::new(),
        trace: None,
        truncated: false,
        steps_completed: config.n_steps,
        tracker: None,
        diverged,
    })
}

/// Rejection sampling of `exp(-V)` from the proposal `q` with `exp(-V) <= e^{log_m} q`.
///
/// Every proposal is audited: a density ratio above the bound aborts with the
/// offending point instead of silently biasing the output.
pub fn ground_truth_rejection(
    target: &Target,
    proposal: &GmmSpec,
    log_m: f64,
    n: usize,
    max_proposals: Option<u64>,
    ledger: &QueryLedger,
    seed: u64,
) -> Result<SampleBatch> {
    let d = target.dim();
    if proposal.dim() != d {
        return Err(Error::config(format!(
            "proposal dimension {} does not match target dimension {d}",
            proposal.dim()
        )));
    }
    if !log_m.is_finite() {
        return Err(Error::config("domination constant must be finite"));
    }
    let q = Gmm::new(proposal)?;
    let cap = max_proposals.unwrap_or_else(|| ((n as f64) * log_m.exp().max(1.0) * 1000.0).min(1e12) as u64);
    let mut r = rng::stream(seed, domain::GROUND_TRUTH, 0);
    let batch = 4096;
    let mut pts = vec![0.0; batch * d];
    let mut vals = vec![0.0; batch];
    let mut out = Vec::with_capacity(n);
    let mut used = 0u64;
    while out.len() < n {
        if used >= cap {
            return Err(Error::RgoStarved {
                t: 0.0,
                proposals_used: used,
            });
        }
        let m = batch.min((cap - used) as usize);
        for row in pts[..m * d].chunks_exact_mut(d) {
            row.copy_from_slice(&q.sample(&mut r));
        }
        target.eval_batch(&pts[..m * d], &mut vals[..m], ledger, Phase::GroundTruth)?;
        used += m as u64;
        for (x, &v) in pts[..m * d].chunks_exact(d).zip(&vals[..m]) {
            let log_ratio = -v - log_m - q.log_density(x);
            if log_ratio > 1e-9 {
                return Err(Error::DominationViolation {
                    witness: x.to_vec(),
                    log_ratio,
                });
            }
            let u: f64 = r.gen();
            if u.ln() <= log_ratio && out.len() < n {
                out.push(x.to_vec());
            }
        }
    }
    Ok(SampleBatch {
        algorithm: "ground-truth".into(),
        seed,
        dim: d,
        points: out,
        ledger_snapshot: ledger.snapshot(),
        optimization_queries: 0,
        score_proposals: used,
        per_step: Vec::new(),
        trace: None,
        truncated: false,
        steps_completed: 0,
        tracker: None,
        diverged: 0,
    })
}

/// Ground truth from the dominating proposal the target carries.
pub fn ground_truth(target: &Target, n: usize, ledger: &QueryLedger, seed: u64) -> Result<SampleBatch> {
    let (q, log_m) = target.dominating_proposal().ok_or_else(|| {
        Error::UnsupportedTarget(format!("{} has no known dominating proposal", target.name()))
    })?;
    let q = q.clone();
    ground_truth_rejection(target, &q, log_m, n, None, ledger, seed)
}

/// Largest `log p(x) - log q(x)` over a regular 2-D grid, uncharged.
pub fn grid_audit_log_m(
    log_p: impl Fn(&[f64]) -> f64,
    proposal: &GmmSpec,
    lo: [f64; 2],
    hi: [f64; 2],
    points_per_axis: usize,
) -> Result<(f64, Vec<f64>)> {
    if proposal.dim() != 2 || points_per_axis < 2 {
        return Err(Error::argument("grid audit needs a 2-D proposal and at least 2 points per axis"));
    }
    let q = Gmm::new(proposal)?;
    let mut best = (f64::NEG_INFINITY, vec![0.0, 0.0]);
    let step = |k: usize| (hi[k] - lo[k]) / (points_per_axis - 1) as f64;
    for i in 0..points_per_axis {
        for j in 0..points_per_axis {
            let x = [lo[0] + i as f64 * step(0), lo[1] + j as f64 * step(1)];
            let r = log_p(&x) - q.log_density(&x);
            if r > best.0 {
                best = (r, x.to_vec());
            }
        }
    }
    Ok(best)
}
