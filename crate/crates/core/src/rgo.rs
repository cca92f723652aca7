//! Rejection sampling from the conditional law of `X_0` given `X_t = x`,
//! `p(z | x) ∝ exp(-V(z) - |z - e^t x|^2 / (2 (e^{2t} - 1)))`.
//!
//! Proposals come from the Gaussian factor; the envelope uses the smallest
//! potential value found so far, `V*`, so a proposal is accepted with
//! probability `exp(V* - V(z))`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, MinimizeOptions};
use crate::target::{Phase, QueryLedger, Target};

pub const DEFAULT_BATCH: usize = 256;
/// Per-request proposal cap when no smoothness constant is known.
pub const FALLBACK_MAX_PROPOSALS: u64 = 1_000_000;
const MAX_PROPOSALS_CEILING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTracker {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub update_count: u64,
}

impl MinTracker {
    pub fn new(point: Vec<f64>, value: f64) -> Self {
        Self {
            best_point: point,
            best_value: value,
            update_count: 0,
        }
    }

    /// Takes `(point, value)` if it strictly improves the minimum.
    pub fn offer(&mut self, point: &[f64], value: f64) -> bool {
        if value < self.best_value {
            self.best_point.clear();
            self.best_point.extend_from_slice(point);
            self.best_value = value;
            self.update_count += 1;
            true
        } else {
            false
        }
    }

    pub fn merge(&mut self, other: &MinTracker) -> bool {
        self.offer(&other.best_point, other.best_value)
    }
}

/// Local minimum of `V` by finite-difference BFGS, charged to the optimization phase.
pub fn find_potential_min(
    target: &Target,
    x0: &[f64],
    opts: &MinimizeOptions,
    ledger: &QueryLedger,
) -> Result<MinTracker> {
    if x0.len() != target.dim() {
        return Err(Error::argument(format!(
            "start point has dimension {}, target has {}",
            x0.len(),
            target.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::argument("start point must be finite"));
    }
    let f = |x: &[f64]| target.eval_potential(x, ledger, Phase::Optimization).unwrap_or(f64::NAN);
    let m = minimize(f, x0, opts);
    if !m.value.is_finite() {
        return Err(Error::argument(format!("potential is not finite at the start point {x0:?}")));
    }
    Ok(MinTracker::new(m.point, m.value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgoRequest {
    pub t: f64,
    pub x: Vec<f64>,
    pub n: usize,
    pub max_proposals: u64,
    pub batch_size: usize,
}

impl RgoRequest {
    fn check(&self, dim: usize) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::argument(format!("conditional time must be positive, got {}", self.t)));
        }
        if self.x.len() != dim {
            return Err(Error::argument(format!("state has dimension {}, target has {dim}", self.x.len())));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgoResult {
    pub samples: Vec<Vec<f64>>,
    pub proposals_used: u64,
    pub acceptance_rate: f64,
    pub envelope_violations: u64,
    pub vstar_improved: bool,
    /// Lowest-potential proposal of this request with its value.
    pub best_proposal: Option<(Vec<f64>, f64)>,
    /// False when the cap was hit before `n` acceptances.
    pub completed: bool,
}

enum Stop {
    Accepted(usize),
    Budget,
}

#[allow(clippy::too_many_arguments)]
fn run(
    target: &Target,
    tracker: &mut MinTracker,
    t: f64,
    x: &[f64],
    stop: Stop,
    max_proposals: u64,
    batch_size: usize,
    ledger: &QueryLedger,
    rng: &mut impl Rng,
) -> Result<RgoResult> {
    let d = x.len();
    let shrink = t.exp();
    let sd = (2.0 * t).exp_m1().sqrt();
    let center: Vec<f64> = x.iter().map(|v| shrink * v).collect();
    let wanted = match stop {
        Stop::Accepted(n) => n,
        Stop::Budget => usize::MAX,
    };

    let mut samples = Vec::new();
    let mut used = 0u64;
    let mut violations = 0u64;
    let mut improved = false;
    let mut best_proposal: Option<(Vec<f64>, f64)> = None;
    let mut points = vec![0.0; batch_size * d];
    let mut values = vec![0.0; batch_size];

    while samples.len() < wanted && used < max_proposals {
        let m = (max_proposals - used).min(batch_size as u64) as usize;
        let pts = &mut points[..m * d];
        for (i, p) in pts.iter_mut().enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            *p = center[i % d] + sd * xi;
        }
        let vals = &mut values[..m];
        target.eval_batch(pts, vals, ledger, Phase::ScoreEstimation)?;
        used += m as u64;
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in vals.iter().enumerate() {
            let z = &pts[i * d..(i + 1) * d];
            let u: f64 = rng.gen();
            let log_ratio = tracker.best_value - v;
            if log_ratio.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((i, v));
            }
            let accept = u <= log_ratio.exp();
            if v < tracker.best_value {
                violations += 1;
                improved = true;
                tracker.offer(z, v);
            }
            if accept && samples.len() < wanted {
                samples.push(z.to_vec());
            }
        }
        if let Some((i, v)) = best {
            if best_proposal.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best_proposal = Some((pts[i * d..(i + 1) * d].to_vec(), v));
            }
        }
    }

    let n_acc = samples.len();
    let completed = match stop {
        Stop::Accepted(n) => n_acc >= n,
        Stop::Budget => true,
    };
    Ok(RgoResult {
        samples,
        proposals_used: used,
        acceptance_rate: if used > 0 { n_acc as f64 / used as f64 } else { 0.0 },
        envelope_violations: violations,
        vstar_improved: improved,
        best_proposal,
        completed,
    })
}

/// Draws `req.n` samples, stopping early at `req.max_proposals`.
pub fn rgo_sample(
    target: &Target,
    tracker: &mut MinTracker,
    req: &RgoRequest,
    ledger: &QueryLedger,
    rng: &mut impl Rng,
) -> Result<RgoResult> {
    req.check(target.dim())?;
    if req.n == 0 {
        return Err(Error::argument("requested sample count must be positive"));
    }
    let res = run(
        target,
        tracker,
        req.t,
        &req.x,
        Stop::Accepted(req.n),
        req.max_proposals,
        req.batch_size,
        ledger,
        rng,
    )?;
    if res.samples.is_empty() {
        return Err(Error::RgoStarved {
            t: req.t,
            proposals_used: res.proposals_used,
        });
    }
    Ok(res)
}

/// Fires exactly `proposals` proposals and keeps every acceptance.
/// Never fails for lack of acceptances; `samples` may be empty.
#[allow(clippy::too_many_arguments)]
pub fn rgo_budget(
    target: &Target,
    tracker: &mut MinTracker,
    t: f64,
    x: &[f64],
    proposals: u64,
    batch_size: usize,
    ledger: &QueryLedger,
    rng: &mut impl Rng,
) -> Result<RgoResult> {
    let req = RgoRequest {
        t,
        x: x.to_vec(),
        n: 1,
        max_proposals: proposals,
        batch_size,
    };
    req.check(target.dim())?;
    run(target, tracker, t, x, Stop::Budget, proposals, batch_size, ledger, rng)
}

/// Predicted proposal count for `n` acceptances when `V` is `L`-smooth with minimizer `xstar`.
pub fn expected_proposals(l: f64, t: f64, x: &[f64], xstar: &[f64], n: usize) -> f64 {
    let d = x.len() as f64;
    let a = l * t.exp_m1() * (t.exp() + 1.0) + 1.0;
    let et = t.exp();
    let dist: f64 = x.iter().zip(xstar).map(|(xi, si)| (l * si - et * xi).powi(2)).sum();
    n as f64 * a.powf(d / 2.0) * (0.5 * dist / a).exp()
}

/// Proposal cap for a request: a hundredfold margin over the prediction when
/// the smoothness constant is known, a flat cap otherwise.
pub fn default_max_proposals(target: &Target, tracker: &MinTracker, t: f64, x: &[f64], n: usize) -> u64 {
    match target.smoothness_hint {
        Some(l) => {
            let e = 100.0 * expected_proposals(l, t, x, &tracker.best_point, n);
            if e.is_finite() {
                e.clamp(n as f64, MAX_PROPOSALS_CEILING) as u64
            } else {
                MAX_PROPOSALS_CEILING as u64
            }
        }
        None => FALLBACK_MAX_PROPOSALS,
    }
}
