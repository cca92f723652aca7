//! Monte Carlo estimate of the OU score `grad log p_t(x)` from exact draws of
//! the conditional law of `X_0` given `X_t = x`:
//!
//! `s(t, x) = mean_i (e^{-t} z_i - x) / (1 - e^{-2t})`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rgo::{default_max_proposals, rgo_budget, rgo_sample, MinTracker, RgoRequest, DEFAULT_BATCH};
use crate::target::{QueryLedger, Target};

/// How many conditional samples back each score estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleCountPolicy {
    Fixed {
        n: usize,
    },
    /// `n = clamp(ceil(c * cov_hint * e^{-2t} / (1 - e^{-2t})^2 / eps^2), n_min, n_max)`.
    Theory {
        c: f64,
        eps: f64,
        n_min: usize,
        n_max: usize,
    },
    /// Fire a fixed number of proposals and average every acceptance. When
    /// none are accepted the lowest-potential proposal stands in as the
    /// single sample.
    ProposalBudget {
        proposals: u64,
    },
}

impl Default for SampleCountPolicy {
    fn default() -> Self {
        SampleCountPolicy::ProposalBudget { proposals: 2200 }
    }
}

impl SampleCountPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SampleCountPolicy::Fixed { n: 0 } => Err(Error::config("fixed sample count must be positive")),
            SampleCountPolicy::Theory { c, eps, n_min, n_max } => {
                if !(c > 0.0 && eps > 0.0) {
                    return Err(Error::config(format!("theory policy needs c, eps > 0, got c={c}, eps={eps}")));
                }
                if n_min == 0 || n_max < n_min {
                    return Err(Error::config(format!(
                        "theory policy needs 1 <= n_min <= n_max, got {n_min}..{n_max}"
                    )));
                }
                Ok(())
            }
            SampleCountPolicy::ProposalBudget { proposals: 0 } => {
                Err(Error::config("proposal budget must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Requested sample count at time `t`; `None` for the proposal-budget policy,
/// whose sample count is whatever the budget yields.
pub fn sample_count(policy: &SampleCountPolicy, t: f64, cov_hint: f64) -> Option<usize> {
    match *policy {
        SampleCountPolicy::Fixed { n } => Some(n),
        SampleCountPolicy::Theory { c, eps, n_min, n_max } => {
            let e2 = (-2.0 * t).exp();
            let denom = -(-2.0 * t).exp_m1();
            let raw = (c * cov_hint * e2 / (denom * denom) / (eps * eps)).ceil();
            Some(if raw.is_finite() {
                (raw.max(0.0) as usize).clamp(n_min, n_max)
            } else {
                n_max
            })
        }
        SampleCountPolicy::ProposalBudget { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub n_used: usize,
    pub proposals_used: u64,
    pub envelope_violations: u64,
    pub vstar_improved: bool,
    /// Set when the budget produced no acceptance and the best proposal was used.
    pub fallback: bool,
}

/// Per-estimate knobs passed through to the rejection sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub batch_size: usize,
    /// Overrides the default proposal cap of count-based policies.
    pub max_proposals: Option<u64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            max_proposals: None,
        }
    }
}

/// The estimator applied to a given set of conditional samples.
pub fn score_from_samples(t: f64, x: &[f64], samples: &[Vec<f64>]) -> Vec<f64> {
    let shrink = (-t).exp();
    let denom = -(-2.0 * t).exp_m1();
    let n = samples.len() as f64;
    let mut out = vec![0.0; x.len()];
    for z in samples {
        for ((o, zi), xi) in out.iter_mut().zip(z).zip(x) {
            *o += shrink * zi - xi;
        }
    }
    out.iter_mut().for_each(|o| *o /= n * denom);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_score(
    target: &Target,
    tracker: &mut MinTracker,
    t: f64,
    x: &[f64],
    policy: &SampleCountPolicy,
    opts: &ScoreOptions,
    ledger: &QueryLedger,
    rng: &mut impl Rng,
) -> Result<ScoreEstimate> {
    let cov_hint = target.dim() as f64;
    let (res, fallback) = match *policy {
        SampleCountPolicy::ProposalBudget { proposals } => {
            let mut res = rgo_budget(target, tracker, t, x, proposals, opts.batch_size, ledger, rng)?;
            let fallback = res.samples.is_empty();
            if fallback {
                match res.best_proposal.clone() {
                    Some((z, _)) => res.samples.push(z),
                    None => {
                        return Err(Error::RgoStarved {
                            t,
                            proposals_used: res.proposals_used,
                        })
                    }
                }
            }
            (res, fallback)
        }
        _ => {
            let n = sample_count(policy, t, cov_hint).unwrap_or(1);
            let req = RgoRequest {
                t,
                x: x.to_vec(),
                n,
                max_proposals: opts
                    .max_proposals
                    .unwrap_or_else(|| default_max_proposals(target, tracker, t, x, n)),
                batch_size: opts.batch_size,
            };
            (rgo_sample(target, tracker, &req, ledger, rng)?, false)
        }
    };
    Ok(ScoreEstimate {
        t,
        x: x.to_vec(),
        value: score_from_samples(t, x, &res.samples),
        n_used: res.samples.len(),
        proposals_used: res.proposals_used,
        envelope_violations: res.envelope_violations,
        vstar_improved: res.vstar_improved,
        fallback,
    })
}

/// Which score is compared against the analytic one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreSource {
    Analytic,
    MonteCarlo { policy: SampleCountPolicy, opts: ScoreOptions },
}

/// Mean and standard deviation of `|s(t, X) - grad log p_t(X)|^2` over `X ~ p_t`.
pub fn score_l2_error(
    target: &Target,
    tracker: &mut MinTracker,
    t: f64,
    source: &ScoreSource,
    n_eval: usize,
    ledger: &QueryLedger,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let gmm = match target.mixture() {
        Some((_, gmm)) if target.has_analytic_score() => gmm,
        _ => {
            return Err(Error::UnsupportedTarget(format!(
                "{} has no closed-form OU score",
                target.name()
            )))
        }
    };
    if n_eval == 0 {
        return Err(Error::argument("need at least one evaluation point"));
    }
    let shrink = (-t).exp();
    let sd = (-(-2.0 * t).exp_m1()).sqrt();
    let mut errs = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let x0 = gmm.sample(rng);
        let x: Vec<f64> = x0
            .iter()
            .map(|v| shrink * v + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let exact = target.analytic_score_at_time(t, &x).expect("checked above")?;
        let est = match source {
            ScoreSource::Analytic => exact.clone(),
            ScoreSource::MonteCarlo { policy, opts } => {
                estimate_score(target, tracker, t, &x, policy, opts, ledger, rng)?.value
            }
        };
        errs.push(est.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = if errs.len() > 1 {
        errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_and_theory_counts() {
        assert_eq!(sample_count(&SampleCountPolicy::Fixed { n: 100 }, 3.0, 2.0), Some(100));
        let theory = SampleCountPolicy::Theory {
            c: 1.0,
            eps: 0.5,
            n_min: 1,
            n_max: 1_000_000,
        };
        let direct = (2.0 * (-0.2f64).exp() / (1.0 - (-0.2f64).exp()).powi(2) / 0.25).ceil() as usize;
        assert_eq!(direct, 200);
        assert_eq!(sample_count(&theory, 0.1, 2.0), Some(direct));
        let clamped = SampleCountPolicy::Theory {
            c: 1.0,
            eps: 0.5,
            n_min: 5,
            n_max: 1_000_000,
        };
        assert_eq!(sample_count(&clamped, 5.0, 2.0), Some(5));
        assert_eq!(sample_count(&SampleCountPolicy::ProposalBudget { proposals: 10 }, 1.0, 2.0), None);
    }

    #[test]
    fn policy_validation() {
        assert!(SampleCountPolicy::Fixed { n: 0 }.validate().is_err());
        assert!(SampleCountPolicy::ProposalBudget { proposals: 0 }.validate().is_err());
        let bad = SampleCountPolicy::Theory {
            c: 1.0,
            eps: 0.1,
            n_min: 10,
            n_max: 5,
        };
        assert!(bad.validate().is_err());
        assert!(SampleCountPolicy::default().validate().is_ok());
    }

    #[test]
    fn estimator_formula() {
        let t = 0.7f64;
        let x = [0.5, -1.0];
        let zs = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let s = score_from_samples(t, &x, &zs);
        for i in 0..2 {
            let manual = zs.iter().map(|z| ((-t).exp() * z[i] - x[i]) / (1.0 - (-2.0 * t).exp())).sum::<f64>() / 2.0;
            assert!((s[i] - manual).abs() < 1e-14);
        }
    }

    #[test]
    fn policy_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct W {
            policy: SampleCountPolicy,
        }
        for p in [
            SampleCountPolicy::Fixed { n: 3 },
            SampleCountPolicy::ProposalBudget { proposals: 2200 },
            SampleCountPolicy::Theory {
                c: 1.0,
                eps: 0.1,
                n_min: 1,
                n_max: 9,
            },
        ] {
            let s = toml::to_string(&W { policy: p }).unwrap();
            assert_eq!(toml::from_str::<W>(&s).unwrap().policy, p);
        }
    }
}
