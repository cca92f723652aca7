//! Potential oracles and query accounting.
//!
//! A [`Target`] wraps a potential `V` with `p ∝ exp(-V)`. The only way to
//! evaluate `V` is through [`Target::eval_potential`] / [`Target::eval_batch`],
//! both of which charge a [`QueryLedger`]; samplers never see the raw closure.
//! Analytic extras (normalized log density, OU-evolved scores, an exact
//! sampler) are carried for metrics and ground truth only and are never
//! charged, since they are not part of the zeroth-order interface.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Gmm, GmmSpec};
use crate::optim::{self, MinimizeOptions};
use crate::ou::OuScoreCache;
use crate::rng;

pub type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Optimization,
    ScoreEstimation,
    Baseline,
    GroundTruth,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Optimization,
        Phase::ScoreEstimation,
        Phase::Baseline,
        Phase::GroundTruth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Optimization => "optimization",
            Phase::ScoreEstimation => "score-estimation",
            Phase::Baseline => "baseline",
            Phase::GroundTruth => "ground-truth",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Per-phase potential-evaluation counters. The total is always derived from
/// the phase counters, so the two can never disagree.
#[derive(Debug, Default)]
pub struct QueryLedger {
    counts: [AtomicU64; 4],
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, phase: Phase, n: u64) {
        self.counts[phase.index()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn count(&self, phase: Phase) -> u64 {
        self.counts[phase.index()].load(Ordering::Relaxed)
    }

    pub fn zeroth_order_count(&self) -> u64 {
        Phase::ALL.iter().map(|p| self.count(*p)).sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let by_phase: BTreeMap<String, u64> =
            Phase::ALL.iter().map(|p| (p.name().to_string(), self.count(*p))).collect();
        LedgerSnapshot {
            zeroth_order_count: by_phase.values().sum(),
            by_phase,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub zeroth_order_count: u64,
    pub by_phase: BTreeMap<String, u64>,
}

impl LedgerSnapshot {
    pub fn phase(&self, phase: Phase) -> u64 {
        self.by_phase.get(phase.name()).copied().unwrap_or(0)
    }
}

/// A target distribution given by its potential.
#[derive(Clone)]
pub struct Target {
    name: String,
    dim: usize,
    potential: Arc<PotentialFn>,
    log_density: Option<Arc<PotentialFn>>,
    mixture: Option<Arc<(GmmSpec, Gmm)>>,
    ou_scores: Option<Arc<OuScoreCache>>,
    /// A mixture `q` and `log M` with `exp(-V) <= M q` everywhere, known by construction.
    dominating: Option<Arc<(GmmSpec, f64)>>,
    mode_centers: Vec<Vec<f64>>,
    pub second_moment_hint: Option<f64>,
    pub smoothness_hint: Option<f64>,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("has_log_density", &self.log_density.is_some())
            .field("has_ou_scores", &self.ou_scores.is_some())
            .field("second_moment_hint", &self.second_moment_hint)
            .field("smoothness_hint", &self.smoothness_hint)
            .finish()
    }
}

impl Target {
    /// A bare zeroth-order target with no analytic extras.
    pub fn from_potential(
        name: impl Into<String>,
        dim: usize,
        potential: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("target dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            potential: Arc::new(potential),
            log_density: None,
            mixture: None,
            ou_scores: None,
            dominating: None,
            mode_centers: Vec::new(),
            second_moment_hint: None,
            smoothness_hint: None,
        })
    }

    /// `N(0, I_d)` with `V(x) = |x|^2 / 2` (no normalizing constant).
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        let mut t = make_gmm(&GmmSpec::isotropic(vec![0.0; dim], 1.0))?;
        t.name = format!("standard-gaussian-{dim}d");
        t.potential = Arc::new(|x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>());
        // exp(-V) is (2 pi)^{d/2} times the density, so the envelope constant grows by that factor
        let shift = 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        t.dominating = t.dominating.map(|d| Arc::new((d.0.clone(), d.1 + shift)));
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::config(format!(
                "point has dimension {} but target {} has dimension {}",
                x.len(),
                self.name,
                self.dim
            )));
        }
        Ok(())
    }

    /// One charged potential evaluation.
    pub fn eval_potential(&self, x: &[f64], ledger: &QueryLedger, phase: Phase) -> Result<f64> {
        self.check_dim(x)?;
        ledger.record(phase, 1);
        Ok((self.potential)(x))
    }

    /// Evaluates `V` at each row of the row-major `points` buffer, charging
    /// the ledger once per row.
    pub fn eval_batch(&self, points: &[f64], out: &mut [f64], ledger: &QueryLedger, phase: Phase) -> Result<()> {
        if !points.len().is_multiple_of(self.dim) || points.len() / self.dim != out.len() {
            return Err(Error::config(format!(
                "batch of {} values does not hold {} points of dimension {}",
                points.len(),
                out.len(),
                self.dim
            )));
        }
        ledger.record(phase, out.len() as u64);
        for (o, x) in out.iter_mut().zip(points.chunks_exact(self.dim)) {
            *o = (self.potential)(x);
        }
        Ok(())
    }

    pub fn has_analytic_log_density(&self) -> bool {
        self.log_density.is_some()
    }

    /// Unnormalized log density, uncharged; ground-truth use only.
    pub fn analytic_log_density(&self, x: &[f64]) -> Option<f64> {
        self.log_density.as_ref().map(|f| f(x))
    }

    pub fn has_analytic_score(&self) -> bool {
        self.ou_scores.is_some()
    }

    /// `grad log p_t(x)` for the OU-evolved target, when available in closed form.
    pub fn analytic_score_at_time(&self, t: f64, x: &[f64]) -> Option<Result<Vec<f64>>> {
        self.ou_scores.as_ref().map(|c| c.score(t, x))
    }

    /// The mixture parameters and evaluator, when the target is exactly a GMM.
    pub fn mixture(&self) -> Option<(&GmmSpec, &Gmm)> {
        self.mixture.as_ref().map(|m| (&m.0, &m.1))
    }

    pub fn dominating_proposal(&self) -> Option<(&GmmSpec, f64)> {
        self.dominating.as_ref().map(|d| (&d.0, d.1))
    }

    /// Representative mode locations used for mode-weight metrics.
    pub fn mode_centers(&self) -> &[Vec<f64>] {
        &self.mode_centers
    }
}

/// Builds `V(x) = -log sum_i w_i N(x; mu_i, Sigma_i)`.
pub fn make_gmm(spec: &GmmSpec) -> Result<Target> {
    let gmm = Gmm::new(spec)?;
    let d = spec.dim();
    let shared = Arc::new((spec.clone(), gmm));
    let for_potential = Arc::clone(&shared);
    let for_density = Arc::clone(&shared);
    let smoothness_hint = if spec.n_components() == 1 {
        // V is exactly quadratic around the mean with curvature lambda_max(Sigma^{-1})
        let cov = crate::gmm::to_matrix(&spec.covariances[0]);
        cov.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min).recip().into()
    } else {
        None
    };
    let inflation = 3.0;
    Ok(Target {
        name: format!("gmm-{}x{}d", spec.n_components(), d),
        dim: d,
        potential: Arc::new(move |x: &[f64]| -for_potential.1.log_density(x)),
        log_density: Some(Arc::new(move |x: &[f64]| for_density.1.log_density(x))),
        ou_scores: Some(Arc::new(OuScoreCache::new(spec.clone())?)),
        // N(x; mu, Sigma) <= 3^{d/2} N(x; mu, 3 Sigma) componentwise
        dominating: Some(Arc::new((spec.inflated(inflation), 0.5 * d as f64 * inflation.ln()))),
        mode_centers: spec.means.clone(),
        mixture: Some(shared),
        second_moment_hint: Some(spec.second_moment()),
        smoothness_hint,
    })
}

/// `V(x) + height * floor(|x|) * 1{inner < |x| < outer}`.
pub fn apply_annulus_penalty(target: &Target, inner: f64, outer: f64, height: f64) -> Result<Target> {
    if !(inner >= 0.0 && inner < outer) {
        return Err(Error::config(format!("annulus needs 0 <= inner < outer, got ({inner}, {outer})")));
    }
    if !(height >= 0.0) || !height.is_finite() {
        return Err(Error::config(format!("annulus height must be nonnegative, got {height}")));
    }
    let penalty = move |x: &[f64]| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > inner && r < outer {
            height * r.floor()
        } else {
            0.0
        }
    };
    let base = Arc::clone(&target.potential);
    let base_density = target.log_density.clone();
    let mut out = target.clone();
    out.name = format!("{}+annulus({inner},{outer},{height})", target.name);
    out.potential = Arc::new(move |x: &[f64]| base(x) + penalty(x));
    out.log_density = base_density.map(|f| Arc::new(move |x: &[f64]| f(x) - penalty(x)) as Arc<PotentialFn>);
    out.ou_scores = None;
    out.mixture = None;
    // the penalty only removes mass, so a mixture target dominates itself with M = 1
    out.dominating = target.mixture.as_ref().map(|m| Arc::new((m.0.clone(), 0.0)));
    out.smoothness_hint = None;
    Ok(out)
}

/// Müller-Brown coefficients `(A, a, b, c, x0, y0)` per exponential term.
const MB_TERMS: [(f64, f64, f64, f64, f64, f64); 4] = [
    (-200.0, -1.0, 0.0, -10.0, 1.0, 0.0),
    (-100.0, -1.0, 0.0, -10.0, 0.0, 0.5),
    (-170.0, -6.5, 11.0, -6.5, -0.5, 1.5),
    (15.0, 0.7, 0.6, 0.7, -1.0, 1.0),
];

/// The four-exponential Müller-Brown surface `V_m`. With `standard_form` the
/// exponent of the `+15` term uses `(-0.7, -0.6, -0.7)` instead.
pub fn mueller_brown_vm(x: f64, y: f64, standard_form: bool) -> f64 {
    MB_TERMS
        .iter()
        .enumerate()
        .map(|(i, &(amp, a, b, c, x0, y0))| {
            let (a, b, c) = if i == 3 && standard_form { (-a, -b, -c) } else { (a, b, c) };
            let (dx, dy) = (x - x0, y - y0);
            amp * (a * dx * dx + b * dx * dy + c * dy * dy).exp()
        })
        .sum()
}

/// Local minimizer of `V_m` in the middle well, seeded at `(-0.05, 0.47)`.
pub fn mueller_brown_middle_well(standard_form: bool) -> [f64; 2] {
    let opts = MinimizeOptions {
        grad_tol: 1e-9,
        ..Default::default()
    };
    let m = optim::minimize(|p| mueller_brown_vm(p[0], p[1], standard_form), &[-0.05, 0.47], &opts);
    [m.point[0], m.point[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuellerBrownParams {
    /// Inverse temperature. Not given with the benchmark definition; 0.1
    /// keeps barrier heights O(10) so that all three wells carry mass.
    pub beta: f64,
    /// Center of the quadratic correction; defaults to the middle-well minimizer of `V_m`.
    pub center: Option<[f64; 2]>,
    pub mueller_standard_form: bool,
}

impl Default for MuellerBrownParams {
    fn default() -> Self {
        Self {
            beta: 0.1,
            center: None,
            mueller_standard_form: false,
        }
    }
}

/// `V = beta (V_m + V_q)`, `V_q = 35.0136 (x - xc)^2 + 59.8399 (y - yc)^2`.
pub fn make_mueller_brown(params: &MuellerBrownParams) -> Result<Target> {
    let beta = params.beta;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::config(format!("Mueller-Brown beta must be positive, got {beta}")));
    }
    let standard = params.mueller_standard_form;
    let [xc, yc] = params.center.unwrap_or_else(|| mueller_brown_middle_well(standard));
    let v = move |p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let vq = 35.0136 * (x - xc).powi(2) + 59.8399 * (y - yc).powi(2);
        beta * (mueller_brown_vm(x, y, standard) + vq)
    };
    let wells = [[-0.558, 1.442], [0.623, 0.028], [xc, yc]]
        .iter()
        .map(|seed| optim::minimize(v, seed, &MinimizeOptions::default()).point)
        .collect();
    let mut t = Target::from_potential(format!("mueller-brown(beta={beta})"), 2, v)?;
    t.log_density = Some(Arc::new(move |p: &[f64]| -v(p)));
    t.mode_centers = wells;
    Ok(t)
}

/// Preset mixtures available from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmmPreset {
    #[serde(rename = "benchmark-2d")]
    Benchmark2d,
    #[serde(rename = "score-study-5d")]
    ScoreStudy5d,
    StandardNormal,
}

/// Mixture parameters from a config: a preset (optionally rescaled) or explicit blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub preset: Option<GmmPreset>,
    /// For `benchmark-2d`: rescale means so the `(0, 11)` mode lands at `(0, radius)`.
    pub radius: Option<f64>,
    /// For `standard-normal`.
    pub dim: Option<usize>,
    pub weights: Option<Vec<f64>>,
    pub means: Option<Vec<Vec<f64>>>,
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
}

impl MixtureParams {
    pub fn resolve(&self) -> Result<GmmSpec> {
        let spec = match (self.preset, &self.weights, &self.means, &self.covariances) {
            (Some(p), None, None, None) => match p {
                GmmPreset::Benchmark2d => match self.radius {
                    Some(r) if r > 0.0 => GmmSpec::benchmark_2d_at_radius(r),
                    Some(r) => return Err(Error::config(format!("radius must be positive, got {r}"))),
                    None => GmmSpec::benchmark_2d(),
                },
                GmmPreset::ScoreStudy5d => GmmSpec::score_study_5d(),
                GmmPreset::StandardNormal => {
                    let d = self.dim.ok_or_else(|| Error::config("standard-normal preset needs `dim`"))?;
                    GmmSpec::isotropic(vec![0.0; d], 1.0)
                }
            },
            (None, Some(w), Some(m), Some(c)) => GmmSpec {
                weights: w.clone(),
                means: m.clone(),
                covariances: c.clone(),
            },
            _ => {
                return Err(Error::config(
                    "mixture needs either `preset` or all of `weights`, `means`, `covariances`",
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Declarative target definition, as loaded from experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    Gmm {
        #[serde(flatten)]
        mixture: MixtureParams,
    },
    #[serde(rename = "gmm+annulus")]
    GmmAnnulus {
        #[serde(default = "default_inner")]
        inner: f64,
        #[serde(default = "default_outer")]
        outer: f64,
        #[serde(default = "default_height")]
        height: f64,
        #[serde(flatten)]
        mixture: MixtureParams,
    },
    MuellerBrown {
        #[serde(flatten)]
        params: MuellerBrownParams,
    },
    RandomizedGmm {
        dim: usize,
        /// Generator seed; falls back to the experiment seed.
        seed: Option<u64>,
    },
}

fn default_inner() -> f64 {
    5.0
}
fn default_outer() -> f64 {
    11.0
}
fn default_height() -> f64 {
    8.0
}

impl TargetSpec {
    pub fn build(&self, experiment_seed: u64) -> Result<Target> {
        match self {
            TargetSpec::Gmm { mixture } => make_gmm(&mixture.resolve()?),
            TargetSpec::GmmAnnulus {
                inner,
                outer,
                height,
                mixture,
            } => apply_annulus_penalty(&make_gmm(&mixture.resolve()?)?, *inner, *outer, *height),
            TargetSpec::MuellerBrown { params } => make_mueller_brown(params),
            TargetSpec::RandomizedGmm { dim, seed } => {
                if *dim == 0 {
                    return Err(Error::config("randomized-gmm needs dim >= 1"));
                }
                let mut r = rng::stream(seed.unwrap_or(experiment_seed), rng::domain::CELL, u64::MAX);
                Ok(make_gmm(&GmmSpec::randomized(*dim, &mut r))?.with_name(format!("randomized-gmm-{dim}d")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn standard_gaussian_minimum_is_zero() {
        let t = Target::standard_gaussian(3).unwrap();
        let ledger = QueryLedger::new();
        assert_eq!(t.eval_potential(&[0.0; 3], &ledger, Phase::Baseline).unwrap(), 0.0);
    }

    #[test]
    fn every_call_is_charged() {
        let t = make_gmm(&GmmSpec::benchmark_2d()).unwrap();
        let ledger = QueryLedger::new();
        t.eval_potential(&[1.0, 2.0], &ledger, Phase::Optimization).unwrap();
        t.eval_potential(&[1.0, 2.0], &ledger, Phase::ScoreEstimation).unwrap();
        assert_eq!(ledger.zeroth_order_count(), 2);
        let mut out = [0.0; 3];
        t.eval_batch(&[0.0; 6], &mut out, &ledger, Phase::Baseline).unwrap();
        let snap = ledger.snapshot();
        assert_eq!(snap.zeroth_order_count, 5);
        assert_eq!(snap.phase(Phase::Baseline), 3);
        assert_eq!(snap.by_phase.values().sum::<u64>(), snap.zeroth_order_count);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let t = Target::standard_gaussian(2).unwrap();
        let ledger = QueryLedger::new();
        assert!(matches!(
            t.eval_potential(&[0.0; 3], &ledger, Phase::Baseline),
            Err(Error::Config(_))
        ));
        assert_eq!(ledger.zeroth_order_count(), 0);
    }

    #[test]
    fn benchmark_potential_at_origin_matches_component_sum() {
        let spec = GmmSpec::benchmark_2d();
        let t = make_gmm(&spec).unwrap();
        // direct sum of w_i N(0; mu_i, Sigma_i) with 2x2 closed-form inverses
        let mut dens = 0.0;
        for ((w, mu), c) in spec.weights.iter().zip(&spec.means).zip(&spec.covariances) {
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let (dx, dy) = (-mu[0], -mu[1]);
            let q = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
            dens += w * (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        let v = t.eval_potential(&[0.0, 0.0], &QueryLedger::new(), Phase::Baseline).unwrap();
        assert!((v + dens.ln()).abs() < 1e-12, "{v} vs {}", -dens.ln());
        assert!((t.second_moment_hint.unwrap() - 123.08).abs() < 1e-12);
    }

    #[test]
    fn lone_gaussian_potential_has_normalizer() {
        let t = make_gmm(&GmmSpec::isotropic(vec![0.0; 3], 1.0)).unwrap();
        let x = [0.3, -1.0, 2.0];
        let v = t.eval_potential(&x, &QueryLedger::new(), Phase::Baseline).unwrap();
        let expected = 0.5 * (0.09 + 1.0 + 4.0) + 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-12);
        assert_eq!(t.smoothness_hint, Some(1.0));
    }

    #[test]
    fn density_is_consistent_with_potential() {
        let mut r = rng::stream(11, 0, 0);
        let targets = vec![
            Target::standard_gaussian(2).unwrap(),
            make_gmm(&GmmSpec::benchmark_2d()).unwrap(),
            make_gmm(&GmmSpec::score_study_5d()).unwrap(),
            apply_annulus_penalty(&make_gmm(&GmmSpec::benchmark_2d()).unwrap(), 5.0, 11.0, 8.0).unwrap(),
            make_mueller_brown(&MuellerBrownParams::default()).unwrap(),
        ];
        for t in targets {
            let ledger = QueryLedger::new();
            let mut consts = Vec::new();
            for _ in 0..100 {
                let x: Vec<f64> = (0..t.dim()).map(|_| r.gen_range(-3.0..3.0)).collect();
                let v = t.eval_potential(&x, &ledger, Phase::Baseline).unwrap();
                consts.push(v + t.analytic_log_density(&x).unwrap());
            }
            let spread = consts.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - consts.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread < 1e-9, "{}: spread {spread}", t.name());
        }
    }

    #[test]
    fn annulus_penalty_values() {
        let base = make_gmm(&GmmSpec::benchmark_2d()).unwrap();
        let pen = apply_annulus_penalty(&base, 5.0, 11.0, 8.0).unwrap();
        let zero = apply_annulus_penalty(&base, 5.0, 11.0, 0.0).unwrap();
        let l = QueryLedger::new();
        let x = [7.3, 0.0];
        let diff = pen.eval_potential(&x, &l, Phase::Baseline).unwrap()
            - base.eval_potential(&x, &l, Phase::Baseline).unwrap();
        assert!((diff - 56.0).abs() < 1e-9);
        let mut r = rng::stream(2, 0, 0);
        for _ in 0..500 {
            let x: [f64; 2] = [r.gen_range(-15.0..15.0), r.gen_range(-15.0..15.0)];
            let rad = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let b = base.eval_potential(&x, &l, Phase::Baseline).unwrap();
            let p = pen.eval_potential(&x, &l, Phase::Baseline).unwrap();
            assert_eq!(zero.eval_potential(&x, &l, Phase::Baseline).unwrap(), b);
            let k = (p - b) / 8.0;
            if rad <= 5.0 || rad >= 11.0 {
                assert_eq!(p, b);
            } else {
                assert!(k >= 0.0 && (k - k.round()).abs() < 1e-9 && p - b > 0.0);
            }
        }
        assert!(!pen.has_analytic_score());
        assert!(apply_annulus_penalty(&base, 5.0, 4.0, 1.0).is_err());
    }

    #[test]
    fn mueller_brown_terms() {
        // direct evaluation of the four exponentials at (1, 0)
        let direct = -200.0 * 0.0f64.exp()
            + -100.0 * (-1.0 - 10.0 * 0.25f64).exp()
            + -170.0 * (-6.5 * 2.25 + 11.0 * 1.5 * -1.5 - 6.5 * 2.25f64).exp()
            + 15.0 * (0.7 * 4.0 + 0.6 * 2.0 * (-1.0) + 0.7f64).exp();
        assert!((mueller_brown_vm(1.0, 0.0, false) - direct).abs() < 1e-9);
        let c = mueller_brown_middle_well(false);
        assert!((c[0] + 0.05).abs() < 0.01 && (c[1] - 0.467).abs() < 0.01, "{c:?}");
        let t = make_mueller_brown(&MuellerBrownParams::default()).unwrap();
        let v = t.eval_potential(&c, &QueryLedger::new(), Phase::Baseline).unwrap();
        assert!((v - 0.1 * mueller_brown_vm(c[0], c[1], false)).abs() < 1e-12);
        assert_eq!(t.mode_centers().len(), 3);
    }

    #[test]
    fn middle_well_matches_grid_search() {
        let c = mueller_brown_middle_well(false);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = 600;
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = (-0.3 + 0.6 * i as f64 / n as f64, 0.2 + 0.6 * j as f64 / n as f64);
                let v = mueller_brown_vm(x, y, false);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        assert!((c[0] - best.1).abs() < 2e-3 && (c[1] - best.2).abs() < 2e-3);
        assert!(mueller_brown_vm(c[0], c[1], false) <= best.0 + 1e-9);
    }

    #[test]
    fn target_spec_round_trips_through_toml() {
        let src = r#"
            kind = "gmm+annulus"
            preset = "benchmark-2d"
            height = 8.0
        "#;
        let spec: TargetSpec = toml::from_str(src).unwrap();
        let t = spec.build(0).unwrap();
        assert!(t.has_analytic_log_density());
        let mb: TargetSpec = toml::from_str("kind = \"mueller-brown\"\nbeta = 0.2").unwrap();
        assert!(matches!(mb, TargetSpec::MuellerBrown { params } if params.beta == 0.2));
        let bad: TargetSpec = toml::from_str("kind = \"gmm\"\nweights = [1.0]").unwrap();
        assert!(bad.build(0).is_err());
    }
}
