use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::UlaInit;
use crate::error::{Error, Result};
use crate::metrics::MetricsOptions;
use crate::schedule::ScheduleSpec;
use crate::score::{SampleCountPolicy, ScoreOptions};
use crate::target::{GmmPreset, TargetSpec};

/// One experiment file: a target, the samplers to compare and the studies to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for sweep cells; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    pub target: TargetSpec,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmSpec>,
    /// Proposals per score evaluation; ULA gets the same total.
    #[serde(default = "default_budgets")]
    pub oracle_budget: Budgets,
    #[serde(default = "default_n_output")]
    pub n_output_samples: usize,
    #[serde(default = "default_n_ground_truth")]
    pub ground_truth_samples: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub metric_options: MetricsOptions,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub score_error: Option<ScoreErrorStudy>,
    #[serde(default)]
    pub acceptance: Option<AcceptanceStudy>,
}

fn default_budgets() -> Budgets {
    Budgets::One(2200)
}
fn default_n_output() -> usize {
    1000
}
fn default_n_ground_truth() -> usize {
    100_000
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Mmd, MetricKind::W2, MetricKind::ModeWeights, MetricKind::Moments]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budgets {
    One(u64),
    Many(Vec<u64>),
}

impl Budgets {
    pub fn values(&self) -> Vec<u64> {
        match self {
            Budgets::One(b) => vec![*b],
            Budgets::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mmd,
    W2,
    ModeWeights,
    Moments,
    /// Share of samples inside the annulus of a `gmm+annulus` target.
    ShellMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Zodmc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        schedule: ScheduleSpec,
        /// Replaces the budget-driven proposal policy.
        #[serde(default)]
        policy: Option<SampleCountPolicy>,
        #[serde(default)]
        score: ScoreOptions,
    },
    Ula {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_ula_step")]
        step: f64,
        #[serde(default = "default_ula_init")]
        init: UlaInit,
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
}

fn default_ula_step() -> f64 {
    0.01
}
fn default_ula_init() -> UlaInit {
    UlaInit::Origin
}
fn default_fd_step() -> f64 {
    1e-4
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::Zodmc { label, .. } => label.clone().unwrap_or_else(|| "zodmc".into()),
            AlgorithmSpec::Ula { label, .. } => label.clone().unwrap_or_else(|| "ula".into()),
        }
    }
}

/// A parameter varied across cells, crossed with the budget list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// Moves the benchmark mixture's `(0, 11)` mode to `(0, R)`.
    Radius { values: Vec<f64> },
    /// Dimension of a randomized or standard-normal target.
    Dim { values: Vec<usize> },
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Radius { .. } => "radius",
            Sweep::Dim { .. } => "dim",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::Radius { values } => values.len(),
            Sweep::Dim { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_string(&self, i: usize) -> String {
        match self {
            Sweep::Radius { values } => format!("{}", values[i]),
            Sweep::Dim { values } => format!("{}", values[i]),
        }
    }

    /// The target with sweep value `i` applied.
    pub fn apply(&self, target: &TargetSpec, i: usize) -> Result<TargetSpec> {
        let mut out = target.clone();
        match (self, &mut out) {
            (
                Sweep::Radius { values },
                TargetSpec::Gmm { mixture } | TargetSpec::GmmAnnulus { mixture, .. },
            ) if mixture.preset == Some(GmmPreset::Benchmark2d) => mixture.radius = Some(values[i]),
            (Sweep::Dim { values }, TargetSpec::RandomizedGmm { dim, .. }) => *dim = values[i],
            (Sweep::Dim { values }, TargetSpec::Gmm { mixture }) if mixture.preset == Some(GmmPreset::StandardNormal) => {
                mixture.dim = Some(values[i])
            }
            _ => {
                return Err(Error::config(format!(
                    "a {} sweep does not apply to this target",
                    self.name()
                )))
            }
        }
        Ok(out)
    }
}

/// Score error along a schedule grid against the closed-form score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreErrorStudy {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Conditional samples per estimate; one curve each.
    #[serde(default = "default_study_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub score: ScoreOptions,
}

fn default_study_n() -> Vec<usize> {
    vec![100]
}
fn default_n_eval() -> usize {
    200
}

/// Accepted-proposal counts at the states visited by sampler trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceStudy {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// Proposals fired per state.
    #[serde(default = "default_study_proposals")]
    pub proposals: u64,
    /// Policy driving the trajectories themselves.
    #[serde(default)]
    pub policy: SampleCountPolicy,
    #[serde(default)]
    pub score: ScoreOptions,
}

fn default_trajectories() -> usize {
    1000
}
fn default_study_proposals() -> u64 {
    10_000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without running a sampler.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("experiment needs a name"));
        }
        let budgets = self.oracle_budget.values();
        if budgets.is_empty() || budgets.contains(&0) {
            return Err(Error::config("oracle budgets must be a nonempty list of positive counts"));
        }
        if self.n_output_samples < 2 {
            return Err(Error::config("n_output_samples must be at least 2"));
        }
        let cells = match &self.sweep {
            Some(s) if s.is_empty() => return Err(Error::config("sweep has no values")),
            Some(s) => (0..s.len()).map(|i| s.apply(&self.target, i)).collect::<Result<Vec<_>>>()?,
            None => vec![self.target.clone()],
        };
        for t in &cells {
            t.build(self.seed)?;
        }
        for a in &self.algorithms {
            match a {
                AlgorithmSpec::Zodmc {
                    schedule, policy, score, ..
                } => {
                    schedule.build()?;
                    if let Some(p) = policy {
                        p.validate()?;
                    }
                    if score.batch_size == 0 {
                        return Err(Error::config("proposal batch size must be positive"));
                    }
                }
                AlgorithmSpec::Ula { step, fd_step, .. } => {
                    if !(*step > 0.0 && *fd_step > 0.0) {
                        return Err(Error::config("ULA step and fd_step must be positive"));
                    }
                }
            }
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(AlgorithmSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("algorithm labels must be distinct"));
        }
        if let Some(s) = &self.score_error {
            s.schedule.build()?;
            if s.n.is_empty() || s.n.contains(&0) || s.n_eval == 0 {
                return Err(Error::config("score_error needs positive n values and n_eval"));
            }
        }
        if let Some(a) = &self.acceptance {
            a.schedule.build()?;
            a.policy.validate()?;
            if a.trajectories == 0 || a.proposals == 0 {
                return Err(Error::config("acceptance study needs trajectories and proposals"));
            }
        }
        Ok(())
    }
}
