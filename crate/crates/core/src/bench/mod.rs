//! Config-driven experiments: sampler comparisons at matched oracle cost,
//! parameter sweeps, and the score-error and acceptance-count studies.

mod config;
mod experiment;
mod studies;

use std::path::Path;

pub use config::{
    AcceptanceStudy, AlgorithmSpec, Budgets, ExperimentConfig, MetricKind, ScoreErrorStudy, Sweep,
};
pub use experiment::{
    cached_ground_truth, ground_truth_key, matched_total, run_experiment, CellResult, ExperimentOutcome,
};
pub use studies::{
    acceptance_study, score_error_study, write_acceptance_csv, write_score_error_csv, AcceptanceRow, ScoreErrorRow,
};

use crate::error::Result;
use crate::schedule::Schedule;

/// A realized schedule with its step count and step sizes spelled out.
pub fn schedule_manifest(s: &Schedule) -> serde_json::Value {
    let mut v = serde_json::to_value(s).expect("schedules serialize");
    v["N"] = serde_json::json!(s.steps());
    v["gammas"] = serde_json::json!(s.gammas());
    v
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| crate::Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
