//! Discretization grids `0 = t_0 < ... < t_N = T - delta` for the reverse process.
//!
//! Three step-size families are supported:
//!
//! * `constant`: `gamma_k = (T - delta) / N`.
//! * `linear`: `T - t_k = (delta + (N - k) g)^2` with `g = (sqrt(T) - delta) / N`,
//!   then rescaled affinely so the grid spans exactly `[0, T - delta]`.
//! * `exp_decay`: `gamma_k = kappa * min(1, T - t_k)`: constant while far
//!   from the data end, geometric once `T - t_k < 1`. `kappa` is bisected so
//!   that exactly `N` steps land on `T - delta`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
    ExpDecay,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Linear => "linear",
            ScheduleKind::ExpDecay => "exp_decay",
        })
    }
}

/// Schedule parameters as written in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(default = "default_kind")]
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    pub delta: f64,
}

fn default_kind() -> ScheduleKind {
    ScheduleKind::ExpDecay
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::ExpDecay,
            horizon: 2.0,
            steps: 25,
            delta: 5e-3,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule> {
        build_schedule(self.kind, self.horizon, self.steps, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub delta: f64,
    pub grid: Vec<f64>,
    pub kappa: Option<f64>,
}

impl Schedule {
    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.grid.len().saturating_sub(1)
    }

    /// `gamma_k = t_{k+1} - t_k`.
    pub fn gammas(&self) -> Vec<f64> {
        self.grid.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Forward-process time `T - t_k` at which step `k` evaluates the score.
    pub fn score_time(&self, k: usize) -> f64 {
        self.horizon - self.grid[k]
    }
}

pub fn build_schedule(kind: ScheduleKind, horizon: f64, steps: usize, delta: f64) -> Result<Schedule> {
    if !(horizon > 1.0) || !horizon.is_finite() {
        return Err(Error::config(format!("horizon T must exceed 1, got {horizon}")));
    }
    if !(delta > 0.0 && delta < 1.0 && delta < horizon) {
        return Err(Error::config(format!("early-stop delta must lie in (0, 1), got {delta}")));
    }
    let min_steps = if kind == ScheduleKind::Constant { 1 } else { 2 };
    if steps < min_steps {
        return Err(Error::config(format!("{kind} schedule needs N >= {min_steps}, got {steps}")));
    }
    let end = horizon - delta;
    let n = steps as f64;
    let (mut grid, kappa) = match kind {
        ScheduleKind::Constant => ((0..=steps).map(|k| end * k as f64 / n).collect::<Vec<_>>(), None),
        ScheduleKind::Linear => {
            let g = (horizon.sqrt() - delta) / n;
            let raw: Vec<f64> = (0..=steps)
                .map(|k| horizon - (delta + (steps - k) as f64 * g).powi(2))
                .collect();
            // the printed form ends at T - delta^2; stretch onto [0, T - delta]
            let (lo, hi) = (raw[0], raw[steps]);
            (raw.iter().map(|t| (t - lo) / (hi - lo) * end).collect(), None)
        }
        ScheduleKind::ExpDecay => {
            let kappa = solve_kappa(horizon, steps, end)?;
            (exp_decay_grid(horizon, steps, kappa), Some(kappa))
        }
    };
    grid[0] = 0.0;
    grid[steps] = end;
    let s = Schedule {
        kind,
        horizon,
        delta,
        grid,
        kappa,
    };
    let violations = validate_schedule(&s);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::config(format!("schedule fails its invariants: {}", msgs.join("; "))));
    }
    Ok(s)
}

fn exp_decay_grid(horizon: f64, steps: usize, kappa: f64) -> Vec<f64> {
    let mut grid = Vec::with_capacity(steps + 1);
    let mut t = 0.0;
    grid.push(t);
    for _ in 0..steps {
        t += kappa * (horizon - t).min(1.0);
        grid.push(t);
    }
    grid
}

/// Largest `kappa` tried; at `kappa = 1` the grid would jump straight to `T`.
const KAPPA_MAX: f64 = 1.0 - 1e-12;

fn solve_kappa(horizon: f64, steps: usize, end: f64) -> Result<f64> {
    let landing = |kappa: f64, n: usize| exp_decay_grid(horizon, n, kappa)[n];
    if landing(KAPPA_MAX, steps) < end {
        let min_feasible = (steps + 1..).find(|n| landing(KAPPA_MAX, *n) >= end).unwrap_or(usize::MAX);
        return Err(Error::config(format!(
            "exp_decay cannot reach T - delta = {end} in {steps} steps with kappa < 1; \
             the minimal feasible N is {min_feasible}"
        )));
    }
    // landing is increasing in kappa
    let (mut lo, mut hi) = (0.0, KAPPA_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if landing(mid, steps) < end {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooShort,
    BadHorizon(f64),
    BadDelta(f64),
    StartNotZero(f64),
    EndMismatch { end: f64, expected: f64 },
    NonIncreasing { k: usize },
    ExpDecayStep { k: usize, gamma: f64, expected: f64 },
    ConsecutiveRatio { k: usize, ratio: f64 },
    MissingKappa,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooShort => write!(f, "grid needs at least two points"),
            Violation::BadHorizon(t) => write!(f, "horizon T = {t} must exceed 1"),
            Violation::BadDelta(d) => write!(f, "delta = {d} must lie in (0, 1)"),
            Violation::StartNotZero(t) => write!(f, "grid starts at {t}, not 0"),
            Violation::EndMismatch { end, expected } => write!(f, "grid ends at {end}, not T - delta = {expected}"),
            Violation::NonIncreasing { k } => write!(f, "non-increasing at {k}"),
            Violation::ExpDecayStep { k, gamma, expected } => {
                write!(f, "exp_decay step {k} is {gamma}, expected {expected}")
            }
            Violation::ConsecutiveRatio { k, ratio } => {
                write!(f, "consecutive-ratio bound: gamma_{k}/gamma_{} = {ratio}", k - 1)
            }
            Violation::MissingKappa => write!(f, "exp_decay schedule carries no kappa"),
        }
    }
}

/// Consecutive step sizes must stay within this factor of each other.
pub const MAX_STEP_RATIO: f64 = 10.0;

/// Every violated invariant, empty when the schedule is valid.
pub fn validate_schedule(s: &Schedule) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.grid.len() < 2 {
        out.push(Violation::TooShort);
        return out;
    }
    if !(s.horizon > 1.0) {
        out.push(Violation::BadHorizon(s.horizon));
    }
    if !(s.delta > 0.0 && s.delta < 1.0) {
        out.push(Violation::BadDelta(s.delta));
    }
    if s.grid[0].abs() > 1e-12 {
        out.push(Violation::StartNotZero(s.grid[0]));
    }
    let expected = s.horizon - s.delta;
    let end = *s.grid.last().unwrap();
    if (end - expected).abs() > 1e-12 {
        out.push(Violation::EndMismatch { end, expected });
    }
    let gammas = s.gammas();
    for (k, g) in gammas.iter().enumerate() {
        if !(*g > 0.0) {
            out.push(Violation::NonIncreasing { k: k + 1 });
        }
    }
    if s.kind == ScheduleKind::ExpDecay {
        match s.kappa {
            None => out.push(Violation::MissingKappa),
            Some(kappa) => {
                let last = gammas.len() - 1;
                for (k, g) in gammas.iter().enumerate() {
                    let want = kappa * (s.horizon - s.grid[k]).min(1.0);
                    // the final step is truncated to land on T - delta
                    let bad = if k == last { *g > want + 1e-9 } else { (g - want).abs() > 1e-9 };
                    if bad {
                        out.push(Violation::ExpDecayStep {
                            k,
                            gamma: *g,
                            expected: want,
                        });
                    }
                }
            }
        }
    }
    for k in 1..gammas.len() {
        if gammas[k] > 0.0 && gammas[k - 1] > 0.0 {
            let ratio = gammas[k] / gammas[k - 1];
            if !(1.0 / MAX_STEP_RATIO..=MAX_STEP_RATIO).contains(&ratio) {
                out.push(Violation::ConsecutiveRatio { k, ratio });
            }
        }
    }
    out
}
