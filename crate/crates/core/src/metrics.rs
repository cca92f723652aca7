//! Sample-set comparisons: kernel MMD, exact empirical W2, mode occupancy and
//! moment errors.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Largest batch the exact assignment accepts.
pub const W2_EXACT_CAP: usize = 4096;

/// Points used for the median-distance bandwidth.
const BANDWIDTH_SAMPLE: usize = 1000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_batch(name: &str, x: &[Vec<f64>], min: usize) -> Result<usize> {
    if x.len() < min {
        return Err(Error::argument(format!("{name} needs at least {min} points, got {}", x.len())));
    }
    let d = x[0].len();
    if x.iter().any(|p| p.len() != d) {
        return Err(Error::argument(format!("{name} has rows of differing dimension")));
    }
    Ok(d)
}

fn check_pair(x: &[Vec<f64>], y: &[Vec<f64>], min: usize) -> Result<usize> {
    let d = check_batch("X", x, min)?;
    if check_batch("Y", y, min)? != d {
        return Err(Error::argument("X and Y differ in dimension"));
    }
    Ok(d)
}

/// Median pairwise distance of the pooled batch, on an evenly strided subset
/// when the pool is large.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pool: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let stride = pool.len().div_ceil(BANDWIDTH_SAMPLE).max(1);
    let sub: Vec<&Vec<f64>> = pool.into_iter().step_by(stride).collect();
    let mut d: Vec<f64> = (0..sub.len())
        .flat_map(|i| (i + 1..sub.len()).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(sub[i], sub[j]).sqrt())
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

// row sums are collected in order and added sequentially so the result does
// not depend on how rayon splits the work
fn kernel_sum(a: &[Vec<f64>], b: &[Vec<f64>], inv: f64, skip_diagonal: bool) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            b.iter()
                .enumerate()
                .filter(|&(j, _)| !(skip_diagonal && i == j))
                .map(|(_, q)| (-sq_dist(p, q) * inv).exp())
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

/// Unbiased MMD² with kernel `exp(-|a-b|^2 / (2 h^2))`; `h` defaults to the
/// median heuristic. Returns the signed estimate and the bandwidth used.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Option<f64>) -> Result<(f64, f64)> {
    check_pair(x, y, 2)?;
    let h = resolve_bandwidth(x, y, bandwidth)?;
    let inv = 1.0 / (2.0 * h * h);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, inv, true) / (n * (n - 1.0));
    let kyy = kernel_sum(y, y, inv, true) / (m * (m - 1.0));
    let kxy = kernel_sum(x, y, inv, false) / (n * m);
    Ok((kxx + kyy - 2.0 * kxy, h))
}

fn resolve_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        Some(h) => Err(Error::argument(format!("bandwidth must be positive, got {h}"))),
        None => Ok(median_bandwidth(x, y)),
    }
}

/// Permutation p-value of the MMD² statistic: `(1 + #{perm >= observed}) / (1 + n_perm)`.
pub fn mmd_permutation_test(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    bandwidth: Option<f64>,
    n_perm: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_pair(x, y, 2)?;
    let h = resolve_bandwidth(x, y, bandwidth)?;
    let inv = 1.0 / (2.0 * h * h);
    let pool: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let total = pool.len();
    let gram: Vec<f64> = (0..total)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pool = &pool;
            (0..total).map(move |j| (-sq_dist(pool[i], pool[j]) * inv).exp())
        })
        .collect();
    let n = x.len();
    let stat = |labels: &[bool]| {
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for i in 0..total {
            for j in 0..total {
                if i == j {
                    continue;
                }
                let k = gram[i * total + j];
                match (labels[i], labels[j]) {
                    (true, true) => sxx += k,
                    (false, false) => syy += k,
                    _ => sxy += k,
                }
            }
        }
        let (nf, mf) = (n as f64, (total - n) as f64);
        sxx / (nf * (nf - 1.0)) + syy / (mf * (mf - 1.0)) - sxy / (nf * mf)
    };
    let mut labels: Vec<bool> = (0..total).map(|i| i < n).collect();
    let observed = stat(&labels);
    let mut r = rng::stream(seed, domain::METRICS, 0);
    let mut at_least = 0usize;
    for _ in 0..n_perm {
        labels.shuffle(&mut r);
        if stat(&labels) >= observed {
            at_least += 1;
        }
    }
    Ok((observed, (1 + at_least) as f64 / (1 + n_perm) as f64))
}

/// `n` points drawn without replacement.
pub fn subsample(x: &[Vec<f64>], n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if n >= x.len() {
        return x.to_vec();
    }
    rand::seq::index::sample(rng, x.len(), n).into_iter().map(|i| x[i].clone()).collect()
}

/// Exact W2 between two equal-size point sets: the square root of the mean
/// squared distance under the optimal matching.
pub fn w2_empirical(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    check_pair(x, y, 1)?;
    if x.len() != y.len() {
        return Err(Error::argument(format!(
            "exact W2 needs equal sizes, got {} and {}; subsample first",
            x.len(),
            y.len()
        )));
    }
    if x.len() > W2_EXACT_CAP {
        return Err(Error::argument(format!(
            "exact W2 is capped at {W2_EXACT_CAP} points, got {}",
            x.len()
        )));
    }
    let n = x.len();
    let cost: Vec<f64> = x.par_iter().flat_map_iter(|p| y.iter().map(move |q| sq_dist(p, q))).collect();
    let (rows, cols) = lsap::solve(n, n, &cost, false)
        .map_err(|e| Error::argument(format!("assignment failed: {e:?}")))?;
    let total: f64 = rows.iter().zip(&cols).map(|(&i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// W2 after subsampling both batches to `min(|X|, |Y|, cap)` points.
pub fn w2_subsampled(x: &[Vec<f64>], y: &[Vec<f64>], cap: usize, seed: u64) -> Result<f64> {
    let n = x.len().min(y.len()).min(cap.min(W2_EXACT_CAP));
    let mut r = rng::stream(seed, domain::METRICS, 1);
    let xs = subsample(x, n, &mut r);
    let ys = subsample(y, n, &mut r);
    w2_empirical(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeWeights {
    /// Share of the assigned points per mode.
    pub weights: Vec<f64>,
    /// Share of all points farther than the radius from every mean.
    pub unassigned: f64,
}

/// Nearest-mean occupancy. With a radius, points farther than it from their
/// nearest mean go to the unassigned bucket.
pub fn mode_weights(x: &[Vec<f64>], means: &[Vec<f64>], assign_radius: Option<f64>) -> ModeWeights {
    let mut counts = vec![0usize; means.len()];
    let mut unassigned = 0usize;
    for p in x {
        let best = means
            .iter()
            .enumerate()
            .map(|(k, m)| (k, sq_dist(p, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match (best, assign_radius) {
            (Some((_, d2)), Some(r)) if d2 > r * r => unassigned += 1,
            (Some((k, _)), _) => counts[k] += 1,
            (None, _) => unassigned += 1,
        }
    }
    let assigned = (x.len() - unassigned) as f64;
    ModeWeights {
        weights: counts
            .iter()
            .map(|&c| if assigned > 0.0 { c as f64 / assigned } else { 0.0 })
            .collect(),
        unassigned: if x.is_empty() { 0.0 } else { unassigned as f64 / x.len() as f64 },
    }
}

/// Total-variation distance between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Share of points with `inner < |x| < outer`.
pub fn shell_mass(x: &[Vec<f64>], inner: f64, outer: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let hits = x
        .iter()
        .filter(|p| {
            let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            r > inner && r < outer
        })
        .count();
    hits as f64 / x.len() as f64
}

pub fn sample_mean(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    (0..d).map(|i| x.iter().map(|p| p[i]).sum::<f64>() / n).collect()
}

/// Unbiased sample covariance, row-major `d x d`.
pub fn sample_covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = sample_mean(x);
    let d = m.len();
    let n = x.len() as f64;
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| x.iter().map(|p| (p[i] - m[i]) * (p[j] - m[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Euclidean distance between sample means.
pub fn mean_error(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    check_pair(x, y, 1)?;
    Ok(sq_dist(&sample_mean(x), &sample_mean(y)).sqrt())
}

/// Frobenius distance between sample covariances.
pub fn cov_error(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (a, b) = (sample_covariance(x), sample_covariance(y));
    Ok(a.iter().zip(&b).map(|(r, s)| sq_dist(r, s)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsOptions {
    /// Fixed MMD bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
    /// Points per side for exact W2.
    pub w2_points: usize,
    /// Reference points kept for MMD; larger references are subsampled.
    pub mmd_points: usize,
    pub assign_radius: Option<f64>,
    pub seed: u64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            bandwidth: None,
            w2_points: 2048,
            mmd_points: 4096,
            assign_radius: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// MMD² clamped at zero.
    pub mmd: f64,
    pub mmd_raw: f64,
    pub w2: f64,
    pub mode_weights: Vec<f64>,
    pub unassigned: f64,
    pub reference_mode_weights: Vec<f64>,
    pub mode_tv: f64,
    pub mean_error: f64,
    pub cov_error: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub bandwidth: f64,
}

/// Compares `x` against the reference batch `y`.
pub fn compare(x: &[Vec<f64>], y: &[Vec<f64>], means: &[Vec<f64>], opts: &MetricsOptions) -> Result<MetricsReport> {
    check_pair(x, y, 2)?;
    let y_mmd = subsample(y, opts.mmd_points.max(2), &mut rng::stream(opts.seed, domain::METRICS, 2));
    let (mmd_raw, bandwidth) = mmd(x, &y_mmd, opts.bandwidth)?;
    let w2 = w2_subsampled(x, y, opts.w2_points, opts.seed)?;
    let mw = mode_weights(x, means, opts.assign_radius);
    let reference = mode_weights(y, means, opts.assign_radius);
    Ok(MetricsReport {
        mmd: mmd_raw.max(0.0),
        mmd_raw,
        w2,
        mode_tv: tv_distance(&mw.weights, &reference.weights),
        mode_weights: mw.weights,
        unassigned: mw.unassigned,
        reference_mode_weights: reference.weights,
        mean_error: mean_error(x, y)?,
        cov_error: cov_error(x, y)?,
        n_x: x.len(),
        n_y: y.len(),
        bandwidth,
    })
}
