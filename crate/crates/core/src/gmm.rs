//! Gaussian mixtures: parameter blocks, validated evaluation, exact sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Mixture parameters as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// One `d x d` matrix per component, row-major nested vectors.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GmmSpec {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(Error::config(format!(
                "mixture has {k} weights but {} means and {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("mixture dimension must be positive"));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
        }
        for (i, (mu, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mu.len() != d || mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("mean {i} is not a finite {d}-vector")));
            }
            if cov.len() != d || cov.iter().any(|row| row.len() != d) {
                return Err(Error::config(format!("covariance {i} is not {d}x{d}")));
            }
            for r in 0..d {
                for c in 0..r {
                    let (a, b) = (cov[r][c], cov[c][r]);
                    if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                        return Err(Error::config(format!("covariance {i} is not symmetric")));
                    }
                }
            }
            if to_matrix(cov).cholesky().is_none() {
                return Err(Error::config(format!("covariance {i} is not positive definite")));
            }
        }
        Ok(())
    }

    /// `sum_i w_i (|mu_i|^2 + tr Sigma_i)`, the second moment `E|X|^2`.
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((w, mu), cov)| w * (norm_sq(mu) + trace(cov)))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (acc, v) in m.iter_mut().zip(mu) {
                *acc += w * v;
            }
        }
        m
    }

    /// Trace of the mixture covariance, `E|X|^2 - |E X|^2`.
    pub fn covariance_trace(&self) -> f64 {
        self.second_moment() - norm_sq(&self.mean())
    }

    /// Same mixture with every covariance multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> GmmSpec {
        let mut out = self.clone();
        for cov in &mut out.covariances {
            for row in cov.iter_mut() {
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
        out
    }

    /// Same mixture with every mean multiplied by `factor`.
    pub fn with_scaled_means(&self, factor: f64) -> GmmSpec {
        let mut out = self.clone();
        for mu in &mut out.means {
            for v in mu.iter_mut() {
                *v *= factor;
            }
        }
        out
    }

    /// The four-mode unbalanced, anisotropic 2D benchmark mixture.
    pub fn benchmark_2d() -> GmmSpec {
        GmmSpec {
            weights: vec![0.1, 0.2, 0.3, 0.4],
            means: vec![vec![0.0, 0.0], vec![0.0, 11.0], vec![9.0, 9.0], vec![11.0, 0.0]],
            covariances: vec![
                vec![vec![1.0, 0.5], vec![0.5, 1.0]],
                vec![vec![0.3, -0.2], vec![-0.2, 0.3]],
                vec![vec![1.0, 0.3], vec![0.3, 1.0]],
                vec![vec![1.2, -1.0], vec![-1.0, 1.2]],
            ],
        }
    }

    /// The benchmark mixture rescaled so its `(0, 11)` mode sits at `(0, radius)`.
    pub fn benchmark_2d_at_radius(radius: f64) -> GmmSpec {
        Self::benchmark_2d().with_scaled_means(radius / 11.0)
    }

    /// The three-component 5D mixture used for score-error studies.
    pub fn score_study_5d() -> GmmSpec {
        GmmSpec {
            weights: vec![0.25, 0.5, 0.25],
            means: vec![
                vec![-4.0, -4.0, -3.0, -4.0, -4.0],
                vec![4.0, 3.0, 4.0, 2.0, 4.0],
                vec![-4.0, -2.0, -4.0, 4.0, -1.0],
            ],
            covariances: vec![
                vec![
                    vec![3.0, 2.0, 0.0, 0.0, 0.0],
                    vec![2.0, 3.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 4.0, 2.0, 0.0],
                    vec![0.0, 0.0, 2.0, 4.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0, 1.0],
                ],
                vec![
                    vec![9.0, 0.0, 7.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0, 0.4, 0.0],
                    vec![7.0, 0.0, 9.0, 0.0, 0.0],
                    vec![0.0, 0.4, 0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0, 1.0],
                ],
                vec![
                    vec![1.0, 0.4, 0.0, 0.0, 0.0],
                    vec![0.4, 1.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 4.0, 3.0, 0.0],
                    vec![0.0, 0.0, 3.0, 4.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0, 1.0],
                ],
            ],
        }
    }

    /// Five equally weighted isotropic modes with means `12 z/|z|`,
    /// `z ~ U[0,1]^d`, and variances drawn from `U[0.3, 1.3]`.
    pub fn randomized(dim: usize, rng: &mut impl Rng) -> GmmSpec {
        const MODES: usize = 5;
        let mut means = Vec::with_capacity(MODES);
        let mut covariances = Vec::with_capacity(MODES);
        for _ in 0..MODES {
            let z: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let norm = norm_sq(&z).sqrt().max(f64::MIN_POSITIVE);
            means.push(z.iter().map(|v| 12.0 * v / norm).collect());
            let var = rng.gen_range(0.3..1.3);
            covariances.push(
                (0..dim)
                    .map(|r| (0..dim).map(|c| if r == c { var } else { 0.0 }).collect())
                    .collect(),
            );
        }
        GmmSpec {
            weights: vec![1.0 / MODES as f64; MODES],
            means,
            covariances,
        }
    }

    /// `N(mean, I)` as a one-component mixture.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> GmmSpec {
        let d = mean.len();
        GmmSpec {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![(0..d)
                .map(|r| (0..d).map(|c| if r == c { variance } else { 0.0 }).collect())
                .collect()],
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    /// `ln w - (d ln 2pi + ln det Sigma) / 2`
    log_coef: f64,
    log_weight: f64,
    mean: Vec<f64>,
    /// Row-major precision matrix.
    precision: Vec<f64>,
    /// Row-major lower Cholesky factor of the covariance.
    chol: Vec<f64>,
}

/// A validated mixture ready for evaluation and sampling.
#[derive(Debug, Clone)]
pub struct Gmm {
    dim: usize,
    components: Vec<Component>,
}

impl Gmm {
    pub fn new(spec: &GmmSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim();
        let mut components = Vec::with_capacity(spec.n_components());
        for ((w, mu), cov) in spec.weights.iter().zip(&spec.means).zip(&spec.covariances) {
            let m = to_matrix(cov);
            let chol = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::config("covariance is not positive definite"))?;
            let l = chol.l();
            let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
            let precision = chol.inverse();
            components.push(Component {
                log_coef: w.ln() - 0.5 * (d as f64 * LN_2PI + log_det),
                log_weight: w.ln(),
                mean: mu.clone(),
                precision: row_major(&precision),
                chol: row_major(&l),
            });
        }
        Ok(Gmm { dim: d, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn quad_form(&self, c: &Component, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            let di = x[i] - c.mean[i];
            let row = &c.precision[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * (x[j] - c.mean[j]);
            }
            q += di * acc;
        }
        q
    }

    /// Normalized log density, log-sum-exp over components.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in &self.components {
            if c.log_weight == f64::NEG_INFINITY {
                continue;
            }
            let a = c.log_coef - 0.5 * self.quad_form(c, x);
            if a > max {
                sum = sum * (max - a).exp() + 1.0;
                max = a;
            } else {
                sum += (a - max).exp();
            }
        }
        max + sum.ln()
    }

    /// `grad log p(x)`, with responsibilities normalized in log space.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let k = self.components.len();
        let mut logs = Vec::with_capacity(k);
        let mut grads = Vec::with_capacity(k);
        for c in &self.components {
            let mut g = vec![0.0; d];
            for i in 0..d {
                let row = &c.precision[i * d..(i + 1) * d];
                g[i] = -(0..d).map(|j| row[j] * (x[j] - c.mean[j])).sum::<f64>();
            }
            logs.push(c.log_coef - 0.5 * self.quad_form(c, x));
            grads.push(g);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; d];
        for (w, g) in weights.iter().zip(&grads) {
            for (o, gi) in out.iter_mut().zip(g) {
                *o += w / total * gi;
            }
        }
        out
    }

    /// Index of the component with the largest posterior responsibility.
    pub fn most_responsible(&self, x: &[f64]) -> usize {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.log_coef - 0.5 * self.quad_form(c, x)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.sample_with_component(rng).1
    }

    pub fn sample_with_component(&self, rng: &mut impl Rng) -> (usize, Vec<f64>) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.log_weight.exp();
            if u < acc {
                idx = i;
                break;
            }
        }
        let c = &self.components[idx];
        let d = self.dim;
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = c.mean.clone();
        for i in 0..d {
            for j in 0..=i {
                x[i] += c.chol[i * d + j] * xi[j];
            }
        }
        (idx, x)
    }
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |r, c| rows[r][c])
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn trace(m: &[Vec<f64>]) -> f64 {
    m.iter().enumerate().map(|(i, row)| row[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Direct density sum without log-space tricks; independent of `Gmm`.
    fn brute_density(spec: &GmmSpec, x: &[f64]) -> f64 {
        let d = spec.dim();
        let mut total = 0.0;
        for ((w, mu), cov) in spec.weights.iter().zip(&spec.means).zip(&spec.covariances) {
            let m = to_matrix(cov);
            let inv = m.clone().try_inverse().unwrap();
            let det = m.determinant();
            let diff = nalgebra::DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
            let q = (diff.transpose() * &inv * &diff)[(0, 0)];
            total += w * (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
        }
        total
    }

    #[test]
    fn log_density_matches_brute_force_sum() {
        let spec = GmmSpec::benchmark_2d();
        let g = Gmm::new(&spec).unwrap();
        for x in [[0.0, 0.0], [3.0, 3.0], [9.5, 8.0], [11.0, -1.0], [-2.0, 5.0]] {
            let direct = brute_density(&spec, &x).ln();
            assert!((g.log_density(&x) - direct).abs() < 1e-10, "{x:?}");
        }
        let spec5 = GmmSpec::score_study_5d();
        let g5 = Gmm::new(&spec5).unwrap();
        let x = [1.0, -0.5, 0.3, 2.0, 0.0];
        assert!((g5.log_density(&x) - brute_density(&spec5, &x).ln()).abs() < 1e-10);
    }

    #[test]
    fn log_density_survives_far_separated_modes() {
        let spec = GmmSpec::benchmark_2d_at_radius(26.0);
        let g = Gmm::new(&spec).unwrap();
        let v = g.log_density(&[-40.0, 60.0]);
        assert!(v.is_finite() && v < -500.0);
    }

    #[test]
    fn second_moment_of_benchmark() {
        let m2 = GmmSpec::benchmark_2d().second_moment();
        assert!((m2 - 123.08).abs() < 1e-12, "{m2}");
    }

    #[test]
    fn second_moment_by_sampling() {
        let spec = GmmSpec::benchmark_2d();
        let g = Gmm::new(&spec).unwrap();
        let mut r = rng::stream(1, 0, 0);
        let n = 200_000;
        let est: f64 = (0..n).map(|_| norm_sq(&g.sample(&mut r))).sum::<f64>() / n as f64;
        // sd of |X|^2 is about 75, so the standard error is about 0.17
        assert!((est - 123.08).abs() < 1.0, "{est}");
    }

    #[test]
    fn score_matches_finite_differences() {
        let g = Gmm::new(&GmmSpec::benchmark_2d()).unwrap();
        let x = [4.0, 5.0];
        let s = g.score(&x);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (g.log_density(&xp) - g.log_density(&xm)) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = GmmSpec::benchmark_2d();
        spec.covariances[1] = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = GmmSpec::benchmark_2d();
        spec.weights[0] = 0.2;
        assert!(spec.validate().is_err());
        let mut spec = GmmSpec::benchmark_2d();
        spec.covariances[0][0][1] = 0.4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn randomized_mixture_follows_its_recipe() {
        let mut r = rng::stream(3, 0, 0);
        for d in [2, 5, 10] {
            let spec = GmmSpec::randomized(d, &mut r);
            spec.validate().unwrap();
            assert_eq!(spec.n_components(), 5);
            for (mu, cov) in spec.means.iter().zip(&spec.covariances) {
                assert!((norm_sq(mu).sqrt() - 12.0).abs() < 1e-9);
                assert!(mu.iter().all(|v| *v >= 0.0));
                assert!((0.3..1.3).contains(&cov[0][0]));
            }
        }
    }
}
