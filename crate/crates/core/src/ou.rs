//! Closed-form analytics of the forward Ornstein-Uhlenbeck process
//! `dX = -X dt + sqrt(2) dB`, whose time-`t` marginal is
//! `X_t = e^{-t} X_0 + sqrt(1 - e^{-2t}) Z`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::gmm::{Gmm, GmmSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuMarginal {
    pub t: f64,
    /// `e^{-t}`
    pub shrink: f64,
    /// `1 - e^{-2t}`
    pub noise_var: f64,
}

pub fn ou_marginal(t: f64) -> Result<OuMarginal> {
    if !(t >= 0.0) {
        return Err(Error::argument(format!("OU time must be nonnegative, got {t}")));
    }
    Ok(OuMarginal {
        t,
        shrink: (-t).exp(),
        noise_var: -(-2.0 * t).exp_m1(),
    })
}

/// The law of `X_t` when `X_0` follows `spec`: means `e^{-t} mu_i`,
/// covariances `e^{-2t} Sigma_i + (1 - e^{-2t}) I`.
pub fn evolved_gmm_spec(spec: &GmmSpec, t: f64) -> Result<GmmSpec> {
    let m = ou_marginal(t)?;
    let s2 = m.shrink * m.shrink;
    let mut out = spec.clone();
    for mu in &mut out.means {
        mu.iter_mut().for_each(|v| *v *= m.shrink);
    }
    for cov in &mut out.covariances {
        for (r, row) in cov.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = s2 * *v + if r == c { m.noise_var } else { 0.0 };
            }
        }
    }
    Ok(out)
}

/// `grad log p_t(x)` for a Gaussian-mixture target.
pub fn gmm_score_at_time(spec: &GmmSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(Gmm::new(&evolved_gmm_spec(spec, t)?)?.score(x))
}

/// `log p_t(x)` for a Gaussian-mixture target.
pub fn gmm_log_density_at_time(spec: &GmmSpec, t: f64, x: &[f64]) -> Result<f64> {
    Ok(Gmm::new(&evolved_gmm_spec(spec, t)?)?.log_density(x))
}

/// Memoizes evolved mixtures per distinct `t`; schedules only visit a few
/// hundred distinct times.
#[derive(Debug)]
pub struct OuScoreCache {
    spec: GmmSpec,
    by_time: Mutex<HashMap<u64, Arc<Gmm>>>,
}

impl OuScoreCache {
    const CAPACITY: usize = 4096;

    pub fn new(spec: GmmSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            by_time: Mutex::new(HashMap::new()),
        })
    }

    pub fn evolved(&self, t: f64) -> Result<Arc<Gmm>> {
        let key = t.to_bits();
        if let Some(g) = self.by_time.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(g));
        }
        let g = Arc::new(Gmm::new(&evolved_gmm_spec(&self.spec, t)?)?);
        let mut map = self.by_time.lock().expect("cache lock");
        if map.len() >= Self::CAPACITY {
            map.clear();
        }
        map.insert(key, Arc::clone(&g));
        Ok(g)
    }

    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evolved(t)?.score(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayBounds {
    /// Upper bound on `W2(p_t, p)`.
    pub w2_bound: f64,
    /// Upper bound on `KL(p_t | N(0, I))`; `None` at `t = 0` where it diverges.
    pub kl_bound: Option<f64>,
}

/// Upper bounds on how far the OU flow moves a target with second moment
/// `m2sq` in dimension `d`:
/// `W2(p_t, p)^2 <= (1 - e^{-t})^2 m2sq + (1 - e^{-2t}) d` and
/// `KL(p_t | gamma) <= e^{-4t} d / (2 (1 - e^{-2t})) + e^{-2t} m2sq / 2`.
pub fn ou_decay_bounds(t: f64, m2sq: f64, d: usize) -> Result<DecayBounds> {
    if !(m2sq >= 0.0) {
        return Err(Error::argument(format!("second moment must be nonnegative, got {m2sq}")));
    }
    let m = ou_marginal(t)?;
    let drift = -(-t).exp_m1();
    let w2_sq = drift * drift * m2sq + m.noise_var * d as f64;
    let kl_bound = (t > 0.0).then(|| {
        0.5 * (-4.0 * t).exp() / m.noise_var * d as f64 + 0.5 * (-2.0 * t).exp() * m2sq
    });
    Ok(DecayBounds {
        w2_bound: w2_sq.sqrt(),
        kl_bound,
    })
}

/// KL bound alone; an argument error at `t = 0`.
pub fn ou_kl_bound(t: f64, m2sq: f64, d: usize) -> Result<f64> {
    ou_decay_bounds(t, m2sq, d)?
        .kl_bound
        .ok_or_else(|| Error::argument("KL decay bound diverges at t = 0"))
}

/// Exact `W2` between `N(m1, S1)` and `N(m2, S2)` when `S1` and `S2` commute,
/// given their eigenvalues in a shared eigenbasis.
pub fn gaussian_w2_commuting(m1: &[f64], m2: &[f64], eig1: &[f64], eig2: &[f64]) -> f64 {
    let mean: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let cov: f64 = eig1.iter().zip(eig2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (mean + cov).sqrt()
}

/// Exact `W2(p_t, p)` for a single-Gaussian target `N(mu, Sigma)`.
pub fn gaussian_w2_to_evolved(mu: &[f64], cov: &[Vec<f64>], t: f64) -> Result<f64> {
    let m = ou_marginal(t)?;
    let eig = crate::gmm::to_matrix(cov).symmetric_eigenvalues();
    let eig: Vec<f64> = eig.iter().cloned().collect();
    let eig_t: Vec<f64> = eig.iter().map(|l| m.shrink * m.shrink * l + m.noise_var).collect();
    let mu_t: Vec<f64> = mu.iter().map(|v| v * m.shrink).collect();
    Ok(gaussian_w2_commuting(mu, &mu_t, &eig, &eig_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn marginal_values() {
        let m = ou_marginal(0.0).unwrap();
        assert_eq!((m.shrink, m.noise_var), (1.0, 0.0));
        let m = ou_marginal(2f64.ln()).unwrap();
        assert!((m.shrink - 0.5).abs() < 1e-15 && (m.noise_var - 0.75).abs() < 1e-15);
        let m = ou_marginal(40.0).unwrap();
        assert!(m.shrink < 1e-17 && (m.noise_var - 1.0).abs() < 1e-15);
        assert!(matches!(ou_marginal(-1e-9), Err(Error::Argument(_))));
    }

    #[test]
    fn marginal_identity() {
        for i in 0..200 {
            let m = ou_marginal(i as f64 * 0.05).unwrap();
            assert!((m.shrink * m.shrink + m.noise_var - 1.0).abs() <= 1e-12);
            assert!(m.noise_var >= 0.0 && m.noise_var < 1.0 && m.shrink > 0.0 && m.shrink <= 1.0);
        }
    }

    #[test]
    fn stationary_gaussian_score_is_minus_x() {
        let spec = GmmSpec::isotropic(vec![0.0; 3], 1.0);
        for t in [0.0, 0.01, 0.7, 5.0] {
            let x = [0.4, -2.0, 1.3];
            let s = gmm_score_at_time(&spec, t, &x).unwrap();
            for (si, xi) in s.iter().zip(&x) {
                assert!((si + xi).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn shifted_unit_gaussian_score() {
        let mu = vec![3.0, -1.0];
        let spec = GmmSpec::isotropic(mu.clone(), 1.0);
        let t = 0.8;
        let x = [0.5, 0.5];
        let s = gmm_score_at_time(&spec, t, &x).unwrap();
        for i in 0..2 {
            let expected = -(x[i] - (-t).exp() * mu[i]);
            assert!((s[i] - expected).abs() < 1e-12);
        }
    }

    fn fd_check(spec: &GmmSpec, t: f64, x: &[f64]) {
        let s = gmm_score_at_time(spec, t, x).unwrap();
        let h = 1e-5;
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let fp = gmm_log_density_at_time(spec, t, &xp).unwrap();
            xp[i] = x[i] - h;
            let fm = gmm_log_density_at_time(spec, t, &xp).unwrap();
            xp[i] = x[i];
            let fd = (fp - fm) / (2.0 * h);
            let scale = s.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            assert!((fd - s[i]).abs() <= 1e-4 * scale, "t={t} x={x:?} i={i}: {fd} vs {}", s[i]);
        }
    }

    #[test]
    fn benchmark_score_matches_finite_differences() {
        fd_check(&GmmSpec::benchmark_2d(), 0.5, &[3.0, 3.0]);
        let mut r = rng::stream(5, 0, 0);
        for spec in [GmmSpec::benchmark_2d(), GmmSpec::score_study_5d(), GmmSpec::benchmark_2d_at_radius(26.0)] {
            for _ in 0..50 {
                let t = r.gen_range(0.01..5.0);
                let x: Vec<f64> = (0..spec.dim()).map(|_| r.gen_range(-8.0..14.0)).collect();
                fd_check(&spec, t, &x);
            }
        }
    }

    #[test]
    fn decay_bounds() {
        let b = ou_decay_bounds(0.0, 5.0, 2).unwrap();
        assert_eq!(b.w2_bound, 0.0);
        assert!(b.kl_bound.is_none());
        assert!(matches!(ou_kl_bound(0.0, 1.0, 2), Err(Error::Argument(_))));
        let far = ou_decay_bounds(60.0, 123.28, 2).unwrap();
        assert!((far.w2_bound.powi(2) - 125.28).abs() < 1e-9);
        let one = ou_decay_bounds(1.0, 123.28, 2).unwrap();
        let e1 = (-1.0f64).exp();
        let expected = (1.0 - e1).powi(2) * 123.28 + (1.0 - e1 * e1) * 2.0;
        assert!((one.w2_bound.powi(2) - expected).abs() < 1e-12);
        let kl = ou_kl_bound(1.0, 123.28, 2).unwrap();
        let kl_expected = 0.5 * (-4.0f64).exp() / (1.0 - (-2.0f64).exp()) * 2.0 + 0.5 * (-2.0f64).exp() * 123.28;
        assert!((kl - kl_expected).abs() < 1e-12);
    }

    #[test]
    fn exact_gaussian_w2_respects_bound() {
        let cases = [
            (vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            (vec![3.0, -4.0], vec![vec![0.3, 0.1], vec![0.1, 0.2]]),
            (vec![10.0, 10.0], vec![vec![4.0, -1.0], vec![-1.0, 2.0]]),
        ];
        for (mu, cov) in cases {
            let spec = GmmSpec {
                weights: vec![1.0],
                means: vec![mu.clone()],
                covariances: vec![cov.clone()],
            };
            for i in 1..=500 {
                let t = 0.01 * i as f64;
                let exact = gaussian_w2_to_evolved(&mu, &cov, t).unwrap();
                let bound = ou_decay_bounds(t, spec.second_moment(), 2).unwrap().w2_bound;
                assert!(exact <= bound + 1e-12, "t={t}: {exact} > {bound}");
            }
        }
    }

    #[test]
    fn cache_agrees_with_direct_evaluation() {
        let spec = GmmSpec::benchmark_2d();
        let cache = OuScoreCache::new(spec.clone()).unwrap();
        let x = [2.0, 7.0];
        for t in [0.1, 0.1, 1.0] {
            assert_eq!(cache.score(t, &x).unwrap(), gmm_score_at_time(&spec, t, &x).unwrap());
        }
    }
}
