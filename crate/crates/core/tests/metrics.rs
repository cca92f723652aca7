use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use zodmc::gmm::{Gmm, GmmSpec};
use zodmc::metrics::{
    compare, cov_error, mean_error, mmd, mmd_permutation_test, mode_weights, shell_mass, tv_distance, w2_empirical,
    MetricsOptions,
};
use zodmc::rng::{self, StreamRng};
use zodmc::Error;

fn gaussian(n: usize, mean: &[f64], r: &mut StreamRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| mean.iter().map(|m| m + r.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Population MMD² between N(a, I) and N(b, I) under the kernel exp(-|u|^2 / (2 h^2)).
fn gaussian_mmd2(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d = a.len() as f64;
    let h2 = h * h;
    let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let c = (h2 / (h2 + 2.0)).powf(d / 2.0);
    2.0 * c * (1.0 - (-dist2 / (2.0 * (h2 + 2.0))).exp())
}

#[test]
fn mmd_of_two_halves_is_null() {
    let mut r = rng::stream(40, 0, 0);
    let pool = gaussian(800, &[0.0, 0.0], &mut r);
    let (x, y) = pool.split_at(400);
    let (value, p) = mmd_permutation_test(x, y, None, 200, 1).unwrap();
    assert!(p > 0.01, "p = {p}, mmd = {value}");
}

#[test]
fn mmd_matches_closed_form_for_separated_gaussians() {
    let (a, b) = ([0.0, 0.0], [10.0, 0.0]);
    let h = 4.0;
    let exact = gaussian_mmd2(&a, &b, h);
    let reps: Vec<f64> = (0..8)
        .map(|k| {
            let mut r = rng::stream(41, 0, k);
            let x = gaussian(2048, &a, &mut r);
            let y = gaussian(2048, &b, &mut r);
            mmd(&x, &y, Some(h)).unwrap().0
        })
        .collect();
    let (_, sd) = mean_sd(&reps);
    assert!((reps[0] - exact).abs() < 3.0 * sd, "{} vs {exact} (sd {sd})", reps[0]);
}

#[test]
fn closed_form_mmd_agrees_with_quadrature_in_one_dimension() {
    // E k(X, X') for X - X' ~ N(0, 2), by trapezoid
    let (h, delta) = (1.5f64, 2.0f64);
    let integral = |shift: f64| {
        let (lo, hi, n) = (-20.0, 20.0, 40_000);
        let step = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let u = lo + i as f64 * step;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let dens = (-(u * u) / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
                w * step * dens * (-((u + shift).powi(2)) / (2.0 * h * h)).exp()
            })
            .sum::<f64>()
    };
    let quad = 2.0 * integral(0.0) - 2.0 * integral(delta);
    assert!((quad - gaussian_mmd2(&[0.0], &[delta], h)).abs() < 1e-9);
}

#[test]
fn bandwidth_doubling_keeps_the_ranking() {
    let mut r = rng::stream(42, 0, 0);
    let reference = gaussian(600, &[0.0, 0.0], &mut r);
    let candidates: Vec<_> = [0.3, 1.0, 2.5].iter().map(|s| gaussian(600, &[*s, 0.0], &mut r)).collect();
    let (_, h) = mmd(&candidates[0], &reference, None).unwrap();
    let rank = |bw: f64| {
        let v: Vec<f64> = candidates.iter().map(|c| mmd(c, &reference, Some(bw)).unwrap().0).collect();
        let mut idx = vec![0, 1, 2];
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        idx
    };
    assert_eq!(rank(h), vec![0, 1, 2]);
    assert_eq!(rank(2.0 * h), rank(h));
}

#[test]
fn mmd_rejects_tiny_batches() {
    let x = vec![vec![0.0]];
    assert!(matches!(mmd(&x, &x, None), Err(Error::Argument(_))));
}

#[test]
fn permutation_p_values_are_uniform_under_the_null() {
    let mut pvals: Vec<f64> = (0..200)
        .map(|k| {
            let mut r = rng::stream(43, 0, k);
            let x = gaussian(40, &[0.0], &mut r);
            let y = gaussian(40, &[0.0], &mut r);
            mmd_permutation_test(&x, &y, None, 199, k).unwrap().1
        })
        .collect();
    pvals.sort_by(f64::total_cmp);
    let n = pvals.len() as f64;
    let ks = pvals
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.1, "KS distance {ks}");
}

#[test]
fn w2_matches_sorted_matching_in_one_dimension() {
    let mut r = rng::stream(44, 0, 0);
    let x = gaussian(1024, &[0.0], &mut r);
    let y = gaussian(1024, &[0.0], &mut r);
    let sorted = |v: &[Vec<f64>]| {
        let mut s: Vec<f64> = v.iter().map(|p| p[0]).collect();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sx, sy) = (sorted(&x), sorted(&y));
    let oracle = (sx.iter().zip(&sy).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1024.0).sqrt();
    let w = w2_empirical(&x, &y).unwrap();
    assert!((w - oracle).abs() < 1e-9, "{w} vs {oracle}");

    // and it sits inside the spread of fresh same-distribution pairs
    let null: Vec<f64> = (1..31)
        .map(|k| {
            let mut r = rng::stream(44, 1, k);
            w2_empirical(&gaussian(1024, &[0.0], &mut r), &gaussian(1024, &[0.0], &mut r)).unwrap()
        })
        .collect();
    let (m, sd) = mean_sd(&null);
    assert!((w - m).abs() < 3.0 * sd, "{w} vs {m} +- {sd}");
}

#[test]
fn w2_recovers_separated_gaussian_shift() {
    let mut r = rng::stream(45, 0, 0);
    let mu = [3.0, 4.0];
    let x = gaussian(2048, &[0.0, 0.0], &mut r);
    let y = gaussian(2048, &mu, &mut r);
    let w = w2_empirical(&x, &y).unwrap();
    assert!((w / 5.0 - 1.0).abs() < 0.1, "{w}");
}

#[test]
fn w2_argument_checks() {
    let a = vec![vec![0.0]; 3];
    let b = vec![vec![0.0]; 4];
    assert!(matches!(w2_empirical(&a, &b), Err(Error::Argument(_))));
    let big = vec![vec![0.0]; 4097];
    assert!(matches!(w2_empirical(&big, &big), Err(Error::Argument(_))));
}

#[test]
fn mode_weights_of_exact_mixture_draws() {
    let spec = GmmSpec::benchmark_2d();
    let gmm = Gmm::new(&spec).unwrap();
    let mut r = rng::stream(46, 0, 0);
    let n = 100_000;
    let x: Vec<Vec<f64>> = (0..n).map(|_| gmm.sample(&mut r)).collect();
    let w = mode_weights(&x, &spec.means, None);
    assert_eq!(w.unassigned, 0.0);
    for (got, want) in w.weights.iter().zip(&spec.weights) {
        let sigma = (want * (1.0 - want) / n as f64).sqrt();
        assert!((got - want).abs() < 3.0 * sigma, "{:?}", w.weights);
    }
}

#[test]
fn degenerate_and_outlier_mode_weights() {
    let means = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
    let at_first = vec![means[0].clone(); 10];
    assert_eq!(mode_weights(&at_first, &means, None).weights, vec![1.0, 0.0, 0.0]);

    let mut pts = vec![vec![0.1, 0.0], vec![5.0, 0.2], vec![4.9, 0.0]];
    pts.push(vec![100.0, 100.0]);
    let w = mode_weights(&pts, &means, Some(1.0));
    assert_eq!(w.unassigned, 0.25);
    assert!((w.weights[0] - 1.0 / 3.0).abs() < 1e-15 && (w.weights[1] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(w.weights[2], 0.0);
}

#[test]
fn moment_errors_and_shell_mass() {
    let x = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]];
    let y: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0] + 3.0, p[1] + 4.0]).collect();
    assert!((mean_error(&x, &y).unwrap() - 5.0).abs() < 1e-12);
    assert!(cov_error(&x, &y).unwrap() < 1e-12);
    let ring = vec![vec![6.0, 0.0], vec![0.0, 1.0], vec![12.0, 0.0], vec![0.0, -7.0]];
    assert_eq!(shell_mass(&ring, 5.0, 11.0), 0.5);
    assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
}

#[test]
fn report_serializes() {
    let mut r = rng::stream(47, 0, 0);
    let x = gaussian(300, &[0.0, 0.0], &mut r);
    let y = gaussian(200, &[0.5, 0.0], &mut r);
    let rep = compare(&x, &y, &[vec![0.0, 0.0]], &MetricsOptions::default()).unwrap();
    assert_eq!((rep.n_x, rep.n_y), (300, 200));
    assert!(rep.mmd >= 0.0 && rep.w2 > 0.0 && rep.bandwidth > 0.0);
    let back: zodmc::metrics::MetricsReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
    assert_eq!(back, rep);
}

fn batch(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_of_a_translate_is_the_shift(x in batch(12), v in prop::collection::vec(-5.0f64..5.0, 2)) {
        let y: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0] + v[0], p[1] + v[1]]).collect();
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        prop_assert!((w2_empirical(&x, &y).unwrap() - norm).abs() < 1e-9);
    }

    #[test]
    fn w2_triangle_inequality(x in batch(8), y in batch(8), z in batch(8)) {
        let xy = w2_empirical(&x, &y).unwrap();
        let yz = w2_empirical(&y, &z).unwrap();
        let xz = w2_empirical(&x, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9);
    }

    #[test]
    fn mode_weights_ignore_order(x in batch(30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let means = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![-5.0, 3.0]];
        let mut shuffled = x.clone();
        shuffled.shuffle(&mut rng::stream(seed, 0, 0));
        prop_assert_eq!(mode_weights(&x, &means, Some(4.0)), mode_weights(&shuffled, &means, Some(4.0)));
    }
}
