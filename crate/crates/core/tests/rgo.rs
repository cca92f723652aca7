use rand::Rng;
use zodmc::gmm::GmmSpec;
use zodmc::optim::MinimizeOptions;
use zodmc::rgo::{
    default_max_proposals, expected_proposals, find_potential_min, rgo_budget, rgo_sample, MinTracker, RgoRequest,
    FALLBACK_MAX_PROPOSALS,
};
use zodmc::rng;
use zodmc::target::{make_gmm, make_mueller_brown, MuellerBrownParams, Phase, QueryLedger, Target};
use zodmc::Error;

fn quadratic(dim: usize, c: f64, mu: Vec<f64>) -> Target {
    Target::from_potential("quadratic", dim, move |z: &[f64]| {
        0.5 * c * z.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    })
    .unwrap()
}

fn grid_min(f: impl Fn(f64, f64) -> f64, (x0, x1): (f64, f64), (y0, y1): (f64, f64), h: f64) -> (f64, f64, f64) {
    let nx = ((x1 - x0) / h).round() as usize;
    let ny = ((y1 - y0) / h).round() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (x0 + i as f64 * h, y0 + j as f64 * h);
            let v = f(x, y);
            if v < best.0 {
                best = (v, x, y);
            }
        }
    }
    best
}

#[test]
fn expected_proposals_closed_forms() {
    let e = expected_proposals(1.0, 0.5, &[0.0, 0.0], &[0.0, 0.0], 1);
    assert!((e - std::f64::consts::E).abs() < 1e-12);
    let small = expected_proposals(1.0, 1e-12, &[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 7);
    assert!((small - 7.0).abs() < 1e-9);
    // (e^2)^1 * exp(0.5 * e^2 / e^2)
    let v = expected_proposals(1.0, 1.0, &[1.0, 0.0], &[0.0, 0.0], 1);
    assert!((v - 2.5f64.exp()).abs() < 1e-9, "{v}");
}

#[test]
fn minimizer_on_quadratic_bowl() {
    let t = quadratic(2, 1.0, vec![0.0, 0.0]);
    let ledger = QueryLedger::new();
    let m = find_potential_min(&t, &[3.0, -4.0], &MinimizeOptions::default(), &ledger).unwrap();
    assert!(m.best_point.iter().all(|v| v.abs() < 1e-6), "{:?}", m.best_point);
    assert!(m.best_value.abs() < 1e-8);
    assert!(ledger.count(Phase::Optimization) > 0);
    assert_eq!(ledger.zeroth_order_count(), ledger.count(Phase::Optimization));
}

#[test]
fn minimizer_on_benchmark_mixture_matches_grid_search() {
    let t = make_gmm(&GmmSpec::benchmark_2d()).unwrap();
    let ledger = QueryLedger::new();
    let m = find_potential_min(&t, &[11.0, 0.0], &MinimizeOptions::default(), &ledger).unwrap();
    let scratch = QueryLedger::new();
    let (v, x, y) = grid_min(
        |x, y| t.eval_potential(&[x, y], &scratch, Phase::Baseline).unwrap(),
        (10.0, 12.0),
        (-1.0, 1.0),
        1e-3,
    );
    assert!((m.best_value - v).abs() < 1e-5, "{} vs {v}", m.best_value);
    assert!(m.best_value <= v + 1e-9);
    assert!((m.best_point[0] - x).abs() < 2e-3 && (m.best_point[1] - y).abs() < 2e-3);
}

#[test]
fn minimizer_on_mueller_brown_middle_well() {
    let t = make_mueller_brown(&MuellerBrownParams::default()).unwrap();
    let ledger = QueryLedger::new();
    let m = find_potential_min(&t, &[-0.05, 0.47], &MinimizeOptions::default(), &ledger).unwrap();
    let scratch = QueryLedger::new();
    // the box [-0.5, 0.5] x [0, 1] reaches down the slope toward the (0.62, 0.03)
    // well, so the grid oracle is restricted to the middle basin
    let (v, x, y) = grid_min(
        |x, y| t.eval_potential(&[x, y], &scratch, Phase::Baseline).unwrap(),
        (-0.3, 0.2),
        (0.25, 0.7),
        1e-3,
    );
    assert!(x > -0.3 && x < 0.2 && y > 0.25 && y < 0.7, "grid minimum on the boundary");
    assert!((m.best_value - v).abs() < 1e-5, "{} vs {v}", m.best_value);
    assert!((m.best_point[0] - x).abs() < 2e-3 && (m.best_point[1] - y).abs() < 2e-3);
}

#[test]
fn proposal_count_concentrates_at_e() {
    let t = quadratic(2, 1.0, vec![0.0, 0.0]);
    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(vec![0.0, 0.0], 0.0);
    let mut r = rng::stream(11, 0, 0);
    let req = RgoRequest {
        t: 0.5,
        x: vec![0.0, 0.0],
        n: 100_000,
        max_proposals: u64::MAX,
        batch_size: 256,
    };
    let res = rgo_sample(&t, &mut tracker, &req, &ledger, &mut r).unwrap();
    assert!(res.completed);
    assert_eq!(res.samples.len(), 100_000);
    assert_eq!(res.envelope_violations, 0);
    assert!(!res.vstar_improved);
    assert_eq!(ledger.count(Phase::ScoreEstimation), res.proposals_used);
    assert_eq!(res.proposals_used % 256, 0);
    // geometric waiting times: per-acceptance sd sqrt(1 - p) / p
    let p = (-1.0f64).exp();
    let se = (1.0 - p).sqrt() / p / (1e5f64).sqrt();
    let ratio = res.proposals_used as f64 / 1e5;
    assert!((ratio - std::f64::consts::E).abs() < 4.0 * se + 256.0 / 1e5, "{ratio}");
}

#[test]
fn samples_follow_the_closed_form_conditional() {
    let (c, mu) = (2.5, vec![1.0, -0.5]);
    let target = quadratic(2, c, mu.clone());
    let (t, x) = (0.4f64, vec![0.3, 0.8]);
    let s2 = (2.0 * t).exp_m1();
    let prec = c + 1.0 / s2;
    let mean: Vec<f64> = (0..2).map(|i| (c * mu[i] + t.exp() * x[i] / s2) / prec).collect();
    let var = 1.0 / prec;

    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(mu.clone(), 0.0);
    let mut r = rng::stream(12, 0, 0);
    let req = RgoRequest {
        t,
        x: x.clone(),
        n: 100_000,
        max_proposals: u64::MAX,
        batch_size: 256,
    };
    let res = rgo_sample(&target, &mut tracker, &req, &ledger, &mut r).unwrap();
    assert_eq!(res.envelope_violations, 0);
    let n = res.samples.len() as f64;
    for i in 0..2 {
        let m: f64 = res.samples.iter().map(|s| s[i]).sum::<f64>() / n;
        let v: f64 = res.samples.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((m - mean[i]).abs() < 4.0 * (var / n).sqrt(), "mean {i}: {m} vs {}", mean[i]);
        // sd of a Gaussian sample variance is var * sqrt(2 / (n - 1))
        assert!((v - var).abs() < 4.0 * var * (2.0 / (n - 1.0)).sqrt(), "var {i}: {v} vs {var}");
    }
    let cross: f64 = res
        .samples
        .iter()
        .map(|s| (s[0] - mean[0]) * (s[1] - mean[1]))
        .sum::<f64>()
        / n;
    assert!(cross.abs() < 4.0 * var / n.sqrt());
}

#[test]
fn acceptance_rate_matches_prediction() {
    let target = quadratic(2, 1.0, vec![0.0, 0.0]);
    let mut pick = rng::stream(13, 0, 0);
    for case in 0..10 {
        let t = pick.gen_range(0.1..1.0);
        let x = vec![pick.gen_range(-1.0..1.0), pick.gen_range(-1.0..1.0)];
        let p = 1.0 / expected_proposals(1.0, t, &x, &[0.0, 0.0], 1);
        let k = 200_000u64;
        let ledger = QueryLedger::new();
        let mut tracker = MinTracker::new(vec![0.0, 0.0], 0.0);
        let mut r = rng::stream(13, 1, case);
        let res = rgo_budget(&target, &mut tracker, t, &x, k, 256, &ledger, &mut r).unwrap();
        assert_eq!(res.proposals_used, k);
        assert_eq!(ledger.zeroth_order_count(), k);
        let acc = res.samples.len() as f64;
        let sd = (k as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (acc - k as f64 * p).abs() <= 2.576 * sd,
            "case {case}: t={t} x={x:?} accepted {acc}, predicted {}",
            k as f64 * p
        );
    }
}

#[test]
fn stale_minimum_is_flagged_and_tightened() {
    let target = quadratic(2, 1.0, vec![0.0, 0.0]);
    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(vec![3.0, 0.0], 4.5);
    let mut r = rng::stream(14, 0, 0);
    let mut history = vec![tracker.best_value];
    for _ in 0..20 {
        let res = rgo_budget(&target, &mut tracker, 0.3, &[0.2, 0.1], 512, 64, &ledger, &mut r).unwrap();
        history.push(tracker.best_value);
        if history.len() == 2 {
            assert!(res.vstar_improved);
            assert!(res.envelope_violations > 0);
        }
    }
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
    assert!(tracker.best_value < 0.05);
    assert!(tracker.update_count > 0);
    let v = target.eval_potential(&tracker.best_point, &QueryLedger::new(), Phase::Baseline).unwrap();
    assert_eq!(v, tracker.best_value);
}

#[test]
fn degenerate_proposal_at_the_minimizer() {
    let target = quadratic(3, 1.0, vec![0.0; 3]);
    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(vec![0.0; 3], 0.0);
    let mut r = rng::stream(15, 0, 0);
    let res = rgo_budget(&target, &mut tracker, 1e-10, &[0.0; 3], 1000, 256, &ledger, &mut r).unwrap();
    assert!(res.acceptance_rate > 0.999);
}

#[test]
fn starved_request_reports_usage() {
    let target = Target::from_potential("cliff", 1, |z: &[f64]| 1e3 + z[0] * z[0]).unwrap();
    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(vec![0.0], 0.0);
    let mut r = rng::stream(16, 0, 0);
    let req = RgoRequest {
        t: 0.5,
        x: vec![0.0],
        n: 1,
        max_proposals: 1000,
        batch_size: 256,
    };
    match rgo_sample(&target, &mut tracker, &req, &ledger, &mut r) {
        Err(Error::RgoStarved { proposals_used, .. }) => assert_eq!(proposals_used, 1000),
        other => panic!("expected starvation, got {other:?}"),
    }
    assert_eq!(ledger.zeroth_order_count(), 1000);
}

#[test]
fn invalid_requests_are_rejected() {
    let target = quadratic(2, 1.0, vec![0.0, 0.0]);
    let ledger = QueryLedger::new();
    let mut tracker = MinTracker::new(vec![0.0, 0.0], 0.0);
    let mut r = rng::stream(17, 0, 0);
    let mut req = RgoRequest {
        t: 0.0,
        x: vec![0.0, 0.0],
        n: 1,
        max_proposals: 10,
        batch_size: 4,
    };
    assert!(rgo_sample(&target, &mut tracker, &req, &ledger, &mut r).is_err());
    req.t = 0.5;
    req.x = vec![0.0];
    assert!(rgo_sample(&target, &mut tracker, &req, &ledger, &mut r).is_err());
    assert_eq!(ledger.zeroth_order_count(), 0);
}

#[test]
fn proposal_cap_defaults() {
    let mut target = quadratic(2, 1.0, vec![0.0, 0.0]);
    let tracker = MinTracker::new(vec![0.0, 0.0], 0.0);
    assert_eq!(default_max_proposals(&target, &tracker, 0.5, &[0.0, 0.0], 1), FALLBACK_MAX_PROPOSALS);
    target.smoothness_hint = Some(1.0);
    let cap = default_max_proposals(&target, &tracker, 0.5, &[0.0, 0.0], 1);
    assert_eq!(cap, (100.0 * std::f64::consts::E) as u64);
}
