use mkq_core::bench::{
    mse, pointwise_mse_curve, time_to_threshold, write_reports_csv, BenchReport, ProblemSpec, RaceOptions,
    SolverSpec,
};
use mkq_core::distributions::{beta_quantile, sample_uniform_cube, BetaTarget};
use mkq_core::sgd::SolverConfig;
use mkq_core::{CostKind, GridSpec};

#[test]
fn mse_ignores_probe_order() {
    let probe = sample_uniform_cube(2, 50, 3);
    let mut rows: Vec<Vec<f64>> = probe.iter().map(|p| p.to_vec()).collect();
    rows.reverse();
    let shuffled = mkq_core::ObservationSet::from_rows(2, &rows).unwrap();
    let est = |x: &[f64]| Ok(vec![x[0] * x[0], x[1] + 0.1]);
    let truth = |x: &[f64]| x.to_vec();
    let a = mse(est, truth, &probe).unwrap();
    let b = mse(est, truth, &shuffled).unwrap();
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn empirical_median_error_matches_asymptotic_variance() {
    // 1 / (4 J f(½)²) with f(½) = Γ(10)/Γ(5)² · 2⁻⁸ for Beta(5, 5)
    let density: f64 = 362_880.0 / (24.0 * 24.0) / 256.0;
    let asymptotic = 1.0 / (4.0 * 100.0 * density * density);
    assert!((asymptotic - 4.13e-4).abs() < 1e-6);

    let grid = GridSpec::new(vec![8]).unwrap();
    let mut cfg = SolverConfig::new(grid, CostKind::StandardQuadratic, 0.05);
    cfg.max_iters = 1;
    let target = BetaTarget::new(5.0, 5.0).unwrap();
    let truth = |x: f64| beta_quantile(5.0, 5.0, x).unwrap();
    let curve = pointwise_mse_curve(&cfg, &target, &truth, &[0.5], 100, 2000, 1).unwrap();
    let rel = (curve.empirical[0] - asymptotic).abs() / asymptotic;
    assert!(rel < 0.25, "empirical MSE {} vs {asymptotic}", curve.empirical[0]);
}

#[test]
fn pointwise_curve_rejects_bad_inputs() {
    let grid = GridSpec::new(vec![8]).unwrap();
    let cfg = SolverConfig::new(grid, CostKind::StandardQuadratic, 0.05);
    let target = BetaTarget::new(2.0, 2.0).unwrap();
    let truth = |x: f64| x;
    assert!(pointwise_mse_curve(&cfg, &target, &truth, &[0.5], 10, 1, 0).is_err());
    assert!(pointwise_mse_curve(&cfg, &target, &truth, &[0.5], 0, 4, 0).is_err());
}

fn small_problem() -> ProblemSpec {
    ProblemSpec {
        dim: 2,
        n_obs: 200,
        probes: 100,
        seed: 4,
    }
}

fn small_fft() -> SolverSpec {
    let mut config = SolverConfig::new(GridSpec::new(vec![8, 8]).unwrap(), CostKind::StandardQuadratic, 0.01);
    config.gamma = 0.02;
    config.c_exponent = 0.51;
    SolverSpec::Fft { config }
}

#[test]
fn smoke_race_completes_within_budget() {
    let opts = RaceOptions {
        threshold: 5e-2,
        max_iters: 20_000,
        replicates: 3,
        ..Default::default()
    };
    let report = time_to_threshold(&small_fft(), &small_problem(), &opts).unwrap();
    assert_eq!(report.solver, "fft");
    assert_eq!(report.problem, "linear_map_2");
    assert_eq!(report.summary.completed, 3, "{:?}", report.summary);
    for r in &report.replicates {
        assert!(r.checkpoints.windows(2).all(|w| w[1].seconds >= w[0].seconds));
        assert!(r.checkpoints.last().unwrap().mse < 5e-2);
        assert_eq!(r.iters_to_threshold, Some(r.checkpoints.last().unwrap().iter));
    }
}

#[test]
fn shared_seed_gives_zero_spread_in_iterations() {
    let opts = RaceOptions {
        threshold: 5e-2,
        max_iters: 20_000,
        replicates: 4,
        shared_seed: true,
        ..Default::default()
    };
    let report = time_to_threshold(&small_fft(), &small_problem(), &opts).unwrap();
    assert_eq!(report.summary.completed, 4);
    assert_eq!(report.summary.sd_iters, Some(0.0));
    let first: Vec<_> = report.replicates[0].checkpoints.iter().map(|c| (c.iter, c.mse)).collect();
    for r in &report.replicates[1..] {
        let other: Vec<_> = r.checkpoints.iter().map(|c| (c.iter, c.mse)).collect();
        assert_eq!(first, other);
    }
}

#[test]
fn exhausted_budget_is_censored() {
    let opts = RaceOptions {
        threshold: 1e-12,
        max_iters: 300,
        replicates: 2,
        ..Default::default()
    };
    let solver = SolverSpec::Semidiscrete {
        epsilon: 0.01,
        gamma: 1.0,
        c_exponent: 0.75,
    };
    let report = time_to_threshold(&solver, &small_problem(), &opts).unwrap();
    assert_eq!(report.summary.censored, 2);
    assert_eq!(report.summary.mean_seconds, None);
    assert!(report.replicates.iter().all(|r| r.checkpoints.len() == 100));
}

#[test]
fn reports_serialize_to_csv_and_json() {
    let opts = RaceOptions {
        threshold: 1e-12,
        max_iters: 4,
        replicates: 2,
        ..Default::default()
    };
    let solver = SolverSpec::Sinkhorn {
        epsilon: 0.05,
        grid: GridSpec::new(vec![6, 6]).unwrap(),
    };
    let report = time_to_threshold(&solver, &small_problem(), &opts).unwrap();
    let mut buf = Vec::new();
    write_reports_csv(std::slice::from_ref(&report), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("solver,problem,n,replicate,iter,seconds,mse"));
    assert_eq!(lines.count(), 8);
    assert!(text.contains("sinkhorn,linear_map_2,200,1,3,"));

    let back: BenchReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}
