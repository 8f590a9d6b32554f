use ampi_harness::sweep::{mean_sem, method_cost, read_sweep_csv, save_sweep_csv};
use ampi_harness::{run_sweep, viability_cutoff, Method, RawConfig, SweepConfig, SweepResult};
use proptest::prelude::*;

/// Noisy-oracle panel at desk scale: 400 test rows, so the cutoffs are
/// 11 (cheap), 17 (ampi) and 23 (expensive).
const SMALL: &str = r#"
[sweep]
budgets = [10.0, 15.0, 20.0, 30.0, 50.0, 80.0]
trials = 24
methods = ["ampi", "asi:cheap", "asi:expensive"]
seed = 21
burn_in = 300

[costs]
predictor.cheap = 0.01
predictor.expensive = 0.04

[uncertainty]
kind = "oracle"

[data]
source = "noisy"
n = 2000
sigma.cheap = 2.5
sigma.expensive = 0.75
"#;

fn config(extra: &[(&str, &str)]) -> SweepConfig {
    let mut raw = RawConfig::parse(SMALL).unwrap();
    for (k, v) in extra {
        raw.set(k, v).unwrap();
    }
    raw.build().unwrap()
}

fn run_with_threads(cfg: &SweepConfig, threads: usize) -> SweepResult {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_sweep(cfg)).unwrap()
}

#[test]
fn rows_below_cutoff_are_omitted() {
    let cfg = config(&[]);
    let result = run_sweep(&cfg).unwrap();
    assert_eq!(result.n_test, 400);
    for method in &cfg.methods {
        let cutoff = viability_cutoff(method_cost(&cfg, method), result.n_test, cfg.n_min, cfg.label_cost);
        let name = method.to_string();
        for &b in &cfg.budgets {
            assert_eq!(result.row(b, &name).is_some(), b >= cutoff, "{name} at {b} (cutoff {cutoff})");
        }
    }
    let first = |m: &str| result.rows_for(m).map(|r| r.budget).fold(f64::INFINITY, f64::min);
    assert_eq!(first("asi:cheap"), 15.0);
    assert_eq!(first("ampi"), 20.0);
    assert_eq!(first("asi:expensive"), 30.0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = config(&[("sweep.trials", "10")]);
    let one = run_with_threads(&cfg, 1);
    let three = run_with_threads(&cfg, 3);
    assert_eq!(one, three);
}

#[test]
fn adding_a_method_leaves_others_unchanged() {
    let base = config(&[("sweep.methods", r#"["ampi", "asi:cheap"]"#), ("sweep.trials", "8")]);
    let more = config(&[("sweep.methods", r#"["asi:expensive", "ampi", "asi-mixture", "asi:cheap"]"#), ("sweep.trials", "8")]);
    let a = run_sweep(&base).unwrap();
    let b = run_sweep(&more).unwrap();
    for row in &a.rows {
        assert_eq!(Some(row), b.row(row.budget, &row.method), "{}", row.method);
    }
}

#[test]
fn reported_sem_matches_records() {
    let cfg = config(&[]);
    let result = run_sweep(&cfg).unwrap();
    for row in &result.rows {
        let bi = cfg.budgets.iter().position(|&b| b == row.budget).unwrap();
        let mi = cfg.methods.iter().position(|m| m.to_string() == row.method).unwrap();
        let widths: Vec<f64> = result
            .records
            .iter()
            .filter(|r| r.budget_index == bi && r.method_index == mi)
            .map(|r| r.width)
            .collect();
        assert_eq!(widths.len(), row.n_trials_effective);
        let n = widths.len() as f64;
        let mean = widths.iter().sum::<f64>() / n;
        let sd = (widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((row.ci_width_mean - mean).abs() <= 1e-12 * mean);
        assert!((row.ci_width_sem - sd / n.sqrt()).abs() <= 1e-12 * row.ci_width_sem.max(1e-300));
        assert!(row.ci_width_sem >= 0.0 && (0.0..=1.0).contains(&row.coverage));
    }
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn widths_shrink_with_budget() {
    let cfg = config(&[]);
    let result = run_sweep(&cfg).unwrap();
    for method in ["ampi", "asi:cheap", "asi:expensive"] {
        let rows: Vec<_> = result.rows_for(method).collect();
        assert!(rows.len() >= 3);
        let xs: Vec<f64> = rows.iter().map(|r| r.budget).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.ci_width_mean).collect();
        assert!(spearman(&xs, &ys) < 0.0, "{method}: {ys:?}");
    }
}

#[test]
fn sweep_csv_round_trips() {
    let cfg = config(&[("sweep.trials", "4"), ("sweep.budgets", "[30.0, 50.0]")]);
    let result = run_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    save_sweep_csv(&result.rows, &path).unwrap();
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "budget,method,ci_width_mean,ci_width_sem,coverage,mean_labels,mean_spend,n_trials_effective,viable"
    );
    assert_eq!(read_sweep_csv(&path).unwrap(), result.rows);
}

#[test]
fn random_routing_methods_run() {
    let cfg = config(&[
        ("sweep.methods", r#"["ampi-random", "asi-mixture"]"#),
        ("sweep.trials", "6"),
        ("sweep.budgets", "[30.0, 80.0]"),
    ]);
    assert_eq!(cfg.methods, vec![Method::AmpiRandom, Method::AsiMixture]);
    let result = run_sweep(&cfg).unwrap();
    assert_eq!(result.rows.len(), 4);
    assert!(result.rows.iter().all(|r| r.viable && r.ci_width_mean > 0.0));
}

proptest! {
    #[test]
    fn cutoff_grows_with_cost(c in 0.0f64..1.0, dc in 0.0f64..1.0, n in 1usize..10_000, n_min in 1usize..50) {
        let lo = viability_cutoff(c, n, n_min, 1.0);
        prop_assert!(viability_cutoff(c + dc, n, n_min, 1.0) >= lo);
        prop_assert!(lo >= n_min as f64);
    }

    #[test]
    fn sem_is_nonnegative_and_shift_invariant(values in prop::collection::vec(-1e3f64..1e3, 2..40), shift in -1e3f64..1e3) {
        let a = mean_sem(&values);
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let b = mean_sem(&shifted);
        prop_assert!(a.sem >= 0.0);
        prop_assert!((a.sem - b.sem).abs() <= 1e-6 * (1.0 + a.sem));
        prop_assert!((b.mean - a.mean - shift).abs() <= 1e-9 * (1.0 + shift.abs() + a.mean.abs()));
    }
}
