//! Acceptance checks. Prints one `PASS` or `FAIL` line per criterion. With
//! `AMPI_ACCEPTANCE_STRICT=1` the process exits nonzero if any criterion
//! fails; otherwise failures are reported without failing the test run.
//!
//! `cargo test --release --test acceptance` runs it alone; the sweeps take
//! several minutes on one core.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use ampi_core::analytic::{ratio_r1, ratio_r2, var_ampi, var_asi};
use ampi_core::datagen::{gen_two_population, CHEAP, EXPENSIVE};
use ampi_core::engine::{asi_config, deploy_with_stored_labels, increment, point_estimate};
use ampi_core::optimizer::{
    calibrate, expected_spend, mu_closed_form, pi_star, solve_lambda_wls, uncertainty_table, CalibrationOptions,
};
use ampi_core::rng::{self, domain};
use ampi_core::uncertainty::{BoostParams, BoostedTrees, InstanceView, UncertaintyModel, UncertaintySpec};
use ampi_core::{
    CalibrationDiagnostics, CalibrationResult, CostModel, Dataset, RoutingMode, Subset, SubsetFamily, SubsetFit,
    TwoPopParams,
};
use ampi_harness::sources::DataProvider;
use ampi_harness::sweep::method_cost;
use ampi_harness::{run_sweep, viability_cutoff, RawConfig, SweepConfig, SweepResult, SweepRow};
use ndarray::Array2;

/// Lower bound on empirical coverage of a 90% interval over 500 trials
/// (two binomial standard errors).
const COVERAGE_MIN: f64 = 0.873;
/// Required AM-PPI width gain over the better baseline at some budget.
const STRICT_GAIN: f64 = 0.05;
const EQUAL_COST_RANGE: (f64, f64) = (0.05, 0.45);
const SPEND_TOL: f64 = 1e-6;
const MU_TOL: f64 = 1e-6;
const WLS_TOL: f64 = 1e-10;
const MOMENT_TOL: f64 = 1e-8;
const ENUM_TOL: f64 = 1e-12;
const BIAS_SE: f64 = 3.0;
const VAR_REL_TOL: f64 = 0.10;
const PI_TOL: f64 = 1e-12;
const RATIO_REL_TOL: f64 = 0.05;
const BREAK_EVEN_TOL: f64 = 1e-12;

type Check = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// A bundled config with `key = literal` overrides; environment overrides
/// are deliberately not applied.
fn config(name: &str, overrides: &[(&str, &str)]) -> SweepConfig {
    let path = repo_file(&format!("configs/{name}"));
    let mut raw = RawConfig::from_file(&path).unwrap();
    for (k, v) in overrides {
        raw.set(k, v).unwrap();
    }
    let mut cfg = raw.build().unwrap();
    cfg.resolve_paths(&path);
    cfg
}

fn viable<'a>(res: &'a SweepResult, budget: f64, method: &str) -> Option<&'a SweepRow> {
    res.row(budget, method).filter(|r| r.viable)
}

fn panel_e() -> &'static SweepResult {
    static CELL: OnceLock<SweepResult> = OnceLock::new();
    CELL.get_or_init(|| run_sweep(&config("panel_e.toml", &[])).unwrap())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn ac1_coverage() -> Verdict {
    let res = run_sweep(&config("synthetic_5_1.toml", &[("sweep.trials", "500")])).unwrap();
    let rows: Vec<&SweepRow> = res.rows.iter().filter(|r| r.viable).collect();
    let Some(worst) = rows.iter().min_by(|a, b| a.coverage.total_cmp(&b.coverage)) else {
        return verdict(false, "no viable rows");
    };
    let low: Vec<String> = rows
        .iter()
        .filter(|r| r.coverage < COVERAGE_MIN)
        .map(|r| format!("{}@{}={:.3}", r.method, r.budget, r.coverage))
        .collect();
    verdict(
        low.is_empty(),
        format!(
            "{} rows x 500 trials, min coverage {:.3} ({} at B={}), need >= {COVERAGE_MIN}{}",
            rows.len(),
            worst.coverage,
            worst.method,
            worst.budget,
            if low.is_empty() { String::new() } else { format!("; below: {}", low.join(" ")) }
        ),
    )
}

fn ac2_dominance() -> Verdict {
    let res = panel_e();
    let mut violations = Vec::new();
    let mut gains = Vec::new();
    for a in res.rows_for("ampi").filter(|r| r.viable) {
        let bases: Vec<&SweepRow> =
            ["asi:cheap", "asi:expensive"].iter().filter_map(|m| viable(res, a.budget, m)).collect();
        let Some(best) = bases.iter().min_by(|x, y| x.ci_width_mean.total_cmp(&y.ci_width_mean)) else {
            continue;
        };
        let tol = a.ci_width_sem.max(best.ci_width_sem);
        if a.ci_width_mean > best.ci_width_mean + tol {
            violations.push(format!("B={}: {:.4} > {:.4}+{:.4}", a.budget, a.ci_width_mean, best.ci_width_mean, tol));
        }
        if bases.len() == 2 {
            gains.push((a.budget, 1.0 - a.ci_width_mean / best.ci_width_mean));
        }
    }
    let strict: Vec<String> =
        gains.iter().filter(|g| g.1 >= STRICT_GAIN).map(|g| format!("{}:{:.1}%", g.0, 100.0 * g.1)).collect();
    let best_gain = gains.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        violations.is_empty() && !strict.is_empty(),
        format!(
            "{} dominance violations{}; max gain where both baselines viable {:.1}%, budgets with >= 5%: [{}]",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(" ({})", violations.join(", ")) },
            100.0 * best_gain,
            strict.join(" ")
        ),
    )
}

fn ac3_random_routing() -> Verdict {
    let res = run_sweep(&config("panel_f.toml", &[])).unwrap();
    let mut parts = Vec::new();
    let mut fails = 0;
    for r in res.rows_for("ampi-random").filter(|r| r.viable) {
        let Some(m) = viable(&res, r.budget, "asi-mixture") else { continue };
        let tol = r.ci_width_sem.max(m.ci_width_sem);
        let gap = (r.ci_width_mean - m.ci_width_mean) / tol;
        if gap.abs() > 1.0 {
            fails += 1;
        }
        parts.push(format!("B={}:{:+.2}SEM", r.budget, gap));
    }
    verdict(
        fails == 0 && !parts.is_empty(),
        format!("ampi-random minus asi-mixture width: {} ({fails} outside 1 SEM)", parts.join(" ")),
    )
}

fn ac4_equal_cost() -> Verdict {
    let mut cfg = config("equal_cost.toml", &[("sweep.trials", "500")]);
    let n_test = DataProvider::new(&cfg).unwrap().n_test();
    let cutoff = cfg
        .methods
        .iter()
        .map(|m| viability_cutoff(method_cost(&cfg, m), n_test, cfg.n_min, cfg.label_cost))
        .fold(0.0, f64::max);
    let Some(&budget) = cfg.budgets.iter().find(|&&b| b >= cutoff) else {
        return verdict(false, "no configured budget clears the viability cutoff");
    };
    cfg.budgets = vec![budget];
    let res = run_sweep(&cfg).unwrap();
    let w = |m: &str| viable(&res, budget, m).map_or(f64::NAN, |r| r.ci_width_mean);
    let (ampi, cheap, expensive) = (w("ampi"), w("asi:cheap"), w("asi:expensive"));
    let reduction = 1.0 - ampi / ((cheap + expensive) / 2.0);
    verdict(
        (EQUAL_COST_RANGE.0..=EQUAL_COST_RANGE.1).contains(&reduction),
        format!(
            "B={budget}: ampi {ampi:.4}, asi:cheap {cheap:.4}, asi:expensive {expensive:.4}, reduction {:.1}% (need 5-45%)",
            100.0 * reduction
        ),
    )
}

/// Heteroscedastic fixture: `f` has noise growing with `|x0|`, `h` is
/// uniformly noisier.
fn hetero_dataset(seed: u64, n: usize) -> Dataset {
    let mut g = rng::stream(seed);
    let x = Array2::from_shape_simple_fn((n, 2), || rng::standard_normal(&mut g));
    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + 0.5 * x[(i, 1)] + 0.5 * rng::standard_normal(&mut g)).collect();
    let f: Vec<f64> = (0..n).map(|i| y[i] + 0.3 * (1.0 + x[(i, 0)].abs()) * rng::standard_normal(&mut g)).collect();
    let h: Vec<f64> = y.iter().map(|v| v + 1.0 * rng::standard_normal(&mut g)).collect();
    Dataset::labeled(x, y, BTreeMap::from([("f".to_string(), f), ("h".to_string(), h)])).unwrap()
}

fn fixture_costs(b: f64) -> CostModel {
    CostModel::new(BTreeMap::from([("f".into(), 0.01), ("h".into(), 0.03)]), 1.0, b).unwrap()
}

fn spend_of(burn: &Dataset, calib: &CalibrationResult, mu: f64, n: usize) -> f64 {
    expected_spend(
        burn,
        &calib.family,
        &calib.fits,
        &calib.costs,
        mu,
        n,
        calib.pi_floor,
        calib.routing,
        calib.uncertainty_features.as_deref(),
    )
    .unwrap()
}

fn ac5_budget_identity() -> Verdict {
    let n = 2000;
    let burn = hetero_dataset(51, 500);
    let opts = CalibrationOptions { uncertainty: UncertaintySpec::Fixed(BoostParams::default()), ..Default::default() };
    let ids = ["f", "h"];
    let mut worst_exact: f64 = 0.0;
    let mut worst_tie: f64 = 0.0;
    let mut ties = 0;
    let mut failures = Vec::new();
    let mut cases = 0;
    for (name, family) in [
        ("singleton", SubsetFamily::new(vec![Subset::singleton("f")]).unwrap()),
        ("singletons", SubsetFamily::singletons(&ids).unwrap()),
        ("all-subsets", SubsetFamily::all_nonempty(&ids).unwrap()),
    ] {
        for b in [0.05, 0.08, 0.12] {
            cases += 1;
            let calib = calibrate(&burn, &family, &fixture_costs(b), n, &opts).unwrap();
            let d = &calib.diagnostics;
            if !d.budget_binding {
                failures.push(format!("{name}@{b}: not binding"));
                continue;
            }
            let mu = calib.multiplier;
            let at = spend_of(&burn, &calib, mu, n);
            let above = spend_of(&burn, &calib, mu * (1.0 - 1e-12), n);
            let exact = (at - b).abs() / b;
            if exact <= SPEND_TOL {
                worst_exact = worst_exact.max(exact);
                continue;
            }
            // a routing switch on the burn-in sample makes the spend jump
            // across b; the randomized tie must then resolve it exactly
            ties += 1;
            let resolved = at + d.tie_fraction * (above - at);
            let err = ((resolved - b).abs() / b).max((d.resolved_spend - b).abs() / b);
            worst_tie = worst_tie.max(err);
            if !(at <= b && b <= above) || err > SPEND_TOL {
                failures.push(format!("{name}@{b}: spend {at} / {above}, resolved {resolved}"));
            }
        }
    }

    // closed form on a single unclipped subset
    let b = 0.05;
    let family = SubsetFamily::new(vec![Subset::singleton("f")]).unwrap();
    let unclipped = CalibrationOptions { pi_floor: 1e-9, ..opts.clone() };
    let calib = calibrate(&burn, &family, &fixture_costs(b), n, &unclipped).unwrap();
    let u = uncertainty_table(&burn, &family, &[&calib.fits[0].model], None).unwrap();
    let mu_cf = mu_closed_form(mean(&u), b, 0.01, 1.0, n).unwrap();
    let pis: Vec<f64> = u.iter().map(|&v| pi_star(v * v, n, calib.multiplier, 1.0).unwrap()).collect();
    let in_range = pis.iter().all(|&p| p > unclipped.pi_floor && p < 1.0);
    let mu_err = (calib.multiplier - mu_cf).abs() / mu_cf;
    if !in_range {
        failures.push("closed-form fixture clips".into());
    }
    if mu_err > MU_TOL {
        failures.push(format!("mu {} vs closed form {mu_cf}", calib.multiplier));
    }
    verdict(
        failures.is_empty(),
        format!(
            "{cases} calibrations: max exact rel gap {worst_exact:.1e}, {ties} tie-resolved (max rel gap {worst_tie:.1e}); \
             closed-form mu rel err {mu_err:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

/// Normal equations solved by Gauss-Jordan elimination with partial
/// pivoting.
fn gauss_jordan_wls(x: &[f64], q: usize, y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut a = vec![vec![0.0; q + 1]; q];
    for ((row, &t), &wi) in x.chunks_exact(q).zip(y).zip(w) {
        for r in 0..q {
            for c in 0..q {
                a[r][c] += wi * row[r] * row[c];
            }
            a[r][q] += wi * row[r] * t;
        }
    }
    for col in 0..q {
        let piv = (col..q).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..q {
            if r != col {
                let factor = a[r][col];
                let pivot_row = a[col].clone();
                for (v, pv) in a[r].iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
    }
    a.iter().map(|row| row[q]).collect()
}

fn ac6_wls() -> Verdict {
    let mut g = rng::stream(6);
    let mut worst_coef: f64 = 0.0;
    let mut worst_moment: f64 = 0.0;
    let cases = 200;
    for case in 0..cases {
        let q = 1 + case % 4;
        let m = 20 + (rng::uniform(&mut g) * 200.0) as usize;
        let x: Vec<f64> = (0..m * q).map(|_| rng::standard_normal(&mut g)).collect();
        let beta: Vec<f64> = (0..q).map(|_| 2.0 * rng::standard_normal(&mut g)).collect();
        let y: Vec<f64> = x
            .chunks_exact(q)
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + rng::standard_normal(&mut g))
            .collect();
        let w: Vec<f64> = (0..m).map(|_| 0.1 + 5.0 * rng::uniform(&mut g)).collect();
        let lambda = solve_lambda_wls(&x, q, &y, &w, 0.0).unwrap();
        let oracle = gauss_jordan_wls(&x, q, &y, &w);
        for (a, b) in lambda.iter().zip(&oracle) {
            worst_coef = worst_coef.max((a - b).abs() / b.abs().max(1.0));
        }
        let mut moment = vec![0.0; q];
        for ((row, &t), &wi) in x.chunks_exact(q).zip(&y).zip(&w) {
            let resid = t - row.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
            for (acc, v) in moment.iter_mut().zip(row) {
                *acc += wi * v * resid / m as f64;
            }
        }
        worst_moment = moment.iter().fold(worst_moment, |acc, v| acc.max(v.abs()));
    }
    verdict(
        worst_coef <= WLS_TOL && worst_moment < MOMENT_TOL,
        format!("{cases} fixtures (q=1..4): max coefficient gap {worst_coef:.1e}, max moment residual {worst_moment:.1e}"),
    )
}

/// Monte Carlo fixture with known residual variances: a hard flag picks
/// the predictor's noise sd (1.5 hard, 0.5 easy), the uncertainty model
/// reproduces the sd exactly and the multiplier puts the labeling
/// probabilities at 0.6 and 0.2.
struct MonteCarlo {
    theta: Vec<f64>,
    var_over_n: Vec<f64>,
    plug_in_over_n: f64,
}

const MC_N: usize = 200;
const MC_TRIALS: usize = 10_000;
const MC_SD: [f64; 2] = [0.5, 1.5];

fn oracle_calibration(n: usize) -> CalibrationResult {
    let params = BoostParams { n_trees: 1, max_depth: 1, learning_rate: 1.0, min_samples_leaf: 1 };
    let model = BoostedTrees::fit(&[0.0, 1.0], 1, &MC_SD, params).unwrap();
    let model = UncertaintyModel::Boosted { model, feature_dim: 1 };
    let subset = Subset::singleton("f");
    CalibrationResult {
        family: SubsetFamily::new(vec![subset.clone()]).unwrap(),
        fits: vec![SubsetFit { subset, cost: 0.0, weights: vec![1.0], model }],
        multiplier: 2.5 * 2.5 / n as f64,
        costs: CostModel::new(BTreeMap::from([("f".into(), 0.0)]), 1.0, 1.0).unwrap(),
        deployment_n: n,
        pi_floor: 1e-6,
        routing: RoutingMode::Optimal,
        uncertainty_features: None,
        diagnostics: CalibrationDiagnostics::default(),
    }
}

fn monte_carlo() -> &'static MonteCarlo {
    static CELL: OnceLock<MonteCarlo> = OnceLock::new();
    CELL.get_or_init(|| {
        let calib = oracle_calibration(MC_N);
        let mut plug_in = 1.0;
        for (flag, sd) in MC_SD.iter().enumerate() {
            let view = InstanceView { features: &[flag as f64], predictions: &[0.0], label: None };
            assert_eq!(calib.fits[0].model.predict(&view).unwrap(), *sd, "fixture surrogate must be exact");
            let pi = pi_star(sd * sd, MC_N, calib.multiplier, 1.0).unwrap();
            plug_in += 0.5 * sd * sd * (1.0 / pi - 1.0);
        }
        let mut theta = Vec::with_capacity(MC_TRIALS);
        let mut var_over_n = Vec::with_capacity(MC_TRIALS);
        for t in 0..MC_TRIALS as u64 {
            let mut g = rng::stream(rng::derive_seed(70, &[domain::TRIAL, t]));
            let x = Array2::from_shape_simple_fn((MC_N, 1), || if rng::uniform(&mut g) < 0.5 { 1.0 } else { 0.0 });
            let y: Vec<f64> = (0..MC_N).map(|_| 1.0 + rng::standard_normal(&mut g)).collect();
            let f: Vec<f64> = (0..MC_N).map(|i| y[i] + MC_SD[x[(i, 0)] as usize] * rng::standard_normal(&mut g)).collect();
            let ds = Dataset::labeled(x, y, BTreeMap::from([("f".to_string(), f)])).unwrap();
            let out = deploy_with_stored_labels(&ds, &calib, 0.1, rng::derive_seed(70, &[domain::DEPLOY, t])).unwrap();
            theta.push(out.estimate.theta_hat);
            var_over_n.push(out.estimate.sigma_sq_hat / MC_N as f64);
        }
        MonteCarlo { theta, var_over_n, plug_in_over_n: plug_in / MC_N as f64 }
    })
}

fn ac7_unbiased() -> Verdict {
    let mut g = rng::stream(7);
    let mut worst: f64 = 0.0;
    let cases = 500;
    for case in 0..cases {
        let y: Vec<f64> = (0..3).map(|_| 2.0 * rng::standard_normal(&mut g)).collect();
        let preds: Vec<[f64; 2]> =
            (0..3).map(|_| [2.0 * rng::standard_normal(&mut g), 2.0 * rng::standard_normal(&mut g)]).collect();
        let lambda = [6.0 * rng::uniform(&mut g) - 3.0, 6.0 * rng::uniform(&mut g) - 3.0];
        let pis: Vec<f64> =
            (0..3).map(|i| if (case + i) % 4 == 0 { 1.0 } else { 0.05 + 0.95 * rng::uniform(&mut g) }).collect();
        let mut expectation = 0.0;
        for mask in 0u32..8 {
            let mut prob = 1.0;
            let inc: Vec<f64> = (0..3)
                .map(|i| {
                    let xi = mask & (1 << i) != 0;
                    prob *= if xi { pis[i] } else { 1.0 - pis[i] };
                    increment(lambda[0] * preds[i][0] + lambda[1] * preds[i][1], xi.then_some(y[i]), pis[i])
                })
                .collect();
            expectation += prob * point_estimate(&inc).unwrap();
        }
        worst = worst.max((expectation - mean(&y)).abs());
    }
    let mc = monte_carlo();
    let m = mean(&mc.theta);
    let se = (sample_var(&mc.theta) / mc.theta.len() as f64).sqrt();
    let z = (m - 1.0) / se;
    verdict(
        worst <= ENUM_TOL && z.abs() <= BIAS_SE,
        format!(
            "n=3 enumeration over {cases} fixtures: max |E - ybar| {worst:.1e}; \
             Monte Carlo ({MC_TRIALS} x n={MC_N}): mean {m:.5}, target 1, {z:+.2} SE"
        ),
    )
}

fn ac8_variance() -> Verdict {
    let mc = monte_carlo();
    let reported = mean(&mc.var_over_n);
    let empirical = sample_var(&mc.theta);
    let rel_emp = (reported - empirical).abs() / empirical;
    let rel_plug = (reported - mc.plug_in_over_n).abs() / mc.plug_in_over_n;
    verdict(
        rel_emp <= VAR_REL_TOL && rel_plug <= VAR_REL_TOL,
        format!(
            "mean sigma^2/n {reported:.6}, empirical Var {empirical:.6} ({:.1}% off), plug-in {:.6} ({:.1}% off)",
            100.0 * rel_emp,
            mc.plug_in_over_n,
            100.0 * rel_plug
        ),
    )
}

fn ac9_reduces_to_asi() -> Verdict {
    let n = 1000;
    let burn = hetero_dataset(91, 400);
    let stream = hetero_dataset(92, n);
    let costs = fixture_costs(0.1);
    let opts = CalibrationOptions {
        uncertainty: UncertaintySpec::Fixed(BoostParams::default()),
        unit_lambda: true,
        ..Default::default()
    };
    let calib = asi_config("f", &burn, &costs, n, &opts).unwrap();
    if calib.fits.len() != 1 || calib.fits[0].weights != [1.0] {
        return verdict(false, format!("weights {:?}", calib.fits.iter().map(|f| &f.weights).collect::<Vec<_>>()));
    }
    let seed = 909;
    let out = deploy_with_stored_labels(&stream, &calib, 0.1, seed).unwrap();
    let label_key = rng::derive_seed(seed, &[domain::LABEL_DRAW]);
    let (features, d) = stream.feature_matrix(None).unwrap();
    let f = stream.prediction("f").unwrap();
    let mu = calib.multiplier;
    let mut pi_gap: f64 = 0.0;
    let mut mismatched = 0;
    for i in 0..n {
        let view = InstanceView { features: &features[i * d..(i + 1) * d], predictions: &[f[i]], label: None };
        let u = calib.fits[0].model.predict(&view).unwrap();
        let pi = (u * u / (n as f64 * mu * 1.0)).sqrt().max(calib.pi_floor).min(1.0);
        let xi = if rng::instance_uniform(label_key, i as u64) < pi { 1.0 } else { 0.0 };
        let y = stream.label(i).unwrap();
        let asi = f[i] + (y - f[i]) * xi / pi;
        pi_gap = pi_gap.max((out.decisions[i].pi_hat - pi).abs());
        if asi.to_bits() != out.increments[i].to_bits() || out.decisions[i].labeled != (xi == 1.0) {
            mismatched += 1;
        }
    }
    verdict(
        mismatched == 0 && pi_gap <= PI_TOL,
        format!(
            "{n} instances, {} labeled: {mismatched} increments differ bitwise from the baseline, max pi gap {pi_gap:.1e}",
            out.labels_collected
        ),
    )
}

const TP_BURN: usize = 4000;
const TP_N: usize = 2000;
const TP_TRIALS: usize = 30_000;

fn ac10_two_population() -> Verdict {
    let params = TwoPopParams {
        p: 0.5,
        r_e: 1e-4,
        r_h: 1.0,
        delta: 0.75,
        c1: 1e-4,
        c2: 0.01,
        c_label: 1.0,
        b: 0.02,
        n: TP_N,
        var_y: 1.0,
    };
    let phi = params.c2 / params.b;
    let predicted = ratio_r2(params.p, phi).unwrap();
    let exact = var_asi(&params, 2, false).unwrap() / var_ampi(&params, false).unwrap();

    let burn = gen_two_population(&params, TP_BURN, 1001).unwrap().dataset;
    let costs =
        CostModel::new(BTreeMap::from([(CHEAP.into(), params.c1), (EXPENSIVE.into(), params.c2)]), 1.0, params.b).unwrap();
    let opts = CalibrationOptions {
        uncertainty: UncertaintySpec::Fixed(BoostParams {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
        }),
        unit_lambda: true,
        pi_floor: 1e-5,
        ..Default::default()
    };
    let ampi = calibrate(&burn, &SubsetFamily::singletons(&[CHEAP, EXPENSIVE]).unwrap(), &costs, TP_N, &opts).unwrap();
    let asi = asi_config(EXPENSIVE, &burn, &costs, TP_N, &opts).unwrap();

    let (mut err_ampi, mut err_asi) = (Vec::with_capacity(TP_TRIALS), Vec::with_capacity(TP_TRIALS));
    for t in 0..TP_TRIALS as u64 {
        let stream = gen_two_population(&params, TP_N, rng::derive_seed(1002, &[domain::TRIAL, t])).unwrap().dataset;
        let ybar = mean(&stream.require_labels().unwrap());
        let seed = rng::derive_seed(1002, &[domain::DEPLOY, t]);
        err_ampi.push(deploy_with_stored_labels(&stream, &ampi, 0.1, seed).unwrap().estimate.theta_hat - ybar);
        err_asi.push(deploy_with_stored_labels(&stream, &asi, 0.1, seed).unwrap().estimate.theta_hat - ybar);
    }
    let measured = sample_var(&err_asi) / sample_var(&err_ampi);
    let rel = (measured - predicted).abs() / predicted;

    let mut worst_break_even: f64 = 0.0;
    for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
        for phi in [0.1, 0.3, 0.5, 0.7, 0.9] {
            worst_break_even = worst_break_even.max((ratio_r1(p, phi, (1.0 - p) * phi).unwrap() - 1.0).abs());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("heatmap.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_ampi"))
        .args(["analytic", "--out", csv.to_str().unwrap()])
        .env_remove("RUST_LOG")
        .status()
        .unwrap();
    let cell = status
        .success()
        .then(|| std::fs::read_to_string(&csv).ok())
        .flatten()
        .and_then(|text| {
            text.lines().find(|l| l.starts_with("expensive,0.5,0.5,")).map(|l| {
                let v: Vec<f64> = l.split(',').skip(4).take(2).map(|s| s.parse().unwrap()).collect();
                (v[0], v[1])
            })
        });
    let cell_ok = cell.is_some_and(|(ratio, pct)| (ratio - 1.5).abs() < 1e-12 && (pct - 18.35).abs() < 0.005);
    verdict(
        rel <= RATIO_REL_TOL && worst_break_even <= BREAK_EVEN_TOL && cell_ok,
        format!(
            "variance ratio ASI/AM-PPI {measured:.4} over {TP_TRIALS} trials vs R2 {predicted} ({:.1}% off; \
             exact finite-n excess ratio {exact:.4}); max |R1 - 1| at break-even {worst_break_even:.1e}; \
             heatmap cell (p=0.5, phi=0.5) {}",
            100.0 * rel,
            cell.map_or("missing".to_string(), |(r, pct)| format!("ratio {r}, {pct:.2}%"))
        ),
    )
}

fn ac11_viability() -> Verdict {
    let res = panel_e();
    let cfg = config("panel_e.toml", &[]);
    let mut problems = Vec::new();
    let mut first = BTreeMap::new();
    for m in &cfg.methods {
        let name = m.to_string();
        let cutoff = viability_cutoff(method_cost(&cfg, m), res.n_test, cfg.n_min, cfg.label_cost);
        for &b in &cfg.budgets {
            match (res.row(b, &name), b >= cutoff) {
                (Some(_), false) => problems.push(format!("{name} has a row at B={b} below cutoff {cutoff}")),
                (None, true) => problems.push(format!("{name} has no row at B={b} above cutoff {cutoff}")),
                _ => {}
            }
        }
        first.insert(name.clone(), res.rows_for(&name).map(|r| r.budget).fold(f64::INFINITY, f64::min));
    }
    let (cheap, expensive) = (first["asi:cheap"], first["asi:expensive"]);
    if !expensive.is_finite() || expensive <= cheap {
        problems.push(format!("asi:expensive starts at {expensive}, asi:cheap at {cheap}"));
    }
    let starts: Vec<String> = first.iter().map(|(m, b)| format!("{m}@{b}")).collect();
    verdict(
        problems.is_empty(),
        format!("first reported budgets {}{}", starts.join(" "), if problems.is_empty() {
            String::new()
        } else {
            format!("; {}", problems.join("; "))
        }),
    )
}

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("coverage of the 90% interval", ac1_coverage),
        ("AM-PPI width dominance", ac2_dominance),
        ("random routing matches the baseline mixture", ac3_random_routing),
        ("equal-cost specialized predictors", ac4_equal_cost),
        ("budget identity and closed-form multiplier", ac5_budget_identity),
        ("weighted least squares", ac6_wls),
        ("unbiasedness", ac7_unbiased),
        ("variance estimator calibration", ac8_variance),
        ("single-predictor reduction", ac9_reduces_to_asi),
        ("two-population variance ratio", ac10_two_population),
        ("viability cutoff", ac11_viability),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        failed += usize::from(!v.pass);
        println!(
            "{} AC{} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of 11 acceptance criteria passed", 11 - failed);
    let strict = std::env::var("AMPI_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
