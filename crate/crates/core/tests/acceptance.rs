//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Runtime bounds are stated for 8 workers and scaled by 8 / available
//! workers. Every stochastic check uses seed 7.

use std::time::{Duration, Instant};

use chaoslrd::levy::{discretize, pareto_tail_inverse, rademacher_measure, TailInverse};
use chaoslrd::limits::{self, FbmGenerator, HermiteSpec, MomentQuadrature, RosenblattGenerator};
use chaoslrd::renewal::{self, ReturnLaw};
use chaoslrd::sim::{x_sequence, FrameBuilder};
use chaoslrd::stats::{self, Stages};
use chaoslrd::{rng, ExperimentSpec, LevyModel, Regime, Representation, ResultTable, Verdict};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn workers() -> usize {
    rayon::current_num_threads()
}

/// A bound stated for 8 workers.
fn budget(secs_on_8: f64) -> Duration {
    Duration::from_secs_f64(secs_on_8 * (8.0 / workers() as f64).max(1.0))
}

fn row_ok(t: &ResultTable, id: &str) -> (bool, String) {
    match t.row(id) {
        Some(r) => (
            r.verdict == Verdict::Pass,
            format!("{id}={:.4} vs {:.4}±{:.4} {}", r.estimate, r.oracle, r.tolerance, r.verdict),
        ),
        None => (false, format!("{id} missing")),
    }
}

fn rows_ok(t: &ResultTable, ids: &[&str]) -> (bool, Vec<String>) {
    let mut all = true;
    let mut parts = Vec::new();
    for id in ids {
        let (ok, s) = row_ok(t, id);
        all &= ok;
        parts.push(s);
    }
    (all, parts)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn criterion_1() -> Outcome {
    let mut spec = ExperimentSpec::new(Regime::Clt, 2, 0.3);
    spec.ladder = vec![1 << 14];
    spec.reps = 10_000;
    spec.lags = vec![0, 1, 4, 16, 64];
    spec.seed = SEED;
    spec.stages = Stages::COVARIANCE;
    let (table, took) = timed(|| stats::run_experiment(&spec).expect("covariance run"));
    let ids: Vec<String> = spec.lags.iter().map(|l| format!("cov[lag={l}]")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let (ok, parts) = rows_ok(&table, &id_refs);
    let lag0_exact = table.row("cov[lag=0]").map(|r| r.oracle == 2.0).unwrap_or(false);
    let fast = took <= budget(180.0);
    Outcome {
        pass: ok && lag0_exact && fast,
        detail: format!("{}; lag-0 oracle exactly 2: {lag0_exact}; {:.1}s", parts.join("; "), took.as_secs_f64()),
    }
}

fn criteria_2() -> Outcome {
    let mut spec = ExperimentSpec::new(Regime::Clt, 2, 0.3);
    spec.reps = 2000;
    spec.seed = SEED;
    spec.lags = vec![];
    spec.stages = Stages { covariance: false, ..Stages::ALL };
    let (table, took) = timed(|| stats::run_experiment(&spec).expect("clt run"));
    let (ok, parts) = rows_ok(&table, &["ks[S(1)]", "var[S(1)]"]);
    let fast = took <= budget(600.0);
    Outcome { pass: ok && fast, detail: format!("{}; {:.1}s", parts.join("; "), took.as_secs_f64()) }
}

fn nclt_p1() -> ResultTable {
    let mut spec = ExperimentSpec::new(Regime::Nclt, 1, 0.6);
    spec.reps = 2000;
    spec.seed = SEED;
    spec.lags = vec![];
    spec.stages = Stages { covariance: false, ..Stages::ALL };
    stats::run_experiment(&spec).expect("nclt p=1 run")
}

fn nclt_p2() -> (ResultTable, Vec<f64>) {
    let mut spec = ExperimentSpec::new(Regime::Nclt, 2, 0.8);
    spec.reps = 10_000;
    spec.seed = SEED;
    spec.ladder = vec![1 << 14, 1 << 16];
    spec.lags = vec![];
    spec.moment_orders = vec![2, 3];
    spec.stages = Stages { covariance: false, marginal: true, moments: true, scaling: false };
    let table = stats::run_experiment(&spec).expect("nclt p=2 run");
    let formula_rel_se = [2usize, 3]
        .iter()
        .map(|&r| {
            let e = limits::hermite_joint_moment(2, 0.8, 1.0, &vec![1.0; r], MomentQuadrature::Auto).unwrap();
            e.stderr.unwrap_or(0.0) / e.value.abs()
        })
        .collect();
    (table, formula_rel_se)
}

fn criterion_3(t: &ResultTable) -> Outcome {
    let (ok, parts) = rows_ok(t, &["scaling_slope", "ks[S(1)]"]);
    Outcome { pass: ok, detail: parts.join("; ") }
}

fn criterion_4(t: &ResultTable, formula_rel_se: &[f64]) -> Outcome {
    let (ok, mut parts) = rows_ok(t, &["moment[2]", "moment[3]"]);
    let precise = formula_rel_se.iter().all(|&s| s < 0.01);
    parts.push(format!(
        "formula relative stderr {}",
        formula_rel_se.iter().map(|s| format!("{s:.1e}")).collect::<Vec<_>>().join(", ")
    ));
    for id in ["moment[2] exact finite-n", "moment[2] extrapolated", "moment[3] extrapolated"] {
        if let Some(r) = t.row(id) {
            parts.push(format!("{id}={:.4} (info)", r.estimate));
        }
    }
    Outcome { pass: ok && precise, detail: parts.join("; ") }
}

fn criterion_5(p1: &ResultTable, p2: &ResultTable) -> Outcome {
    let (ok1, s1) = row_ok(p1, "var[S(1)]");
    let (ok2, s2) = row_ok(p2, "var[S(1)]");
    let inner = p2.row("var[S(1)] an-inner").map(|r| r.estimate).unwrap_or(f64::NAN);
    let vm = p2.row("var[S(1)]").map(|r| r.estimate).unwrap_or(f64::NAN);
    let exact = p2.row("var[S(1)] exact finite-n").map(|r| r.estimate).unwrap_or(f64::NAN);
    Outcome {
        pass: ok1 && ok2,
        detail: format!(
            "p=1: {s1}; p=2: {s2}; p=2 exact finite-n {exact:.4} (info); p=2 an-inner {inner:.4}, ratio {:.3} vs (p!)² = 4 (info)",
            inner / vm
        ),
    }
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let rad = rademacher_measure();
    for r in [2.0, 4.0] {
        let d = (rad.moment(r) - rad.tail_inverse().moment(r).unwrap()).abs();
        ok &= d <= 1e-8;
        parts.push(format!("rademacher r={r} |diff|={d:.1e}"));
    }
    let pareto = pareto_tail_inverse(5.0).unwrap();
    for r in [2.0, 3.0, 4.0] {
        let closed = TailInverse::pareto_moment_closed(5.0, r).unwrap();
        let d = (closed - pareto.moment(r).unwrap()).abs();
        ok &= d <= 1e-8;
        parts.push(format!("pareto5 r={r} |diff|={d:.1e}"));
    }
    for eps in [0.1, 0.05, 0.02] {
        let (m, err) = discretize(&pareto, eps).unwrap();
        let direct = l2_distance(&m.tail_inverse(), &pareto);
        ok &= err <= eps && direct <= eps;
        parts.push(format!("eps={eps} achieved={err:.4} direct={direct:.4}"));
    }
    let took = t0.elapsed();
    ok &= took <= Duration::from_secs(60);
    Outcome { pass: ok, detail: format!("{}; {:.2}s", parts.join("; "), took.as_secs_f64()) }
}

/// `‖a − b‖₂` for a step tail inverse `a`, by closed-form power integrals of `b`.
fn l2_distance(step: &TailInverse, b: &TailInverse) -> f64 {
    let TailInverse::Step { breaks, values } = step else { panic!("expected a step function") };
    let mut sq = 0.0;
    for (w, &v) in breaks.windows(2).zip(values) {
        let (lo, hi) = (w[0], w[1]);
        let i1 = b.power_integral(lo, hi, 1.0).unwrap();
        let i2 = b.power_integral(lo, hi, 2.0).unwrap();
        sq += v * v * (hi - lo) - 2.0 * v * i1 + i2;
    }
    sq += b.tail_l2_sq(*breaks.last().unwrap());
    sq.max(0.0).sqrt()
}

fn criterion_7() -> Outcome {
    let law = ReturnLaw::new(0.8).unwrap();
    let n = 1 << 12;
    let levy = LevyModel::Finite(rademacher_measure());
    let lags = [0usize, 1, 4, 16];
    let run = |repr: Representation, seed: u64| -> Vec<Vec<f64>> {
        let b = FrameBuilder::new(law.window(n).unwrap(), &levy, repr).unwrap();
        rng::replicate(seed, 10_000, |_, rng| {
            let x = x_sequence(&b.build(rng).unwrap(), 2, 1.0);
            let mut stats = vec![x.iter().sum::<f64>() / n as f64];
            stats.extend(lags.iter().map(|&l| stats::lag_product_mean(&x, l)));
            stats
        })
    };
    let cp = run(Representation::CompoundPoisson, SEED);
    let series = run(Representation::Series, SEED ^ 0x5151);
    let names = ["mean", "variance", "cov[1]", "cov[4]", "cov[16]"];
    let mut ok = true;
    let mut parts = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let a = stats::mean_estimate(&cp.iter().map(|s| s[j]).collect::<Vec<_>>());
        let b = stats::mean_estimate(&series.iter().map(|s| s[j]).collect::<Vec<_>>());
        let se = (a.stderr.unwrap().powi(2) + b.stderr.unwrap().powi(2)).sqrt();
        let z = (a.value - b.value).abs() / se;
        ok &= z <= 5.0;
        parts.push(format!("{name} cp={:.4} series={:.4} z={z:.2}", a.value, b.value));
    }
    Outcome { pass: ok, detail: parts.join("; ") }
}

/// Aitken Δ² limit of three equally spaced rungs; falls back to the last
/// rung when the differences do not contract.
fn aitken(x: [f64; 3]) -> f64 {
    let d1 = x[1] - x[0];
    let d2 = x[2] - x[1];
    let rate = d2 / d1;
    if rate > 0.0 && rate < 0.9 {
        x[2] - d2 * d2 / (d2 - d1)
    } else {
        x[2]
    }
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();

    // fBm covariances.
    let h = limits::hurst(1, 0.6).unwrap();
    let n = 640;
    let gen = FbmGenerator::new(h, n).unwrap();
    let pairs = [(0.2, 0.2), (0.2, 0.6), (0.5, 1.0), (0.6, 0.8), (1.0, 1.0)];
    let paths: Vec<Vec<f64>> = rng::replicate(SEED, 10_000, |_, rng| gen.path(rng));
    for &(s, t) in &pairs {
        let (i, j) = ((s * n as f64).round() as usize, (t * n as f64).round() as usize);
        let prods: Vec<f64> = paths.iter().map(|p| p[i] * p[j]).collect();
        let e = stats::mean_estimate(&prods);
        let oracle = 0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h));
        let z = (e.value - oracle).abs() / e.stderr.unwrap();
        ok &= z <= 5.0;
        parts.push(format!("fbm({s},{t}) z={z:.2}"));
    }

    // Rosenblatt discrete variance and self-similarity.
    let spec = HermiteSpec::new(2, 0.8).unwrap().with_tolerance(f64::INFINITY);
    let g1 = RosenblattGenerator::new(&spec, 1.0).unwrap();
    let g5 = RosenblattGenerator::new(&spec, 0.5).unwrap();
    let v1 = g1.discrete_variance();
    let ratio = g5.discrete_variance() / v1 / 0.5f64.powf(2.0 * spec.hurst);
    ok &= (v1 - 1.0).abs() <= 0.05 && (ratio - 1.0).abs() <= 0.02;
    parts.push(format!("rosenblatt var(1)={v1:.4}, ratio/0.5^2H={ratio:.6}"));

    // LRD moment evaluator against the limit of the exact double sum.
    for &(p, beta) in &[(1usize, 0.6f64), (1, 0.8), (2, 0.8)] {
        let law = ReturnLaw::new(beta).unwrap();
        let ladder = [12, 14, 16, 18];
        let u = renewal::return_mass_sequence(&law, 1 << 18);
        let vals: Vec<f64> = ladder
            .iter()
            .map(|&k| {
                let n = 1usize << k;
                let w = renewal::wandering(&law, n);
                let b = renewal::rate_b(&law, n);
                (b.powi(p as i32) / n as f64).powi(2) * stats::exact_l_product(&u, w, p, 1.0, n, 1.0, 1.0)
            })
            .collect();
        let set: Vec<usize> = (1..=p).collect();
        let formula =
            limits::lrd_limit_moment(beta, 1.0, &[set.clone(), set], &[1.0, 1.0], MomentQuadrature::Auto).unwrap().value;
        let limit = aitken([vals[1], vals[2], vals[3]]);
        let rel = (limit / formula - 1.0).abs();
        ok &= rel <= 0.02;
        parts.push(format!(
            "lrd(p={p},beta={beta}) formula={formula:.4} raw@2^18={:.4} extrapolated={limit:.4} rel={rel:.4}",
            vals[3]
        ));
    }
    Outcome { pass: ok, detail: parts.join("; ") }
}

fn log_slope(xs: &[(f64, f64)]) -> f64 {
    stats::scaling_slope(xs).unwrap().0
}

fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let grid: Vec<usize> = (0..=10).map(|i| (1e5 * 10f64.powf(i as f64 / 10.0)).round() as usize).collect();
    for &beta in &[0.3, 0.6, 0.8] {
        let law = ReturnLaw::new(beta).unwrap();
        let u = renewal::return_mass_sequence(&law, 1_000_000);
        let w = renewal::wandering_sequence(&law, 1_000_000);
        let su = log_slope(&grid.iter().map(|&n| (n as f64, u[n])).collect::<Vec<_>>());
        let sw = log_slope(&grid.iter().map(|&n| (n as f64, w[n - 1])).collect::<Vec<_>>());
        ok &= (su - (beta - 1.0)).abs() <= 0.05 && (sw - (1.0 - beta)).abs() <= 0.03;
        parts.push(format!("beta={beta} u-slope={su:.4} w-slope={sw:.4}"));
        let fast = renewal::return_mass_sequence(&law, 10_000);
        let naive = renewal::return_mass_sequence_naive(&law, 10_000);
        let d = fast.iter().zip(&naive).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ok &= d <= 1e-12;
        parts.push(format!("max|fast-naive|={d:.1e}"));
    }
    let took = t0.elapsed();
    ok &= took <= budget(60.0);
    Outcome { pass: ok, detail: format!("{}; {:.1}s", parts.join("; "), took.as_secs_f64()) }
}

fn report(n: u32, name: &str, o: &Outcome, took: Duration) {
    println!(
        "criterion {n} {} {name} ({:.1}s): {}",
        if o.pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        o.detail
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    println!("acceptance: {} workers, seed {SEED}", workers());
    let mut summary = Vec::new();
    let mut run = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let (o, took) = timed(f);
        report(n, name, &o, took);
        summary.push((n, o.pass));
    };
    run(1, "exact covariance oracle", &mut criterion_1);
    run(2, "CLT marginal", &mut criteria_2);
    let (p1, t_p1) = timed(nclt_p1);
    run(3, "nCLT p=1", &mut || {
        let mut o = criterion_3(&p1);
        o.detail.push_str(&format!("; run {:.1}s", t_p1.as_secs_f64()));
        o
    });
    let ((p2, rel_se), t_p2) = timed(nclt_p2);
    run(4, "nCLT p=2 moment chain", &mut || {
        let mut o = criterion_4(&p2, &rel_se);
        o.detail.push_str(&format!("; run {:.1}s", t_p2.as_secs_f64()));
        o
    });
    run(5, "a_n convention audit", &mut || criterion_5(&p1, &p2));
    run(6, "Levy identities", &mut criterion_6);
    run(7, "representation equivalence", &mut criterion_7);
    run(8, "limit-process self-checks", &mut criterion_8);
    run(9, "renewal asymptotics", &mut criterion_9);
    let passed = summary.iter().filter(|s| s.1).count();
    println!("acceptance: {passed}/{} criteria pass", summary.len());
}
