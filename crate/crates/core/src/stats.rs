//! Exact oracles, estimators and the experiment driver.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{domain, Error, Result};
use crate::levy::LevySpec;
use crate::limits::{self, MomentQuadrature};
use crate::renewal::{self, Neumaier, ReturnLaw};
use crate::rng;
use crate::sim::{
    check_long_memory, check_short_memory, check_tgrid, raw_partial_sums, x_sequence, AnConvention, FrameBuilder,
    Normalization, Representation,
};
use crate::factorial;

/// A number with an optional standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: Some(0.0) }
    }
}

/// Fewest replications for which a standard error is reported.
pub const MIN_REPS_FOR_STDERR: usize = 30;

// ---------------------------------------------------------------------------
// Oracles

/// `Cov(X_j, X_{j+k}) = p!·θ²·u_k^p`.
pub fn exact_cov(u: &[f64], p: usize, theta: f64, k: usize) -> f64 {
    factorial(p) * theta * theta * u[k].powi(p as i32)
}

/// `Var(Σ_{k≤m} X_k) = p!θ² Σ_{|d|<m} (m − |d|) u_d^p`.
pub fn exact_sum_variance(u: &[f64], p: usize, theta: f64, m: usize) -> f64 {
    let mut acc = Neumaier::default();
    if m > 0 {
        acc.add(m as f64);
    }
    for d in 1..m {
        acc.add(2.0 * (m - d) as f64 * u[d].powi(p as i32));
    }
    factorial(p) * theta * theta * acc.sum()
}

/// `θ² w_n^{-p} Σ_{k₁≤⌊nt₁⌋} Σ_{k₂≤⌊nt₂⌋} u_{|k₁−k₂|}^p`, by lag counts.
pub fn exact_l_product(u: &[f64], wandering: f64, p: usize, theta: f64, n: usize, t1: f64, t2: f64) -> f64 {
    let m1 = ((n as f64 * t1).floor() as usize).min(n);
    let m2 = ((n as f64 * t2).floor() as usize).min(n);
    let g = |d: usize| u[d].powi(p as i32);
    let mut acc = Neumaier::default();
    // k₁ − k₂ = d ≥ 0
    for d in 0..m1 {
        let c = m2.min(m1 - d);
        if c > 0 {
            acc.add(c as f64 * g(d));
        }
    }
    // k₂ − k₁ = d > 0
    for d in 1..m2 {
        let c = m1.min(m2 - d);
        if c > 0 {
            acc.add(c as f64 * g(d));
        }
    }
    theta * theta * wandering.powi(-(p as i32)) * acc.sum()
}

/// Result of [`sigma2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sigma2 {
    pub value: f64,
    /// `|S(K) − S(K/2)|` at the accepted truncation `K`.
    pub tail_bound: f64,
    pub truncation: usize,
}

/// `p!θ²(1 + 2Σ_{k=1}^K u_k^p + tail)` where the tail beyond `K` is
/// extrapolated from the local power-law decay of `u_k^p`
/// (`Σ_{k>K} g_k ≈ K g_K/(γ−1) − g_K/2`).
pub fn sigma2_truncated(u: &[f64], p: usize, theta: f64, k: usize) -> f64 {
    assert!(k >= 2 && k < u.len());
    let g = |j: usize| u[j].powi(p as i32);
    let mut acc = Neumaier::default();
    acc.add(1.0);
    for j in 1..=k {
        acc.add(2.0 * g(j));
    }
    let gk = g(k);
    let gamma = -(gk / g(k / 2)).ln() / ((k as f64) / ((k / 2) as f64)).ln();
    if gamma > 1.0 {
        acc.add(2.0 * (k as f64 * gk / (gamma - 1.0) - 0.5 * gk));
    }
    factorial(p) * theta * theta * acc.sum()
}

/// Long-run variance `σ² = Σ_k Cov(X_0, X_k)` in the short-memory regime.
/// Doubles the truncation point until two successive extrapolated values
/// agree to `tol`.
pub fn sigma2(law: &ReturnLaw, p: usize, theta: f64, tol: f64) -> Result<Sigma2> {
    check_short_memory(p, law.beta())?;
    if !(tol > 0.0) {
        return Err(domain("sigma2 tolerance must be positive"));
    }
    let mut k_max = 1usize << 12;
    loop {
        let u = renewal::return_mass_sequence(law, k_max);
        let mut k = 1024;
        let mut prev = sigma2_truncated(&u, p, theta, k / 2);
        while k <= k_max {
            let cur = sigma2_truncated(&u, p, theta, k);
            let diff = (cur - prev).abs();
            if diff < tol {
                return Ok(Sigma2 { value: cur, tail_bound: diff, truncation: k });
            }
            prev = cur;
            k *= 2;
        }
        if k_max >= 1 << 24 {
            return Err(Error::Resolution(format!("sigma2 did not settle to {tol} by K = {k_max}")));
        }
        k_max *= 4;
    }
}

// ---------------------------------------------------------------------------
// Estimators

/// Sample mean with its standard error.
pub fn mean_estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { value: f64::NAN, stderr: None };
    }
    let mean = values.iter().copied().collect::<Neumaier>().sum() / n as f64;
    if n < MIN_REPS_FOR_STDERR {
        return Estimate { value: mean, stderr: None };
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).collect::<Neumaier>().sum();
    Estimate { value: mean, stderr: Some((ss / ((n - 1) * n) as f64).sqrt()) }
}

/// Delete-a-group jackknife for a statistic of i.i.d. replications.
pub fn jackknife<F: Fn(&[f64]) -> f64>(values: &[f64], groups: usize, stat: F) -> Estimate {
    let n = values.len();
    let full = stat(values);
    if n < MIN_REPS_FOR_STDERR {
        return Estimate { value: full, stderr: None };
    }
    let g = groups.clamp(2, n);
    let mut leave = Vec::with_capacity(g);
    let mut rest = Vec::with_capacity(n);
    for j in 0..g {
        let (lo, hi) = (j * n / g, (j + 1) * n / g);
        rest.clear();
        rest.extend_from_slice(&values[..lo]);
        rest.extend_from_slice(&values[hi..]);
        leave.push(stat(&rest));
    }
    let m = leave.iter().sum::<f64>() / g as f64;
    let var = (g as f64 - 1.0) / g as f64 * leave.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    Estimate { value: full, stderr: Some(var.sqrt()) }
}

/// Average of `X_k X_{k+lag}` over `k`, one value per replication.
pub fn lag_product_mean(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return f64::NAN;
    }
    let acc: Neumaier = (0..n - lag).map(|k| x[k] * x[k + lag]).collect();
    acc.sum() / (n - lag) as f64
}

/// `E[X_k X_{k+lag}]` from replicated sequences (mean-zero model).
pub fn empirical_cov(samples: &[Vec<f64>], lag: usize) -> Estimate {
    let per_rep: Vec<f64> = samples.iter().map(|x| lag_product_mean(x, lag)).collect();
    mean_estimate(&per_rep)
}

/// Raw moments `E[V^r]` for each order.
pub fn empirical_moments(values: &[f64], orders: &[u32]) -> Vec<(u32, Estimate)> {
    orders
        .iter()
        .map(|&r| {
            let powers: Vec<f64> = values.iter().map(|v| v.powi(r as i32)).collect();
            (r, mean_estimate(&powers))
        })
        .collect()
}

/// Sample variance about the sample mean, with a jackknife stderr.
pub fn variance_estimate(values: &[f64]) -> Estimate {
    jackknife(values, 50, |v| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    })
}

/// `sup_x |F_n(x) − F(x)|`.
pub fn ks_distance<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Least-squares slope of `log y` on `log x` with its residual stderr.
pub fn scaling_slope(pairs: &[(f64, f64)]) -> Result<(f64, Option<f64>)> {
    if pairs.len() < 2 || pairs.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(domain("scaling slope needs at least two positive pairs"));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let se = if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        Some((rss / (k - 2.0) / sxx).sqrt())
    } else {
        None
    };
    Ok((slope, se))
}

/// Two-point fit of `m(n) = L + c·n^{−γ}` through the top two rungs.
pub fn extrapolate_limit(n_lo: f64, m_lo: Estimate, n_hi: f64, m_hi: Estimate, gamma: f64) -> Estimate {
    let a = n_hi.powf(gamma);
    let b = n_lo.powf(gamma);
    let value = (m_hi.value * a - m_lo.value * b) / (a - b);
    let stderr = match (m_lo.stderr, m_hi.stderr) {
        (Some(s_lo), Some(s_hi)) => Some(((s_hi * a).powi(2) + (s_lo * b).powi(2)).sqrt() / (a - b)),
        _ => None,
    };
    Estimate { value, stderr }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

// ---------------------------------------------------------------------------
// Result tables

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported for context only.
    Info,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    #[serde(with = "nan_as_null")]
    pub estimate: f64,
    pub stderr: Option<f64>,
    #[serde(with = "nan_as_null")]
    pub oracle: f64,
    #[serde(with = "nan_as_null")]
    pub tolerance: f64,
    pub verdict: Verdict,
    pub provenance: String,
}

impl Row {
    /// Pass iff `|estimate − oracle| ≤ tolerance`.
    pub fn scored(
        id: impl Into<String>,
        estimate: Estimate,
        oracle: f64,
        tolerance: f64,
        provenance: impl Into<String>,
    ) -> Self {
        let ok = (estimate.value - oracle).abs() <= tolerance;
        Self {
            id: id.into(),
            estimate: estimate.value,
            stderr: estimate.stderr,
            oracle,
            tolerance,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            provenance: provenance.into(),
        }
    }

    pub fn info(id: impl Into<String>, estimate: Estimate, oracle: f64, provenance: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            estimate: estimate.value,
            stderr: estimate.stderr,
            oracle,
            tolerance: f64::NAN,
            verdict: Verdict::Info,
            provenance: provenance.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub build: String,
    pub wall_time_s: f64,
    pub config: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<Row>,
    pub metadata: Metadata,
}

impl ResultTable {
    pub fn first_failure(&self) -> Option<&Row> {
        self.rows.iter().find(|r| r.verdict == Verdict::Fail)
    }

    pub fn all_pass(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn row(&self, id: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// JSON has no NaN; non-finite values travel as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Build identifier recorded in every output.
pub fn build_id() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), option_env!("CHAOSLRD_GIT_DESCRIBE").unwrap_or("unknown"))
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Clt,
    Nclt,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clt" => Ok(Regime::Clt),
            "nclt" => Ok(Regime::Nclt),
            other => Err(Error::Parse(format!("unknown regime '{other}' (expected clt or nclt)"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Clt => "clt",
            Regime::Nclt => "nclt",
        })
    }
}

/// Which groups of rows an experiment produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub covariance: bool,
    pub marginal: bool,
    pub moments: bool,
    pub scaling: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { covariance: true, marginal: true, moments: true, scaling: true };
    pub const COVARIANCE: Stages = Stages { covariance: true, marginal: false, moments: false, scaling: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub regime: Regime,
    pub p: usize,
    pub beta: f64,
    pub theta: f64,
    pub levy: LevySpec,
    pub representation: Representation,
    /// Window lengths, ascending; the last one is the main run.
    pub ladder: Vec<usize>,
    pub reps: usize,
    pub tgrid: Vec<f64>,
    pub lags: Vec<usize>,
    pub seed: u64,
    /// Normalization used by the variance rows of the long-memory regime.
    pub normalization: Normalization,
    pub moment_orders: Vec<u32>,
    pub sigma2_tol: f64,
    pub exploratory: bool,
    pub stages: Stages,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Defaults for the given regime: ladder `2^10..2^16`, 2000 replications.
    pub fn new(regime: Regime, p: usize, beta: f64) -> Self {
        Self {
            regime,
            p,
            beta,
            theta: 1.0,
            levy: "rademacher".parse().expect("built-in model"),
            representation: Representation::CompoundPoisson,
            ladder: vec![1 << 10, 1 << 12, 1 << 14, 1 << 16],
            reps: 2000,
            tgrid: vec![0.25, 0.5, 0.75, 1.0],
            lags: vec![0, 1, 4, 16, 64],
            seed: 1,
            normalization: match regime {
                Regime::Clt => Normalization::SqrtN,
                Regime::Nclt => Normalization::An(AnConvention::VarianceMatched),
            },
            moment_orders: vec![2, 3, 4],
            sigma2_tol: 1e-4,
            exploratory: false,
            stages: Stages::ALL,
            out_dir: None,
        }
    }

    pub fn top(&self) -> usize {
        *self.ladder.last().expect("validated ladder")
    }

    pub fn validate(&self) -> Result<()> {
        match self.regime {
            Regime::Clt => check_short_memory(self.p, self.beta)?,
            Regime::Nclt => {
                check_long_memory(self.p, self.beta)?;
                if self.p > 2 && !self.exploratory {
                    return Err(domain("non-central runs with p >= 3 need the exploratory flag"));
                }
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(domain(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) || self.ladder[0] == 0 {
            return Err(domain("the n-ladder must be a nonempty increasing list of positive lengths"));
        }
        if self.reps < 2 {
            return Err(domain("need at least two replications"));
        }
        check_tgrid(&self.tgrid)?;
        if self.tgrid.last() != Some(&1.0) {
            return Err(domain("the time grid must end at t = 1"));
        }
        if self.tgrid.first() == Some(&0.0) {
            return Err(domain("the time grid must not contain t = 0"));
        }
        if let Some(&lag) = self.lags.iter().find(|&&l| l >= self.top()) {
            return Err(domain(format!("lag {lag} is not below n = {}", self.top())));
        }
        if self.regime == Regime::Clt && self.normalization != Normalization::SqrtN {
            return Err(domain("CLT runs use the sqrtn normalization"));
        }
        if self.regime == Regime::Nclt && self.normalization == Normalization::SqrtN {
            return Err(domain("non-central runs cannot use the sqrtn normalization"));
        }
        if self.representation == Representation::CompoundPoisson && self.levy.model.as_finite().is_none() {
            return Err(domain(format!(
                "the compound-Poisson representation needs a finite atomic Lévy measure, not {}",
                self.levy
            )));
        }
        Ok(())
    }

    /// Every setting as `key=value` pairs, in a fixed order.
    pub fn config_lines(&self) -> Vec<(String, String)> {
        let join = |v: &[String]| v.join(",");
        vec![
            ("regime".into(), self.regime.to_string()),
            ("p".into(), self.p.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("theta".into(), self.theta.to_string()),
            ("levy".into(), self.levy.to_string()),
            ("repr".into(), self.representation.to_string()),
            ("ladder".into(), join(&self.ladder.iter().map(|n| n.to_string()).collect::<Vec<_>>())),
            ("reps".into(), self.reps.to_string()),
            ("t".into(), join(&self.tgrid.iter().map(|t| t.to_string()).collect::<Vec<_>>())),
            ("lags".into(), join(&self.lags.iter().map(|l| l.to_string()).collect::<Vec<_>>())),
            ("seed".into(), self.seed.to_string()),
            ("norm".into(), self.normalization.to_string()),
            ("orders".into(), join(&self.moment_orders.iter().map(|r| r.to_string()).collect::<Vec<_>>())),
            ("sigma2_tol".into(), self.sigma2_tol.to_string()),
            ("exploratory".into(), self.exploratory.to_string()),
        ]
    }
}

/// Per-replication outputs.
#[derive(Debug, Clone)]
struct RepOut {
    /// Raw `S_n(1)` for each rung.
    rung_sums: Vec<f64>,
    /// Raw `S_n(t)` on the time grid at the top rung.
    grid_sums: Vec<f64>,
    /// Lag-product averages at the top rung.
    lag_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub lag: usize,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub oracle: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub variance: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub order_tuple: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub formula: f64,
    pub verdict: Verdict,
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub covariance: Vec<CovarianceRow>,
    pub scaling: Vec<ScalingRow>,
    /// Normalized `S_n(1)` per replication at the top rung.
    pub marginal: Vec<f64>,
    pub marginal_label: String,
    pub moments: Vec<MomentRow>,
}

/// Mixes a rung length into the master seed so each rung has its own
/// streams regardless of which other rungs are run.
fn rung_seed(seed: u64, n: usize) -> u64 {
    let mut z = seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs the simulation and scores it against the oracles. Output files are
/// written when `spec.out_dir` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    let out = simulate_experiment(spec)?;
    if let Some(dir) = &spec.out_dir {
        crate::report::write_outputs(dir, spec, &out)?;
    }
    Ok(out.table)
}

/// As [`run_experiment`] but returns the full output and writes nothing.
pub fn simulate_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    if let Some(dir) = &spec.out_dir {
        crate::report::ensure_writable(dir)?;
    }
    let started = Instant::now();
    let law = ReturnLaw::new(spec.beta)?;
    let p = spec.p;
    let theta = spec.theta;
    let top = spec.top();
    let rungs = spec.ladder.len();

    let builders: Vec<FrameBuilder<'_>> = spec
        .ladder
        .iter()
        .map(|&n| FrameBuilder::new(law.window(n)?, &spec.levy.model, spec.representation))
        .collect::<Result<_>>()?;
    let wanderings: Vec<f64> = builders.iter().map(|b| b.window().wandering()).collect();

    let lags = if spec.stages.covariance { spec.lags.clone() } else { Vec::new() };
    let rep_outs: Vec<Result<RepOut>> = rng::replicate(0, spec.reps, |rep, _| {
        let mut rung_sums = Vec::with_capacity(rungs);
        let mut grid_sums = Vec::new();
        let mut lag_means = Vec::new();
        for (r, builder) in builders.iter().enumerate() {
            let mut rng = rng::stream(rung_seed(spec.seed, spec.ladder[r]), rep);
            let frame = builder.build(&mut rng)?;
            let x = x_sequence(&frame, p, theta);
            if r + 1 == rungs {
                grid_sums = raw_partial_sums(&x, &spec.tgrid);
                rung_sums.push(*grid_sums.last().unwrap());
                lag_means = lags.iter().map(|&l| lag_product_mean(&x, l)).collect();
            } else {
                rung_sums.push(x.iter().sum());
            }
        }
        Ok(RepOut { rung_sums, grid_sums, lag_means })
    });
    let reps: Vec<RepOut> = rep_outs.into_iter().collect::<Result<_>>()?;

    let u = renewal::return_mass_sequence(&law, top);
    let mut rows = Vec::new();
    let mut covariance = Vec::new();
    let mut scaling = Vec::new();
    let mut moments = Vec::new();

    // Covariances.
    for (i, &lag) in lags.iter().enumerate() {
        let vals: Vec<f64> = reps.iter().map(|r| r.lag_means[i]).collect();
        let est = mean_estimate(&vals);
        let oracle = exact_cov(&u, p, theta, lag);
        let tol = 5.0 * est.stderr.unwrap_or(f64::NAN);
        let row = Row::scored(format!("cov[lag={lag}]"), est, oracle, tol, "exact_cov: p!·theta²·u_k^p");
        covariance.push(CovarianceRow { lag, estimate: est.value, stderr: est.stderr, oracle, verdict: row.verdict });
        rows.push(row);
    }

    // Scaling across the ladder.
    let rung_var: Vec<Estimate> = (0..rungs)
        .map(|r| {
            let sq: Vec<f64> = reps.iter().map(|o| o.rung_sums[r].powi(2)).collect();
            mean_estimate(&sq)
        })
        .collect();
    if spec.stages.scaling {
        for (r, &n) in spec.ladder.iter().enumerate() {
            scaling.push(ScalingRow { n, variance: rung_var[r].value, stderr: rung_var[r].stderr });
        }
        if rungs >= 2 {
            let pairs: Vec<(f64, f64)> = spec.ladder.iter().zip(&rung_var).map(|(&n, v)| (n as f64, v.value)).collect();
            let (slope, _) = scaling_slope(&pairs)?;
            let se = slope_stderr(&spec.ladder, &rung_var);
            let (target, prov) = match spec.regime {
                Regime::Clt => (1.0, "short memory: Var S_n grows like n"),
                Regime::Nclt => (
                    2.0 * limits::hurst(p, spec.beta)?,
                    "long memory: Var S_n grows like n^{2H}, H = 1 - p(1-beta)/2",
                ),
            };
            rows.push(Row::scored("scaling_slope", Estimate { value: slope, stderr: se }, target, 0.1, prov));
            let exact_pairs: Vec<(f64, f64)> =
                spec.ladder.iter().map(|&m| (m as f64, exact_sum_variance(&u, p, theta, m))).collect();
            let (exact_slope, _) = scaling_slope(&exact_pairs)?;
            rows.push(Row::info(
                "scaling_slope exact finite-n",
                Estimate::exact(exact_slope),
                target,
                "slope of the exact Var S_n over the same ladder",
            ));
        }
    }

    let n = top as f64;
    let w_top = *wanderings.last().unwrap();
    let mut marginal = Vec::new();
    let mut marginal_label = String::new();
    match spec.regime {
        Regime::Clt => {
            let s2 = sigma2(&law, p, theta, spec.sigma2_tol)?;
            let sqrt_n = n.sqrt();
            if spec.stages.marginal {
                for (j, &t) in spec.tgrid.iter().enumerate() {
                    let sq: Vec<f64> = reps.iter().map(|o| (o.grid_sums[j] / sqrt_n).powi(2)).collect();
                    let est = mean_estimate(&sq);
                    rows.push(Row::scored(
                        format!("var[S({t})]"),
                        est,
                        s2.value * t,
                        0.1 * s2.value * t,
                        format!("sigma2 * t; sigma2 = {} ± {:.1e}", s2.value, s2.tail_bound),
                    ));
                }
                for &t in &spec.tgrid {
                    let m = (n * t).floor() as usize;
                    rows.push(Row::info(
                        format!("var[S({t})] exact finite-n"),
                        Estimate::exact(exact_sum_variance(&u, p, theta, m) / n),
                        s2.value * t,
                        "exact Var S_n(t)/n from the u-sequence",
                    ));
                }
                let sd = s2.value.sqrt();
                marginal = reps.iter().map(|o| o.rung_sums[rungs - 1] / (sqrt_n * sd)).collect();
                marginal_label = "S_n(1)/(sigma*sqrt(n))".into();
                let ks = ks_distance(&marginal, standard_normal_cdf);
                rows.push(Row::scored(
                    "ks[S(1)]",
                    Estimate { value: ks, stderr: None },
                    0.0,
                    0.08,
                    "KS distance to N(0,1)",
                ));
            }
            if spec.stages.moments {
                for &r in &spec.moment_orders {
                    let ts = vec![1.0; r as usize];
                    let oracle = limits::gaussian_joint_moment(s2.value, &ts);
                    let top_est = raw_moment(&reps, rungs - 1, r, sqrt_n);
                    let band = if rungs >= 2 {
                        let prev = spec.ladder[rungs - 2] as f64;
                        (top_est.value - raw_moment(&reps, rungs - 2, r, prev.sqrt()).value).abs()
                    } else {
                        0.0
                    };
                    let tol = 5.0 * top_est.stderr.unwrap_or(f64::NAN) + band;
                    let row = Row::scored(
                        format!("moment[{r}]"),
                        top_est,
                        oracle,
                        tol,
                        "Gaussian pairing moment sigma^r·Σ Π min(t_u,t_v); tolerance 5 SE + ladder band",
                    );
                    moments.push(MomentRow {
                        order_tuple: tuple_label(&ts),
                        estimate: top_est.value,
                        stderr: top_est.stderr,
                        formula: oracle,
                        verdict: row.verdict,
                    });
                    rows.push(row);
                }
            }
        }
        Regime::Nclt => {
            let h = limits::hurst(p, spec.beta)?;
            let div = spec.normalization.divisor(spec.beta, p, top, w_top)?;
            let conv_const = match spec.normalization {
                Normalization::An(_) => theta * theta,
                Normalization::PropNorm => f64::NAN,
                Normalization::SqrtN => unreachable!("validated"),
            };
            if spec.stages.marginal {
                for (j, &t) in spec.tgrid.iter().enumerate() {
                    let sq: Vec<f64> = reps.iter().map(|o| (o.grid_sums[j] / div).powi(2)).collect();
                    let est = mean_estimate(&sq);
                    let (oracle, prov) = match spec.normalization {
                        Normalization::PropNorm => (
                            limits::hermite_joint_moment(p, spec.beta, theta, &[t, t], MomentQuadrature::Auto)?
                                .value,
                            "hermite_joint_moment at (t,t)".to_string(),
                        ),
                        _ => {
                            let k = match spec.normalization {
                                Normalization::An(AnConvention::FactorialInside) => factorial(p).powi(-2),
                                _ => 1.0,
                            };
                            (conv_const * k * t.powf(2.0 * h), format!("(convention constant)²·t^(2H), norm {}", spec.normalization))
                        }
                    };
                    rows.push(Row::scored(format!("var[S({t})]"), est, oracle, 0.1 * oracle, prov));
                    let m = (n * t).floor() as usize;
                    rows.push(Row::info(
                        format!("var[S({t})] exact finite-n"),
                        Estimate::exact(exact_sum_variance(&u, p, theta, m) / (div * div)),
                        oracle,
                        "exact Var S_n(t) from the u-sequence, same divisor",
                    ));
                }
                // The other placement of p! is reported alongside.
                let other = match spec.normalization {
                    Normalization::An(AnConvention::VarianceMatched) => Some(AnConvention::FactorialInside),
                    Normalization::An(AnConvention::FactorialInside) => Some(AnConvention::VarianceMatched),
                    _ => None,
                };
                if let Some(conv) = other {
                    let d = Normalization::An(conv).divisor(spec.beta, p, top, w_top)?;
                    let sq: Vec<f64> = reps.iter().map(|o| (o.rung_sums[rungs - 1] / d).powi(2)).collect();
                    rows.push(Row::info(
                        format!("var[S(1)] {}", Normalization::An(conv)),
                        mean_estimate(&sq),
                        theta * theta,
                        "alternative a_n convention; the two differ by (p!)² in variance",
                    ));
                }
                marginal = reps.iter().map(|o| o.rung_sums[rungs - 1] / div).collect();
                marginal_label = format!("S_n(1)/divisor ({})", spec.normalization);
                if p == 1 {
                    let fitted = variance_estimate(&marginal).value.sqrt();
                    let ks = ks_distance(&marginal, |x| standard_normal_cdf(x / fitted));
                    rows.push(Row::scored(
                        "ks[S(1)]",
                        Estimate { value: ks, stderr: None },
                        0.0,
                        0.08,
                        format!("KS distance to N(0, fitted variance {:.4})", fitted * fitted),
                    ));
                }
            }
            if spec.stages.moments {
                let prop: Vec<f64> = spec
                    .ladder
                    .iter()
                    .zip(&wanderings)
                    .map(|(&m, &w)| Normalization::PropNorm.divisor(spec.beta, p, m, w))
                    .collect::<Result<_>>()?;
                for &r in &spec.moment_orders {
                    let ts = vec![1.0; r as usize];
                    let formula = limits::hermite_joint_moment(p, spec.beta, theta, &ts, MomentQuadrature::Auto)?;
                    let est = raw_moment(&reps, rungs - 1, r, prop[rungs - 1]);
                    let prov = format!(
                        "hermite_joint_moment (formula stderr {:.2e}); PropNorm divisor",
                        formula.stderr.unwrap_or(0.0)
                    );
                    let row = if r >= 4 {
                        Row::info(format!("moment[{r}]"), est, formula.value, prov)
                    } else if formula.value == 0.0 {
                        Row::scored(format!("moment[{r}]"), est, 0.0, 5.0 * est.stderr.unwrap_or(f64::NAN), prov)
                    } else {
                        Row::scored(format!("moment[{r}]"), est, formula.value, 0.1 * formula.value.abs(), prov)
                    };
                    if r == 2 {
                        let d = prop[rungs - 1];
                        rows.push(Row::info(
                            "moment[2] exact finite-n",
                            Estimate::exact(exact_sum_variance(&u, p, theta, top) / (d * d)),
                            formula.value,
                            "exact second moment of the PropNorm sum",
                        ));
                    }
                    moments.push(MomentRow {
                        order_tuple: tuple_label(&ts),
                        estimate: est.value,
                        stderr: est.stderr,
                        formula: formula.value,
                        verdict: row.verdict,
                    });
                    rows.push(row);
                    if rungs >= 2 && formula.value != 0.0 {
                        let lo = raw_moment(&reps, rungs - 2, r, prop[rungs - 2]);
                        let ext = extrapolate_limit(
                            spec.ladder[rungs - 2] as f64,
                            lo,
                            n,
                            est,
                            1.0 - spec.beta,
                        );
                        rows.push(Row::info(
                            format!("moment[{r}] extrapolated"),
                            ext,
                            formula.value,
                            "two-rung fit m(n) = L + c·n^-(1-beta)",
                        ));
                    }
                }
            }
        }
    }

    let metadata = Metadata {
        seed: spec.seed,
        build: build_id(),
        wall_time_s: started.elapsed().as_secs_f64(),
        config: spec.config_lines(),
    };
    Ok(ExperimentOutput {
        table: ResultTable { rows, metadata },
        covariance,
        scaling,
        marginal,
        marginal_label,
        moments,
    })
}

fn raw_moment(reps: &[RepOut], rung: usize, r: u32, divisor: f64) -> Estimate {
    let vals: Vec<f64> = reps.iter().map(|o| (o.rung_sums[rung] / divisor).powi(r as i32)).collect();
    mean_estimate(&vals)
}

/// Monte Carlo stderr of the least-squares log-log slope.
fn slope_stderr(ladder: &[usize], var: &[Estimate]) -> Option<f64> {
    let xs: Vec<f64> = ladder.iter().map(|&n| (n as f64).ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let mut acc = 0.0;
    for (x, v) in xs.iter().zip(var) {
        let rel = v.stderr? / v.value;
        acc += ((x - mx) / sxx * rel).powi(2);
    }
    Some(acc.sqrt())
}

fn tuple_label(ts: &[f64]) -> String {
    let parts: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
    format!("({})", parts.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_stderr() {
        let e = mean_estimate(&[2.5; 40]);
        assert_eq!(e.value, 2.5);
        assert_eq!(e.stderr, Some(0.0));
        assert_eq!(mean_estimate(&[1.0; 10]).stderr, None);
    }

    #[test]
    fn ks_uniform_midpoints() {
        let n = 20;
        let v: Vec<f64> = (0..n).rev().map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&v, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-15);
        assert_eq!(ks_distance(&[0.5], |x| x), 0.5);
    }

    #[test]
    fn exact_power_law_slope() {
        let pairs: Vec<(f64, f64)> = [1024.0, 4096.0, 16384.0, 65536.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(1.6))).collect();
        let (s, se) = scaling_slope(&pairs).unwrap();
        assert!((s - 1.6).abs() < 1e-12);
        assert!(se.unwrap() < 1e-12);
    }

    #[test]
    fn jackknife_of_mean_matches_classical() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let jk = jackknife(&v, 200, |s| s.iter().sum::<f64>() / s.len() as f64);
        let cl = mean_estimate(&v);
        assert!((jk.stderr.unwrap() - cl.stderr.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn l_product_special_cases() {
        let u = [1.0, 0.4, 0.3, 0.25, 0.2];
        let w = 2.5;
        let single = exact_l_product(&u, w, 2, 1.5, 4, 0.25, 0.25);
        assert!((single - 2.25 / (w * w)).abs() < 1e-15);
        let a = exact_l_product(&u, w, 2, 1.0, 4, 0.5, 1.0);
        let b = exact_l_product(&u, w, 2, 1.0, 4, 1.0, 0.5);
        assert_eq!(a, b);
        // Brute force.
        let mut bf = 0.0;
        for k1 in 1..=2usize {
            for k2 in 1..=4usize {
                bf += u[k1.abs_diff(k2)].powi(2);
            }
        }
        assert!((a - bf / (w * w)).abs() < 1e-15);
    }
}
