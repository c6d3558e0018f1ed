//! Simulation of `X_k = p!·θ·e_p(marks active at k)`.
//!
//! A frame holds one replication of the random measure restricted to
//! `A_n`: a Poisson number of points, their marks and their renewal paths.
//! Points are bucketed by renewal time so `X_1..X_n` costs `O(n + renewals)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use crate::error::{domain, Error, Result};
use crate::levy::{FiniteLevyMeasure, LevyModel, TailInverse};
use crate::renewal::{self, PathOrigin, RenewalPath, ReturnLaw, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Representation {
    #[default]
    CompoundPoisson,
    Series,
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cp" | "compound-poisson" | "compound_poisson" => Ok(Self::CompoundPoisson),
            "series" => Ok(Self::Series),
            other => Err(Error::Parse(format!("unknown representation '{other}' (expected cp or series)"))),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CompoundPoisson => "cp",
            Self::Series => "series",
        })
    }
}

/// Default L² tolerance for truncating the series representation.
pub const SERIES_TOL: f64 = 1e-3;
/// Largest number of series terms per frame.
pub const SERIES_INDEX_CAP: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Marks {
    CompoundPoisson { count: usize },
    Series { gammas: Vec<f64>, signs: Vec<i8>, truncation: usize, truncation_l2_err: f64 },
}

/// One replication of the random measure on `A_n`.
#[derive(Debug, Clone)]
pub struct ChaosFrame {
    n: usize,
    marks: Marks,
    values: Vec<f64>,
    origins: Vec<PathOrigin>,
    path_offsets: Vec<u32>,
    path_times: Vec<u32>,
    bucket_offsets: Vec<u32>,
    bucket_points: Vec<u32>,
}

impl ChaosFrame {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `N_n`, or the truncation index in series mode.
    pub fn point_count(&self) -> usize {
        self.values.len()
    }

    pub fn marks(&self) -> &Marks {
        &self.marks
    }

    /// Signed mark of every point.
    pub fn mark_values(&self) -> &[f64] {
        &self.values
    }

    pub fn path(&self, i: usize) -> RenewalPath {
        let lo = self.path_offsets[i] as usize;
        let hi = self.path_offsets[i + 1] as usize;
        RenewalPath { len: self.n, origin: self.origins[i], renewals: self.path_times[lo..hi].to_vec() }
    }

    pub fn paths(&self) -> impl Iterator<Item = RenewalPath> + '_ {
        (0..self.point_count()).map(|i| self.path(i))
    }

    /// Indices of the points with a renewal at time `k ∈ 1..=n`.
    pub fn active_bucket(&self, k: usize) -> &[u32] {
        let lo = self.bucket_offsets[k - 1] as usize;
        let hi = self.bucket_offsets[k] as usize;
        &self.bucket_points[lo..hi]
    }

    pub fn total_renewals(&self) -> usize {
        self.path_times.len()
    }
}

/// Builds frames for a fixed window, Lévy model and representation.
#[derive(Debug, Clone)]
pub struct FrameBuilder<'a> {
    window: Window<'a>,
    source: MarkSource,
    series_tol: f64,
}

#[derive(Debug, Clone)]
enum MarkSource {
    Poisson { measure: FiniteLevyMeasure, poisson: Poisson<f64> },
    Series { tail: TailInverse },
}

impl<'a> FrameBuilder<'a> {
    pub fn new(window: Window<'a>, levy: &LevyModel, representation: Representation) -> Result<Self> {
        let source = match representation {
            Representation::CompoundPoisson => {
                let measure = levy.as_finite().cloned().ok_or_else(|| {
                    domain("the compound-Poisson representation needs a finite atomic Lévy measure")
                })?;
                let lambda = measure.total_mass() * window.wandering();
                let poisson = Poisson::new(lambda).map_err(|e| domain(format!("Poisson rate {lambda}: {e}")))?;
                MarkSource::Poisson { measure, poisson }
            }
            Representation::Series => MarkSource::Series { tail: levy.tail_inverse() },
        };
        Ok(Self { window, source, series_tol: SERIES_TOL })
    }

    pub fn with_series_tolerance(mut self, tol: f64) -> Self {
        self.series_tol = tol;
        self
    }

    pub fn window(&self) -> &Window<'a> {
        &self.window
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChaosFrame> {
        let w = self.window.wandering();
        let (marks, values) = match &self.source {
            MarkSource::Poisson { measure, poisson } => {
                let count = poisson.sample(rng) as usize;
                let values: Vec<f64> = (0..count).map(|_| measure.sample(rng)).collect();
                (Marks::CompoundPoisson { count }, values)
            }
            MarkSource::Series { tail } => {
                let end = tail.support_end();
                let mut gammas = Vec::new();
                let mut signs = Vec::new();
                let mut values = Vec::new();
                let mut gamma: f64 = Exp1.sample(rng);
                let err = loop {
                    let y = gamma / w;
                    if y >= end {
                        break 0.0;
                    }
                    let tail_l2 = tail.tail_l2_sq(y).sqrt();
                    if end.is_infinite() && tail_l2 <= self.series_tol {
                        break tail_l2;
                    }
                    if gammas.len() >= SERIES_INDEX_CAP {
                        return Err(Error::Resolution(format!(
                            "series truncation needs more than {SERIES_INDEX_CAP} terms (tail L2 {tail_l2:.3e})"
                        )));
                    }
                    let sign: i8 = if rng.random::<bool>() { 1 } else { -1 };
                    gammas.push(gamma);
                    signs.push(sign);
                    values.push(sign as f64 * tail.evaluate(y));
                    gamma += Distribution::<f64>::sample(&Exp1, rng);
                };
                let truncation = gammas.len();
                (Marks::Series { gammas, signs, truncation, truncation_l2_err: err }, values)
            }
        };
        let n = self.window.len();
        let count = values.len();
        let mut origins = Vec::with_capacity(count);
        let mut path_offsets = Vec::with_capacity(count + 1);
        let mut path_times = Vec::new();
        path_offsets.push(0u32);
        for _ in 0..count {
            origins.push(self.window.sample_into(rng, &mut path_times));
            path_offsets.push(path_times.len() as u32);
        }
        let mut bucket_offsets = vec![0u32; n + 1];
        for &t in &path_times {
            bucket_offsets[t as usize] += 1;
        }
        for k in 1..=n {
            bucket_offsets[k] += bucket_offsets[k - 1];
        }
        let mut fill = bucket_offsets.clone();
        let mut bucket_points = vec![0u32; path_times.len()];
        for i in 0..count {
            for &t in &path_times[path_offsets[i] as usize..path_offsets[i + 1] as usize] {
                let slot = &mut fill[t as usize - 1];
                bucket_points[*slot as usize] = i as u32;
                *slot += 1;
            }
        }
        Ok(ChaosFrame { n, marks, values, origins, path_offsets, path_times, bucket_offsets, bucket_points })
    }
}

/// One frame for `(law, levy, n, representation)`.
pub fn build_frame<R: Rng + ?Sized>(
    law: &ReturnLaw,
    levy: &LevyModel,
    n: usize,
    representation: Representation,
    rng: &mut R,
) -> Result<ChaosFrame> {
    FrameBuilder::new(law.window(n)?, levy, representation)?.build(rng)
}

/// `e_p(values)` by the recurrence `e_j ← e_j + v·e_{j−1}`.
pub fn elementary_symmetric(values: &[f64], p: usize) -> f64 {
    if p == 0 {
        return 1.0;
    }
    if values.len() < p {
        return 0.0;
    }
    let mut e = vec![0.0; p + 1];
    e[0] = 1.0;
    for (m, &v) in values.iter().enumerate() {
        for j in (1..=p.min(m + 1)).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e[p]
}

/// `X_1..X_n` for the integrand `θ·1_{A^p}`.
pub fn x_sequence(frame: &ChaosFrame, p: usize, theta: f64) -> Vec<f64> {
    let scale = crate::factorial(p) * theta;
    let mut e = vec![0.0; p + 1];
    (1..=frame.n)
        .map(|k| {
            let bucket = frame.active_bucket(k);
            if bucket.len() < p {
                return 0.0;
            }
            e.iter_mut().for_each(|v| *v = 0.0);
            e[0] = 1.0;
            for (m, &i) in bucket.iter().enumerate() {
                let v = frame.values[i as usize];
                for j in (1..=p.min(m + 1)).rev() {
                    e[j] += v * e[j - 1];
                }
            }
            scale * e[p]
        })
        .collect()
}

/// Placement of `p!` in the constant of the long-memory normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnConvention {
    /// `(1/(H(2H−1)p!))^{1/2}·n/b_n^{p/2}`.
    FactorialInside,
    /// `(p!/(H(2H−1)))^{1/2}·n/b_n^{p/2}`, which makes the variance of the
    /// normalized sum converge to `θ²`.
    #[default]
    VarianceMatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    SqrtN,
    An(AnConvention),
    /// `w_n^{p/2}·n/b_n^p`.
    PropNorm,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::An(AnConvention::VarianceMatched)
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sqrtn" => Ok(Self::SqrtN),
            "an" | "variance-matched" => Ok(Self::An(AnConvention::VarianceMatched)),
            "an-inner" => Ok(Self::An(AnConvention::FactorialInside)),
            "propnorm" => Ok(Self::PropNorm),
            other => Err(Error::Parse(format!(
                "unknown normalization '{other}' (expected sqrtn, an, an-inner or propnorm)"
            ))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SqrtN => "sqrtn",
            Self::An(AnConvention::VarianceMatched) => "an",
            Self::An(AnConvention::FactorialInside) => "an-inner",
            Self::PropNorm => "propnorm",
        })
    }
}

/// Checks that `p(β−1) < −1`.
pub fn check_short_memory(p: usize, beta: f64) -> Result<()> {
    let g = p as f64 * (beta - 1.0);
    if g < -1.0 {
        Ok(())
    } else {
        Err(domain(format!("CLT requires p(beta-1) < -1, got p(beta-1) = {g}")))
    }
}

/// Checks that `−1 < p(β−1) < 0`.
pub fn check_long_memory(p: usize, beta: f64) -> Result<()> {
    let g = p as f64 * (beta - 1.0);
    if g > -1.0 && g < 0.0 && p >= 1 {
        Ok(())
    } else {
        Err(domain(format!("non-central limit requires -1 < p(beta-1) < 0, got p(beta-1) = {g}")))
    }
}

impl Normalization {
    /// The divisor for sums of length `n`, given `w_n`.
    pub fn divisor(&self, beta: f64, p: usize, n: usize, wandering: f64) -> Result<f64> {
        let nf = n as f64;
        let pf = p as f64;
        match self {
            Normalization::SqrtN => {
                check_short_memory(p, beta)?;
                Ok(nf.sqrt())
            }
            Normalization::An(convention) => {
                check_long_memory(p, beta)?;
                let h = 1.0 - pf * (1.0 - beta) / 2.0;
                let c = h * (2.0 * h - 1.0);
                let fact = crate::factorial(p);
                let k = match convention {
                    AnConvention::FactorialInside => 1.0 / (c * fact),
                    AnConvention::VarianceMatched => fact / c,
                };
                let b = crate::gamma_product(beta) * wandering;
                Ok(k.sqrt() * nf / b.powf(pf / 2.0))
            }
            Normalization::PropNorm => {
                check_long_memory(p, beta)?;
                let b = crate::gamma_product(beta) * wandering;
                Ok(wandering.powf(pf / 2.0) * nf / b.powf(pf))
            }
        }
    }
}

/// Normalized partial sums `S(t)` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSumPath {
    pub tgrid: Vec<f64>,
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub divisor: f64,
    pub sigma2: Option<f64>,
    /// `(seed, replication)` when the path came from a seeded run.
    pub seed: Option<(u64, u64)>,
}

impl PartialSumPath {
    /// `S(t)/σ` when `σ²` was supplied.
    pub fn standardized(&self) -> Option<Vec<f64>> {
        let s = self.sigma2?.sqrt();
        Some(self.values.iter().map(|v| v / s).collect())
    }
}

pub(crate) fn check_tgrid(tgrid: &[f64]) -> Result<()> {
    if tgrid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(domain("time grid must lie in [0,1]"));
    }
    if tgrid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain("time grid must be strictly increasing"));
    }
    Ok(())
}

/// `Σ_{k ≤ ⌊n t⌋} X_k` at every `t`.
pub fn raw_partial_sums(x: &[f64], tgrid: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(tgrid.len());
    let mut acc = 0.0;
    let mut upto = 0;
    for &t in tgrid {
        let m = ((n as f64 * t).floor() as usize).min(n);
        while upto < m {
            acc += x[upto];
            upto += 1;
        }
        out.push(acc);
    }
    out
}

/// Normalized partial sums of `x` (length `n`) for integral order `p`.
pub fn partial_sums(
    x: &[f64],
    law: &ReturnLaw,
    p: usize,
    tgrid: &[f64],
    norm: Normalization,
    sigma2: Option<f64>,
) -> Result<PartialSumPath> {
    check_tgrid(tgrid)?;
    let n = x.len();
    if n == 0 {
        return Err(domain("empty sequence"));
    }
    let divisor = norm.divisor(law.beta(), p, n, renewal::wandering(law, n))?;
    let values = raw_partial_sums(x, tgrid).into_iter().map(|s| s / divisor).collect();
    Ok(PartialSumPath { tgrid: tgrid.to_vec(), values, normalization: norm, divisor, sigma2, seed: None })
}
