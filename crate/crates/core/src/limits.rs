//! Limit objects of the normalized partial sums.
//!
//! Hermite constants, exact fBm paths, a discretized Rosenblatt generator,
//! Gaussian pairings and the chaos joint-moment formulas.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::quadrature::{tanh_sinh, tanh_sinh_dist, UnitRule};
use crate::stats::Estimate;
use crate::{factorial, gamma_product};

/// `B(a, b)` through log-gamma.
pub fn beta_fn(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

fn check_range(p: usize, beta: f64) -> Result<()> {
    if p == 0 {
        return Err(domain("order p must be at least 1"));
    }
    let lo = 1.0 - 1.0 / p as f64;
    if beta > lo && beta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("beta must lie in ({lo}, 1) for p = {p}, got {beta}")))
    }
}

/// `H = 1 − p(1−β)/2`.
pub fn hurst(p: usize, beta: f64) -> Result<f64> {
    check_range(p, beta)?;
    Ok(1.0 - p as f64 * (1.0 - beta) / 2.0)
}

/// `a_{p,β}`, the constant giving `Var Z_{p,β}(1) = 1`.
pub fn a_const(p: usize, beta: f64) -> Result<f64> {
    let h = hurst(p, beta)?;
    let b = beta_fn(beta / 2.0, 1.0 - beta);
    Ok((h * (2.0 * h - 1.0) / (factorial(p) * b.powi(p as i32))).sqrt())
}

/// Discretization parameters of the Rosenblatt generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenblattGrid {
    /// Total number of `x`-cells.
    pub x_cells: usize,
    /// Left end `−X` of the `x`-domain; `None` picks `X` so the neglected
    /// tail carries less than 1% of the variance.
    pub x_range: Option<f64>,
    /// Gauss–Legendre order of the kernel quadrature.
    pub s_order: usize,
}

impl Default for RosenblattGrid {
    fn default() -> Self {
        Self { x_cells: 2000, x_range: None, s_order: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteSpec {
    pub p: usize,
    pub beta: f64,
    pub hurst: f64,
    pub a_const: f64,
    pub grid: RosenblattGrid,
    /// Largest tolerated relative variance bias of the discretized generator.
    pub tolerance: f64,
}

impl HermiteSpec {
    pub fn new(p: usize, beta: f64) -> Result<Self> {
        Ok(Self {
            p,
            beta,
            hurst: hurst(p, beta)?,
            a_const: a_const(p, beta)?,
            grid: RosenblattGrid::default(),
            tolerance: 0.05,
        })
    }

    pub fn with_grid(mut self, grid: RosenblattGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

// ---------------------------------------------------------------------------
// Fractional Brownian motion

/// Autocovariance of unit fractional Gaussian noise.
pub fn fgn_autocov(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Exact sampler of `B_H(k/n)`, `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct FbmGenerator {
    h: f64,
    n: usize,
    method: FbmMethod,
}

#[derive(Debug, Clone)]
enum FbmMethod {
    /// `sqrt(λ_k/m)` of the circulant embedding.
    Circulant(Vec<f64>),
    Cholesky(DMatrix<f64>),
}

impl FbmGenerator {
    pub fn new(h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(domain(format!("Hurst index must lie in (0,1), got {h}")));
        }
        if n == 0 {
            return Err(domain("fBm grid needs at least one step"));
        }
        let m = 2 * n;
        let mut c: Vec<Complex64> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex64::new(fgn_autocov(h, lag), 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(m).process(&mut c);
        let scale = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let method = if c.iter().all(|z| z.re >= -1e-12 * scale) {
            FbmMethod::Circulant(c.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect())
        } else {
            log::warn!("circulant embedding not nonnegative for H = {h}, n = {n}; using Cholesky");
            Self::cholesky(h, n)?
        };
        Ok(Self { h, n, method })
    }

    /// Forces the Cholesky route (used to cross-check the embedding).
    pub fn new_cholesky(h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) || n == 0 {
            return Err(domain("invalid fBm parameters"));
        }
        Ok(Self { h, n, method: Self::cholesky(h, n)? })
    }

    fn cholesky(h: f64, n: usize) -> Result<FbmMethod> {
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocov(h, i.abs_diff(j)));
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Singular("fGn covariance is not positive definite".into()))?;
        Ok(FbmMethod::Cholesky(chol.l()))
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.method, FbmMethod::Circulant(_))
    }

    /// Unit fractional Gaussian noise `G_0..G_{n−1}`.
    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.method {
            FbmMethod::Circulant(sqrt_eig) => {
                let mut w: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                FftPlanner::new().plan_fft_forward(w.len()).process(&mut w);
                w[..self.n].iter().map(|z| z.re).collect()
            }
            FbmMethod::Cholesky(l) => {
                let xi = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * xi).iter().copied().collect()
            }
        }
    }

    pub fn path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let scale = (self.n as f64).powf(-self.h);
        let mut out = Vec::with_capacity(self.n + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for g in self.noise(rng) {
            acc += g;
            out.push(acc * scale);
        }
        out
    }
}

/// One fBm path on `{k/n : k = 0..=n}`.
pub fn fbm_path<R: Rng + ?Sized>(h: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(FbmGenerator::new(h, n)?.path(rng))
}

// ---------------------------------------------------------------------------
// Rosenblatt process

/// `G(z) = ∫₀^z w^a (1+w)^a dw` with `a = β/2 − 1`, by substitutions that
/// remove the singularity at 0 and the slow decay at infinity.
#[derive(Debug, Clone)]
pub struct KernelPrimitive {
    a: f64,
    c: f64,
    head_one: f64,
    total: f64,
    rule: UnitRule,
}

impl KernelPrimitive {
    pub fn new(beta: f64, order: usize) -> Self {
        let a = beta / 2.0 - 1.0;
        let c = 1.0 - beta;
        let rule = UnitRule::new(order);
        let mut g = Self { a, c, head_one: 0.0, total: 0.0, rule };
        g.head_one = g.head(1.0);
        g.total = g.head_one + g.far(1.0);
        g
    }

    /// `∫₀^z` for `z ≤ 1` via `w = v^{1/(a+1)}`.
    fn head(&self, z: f64) -> f64 {
        let e = 1.0 / (self.a + 1.0);
        let top = z.powf(self.a + 1.0);
        e * self.rule.integrate(0.0, top, |v| (1.0 + v.powf(e)).powf(self.a))
    }

    /// `∫_{1/y}^∞` for `y ≤ 1` via `w = v^{-1/c}`.
    fn far(&self, y: f64) -> f64 {
        let e = 1.0 / self.c;
        let top = y.powf(self.c);
        e * self.rule.integrate(0.0, top, |v| (1.0 + v.powf(e)).powf(self.a))
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z <= 0.0 {
            0.0
        } else if z <= 1.0 {
            self.head(z)
        } else {
            self.total - self.far(1.0 / z)
        }
    }

    /// `G(∞) = B(β/2, 1−β)`.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// `K(t; x₁, x₂) = ∫₀^t (s−x₁)₊^{β/2−1}(s−x₂)₊^{β/2−1} ds` for `x₁ ≠ x₂`.
#[derive(Debug, Clone)]
pub struct RosenblattKernel {
    g: KernelPrimitive,
}

impl RosenblattKernel {
    pub fn new(beta: f64, order: usize) -> Self {
        Self { g: KernelPrimitive::new(beta, order) }
    }

    pub fn eval(&self, t: f64, x1: f64, x2: f64) -> f64 {
        let (hi, lo) = if x1 >= x2 { (x1, x2) } else { (x2, x1) };
        if hi >= t {
            return 0.0;
        }
        let a = self.g.a;
        let d = hi - lo;
        // v = s − hi ranges over [v0, v1].
        let v0 = (-hi).max(0.0);
        let v1 = t - hi;
        if v0 > 0.0 && v1 <= 4.0 * v0 {
            // Away from both singular points the integrand is smooth.
            return self.g.rule.integrate(v0, v1, |v| (v * (v + d)).powf(a));
        }
        if d == 0.0 {
            return f64::INFINITY;
        }
        d.powf(2.0 * a + 1.0) * (self.g.eval(v1 / d) - self.g.eval(v0 / d))
    }
}

/// `∫₀^t (s − x)₊^{β/2−1} ds`, the kernel bound used to size the domain.
fn kernel_envelope(a: f64, t: f64, x: f64) -> f64 {
    let e = a + 1.0;
    if x >= t {
        0.0
    } else if x >= 0.0 {
        (t - x).powf(e) / e
    } else {
        let y = -x;
        if y < t {
            ((t + y).powf(e) - y.powf(e)) / e
        } else {
            y.powf(e) * (e * (t / y).ln_1p()).exp_m1() / e
        }
    }
}

/// Smallest `X` such that pairs with a coordinate below `−X` carry at most
/// `share` of `Var Z(t) = t^{2H}`, using `K(t;x₁,x₂) ≤ |x₁|^a κ(x₂)`.
pub fn rosenblatt_domain(beta: f64, t: f64, share: f64) -> f64 {
    let a = beta / 2.0 - 1.0;
    let ac = a_const(2, beta).expect("beta in (1/2,1)");
    let env_sq = |x: f64| kernel_envelope(a, t, x).powi(2);
    let inside = tanh_sinh(env_sq, 0.0, t, 1e-10).value;
    let near = tanh_sinh(|y| env_sq(-y), 0.0, 1.0, 1e-10).value;
    let far = tanh_sinh(
        |z| {
            let x = -1.0 / z;
            if x.is_finite() {
                env_sq(x) * x * x
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        1e-10,
    )
    .value;
    let kappa = inside + near + far;
    let e = -(2.0 * a + 1.0);
    let target = share * t.powf(2.0 * beta);
    // 4 ac² X^{-e}/e · ‖κ‖² = target.
    (target * e / (4.0 * ac * ac * kappa)).powf(-1.0 / e)
}

/// Cell midpoints and widths on `[−X, t]`: `⌈cells/2⌉` uniform cells on
/// `[0, t]` and geometrically growing cells on `[−X, 0]` starting at the
/// same width.
pub fn rosenblatt_cells(t: f64, cells: usize, x_range: f64) -> (Vec<f64>, Vec<f64>) {
    let inner = cells.div_ceil(2).max(1);
    let outer = cells.saturating_sub(inner).max(1);
    let h = t / inner as f64;
    // Solve h (ρ^outer − 1)/(ρ − 1) = X for ρ ≥ 1.
    let span = |rho: f64| {
        if (rho - 1.0).abs() < 1e-15 {
            h * outer as f64
        } else {
            h * (rho.powi(outer as i32) - 1.0) / (rho - 1.0)
        }
    };
    let (mut lo, mut hi) = (1.0, 2.0);
    while span(hi) < x_range {
        hi *= 2.0;
    }
    if span(lo) >= x_range {
        hi = lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if span(mid) < x_range {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = hi;
    let mut mids = Vec::with_capacity(inner + outer);
    let mut widths = Vec::with_capacity(inner + outer);
    let mut right = 0.0;
    let mut w = h;
    let mut left_cells = Vec::with_capacity(outer);
    for _ in 0..outer {
        left_cells.push((right - 0.5 * w, w));
        right -= w;
        w *= rho;
    }
    for &(m, w) in left_cells.iter().rev() {
        mids.push(m);
        widths.push(w);
    }
    for j in 0..inner {
        mids.push((j as f64 + 0.5) * h);
        widths.push(h);
    }
    (mids, widths)
}

/// Discretized Rosenblatt variable `Z_{2,β}(t)`: a second-chaos quadratic
/// form `Σ_{i≠j} M_ij g_i g_j` in i.i.d. standard normals.
#[derive(Debug, Clone)]
pub struct RosenblattGenerator {
    t: f64,
    x_range: f64,
    matrix: DMatrix<f64>,
    variance: f64,
    eigen: OnceLock<Vec<f64>>,
}

impl RosenblattGenerator {
    pub fn new(spec: &HermiteSpec, t: f64) -> Result<Self> {
        if spec.p != 2 {
            return Err(domain("the Rosenblatt generator needs p = 2"));
        }
        check_range(2, spec.beta)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(domain(format!("time must be positive, got {t}")));
        }
        let x_range = spec.grid.x_range.unwrap_or_else(|| rosenblatt_domain(spec.beta, t, 0.01));
        let (mids, widths) = rosenblatt_cells(t, spec.grid.x_cells, x_range);
        let kernel = RosenblattKernel::new(spec.beta, spec.grid.s_order);
        let g = mids.len();
        let ac = spec.a_const;
        let sqrt_w: Vec<f64> = widths.iter().map(|w| w.sqrt()).collect();
        let rows: Vec<Vec<f64>> = (0..g)
            .into_par_iter()
            .map(|i| {
                (0..g)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            ac * kernel.eval(t, mids[i], mids[j]) * sqrt_w[i] * sqrt_w[j]
                        }
                    })
                    .collect()
            })
            .collect();
        let matrix = DMatrix::from_fn(g, g, |i, j| rows[i][j]);
        let variance = 2.0 * matrix.iter().map(|m| m * m).sum::<f64>();
        let target = t.powf(2.0 * spec.hurst);
        let bias = variance / target - 1.0;
        if bias.abs() > spec.tolerance {
            return Err(Error::Resolution(format!(
                "Rosenblatt grid with {} cells has relative variance bias {bias:.4} (tolerance {})",
                spec.grid.x_cells, spec.tolerance
            )));
        }
        Ok(Self { t, x_range, matrix, variance, eigen: OnceLock::new() })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn x_range(&self) -> f64 {
        self.x_range
    }

    /// Exact variance of the discretized variable, `2 Σ_{i≠j} M_ij²`.
    pub fn discrete_variance(&self) -> f64 {
        self.variance
    }

    fn eigenvalues(&self) -> &[f64] {
        self.eigen.get_or_init(|| SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect())
    }

    /// Exact third moment of the discretized variable, `8 Σ λ³`.
    pub fn discrete_third_moment(&self) -> f64 {
        8.0 * self.eigenvalues().iter().map(|l| l * l * l).sum::<f64>()
    }

    /// `Σ λ_k (ξ_k² − 1)` from the spectral decomposition of `M`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                l * (z * z - 1.0)
            })
            .sum()
    }

    /// `Σ_{i≠j} M_ij g_i g_j` evaluated directly.
    pub fn sample_direct<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = DVector::from_fn(self.matrix.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        g.dot(&(&self.matrix * &g))
    }
}

/// One draw of the discretized `Z_{2,β}(t)`. Building the generator is the
/// expensive part; reuse [`RosenblattGenerator`] for repeated draws.
pub fn rosenblatt_value<R: Rng + ?Sized>(spec: &HermiteSpec, t: f64, rng: &mut R) -> Result<f64> {
    Ok(RosenblattGenerator::new(spec, t)?.sample(rng))
}

// ---------------------------------------------------------------------------
// Kernels, pairings and matchings

/// `h_q^{(β)}(x_1..x_q)`: 1 for `q = 0`, `Γ(β)Γ(2−β)` for `q = 1`, and
/// `Γ(β)Γ(2−β) Π (x_(j) − x_(j−1))^{β−1}` over the sorted points otherwise.
pub fn h_kernel(beta: f64, xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(1.0);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut v = gamma_product(beta);
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap <= 0.0 {
            return Err(Error::Singular(format!("h kernel evaluated at coincident points {}", w[0])));
        }
        v *= gap.powf(beta - 1.0);
    }
    Ok(v)
}

/// All pair partitions of `{0..r−1}`; empty for odd `r`.
pub fn pairings(r: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(free: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if free.is_empty() {
            out.push(cur.clone());
            return;
        }
        let first = free.remove(0);
        for k in 0..free.len() {
            let other = free.remove(k);
            cur.push((first, other));
            rec(free, cur, out);
            cur.pop();
            free.insert(k, other);
        }
        free.insert(0, first);
    }
    let mut out = Vec::new();
    if r % 2 == 0 && r > 0 {
        rec(&mut (0..r).collect(), &mut Vec::new(), &mut out);
    }
    out
}

/// `E Π B(t_j)` for a Brownian motion with variance `σ²t`.
pub fn gaussian_joint_moment(sigma2: f64, ts: &[f64]) -> f64 {
    let r = ts.len();
    if r == 0 {
        return 1.0;
    }
    let sum: f64 = pairings(r)
        .iter()
        .map(|pp| pp.iter().map(|&(u, v)| ts[u].min(ts[v])).product::<f64>())
        .sum();
    // `+ 0.0` turns the empty sum for odd r into +0.
    sigma2.powf(r as f64 / 2.0) * sum + 0.0
}

/// An ordered sequence of `pr/2` ordered pairs over `{0..r−1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    /// The underlying multigraph: unordered pairs, sorted.
    pub fn graph(&self) -> Vec<(usize, usize)> {
        let mut g: Vec<(usize, usize)> = self.pairs.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        g.sort_unstable();
        g
    }
}

type MatchingCache = Mutex<HashMap<(usize, usize), Arc<Vec<Matching>>>>;

fn matching_cache() -> &'static MatchingCache {
    static CACHE: OnceLock<MatchingCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Sequences of `pr/2` pairs `(u, v)`, `u ≠ v`, using each index exactly `p`
/// times. Cached per `(p, r)`.
pub fn matchings(p: usize, r: usize) -> Arc<Vec<Matching>> {
    if let Some(hit) = matching_cache().lock().unwrap().get(&(p, r)) {
        return hit.clone();
    }
    let mut out = Vec::new();
    if (p * r) % 2 == 0 && p * r > 0 {
        let mut left = vec![p; r];
        let mut slots = Vec::with_capacity(p * r);
        enumerate_matchings(&mut left, &mut slots, p * r, &mut out);
    }
    let out = Arc::new(out);
    matching_cache().lock().unwrap().insert((p, r), out.clone());
    out
}

fn enumerate_matchings(left: &mut [usize], slots: &mut Vec<usize>, total: usize, out: &mut Vec<Matching>) {
    if slots.len() == total {
        let pairs = slots.chunks(2).map(|c| (c[0], c[1])).collect();
        out.push(Matching { pairs });
        return;
    }
    let second = slots.len() % 2 == 1;
    for idx in 0..left.len() {
        if left[idx] == 0 || (second && slots.last() == Some(&idx)) {
            continue;
        }
        left[idx] -= 1;
        slots.push(idx);
        enumerate_matchings(left, slots, total, out);
        slots.pop();
        left[idx] += 1;
    }
}

// ---------------------------------------------------------------------------
// Moment formulas

/// How box integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentQuadrature {
    /// Nested quadrature for `r ≤ 2`, randomized QMC otherwise.
    Auto,
    /// Nested tanh–sinh; only for `r ≤ 2`.
    Nested,
    /// Halton points with random shifts; the stderr comes from the spread
    /// between shifts.
    Qmc { points: usize, shifts: usize, seed: u64 },
}

impl Default for MomentQuadrature {
    fn default() -> Self {
        MomentQuadrature::Auto
    }
}

/// Quasi-Monte Carlo settings used by `Auto` for three or more factors.
pub const DEFAULT_QMC: MomentQuadrature = MomentQuadrature::Qmc { points: 1 << 14, shifts: 64, seed: 0x5eed };

/// `∫₀^{t1}∫₀^{t2} |s1 − s2|^γ ds` by nested tanh–sinh, splitting at the
/// diagonal.
pub fn pair_power_integral(gamma: f64, t1: f64, t2: f64) -> Estimate {
    if t1 <= 0.0 || t2 <= 0.0 {
        return Estimate::exact(0.0);
    }
    let inner = |s1: f64| -> f64 {
        // ∫₀^{t2} |s1 − s2|^γ ds2
        let below = s1.min(t2);
        let mut acc = 0.0;
        if below > 0.0 {
            acc += tanh_sinh_dist(|_, _, db| db.powf(gamma), 0.0, below, 1e-13).value;
        }
        if t2 > s1 {
            acc += tanh_sinh_dist(|_, da, _| da.powf(gamma), s1, t2, 1e-13).value;
        }
        acc
    };
    let cut = t1.min(t2);
    let mut value = 0.0;
    let mut error = 0.0;
    for (a, b) in [(0.0, cut), (cut, t1)] {
        if b > a {
            let q = tanh_sinh(inner, a, b, 1e-12);
            value += q.value;
            error += q.error;
        }
    }
    Estimate { value, stderr: Some(error) }
}

fn check_ts(ts: &[f64]) -> Result<()> {
    if ts.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(domain("moment times must be nonnegative"));
    }
    Ok(())
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut v = 0.0;
    while i > 0 {
        v += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    v
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Randomly shifted Halton estimate of `Π t_ℓ · E f(U)` with `U` uniform on
/// the box `Π (0, t_ℓ)`.
fn qmc_box<F>(ts: &[f64], points: usize, shifts: usize, seed: u64, f: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = ts.len();
    if d > PRIMES.len() {
        return Err(domain(format!("QMC dimension {d} exceeds {}", PRIMES.len())));
    }
    if shifts < 2 || points == 0 {
        return Err(domain("QMC needs at least two shifts and one point"));
    }
    let volume: f64 = ts.iter().product();
    let means: Vec<f64> = (0..shifts)
        .into_par_iter()
        .map(|s| {
            let mut rng = crate::rng::stream(seed, s as u64);
            let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            for i in 1..=points as u64 {
                for k in 0..d {
                    let u = radical_inverse(i, PRIMES[k]) + shift[k];
                    x[k] = (u - u.floor()) * ts[k];
                }
                acc += f(&x);
            }
            acc / points as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / shifts as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (shifts as f64 - 1.0);
    Ok(Estimate { value: volume * m, stderr: Some(volume * (var / shifts as f64).sqrt()) })
}

/// Joint moment `E Π_ℓ Y(t_ℓ)` of `Y = μ^p(f)·(normalizing constant)·Z_{p,β}`,
/// the long-memory limit of the `PropNorm`-normalized sums.
pub fn hermite_joint_moment(
    p: usize,
    beta: f64,
    mu_f: f64,
    ts: &[f64],
    quad: MomentQuadrature,
) -> Result<Estimate> {
    check_range(p, beta)?;
    check_ts(ts)?;
    let r = ts.len();
    if r == 0 {
        return Ok(Estimate::exact(1.0));
    }
    if (p * r) % 2 == 1 {
        return Ok(Estimate::exact(0.0));
    }
    let half = p * r / 2;
    let pre = (mu_f * factorial(p)).powi(r as i32) * gamma_product(beta).powi(half as i32)
        / (2f64.powi(half as i32) * factorial(half));
    // Identical multigraphs share their integral.
    let mut graphs: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    for m in matchings(p, r).iter() {
        *graphs.entry(m.graph()).or_default() += 1;
    }
    let mut graphs: Vec<(Vec<(usize, usize)>, usize)> = graphs.into_iter().collect();
    graphs.sort();
    let g = beta - 1.0;
    let mut value = 0.0;
    let mut var = 0.0;
    for (graph, count) in &graphs {
        let est = match resolve(quad, r)? {
            Resolved::Nested => pair_power_integral(graph.len() as f64 * g, ts[0], ts[1]),
            Resolved::Qmc { points, shifts, seed } => qmc_box(ts, points, shifts, seed, |x| {
                graph.iter().map(|&(u, v)| (x[u] - x[v]).abs().powf(g)).product()
            })?,
        };
        value += *count as f64 * est.value;
        var += (*count as f64 * est.stderr.unwrap_or(0.0)).powi(2);
    }
    Ok(Estimate { value: pre * value, stderr: Some(pre * var.sqrt()) })
}

enum Resolved {
    Nested,
    Qmc { points: usize, shifts: usize, seed: u64 },
}

fn resolve(quad: MomentQuadrature, r: usize) -> Result<Resolved> {
    match quad {
        MomentQuadrature::Auto if r <= 2 => Ok(Resolved::Nested),
        MomentQuadrature::Auto => resolve(DEFAULT_QMC, r),
        MomentQuadrature::Nested if r <= 2 => Ok(Resolved::Nested),
        MomentQuadrature::Nested => Err(domain("nested quadrature is only available for r <= 2")),
        MomentQuadrature::Qmc { points, shifts, seed } => Ok(Resolved::Qmc { points, shifts, seed }),
    }
}

/// `μ^p(f)^r ∫_{(0,t)} Π_i h_{|𝓘(i)|}(x_{𝓘(i)}) dx` for index sets
/// `I_1..I_r` (ascending `p`-tuples of positive integers).
pub fn lrd_limit_moment(
    beta: f64,
    mu_f: f64,
    sets: &[Vec<usize>],
    ts: &[f64],
    quad: MomentQuadrature,
) -> Result<Estimate> {
    let r = sets.len();
    if r != ts.len() {
        return Err(domain("need one time per index set"));
    }
    check_ts(ts)?;
    if r == 0 {
        return Ok(Estimate::exact(1.0));
    }
    let p = sets[0].len();
    for s in sets {
        if s.len() != p || s.windows(2).any(|w| w[0] >= w[1]) || s.first() == Some(&0) {
            return Err(domain("index sets must be ascending p-tuples of positive integers"));
        }
    }
    check_range(p, beta)?;
    let k_max = sets.iter().flat_map(|s| s.iter().copied()).max().unwrap_or(0);
    // 𝓘(i) for every i that occurs.
    let groups: Vec<Vec<usize>> = (1..=k_max)
        .map(|i| (0..r).filter(|&l| sets[l].contains(&i)).collect())
        .filter(|g: &Vec<usize>| !g.is_empty())
        .collect();
    let gp = gamma_product(beta);
    let pre = mu_f.powi(r as i32);
    match resolve(quad, r)? {
        Resolved::Nested => {
            // Every group is {0}, {1} or {0,1}.
            let shared = groups.iter().filter(|g| g.len() == 2).count();
            let c = gp.powi(groups.len() as i32);
            let est = if r == 1 {
                Estimate::exact(ts[0])
            } else {
                pair_power_integral(shared as f64 * (beta - 1.0), ts[0], ts[1])
            };
            Ok(Estimate { value: pre * c * est.value, stderr: est.stderr.map(|s| pre * c * s) })
        }
        Resolved::Qmc { points, shifts, seed } => {
            let est = qmc_box(ts, points, shifts, seed, |x| {
                let mut v = 1.0;
                let mut buf = [0.0f64; 16];
                for g in &groups {
                    let pts = &mut buf[..g.len()];
                    for (slot, &l) in pts.iter_mut().zip(g) {
                        *slot = x[l];
                    }
                    v *= h_kernel(beta, pts).unwrap_or(f64::INFINITY);
                }
                v
            })?;
            Ok(Estimate { value: pre * est.value, stderr: est.stderr.map(|s| pre * s) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurst_and_constants() {
        assert_eq!(hurst(1, 0.5).unwrap(), 0.75);
        assert!((hurst(2, 0.8).unwrap() - 0.8).abs() < 1e-15);
        for beta in [0.3, 0.6, 0.9] {
            let a = a_const(1, beta).unwrap();
            let lhs = a * a * beta_fn(beta / 2.0, 1.0 - beta);
            assert!((lhs - (1.0 + beta) / 2.0 * beta).abs() < 1e-12);
        }
        assert!(hurst(2, 0.4).is_err());
        assert!(a_const(1, 1.0).is_err());
    }

    #[test]
    fn h_kernel_values() {
        let v = h_kernel(0.5, &[0.25, 0.75]).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_2 * 0.5f64.powf(-0.5)).abs() < 1e-12);
        assert_eq!(h_kernel(0.5, &[0.75, 0.25]).unwrap(), v);
        assert_eq!(h_kernel(0.7, &[]).unwrap(), 1.0);
        assert_eq!(h_kernel(0.7, &[0.3]).unwrap(), gamma_product(0.7));
        assert!(matches!(h_kernel(0.7, &[0.3, 0.3]), Err(Error::Singular(_))));
    }

    #[test]
    fn pairing_counts_and_moments() {
        assert_eq!(pairings(2).len(), 1);
        assert!(pairings(3).is_empty());
        assert_eq!(pairings(4).len(), 3);
        assert_eq!(pairings(6).len(), 15);
        assert_eq!(gaussian_joint_moment(2.0, &[0.3, 0.7]), 2.0 * 0.3);
        assert_eq!(gaussian_joint_moment(2.0, &[1.0, 1.0, 1.0]), 0.0);
        let m4 = gaussian_joint_moment(1.7, &[1.0; 4]);
        let m2 = gaussian_joint_moment(1.7, &[1.0; 2]);
        assert!((m4 / (m2 * m2) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn small_matchings() {
        let m = matchings(1, 2);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].pairs, vec![(0, 1)]);
        assert_eq!(m[1].pairs, vec![(1, 0)]);
        assert!(matchings(1, 3).is_empty());
        assert_eq!(matchings(2, 3).len(), 48);
    }

    #[test]
    fn odd_order_moments_vanish() {
        let e = hermite_joint_moment(1, 0.6, 1.0, &[1.0, 1.0, 1.0], MomentQuadrature::Auto).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn fgn_covariance_at_half_is_white() {
        assert_eq!(fgn_autocov(0.5, 0), 1.0);
        assert!(fgn_autocov(0.5, 3).abs() < 1e-15);
    }
}
