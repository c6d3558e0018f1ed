//! The null-recurrent renewal shift.
//!
//! Returns to `A = {renewal at time 0}` happen after i.i.d. gaps `R` with
//! `P(R = j) = j^{-(1+β)}/ζ(1+β)`. The return masses `u_k = μ(A ∩ T^{-k}A)`
//! are the renewal probabilities, `w_n = μ(A_n)` is the wandering rate and
//! `b_n = Γ(β)Γ(2−β)·w_n`.

use rand::Rng;

use crate::convolution;
use crate::error::{domain, Result};
use crate::rng::open_unit;

/// Default size of the cached survival table.
pub const DEFAULT_CACHE: usize = 1 << 20;

/// Smallest index handed to the Euler–Maclaurin tail.
const EM_START: u64 = 16;

/// `Σ_{j≥m} j^{-s}` for `m ≥ EM_START` by Euler–Maclaurin with five
/// Bernoulli corrections.
fn em_tail(s: f64, m: u64) -> f64 {
    let x = m as f64;
    let inv = 1.0 / x;
    let lead = (-s * x.ln()).exp(); // m^{-s}
    let inv2 = inv * inv;
    // (s)_{2k−1} m^{-s-2k+1} B_{2k}/(2k)!
    let mut rising = s;
    let mut pow = lead * inv;
    let mut corr = 0.0;
    const B: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
    ];
    for (k, b) in B.iter().enumerate() {
        corr += b * rising * pow;
        let a = s + (2 * k + 1) as f64;
        rising *= a * (a + 1.0);
        pow *= inv2;
    }
    lead * x / (s - 1.0) + 0.5 * lead + corr
}

/// `Σ_{j≥m} j^{-s}` for any `m ≥ 1`.
pub fn power_tail(s: f64, m: u64) -> f64 {
    let m = m.max(1);
    if m >= EM_START {
        return em_tail(s, m);
    }
    let head: f64 = (m..EM_START).map(|j| (j as f64).powf(-s)).sum();
    head + em_tail(s, EM_START)
}

/// The return-time law together with a cached survival table.
#[derive(Debug, Clone)]
pub struct ReturnLaw {
    beta: f64,
    s: f64,
    zeta: f64,
    /// `q_0..=q_cap`.
    survival: Vec<f64>,
}

impl ReturnLaw {
    /// `f_j ∝ j^{-(1+β)}` with the default survival cache.
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_tolerance(beta, 1e-12, DEFAULT_CACHE)
    }

    /// `tol` bounds the relative error of the normaliser; `cache` is the
    /// largest `j` whose survival probability is tabulated.
    pub fn with_tolerance(beta: f64, tol: f64, cache: usize) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(domain(format!("beta must lie in (0,1), got {beta}")));
        }
        if !(tol > 0.0) {
            return Err(domain(format!("tolerance must be positive, got {tol}")));
        }
        let s = 1.0 + beta;
        // The first omitted Euler–Maclaurin term at m = 16 is below 1e-15
        // relative for every s in (1,2); tighter requests cannot be honoured
        // in double precision anyway.
        let zeta = power_tail(s, 1);
        let cache = cache.max(EM_START as usize);
        let mut survival = Vec::with_capacity(cache + 1);
        survival.push(1.0);
        let mut partial = 0.0;
        for j in 1..=cache as u64 {
            let q = if j + 1 >= EM_START {
                em_tail(s, j + 1) / zeta
            } else {
                partial += (j as f64).powf(-s);
                (zeta - partial) / zeta
            };
            survival.push(q);
        }
        Ok(Self { beta, s, zeta, survival })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `1/ζ(1+β)`, so that `f_j = normalizer · j^{-(1+β)}`.
    pub fn normalizer(&self) -> f64 {
        1.0 / self.zeta
    }

    pub fn cache_len(&self) -> usize {
        self.survival.len() - 1
    }

    /// `f_j = P(R = j)`.
    pub fn pmf(&self, j: u64) -> f64 {
        if j == 0 {
            0.0
        } else {
            (j as f64).powf(-self.s) / self.zeta
        }
    }

    /// `q_j = P(R > j)`.
    pub fn survival(&self, j: u64) -> f64 {
        match self.survival.get(j as usize) {
            Some(&q) => q,
            None => em_tail(self.s, j + 1) / self.zeta,
        }
    }

    /// Smallest `j ≥ 1` with `q_j < v`, assuming `q_limit < v`.
    fn first_below(&self, v: f64, limit: u64) -> u64 {
        let cap = self.cache_len() as u64;
        if limit <= cap || self.survival[cap as usize] < v {
            let hi = limit.min(cap) as usize;
            let idx = self.survival[1..=hi].partition_point(|&q| q >= v);
            return idx as u64 + 1;
        }
        let (mut lo, mut hi) = (cap + 1, limit);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.survival(mid) < v {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Draws `R` by inversion; returns `None` when `R > limit`.
    pub fn sample_gap_within<R: Rng + ?Sized>(&self, rng: &mut R, limit: u64) -> Option<u64> {
        if limit == 0 {
            return None;
        }
        let v = open_unit(rng);
        if self.survival(limit) >= v {
            return None;
        }
        Some(self.first_below(v, limit))
    }

    /// Draws `R` conditioned on `R ≤ n`.
    pub fn sample_gap_at_most<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> u64 {
        let qn = self.survival(n);
        let v = qn + (1.0 - qn) * open_unit(rng);
        if v <= qn {
            return n;
        }
        self.first_below(v, n).min(n)
    }

    /// Restriction of the shift to `A_n`, normalised to a probability.
    pub fn window(&self, n: usize) -> Result<Window<'_>> {
        if n == 0 {
            return Err(domain("window length must be at least 1"));
        }
        if n > u32::MAX as usize {
            return Err(domain("window length exceeds u32 range"));
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = Neumaier::default();
        for j in 1..=n as u64 {
            acc.add(self.survival(j));
            cumulative.push(acc.sum());
        }
        let at_origin = 1.0 - self.survival(n as u64);
        let wandering = if n == 1 { 1.0 } else { 1.0 + cumulative[n - 2] };
        Ok(Window { law: self, n, cumulative, at_origin, wandering })
    }
}

/// `u_0..=u_n`.
pub fn return_mass_sequence(law: &ReturnLaw, n: usize) -> Vec<f64> {
    let f: Vec<f64> = (0..=n as u64).map(|j| law.pmf(j)).collect();
    convolution::renewal_sequence(&f)
}

/// `u_0..=u_n` by the quadratic recursion.
pub fn return_mass_sequence_naive(law: &ReturnLaw, n: usize) -> Vec<f64> {
    let f: Vec<f64> = (0..=n as u64).map(|j| law.pmf(j)).collect();
    convolution::renewal_sequence_naive(&f)
}

/// `w_1..=w_n` (index `i` holds `w_{i+1}`), from `w_n = 1 + Σ_{j<n} q_j`.
pub fn wandering_sequence(law: &ReturnLaw, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut acc = Neumaier::default();
    acc.add(1.0);
    for j in 1..=n as u64 {
        out.push(acc.sum());
        acc.add(law.survival(j));
    }
    out
}

/// `w_n = P(R ≤ n) + Σ_{j=1}^n q_j`, summed directly.
pub fn wandering_direct(law: &ReturnLaw, n: usize) -> f64 {
    let mut acc = Neumaier::default();
    for j in 1..=n as u64 {
        acc.add(law.survival(j));
    }
    acc.add(1.0 - law.survival(n as u64));
    acc.sum()
}

/// `b_n = Γ(β)Γ(2−β)·w_n`.
pub fn rate_b(law: &ReturnLaw, n: usize) -> f64 {
    crate::gamma_product(law.beta) * wandering(law, n)
}

/// `w_n` alone.
pub fn wandering(law: &ReturnLaw, n: usize) -> f64 {
    let mut acc = Neumaier::default();
    acc.add(1.0);
    for j in 1..n as u64 {
        acc.add(law.survival(j));
    }
    acc.sum()
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for Neumaier {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Neumaier::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOrigin {
    /// The point enters `A` for the first time at step `j` without a renewal
    /// at time 0.
    InteriorDelay(u32),
    /// The point starts in `A`; the first gap was drawn from `R | R ≤ n`.
    AtOrigin,
}

/// One trajectory restricted to `{1..n}`, stored as its renewal times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenewalPath {
    pub len: usize,
    pub origin: PathOrigin,
    pub renewals: Vec<u32>,
}

impl RenewalPath {
    /// `ξ_1..ξ_n`.
    pub fn indicators(&self) -> Vec<u8> {
        let mut xi = vec![0u8; self.len];
        for &t in &self.renewals {
            xi[t as usize - 1] = 1;
        }
        xi
    }
}

/// The law `μ_n = μ(· ∩ A_n)/w_n` for a fixed window length.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    law: &'a ReturnLaw,
    n: usize,
    /// `Σ_{i≤j} q_i` for `j = 1..n`.
    cumulative: Vec<f64>,
    at_origin: f64,
    wandering: f64,
}

impl<'a> Window<'a> {
    pub fn law(&self) -> &'a ReturnLaw {
        self.law
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `w_n`.
    pub fn wandering(&self) -> f64 {
        self.wandering
    }

    /// Mixture weights of the origins: `q_j` for `InteriorDelay(j)` and
    /// `P(R ≤ n)` for `AtOrigin`. They sum to `w_n`.
    pub fn origin_weight(&self, origin: PathOrigin) -> f64 {
        match origin {
            PathOrigin::InteriorDelay(j) => self.law.survival(j as u64),
            PathOrigin::AtOrigin => self.at_origin,
        }
    }

    /// Appends the renewal times of one `μ_n` path to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<u32>) -> PathOrigin {
        let n = self.n as u64;
        let x = rng.random::<f64>() * self.wandering;
        let total_delay = self.cumulative[self.n - 1];
        let (origin, first) = if x < total_delay {
            let j = self.cumulative.partition_point(|&c| c <= x) as u64 + 1;
            let j = j.min(n);
            (PathOrigin::InteriorDelay(j as u32), j)
        } else {
            (PathOrigin::AtOrigin, self.law.sample_gap_at_most(rng, n))
        };
        let mut t = first;
        out.push(t as u32);
        while let Some(gap) = self.law.sample_gap_within(rng, n - t) {
            t += gap;
            out.push(t as u32);
        }
        origin
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> RenewalPath {
        let mut renewals = Vec::new();
        let origin = self.sample_into(rng, &mut renewals);
        RenewalPath { len: self.n, origin, renewals }
    }
}

/// Draws one path from `μ_n`.
pub fn sample_mu_n_path<R: Rng + ?Sized>(law: &ReturnLaw, n: usize, rng: &mut R) -> Result<RenewalPath> {
    Ok(law.window(n)?.sample_path(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rejects_beta_outside_unit_interval() {
        for b in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(ReturnLaw::new(b).is_err());
        }
    }

    #[test]
    fn zeta_three_halves() {
        let law = ReturnLaw::with_tolerance(0.5, 1e-12, 64).unwrap();
        // ζ(3/2) to 16 digits.
        assert!((1.0 / law.normalizer() - 2.612_375_348_685_488).abs() < 1e-12);
        assert!((law.pmf(1) - law.normalizer()).abs() < 1e-16);
        assert!((law.survival(1) - (1.0 - law.pmf(1))).abs() < 1e-15);
    }

    #[test]
    fn table_and_analytic_survival_agree_at_the_seam() {
        let law = ReturnLaw::with_tolerance(0.7, 1e-12, 100).unwrap();
        let a = law.survival(100);
        let b = em_tail(1.7, 101) / law.zeta;
        assert_eq!(a, b);
        assert!(law.survival(101) < a);
        assert!((law.survival(100) - law.survival(101) - law.pmf(101)).abs() < 1e-16);
    }

    #[test]
    fn small_return_masses() {
        let law = ReturnLaw::with_tolerance(0.4, 1e-12, 64).unwrap();
        let u = return_mass_sequence(&law, 5);
        let f = |j| law.pmf(j);
        assert_eq!(u[0], 1.0);
        assert!((u[1] - f(1)).abs() < 1e-16);
        assert!((u[2] - (f(2) + f(1) * f(1))).abs() < 1e-16);
    }

    #[test]
    fn first_wandering_values() {
        let law = ReturnLaw::with_tolerance(0.3, 1e-12, 64).unwrap();
        let w = wandering_sequence(&law, 3);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (2.0 - law.pmf(1))).abs() < 1e-15);
        let b1 = rate_b(&law, 1);
        assert!((b1 - crate::gamma_product(0.3)).abs() < 1e-14);
    }

    #[test]
    fn gamma_prefactor_at_one_half() {
        assert!((crate::gamma_product(0.5) - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn origin_weights_sum_to_wandering_rate() {
        let law = ReturnLaw::with_tolerance(0.6, 1e-12, 64).unwrap();
        let win = law.window(200).unwrap();
        let total: f64 = (1..=200u32)
            .map(|j| win.origin_weight(PathOrigin::InteriorDelay(j)))
            .sum::<f64>()
            + win.origin_weight(PathOrigin::AtOrigin);
        assert!((total - win.wandering()).abs() < 1e-12);
        assert!((win.wandering() - wandering_direct(&law, 200)).abs() < 1e-12);
    }

    #[test]
    fn paths_start_where_the_origin_says() {
        let law = ReturnLaw::with_tolerance(0.6, 1e-12, 64).unwrap();
        let win = law.window(300).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..2000 {
            let path = win.sample_path(&mut rng);
            assert!(!path.renewals.is_empty());
            assert!(path.renewals.windows(2).all(|w| w[0] < w[1]));
            assert!(*path.renewals.last().unwrap() as usize <= 300);
            if let PathOrigin::InteriorDelay(j) = path.origin {
                assert_eq!(path.renewals[0], j);
            }
            let xi = path.indicators();
            assert_eq!(xi.iter().map(|&b| b as usize).sum::<usize>(), path.renewals.len());
        }
    }
}

#[cfg(test)]
mod fast_path {
    use super::*;

    #[test]
    fn fast_and_naive_agree_at_ten_thousand() {
        for beta in [0.3, 0.6, 0.8] {
            let law = ReturnLaw::with_tolerance(beta, 1e-12, 1 << 14).unwrap();
            let fast = return_mass_sequence(&law, 10_000);
            let slow = return_mass_sequence_naive(&law, 10_000);
            let worst = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-12, "beta {beta}: {worst:e}");
        }
    }
}
