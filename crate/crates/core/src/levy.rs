//! Symmetric Lévy measures with unit second moment.
//!
//! A measure is described either by finitely many atoms or by the
//! generalized inverse `ρ←` of its symmetric tail `y ↦ ρ(|x| > y)`. The two
//! descriptions are linked by `∫|x|^r ρ(dx) = ∫₀^∞ ρ←(y)^r dy`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::quadrature::tanh_sinh;

/// One positive atom; its mirror image at `−x` carries the same mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLevyMeasure {
    /// Sorted by decreasing `x`.
    atoms: Vec<Atom>,
    /// Running sums of `mass`, used for sampling.
    cumulative: Vec<f64>,
}

impl FiniteLevyMeasure {
    /// Builds a symmetric measure from `(x, mass)` pairs with `x > 0`; each
    /// atom is mirrored to `−x` with the same mass.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut list: Vec<Atom> = Vec::new();
        for (x, mass) in atoms {
            if !(x > 0.0 && x.is_finite()) {
                return Err(domain(format!("atom location must be positive and finite, got {x}")));
            }
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(domain(format!("atom mass must be positive and finite, got {mass}")));
            }
            list.push(Atom { x, mass });
        }
        if list.is_empty() {
            return Err(domain("a Lévy measure needs at least one atom"));
        }
        list.sort_by(|a, b| b.x.total_cmp(&a.x));
        let mut atoms: Vec<Atom> = Vec::with_capacity(list.len());
        for a in list {
            match atoms.last_mut() {
                Some(last) if last.x == a.x => last.mass += a.mass,
                _ => atoms.push(a),
            }
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.mass;
                acc
            })
            .collect();
        Ok(Self { atoms, cumulative })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `Q = ρ₀(ℝ)`, both signs included.
    pub fn total_mass(&self) -> f64 {
        2.0 * self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `∫|x|^r ρ₀(dx)`.
    pub fn moment(&self, r: f64) -> f64 {
        2.0 * self.atoms.iter().map(|a| a.mass * a.x.powf(r)).sum::<f64>()
    }

    /// `∫x^k ρ₀(dx)`; zero for odd `k` because the two signs cancel exactly.
    pub fn signed_moment(&self, k: i32) -> f64 {
        self.atoms.iter().map(|a| a.mass * (a.x.powi(k) + (-a.x).powi(k))).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2.0)
    }

    /// Rescales `x ↦ x/s` with `s²` the second moment.
    pub fn standardize(&self) -> Result<Self> {
        let m2 = self.second_moment();
        if !(m2 > 0.0 && m2.is_finite()) {
            return Err(domain("cannot standardize a measure with zero second moment"));
        }
        let s = m2.sqrt();
        Self::new(self.atoms.iter().map(|a| (a.x / s, a.mass)))
    }

    /// The step function `ρ₀←`.
    pub fn tail_inverse(&self) -> TailInverse {
        let mut breaks = vec![0.0];
        let mut values = Vec::with_capacity(self.atoms.len());
        for a in &self.atoms {
            breaks.push(breaks.last().unwrap() + 2.0 * a.mass);
            values.push(a.x);
        }
        TailInverse::Step { breaks, values }
    }

    /// One draw from `ρ₀/Q`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let half = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * half;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.atoms.len() - 1);
        let x = self.atoms[i].x;
        if rng.random::<bool>() {
            x
        } else {
            -x
        }
    }
}

/// Atoms at ±1 with mass ½ each.
pub fn rademacher_measure() -> FiniteLevyMeasure {
    FiniteLevyMeasure::new([(1.0, 0.5)]).expect("valid atoms")
}

/// The generalized tail inverse `ρ←`.
#[derive(Debug, Clone, PartialEq)]
pub enum TailInverse {
    /// `ρ←(y) = x₀ y^{-1/α}` on `(0,1)`, zero afterwards.
    Pareto { alpha: f64, x0: f64 },
    /// `values[i]` on `[breaks[i], breaks[i+1])`, zero from the last break.
    Step { breaks: Vec<f64>, values: Vec<f64> },
}

/// Pareto tails `|x|^{-α}` above `x₀ = √((α−2)/α)`, which gives unit
/// second moment.
pub fn pareto_tail_inverse(alpha: f64) -> Result<TailInverse> {
    if !(alpha > 2.0 && alpha.is_finite()) {
        return Err(domain(format!("Pareto index must exceed 2, got {alpha}")));
    }
    Ok(TailInverse::Pareto { alpha, x0: ((alpha - 2.0) / alpha).sqrt() })
}

impl TailInverse {
    pub fn evaluate(&self, y: f64) -> f64 {
        match self {
            TailInverse::Pareto { alpha, x0 } => {
                if y < 1.0 {
                    x0 * y.powf(-1.0 / alpha)
                } else {
                    0.0
                }
            }
            TailInverse::Step { breaks, values } => {
                if y < 0.0 {
                    return values.first().copied().unwrap_or(0.0);
                }
                let i = breaks.partition_point(|&b| b <= y);
                if i == 0 || i > values.len() {
                    0.0
                } else {
                    values[i - 1]
                }
            }
        }
    }

    /// Smallest `y` with `ρ←(y) = 0`.
    pub fn support_end(&self) -> f64 {
        match self {
            TailInverse::Pareto { .. } => 1.0,
            TailInverse::Step { breaks, .. } => *breaks.last().unwrap(),
        }
    }

    /// `∫_a^b ρ←(y)^r dy` for `0 ≤ a ≤ b`, in closed form.
    pub fn power_integral(&self, a: f64, b: f64, r: f64) -> Result<f64> {
        let b = b.min(self.support_end());
        if b <= a {
            return Ok(0.0);
        }
        match self {
            TailInverse::Pareto { alpha, x0 } => {
                let e = 1.0 - r / alpha;
                if e <= 0.0 && a == 0.0 {
                    return Err(Error::Divergent(format!(
                        "moment of order {r} of a Pareto({alpha}) measure"
                    )));
                }
                let v = if e.abs() < 1e-14 {
                    (b / a).ln()
                } else {
                    (b.powf(e) - a.powf(e)) / e
                };
                Ok(x0.powf(r) * v)
            }
            TailInverse::Step { breaks, values } => {
                let mut acc = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let lo = breaks[i].max(a);
                    let hi = breaks[i + 1].min(b);
                    if hi > lo {
                        acc += (hi - lo) * v.powf(r);
                    }
                }
                Ok(acc)
            }
        }
    }

    /// `∫₀^∞ ρ←(y)^r dy` by quadrature (tanh–sinh copes with the `y → 0`
    /// blow-up of Pareto tails; step functions integrate exactly).
    pub fn moment(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(domain(format!("moment order must be positive, got {r}")));
        }
        match self {
            TailInverse::Pareto { alpha, .. } => {
                if r >= *alpha {
                    return Err(Error::Divergent(format!(
                        "moment of order {r} of a Pareto({alpha}) measure"
                    )));
                }
                Ok(tanh_sinh(|y| self.evaluate(y).powf(r), 0.0, 1.0, 1e-14).value)
            }
            TailInverse::Step { .. } => self.power_integral(0.0, f64::INFINITY, r),
        }
    }

    /// `∫_y^∞ ρ←²`, the L² mass left after truncating the series at `y`.
    pub fn tail_l2_sq(&self, y: f64) -> f64 {
        self.power_integral(y.max(0.0), f64::INFINITY, 2.0).unwrap_or(f64::INFINITY)
    }

    /// Scales `ρ←` to unit L² norm.
    pub fn standardize(&self) -> Result<Self> {
        let norm = self.moment(2.0)?.sqrt();
        if !(norm > 0.0) {
            return Err(domain("cannot standardize a zero tail inverse"));
        }
        Ok(match self {
            TailInverse::Pareto { alpha, x0 } => TailInverse::Pareto { alpha: *alpha, x0: x0 / norm },
            TailInverse::Step { breaks, values } => TailInverse::Step {
                breaks: breaks.clone(),
                values: values.iter().map(|v| v / norm).collect(),
            },
        })
    }

    /// Closed-form moment for Pareto tails, `α x₀^r/(α − r)`.
    pub fn pareto_moment_closed(alpha: f64, r: f64) -> Result<f64> {
        if r >= alpha {
            return Err(Error::Divergent(format!("moment of order {r} of a Pareto({alpha}) measure")));
        }
        let x0 = ((alpha - 2.0) / alpha).sqrt();
        Ok(alpha * x0.powf(r) / (alpha - r))
    }
}

/// Highest refinement level tried by `discretize`.
const MAX_LEVEL: u32 = 12;

/// Cell boundaries at refinement `level`: a head cell `[0, 2^{-K})` followed
/// by `m` geometric cells per octave up to 1, with `m = 2^level` and
/// `K = 4(level+1)`. Successive levels refine each other.
fn geometric_grid(level: u32) -> Vec<f64> {
    let per_octave = 1u32 << level;
    let octaves = 4 * (level + 1);
    let cells = per_octave * octaves;
    let mut grid = Vec::with_capacity(cells as usize + 2);
    grid.push(0.0);
    for i in (0..=cells).rev() {
        grid.push((-(i as f64) / per_octave as f64).exp2());
    }
    grid
}

/// Projects `ρ←` onto step functions (cell means) on a nested geometric grid
/// refined until the L² error of the re-standardized projection is at most
/// `eps`. Returns the atomic measure and the achieved error.
pub fn discretize(ti: &TailInverse, eps: f64) -> Result<(FiniteLevyMeasure, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain(format!("eps must lie in (0,1), got {eps}")));
    }
    match ti {
        TailInverse::Step { breaks, .. } => project(ti, breaks, true),
        TailInverse::Pareto { .. } => {
            let mut last = f64::INFINITY;
            for level in 0..=MAX_LEVEL {
                let (measure, err) = project(ti, &geometric_grid(level), false)?;
                if err <= eps {
                    return Ok((measure, err));
                }
                last = err;
            }
            Err(Error::Resolution(format!(
                "discretization error {last:.3e} still above eps = {eps} at refinement level {MAX_LEVEL}"
            )))
        }
    }
}

fn project(ti: &TailInverse, grid: &[f64], exact: bool) -> Result<(FiniteLevyMeasure, f64)> {
    // err² = ‖ρ − Pρ‖² + (1 − ‖Pρ‖)² when ‖ρ‖ = 1; in general the first term
    // is ‖ρ‖² − ‖Pρ‖² and the second accounts for re-standardization.
    let mut residual = 0.0;
    let mut proj_sq = 0.0;
    let mut steps = Vec::with_capacity(grid.len());
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = b - a;
        if d <= 0.0 {
            continue;
        }
        let i1 = ti.power_integral(a, b, 1.0)?;
        let mean = i1 / d;
        proj_sq += mean * i1;
        if !exact {
            let i2 = ti.power_integral(a, b, 2.0)?;
            residual += (i2 - mean * i1).max(0.0);
        }
        if mean > 0.0 {
            steps.push((mean, d));
        }
    }
    let norm = proj_sq.sqrt();
    if !(norm > 0.0) {
        return Err(domain("tail inverse vanishes on the grid"));
    }
    let err = (residual + (1.0 - norm).powi(2)).sqrt();
    let measure = FiniteLevyMeasure::new(steps.into_iter().map(|(v, d)| (v / norm, 0.5 * d)))?;
    Ok((measure, err))
}

/// A Lévy measure as accepted on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum LevyModel {
    Finite(FiniteLevyMeasure),
    Tail(TailInverse),
}

impl LevyModel {
    /// `∫|x|^r ρ(dx)`, atomic sum or tail-inverse quadrature.
    pub fn moment(&self, r: f64) -> Result<f64> {
        match self {
            LevyModel::Finite(m) => Ok(m.moment(r)),
            LevyModel::Tail(t) => t.moment(r),
        }
    }

    pub fn tail_inverse(&self) -> TailInverse {
        match self {
            LevyModel::Finite(m) => m.tail_inverse(),
            LevyModel::Tail(t) => t.clone(),
        }
    }

    pub fn as_finite(&self) -> Option<&FiniteLevyMeasure> {
        match self {
            LevyModel::Finite(m) => Some(m),
            LevyModel::Tail(_) => None,
        }
    }
}

/// The command-line spelling of a model, kept so it can be printed back.
#[derive(Debug, Clone, PartialEq)]
pub struct LevySpec {
    pub label: String,
    pub model: LevyModel,
}

impl FromStr for LevySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>().map_err(|_| Error::Parse(format!("invalid number '{t}' in Lévy model '{s}'")))
        };
        let model = match parts.as_slice() {
            ["rademacher"] => LevyModel::Finite(rademacher_measure()),
            ["pareto", a] => LevyModel::Tail(pareto_tail_inverse(num(a)?)?),
            ["discretized", a, e] => {
                LevyModel::Finite(discretize(&pareto_tail_inverse(num(a)?)?, num(e)?)?.0)
            }
            _ => {
                return Err(Error::Parse(format!(
                    "unknown Lévy model '{s}' (expected rademacher, pareto:ALPHA or discretized:ALPHA:EPS)"
                )))
            }
        };
        Ok(LevySpec { label: s.to_string(), model })
    }
}

impl fmt::Display for LevySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}
