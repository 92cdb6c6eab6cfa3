//! Young functions of the class used throughout the crate.
//!
//! A [`PhiFunction`] is an even, convex function with `φ(0) = 0`, defined on
//! an open interval `(-λ₀, λ₀)` (λ₀ may be infinite). It controls moment
//! generating functions through `E exp(λξ) ≤ exp(φ(λτ))`, and its
//! Young–Fenchel conjugate `φ*(x) = sup_λ (λx − φ(λ))` controls tails through
//! `exp(−φ*(x))`.
//!
//! Closed forms are kept analytic where possible; data-derived functions are
//! stored as piecewise-linear tables on `[0, λ_max]` and are `+∞` beyond.

mod conjugate;
mod norms;

pub use conjugate::{biconjugate, conjugate_residual, fenchel_transform, ConjPoint, ConjugateTable, ConvexProfile};
pub use norms::{
    bphi_norm_mgf, gpsi_norm, log_mgf, moment_tail_bound, natural_phi, LambdaGrid, MgfOptions, NormEstimate,
    NormMethod, PsiMomentScale, DEFAULT_C3,
};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Which family a [`PhiFunction`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `σ²λ²/2`.
    Subgaussian,
    /// Smooth power family with `φ*(x) ~ x^r / r` as `x → ∞`.
    PowerType(f64),
    /// Tabulated log-sup-MGF of a field.
    Natural,
    /// Anything else: user closures, rescalings, envelopes, imported tables.
    Custom,
}

impl fmt::Display for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiKind::Subgaussian => write!(f, "subgaussian"),
            PhiKind::PowerType(r) => write!(f, "power:{r}"),
            PhiKind::Natural => write!(f, "natural"),
            PhiKind::Custom => write!(f, "custom"),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Quadratic {
        var: f64,
    },
    /// `((1+λ²)^{s/2} − 1)/s`, s > 1.
    SmoothPower {
        s: f64,
    },
    /// `−½ ln(1 − λ²)` on (−1, 1).
    LogBarrier,
    Table(Arc<Table>),
    /// `n φ(λ/√n)`.
    Rescaled {
        base: Arc<PhiFunction>,
        n: f64,
    },
    /// Pointwise maximum of the parts.
    Envelope(Arc<[PhiFunction]>),
    Closure {
        value: ScalarFn,
        slope: ScalarFn,
    },
}

/// Piecewise-linear table on `grid[0] = 0 < grid[1] < …`.
#[derive(Debug, Clone)]
pub(crate) struct Table {
    pub(crate) grid: Vec<f64>,
    pub(crate) values: Vec<f64>,
    /// `slopes[j]` is the slope on `[grid[j], grid[j+1]]`.
    pub(crate) slopes: Vec<f64>,
}

impl Table {
    fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(invalid("table needs at least two matching grid/value entries"));
        }
        if grid[0] != 0.0 || values[0] != 0.0 {
            return Err(invalid("table must start at (0, 0)"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("table grid must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("table values must be finite and nonnegative"));
        }
        let slopes: Vec<f64> =
            grid.windows(2).zip(values.windows(2)).map(|(g, v)| (v[1] - v[0]) / (g[1] - g[0])).collect();
        for w in slopes.windows(2) {
            if w[1] < w[0] - 1e-9 * (1.0 + w[0].abs()) {
                return Err(invalid("table is not convex (slopes decrease)"));
            }
        }
        Ok(Self { grid, values, slopes })
    }

    fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Segment index containing `a` (last segment for the right end).
    fn segment(&self, a: f64) -> usize {
        let idx = self.grid.partition_point(|g| *g <= a);
        idx.saturating_sub(1).min(self.slopes.len() - 1)
    }

    fn value(&self, a: f64) -> f64 {
        if a > self.end() {
            return f64::INFINITY;
        }
        let j = self.segment(a);
        self.values[j] + self.slopes[j] * (a - self.grid[j])
    }

    fn slope(&self, a: f64) -> f64 {
        if a >= self.end() {
            return f64::INFINITY;
        }
        self.slopes[self.segment(a)]
    }

    fn inverse(&self, p: f64) -> Option<f64> {
        let last = *self.values.last().unwrap();
        if p > last {
            return None;
        }
        // values are nondecreasing; first index with value >= p
        let k = self.values.partition_point(|v| *v < p);
        if k == 0 {
            return Some(0.0);
        }
        let j = k - 1;
        let s = self.slopes[j];
        if s <= 0.0 {
            return Some(self.grid[k]);
        }
        Some(self.grid[j] + (p - self.values[j]) / s)
    }
}

/// An even convex function of the class Φ, see the module docs.
#[derive(Clone)]
pub struct PhiFunction {
    kind: PhiKind,
    lambda0: f64,
    repr: Repr,
}

impl fmt::Debug for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiFunction").field("kind", &self.kind).field("lambda0", &self.lambda0).finish_non_exhaustive()
    }
}

impl PhiFunction {
    /// `φ(λ) = λ²/2`.
    pub fn subgaussian() -> Self {
        Self::gaussian(1.0)
    }

    /// `φ(λ) = σ²λ²/2`.
    pub fn gaussian(var: f64) -> Self {
        assert!(var > 0.0, "variance must be positive");
        Self { kind: PhiKind::Subgaussian, lambda0: f64::INFINITY, repr: Repr::Quadratic { var } }
    }

    /// Smooth power-type function with `φ″(0) = 1` and `φ*(x) ~ x^r/r`.
    ///
    /// For `r > 1` this is `((1+λ²)^{s/2} − 1)/s` with `s = r/(r−1)`; for
    /// `r = 1` it is `−½ ln(1 − λ²)` on `(−1, 1)`, whose conjugate grows
    /// linearly.
    pub fn power_type(r: f64) -> Result<Self> {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(domain(format!("power-type exponent r must be >= 1, got {r}")));
        }
        if r == 1.0 {
            return Ok(Self { kind: PhiKind::PowerType(r), lambda0: 1.0, repr: Repr::LogBarrier });
        }
        let s = r / (r - 1.0);
        Ok(Self { kind: PhiKind::PowerType(r), lambda0: f64::INFINITY, repr: Repr::SmoothPower { s } })
    }

    /// User supplied function given by its value and right derivative on `[0, λ₀)`.
    pub fn custom<F, G>(lambda0: f64, value: F, slope: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { kind: PhiKind::Custom, lambda0, repr: Repr::Closure { value: Arc::new(value), slope: Arc::new(slope) } }
    }

    /// Piecewise-linear even function through `(grid[i], values[i])`.
    ///
    /// `grid` starts at 0, `values` at 0, and slopes must be nondecreasing.
    /// The function is `+∞` for `|λ| > grid.last()`.
    pub fn tabulated(kind: PhiKind, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let table = Table::new(grid, values)?;
        Ok(Self { kind, lambda0: table.end(), repr: Repr::Table(Arc::new(table)) })
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    /// Domain radius λ₀.
    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.repr, Repr::Table(_))
    }

    /// The table (grid, values) when tabulated.
    pub fn table(&self) -> Option<(&[f64], &[f64])> {
        match &self.repr {
            Repr::Table(t) => Some((&t.grid, &t.values)),
            _ => None,
        }
    }

    pub(crate) fn raw_table(&self) -> Option<&Table> {
        match &self.repr {
            Repr::Table(t) => Some(t),
            _ => None,
        }
    }

    /// True when `φ(λ) = σ²λ²/2` in closed form; returns σ².
    pub fn quadratic_variance(&self) -> Option<f64> {
        match self.repr {
            Repr::Quadratic { var } => Some(var),
            _ => None,
        }
    }

    /// φ(λ); `+∞` outside the domain.
    pub fn eval(&self, lambda: f64) -> f64 {
        let a = lambda.abs();
        match &self.repr {
            Repr::Quadratic { var } => 0.5 * var * a * a,
            Repr::SmoothPower { s } => ((1.0 + a * a).powf(0.5 * s) - 1.0) / s,
            Repr::LogBarrier => {
                if a >= 1.0 {
                    f64::INFINITY
                } else {
                    -0.5 * (-a * a).ln_1p()
                }
            }
            Repr::Table(t) => t.value(a),
            Repr::Rescaled { base, n } => {
                let v = base.eval(a / n.sqrt());
                n * v
            }
            Repr::Envelope(parts) => parts.iter().map(|p| p.eval(a)).fold(0.0, f64::max),
            Repr::Closure { value, .. } => {
                if a >= self.lambda0 {
                    f64::INFINITY
                } else {
                    value(a)
                }
            }
        }
    }

    /// Right derivative φ′₊(λ) for λ ≥ 0 (odd extension for λ < 0).
    pub fn deriv(&self, lambda: f64) -> f64 {
        if lambda < 0.0 {
            return -self.slope(-lambda);
        }
        self.slope(lambda)
    }

    /// Right derivative on the half line `a ≥ 0`.
    pub(crate) fn slope(&self, a: f64) -> f64 {
        match &self.repr {
            Repr::Quadratic { var } => var * a,
            Repr::SmoothPower { s } => a * (1.0 + a * a).powf(0.5 * s - 1.0),
            Repr::LogBarrier => {
                if a >= 1.0 {
                    f64::INFINITY
                } else {
                    a / (1.0 - a * a)
                }
            }
            Repr::Table(t) => t.slope(a),
            Repr::Rescaled { base, n } => n.sqrt() * base.slope(a / n.sqrt()),
            Repr::Envelope(parts) => {
                // slope of the active part; ties resolved by the larger slope
                let mut best = f64::NEG_INFINITY;
                let mut slope = 0.0;
                for p in parts.iter() {
                    let v = p.eval(a);
                    let d = p.slope(a);
                    if v > best || (v == best && d > slope) {
                        best = v;
                        slope = d;
                    }
                }
                slope
            }
            Repr::Closure { slope, .. } => {
                if a >= self.lambda0 {
                    f64::INFINITY
                } else {
                    slope(a)
                }
            }
        }
    }

    /// `φ″(0)`; analytic where available, otherwise a central second difference.
    pub fn curvature_at_zero(&self) -> f64 {
        match &self.repr {
            Repr::Quadratic { var } => *var,
            Repr::SmoothPower { .. } | Repr::LogBarrier => 1.0,
            Repr::Rescaled { base, .. } => base.curvature_at_zero(),
            Repr::Envelope(parts) => parts.iter().map(|p| p.curvature_at_zero()).fold(0.0, f64::max),
            Repr::Table(t) => 2.0 * t.values[1] / (t.grid[1] * t.grid[1]),
            Repr::Closure { .. } => {
                let h = 1e-4 * self.lambda0.min(1.0);
                (self.eval(h) + self.eval(-h)) / (h * h)
            }
        }
    }

    /// The nonnegative λ with φ(λ) = p.
    pub fn inverse(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) {
            return Err(domain(format!("phi inverse needs p >= 0, got {p}")));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        match &self.repr {
            Repr::Quadratic { var } => Ok((2.0 * p / var).sqrt()),
            Repr::SmoothPower { s } => Ok(((1.0 + s * p).powf(2.0 / s) - 1.0).sqrt()),
            Repr::LogBarrier => {
                let l = (-(-2.0 * p).exp_m1()).sqrt();
                if l < 1.0 {
                    Ok(l)
                } else {
                    Err(domain(format!("p = {p} is beyond the representable range of phi")))
                }
            }
            Repr::Table(t) => t.inverse(p).ok_or_else(|| domain(format!("p = {p} exceeds the tabulated range of phi"))),
            Repr::Rescaled { base, n } => Ok(n.sqrt() * base.inverse(p / n)?),
            _ => self.inverse_by_bisection(p),
        }
    }

    fn inverse_by_bisection(&self, p: f64) -> Result<f64> {
        let mut lo = 0.0;
        let mut hi = if self.lambda0.is_finite() { 0.5 * self.lambda0 } else { 1.0 };
        while self.eval(hi) < p {
            lo = hi;
            if self.lambda0.is_finite() {
                let next = 0.5 * (hi + self.lambda0);
                if next == hi || next >= self.lambda0 {
                    return Err(domain(format!("p = {p} exceeds sup phi on the domain")));
                }
                hi = next;
            } else {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(domain(format!("p = {p} not reached by phi")));
                }
            }
        }
        Ok(bisect(lo, hi, |x| self.eval(x) >= p))
    }

    /// `λ ↦ n φ(λ/√n)` with domain radius `√n·λ₀`.
    pub fn scaled_sum(&self, n: u64) -> Self {
        assert!(n >= 1, "n must be positive");
        if n == 1 {
            return self.clone();
        }
        if let Repr::Quadratic { .. } = self.repr {
            // fixed point of the scaling
            return self.clone();
        }
        let nf = n as f64;
        Self {
            kind: PhiKind::Custom,
            lambda0: self.lambda0 * nf.sqrt(),
            repr: Repr::Rescaled { base: Arc::new(self.clone()), n: nf },
        }
    }

    /// `sup_{1≤n≤n_max} n φ(λ/√n)` joined with the Gaussian limit `φ″(0)λ²/2`.
    pub fn zeta(&self, n_max: u64) -> Self {
        assert!(n_max >= 1, "n_max must be positive");
        if let Repr::Quadratic { .. } = self.repr {
            return self.clone();
        }
        let mut parts: Vec<PhiFunction> = (1..=n_max).map(|n| self.scaled_sum(n)).collect();
        parts.push(PhiFunction::gaussian(self.curvature_at_zero()));
        Self { kind: PhiKind::Custom, lambda0: self.lambda0, repr: Repr::Envelope(parts.into()) }
    }

    /// Samples the function on `grid` (starting at 0) into a table.
    pub fn to_table(&self, grid: &[f64]) -> Result<Self> {
        let values: Vec<f64> = grid.iter().map(|&g| self.eval(g)).collect();
        Self::tabulated(PhiKind::Custom, grid.to_vec(), values)
    }

    /// Checks the defining properties on a sampled grid of positive λ.
    ///
    /// Evenness, `φ(0)=0`, strict convexity with the given margin, positive
    /// curvature at zero and growth of `φ(λ)/λ` towards the domain edge.
    pub fn validate(&self, lambdas: &[f64], margin: f64) -> Result<()> {
        if self.eval(0.0) != 0.0 {
            return Err(invalid("phi(0) != 0"));
        }
        let mut pts: Vec<f64> = lambdas.iter().copied().filter(|l| *l > 0.0 && *l < self.lambda0).collect();
        pts.sort_by(f64::total_cmp);
        for &l in &pts {
            let (a, b) = (self.eval(l), self.eval(-l));
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return Err(invalid(format!("phi not even at {l}")));
            }
        }
        for w in pts.windows(2) {
            let (l1, l2) = (w[0], w[1]);
            let alpha = 0.5;
            let mid = self.eval(alpha * l1 + (1.0 - alpha) * l2);
            let chord = alpha * self.eval(l1) + (1.0 - alpha) * self.eval(l2);
            let need = margin * alpha * (1.0 - alpha) * (l2 - l1).powi(2);
            if mid > chord - need + 1e-12 * (1.0 + chord.abs()) {
                return Err(invalid(format!("strict convexity fails on [{l1}, {l2}]")));
            }
        }
        if !(self.curvature_at_zero() > 0.0) {
            return Err(invalid("phi''(0) must be positive"));
        }
        if let (Some(&first), Some(&last)) = (pts.first(), pts.last()) {
            if self.eval(last) / last <= self.eval(first) / first {
                return Err(invalid("phi(λ)/λ does not increase towards the domain edge"));
            }
        }
        Ok(())
    }
}

/// Bisection for a monotone predicate that is false at `lo` and true at `hi`;
/// returns the smallest representable point where it holds.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    kind: String,
    lambda0: Option<f64>,
    grid: Vec<f64>,
    values: Vec<f64>,
}

fn kind_from_str(s: &str) -> Result<PhiKind> {
    match s {
        "subgaussian" => Ok(PhiKind::Subgaussian),
        "natural" => Ok(PhiKind::Natural),
        "custom" => Ok(PhiKind::Custom),
        other => other
            .strip_prefix("power:")
            .and_then(|r| r.parse::<f64>().ok())
            .map(PhiKind::PowerType)
            .ok_or_else(|| invalid(format!("unknown phi kind '{other}'"))),
    }
}

impl PhiFunction {
    /// JSON envelope `{kind, lambda0, grid, values}` of a tabulated function.
    pub fn to_json(&self) -> Result<String> {
        let t =
            self.raw_table().ok_or_else(|| invalid("only tabulated phi functions serialize; call to_table first"))?;
        let doc = TableJson {
            kind: self.kind.to_string(),
            lambda0: self.lambda0.is_finite().then_some(self.lambda0),
            grid: t.grid.clone(),
            values: t.values.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TableJson = serde_json::from_str(text)?;
        let kind = kind_from_str(&doc.kind)?;
        let phi = Self::tabulated(kind, doc.grid, doc.values)?;
        if let Some(l0) = doc.lambda0 {
            if l0 != phi.lambda0 {
                return Err(invalid("lambda0 does not match the table end"));
            }
        }
        Ok(phi)
    }
}
