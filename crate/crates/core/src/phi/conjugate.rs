use serde::{Deserialize, Serialize};

use super::{bisect, PhiFunction, Repr, Table};
use crate::error::{domain, invalid, Error, Result};

/// Convex function on `[0, radius)` seen through its value and right slope.
///
/// Implemented by [`PhiFunction`] and by the conjugate view used for
/// biconjugation, so both directions share one maximiser.
pub trait ConvexProfile {
    fn value(&self, a: f64) -> f64;
    fn right_slope(&self, a: f64) -> f64;
    fn radius(&self) -> f64;
}

impl ConvexProfile for PhiFunction {
    fn value(&self, a: f64) -> f64 {
        self.eval(a)
    }
    fn right_slope(&self, a: f64) -> f64 {
        self.slope(a)
    }
    fn radius(&self) -> f64 {
        self.lambda0
    }
}

/// `φ*(x)` together with the maximiser `λ*(x)`, which is also the right
/// derivative of `φ*` at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjPoint {
    pub value: f64,
    pub slope: f64,
}

/// `sup_{a ∈ [0, radius)} (a·x − f(a))` by bisection on the slope condition
/// `f′₊(a) > x`, starting the bracket at `warm` (a maximiser for a smaller x).
pub(crate) fn legendre<F: ConvexProfile + ?Sized>(f: &F, x: f64, warm: f64) -> Result<ConjPoint> {
    if !(x >= 0.0) {
        return Err(domain(format!("conjugate argument must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(ConjPoint { value: 0.0, slope: 0.0 });
    }
    let radius = f.radius();
    let mut lo = if warm > 0.0 && warm < radius && f.right_slope(warm) <= x { warm } else { 0.0 };
    if f.right_slope(lo) > x {
        return Ok(ConjPoint { value: lo * x - f.value(lo), slope: lo });
    }
    let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
    loop {
        if radius.is_finite() && hi >= radius {
            // probe just inside the domain edge
            let probe = radius * (1.0 - 1e-12);
            if probe <= lo || !(f.right_slope(probe) > x) {
                return Err(Error::NonConvergence(format!("slope {x} not reached before the domain edge {radius}")));
            }
            hi = probe;
            break;
        }
        if f.right_slope(hi) > x {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NonConvergence(format!("slope {x} not reached")));
        }
    }
    let hi = bisect(lo, hi, |a| f.right_slope(a) > x);
    let v_hi = hi * x - f.value(hi);
    Ok(ConjPoint { value: v_hi.max(0.0), slope: hi })
}

fn table_conjugate(t: &Table, x: f64) -> Result<ConjPoint> {
    if !(x >= 0.0) {
        return Err(domain(format!("conjugate argument must be >= 0, got {x}")));
    }
    let last = *t.slopes.last().unwrap();
    if x > last {
        return Err(Error::NonConvergence(format!("slope {x} beyond the tabulated slope range {last}")));
    }
    // first segment whose slope exceeds x; its left vertex maximises
    let j = t.slopes.partition_point(|s| *s <= x);
    let lam = t.grid[j];
    Ok(ConjPoint { value: lam * x - t.values[j], slope: lam })
}

impl PhiFunction {
    /// `φ*(x)` and its right derivative.
    pub fn conjugate(&self, x: f64) -> Result<ConjPoint> {
        self.conjugate_warm(x, 0.0)
    }

    pub(crate) fn conjugate_warm(&self, x: f64, warm: f64) -> Result<ConjPoint> {
        match &self.repr {
            Repr::Quadratic { var } => {
                if !(x >= 0.0) {
                    return Err(domain(format!("conjugate argument must be >= 0, got {x}")));
                }
                Ok(ConjPoint { value: 0.5 * x * x / var, slope: x / var })
            }
            Repr::LogBarrier => {
                if !(x >= 0.0) {
                    return Err(domain(format!("conjugate argument must be >= 0, got {x}")));
                }
                if x == 0.0 {
                    return Ok(ConjPoint { value: 0.0, slope: 0.0 });
                }
                // root of x λ² + λ − x = 0 in (0, 1), written without cancellation
                let lam = 2.0 * x / (1.0 + (1.0 + 4.0 * x * x).sqrt());
                Ok(ConjPoint { value: lam * x + 0.5 * (-lam * lam).ln_1p(), slope: lam })
            }
            Repr::Table(t) => table_conjugate(t, x),
            _ => legendre(self, x, warm),
        }
    }

    /// `(φ*)⁻¹(h)` on the nonnegative half line.
    pub fn conjugate_inverse(&self, h: f64) -> Result<f64> {
        if !(h >= 0.0) {
            return Err(domain(format!("conjugate inverse needs h >= 0, got {h}")));
        }
        if h == 0.0 {
            return Ok(0.0);
        }
        if let Repr::Quadratic { var } = self.repr {
            return Ok((2.0 * var * h).sqrt());
        }
        let f = |x: f64| self.conjugate(x).map(|c| c.value).unwrap_or(f64::INFINITY);
        let mut lo = 0.0;
        let mut hi = 1.0;
        while f(hi) < h {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Err(domain(format!("conjugate never reaches {h}")));
            }
        }
        let x = bisect(lo, hi, |x| f(x) >= h);
        if !f(x).is_finite() {
            return Err(domain(format!("conjugate level {h} is outside the representable range")));
        }
        Ok(x)
    }
}

/// Tabulated Young–Fenchel transform of a [`PhiFunction`].
///
/// Off-grid evaluations go back to the underlying function, so the table can
/// be queried at any `x`.
#[derive(Debug, Clone)]
pub struct ConjugateTable {
    phi: PhiFunction,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Right derivative `(φ*)′(x)`, equal to the maximiser `λ*(x)`.
    pub slope_grid: Vec<f64>,
}

impl ConjugateTable {
    pub fn phi(&self) -> &PhiFunction {
        &self.phi
    }

    /// `φ*(x)` and `(φ*)′(x)`; grid points return the stored values.
    pub fn eval(&self, x: f64) -> Result<ConjPoint> {
        if let Ok(i) = self.grid.binary_search_by(|g| g.total_cmp(&x)) {
            return Ok(ConjPoint { value: self.values[i], slope: self.slope_grid[i] });
        }
        self.phi.conjugate(x)
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.eval(x).map(|c| c.value)
    }

    pub fn slope(&self, x: f64) -> Result<f64> {
        self.eval(x).map(|c| c.slope)
    }

    /// JSON envelope `{kind, lambda0, grid, values, slopes}`.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: String,
            lambda0: Option<f64>,
            grid: &'a [f64],
            values: &'a [f64],
            slopes: &'a [f64],
        }
        let doc = Doc {
            kind: format!("conjugate:{}", self.phi.kind()),
            lambda0: self.phi.lambda0().is_finite().then_some(self.phi.lambda0()),
            grid: &self.grid,
            values: &self.values,
            slopes: &self.slope_grid,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Reads a table written by [`ConjugateTable::to_json`]; `phi` supplies
    /// off-grid evaluation.
    pub fn from_json(text: &str, phi: PhiFunction) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            grid: Vec<f64>,
            values: Vec<f64>,
            slopes: Vec<f64>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.grid.len() != doc.values.len() || doc.grid.len() != doc.slopes.len() {
            return Err(invalid("conjugate table columns differ in length"));
        }
        Ok(Self { phi, grid: doc.grid, values: doc.values, slope_grid: doc.slopes })
    }
}

/// Tabulates `φ*` on an increasing grid, warm-starting each maximisation at
/// the previous maximiser (`λ*(x)` is nondecreasing in `x`).
pub fn fenchel_transform(phi: &PhiFunction, x_grid: &[f64]) -> Result<ConjugateTable> {
    if x_grid.is_empty() {
        return Err(invalid("x grid is empty"));
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("x grid must be strictly increasing"));
    }
    if let Some(x) = x_grid.iter().find(|x| !(**x >= 0.0)) {
        return Err(domain(format!("conjugate grid contains negative point {x}")));
    }
    let mut values = Vec::with_capacity(x_grid.len());
    let mut slopes = Vec::with_capacity(x_grid.len());
    let mut warm = 0.0;
    for &x in x_grid {
        let c = phi.conjugate_warm(x, warm)?;
        warm = c.slope;
        values.push(c.value);
        slopes.push(c.slope);
    }
    Ok(ConjugateTable { phi: phi.clone(), grid: x_grid.to_vec(), values, slope_grid: slopes })
}

struct ConjugateView<'a>(&'a PhiFunction);

impl ConvexProfile for ConjugateView<'_> {
    fn value(&self, x: f64) -> f64 {
        self.0.conjugate(x).map(|c| c.value).unwrap_or(f64::INFINITY)
    }
    fn right_slope(&self, x: f64) -> f64 {
        self.0.conjugate(x).map(|c| c.slope).unwrap_or(f64::INFINITY)
    }
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
}

/// `φ**(λ) = sup_x (λx − φ*(x))`, maximised numerically over the conjugate.
pub fn biconjugate(phi: &PhiFunction, lambda: f64) -> Result<f64> {
    let a = lambda.abs();
    if a >= phi.lambda0() {
        return Err(domain(format!("lambda {lambda} outside the domain")));
    }
    Ok(legendre(&ConjugateView(phi), a, 0.0)?.value)
}

/// Largest relative Fenchel–Moreau residual `|φ** − φ|/(1 + |φ|)` on the grid.
pub fn conjugate_residual(phi: &PhiFunction, lambdas: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &l in lambdas {
        let direct = phi.eval(l);
        let bi = biconjugate(phi, l)?;
        worst = worst.max((bi - direct).abs() / (1.0 + direct.abs()));
    }
    Ok(worst)
}
