//! Tail bounds for the maximum of a field: the covering-number bound for
//! `Q(u)`, its normalized-sum variants and the block-series bound for
//! martingales normalized by `σ(n) v_r(n)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaining::{delta_phi, KProfile};
use crate::error::{domain, invalid, Error, Result};
use crate::metric::CoveringCache;
use crate::phi::{fenchel_transform, ConjugateTable, PhiFunction};

/// One evaluation of `(e^C + 1) N(T, d, C Δ_φ(u)) exp(−φ*(u))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub u: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// Validity onset; `None` when the profile admits none.
    pub u0: Option<f64>,
    pub covering_count: usize,
    pub delta_used: f64,
    pub conj_value: f64,
    pub bound: f64,
    pub below_u0: bool,
    pub k_inverse_capped: bool,
}

impl TailBoundReport {
    /// The bound recomputed from the other fields.
    pub fn recompute(&self) -> f64 {
        assemble(self.c, self.covering_count, self.conj_value)
    }

    /// Bound on `P(sup |ξ| > u)`.
    pub fn two_sided(&self) -> f64 {
        2.0 * self.bound
    }

    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.below_u0 {
            f.push("below_u0");
        }
        if self.k_inverse_capped {
            f.push("k_inverse_capped");
        }
        f.join("|")
    }
}

fn assemble(c: f64, n: usize, conj_value: f64) -> f64 {
    (c.exp() + 1.0) * n as f64 * (-conj_value).exp()
}

/// `inf {u : Δ(C, u) ≤ 0.5 K₀}`.
///
/// With `δ*` the largest grid radius not above `0.5 K₀`, the condition reads
/// `u (φ*)′(u) ≥ 0.5 C / K̂(δ*)`, and the left side is nondecreasing in `u`.
pub fn u0_of_c(profile: &KProfile, conj: &ConjugateTable, c: f64) -> Result<f64> {
    let k0 = profile.k0();
    let ceiling = f64::INFINITY;
    if !(k0 > 0.0) {
        return Err(Error::NoOnset { ceiling, reason: "K0 = 0: the space has no nontrivial chaining".into() });
    }
    let i = profile.delta_grid.partition_point(|&d| d <= 0.5 * k0);
    let k_star = if i == 0 { 0.0 } else { profile.k_values[i - 1] };
    if !(k_star > 0.0) {
        return Err(Error::NoOnset {
            ceiling,
            reason: format!("K vanishes on every grid radius up to 0.5 K0 = {}", 0.5 * k0),
        });
    }
    let target = 0.5 * c / k_star;
    let g = |u: f64| conj.slope(u).map(|s| u * s).unwrap_or(f64::INFINITY);
    if let Some(var) = conj.phi().quadratic_variance() {
        return Ok((var * target).sqrt());
    }
    let mut hi = 1.0;
    while g(hi) < target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoOnset { ceiling, reason: "u (phi*)'(u) stays bounded".into() });
        }
    }
    Ok(crate::phi::bisect(0.0, hi, |u| g(u) >= target))
}

/// Smallest grid u with `Δ(C, u) ≤ 0.5 K₀`, scanning upward.
pub fn u0_on_grid(profile: &KProfile, conj: &ConjugateTable, c: f64, u_grid: &[f64]) -> Result<f64> {
    let k0 = profile.k0();
    let ceiling = u_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(k0 > 0.0) {
        return Err(Error::NoOnset { ceiling, reason: "K0 = 0: the space has no nontrivial chaining".into() });
    }
    for &u in u_grid {
        if let Ok(d) = delta_phi(profile, conj, c, u) {
            if d.delta <= 0.5 * k0 {
                return Ok(u);
            }
        }
    }
    Err(Error::NoOnset { ceiling, reason: format!("Delta(C, u) > 0.5 K0 = {} on the whole grid", 0.5 * k0) })
}

/// The covering-number bound at one `(C, u)`.
pub fn theorem1_bound(
    cover: &CoveringCache<'_>,
    profile: &KProfile,
    conj: &ConjugateTable,
    c: f64,
    u: f64,
) -> Result<TailBoundReport> {
    if !(u > 0.0) {
        return Err(domain(format!("u must be positive, got {u}")));
    }
    let kinv = delta_phi(profile, conj, c, u)?;
    let covering_count = cover.count(c * kinv.delta)?;
    let conj_value = conj.value(u)?;
    Ok(TailBoundReport {
        u,
        c,
        u0: u0_of_c(profile, conj, c).ok(),
        covering_count,
        delta_used: kinv.delta,
        conj_value,
        bound: assemble(c, covering_count, conj_value),
        below_u0: kinv.delta > 0.5 * profile.k0(),
        k_inverse_capped: kinv.capped,
    })
}

/// Smallest bound over `c_grid`, preferring reports inside the validity
/// range; ties keep the earlier grid value.
pub fn optimize_c(
    cover: &CoveringCache<'_>,
    profile: &KProfile,
    conj: &ConjugateTable,
    u: f64,
    c_grid: &[f64],
) -> Result<TailBoundReport> {
    if c_grid.is_empty() {
        return Err(invalid("C grid is empty"));
    }
    let reports = c_grid.iter().map(|&c| theorem1_bound(cover, profile, conj, c, u)).collect::<Result<Vec<_>>>()?;
    let any_valid = reports.iter().any(|r| !r.below_u0);
    let mut best: Option<TailBoundReport> = None;
    for r in reports {
        if any_valid && r.below_u0 {
            continue;
        }
        if best.as_ref().is_none_or(|b| r.bound < b.bound) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

/// `φ*(αu) − φ*(u) + C` with `α = 1 − C Δ̂(u)`; the first step of the
/// proof of the covering bound needs it to be nonnegative.
pub fn step_one_margin(report: &TailBoundReport, conj: &ConjugateTable) -> Result<f64> {
    let alpha = 1.0 - report.c * report.delta_used;
    Ok(conj.value((alpha * report.u).abs())? - report.conj_value + report.c)
}

/// Which function replaces φ for normalized sums `n^{−1/2} Σ ξ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumMode {
    /// `φ_n(λ) = n φ(λ/√n)`.
    FixedN(u64),
    /// `ζ = sup_{n ≤ n_max} φ_n`, with the Gaussian envelope.
    UniformInN(u64),
}

impl fmt::Display for SumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FixedN(n) => write!(f, "t2-fixed:{n}"),
            Self::UniformInN(n) => write!(f, "t2-uniform:{n}"),
        }
    }
}

/// `φ_n` or `ζ` for the given mode.
pub fn sum_phi(phi: &PhiFunction, mode: SumMode) -> Result<PhiFunction> {
    match mode {
        SumMode::FixedN(0) | SumMode::UniformInN(0) => Err(domain("n must be at least 1")),
        SumMode::FixedN(n) => Ok(phi.scaled_sum(n)),
        SumMode::UniformInN(n) => Ok(phi.zeta(n)),
    }
}

/// The covering bound for normalized sums. The caller supplies the space
/// under `d_n` (or `r`), its profile and the conjugate of `φ_n` (or `ζ`);
/// the assembly is the same as for a single field.
pub fn theorem2_bound(
    cover_n: &CoveringCache<'_>,
    profile_n: &KProfile,
    conj_n: &ConjugateTable,
    c: f64,
    u: f64,
) -> Result<TailBoundReport> {
    theorem1_bound(cover_n, profile_n, conj_n, c, u)
}

/// Closed intervals `[A(k), B(k)]` partitioning an index range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub q_ratio: u64,
    pub blocks: Vec<(u64, u64)>,
}

impl BlockPartition {
    /// `A(k) = start · Q^{k−1}`, `B(k) = A(k+1) − 1`, the last block cut at
    /// `n_max`.
    pub fn geometric(start: u64, q: u64, n_max: u64) -> Result<Self> {
        if start < 1 || q < 2 || n_max < start {
            return Err(domain(format!("need start >= 1, Q >= 2, n_max >= start; got {start}, {q}, {n_max}")));
        }
        let mut blocks = Vec::new();
        let mut a = start;
        while a <= n_max {
            let next = a.saturating_mul(q);
            blocks.push((a, (next - 1).min(n_max)));
            a = next;
        }
        Ok(Self { q_ratio: q, blocks })
    }

    /// Explicit blocks; they must be consecutive and nonempty.
    pub fn from_blocks(q_ratio: u64, blocks: Vec<(u64, u64)>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|(a, b)| a > b || *a == 0) {
            return Err(invalid("blocks must be nonempty intervals of positive integers"));
        }
        if blocks.windows(2).any(|w| w[1].0 != w[0].1 + 1) {
            return Err(invalid("blocks must be consecutive"));
        }
        Ok(Self { q_ratio, blocks })
    }

    pub fn start(&self) -> u64 {
        self.blocks[0].0
    }

    pub fn end(&self) -> u64 {
        self.blocks.last().unwrap().1
    }
}

type SeqFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;
type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A martingale with `φ*(x) ∼ x^r L^{1/r}(x)/r` and standard deviation
/// `σ(n)` of order `n^β`.
#[derive(Clone)]
pub struct MartingaleModel {
    pub r: f64,
    pub beta: f64,
    sigma: SeqFn,
    slowly_varying: RealFn,
    pub conj: ConjugateTable,
    /// Constant of the maximal inequality inside each block.
    pub c_doob: f64,
}

impl fmt::Debug for MartingaleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MartingaleModel")
            .field("r", &self.r)
            .field("beta", &self.beta)
            .field("c_doob", &self.c_doob)
            .finish_non_exhaustive()
    }
}

/// Default constant of the block maximal inequality.
pub const DEFAULT_C_DOOB: f64 = 0.5;

impl MartingaleModel {
    pub fn new(
        r: f64,
        beta: f64,
        phi: &PhiFunction,
        sigma: impl Fn(u64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(r >= 1.0) || !(beta > 0.0) {
            return Err(domain(format!("need r >= 1 and beta > 0, got r = {r}, beta = {beta}")));
        }
        Ok(Self {
            r,
            beta,
            sigma: Arc::new(sigma),
            slowly_varying: Arc::new(|_| 1.0),
            conj: fenchel_transform(phi, &[0.0])?,
            c_doob: DEFAULT_C_DOOB,
        })
    }

    /// Degree-`d` polynomial Rademacher martingale: `r = 2/d`, `β = d/2`,
    /// `σ(n) = √binom(n, d)`. For `d ≥ 3` the exponent `r` drops below 1
    /// and `φ` is taken at `r = 1`.
    pub fn polynomial(d: u32) -> Result<Self> {
        if d == 0 {
            return Err(domain("degree must be at least 1"));
        }
        let r = 2.0 / f64::from(d);
        let phi = PhiFunction::power_type(r.max(1.0))?;
        Self::new(r.max(1.0), f64::from(d) / 2.0, &phi, move |n| binomial(n, d).sqrt())
    }

    pub fn with_c_doob(mut self, c: f64) -> Self {
        self.c_doob = c;
        self
    }

    pub fn with_slowly_varying(mut self, l: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.slowly_varying = Arc::new(l);
        self
    }

    pub fn sigma(&self, n: u64) -> f64 {
        (self.sigma)(n)
    }

    /// `v_r(n) = [ln ln(n + 3)]^{1/r}`.
    pub fn v(&self, n: u64) -> f64 {
        ((n as f64 + 3.0).ln().ln()).powf(1.0 / self.r)
    }

    /// `σ(n) v_r(n)`.
    pub fn normalizer(&self, n: u64) -> f64 {
        self.sigma(n) * self.v(n)
    }

    pub fn slowly_varying(&self, x: f64) -> f64 {
        (self.slowly_varying)(x)
    }

    /// Checks that σ is nondecreasing and within `[c_lo n^β, c_hi n^β]` on
    /// the listed indices.
    pub fn check_envelope(&self, ns: &[u64], c_lo: f64, c_hi: f64) -> Result<()> {
        for w in ns.windows(2) {
            if self.sigma(w[1]) < self.sigma(w[0]) {
                return Err(invalid(format!("sigma decreases between {} and {}", w[0], w[1])));
            }
        }
        for &n in ns {
            let s = self.sigma(n) / (n as f64).powf(self.beta);
            if s < c_lo || s > c_hi {
                return Err(invalid(format!("sigma({n})/n^beta = {s} outside [{c_lo}, {c_hi}]")));
            }
        }
        Ok(())
    }
}

/// `binom(n, d)` as a float.
pub fn binomial(n: u64, d: u32) -> f64 {
    if u64::from(d) > n {
        return 0.0;
    }
    (0..d).fold(1.0, |acc, i| acc * (n - u64::from(i)) as f64 / f64::from(i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub a: u64,
    pub b: u64,
    /// `φ*(C u σ(A) v_r(A) / σ(B))`.
    pub exponent: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleBound {
    pub u: f64,
    pub blocks: Vec<BlockTerm>,
    pub total: f64,
}

impl MartingaleBound {
    /// Smallest per-block exponent (the dominant term of the series).
    pub fn leading_exponent(&self) -> f64 {
        self.blocks.iter().map(|b| b.exponent).fold(f64::INFINITY, f64::min)
    }
}

/// `Σ_k exp(−φ*(C u σ(A(k)) v_r(A(k)) / σ(B(k))))` for `u > 2`.
pub fn martingale_block_bound(model: &MartingaleModel, partition: &BlockPartition, u: f64) -> Result<MartingaleBound> {
    if !(u > 2.0) {
        return Err(domain(format!("the block bound is stated for u > 2, got {u}")));
    }
    let mut blocks = Vec::with_capacity(partition.blocks.len());
    let mut total = 0.0;
    for &(a, b) in &partition.blocks {
        let sb = model.sigma(b);
        if !(sb > 0.0) {
            return Err(domain(format!("sigma({b}) = 0 at the end of block [{a}, {b}]")));
        }
        let x = model.c_doob * u * model.sigma(a) * model.v(a) / sb;
        let exponent = model.conj.value(x)?;
        let bound = (-exponent).exp();
        total += bound;
        blocks.push(BlockTerm { a, b, exponent, bound });
    }
    Ok(MartingaleBound { u, blocks, total })
}

/// Least-squares line of `−ln(total)` against `u^r L^{1/r}(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_shape(model: &MartingaleModel, partition: &BlockPartition, u_grid: &[f64]) -> Result<ShapeFit> {
    if u_grid.len() < 2 {
        return Err(invalid("shape fit needs at least two u values"));
    }
    let mut pts = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        let total = martingale_block_bound(model, partition, u)?.total;
        let x = u.powf(model.r) * model.slowly_varying(u).powf(1.0 / model.r);
        pts.push((x, -total.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("shape fit needs distinct u values"));
    }
    let slope = sxy / sxx;
    Ok(ShapeFit { slope, intercept: my - slope * mx })
}
