//! Generic chaining on finite spaces: weight sequences, nested chains with
//! nearest-point projections, the functional L, the profile K̂(δ) with its
//! generalized inverse, the radius Δ_φ(u), the union-bound chain sum X(u)
//! and the admissibility check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::metric::{greedy_extend, FiniteMetricSpace};
use crate::phi::ConjugateTable;

/// Geometric weights `γ_n = scale / (ρ^{n−1}(1 − ρ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaWeights {
    pub rho: f64,
    /// Truncation depth `M`; [`GammaWeights::gamma`] extends past it.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "unit", skip_serializing_if = "is_unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

/// `γ_n = 1/(ρ^{n−1}(1 − ρ))` for `ρ ∈ (2/3, 1)`, so `γ₁ ≥ 3` and
/// `Σ 1/γ_n = 1`.
pub fn default_gamma(m: usize, rho: f64) -> Result<GammaWeights> {
    if !(rho > 2.0 / 3.0 && rho < 1.0) {
        return Err(domain(format!("rho must lie in (2/3, 1), got {rho}")));
    }
    Ok(GammaWeights { rho, m, scale: 1.0 })
}

impl GammaWeights {
    /// `γ_n` for `n ≥ 1`.
    pub fn gamma(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        self.scale / (self.rho.powi(n as i32 - 1) * (1.0 - self.rho))
    }

    pub fn values(&self) -> Vec<f64> {
        (1..=self.m).map(|n| self.gamma(n)).collect()
    }

    /// `Σ_{n ≤ M} 1/γ_n`.
    pub fn truncated_sum(&self) -> f64 {
        (1..=self.m).map(|n| 1.0 / self.gamma(n)).sum()
    }

    /// `Σ_{n > M} 1/γ_n` in closed form.
    pub fn tail_sum(&self) -> f64 {
        self.rho.powi(self.m as i32) / self.scale
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { scale: self.scale * c, ..*self }
    }

    pub fn with_depth(&self, m: usize) -> Self {
        Self { m, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DyadicNets,
    GreedyRefine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Caps the number of levels after `T₀`.
    pub max_depth: Option<usize>,
    /// Largest ball on which [`Strategy::GreedyRefine`] searches; bigger
    /// balls keep the dyadic chain.
    pub refine_limit: usize,
    /// Improvement passes of the local search.
    pub refine_passes: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { max_depth: None, refine_limit: 32, refine_passes: 4 }
    }
}

/// Lowest-index member of each zero-distance class.
#[derive(Debug, Clone)]
pub struct Classes {
    rep: Vec<usize>,
}

impl Classes {
    pub fn new(space: &FiniteMetricSpace) -> Self {
        let n = space.len();
        let mut rep: Vec<usize> = (0..n).collect();
        for i in 0..n {
            if rep[i] != i {
                continue;
            }
            for j in i + 1..n {
                if rep[j] == j && space.d(i, j) == 0.0 {
                    rep[j] = i;
                }
            }
        }
        Self { rep }
    }

    pub fn rep(&self, t: usize) -> usize {
        self.rep[t]
    }
}

/// Nested levels `T₀ = {t₀} ⊆ T₁ ⊆ … ⊆ T_M` inside the closed ball
/// `S(t₀, δ)`, with the nearest-point projections of every ball point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainingSequence {
    pub ball_center: usize,
    pub delta: f64,
    /// Ball points in index order.
    pub ball: Vec<usize>,
    /// Levels in index order; `levels[0] == [ball_center]`.
    pub levels: Vec<Vec<usize>>,
    /// `projections[m][k]` is `π_m(ball[k])`.
    pub projections: Vec<Vec<usize>>,
}

impl ChainingSequence {
    /// Validates the nesting and coverage invariants and computes the
    /// projections (ties to the lowest index).
    pub fn from_levels(
        space: &FiniteMetricSpace,
        ball_center: usize,
        delta: f64,
        levels: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let classes = Classes::new(space);
        Self::checked(space, &classes, ball_center, delta, levels)
    }

    fn checked(
        space: &FiniteMetricSpace,
        classes: &Classes,
        ball_center: usize,
        delta: f64,
        mut levels: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if ball_center >= space.len() {
            return Err(invalid(format!("ball center {ball_center} outside the space")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(domain(format!("delta must lie in (0, 1], got {delta}")));
        }
        let ball = space.ball(ball_center, delta);
        for l in &mut levels {
            l.sort_unstable();
            l.dedup();
        }
        if levels.first().map(Vec::as_slice) != Some(&[ball_center][..]) {
            return Err(invalid("level 0 must be exactly the ball center"));
        }
        for (m, w) in levels.windows(2).enumerate() {
            if !w[0].iter().all(|t| w[1].binary_search(t).is_ok()) {
                return Err(invalid(format!("level {m} is not contained in level {}", m + 1)));
            }
        }
        let last = levels.last().unwrap();
        if let Some(t) = last.iter().find(|&&t| ball.binary_search(&t).is_err()) {
            return Err(invalid(format!("point {t} lies outside the ball")));
        }
        let mut in_last = vec![false; space.len()];
        for &t in last {
            in_last[classes.rep(t)] = true;
        }
        if let Some(t) = ball.iter().find(|&&t| !in_last[classes.rep(t)]) {
            return Err(invalid(format!("final level misses the class of point {t}")));
        }
        let projections = project(space, classes, &ball, &levels);
        Ok(Self { ball_center, delta, ball, levels, projections })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// `max_t d(t, π_m(t))` per level.
    pub fn projection_radii(&self, space: &FiniteMetricSpace) -> Vec<f64> {
        self.projections
            .iter()
            .map(|p| self.ball.iter().zip(p).map(|(&t, &s)| space.d(t, s)).fold(0.0, f64::max))
            .collect()
    }

    /// JSON `{ball_center, delta, levels, gamma: {rho, M}}` with labels.
    pub fn to_json(&self, space: &FiniteMetricSpace, gamma: &GammaWeights) -> Result<String> {
        let labels = space.labels();
        let doc = ChainDoc {
            ball_center: labels[self.ball_center].clone(),
            delta: self.delta,
            levels: self.levels.iter().map(|l| l.iter().map(|&t| labels[t].clone()).collect()).collect(),
            gamma: gamma.with_depth(self.depth()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, space: &FiniteMetricSpace) -> Result<(Self, GammaWeights)> {
        let doc: ChainDoc = serde_json::from_str(text)?;
        let find = |l: &str| space.index_of(l).ok_or_else(|| invalid(format!("unknown label {l:?}")));
        let center = find(&doc.ball_center)?;
        let levels = doc
            .levels
            .iter()
            .map(|l| l.iter().map(|s| find(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let chain = Self::from_levels(space, center, doc.delta, levels)?;
        default_gamma(doc.gamma.m, doc.gamma.rho)?;
        Ok((chain, doc.gamma))
    }
}

#[derive(Serialize, Deserialize)]
struct ChainDoc {
    ball_center: String,
    delta: f64,
    levels: Vec<Vec<String>>,
    gamma: GammaWeights,
}

fn project(space: &FiniteMetricSpace, classes: &Classes, ball: &[usize], levels: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut member = vec![false; space.len()];
    levels
        .iter()
        .map(|level| {
            for &s in level {
                member[s] = true;
            }
            let p = ball
                .iter()
                .map(|&t| {
                    let r = classes.rep(t);
                    if member[r] {
                        return r;
                    }
                    let mut best = level[0];
                    for &s in &level[1..] {
                        if space.d(t, s) < space.d(t, best) {
                            best = s;
                        }
                    }
                    best
                })
                .collect();
            for &s in level {
                member[s] = false;
            }
            p
        })
        .collect()
}

/// Builds a chain on `S(t₀, δ)` with the default options and, for
/// [`Strategy::GreedyRefine`], the weights `ρ = 0.75`.
pub fn build_chain(space: &FiniteMetricSpace, t0: usize, delta: f64, strategy: Strategy) -> Result<ChainingSequence> {
    let gamma = default_gamma(0, 0.75)?;
    build_chain_with(space, t0, delta, strategy, &gamma, ChainOptions::default())
}

pub fn build_chain_with(
    space: &FiniteMetricSpace,
    t0: usize,
    delta: f64,
    strategy: Strategy,
    gamma: &GammaWeights,
    opts: ChainOptions,
) -> Result<ChainingSequence> {
    if t0 >= space.len() {
        return Err(invalid(format!("ball center {t0} outside the space")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    let classes = Classes::new(space);
    let dyadic = dyadic_chain(space, &classes, t0, delta, opts.max_depth);
    Ok(match strategy {
        Strategy::DyadicNets => dyadic,
        Strategy::GreedyRefine => refine(space, &classes, dyadic, gamma, opts),
    })
}

/// Depth of the dyadic nets: the first `m` with `δ 2^{−m}` below the
/// smallest positive distance of the ball.
fn dyadic_depth(delta: f64, min_positive: Option<f64>) -> usize {
    match min_positive {
        None => 0,
        Some(mp) => {
            let mut m = 1;
            while delta * 0.5f64.powi(m as i32) >= mp {
                m += 1;
            }
            m
        }
    }
}

fn dyadic_chain(
    space: &FiniteMetricSpace,
    classes: &Classes,
    t0: usize,
    delta: f64,
    max_depth: Option<usize>,
) -> ChainingSequence {
    let ball = space.ball(t0, delta);
    let mut depth = dyadic_depth(delta, space.min_positive_distance(&ball));
    if let Some(cap) = max_depth {
        depth = depth.min(cap);
    }
    let mut levels = vec![vec![t0]];
    for m in 1..depth {
        let mut next = levels[m - 1].clone();
        next.extend(greedy_extend(space, &ball, delta * 0.5f64.powi(m as i32), &next));
        next.sort_unstable();
        levels.push(next);
    }
    if depth > 0 {
        let mut last = levels[depth - 1].clone();
        last.extend(ball.iter().map(|&t| classes.rep(t)));
        last.sort_unstable();
        last.dedup();
        levels.push(last);
    }
    let projections = project(space, classes, &ball, &levels);
    ChainingSequence { ball_center: t0, delta, ball, levels, projections }
}

/// Entry level of every ball point (`usize::MAX` for absent points).
fn entry_levels(chain: &ChainingSequence) -> Vec<usize> {
    chain
        .ball
        .iter()
        .map(|t| chain.levels.iter().position(|l| l.binary_search(t).is_ok()).unwrap_or(usize::MAX))
        .collect()
}

fn levels_from_entries(ball: &[usize], entries: &[usize], depth: usize) -> Vec<Vec<usize>> {
    (0..=depth).map(|m| ball.iter().zip(entries).filter(|(_, &e)| e <= m).map(|(&t, _)| t).collect()).collect()
}

/// Local search over entry levels at fixed depth, accepting strict
/// decreases of L.
fn refine(
    space: &FiniteMetricSpace,
    classes: &Classes,
    chain: ChainingSequence,
    gamma: &GammaWeights,
    opts: ChainOptions,
) -> ChainingSequence {
    let depth = chain.depth();
    if depth <= 1 || chain.ball.len() > opts.refine_limit {
        return chain;
    }
    let ball = chain.ball.clone();
    let center_pos = ball.binary_search(&chain.ball_center).unwrap();
    let mut entries = entry_levels(&chain);
    let covers = |entries: &[usize]| {
        let mut seen = vec![false; space.len()];
        for (k, &e) in entries.iter().enumerate() {
            if e <= depth {
                seen[classes.rep(ball[k])] = true;
            }
        }
        ball.iter().all(|&t| seen[classes.rep(t)])
    };
    let score = |entries: &[usize]| {
        let levels = levels_from_entries(&ball, entries, depth);
        let projections = project(space, classes, &ball, &levels);
        l_value(space, &ball, &projections, chain.ball_center, gamma)
    };
    let mut best = score(&entries);
    for _ in 0..opts.refine_passes {
        let mut improved = false;
        for k in 0..ball.len() {
            if k == center_pos {
                continue;
            }
            let current = entries[k];
            for option in (1..=depth).chain([usize::MAX]) {
                if option == entries[k] {
                    continue;
                }
                let before = entries[k];
                entries[k] = option;
                if covers(&entries) {
                    let s = score(&entries);
                    if s < best {
                        best = s;
                        continue;
                    }
                }
                entries[k] = before;
            }
            improved |= entries[k] != current;
        }
        if !improved {
            break;
        }
    }
    let levels = levels_from_entries(&ball, &entries, depth);
    let projections = project(space, classes, &ball, &levels);
    ChainingSequence { ball_center: chain.ball_center, delta: chain.delta, ball, levels, projections }
}

fn chain_terms(
    space: &FiniteMetricSpace,
    projections: &[Vec<usize>],
    k: usize,
    t0: usize,
    gamma: &GammaWeights,
) -> f64 {
    let mut sum = 0.0;
    let mut prev = t0;
    for (m, p) in projections.iter().enumerate().skip(1) {
        sum += space.d(p[k], prev) / gamma.gamma(m);
        prev = p[k];
    }
    sum
}

fn l_value(
    space: &FiniteMetricSpace,
    ball: &[usize],
    projections: &[Vec<usize>],
    t0: usize,
    gamma: &GammaWeights,
) -> f64 {
    (0..ball.len()).map(|k| chain_terms(space, projections, k, t0, gamma)).fold(0.0, f64::max)
}

/// `L = max_t Σ_{m=1}^{M} d(π_m(t), π_{m−1}(t)) / γ_m` with `π₀(t) = t₀`.
pub fn chain_l(space: &FiniteMetricSpace, chain: &ChainingSequence, gamma: &GammaWeights) -> f64 {
    l_value(space, &chain.ball, &chain.projections, chain.ball_center, gamma)
}

/// Per-level terms `d(π_m(t), π_{m−1}(t))/γ_m` of the ball point attaining L.
pub fn chain_l_decomposition(
    space: &FiniteMetricSpace,
    chain: &ChainingSequence,
    gamma: &GammaWeights,
) -> (usize, Vec<f64>) {
    let mut best = (chain.ball_center, 0.0);
    for k in 0..chain.ball.len() {
        let v = chain_terms(space, &chain.projections, k, chain.ball_center, gamma);
        if v > best.1 {
            best = (chain.ball[k], v);
        }
    }
    let k = chain.ball.binary_search(&best.0).unwrap();
    let terms = (1..chain.levels.len())
        .map(|m| space.d(chain.projections[m][k], chain.projections[m - 1][k]) / gamma.gamma(m))
        .collect();
    (best.0, terms)
}

/// Chain, weights and origin of a profile value.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    /// Grid δ at which the value was attained (smaller than or equal to
    /// the δ it is reported for after regularization).
    pub source_delta: f64,
    pub strategy: Strategy,
    pub gamma: GammaWeights,
    /// Chain of the worst ball center.
    pub chain: ChainingSequence,
}

/// Upper approximation K̂(δ) of `inf_R inf_γ sup_{t₀} L`.
#[derive(Debug, Clone, PartialEq)]
pub struct KProfile {
    pub delta_grid: Vec<f64>,
    /// Running maximum of `raw_values`.
    pub k_values: Vec<f64>,
    pub raw_values: Vec<f64>,
    /// One per grid point; empty for profiles built from plain values.
    pub witnesses: Vec<Witness>,
}

impl KProfile {
    /// Profile from values alone; the running maximum is applied.
    pub fn from_values(delta_grid: Vec<f64>, raw_values: Vec<f64>) -> Result<Self> {
        check_delta_grid(&delta_grid)?;
        if raw_values.len() != delta_grid.len() || raw_values.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("profile values must be nonnegative, one per grid point"));
        }
        let k_values = running_max(&raw_values);
        Ok(Self { delta_grid, k_values, raw_values, witnesses: Vec::new() })
    }

    /// `K₀ = sup_δ K̂(δ)`.
    pub fn k0(&self) -> f64 {
        self.k_values.last().copied().unwrap_or(0.0)
    }

    /// Every value multiplied by `c`, without witnesses.
    pub fn inflated(&self, c: f64) -> Self {
        let raw: Vec<f64> = self.raw_values.iter().map(|v| v * c).collect();
        Self {
            delta_grid: self.delta_grid.clone(),
            k_values: running_max(&raw),
            raw_values: raw,
            witnesses: Vec::new(),
        }
    }
}

fn running_max(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0f64, |m, &x| {
            *m = m.max(x);
            Some(*m)
        })
        .collect()
}

fn check_delta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("delta grid is empty"));
    }
    if grid.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(domain("delta grid must lie in (0, 1]"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("delta grid must be strictly increasing"));
    }
    Ok(())
}

/// `n` geometrically spaced points from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let mut g: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    g[n - 1] = hi;
    g
}

/// The weights `ρ ∈ {0.70, 0.75, 0.80, 0.85, 0.90}`.
pub const DEFAULT_RHOS: [f64; 5] = [0.70, 0.75, 0.80, 0.85, 0.90];

/// For each δ: `min` over (strategy, ρ) of `max` over all centers of L,
/// followed by a running maximum in δ.
pub fn k_profile(
    space: &FiniteMetricSpace,
    delta_grid: &[f64],
    strategies: &[Strategy],
    rhos: &[f64],
    opts: ChainOptions,
) -> Result<KProfile> {
    check_delta_grid(delta_grid)?;
    if strategies.is_empty() || rhos.is_empty() {
        return Err(invalid("k_profile needs at least one strategy and one rho"));
    }
    let gammas = rhos.iter().map(|&r| default_gamma(0, r)).collect::<Result<Vec<_>>>()?;
    let classes = Classes::new(space);
    let n = space.len();
    let combos = strategies.len() * gammas.len();

    let mut raw = Vec::with_capacity(delta_grid.len());
    let mut best_witness = Vec::with_capacity(delta_grid.len());
    for &delta in delta_grid {
        // per center: the L value of every (strategy, γ) pair and its chain
        let per_center: Vec<Vec<(f64, ChainingSequence)>> = (0..n)
            .into_par_iter()
            .map(|t0| {
                let dyadic = dyadic_chain(space, &classes, t0, delta, opts.max_depth);
                let mut out = Vec::with_capacity(combos);
                for &s in strategies {
                    for g in &gammas {
                        let chain = match s {
                            Strategy::DyadicNets => dyadic.clone(),
                            Strategy::GreedyRefine => refine(space, &classes, dyadic.clone(), g, opts),
                        };
                        let g = g.with_depth(chain.depth());
                        out.push((chain_l(space, &chain, &g), chain));
                    }
                }
                out
            })
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for c in 0..combos {
            let (mut worst, mut arg) = (f64::NEG_INFINITY, 0);
            for (t0, row) in per_center.iter().enumerate() {
                if row[c].0 > worst {
                    worst = row[c].0;
                    arg = t0;
                }
            }
            if best.is_none_or(|b| worst < b.0) {
                best = Some((worst, c, arg));
            }
        }
        let (value, c, t0) = best.unwrap();
        let chain = per_center[t0][c].1.clone();
        let gamma = gammas[c % gammas.len()].with_depth(chain.depth());
        raw.push(value);
        best_witness.push(Witness { source_delta: delta, strategy: strategies[c / gammas.len()], gamma, chain });
    }

    let k_values = running_max(&raw);
    let mut witnesses: Vec<Witness> = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        if i > 0 && k_values[i] > raw[i] {
            let prev = witnesses[i - 1].clone();
            witnesses.push(prev);
        } else {
            witnesses.push(best_witness[i].clone());
        }
    }
    Ok(KProfile { delta_grid: delta_grid.to_vec(), k_values, raw_values: raw, witnesses })
}

/// Result of the generalized inverse `K⁻¹(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KInverse {
    pub delta: f64,
    /// No grid point reached `h`; `delta` is the domain edge 1.
    pub capped: bool,
}

/// Smallest grid δ with `K̂(δ) ≥ h`, or 1 (capped) if none.
pub fn k_inverse(profile: &KProfile, h: f64) -> Result<KInverse> {
    if !(h > 0.0) {
        return Err(domain(format!("K inverse needs h > 0, got {h}")));
    }
    let i = profile.k_values.partition_point(|&k| k < h);
    Ok(match profile.delta_grid.get(i) {
        Some(&delta) => KInverse { delta, capped: false },
        None => KInverse { delta: 1.0, capped: true },
    })
}

/// `Δ_φ(u) = K⁻¹(0.5 C / (u (φ*)′(u)))`.
pub fn delta_phi(profile: &KProfile, conj: &ConjugateTable, c: f64, u: f64) -> Result<KInverse> {
    if !(c > 0.0) {
        return Err(domain(format!("C must be positive, got {c}")));
    }
    let slope = if u > 0.0 { conj.slope(u)? } else { 0.0 };
    if !(u * slope > 0.0) {
        return Err(domain(format!("u = {u} lies below the slope onset of the conjugate")));
    }
    k_inverse(profile, 0.5 * c / (u * slope))
}

/// `X(u) = Σ_{n=1}^{M} |T_n||T_{n−1}| exp(−φ*(u/γ_n))`.
pub fn chain_sum_x(chain: &ChainingSequence, gamma: &GammaWeights, conj: &ConjugateTable, u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(domain(format!("u must be nonnegative, got {u}")));
    }
    let mut x = 0.0;
    for n in 1..chain.levels.len() {
        let pairs = (chain.levels[n].len() * chain.levels[n - 1].len()) as f64;
        x += pairs * (-conj.value(u / gamma.gamma(n))?).exp();
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityRow {
    pub u: f64,
    pub x: f64,
    pub target: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub rows: Vec<AdmissibilityRow>,
    /// Smallest grid u from which `X(u) ≤ exp(−φ*(u/2))` holds at every
    /// larger grid point.
    pub threshold: Option<f64>,
}

/// Checks `X(u) ≤ exp(−φ*(u/2))` on an increasing grid.
pub fn admissibility_check(
    chain: &ChainingSequence,
    gamma: &GammaWeights,
    conj: &ConjugateTable,
    u_grid: &[f64],
) -> Result<AdmissibilityReport> {
    if u_grid.is_empty() {
        return Err(invalid("u grid is empty"));
    }
    let rows = u_grid
        .iter()
        .map(|&u| {
            let x = chain_sum_x(chain, gamma, conj, u)?;
            let target = (-conj.value(0.5 * u)?).exp();
            Ok(AdmissibilityRow { u, x, target, holds: x <= target })
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = rows.iter().rev().take_while(|r| r.holds).count();
    let threshold = (tail > 0).then(|| rows[rows.len() - tail].u);
    Ok(AdmissibilityReport { rows, threshold })
}
