//! Finite semi-metric spaces, natural distances estimated from sample
//! paths, ε-nets, covering numbers and the generalized entropy integral.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::paths::SamplePaths;
use crate::phi::{bphi_norm_mgf, LambdaGrid, MgfOptions, PhiFunction};

/// Largest subset accepted by [`CoverMode::Exact`] unless overridden.
pub const EXACT_LIMIT: usize = 20;

/// Relative triangle defect tolerated by [`FiniteMetricSpace::repair_triangle`].
pub const REPAIR_TOLERANCE: f64 = 1e-3;

/// An index set with a symmetric semi-distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: Vec<f64>,
}

impl FiniteMetricSpace {
    /// Builds a space from a dense matrix. Asymmetric input is rejected.
    pub fn new(labels: Vec<String>, dist: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if dist.len() != n || dist.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("distance matrix must be {n}x{n}")));
        }
        Self::from_flat(labels, dist.into_iter().flatten().collect())
    }

    /// Row-major `n × n` matrix.
    pub fn from_flat(labels: Vec<String>, dist: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(invalid("metric space needs at least one point"));
        }
        if dist.len() != n * n {
            return Err(invalid(format!("expected {} distances, got {}", n * n, dist.len())));
        }
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(invalid(format!("d({0},{0}) must be 0", labels[i])));
            }
            for j in 0..n {
                let v = dist[i * n + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(invalid(format!(
                        "d({},{}) = {v} is not a finite nonnegative number",
                        labels[i], labels[j]
                    )));
                }
                if v != dist[j * n + i] {
                    return Err(invalid(format!("distance matrix is not symmetric at ({},{})", labels[i], labels[j])));
                }
            }
        }
        Ok(Self { labels, dist })
    }

    /// Evaluates `f(i, j)` for `i < j` and mirrors it.
    pub fn from_fn(labels: Vec<String>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = labels.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                dist[i * n + j] = v;
                dist[j * n + i] = v;
            }
        }
        Self::from_flat(labels, dist)
    }

    /// Natural distance of a centered Gaussian field with covariance `cov`
    /// under `φ(λ) = var·λ²/2`: `√(D(t,t) − 2D(t,s) + D(s,s)) / √var`.
    pub fn gaussian(cov: &DMatrix<f64>, var: f64) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(invalid("covariance must be square"));
        }
        if !(var > 0.0) {
            return Err(domain(format!("variance parameter must be positive, got {var}")));
        }
        let labels = numbered(cov.nrows(), 0);
        Self::from_fn(labels, |i, j| {
            let v = cov[(i, i)] - 2.0 * cov[(i, j)] + cov[(j, j)];
            (v.max(0.0) / var).sqrt()
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.labels.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.labels.len();
        &self.dist[i * n..(i + 1) * n]
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest positive distance inside `subset`, or `None` if all vanish.
    pub fn min_positive_distance(&self, subset: &[usize]) -> Option<f64> {
        let mut m = f64::INFINITY;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                let v = self.d(i, j);
                if v > 0.0 && v < m {
                    m = v;
                }
            }
        }
        m.is_finite().then_some(m)
    }

    /// Closed ball `{t : d(t, t0) ≤ δ}` in index order.
    pub fn ball(&self, t0: usize, delta: f64) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.d(t0, t) <= delta).collect()
    }

    /// Every distance multiplied by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { labels: self.labels.clone(), dist: self.dist.iter().map(|v| v * c).collect() }
    }

    /// Restriction to `idx`, in the given order.
    pub fn subspace(&self, idx: &[usize]) -> Self {
        let labels = idx.iter().map(|&i| self.labels[i].clone()).collect();
        let mut dist = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            dist.extend(idx.iter().map(|&j| self.d(i, j)));
        }
        Self { labels, dist }
    }

    /// Largest relative defect `(d(t,s) − d(t,v) − d(v,s)) / d(t,s)` over
    /// all triples; zero for a semi-metric.
    pub fn triangle_defect(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for t in 0..n {
            for s in 0..n {
                let ts = self.d(t, s);
                if ts == 0.0 {
                    continue;
                }
                for v in 0..n {
                    let excess = ts - self.d(t, v) - self.d(v, s);
                    if excess > 0.0 {
                        worst = worst.max(excess / ts);
                    }
                }
            }
        }
        worst
    }

    /// Raises distances to the two-hop lower bounds
    /// `d(t,v) ≥ d(t,s) − d(s,v)` until the triangle inequality holds.
    ///
    /// Returns the largest relative defect that was repaired; defects above
    /// `tolerance` are rejected without modifying the space.
    pub fn repair_triangle(&mut self, tolerance: f64) -> Result<f64> {
        let defect = self.triangle_defect();
        if defect > tolerance {
            return Err(Error::TriangleViolation(format!(
                "relative defect {defect:.3e} exceeds tolerance {tolerance:.1e}"
            )));
        }
        if defect == 0.0 {
            return Ok(0.0);
        }
        let n = self.len();
        for _ in 0..1000 {
            let mut changed = false;
            for t in 0..n {
                for v in t + 1..n {
                    let mut best = self.d(t, v);
                    for s in 0..n {
                        best = best.max(self.d(t, s) - self.d(s, v)).max(self.d(v, s) - self.d(s, t));
                    }
                    if best > self.d(t, v) {
                        self.dist[t * n + v] = best;
                        self.dist[v * n + t] = best;
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok(defect);
            }
        }
        Err(Error::TriangleViolation("repair did not reach a fixed point".into()))
    }

    /// CSV with a header row of labels followed by a full or
    /// lower-triangular matrix (row `i` holding `i + 1` entries).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let n = labels.len();
        let rows: Vec<Vec<f64>> = rdr
            .records()
            .enumerate()
            .map(|(i, rec)| {
                rec?.iter()
                    .map(|f| f.parse::<f64>().map_err(|e| invalid(format!("row {}: {e}: {f:?}", i + 2))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let full = rows.first().is_some_and(|r| r.len() == n);
        let mut dist = vec![0.0; n * n];
        for (i, vals) in rows.iter().enumerate() {
            let want = if full { n } else { i + 1 };
            if i >= n || vals.len() != want {
                return Err(invalid(format!(
                    "row {} has {} entries; expected {want} ({} matrix of {n} labels)",
                    i + 2,
                    vals.len(),
                    if full { "full" } else { "lower-triangular" }
                )));
            }
            for (j, &v) in vals.iter().enumerate() {
                dist[i * n + j] = v;
                if !full {
                    dist[j * n + i] = v;
                }
            }
        }
        let rows = rows.len();
        if rows != n {
            return Err(invalid(format!("expected {n} matrix rows, got {rows}")));
        }
        Self::from_flat(labels, dist)
    }

    /// Full matrix with a header row.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.labels)?;
        for i in 0..self.len() {
            w.write_record(self.row(i).iter().map(|v| format!("{v:?}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }

    /// JSON envelope `{labels, dist}`.
    pub fn to_json(&self) -> Result<String> {
        let doc =
            SpaceDoc { labels: self.labels.clone(), dist: (0..self.len()).map(|i| self.row(i).to_vec()).collect() };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDoc = serde_json::from_str(text)?;
        Self::new(doc.labels, doc.dist)
    }

    /// Loads `.json` files as the JSON envelope and anything else as CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_csv_str(&text)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceDoc {
    labels: Vec<String>,
    dist: Vec<Vec<f64>>,
}

/// Labels `first, first+1, …` as strings.
pub fn numbered(n: usize, first: usize) -> Vec<String> {
    (first..first + n).map(|i| i.to_string()).collect()
}

/// `d(t,s) = ‖ξ(t) − ξ(s)‖_B(φ)` estimated from sample paths, followed by
/// triangle repair.
pub fn natural_distance(paths: &SamplePaths, phi: &PhiFunction) -> Result<FiniteMetricSpace> {
    natural_distance_with(paths, phi, &LambdaGrid::default_standardized(), MgfOptions::default())
}

pub fn natural_distance_with(
    paths: &SamplePaths,
    phi: &PhiFunction,
    grid: &LambdaGrid,
    opts: MgfOptions,
) -> Result<FiniteMetricSpace> {
    let n = paths.indices();
    if n < 2 {
        return Err(invalid("natural distance needs at least two indices"));
    }
    if paths.replicates() == 0 {
        return Err(invalid("natural distance needs at least one replicate"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| bphi_norm_mgf(&paths.difference(i, j), phi, grid, opts).map(|e| e.value))
        .collect::<Result<_>>()?;
    let mut dist = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        dist[i * n + j] = v;
        dist[j * n + i] = v;
    }
    let mut space = FiniteMetricSpace::from_flat(numbered(n, 0), dist)?;
    let repaired = space.repair_triangle(REPAIR_TOLERANCE)?;
    if repaired > 0.0 {
        log::debug!("natural distance: repaired relative triangle defect {repaired:.3e}");
    }
    Ok(space)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverMode {
    Exact,
    Greedy,
}

/// Closed ε-balls around `centers` covering the listed points.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonNet {
    pub epsilon: f64,
    pub centers: Vec<usize>,
    /// `(point, center)` pairs, each point sent to its nearest center.
    pub assignment: Vec<(usize, usize)>,
}

impl EpsilonNet {
    fn assign(space: &FiniteMetricSpace, subset: &[usize], epsilon: f64, centers: Vec<usize>) -> Self {
        let assignment = subset
            .iter()
            .map(|&p| {
                let mut best = centers[0];
                for &c in &centers[1..] {
                    let (dc, db) = (space.d(p, c), space.d(p, best));
                    if dc < db || (dc == db && c < best) {
                        best = c;
                    }
                }
                (p, best)
            })
            .collect();
        Self { epsilon, centers, assignment }
    }

    /// Every assigned point lies in the closed ball of its center.
    pub fn is_valid(&self, space: &FiniteMetricSpace) -> bool {
        self.assignment.iter().all(|&(p, c)| space.d(p, c) <= self.epsilon && self.centers.contains(&c))
    }
}

/// Minimal (Exact) or greedy number of closed ε-balls centred in `subset`
/// that cover `subset`.
pub fn covering_number(
    space: &FiniteMetricSpace,
    subset: &[usize],
    epsilon: f64,
    mode: CoverMode,
) -> Result<(usize, EpsilonNet)> {
    covering_number_with_limit(space, subset, epsilon, mode, EXACT_LIMIT)
}

pub fn covering_number_with_limit(
    space: &FiniteMetricSpace,
    subset: &[usize],
    epsilon: f64,
    mode: CoverMode,
    exact_limit: usize,
) -> Result<(usize, EpsilonNet)> {
    if subset.is_empty() {
        return Err(invalid("covering needs a nonempty subset"));
    }
    if !(epsilon > 0.0) {
        return Err(domain(format!("covering radius must be positive, got {epsilon}")));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= space.len()) {
        return Err(invalid(format!("index {bad} outside the space")));
    }
    let centers = match mode {
        CoverMode::Greedy => greedy_cover(space, subset, epsilon),
        CoverMode::Exact => {
            let limit = exact_limit.min(64);
            if subset.len() > limit {
                return Err(Error::SizeLimit { size: subset.len(), limit });
            }
            exact_cover(space, subset, epsilon)
        }
    };
    Ok((centers.len(), EpsilonNet::assign(space, subset, epsilon, centers)))
}

/// Lazy greedy set cover; ties go to the lowest index.
fn greedy_cover(space: &FiniteMetricSpace, subset: &[usize], epsilon: f64) -> Vec<usize> {
    greedy_extend(space, subset, epsilon, &[])
}

/// Greedy centers added to `initial` until every point of `subset` lies
/// within `epsilon` of a center. Returns only the added centers.
pub(crate) fn greedy_extend(
    space: &FiniteMetricSpace,
    subset: &[usize],
    epsilon: f64,
    initial: &[usize],
) -> Vec<usize> {
    let mut covered: Vec<bool> = subset.iter().map(|&p| initial.iter().any(|&c| space.d(c, p) <= epsilon)).collect();
    let mut left = covered.iter().filter(|c| !**c).count();
    if left == 0 {
        return Vec::new();
    }
    let gain = |c: usize, covered: &[bool]| {
        subset.iter().zip(covered).filter(|(&p, &done)| !done && space.d(c, p) <= epsilon).count()
    };
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> =
        subset.iter().map(|&c| (gain(c, &covered), Reverse(c))).collect();
    let mut centers = Vec::new();
    while left > 0 {
        let (_, Reverse(label)) = heap.pop().expect("uncovered points remain");
        let g = gain(label, &covered);
        if g == 0 {
            continue;
        }
        let key = (g, Reverse(label));
        if heap.peek().is_some_and(|top| *top > key) {
            heap.push(key);
            continue;
        }
        for (k, &p) in subset.iter().enumerate() {
            if !covered[k] && space.d(label, p) <= epsilon {
                covered[k] = true;
                left -= 1;
            }
        }
        centers.push(label);
    }
    centers
}

/// Branch and bound over bitmasks; branches on the uncovered point with the
/// fewest candidate centers.
fn exact_cover(space: &FiniteMetricSpace, subset: &[usize], epsilon: f64) -> Vec<usize> {
    let m = subset.len();
    let masks: Vec<u64> = subset
        .iter()
        .map(|&c| {
            subset
                .iter()
                .enumerate()
                .filter(|(_, &p)| space.d(c, p) <= epsilon)
                .fold(0u64, |acc, (k, _)| acc | (1 << k))
        })
        .collect();
    let full = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let covers_of: Vec<Vec<usize>> = (0..m).map(|p| (0..m).filter(|&c| masks[c] >> p & 1 == 1).collect()).collect();

    struct Search<'a> {
        masks: &'a [u64],
        covers_of: &'a [Vec<usize>],
        best: Vec<usize>,
        chosen: Vec<usize>,
    }
    impl Search<'_> {
        fn run(&mut self, uncovered: u64) {
            if uncovered == 0 {
                if self.chosen.len() < self.best.len() {
                    self.best = self.chosen.clone();
                }
                return;
            }
            let most = self.masks.iter().map(|m| (m & uncovered).count_ones()).max().unwrap_or(0);
            let lower = uncovered.count_ones().div_ceil(most) as usize;
            if self.chosen.len() + lower >= self.best.len() {
                return;
            }
            let mut bits = uncovered;
            let mut pivot = bits.trailing_zeros() as usize;
            while bits != 0 {
                let p = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                if self.covers_of[p].len() < self.covers_of[pivot].len() {
                    pivot = p;
                }
            }
            let mut options = self.covers_of[pivot].clone();
            options.sort_by_key(|&c| (Reverse((self.masks[c] & uncovered).count_ones()), c));
            for c in options {
                self.chosen.push(c);
                self.run(uncovered & !self.masks[c]);
                self.chosen.pop();
            }
        }
    }

    let upper: Vec<usize> = {
        let labels = greedy_cover(space, subset, epsilon);
        labels.iter().map(|l| subset.iter().position(|p| p == l).unwrap()).collect()
    };
    let mut s = Search { masks: &masks, covers_of: &covers_of, best: upper, chosen: Vec::new() };
    s.run(full);
    let mut centers: Vec<usize> = s.best.iter().map(|&k| subset[k]).collect();
    centers.sort_unstable();
    centers
}

/// `H = log N`, exact within [`EXACT_LIMIT`] points and greedy beyond.
pub fn entropy(space: &FiniteMetricSpace, subset: &[usize], epsilon: f64) -> Result<f64> {
    let mode = if subset.len() <= EXACT_LIMIT { CoverMode::Exact } else { CoverMode::Greedy };
    let (n, _) = covering_number(space, subset, epsilon, mode)?;
    Ok((n as f64).ln())
}

/// Greedy covering counts of the whole space, memoised by radius.
#[derive(Debug)]
pub struct CoveringCache<'a> {
    space: &'a FiniteMetricSpace,
    all: Vec<usize>,
    memo: Mutex<HashMap<u64, usize>>,
}

impl<'a> CoveringCache<'a> {
    pub fn new(space: &'a FiniteMetricSpace) -> Self {
        Self { space, all: space.all(), memo: Mutex::new(HashMap::new()) }
    }

    pub fn space(&self) -> &FiniteMetricSpace {
        self.space
    }

    pub fn count(&self, epsilon: f64) -> Result<usize> {
        if let Some(&n) = self.memo.lock().unwrap().get(&epsilon.to_bits()) {
            return Ok(n);
        }
        let (n, _) = covering_number(self.space, &self.all, epsilon, CoverMode::Greedy)?;
        self.memo.lock().unwrap().insert(epsilon.to_bits(), n);
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralValue {
    Finite(f64),
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyIntegral {
    pub value: IntegralValue,
    /// Sum over the grid, reported even when flagged divergent.
    pub partial_sum: f64,
    /// Contribution of each dyadic octave `(2^{-k-1}, 2^{-k}]`, coarse to fine.
    pub octaves: Vec<f64>,
}

/// Ratio of successive octave contributions above which the integrand is
/// treated as non-integrable at 0.
const OCTAVE_DECAY: f64 = 0.9;

/// `∫ (φ*)⁻¹(H(T,d,ε)) dε` over a decreasing grid in `(0, 1]`.
///
/// The integrand is nonincreasing in ε, so each cell takes its value at the
/// finer end (an upper Riemann sum); the cell `(0, ε_min]` is added with the
/// integrand frozen at `ε_min`. The result is flagged divergent when the two
/// finest complete dyadic octaves of the grid contribute without decay.
pub fn entropy_integral(space: &FiniteMetricSpace, phi: &PhiFunction, eps_grid: &[f64]) -> Result<EntropyIntegral> {
    if eps_grid.is_empty() {
        return Err(invalid("epsilon grid is empty"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(domain("epsilon grid must lie in (0, 1]"));
    }
    if eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("epsilon grid must be strictly decreasing"));
    }
    let cache = CoveringCache::new(space);
    let integrand =
        eps_grid.iter().map(|&e| phi.conjugate_inverse((cache.count(e)? as f64).ln())).collect::<Result<Vec<f64>>>()?;
    let (partial_sum, octaves) = riemann_octaves(eps_grid, &integrand);
    let value = classify(partial_sum, &octaves);
    Ok(EntropyIntegral { value, partial_sum, octaves })
}

/// Octave `k` holds cells whose finer end lies in `[2^{-k-1}, 2^{-k})`.
fn octave(lo: f64) -> usize {
    ((1.0 / lo).log2().ceil() as usize).saturating_sub(1)
}

/// Upper Riemann sum plus the contributions of the complete octaves
/// `[2^{-k-1}, 2^{-k}]` spanned by the grid.
fn riemann_octaves(grid: &[f64], f: &[f64]) -> (f64, Vec<f64>) {
    let last = grid.len() - 1;
    let mut total = grid[last] * f[last];
    let mut octaves = vec![0.0; octave(grid[last]) + 1];
    for i in 0..last {
        let cell = (grid[i] - grid[i + 1]) * f[i + 1];
        total += cell;
        octaves[octave(grid[i + 1])] += cell;
    }
    let complete = |k: usize| {
        let (lo, hi) = (0.5f64.powi(k as i32 + 1), 0.5f64.powi(k as i32));
        lo >= grid[last] && hi <= grid[0]
    };
    let octaves = (0..octaves.len()).filter(|&k| complete(k)).map(|k| octaves[k]).collect();
    (total, octaves)
}

fn classify(total: f64, octaves: &[f64]) -> IntegralValue {
    if let [.., prev, last] = octaves[..] {
        if last > 0.0 && last >= OCTAVE_DECAY * prev {
            return IntegralValue::Divergent;
        }
    }
    IntegralValue::Finite(total)
}
