//! Samplers for the example fields and Monte-Carlo tail estimation.
//!
//! Every replicate draws from its own ChaCha stream (`seed`, stream = replicate
//! index), so output never depends on how rayon splits the work.

mod martingale;
mod tail;

pub use martingale::{
    limsup_statistic, limsup_statistic_stream, limsup_target, normalized_sups, poly_martingale_trajectory,
    sample_poly_martingale, tail_window_start, LimsupSummary,
};
pub use tail::{
    clopper_pearson, empirical_tail, read_sup_file, write_sup_file, EmpiricalTail, TailRow, DEFAULT_CONFIDENCE,
};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::metric::{numbered, FiniteMetricSpace};
use crate::paths::SamplePaths;
use crate::phi::PhiFunction;
use statrs::function::erf::erf;

/// Eigenvalues above `-EIGEN_TOLERANCE` are clamped to zero.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Replicates handled by one rayon task.
const BLOCK: usize = 4096;

pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerKind {
    /// Centered Gaussian vector with the given covariance.
    GaussianCov(DMatrix<f64>),
    /// ξ(n) = ε(n)/√ln(n + e − 1), n = 1..=n_max, with P(|ε| > x) = exp(−x²/2).
    SubgaussianSeqA(usize),
    /// Trajectory n ↦ ξ_d(n), n = 1..=n_max.
    PolyMartingale { d: u32, n_max: usize },
    /// n^{-1/2} times the sum of `n` independent copies of `base`.
    NormalizedSum { base: Box<SamplerKind>, n: u64 },
    /// Independent Rademacher coordinates.
    Rademacher(usize),
    /// Independent unit-variance Laplace coordinates.
    Laplace(usize),
}

impl SamplerKind {
    pub fn indices(&self) -> usize {
        match self {
            SamplerKind::GaussianCov(c) => c.nrows(),
            SamplerKind::SubgaussianSeqA(n) => *n,
            SamplerKind::PolyMartingale { n_max, .. } => *n_max,
            SamplerKind::NormalizedSum { base, .. } => base.indices(),
            SamplerKind::Rademacher(k) | SamplerKind::Laplace(k) => *k,
        }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Gaussian { factor: Vec<f64>, k: usize },
    SeqA { scale: Vec<f64> },
    PolyMartingale { d: u32, n_max: usize },
    Sum { base: Box<Plan>, n: u64, k: usize },
    Rademacher,
    Laplace,
}

/// Row-major factor `L` with `L Lᵀ = cov`, from a symmetric eigendecomposition.
pub fn gaussian_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = cov.nrows();
    if cov.ncols() != k {
        return Err(invalid("covariance must be square"));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(invalid("covariance has non-finite entries"));
    }
    let asym = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
        .fold(0.0, f64::max);
    let scale = cov.amax().max(1.0);
    if asym > 1e-12 * scale {
        return Err(invalid(format!("covariance is not symmetric (defect {asym:e})")));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -EIGEN_TOLERANCE {
        return Err(Error::NotSpd(min));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

impl Plan {
    fn new(kind: &SamplerKind) -> Result<Self> {
        Ok(match kind {
            SamplerKind::GaussianCov(cov) => {
                let f = gaussian_factor(cov)?;
                let k = f.nrows();
                let factor = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| f[(i, j)]).collect();
                Plan::Gaussian { factor, k }
            }
            SamplerKind::SubgaussianSeqA(n) => {
                if *n == 0 {
                    return Err(invalid("n_max must be at least 1"));
                }
                Plan::SeqA { scale: (1..=*n).map(|i| 1.0 / example_a_c(i).sqrt()).collect() }
            }
            SamplerKind::PolyMartingale { d, n_max } => {
                if *d == 0 || *n_max == 0 {
                    return Err(invalid("degree and n_max must be positive"));
                }
                Plan::PolyMartingale { d: *d, n_max: *n_max }
            }
            SamplerKind::NormalizedSum { base, n } => {
                if *n == 0 {
                    return Err(invalid("sum length must be positive"));
                }
                Plan::Sum { base: Box::new(Plan::new(base)?), n: *n, k: base.indices() }
            }
            SamplerKind::Rademacher(_) => Plan::Rademacher,
            SamplerKind::Laplace(_) => Plan::Laplace,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Plan::Gaussian { factor, k } => {
                let z: Vec<f64> = (0..*k).map(|_| rng.sample(StandardNormal)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &factor[i * k..(i + 1) * k];
                    *o = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                }
            }
            Plan::SeqA { scale } => {
                for (o, s) in out.iter_mut().zip(scale) {
                    *o = rayleigh_signed(rng) * s;
                }
            }
            Plan::PolyMartingale { d, n_max } => {
                let mut signs = SignStream::default();
                let mut e = vec![0.0; *d as usize + 1];
                e[0] = 1.0;
                for o in out.iter_mut().take(*n_max) {
                    let eps = signs.next(rng);
                    for j in (1..e.len()).rev() {
                        e[j] += eps * e[j - 1];
                    }
                    *o = e[*d as usize];
                }
            }
            Plan::Sum { base, n, k } => {
                out.fill(0.0);
                let mut tmp = vec![0.0; *k];
                for _ in 0..*n {
                    base.draw(rng, &mut tmp);
                    for (o, v) in out.iter_mut().zip(&tmp) {
                        *o += v;
                    }
                }
                let s = 1.0 / (*n as f64).sqrt();
                out.iter_mut().for_each(|o| *o *= s);
            }
            Plan::Rademacher => {
                let mut signs = SignStream::default();
                out.iter_mut().for_each(|o| *o = signs.next(rng));
            }
            Plan::Laplace => {
                let b = std::f64::consts::FRAC_1_SQRT_2;
                for o in out.iter_mut() {
                    let e = -(1.0 - rng.random::<f64>()).ln();
                    *o = if rng.random::<bool>() { b * e } else { -b * e };
                }
            }
        }
    }
}

/// c_n = ln(n + e − 1).
pub fn example_a_c(n: usize) -> f64 {
    (n as f64 + std::f64::consts::E - 1.0).ln()
}

/// ε with P(|ε| > x) = exp(−x²/2) and a fair sign.
fn rayleigh_signed(rng: &mut ChaCha8Rng) -> f64 {
    let m = (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Rademacher signs, 64 per generator word.
#[derive(Debug, Default)]
pub(crate) struct SignStream {
    word: u64,
    left: u32,
}

impl SignStream {
    #[inline]
    pub(crate) fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if self.left == 0 {
            self.word = rng.next_u64();
            self.left = 64;
        }
        let bit = self.word & 1;
        self.word >>= 1;
        self.left -= 1;
        if bit == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Per-replicate suprema of ξ and |ξ|.
#[derive(Debug, Clone, PartialEq)]
pub struct Suprema {
    pub sup: Vec<f64>,
    pub sup_abs: Vec<f64>,
    /// Values at or below this level are censored; tails are exact only above it.
    pub floor: Option<f64>,
}

impl Suprema {
    pub fn replicates(&self) -> usize {
        self.sup.len()
    }
}

#[derive(Debug, Clone)]
pub struct FieldSampler {
    kind: SamplerKind,
    seed: u64,
    plan: Plan,
}

impl FieldSampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Result<Self> {
        let plan = Plan::new(&kind)?;
        Ok(Self { kind, seed, plan })
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn indices(&self) -> usize {
        self.kind.indices()
    }

    /// Replicate `r`, reproducible in isolation.
    pub fn draw(&self, r: u64, out: &mut [f64]) {
        let mut rng = stream(self.seed, r);
        self.plan.draw(&mut rng, out);
    }

    pub fn sample(&self, replicates: usize) -> SamplePaths {
        let k = self.indices();
        let mut paths = SamplePaths::zeros(replicates, k);
        if k == 0 {
            return paths;
        }
        let data = paths.data_mut();
        data.par_chunks_mut(k * BLOCK).enumerate().for_each(|(b, chunk)| {
            for (i, row) in chunk.chunks_mut(k).enumerate() {
                self.draw((b * BLOCK + i) as u64, row);
            }
        });
        paths
    }

    /// Suprema without storing paths.
    pub fn suprema(&self, replicates: usize) -> Suprema {
        let k = self.indices();
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let lo = b * BLOCK;
                let hi = (lo + BLOCK).min(replicates);
                let mut row = vec![0.0; k];
                let mut sup = Vec::with_capacity(hi - lo);
                let mut sup_abs = Vec::with_capacity(hi - lo);
                for r in lo..hi {
                    self.draw(r as u64, &mut row);
                    sup.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    sup_abs.push(row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.abs())));
                }
                (sup, sup_abs)
            })
            .collect();
        let (sup, sup_abs) = blocks.into_iter().fold((Vec::new(), Vec::new()), |(mut a, mut b), (s, t)| {
            a.extend(s);
            b.extend(t);
            (a, b)
        });
        Suprema { sup, sup_abs, floor: None }
    }
}

pub fn sample_gaussian(cov: &DMatrix<f64>, replicates: usize, seed: u64) -> Result<SamplePaths> {
    Ok(FieldSampler::new(SamplerKind::GaussianCov(cov.clone()), seed)?.sample(replicates))
}

pub fn sample_example_a(n_max: usize, replicates: usize, seed: u64) -> Result<SamplePaths> {
    Ok(FieldSampler::new(SamplerKind::SubgaussianSeqA(n_max), seed)?.sample(replicates))
}

/// Exact suprema of the sequence ξ(n) = ε(n)/√c_n above `floor`.
///
/// Only coordinates with |ξ(n)| > floor are drawn: per coordinate the
/// exceeding replicates are located by geometric skips and their values come
/// from the conditional law |ε|² = floor²·c_n + 2·Exp(1). Replicates with no
/// exceedance report `floor`. Coordinate n uses stream n of `seed`.
pub fn example_a_suprema(n_max: usize, replicates: usize, seed: u64, floor: f64) -> Result<Suprema> {
    if n_max == 0 {
        return Err(invalid("n_max must be at least 1"));
    }
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(invalid("censoring floor must be positive"));
    }
    let hits: Vec<Vec<(usize, f64)>> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let c = example_a_c(n);
            let q = (-0.5 * floor * floor * c).exp();
            let mut out = Vec::new();
            if q <= 0.0 {
                return out;
            }
            let mut rng = stream(seed, n as u64);
            let log_keep = (-q).ln_1p();
            let total = replicates as u64;
            let mut r: u64 = 0;
            while r < total {
                let u = 1.0 - rng.random::<f64>();
                let skip = (u.ln() / log_keep).floor();
                if skip >= (total - r) as f64 {
                    break;
                }
                r += skip as u64;
                let e = -(1.0 - rng.random::<f64>()).ln();
                let m = ((floor * floor * c + 2.0 * e) / c).sqrt();
                let v = if rng.random::<bool>() { m } else { -m };
                out.push((r as usize, v));
                r += 1;
            }
            out
        })
        .collect();
    let mut sup = vec![floor; replicates];
    let mut sup_abs = vec![floor; replicates];
    for (r, v) in hits.into_iter().flatten() {
        sup[r] = sup[r].max(v);
        sup_abs[r] = sup_abs[r].max(v.abs());
    }
    Ok(Suprema { sup, sup_abs, floor: Some(floor) })
}

/// The analytic natural distance of the sequence ξ(n) = ε(n)/√c_n under φ(λ) = λ²/2:
/// d(n,m) = √(2(1/c_n + 1/c_m)), since ‖ε‖² = 2 and independent summands add squared norms.
pub fn example_a_space(n_max: usize) -> Result<FiniteMetricSpace> {
    let inv: Vec<f64> = (1..=n_max).map(|n| 1.0 / example_a_c(n)).collect();
    FiniteMetricSpace::from_fn(numbered(n_max, 1), |i, j| if i == j { 0.0 } else { (2.0 * (inv[i] + inv[j])).sqrt() })
}

/// Natural function of the sequence ξ(n) = ε(n)/√c_n: the coordinate n = 1
/// dominates every other MGF, so φ₀(λ) = ln E cosh(λ|ε|)
/// = ln(1 + λ√(π/2) e^{λ²/2} erf(λ/√2)), evaluated in a form that does not overflow.
///
/// λ²/2 ≤ φ₀(λ) ≤ λ², so the distance of [`example_a_space`] bounds the
/// φ₀-distance from above.
pub fn example_a_phi() -> PhiFunction {
    const ROOT_HALF_PI: f64 = 1.253_314_137_315_500_3;
    let inner = |l: f64| (-0.5 * l * l).exp() + l * ROOT_HALF_PI * erf(l * std::f64::consts::FRAC_1_SQRT_2);
    PhiFunction::custom(
        f64::INFINITY,
        move |l| 0.5 * l * l + inner(l).ln(),
        move |l| {
            let e = erf(l * std::f64::consts::FRAC_1_SQRT_2);
            (ROOT_HALF_PI * e * (1.0 + l * l) + l * (-0.5 * l * l).exp()) / inner(l)
        },
    )
}

/// Squared-exponential covariance on `k` equispaced points of [0, 1].
pub fn squared_exponential_cov(k: usize, lengthscale: f64, variance: f64) -> DMatrix<f64> {
    let x = |i: usize| if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
    DMatrix::from_fn(k, k, |i, j| {
        let h = (x(i) - x(j)) / lengthscale;
        variance * (-0.5 * h * h).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance_is_reproduced() {
        let cov = DMatrix::<f64>::identity(3, 3);
        let p = sample_gaussian(&cov, 100_000, 7).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = p.column(i);
                let b = p.column(j);
                let c = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.02, "({i},{j}) = {c}");
            }
        }
    }

    #[test]
    fn zero_covariance_gives_zero_paths() {
        let p = sample_gaussian(&DMatrix::zeros(4, 4), 50, 1).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(sample_gaussian(&cov, 10, 1), Err(Error::NotSpd(_))));
    }

    #[test]
    fn same_seed_same_bits_regardless_of_pool() {
        let cov = squared_exponential_cov(8, 0.2, 1.0);
        let a = sample_gaussian(&cov, 10_000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sample_gaussian(&cov, 10_000, 42).unwrap());
        assert_eq!(a, b);
        let c = sample_gaussian(&cov, 10_000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn suprema_match_stored_paths() {
        let s = FieldSampler::new(SamplerKind::Laplace(5), 3).unwrap();
        let p = s.sample(5000);
        let m = s.suprema(5000);
        for r in 0..5000 {
            let row = p.row(r);
            assert_eq!(m.sup[r], row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn example_a_first_coordinate_is_unscaled() {
        assert_eq!(example_a_c(1), 1.0);
        let p = sample_example_a(10, 100_000, 5).unwrap();
        let eps = p.column(0);
        let k = eps.iter().filter(|v| v.abs() > 2.0).count() as u64;
        let (lo, hi) = clopper_pearson(k, eps.len() as u64, 0.99);
        let exact = (-2.0f64).exp();
        assert!(lo <= exact && exact <= hi, "{lo} {hi}");
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        assert!(mean.abs() < 3.0 * (2.0 / eps.len() as f64).sqrt());
    }

    #[test]
    fn example_a_scale_decreases() {
        let p = sample_example_a(100, 50_000, 9).unwrap();
        let sd = |t: usize| {
            let c = p.column(t);
            (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt()
        };
        let s = [sd(0), sd(9), sd(99)];
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
    }

    #[test]
    fn censored_suprema_agree_in_law_with_full_sampling() {
        let n_max = 64;
        let reps = 400_000;
        let full = FieldSampler::new(SamplerKind::SubgaussianSeqA(n_max), 11).unwrap().suprema(reps);
        let cens = example_a_suprema(n_max, reps, 12, 2.0).unwrap();
        for u in [2.0, 2.5, 3.0] {
            let a = full.sup.iter().filter(|v| **v > u).count() as u64;
            let b = cens.sup.iter().filter(|v| **v > u).count() as u64;
            let (alo, ahi) = clopper_pearson(a, reps as u64, 0.999);
            let (blo, bhi) = clopper_pearson(b, reps as u64, 0.999);
            assert!(alo <= bhi && blo <= ahi, "u={u}: {a} vs {b}");
            let a = full.sup_abs.iter().filter(|v| **v > u).count() as u64;
            let b = cens.sup_abs.iter().filter(|v| **v > u).count() as u64;
            let (alo, ahi) = clopper_pearson(a, reps as u64, 0.999);
            let (blo, bhi) = clopper_pearson(b, reps as u64, 0.999);
            assert!(alo <= bhi && blo <= ahi, "|u|={u}: {a} vs {b}");
        }
        assert!(cens.sup.iter().all(|v| *v >= 2.0));
    }

    #[test]
    fn example_a_space_matches_norm_formula() {
        let s = example_a_space(5).unwrap();
        assert!((s.d(0, 1) - (2.0 * (1.0 + 1.0 / example_a_c(2))).sqrt()).abs() < 1e-15);
        assert_eq!(s.d(3, 3), 0.0);
    }

    #[test]
    fn example_a_phi_is_the_log_mgf_of_epsilon() {
        let phi = example_a_phi();
        for l in [0.05, 0.3, 1.0, 2.5, 6.0, 40.0] {
            let v = phi.eval(l);
            assert!(v >= 0.5 * l * l && v <= l * l + 1e-12, "{l}: {v}");
            let h = 1e-6 * l.max(1.0);
            let fd = (phi.eval(l + h) - phi.eval(l - h)) / (2.0 * h);
            assert!((fd - phi.deriv(l)).abs() < 1e-5 * fd.max(1.0), "{l}: {fd} vs {}", phi.deriv(l));
        }
        let p = sample_example_a(1, 400_000, 21).unwrap();
        let eps = p.column(0);
        for l in [0.5, 1.0] {
            let m = eps.iter().map(|e| (l * e).exp()).sum::<f64>() / eps.len() as f64;
            assert!((m.ln() - phi.eval(l)).abs() < 0.02, "{l}: {} vs {}", m.ln(), phi.eval(l));
        }
    }

    #[test]
    fn normalized_sum_has_unit_variance() {
        let base = SamplerKind::Rademacher(2);
        let s = FieldSampler::new(SamplerKind::NormalizedSum { base: Box::new(base), n: 100 }, 2).unwrap();
        let p = s.sample(20_000);
        let c = p.column(0);
        let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
