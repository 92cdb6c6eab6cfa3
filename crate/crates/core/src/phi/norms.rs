//! Sample estimates of the B(φ) norm (MGF domination), the G(ψ) moment
//! norm, and the natural function of a field.

use serde::{Deserialize, Serialize};

use super::{PhiFunction, PhiKind};
use crate::error::{domain, invalid, Error, Result};
use crate::paths::{centered, SamplePaths};

/// Calibration constant in `P(|ξ| > u) ≤ 2 exp(−u/(C₃‖ξ‖_G))`.
pub const DEFAULT_C3: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfOptions {
    /// Drop grid points where the largest summand carries at least this share
    /// of the empirical MGF. `None` trusts every point.
    pub clip_share: Option<f64>,
    /// Subtract the empirical mean before evaluating the MGF.
    pub center: bool,
}

impl Default for MgfOptions {
    fn default() -> Self {
        Self { clip_share: Some(0.5), center: true }
    }
}

/// Positive λ magnitudes; every grid is used symmetrically (±λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    Absolute(Vec<f64>),
    /// In units of 1/sd of the sample, which makes the estimate scale
    /// equivariant.
    Standardized(Vec<f64>),
}

impl LambdaGrid {
    /// `{0.01, 0.02, 0.05, 0.1, 0.2, …, 2.0}` in standardized units.
    pub fn default_standardized() -> Self {
        let mut g = vec![0.01, 0.02, 0.05];
        g.extend((1..=20).map(|i| 0.1 * i as f64));
        Self::Standardized(g)
    }

    fn points(&self) -> &[f64] {
        match self {
            Self::Absolute(g) | Self::Standardized(g) => g,
        }
    }

    fn describe(&self) -> String {
        let (tag, g) = match self {
            Self::Absolute(g) => ("absolute", g),
            Self::Standardized(g) => ("standardized", g),
        };
        format!(
            "{tag} lambda grid, {} points in [{}, {}], used symmetrically",
            g.len(),
            g.first().copied().unwrap_or(f64::NAN),
            g.last().copied().unwrap_or(f64::NAN)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    MgfFit,
    MomentSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub method: NormMethod,
    pub grid_used: String,
}

/// `ψ(p) = p / φ⁻¹(p)` for `p ≥ 2`.
#[derive(Debug, Clone)]
pub struct PsiMomentScale {
    phi: PhiFunction,
}

impl PsiMomentScale {
    pub fn new(phi: PhiFunction) -> Self {
        Self { phi }
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        if !(p >= 2.0) {
            return Err(domain(format!("psi is defined for p >= 2, got {p}")));
        }
        Ok(p / self.phi.inverse(p)?)
    }
}

/// Empirical `log E exp(λξ)`, or `None` when clipped.
pub fn log_mgf(samples: &[f64], lambda: f64, clip_share: Option<f64>) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let m = samples.iter().map(|x| lambda * x).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = samples.iter().map(|x| (lambda * x - m).exp()).sum();
    if let Some(share) = clip_share {
        if 1.0 / s >= share {
            return None;
        }
    }
    Some(m + (s / samples.len() as f64).ln())
}

/// `sup_{p ∈ [2, p_max]} |ξ|_p / ψ(p)` over 64 log-spaced `p`.
pub fn gpsi_norm(samples: &[f64], psi: &PsiMomentScale, p_max: f64) -> Result<NormEstimate> {
    if samples.is_empty() {
        return Err(invalid("gpsi_norm needs at least one sample"));
    }
    if !(p_max >= 2.0) {
        return Err(domain(format!("p_max must be >= 2, got {p_max}")));
    }
    let steps = if p_max > 2.0 { 64 } else { 1 };
    let scale = samples.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let grid_used = format!("{steps} log-spaced p in [2, {p_max}]");
    if scale == 0.0 {
        return Ok(NormEstimate { value: 0.0, method: NormMethod::MomentSup, grid_used });
    }
    let n = samples.len() as f64;
    let mut best: f64 = 0.0;
    for i in 0..steps {
        let p = if steps == 1 { 2.0 } else { 2.0 * (p_max / 2.0).powf(i as f64 / (steps - 1) as f64) };
        let mean: f64 = samples.iter().map(|x| (x.abs() / scale).powf(p)).sum::<f64>() / n;
        let moment = scale * mean.powf(1.0 / p);
        best = best.max(moment / psi.eval(p)?);
    }
    Ok(NormEstimate { value: best, method: NormMethod::MomentSup, grid_used })
}

/// Smallest τ with `log M̂(λ) ≤ φ(λτ)` at every trusted grid λ.
///
/// For each λ the constraint is tight at `τ_λ = φ⁻¹(log M̂(λ))/|λ|`, so the
/// estimate is `max_λ τ_λ` with φ⁻¹ solved to machine precision.
pub fn bphi_norm_mgf(samples: &[f64], phi: &PhiFunction, grid: &LambdaGrid, opts: MgfOptions) -> Result<NormEstimate> {
    if samples.is_empty() {
        return Err(invalid("bphi_norm_mgf needs at least one sample"));
    }
    let owned;
    let xs: &[f64] = if opts.center {
        owned = centered(samples);
        &owned
    } else {
        samples
    };
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let grid_used = grid.describe();
    if xs.iter().all(|x| *x == 0.0) {
        return Ok(NormEstimate { value: 0.0, method: NormMethod::MgfFit, grid_used });
    }
    let unit = match grid {
        LambdaGrid::Absolute(_) => 1.0,
        LambdaGrid::Standardized(_) => {
            if sd == 0.0 {
                return Err(Error::Unbounded("constant nonzero sample is not centered".into()));
            }
            1.0 / sd
        }
    };
    let mut tau: f64 = 0.0;
    let mut trusted = 0usize;
    for &k in grid.points() {
        if !(k > 0.0) {
            return Err(invalid("lambda grid magnitudes must be positive"));
        }
        let lam = k * unit;
        for signed in [lam, -lam] {
            let Some(lm) = log_mgf(xs, signed, opts.clip_share) else { continue };
            trusted += 1;
            if lm <= 0.0 {
                continue;
            }
            let reach = phi
                .inverse(lm)
                .map_err(|_| Error::Unbounded(format!("log MGF {lm} at lambda {signed} exceeds phi's range")))?;
            tau = tau.max(reach / lam);
        }
    }
    if trusted == 0 {
        return Err(Error::Unbounded("no trusted lambda grid point".into()));
    }
    Ok(NormEstimate { value: tau, method: NormMethod::MgfFit, grid_used })
}

/// `P(|ξ| > u) ≤ 2 exp(−u/(C₃ g))` for a variable with moment norm `g`.
pub fn moment_tail_bound(gpsi: f64, u: f64, c3: f64) -> f64 {
    if gpsi == 0.0 {
        return if u >= 0.0 { 0.0 } else { 2.0 };
    }
    (2.0 * (-u / (c3 * gpsi)).exp()).min(2.0)
}

/// Natural function `λ ↦ log max_t M̂_t(λ)` on an increasing grid of
/// positive λ, symmetrised and replaced by its greatest convex minorant.
///
/// The grid is cut at the first λ where some column's MGF is clipped; the
/// last retained point becomes λ₀.
pub fn natural_phi(paths: &SamplePaths, lambda_grid: &[f64], opts: MgfOptions) -> Result<PhiFunction> {
    if paths.replicates() == 0 || paths.indices() == 0 {
        return Err(domain("natural_phi needs a nonempty sample matrix"));
    }
    if lambda_grid.is_empty() || lambda_grid.windows(2).any(|w| !(w[1] > w[0])) || !(lambda_grid[0] > 0.0) {
        return Err(invalid("lambda grid must be positive and strictly increasing"));
    }
    let columns: Vec<Vec<f64>> = (0..paths.indices())
        .map(|t| {
            let c = paths.column(t);
            if opts.center {
                centered(&c)
            } else {
                c
            }
        })
        .collect();
    let mut pts = vec![(0.0, 0.0)];
    'grid: for &lam in lambda_grid {
        let mut v: f64 = 0.0;
        for col in &columns {
            for signed in [lam, -lam] {
                match log_mgf(col, signed, opts.clip_share) {
                    Some(lm) => v = v.max(lm),
                    None => break 'grid,
                }
            }
        }
        pts.push((lam, v));
    }
    if pts.len() < 2 {
        return Err(domain("every lambda grid point was clipped"));
    }
    let hull = lower_hull(&pts);
    let grid: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let values: Vec<f64> = grid.iter().map(|&x| interpolate(&hull, x).max(0.0)).collect();
    PhiFunction::tabulated(PhiKind::Natural, grid, values)
}

fn lower_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut h: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while h.len() >= 2 {
            let (o, a) = (h[h.len() - 2], h[h.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(p);
    }
    h
}

fn interpolate(h: &[(f64, f64)], x: f64) -> f64 {
    let k = h.partition_point(|p| p.0 <= x);
    if k == 0 {
        return h[0].1;
    }
    if k >= h.len() {
        return h[h.len() - 1].1;
    }
    let (a, b) = (h[k - 1], h[k]);
    if a.0 == x {
        return a.1;
    }
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn gpsi_of_zero_and_rademacher() {
        let psi = PsiMomentScale::new(PhiFunction::subgaussian());
        assert_eq!(gpsi_norm(&[0.0; 10], &psi, 20.0).unwrap().value, 0.0);
        let g = gpsi_norm(&[1.0, -1.0], &psi, 20.0).unwrap().value;
        assert!((g - 1.0).abs() < 1e-12, "{g}");
        let g2 = gpsi_norm(&[2.0, -2.0], &psi, 20.0).unwrap().value;
        assert_eq!(g2, 2.0 * g);
    }

    #[test]
    fn gpsi_rejects_small_pmax() {
        let psi = PsiMomentScale::new(PhiFunction::subgaussian());
        assert!(gpsi_norm(&[1.0], &psi, 1.5).is_err());
    }

    #[test]
    fn bphi_of_zero_sample() {
        let e = bphi_norm_mgf(
            &[0.0; 5],
            &PhiFunction::subgaussian(),
            &LambdaGrid::default_standardized(),
            MgfOptions::default(),
        )
        .unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn bphi_of_exact_rademacher_measure() {
        // cosh(λ) ≤ exp(λ²/2): the supremum of τ_λ is approached as λ → 0
        let opts = MgfOptions { clip_share: None, center: true };
        let e = bphi_norm_mgf(
            &[1.0, -1.0],
            &PhiFunction::subgaussian(),
            &LambdaGrid::Absolute(vec![0.001, 0.01, 0.1, 0.5, 1.0, 2.0]),
            opts,
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-6, "{}", e.value);
        assert!(e.value <= 1.0);
    }

    #[test]
    fn bphi_of_scaled_normals() {
        let c = 1.7;
        let xs: Vec<f64> = normals(100_000, 5).into_iter().map(|z| c * z).collect();
        let e =
            bphi_norm_mgf(&xs, &PhiFunction::subgaussian(), &LambdaGrid::default_standardized(), MgfOptions::default())
                .unwrap();
        assert!(e.value >= 0.9 * c && e.value <= 1.1 * c, "{}", e.value);
    }

    #[test]
    fn bphi_unbounded_against_table() {
        // a bounded-range phi cannot dominate a wide sample
        let phi = PhiFunction::tabulated(PhiKind::Custom, vec![0.0, 0.1], vec![0.0, 0.001]).unwrap();
        let xs = normals(1000, 1);
        let r = bphi_norm_mgf(&xs, &phi, &LambdaGrid::default_standardized(), MgfOptions::default());
        assert!(matches!(r, Err(Error::Unbounded(_))));
    }

    #[test]
    fn natural_phi_single_normal_column() {
        let paths = SamplePaths::from_columns(&[normals(100_000, 11)]).unwrap();
        let grid: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
        let phi = natural_phi(&paths, &grid, MgfOptions::default()).unwrap();
        assert_eq!(phi.kind(), PhiKind::Natural);
        assert!(phi.lambda0() >= 2.0 - 1e-12);
        let worst = (0..=40)
            .map(|i| 0.05 * i as f64)
            .map(|l| (phi.eval(l) - 0.5 * l * l).abs().max((phi.eval(-l) - 0.5 * l * l).abs()))
            .fold(0.0, f64::max);
        assert!(worst <= 0.05, "max error {worst}");
        let l = phi.inverse(0.5).unwrap();
        assert!((phi.eval(l) - 0.5).abs() <= 1e-8);
    }

    #[test]
    fn natural_phi_picks_largest_variance() {
        let a = normals(100_000, 21);
        let b: Vec<f64> = normals(100_000, 22).into_iter().map(|z| 2.0 * z).collect();
        let paths = SamplePaths::from_columns(&[a, b]).unwrap();
        let grid: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let phi = natural_phi(&paths, &grid, MgfOptions::default()).unwrap();
        for l in [0.25, 0.5, 0.75] {
            let want = 2.0 * l * l;
            assert!((phi.eval(l) - want).abs() < 0.1 * want, "l={l} {} vs {want}", phi.eval(l));
        }
    }

    #[test]
    fn natural_phi_of_zero_field_is_zero() {
        let paths = SamplePaths::zeros(100, 3);
        let phi = natural_phi(&paths, &[0.5, 1.0], MgfOptions { clip_share: None, center: true }).unwrap();
        assert_eq!(phi.eval(0.7), 0.0);
        assert!(natural_phi(&SamplePaths::zeros(0, 0), &[1.0], MgfOptions::default()).is_err());
    }

    #[test]
    fn tail_link_on_laplace_samples() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let e = -(1.0 - rng.random::<f64>()).ln();
                if rng.random::<bool>() {
                    e
                } else {
                    -e
                }
            })
            .collect();
        let psi = PsiMomentScale::new(PhiFunction::subgaussian());
        let g = gpsi_norm(&xs, &psi, 20.0).unwrap().value;
        for u in [0.5, 1.0, 2.0, 4.0, 6.0] {
            let emp = xs.iter().filter(|x| x.abs() > u).count() as f64 / xs.len() as f64;
            assert!(emp <= moment_tail_bound(g, u, DEFAULT_C3), "u={u}");
        }
    }
}
